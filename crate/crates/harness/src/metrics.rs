use aniso_ldp::{Error, Result};

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Input(format!("metric inputs differ in length ({a} vs {b})")));
    }
    if a == 0 {
        return Err(Error::Input("metric inputs are empty".into()));
    }
    Ok(())
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(pred.len(), truth.len())?;
    let sse: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sse / pred.len() as f64).sqrt())
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_lengths(pred.len(), truth.len())?;
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Sample mean and (n − 1) standard deviation; the deviation is 0 for a
/// single value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use aniso_ldp::RngStream;
    use rand::Rng;

    #[test]
    fn identical_inputs() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(accuracy(&[3, 1], &[3, 1]).unwrap(), 1.0);
    }

    #[test]
    fn constant_offset() {
        let truth = [0.5, -2.0, 7.0];
        let pred: Vec<f64> = truth.iter().map(|t| t - 1.5).collect();
        assert!((rmse(&pred, &truth).unwrap() - 1.5).abs() < 1e-15);
    }

    #[test]
    fn uniform_guessing_sits_at_chance() {
        let mut rng = RngStream::new(11);
        let n = 10_000;
        let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..10)).collect();
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..10)).collect();
        // binomial sd √(0.09/n) = 0.003; 0.01 is over 3 sd
        assert!((accuracy(&pred, &truth).unwrap() - 0.1).abs() <= 0.01);
    }

    #[test]
    fn length_errors() {
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
        assert!(accuracy(&[], &[]).is_err());
    }

    #[test]
    fn summary_statistics() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[4.0]), (4.0, 0.0));
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
