//! Paired one-sided t-test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTest {
    pub n: usize,
    pub mean_difference: f64,
    pub t: f64,
    /// One-sided p-value for `mean(a - b) > 0`.
    pub p_value: f64,
}

/// Test whether `a` exceeds `b` on average over paired observations.
pub fn paired_t_test_greater(a: &[f64], b: &[f64]) -> Result<PairedTest> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::invalid("paired test needs two equal samples of size >= 2"));
    }
    let n = a.len();
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        let p_value = if mean > 0.0 { 0.0 } else { 1.0 };
        let t = if mean > 0.0 { f64::INFINITY } else if mean < 0.0 { f64::NEG_INFINITY } else { 0.0 };
        return Ok(PairedTest { n, mean_difference: mean, t, p_value });
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(PairedTest {
        n,
        mean_difference: mean,
        t,
        p_value: 1.0 - dist.cdf(t),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_values() {
        // d = [1, 2, 3, 4, 5]: mean 3, sd sqrt(2.5), t = 3 / sqrt(0.5).
        let a = [2.0, 4.0, 6.0, 8.0, 10.0];
        let b = [1.0, 2.0, 3.0, 4.0, 5.0];
        let r = paired_t_test_greater(&a, &b).unwrap();
        assert!((r.t - 3.0 / 0.5f64.sqrt()).abs() < 1e-12);
        // t = 4.2426 with 4 degrees of freedom: one-sided p = 0.00662.
        assert!((r.p_value - 0.006_618).abs() < 2e-5, "{}", r.p_value);
        let rev = paired_t_test_greater(&b, &a).unwrap();
        assert!((rev.p_value - (1.0 - r.p_value)).abs() < 1e-12);
    }

    #[test]
    fn degenerate_cases() {
        assert_eq!(paired_t_test_greater(&[2.0, 3.0], &[1.0, 2.0]).unwrap().p_value, 0.0);
        assert_eq!(paired_t_test_greater(&[1.0, 2.0], &[1.0, 2.0]).unwrap().p_value, 1.0);
        assert!(paired_t_test_greater(&[1.0], &[0.0]).is_err());
        assert!(paired_t_test_greater(&[1.0, 2.0], &[0.0]).is_err());
    }
}
