//! Shared numeric building blocks: seeded randomness, order statistics and
//! set algebra for prediction sets.

pub mod interval;
pub mod matrix;
pub mod rng;
pub mod sets;

pub use interval::IntervalSet;
pub use matrix::Matrix;
pub use rng::{make_rng, RngState};
pub use sets::{jaccard_distance, LabelSet, SetMeasure};

/// k-th smallest value (1-based) of `values`, by full sort. Ties are kept.
pub fn order_statistic(values: &[f64], k: usize) -> Option<f64> {
    if k == 0 || k > values.len() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Some(sorted[k - 1])
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n - 1 denominator); zero for fewer than two values.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_statistic_keeps_ties() {
        let v = [3.0, 1.0, 2.0, 2.0];
        assert_eq!(order_statistic(&v, 1), Some(1.0));
        assert_eq!(order_statistic(&v, 2), Some(2.0));
        assert_eq!(order_statistic(&v, 3), Some(2.0));
        assert_eq!(order_statistic(&v, 4), Some(3.0));
        assert_eq!(order_statistic(&v, 5), None);
        assert_eq!(order_statistic(&v, 0), None);
    }

    #[test]
    fn std_uses_bessel_correction() {
        assert_eq!(sample_std(&[1.0]), 0.0);
        let s = sample_std(&[1.0, 2.0, 3.0, 4.0]);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }
}
