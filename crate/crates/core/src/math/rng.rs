//! Small, fully specified 64-bit generator so that every draw is
//! reproducible bit-for-bit across platforms.
//!
//! State advance is SplitMix64. Named sub-streams hash their label with
//! FNV-1a and fold it into the seed before mixing. Gaussian draws use the
//! cosine branch of Box–Muller, consuming two uniforms per draw.

use crate::error::{Error, Result};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Deterministic random stream identified by `(seed, label)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngState {
    seed: u64,
    label: String,
    state: u64,
}

/// Creates the stream for `(seed, stream_label)`. Zero seeds are fine.
pub fn make_rng(seed: u64, stream_label: &str) -> RngState {
    RngState {
        seed,
        label: stream_label.to_string(),
        state: mix64(seed ^ mix64(fnv1a(stream_label.as_bytes()))),
    }
}

impl RngState {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Independent child stream `"<label>/<child>"` of the same seed. Does not
    /// depend on how many values have been drawn from `self`.
    pub fn substream(&self, child: &str) -> RngState {
        make_rng(self.seed, &format!("{}/{}", self.label, child))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Unbiased integer in `0..n` (Lemire's multiply-and-reject). `n` must be positive.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let threshold = n.wrapping_neg() % n;
        loop {
            let m = (self.next_u64() as u128) * (n as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Standard normal draw.
    pub fn standard_normal(&mut self) -> f64 {
        // 1 - u keeps the log argument in (0, 1].
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Draw from N(mu, sigma^2). `sigma == 0` returns `mu` exactly.
    pub fn gaussian(&mut self, mu: f64, sigma: f64) -> Result<f64> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "gaussian sigma must be finite and non-negative, got {sigma}"
            )));
        }
        let z = self.standard_normal();
        if sigma == 0.0 {
            return Ok(mu);
        }
        Ok(mu + sigma * z)
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    /// Uniformly random permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        self.shuffle(&mut idx);
        idx
    }
}

/// Free-function form of [`RngState::gaussian`].
pub fn gaussian(rng: &mut RngState, mu: f64, sigma: f64) -> Result<f64> {
    rng.gaussian(mu, sigma)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_and_label_give_identical_streams() {
        let mut a = make_rng(42, "split");
        let mut b = make_rng(42, "split");
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn labels_separate_streams() {
        let mut a = make_rng(42, "split");
        let mut b = make_rng(42, "noise");
        let xs: Vec<u64> = (0..100).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..100).map(|_| b.next_u64()).collect();
        assert_ne!(xs, ys);
        assert!(xs.iter().zip(&ys).all(|(x, y)| x != y));
    }

    #[test]
    fn zero_seed_is_a_valid_stream() {
        let mut r = make_rng(0, "x");
        let draws: Vec<u64> = (0..16).map(|_| r.next_u64()).collect();
        assert!(draws.iter().any(|&d| d != 0));
        let u = r.uniform();
        assert!((0.0..1.0).contains(&u));
    }

    #[test]
    fn degenerate_gaussian_is_exact() {
        let mut r = make_rng(7, "g");
        assert_eq!(r.gaussian(3.5, 0.0).unwrap(), 3.5);
    }

    #[test]
    fn negative_sigma_rejected() {
        let mut r = make_rng(7, "g");
        assert!(matches!(r.gaussian(0.0, -1.0), Err(Error::InvalidParameter(_))));
        assert!(r.gaussian(0.0, f64::NAN).is_err());
    }

    #[test]
    fn standard_normal_moments() {
        let mut r = make_rng(2024, "moments");
        let n = 1_000_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let z = r.gaussian(0.0, 1.0).unwrap();
            sum += z;
            sum_sq += z * z;
        }
        let m = sum / n as f64;
        let var = sum_sq / n as f64 - m * m;
        assert!(m.abs() < 0.01, "mean {m}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn shifted_gaussian_mean() {
        let mut r = make_rng(5, "shifted");
        let n = 1_000_000;
        let m: f64 = (0..n).map(|_| r.gaussian(2.0, 0.4).unwrap()).sum::<f64>() / n as f64;
        assert!((m - 2.0).abs() < 0.01, "mean {m}");
    }

    #[test]
    fn substream_does_not_depend_on_consumption() {
        let base = make_rng(9, "run0");
        let mut consumed = base.clone();
        consumed.next_u64();
        assert_eq!(base.substream("data"), consumed.substream("data"));
        assert_eq!(base.substream("data"), make_rng(9, "run0/data"));
    }

    #[test]
    fn below_stays_in_range_and_permutation_is_complete() {
        let mut r = make_rng(1, "perm");
        for n in 1..50u64 {
            assert!(r.below(n) < n);
        }
        let mut p = r.permutation(100);
        p.sort_unstable();
        assert_eq!(p, (0..100).collect::<Vec<_>>());
    }
}
