//! Small numeric helpers used across the crate.
//!
//! Everything that touches log-space quantities goes through the
//! functions here so that no intermediate leaves floating-point range.

/// Logistic sigmoid, saturating cleanly at both ends.
#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log(1 + exp(x)) without overflow for large |x|.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// log(exp(a) + exp(b)).
#[inline]
pub fn logaddexp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    if a > b {
        a + (b - a).exp().ln_1p()
    } else {
        b + (a - b).exp().ln_1p()
    }
}

/// log Σ exp(x_i) over a slice. Empty input yields −∞.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

/// log of the arithmetic mean of exp(x_i).
pub fn logmeanexp(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NEG_INFINITY;
    }
    logsumexp(xs) - (xs.len() as f64).ln()
}

/// Streaming logsumexp accumulator; combination order is fixed by the
/// caller, which keeps parallel reductions deterministic.
#[derive(Clone, Copy, Debug)]
pub struct RunningLse {
    max: f64,
    sum: f64,
}

impl RunningLse {
    pub fn new() -> Self {
        RunningLse { max: f64::NEG_INFINITY, sum: 0.0 }
    }

    pub fn push(&mut self, x: f64) {
        if x == f64::NEG_INFINITY {
            return;
        }
        if x <= self.max {
            self.sum += (x - self.max).exp();
        } else {
            self.sum = self.sum * (self.max - x).exp() + 1.0;
            self.max = x;
        }
    }

    pub fn merge(&mut self, other: RunningLse) {
        if other.max == f64::NEG_INFINITY {
            return;
        }
        if other.max <= self.max {
            self.sum += other.sum * (other.max - self.max).exp();
        } else {
            self.sum = self.sum * (self.max - other.max).exp() + other.sum;
            self.max = other.max;
        }
    }

    pub fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

impl Default for RunningLse {
    fn default() -> Self {
        Self::new()
    }
}

/// Mixes a base seed with a tag into an independent stream seed
/// (splitmix64 finalizer). Used everywhere a sub-operation needs its
/// own deterministic random stream.
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    let mut z = base ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn logistic_matches_definition() {
        for x in [-5.0, -1.0, 0.0, 0.3, 2.0, 10.0] {
            assert_abs_diff_eq!(logistic(x), 1.0 / (1.0 + (-x as f64).exp()), epsilon = 1e-15);
        }
        assert_eq!(logistic(0.0), 0.5);
        assert!(logistic(-800.0) == 0.0);
        assert!(logistic(800.0) == 1.0);
    }

    #[test]
    fn softplus_saturation() {
        assert_abs_diff_eq!(softplus(0.0), std::f64::consts::LN_2, epsilon = 1e-15);
        // For large x, softplus(x) → x; for very negative x it → 0.
        assert_abs_diff_eq!(softplus(1000.0), 1000.0, epsilon = 1e-12);
        assert!(softplus(-1000.0) >= 0.0 && softplus(-1000.0) < 1e-300);
    }

    #[test]
    fn logsumexp_stable_at_extremes() {
        let xs = [1000.0, 1000.0];
        assert_abs_diff_eq!(logsumexp(&xs), 1000.0 + std::f64::consts::LN_2, epsilon = 1e-12);
        let ys = [-1000.0, -1000.0, -1000.0, -1000.0];
        assert_abs_diff_eq!(logsumexp(&ys), -1000.0 + 4.0f64.ln(), epsilon = 1e-12);
        assert_eq!(logsumexp(&[]), f64::NEG_INFINITY);
    }

    #[test]
    fn running_lse_matches_batch() {
        let xs = [3.0, -2.0, 700.0, 699.5, -1000.0, 0.0];
        let mut acc = RunningLse::new();
        for &x in &xs {
            acc.push(x);
        }
        assert_abs_diff_eq!(acc.value(), logsumexp(&xs), epsilon = 1e-12);

        let mut a = RunningLse::new();
        let mut b = RunningLse::new();
        for &x in &xs[..3] {
            a.push(x);
        }
        for &x in &xs[3..] {
            b.push(x);
        }
        a.merge(b);
        assert_abs_diff_eq!(a.value(), logsumexp(&xs), epsilon = 1e-12);
    }

    #[test]
    fn derive_seed_distinct_tags() {
        let s = derive_seed(42, 1);
        assert_ne!(s, derive_seed(42, 2));
        assert_eq!(s, derive_seed(42, 1));
    }
}
