//! Generative-quality evaluation: exact log-partition functions by
//! enumeration, annealed-importance-sampling estimates for layers too
//! large to enumerate, and average test log-probabilities.
//!
//! The exact path marginalizes the larger layer analytically and walks
//! the smaller layer's state space in Gray-code order, so each state
//! costs one column update plus one softplus sweep. The joint-state
//! enumeration oracle (feasible to ~16 total units) cross-checks it and
//! backs the statistical tests elsewhere in the crate.

use crate::data::DatasetSplit;
use crate::error::{Error, Result};
use crate::math::{logistic, logmeanexp, logsumexp, softplus, RunningLse};
use crate::rbm::{free_energies, RbmParams};
use ndarray::{Array1, Array2, ArrayView1};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Largest layer (in units) the exact brute-force path will enumerate.
pub const DEFAULT_EXACT_LIMIT: usize = 25;

/// Largest `n_visible + n_hidden` the joint-state oracle accepts.
pub const ORACLE_LIMIT: usize = 16;

const GRAY_CHUNK_BITS: usize = 14;

/// Exact `log Z`, enumerating all states of the smaller layer and summing
/// the larger one in closed form. Fails with a capability error when the
/// smaller layer exceeds `limit` units.
pub fn exact_log_partition(params: &RbmParams, limit: usize) -> Result<f64> {
    let (n_v, n_h) = (params.n_visible(), params.n_hidden());
    let small = n_v.min(n_h);
    if small > limit {
        return Err(Error::Capability(format!(
            "exact partition function needs a layer of at most {limit} units; smallest layer has {small}"
        )));
    }

    // `rows[j]` is the contribution of enumerated unit j to the inputs of
    // the analytically-summed layer.
    let (rows, bias_small, bias_large) = if n_h <= n_v {
        (params.weights.t().to_owned(), &params.hidden_bias, &params.visible_bias)
    } else {
        (params.weights.clone(), &params.visible_bias, &params.hidden_bias)
    };

    let total: u64 = 1u64 << small;
    let chunk: u64 = 1u64 << GRAY_CHUNK_BITS.min(small);
    let n_chunks = total.div_ceil(chunk);

    let partials: Vec<RunningLse> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * chunk;
            let hi = (lo + chunk).min(total);
            gray_chunk_lse(&rows, bias_small.view(), bias_large.view(), lo, hi)
        })
        .collect();

    let mut acc = RunningLse::new();
    for p in partials {
        acc.merge(p);
    }
    Ok(acc.value())
}

/// Sums `exp(bias_small·s + Σ softplus(x(s)))` over Gray-coded states
/// `s` with indices in `[lo, hi)`.
fn gray_chunk_lse(
    rows: &Array2<f64>,
    bias_small: ArrayView1<f64>,
    bias_large: ArrayView1<f64>,
    lo: u64,
    hi: u64,
) -> RunningLse {
    let mut x = bias_large.to_owned();
    let mut bias_term = 0.0;
    let mut state = lo ^ (lo >> 1);
    for j in 0..rows.nrows() {
        if state >> j & 1 == 1 {
            x += &rows.row(j);
            bias_term += bias_small[j];
        }
    }

    let mut acc = RunningLse::new();
    acc.push(bias_term + x.iter().map(|&t| softplus(t)).sum::<f64>());
    for idx in lo + 1..hi {
        let j = idx.trailing_zeros() as usize;
        state ^= 1 << j;
        if state >> j & 1 == 1 {
            x += &rows.row(j);
            bias_term += bias_small[j];
        } else {
            x -= &rows.row(j);
            bias_term -= bias_small[j];
        }
        acc.push(bias_term + x.iter().map(|&t| softplus(t)).sum::<f64>());
    }
    acc
}

/// Everything an exhaustive sweep of the joint state space can give:
/// the exact normalizer, visible marginals, and first/second moments.
/// Visible pattern `idx` sets `v_i = (idx >> i) & 1`.
#[derive(Clone, Debug)]
pub struct Oracle {
    pub log_z: f64,
    pub marginal_v: Vec<f64>,
    pub expectation_vh: Array2<f64>,
    pub expectation_v: Array1<f64>,
    pub expectation_h: Array1<f64>,
}

/// Exhaustive joint enumeration for models with at most [`ORACLE_LIMIT`]
/// total units.
pub fn enumeration_oracle(params: &RbmParams) -> Result<Oracle> {
    let (n_v, n_h) = (params.n_visible(), params.n_hidden());
    if n_v + n_h > ORACLE_LIMIT {
        return Err(Error::Capability(format!(
            "joint enumeration over {} units exceeds the {ORACLE_LIMIT}-unit oracle limit",
            n_v + n_h
        )));
    }

    let v_states = 1usize << n_v;
    let h_states = 1usize << n_h;
    // log p*(v, h) for every joint state, grouped by v.
    let mut joint_lw = vec![0.0f64; v_states * h_states];
    for v_idx in 0..v_states {
        let mut av = 0.0;
        let mut x = params.hidden_bias.clone();
        for i in 0..n_v {
            if v_idx >> i & 1 == 1 {
                av += params.visible_bias[i];
                x += &params.weights.row(i);
            }
        }
        for h_idx in 0..h_states {
            let mut t = av;
            for j in 0..n_h {
                if h_idx >> j & 1 == 1 {
                    t += x[j];
                }
            }
            joint_lw[v_idx * h_states + h_idx] = t;
        }
    }

    let log_z = logsumexp(&joint_lw);
    let mut marginal_v = vec![0.0f64; v_states];
    let mut e_vh = Array2::<f64>::zeros((n_v, n_h));
    let mut e_v = Array1::<f64>::zeros(n_v);
    let mut e_h = Array1::<f64>::zeros(n_h);

    for v_idx in 0..v_states {
        let slice = &joint_lw[v_idx * h_states..(v_idx + 1) * h_states];
        marginal_v[v_idx] = (logsumexp(slice) - log_z).exp();
        for (h_idx, &lw) in slice.iter().enumerate() {
            let p = (lw - log_z).exp();
            for i in 0..n_v {
                if v_idx >> i & 1 == 1 {
                    e_v[i] += p;
                    for j in 0..n_h {
                        if h_idx >> j & 1 == 1 {
                            e_vh[[i, j]] += p;
                        }
                    }
                }
            }
            for j in 0..n_h {
                if h_idx >> j & 1 == 1 {
                    e_h[j] += p;
                }
            }
        }
    }

    Ok(Oracle { log_z, marginal_v, expectation_vh: e_vh, expectation_v: e_v, expectation_h: e_h })
}

/// Annealing path from the base-rate model to the target.
#[derive(Clone, Debug, PartialEq)]
pub enum BetaSchedule {
    /// `num_temperatures` values spaced uniformly over [0, 1].
    Uniform,
    /// 500 values over [0, 0.5), 4000 over [0.5, 0.9), 10000 over
    /// [0.9, 1.0), then 1.0 — the dense-near-the-target preset for
    /// final-table runs. Ignores `num_temperatures`.
    ThreeSegment,
    Explicit(Vec<f64>),
}

#[derive(Clone, Debug)]
pub struct AisConfig {
    pub num_runs: usize,
    pub num_temperatures: usize,
    pub beta_schedule: BetaSchedule,
    pub base_rate_smoothing: f64,
    pub seed: u64,
}

impl AisConfig {
    pub fn new(seed: u64) -> Self {
        AisConfig {
            num_runs: 100,
            num_temperatures: 1000,
            beta_schedule: BetaSchedule::Uniform,
            base_rate_smoothing: 0.05,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_runs == 0 {
            return Err(Error::Domain("AIS needs at least one run".into()));
        }
        if !(self.base_rate_smoothing > 0.0 && self.base_rate_smoothing < 1.0) {
            return Err(Error::Domain("base-rate smoothing must lie in (0, 1)".into()));
        }
        self.resolve_betas().map(|_| ())
    }

    /// The β ladder this config describes, starting at 0 and ending at 1.
    pub fn resolve_betas(&self) -> Result<Vec<f64>> {
        let betas = match &self.beta_schedule {
            BetaSchedule::Uniform => {
                let n = self.num_temperatures;
                if n < 2 {
                    return Err(Error::Domain("uniform schedule needs at least 2 temperatures".into()));
                }
                (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
            }
            BetaSchedule::ThreeSegment => {
                let mut b: Vec<f64> = Vec::with_capacity(14_501);
                b.extend((0..500).map(|i| i as f64 * 0.001));
                b.extend((0..4000).map(|i| 0.5 + i as f64 * 0.0001));
                b.extend((0..10000).map(|i| 0.9 + i as f64 * 0.00001));
                b.push(1.0);
                b
            }
            BetaSchedule::Explicit(b) => b.clone(),
        };
        if betas.len() < 2
            || betas[0] != 0.0
            || *betas.last().unwrap() != 1.0
            || betas.iter().any(|&b| !(0.0..=1.0).contains(&b))
            || betas.windows(2).any(|w| w[1] < w[0])
        {
            return Err(Error::Domain(
                "beta schedule must run nondecreasing from 0.0 to 1.0".into(),
            ));
        }
        Ok(betas)
    }
}

/// Visible biases of the base-rate model: logits of the smoothed data
/// marginals, `p̄ ← (1−ε)·p̄ + ε/2`.
pub fn base_rate_bias(marginals: &Array1<f64>, smoothing: f64) -> Result<Array1<f64>> {
    if !(smoothing > 0.0 && smoothing < 1.0) {
        return Err(Error::Domain("base-rate smoothing must lie in (0, 1)".into()));
    }
    if marginals.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(Error::Domain("marginals must lie in [0, 1]".into()));
    }
    Ok(marginals.mapv(|p| {
        let q = (1.0 - smoothing) * p + smoothing * 0.5;
        (q / (1.0 - q)).ln()
    }))
}

#[derive(Clone, Debug)]
pub struct AisEstimate {
    /// `base_log_z + log-mean-exp(log_weights)`.
    pub log_z_mean: f64,
    /// Exact log-normalizer of the base-rate model (hidden units included).
    pub base_log_z: f64,
    /// One accumulated log importance weight per run.
    pub log_weights: Vec<f64>,
    /// `log(Ẑ ∓ 3σ̂)`; the lower bound is −∞ when the interval crosses 0.
    pub log_z_stderr_bounds: (f64, f64),
}

/// Annealed importance sampling from the visible-bias-only base model to
/// `params`. Intermediate models scale the target's weights and hidden
/// biases by β and mix the visible biases as `(1−β)·base + β·target`;
/// each run does one full Gibbs sweep per intermediate temperature.
/// Runs use disjoint seeded streams and may execute in parallel; the
/// reduction is ordered, so results are deterministic.
pub fn ais_log_partition(
    params: &RbmParams,
    base_bias: &Array1<f64>,
    config: &AisConfig,
) -> Result<AisEstimate> {
    config.validate()?;
    if base_bias.len() != params.n_visible() {
        return Err(Error::Shape(format!(
            "base bias of length {} against {} visible units",
            base_bias.len(),
            params.n_visible()
        )));
    }
    let betas = config.resolve_betas()?;

    let log_weights: Vec<f64> = (0..config.num_runs)
        .into_par_iter()
        .map(|run| ais_single_run(params, base_bias, &betas, config.seed, run as u64))
        .collect();

    let base_log_z = params.n_hidden() as f64 * std::f64::consts::LN_2
        + base_bias.iter().map(|&a| softplus(a)).sum::<f64>();
    let log_z_mean = base_log_z + logmeanexp(&log_weights);

    let m = log_weights.len();
    let lmax = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ratios: Vec<f64> = log_weights.iter().map(|&lw| (lw - lmax).exp()).collect();
    let mean = ratios.iter().sum::<f64>() / m as f64;
    let var = if m > 1 {
        ratios.iter().map(|&r| (r - mean) * (r - mean)).sum::<f64>() / (m - 1) as f64
    } else {
        0.0
    };
    let se = (var / m as f64).sqrt();
    let hi = base_log_z + lmax + (mean + 3.0 * se).ln();
    let lo = if mean - 3.0 * se > 0.0 {
        base_log_z + lmax + (mean - 3.0 * se).ln()
    } else {
        f64::NEG_INFINITY
    };

    Ok(AisEstimate { log_z_mean, base_log_z, log_weights, log_z_stderr_bounds: (lo, hi) })
}

fn ais_single_run(
    params: &RbmParams,
    base_bias: &Array1<f64>,
    betas: &[f64],
    seed: u64,
    run: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run);

    let n_v = params.n_visible();
    let mut v = Array1::<f64>::zeros(n_v);
    for (i, x) in v.iter_mut().enumerate() {
        *x = if rng.random::<f64>() < logistic(base_bias[i]) { 1.0 } else { 0.0 };
    }

    let mut logw = 0.0;
    let last = betas.len() - 1;
    for t in 1..=last {
        let (b_prev, b_cur) = (betas[t - 1], betas[t]);

        // Hidden-unit inputs under the full target parameters.
        let mut x = v.dot(&params.weights);
        x += &params.hidden_bias;

        let av_base = v.dot(base_bias);
        let av_target = v.dot(&params.visible_bias);
        logw += (b_cur - b_prev) * (av_target - av_base);
        logw += x
            .iter()
            .map(|&xj| softplus(b_cur * xj) - softplus(b_prev * xj))
            .sum::<f64>();

        if t < last {
            // One Gibbs sweep at inverse temperature b_cur.
            let h = x.mapv(|xj| {
                if rng.random::<f64>() < logistic(b_cur * xj) {
                    1.0
                } else {
                    0.0
                }
            });
            let wh = params.weights.dot(&h);
            for i in 0..n_v {
                let logit = b_cur * (wh[i] + params.visible_bias[i]) + (1.0 - b_cur) * base_bias[i];
                v[i] = if rng.random::<f64>() < logistic(logit) { 1.0 } else { 0.0 };
            }
        }
    }
    logw
}

/// Mean of `log p(v) = −F(v) − log Z` over the test split, in nats.
pub fn avg_test_log_prob(params: &RbmParams, log_z: f64, test: &DatasetSplit) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Usage("average log-probability of an empty split".into()));
    }
    if test.width() != params.n_visible() {
        return Err(Error::Shape(format!(
            "test width {} against {} visible units",
            test.width(),
            params.n_visible()
        )));
    }
    let mut total = 0.0;
    let chunk = 4096;
    let mut start = 0;
    while start < test.len() {
        let end = (start + chunk).min(test.len());
        let block = test.rows_f64(start..end);
        total += free_energies(params, block.view()).iter().map(|&f| -f).sum::<f64>();
        start = end;
    }
    Ok(total / test.len() as f64 - log_z)
}

/// How one model was scored.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalMethod {
    Exact,
    Ais,
}

impl EvalMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            EvalMethod::Exact => "exact",
            EvalMethod::Ais => "ais",
        }
    }
}

/// One scored model: its normalizer, test log-probability, and sparsity.
#[derive(Clone, Debug)]
pub struct EvalRecord {
    pub avg_test_log_prob: f64,
    pub log_z: f64,
    pub method: EvalMethod,
    pub sparsity: f64,
    /// Present for AIS records only.
    pub ais_bounds: Option<(f64, f64)>,
}

/// AIS fallback used when a model is too large for exact enumeration.
#[derive(Clone, Debug)]
pub struct AisEval {
    pub config: AisConfig,
    pub base_bias: Array1<f64>,
}

/// How to score models during pruning sweeps and table runs.
#[derive(Clone, Debug)]
pub struct EvalSettings<'a> {
    pub test: &'a DatasetSplit,
    pub exact_limit: usize,
    pub ais: Option<AisEval>,
}

impl<'a> EvalSettings<'a> {
    /// Exact evaluation only, at the default enumeration limit.
    pub fn exact(test: &'a DatasetSplit) -> Self {
        EvalSettings { test, exact_limit: DEFAULT_EXACT_LIMIT, ais: None }
    }

    pub fn with_ais(test: &'a DatasetSplit, ais: AisEval) -> Self {
        EvalSettings { test, exact_limit: DEFAULT_EXACT_LIMIT, ais: Some(ais) }
    }
}

/// Scores a model: exact when the smaller layer fits under the limit,
/// otherwise AIS when configured.
pub fn evaluate(params: &RbmParams, sparsity: f64, settings: &EvalSettings) -> Result<EvalRecord> {
    let small = params.n_visible().min(params.n_hidden());
    if small <= settings.exact_limit {
        let log_z = exact_log_partition(params, settings.exact_limit)?;
        let avg = avg_test_log_prob(params, log_z, settings.test)?;
        return Ok(EvalRecord {
            avg_test_log_prob: avg,
            log_z,
            method: EvalMethod::Exact,
            sparsity,
            ais_bounds: None,
        });
    }
    match &settings.ais {
        Some(ais) => {
            let est = ais_log_partition(params, &ais.base_bias, &ais.config)?;
            let avg = avg_test_log_prob(params, est.log_z_mean, settings.test)?;
            Ok(EvalRecord {
                avg_test_log_prob: avg,
                log_z: est.log_z_mean,
                method: EvalMethod::Ais,
                sparsity,
                ais_bounds: Some(est.log_z_stderr_bounds),
            })
        }
        None => Err(Error::Capability(format!(
            "model of {}x{} units needs AIS, but no AIS settings were given",
            params.n_visible(),
            params.n_hidden()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rbm::BinaryVector;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn random_params(n_v: usize, n_h: usize, seed: u64, scale: f64) -> RbmParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RbmParams::new(
            Array2::from_shape_fn((n_v, n_h), |_| (rng.random::<f64>() - 0.5) * scale),
            Array1::from_shape_fn(n_v, |_| (rng.random::<f64>() - 0.5) * scale),
            Array1::from_shape_fn(n_h, |_| (rng.random::<f64>() - 0.5) * scale),
        )
        .unwrap()
    }

    #[test]
    fn exact_zero_params_is_total_state_count() {
        let p = RbmParams::zeros(784, 20).unwrap();
        let lz = exact_log_partition(&p, 25).unwrap();
        assert_abs_diff_eq!(lz, 804.0 * std::f64::consts::LN_2, epsilon = 1e-9);
    }

    #[test]
    fn exact_single_pair_by_hand() {
        // States: (0,0) → 1, (0,1) → 1, (1,0) → 1, (1,1) → e.
        let p = RbmParams::new(array![[1.0]], array![0.0], array![0.0]).unwrap();
        let lz = exact_log_partition(&p, 25).unwrap();
        assert_abs_diff_eq!(lz, (3.0 + std::f64::consts::E).ln(), epsilon = 1e-12);
    }

    #[test]
    fn exact_matches_oracle_and_transpose() {
        for seed in 0..20 {
            let p = random_params(7, 5, seed, 3.0);
            let lz = exact_log_partition(&p, 25).unwrap();
            let oracle = enumeration_oracle(&p).unwrap();
            assert_abs_diff_eq!(lz, oracle.log_z, epsilon = 1e-10 * oracle.log_z.abs().max(1.0));
            let lz_t = exact_log_partition(&p.transposed(), 25).unwrap();
            assert_abs_diff_eq!(lz, lz_t, epsilon = 1e-10 * lz.abs().max(1.0));
        }
    }

    #[test]
    fn exact_rejects_large_layers() {
        let p = RbmParams::zeros(30, 30).unwrap();
        assert!(matches!(exact_log_partition(&p, 25), Err(Error::Capability(_))));
    }

    #[test]
    fn free_energy_identity_on_tiny_models() {
        use crate::math::logaddexp;
        use crate::rbm::{energy, free_energy};
        let p = random_params(4, 6, 9, 4.0);
        for v_idx in 0..1u32 << 4 {
            let v = BinaryVector::from_bits(
                &(0..4).map(|i| (v_idx >> i & 1) as u8).collect::<Vec<_>>(),
            )
            .unwrap();
            let mut lse = f64::NEG_INFINITY;
            for h_idx in 0..1u32 << 6 {
                let h = BinaryVector::from_bits(
                    &(0..6).map(|j| (h_idx >> j & 1) as u8).collect::<Vec<_>>(),
                )
                .unwrap();
                lse = logaddexp(lse, -energy(&p, &v, &h).unwrap());
            }
            let f = free_energy(&p, &v).unwrap();
            assert_abs_diff_eq!(-f, lse, epsilon = 1e-10 * lse.abs().max(1.0));
        }
    }

    #[test]
    fn oracle_uniform_at_zero_params() {
        let p = RbmParams::zeros(3, 2).unwrap();
        let oracle = enumeration_oracle(&p).unwrap();
        assert_abs_diff_eq!(oracle.log_z, 5.0 * std::f64::consts::LN_2, epsilon = 1e-12);
        for &pv in &oracle.marginal_v {
            assert_abs_diff_eq!(pv, 1.0 / 8.0, epsilon = 1e-12);
        }
        for &m in oracle.expectation_vh.iter() {
            assert_abs_diff_eq!(m, 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn oracle_marginals_normalize() {
        let p = random_params(6, 4, 77, 5.0);
        let oracle = enumeration_oracle(&p).unwrap();
        let total: f64 = oracle.marginal_v.iter().sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        let big = RbmParams::zeros(10, 10).unwrap();
        assert!(matches!(enumeration_oracle(&big), Err(Error::Capability(_))));
    }

    #[test]
    fn betas_presets() {
        let mut cfg = AisConfig::new(0);
        cfg.num_temperatures = 5;
        assert_eq!(cfg.resolve_betas().unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        cfg.beta_schedule = BetaSchedule::ThreeSegment;
        let b = cfg.resolve_betas().unwrap();
        assert_eq!(b.len(), 14_501);
        assert_eq!(b[0], 0.0);
        assert_eq!(*b.last().unwrap(), 1.0);
        assert!(b.windows(2).all(|w| w[1] >= w[0]));
        cfg.beta_schedule = BetaSchedule::Explicit(vec![0.0, 0.5, 0.4, 1.0]);
        assert!(cfg.resolve_betas().is_err());
        cfg.beta_schedule = BetaSchedule::Explicit(vec![0.1, 1.0]);
        assert!(cfg.resolve_betas().is_err());
    }

    #[test]
    fn ais_exact_when_target_equals_base() {
        // Zero weights and hidden biases, target visible bias equal to the
        // base: every intermediate distribution is the base itself.
        let n_v = 6;
        let base = Array1::from_shape_fn(n_v, |i| (i as f64 - 3.0) * 0.3);
        let params = RbmParams::new(
            Array2::zeros((n_v, 4)),
            base.clone(),
            Array1::zeros(4),
        )
        .unwrap();
        let mut cfg = AisConfig::new(5);
        cfg.num_runs = 8;
        cfg.num_temperatures = 20;
        let est = ais_log_partition(&params, &base, &cfg).unwrap();
        assert!(est.log_weights.iter().all(|&lw| lw == 0.0));
        assert_abs_diff_eq!(est.log_z_mean, est.base_log_z, epsilon = 1e-12);
        let expected =
            4.0 * std::f64::consts::LN_2 + base.iter().map(|&a| softplus(a)).sum::<f64>();
        assert_abs_diff_eq!(est.log_z_mean, expected, epsilon = 1e-12);
    }

    #[test]
    fn ais_close_to_exact_on_tiny_model() {
        let params = random_params(7, 5, 21, 2.0);
        let base = Array1::<f64>::zeros(7);
        let mut cfg = AisConfig::new(11);
        cfg.num_runs = 100;
        cfg.num_temperatures = 1000;
        let est = ais_log_partition(&params, &base, &cfg).unwrap();
        let exact = exact_log_partition(&params, 25).unwrap();
        assert!(
            (est.log_z_mean - exact).abs() < 0.1,
            "AIS {} vs exact {exact}",
            est.log_z_mean
        );
        assert!(est.log_z_stderr_bounds.0 <= est.log_z_mean);
        assert!(est.log_z_stderr_bounds.1 >= est.log_z_mean);
    }

    #[test]
    fn ais_is_deterministic() {
        let params = random_params(5, 4, 3, 2.0);
        let base = Array1::<f64>::zeros(5);
        let mut cfg = AisConfig::new(7);
        cfg.num_runs = 10;
        cfg.num_temperatures = 50;
        let a = ais_log_partition(&params, &base, &cfg).unwrap();
        let b = ais_log_partition(&params, &base, &cfg).unwrap();
        assert_eq!(a.log_weights, b.log_weights);
        assert_eq!(a.log_z_mean, b.log_z_mean);
    }

    #[test]
    fn avg_log_prob_closed_forms() {
        use crate::data::DatasetSplit;
        // Uniform model: every vector has probability 2^{-n_v}.
        let p = RbmParams::zeros(5, 3).unwrap();
        let data =
            DatasetSplit::new(Array2::from_elem((4, 5), 1u8), None, "x", "t").unwrap();
        let lz = exact_log_partition(&p, 25).unwrap();
        let avg = avg_test_log_prob(&p, lz, &data).unwrap();
        assert_abs_diff_eq!(avg, -5.0 * std::f64::consts::LN_2, epsilon = 1e-12);

        // Bias-only model factorizes: mean of Σ_i [v_i a_i − softplus(a_i)].
        let bias = array![0.7, -0.4, 0.1, 2.0, -1.3];
        let p = RbmParams::new(Array2::zeros((5, 2)), bias.clone(), Array1::zeros(2)).unwrap();
        let rows = array![[1u8, 0, 1, 1, 0], [0u8, 1, 1, 0, 1]];
        let data = DatasetSplit::new(rows.clone(), None, "x", "t").unwrap();
        let lz = exact_log_partition(&p, 25).unwrap();
        let avg = avg_test_log_prob(&p, lz, &data).unwrap();
        let expected = rows
            .rows()
            .into_iter()
            .map(|r| {
                r.iter()
                    .zip(bias.iter())
                    .map(|(&v, &a)| v as f64 * a - softplus(a))
                    .sum::<f64>()
            })
            .sum::<f64>()
            / 2.0;
        assert_abs_diff_eq!(avg, expected, epsilon = 1e-12);

        // Linear in log Z: inflating it by δ shifts the mean by exactly −δ.
        let shifted = avg_test_log_prob(&p, lz + 2.5, &data).unwrap();
        assert_abs_diff_eq!(shifted, avg - 2.5, epsilon = 1e-12);

        let empty = DatasetSplit::new(Array2::zeros((0, 5)), None, "e", "t").unwrap();
        assert!(matches!(avg_test_log_prob(&p, lz, &empty), Err(Error::Usage(_))));
    }

    #[test]
    fn evaluate_picks_method_by_size() {
        use crate::data::DatasetSplit;
        let data = DatasetSplit::new(Array2::zeros((3, 8)), None, "d", "t").unwrap();
        let small = RbmParams::zeros(8, 3).unwrap();
        let rec = evaluate(&small, 0.0, &EvalSettings::exact(&data)).unwrap();
        assert_eq!(rec.method, EvalMethod::Exact);

        let mut settings = EvalSettings::exact(&data);
        settings.exact_limit = 2;
        assert!(matches!(evaluate(&small, 0.0, &settings), Err(Error::Capability(_))));

        let mut cfg = AisConfig::new(1);
        cfg.num_runs = 4;
        cfg.num_temperatures = 10;
        settings.ais = Some(AisEval { config: cfg, base_bias: Array1::zeros(8) });
        let rec = evaluate(&small, 0.25, &settings).unwrap();
        assert_eq!(rec.method, EvalMethod::Ais);
        assert!(rec.ais_bounds.is_some());
        assert_eq!(rec.sparsity, 0.25);
    }
}
