//! Deep belief networks: greedy layer-wise pretraining, sparse
//! architecture selection by per-layer pruning, and conversion to a
//! feedforward classifier for fine-tuning.

mod mlp;

pub use mlp::{error_rate, finetune, to_mlp, FinetuneConfig, MlpLayer, MlpNet};

use crate::data::DatasetSplit;
use crate::error::{Error, Result};
use crate::evaluation::{
    base_rate_bias, evaluate, AisConfig, AisEval, EvalRecord, EvalSettings, DEFAULT_EXACT_LIMIT,
};
use crate::math::{derive_seed, logistic};
use crate::pruning::{iterative_prune, sparsity, PruneMask, PruneSchedule};
use crate::rbm::{recon_cross_entropy, train_rbm, RbmParams, TrainConfig, TrainingLog};
use ndarray::Array2;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PROPAGATE_TAG: u64 = 0x7072_6f70;

/// One pretrained layer: its RBM parameters and, when pruned, the mask
/// that keeps its dropped connections at zero.
#[derive(Clone, Debug, PartialEq)]
pub struct DbnLayer {
    pub params: RbmParams,
    pub mask: Option<PruneMask>,
}

/// Ordered stack of pretrained layers; layer ℓ's hidden units are layer
/// ℓ+1's visible units.
#[derive(Clone, Debug, PartialEq)]
pub struct DbnStack {
    layers: Vec<DbnLayer>,
}

impl DbnStack {
    pub fn new(layers: Vec<DbnLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Usage("a DBN needs at least one layer".into()));
        }
        for w in layers.windows(2) {
            if w[0].params.n_hidden() != w[1].params.n_visible() {
                return Err(Error::Shape(format!(
                    "layer with {} hidden units feeds layer with {} visible units",
                    w[0].params.n_hidden(),
                    w[1].params.n_visible()
                )));
            }
        }
        for l in &layers {
            if let Some(m) = &l.mask {
                m.check_congruent(&l.params.weights)?;
            }
        }
        Ok(DbnStack { layers })
    }

    pub fn layers(&self) -> &[DbnLayer] {
        &self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// `[n_visible, hidden₀, hidden₁, ...]`.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].params.n_visible()];
        sizes.extend(self.layers.iter().map(|l| l.params.n_hidden()));
        sizes
    }
}

/// How features move through the stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PropagateMode {
    /// Bernoulli bits from each layer's conditional — used as training
    /// data for the layer above.
    Sample,
    /// Conditional probabilities — used as classifier features.
    Mean,
}

/// Pushes the split through the first `to_layer` layers. `to_layer = 0`
/// returns the input unchanged (as floats). Sampling draws from a stream
/// derived from `seed`, row-major per layer.
pub fn propagate_up(
    stack: &DbnStack,
    data: &DatasetSplit,
    to_layer: usize,
    mode: PropagateMode,
    seed: u64,
) -> Result<Array2<f64>> {
    if to_layer > stack.depth() {
        return Err(Error::Usage(format!(
            "propagate_up to layer {to_layer} in a {}-layer stack",
            stack.depth()
        )));
    }
    if data.width() != stack.layers[0].params.n_visible() {
        return Err(Error::Shape(format!(
            "data width {} against {} visible units",
            data.width(),
            stack.layers[0].params.n_visible()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, PROPAGATE_TAG));
    let mut x = data.rows_f64(0..data.len());
    for layer in &stack.layers[..to_layer] {
        x = layer_probs(&layer.params, &x);
        if mode == PropagateMode::Sample {
            for p in x.iter_mut() {
                *p = if rng.random::<f64>() < *p { 1.0 } else { 0.0 };
            }
        }
    }
    Ok(x)
}

fn layer_probs(params: &RbmParams, x: &Array2<f64>) -> Array2<f64> {
    let mut z = x.dot(&params.weights);
    for mut row in z.rows_mut() {
        row += &params.hidden_bias;
    }
    z.mapv_into(logistic)
}

/// Samples `p(h|v)` for every row of `data` and wraps the bits as the
/// training split for the next layer.
fn sample_hidden_dataset(
    params: &RbmParams,
    data: &DatasetSplit,
    seed: u64,
    layer_idx: usize,
) -> Result<DatasetSplit> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, PROPAGATE_TAG));
    let probs = layer_probs(params, &data.rows_f64(0..data.len()));
    let bits = probs.mapv(|p| (rng.random::<f64>() < p) as u8);
    DatasetSplit::new(bits, None, data.name(), &format!("layer{}", layer_idx + 1))
}

fn check_pretrain_args(
    data: &DatasetSplit,
    layer_sizes: &[usize],
    n_configs: usize,
) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::Usage("layer_sizes must name the input width and at least one hidden layer".into()));
    }
    if layer_sizes.iter().any(|&s| s == 0) {
        return Err(Error::Domain("layer sizes must be positive".into()));
    }
    if n_configs != layer_sizes.len() - 1 {
        return Err(Error::Usage(format!(
            "{} layer configs for {} trainable layers",
            n_configs,
            layer_sizes.len() - 1
        )));
    }
    if data.width() != layer_sizes[0] {
        return Err(Error::Shape(format!(
            "data width {} against input size {}",
            data.width(),
            layer_sizes[0]
        )));
    }
    Ok(())
}

/// Greedy layer-wise pretraining: layer 0 fits the data; each next layer
/// fits Bernoulli samples of the frozen layer below's hidden conditional.
pub fn greedy_pretrain(
    data: &DatasetSplit,
    layer_sizes: &[usize],
    configs: &[TrainConfig],
) -> Result<(DbnStack, Vec<TrainingLog>)> {
    check_pretrain_args(data, layer_sizes, configs.len())?;
    let mut layers = Vec::new();
    let mut logs = Vec::new();
    let mut cur = data.clone();
    for (l, cfg) in configs.iter().enumerate() {
        let (params, log) = train_rbm(&cur, layer_sizes[l + 1], cfg, None, None)?;
        if l + 1 < configs.len() {
            cur = sample_hidden_dataset(&params, &cur, cfg.seed, l)?;
        }
        layers.push(DbnLayer { params, mask: None });
        logs.push(log);
    }
    Ok((DbnStack::new(layers)?, logs))
}

/// When a pruned layer still "keeps its generative performance".
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RecoveryGuard {
    /// Held-out reconstruction cross-entropy within this factor of the
    /// unpruned layer's (cheap, works at any layer size).
    ReconstructionFactor(f64),
    /// Average held-out log-probability within this many nats of the
    /// unpruned layer's (needs exact or AIS evaluation per iterate).
    LogProbNats(f64),
}

impl Default for RecoveryGuard {
    fn default() -> Self {
        RecoveryGuard::ReconstructionFactor(1.02)
    }
}

/// One pruning iterate of one layer, as judged by the guard.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub sparsity: f64,
    pub recon_ce: f64,
    pub eval: EvalRecord,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct LayerReport {
    pub dense_recon_ce: f64,
    pub dense_eval: Option<EvalRecord>,
    pub steps: Vec<StepOutcome>,
    /// Index into `steps` of the accepted iterate, if any passed.
    pub accepted: Option<usize>,
    /// Set when no iterate passed and the dense layer was kept.
    pub fell_back_to_dense: bool,
}

#[derive(Clone, Debug, Default)]
pub struct SparsePretrainReport {
    pub layers: Vec<LayerReport>,
}

/// Sparse architecture selection: per layer, train dense, prune
/// iteratively, accept the sparsest iterate the guard passes (falling
/// back to the dense layer with a warning if none does), then feed
/// samples from the accepted layer upward.
///
/// `schedules[l] = None` skips pruning for that layer, which makes runs
/// with all-`None` schedules bit-identical to [`greedy_pretrain`].
/// Layers too large for exact evaluation score their pruning iterates
/// with `ais` (scaled to the layer's data); omitting it is a capability
/// error for such layers.
pub fn sparse_pretrain(
    data: &DatasetSplit,
    layer_sizes: &[usize],
    configs: &[TrainConfig],
    schedules: &[Option<PruneSchedule>],
    guard: RecoveryGuard,
    ais: Option<&AisConfig>,
) -> Result<(DbnStack, SparsePretrainReport)> {
    check_pretrain_args(data, layer_sizes, configs.len())?;
    if schedules.len() != configs.len() {
        return Err(Error::Usage(format!(
            "{} prune schedules for {} layers",
            schedules.len(),
            configs.len()
        )));
    }
    match guard {
        RecoveryGuard::ReconstructionFactor(f) if !(f > 0.0) => {
            return Err(Error::Domain("recovery factor must be positive".into()))
        }
        RecoveryGuard::LogProbNats(n) if !(n >= 0.0) => {
            return Err(Error::Domain("recovery tolerance must be nonnegative".into()))
        }
        _ => {}
    }

    let mut layers = Vec::new();
    let mut report = SparsePretrainReport::default();
    let mut cur = data.clone();

    for (l, cfg) in configs.iter().enumerate() {
        let (dense_params, _) = train_rbm(&cur, layer_sizes[l + 1], cfg, None, None)?;

        let val_start = cur.validation_start();
        let val = if val_start < cur.len() { cur.slice(val_start..cur.len()) } else { cur.clone() };
        let dense_ce = recon_cross_entropy(&dense_params, val.rows_f64(0..val.len()).view());

        let (accepted_params, accepted_mask, layer_report) = match &schedules[l] {
            None => (
                dense_params.clone(),
                None,
                LayerReport {
                    dense_recon_ce: dense_ce,
                    dense_eval: None,
                    steps: Vec::new(),
                    accepted: None,
                    fell_back_to_dense: false,
                },
            ),
            Some(schedule) => {
                let ais_eval = match ais {
                    Some(cfg_ais) => {
                        let marginals = crate::data::pixel_marginals(&cur)?;
                        let mut scaled = cfg_ais.clone();
                        scaled.seed = derive_seed(cfg_ais.seed, 0xA15 + l as u64);
                        Some(AisEval {
                            base_bias: base_rate_bias(&marginals, scaled.base_rate_smoothing)?,
                            config: scaled,
                        })
                    }
                    None => None,
                };
                let settings = EvalSettings {
                    test: &val,
                    exact_limit: DEFAULT_EXACT_LIMIT,
                    ais: ais_eval,
                };

                let dense_eval = match guard {
                    RecoveryGuard::LogProbNats(_) => {
                        Some(evaluate(&dense_params, 0.0, &settings)?)
                    }
                    RecoveryGuard::ReconstructionFactor(_) => None,
                };

                let steps = iterative_prune(&cur, &dense_params, schedule, &settings)?;
                let outcomes: Vec<StepOutcome> = steps
                    .iter()
                    .map(|s| {
                        let ce = recon_cross_entropy(&s.params, val.rows_f64(0..val.len()).view());
                        let passed = match guard {
                            RecoveryGuard::ReconstructionFactor(f) => ce <= f * dense_ce,
                            RecoveryGuard::LogProbNats(tol) => {
                                let base = dense_eval.as_ref().expect("computed above");
                                base.avg_test_log_prob - s.eval.avg_test_log_prob <= tol
                            }
                        };
                        StepOutcome {
                            sparsity: sparsity(&s.mask),
                            recon_ce: ce,
                            eval: s.eval.clone(),
                            passed,
                        }
                    })
                    .collect();

                let accepted = outcomes.iter().rposition(|o| o.passed);
                let (params, mask, fell_back) = match accepted {
                    Some(i) => (steps[i].params.clone(), Some(steps[i].mask.clone()), false),
                    None => (dense_params.clone(), None, true),
                };
                (
                    params,
                    mask,
                    LayerReport {
                        dense_recon_ce: dense_ce,
                        dense_eval,
                        steps: outcomes,
                        accepted,
                        fell_back_to_dense: fell_back,
                    },
                )
            }
        };

        if l + 1 < configs.len() {
            cur = sample_hidden_dataset(&accepted_params, &cur, cfg.seed, l)?;
        }
        layers.push(DbnLayer { params: accepted_params, mask: accepted_mask });
        report.layers.push(layer_report);
    }
    Ok((DbnStack::new(layers)?, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pruning::PruneStrategy;

    fn toy_data(rows: usize, width: usize, seed: u64) -> DatasetSplit {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = Array2::from_shape_fn((rows, width), |_| (rng.random::<f64>() < 0.35) as u8);
        DatasetSplit::new(m, None, "toy", "train").unwrap()
    }

    fn quick_config(seed: u64) -> TrainConfig {
        let mut cfg = TrainConfig::new(seed);
        cfg.epochs = 2;
        cfg.batch_size = 8;
        cfg
    }

    #[test]
    fn single_layer_matches_plain_training() {
        let data = toy_data(40, 6, 1);
        let cfg = quick_config(5);
        let (stack, _) = greedy_pretrain(&data, &[6, 4], &[cfg.clone()]).unwrap();
        let (direct, _) = train_rbm(&data, 4, &cfg, None, None).unwrap();
        assert_eq!(stack.layers()[0].params, direct);
        assert_eq!(stack.layer_sizes(), vec![6, 4]);
    }

    #[test]
    fn two_layer_shapes_chain() {
        let data = toy_data(40, 6, 2);
        let (stack, logs) =
            greedy_pretrain(&data, &[6, 4, 3], &[quick_config(5), quick_config(7)]).unwrap();
        assert_eq!(stack.layer_sizes(), vec![6, 4, 3]);
        assert_eq!(logs.len(), 2);
        // Layer-2 training data is binary with layer-1's hidden width:
        // regenerate it and check.
        let inter =
            sample_hidden_dataset(&stack.layers()[0].params, &data, 5, 0).unwrap();
        assert_eq!(inter.width(), 4);
        assert!(inter.examples().iter().all(|&b| b <= 1));
    }

    #[test]
    fn greedy_pretrain_deterministic() {
        let data = toy_data(30, 5, 3);
        let cfgs = [quick_config(11), quick_config(13)];
        let (a, _) = greedy_pretrain(&data, &[5, 4, 3], &cfgs).unwrap();
        let (b, _) = greedy_pretrain(&data, &[5, 4, 3], &cfgs).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn propagate_identity_and_uniform() {
        let data = toy_data(10, 4, 9);
        let params = RbmParams::zeros(4, 3).unwrap();
        let stack = DbnStack::new(vec![DbnLayer { params, mask: None }]).unwrap();

        let x0 = propagate_up(&stack, &data, 0, PropagateMode::Mean, 0).unwrap();
        assert_eq!(x0, data.rows_f64(0..data.len()));

        let x1 = propagate_up(&stack, &data, 1, PropagateMode::Mean, 0).unwrap();
        assert!(x1.iter().all(|&p| p == 0.5));

        let s1 = propagate_up(&stack, &data, 1, PropagateMode::Sample, 42).unwrap();
        let s2 = propagate_up(&stack, &data, 1, PropagateMode::Sample, 42).unwrap();
        assert_eq!(s1, s2);
        assert!(s1.iter().all(|&b| b == 0.0 || b == 1.0));

        assert!(propagate_up(&stack, &data, 2, PropagateMode::Mean, 0).is_err());
    }

    #[test]
    fn sparse_with_no_schedules_equals_greedy() {
        let data = toy_data(50, 6, 21);
        let cfgs = [quick_config(31), quick_config(33)];
        let (greedy, _) = greedy_pretrain(&data, &[6, 5, 3], &cfgs).unwrap();
        let (sparse, report) = sparse_pretrain(
            &data,
            &[6, 5, 3],
            &cfgs,
            &[None, None],
            RecoveryGuard::default(),
            None,
        )
        .unwrap();
        assert_eq!(greedy, sparse);
        assert!(report.layers.iter().all(|l| l.steps.is_empty()));
    }

    #[test]
    fn sparse_pretrain_prunes_and_reports() {
        let data = toy_data(60, 6, 77);
        let mut cfg = quick_config(41);
        cfg.epochs = 6;
        let mut retrain = cfg.clone();
        retrain.epochs = 3;
        let schedule = PruneSchedule {
            strategy: PruneStrategy::Percentile,
            steps: vec![0.5],
            retrain,
        };
        // A generous guard accepts the pruned iterate.
        let (stack, report) = sparse_pretrain(
            &data,
            &[6, 4],
            &[cfg],
            &[Some(schedule)],
            RecoveryGuard::ReconstructionFactor(10.0),
            None,
        )
        .unwrap();
        let layer = &stack.layers()[0];
        assert!(layer.mask.is_some());
        let m = layer.mask.as_ref().unwrap();
        assert_eq!(m.surviving(), 12); // half of 24
        assert_eq!(report.layers[0].accepted, Some(0));
        assert!(!report.layers[0].fell_back_to_dense);
        // Masked weights really are zero.
        for ((i, j), &w) in layer.params.weights.indexed_iter() {
            if !m.is_kept(i, j) {
                assert_eq!(w, 0.0);
            }
        }
    }

    #[test]
    fn sparse_pretrain_falls_back_when_guard_rejects() {
        let data = toy_data(60, 6, 78);
        let mut cfg = quick_config(43);
        cfg.epochs = 6;
        let mut retrain = cfg.clone();
        retrain.epochs = 0; // no recovery possible
        let schedule = PruneSchedule {
            strategy: PruneStrategy::Percentile,
            steps: vec![0.9],
            retrain,
        };
        // An impossible guard: reconstruction must be strictly better than
        // a fraction of the dense run's.
        let (stack, report) = sparse_pretrain(
            &data,
            &[6, 4],
            &[cfg],
            &[Some(schedule)],
            RecoveryGuard::ReconstructionFactor(0.01),
            None,
        )
        .unwrap();
        assert!(stack.layers()[0].mask.is_none());
        assert!(report.layers[0].fell_back_to_dense);
        assert_eq!(report.layers[0].accepted, None);
    }

    #[test]
    fn stack_validates_chaining() {
        let a = RbmParams::zeros(4, 3).unwrap();
        let b = RbmParams::zeros(5, 2).unwrap(); // should be 3 visible
        let err = DbnStack::new(vec![
            DbnLayer { params: a, mask: None },
            DbnLayer { params: b, mask: None },
        ]);
        assert!(matches!(err, Err(Error::Shape(_))));
    }

    #[test]
    fn propagate_rejects_wrong_width() {
        let params = RbmParams::zeros(4, 3).unwrap();
        let stack = DbnStack::new(vec![DbnLayer { params, mask: None }]).unwrap();
        let bad = DatasetSplit::new(Array2::zeros((2, 5)), None, "bad", "t").unwrap();
        assert!(matches!(
            propagate_up(&stack, &bad, 1, PropagateMode::Mean, 0),
            Err(Error::Shape(_))
        ));
    }
}
