//! Contrastive-divergence training with optional weight masking.

use crate::data::DatasetSplit;
use crate::error::{Error, Result};
use crate::math::{logistic, softplus};
use crate::pruning::PruneMask;
use crate::rbm::RbmParams;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Piecewise-constant value over epochs. A milestone `(e, x)` makes the
/// value `x` from epoch `e` (inclusive) until the next milestone.
#[derive(Clone, Debug, PartialEq)]
pub enum Schedule<T> {
    Constant(T),
    Milestones(Vec<(usize, T)>),
}

impl<T: Copy> Schedule<T> {
    pub fn at(&self, epoch: usize) -> T {
        match self {
            Schedule::Constant(x) => *x,
            Schedule::Milestones(ms) => {
                let mut cur = ms[0].1;
                for &(start, x) in ms {
                    if start <= epoch {
                        cur = x;
                    } else {
                        break;
                    }
                }
                cur
            }
        }
    }

    pub fn values(&self) -> Vec<T> {
        match self {
            Schedule::Constant(x) => vec![*x],
            Schedule::Milestones(ms) => ms.iter().map(|&(_, x)| x).collect(),
        }
    }

    fn check_structure(&self, what: &str) -> Result<()> {
        if let Schedule::Milestones(ms) = self {
            if ms.is_empty() {
                return Err(Error::Domain(format!("{what}: empty milestone list")));
            }
            if ms[0].0 != 0 {
                return Err(Error::Domain(format!("{what}: first milestone must be at epoch 0")));
            }
            if ms.windows(2).any(|w| w[1].0 <= w[0].0) {
                return Err(Error::Domain(format!(
                    "{what}: milestone epochs must be strictly increasing"
                )));
            }
        }
        Ok(())
    }
}

pub type CdSchedule = Schedule<u32>;

impl Schedule<u32> {
    /// Default ramp for a target CD step count: the step count doubles at
    /// evenly spaced epoch milestones (1, 2, 4, ...) until it caps at
    /// `target`.
    pub fn cd_ramp(target: u32, epochs: usize) -> Self {
        if target <= 1 || epochs <= 1 {
            return Schedule::Constant(target.max(1));
        }
        let mut values = Vec::new();
        let mut k = 1u32;
        while k < target {
            values.push(k);
            k = k.saturating_mul(2);
        }
        values.push(target);
        let n = values.len();
        let mut ms: Vec<(usize, u32)> = Vec::with_capacity(n);
        for (i, v) in values.into_iter().enumerate() {
            let e = i * epochs / n;
            // Collapsed milestones keep the latest (largest) value.
            match ms.last_mut() {
                Some(last) if last.0 == e => last.1 = v,
                _ => ms.push((e, v)),
            }
        }
        Schedule::Milestones(ms)
    }
}

impl Schedule<f64> {
    /// Learning rate multiplied by `factor` every `every` epochs.
    pub fn step_decay(initial: f64, factor: f64, every: usize, epochs: usize) -> Self {
        if every == 0 || every >= epochs {
            return Schedule::Constant(initial);
        }
        let mut ms = vec![(0usize, initial)];
        let mut lr = initial;
        let mut e = every;
        while e < epochs {
            lr *= factor;
            ms.push((e, lr));
            e += every;
        }
        Schedule::Milestones(ms)
    }
}

/// Hyperparameters for one training run. The regularizers are exclusive:
/// penalties are compared against each other, never combined.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub cd_steps: Schedule<u32>,
    pub learning_rate: Schedule<f64>,
    pub momentum: Schedule<f64>,
    pub l1_coeff: f64,
    pub l2_coeff: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(seed: u64) -> Self {
        TrainConfig {
            cd_steps: Schedule::Constant(1),
            learning_rate: Schedule::Constant(0.05),
            momentum: Schedule::Milestones(vec![(0, 0.5), (5, 0.9)]),
            l1_coeff: 0.0,
            l2_coeff: 1e-4,
            batch_size: 100,
            epochs: 10,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.cd_steps.check_structure("cd_steps")?;
        self.learning_rate.check_structure("learning_rate")?;
        self.momentum.check_structure("momentum")?;
        if self.cd_steps.values().iter().any(|&k| k == 0) {
            return Err(Error::Domain("cd_steps must be positive".into()));
        }
        if self.cd_steps.values().windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Domain("cd_steps schedule must be nondecreasing".into()));
        }
        if self.learning_rate.values().iter().any(|&lr| lr < 0.0 || !lr.is_finite()) {
            return Err(Error::Domain("learning rate must be nonnegative".into()));
        }
        if self.momentum.values().iter().any(|&m| !(0.0..1.0).contains(&m)) {
            return Err(Error::Domain("momentum must lie in [0, 1)".into()));
        }
        if self.l1_coeff < 0.0 || self.l2_coeff < 0.0 {
            return Err(Error::Domain("regularization coefficients must be nonnegative".into()));
        }
        if self.l1_coeff > 0.0 && self.l2_coeff > 0.0 {
            return Err(Error::Domain(
                "l1 and l2 penalties are exclusive; set at most one of them".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::Domain("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// Additive update for a parameter set; also serves as the momentum
/// velocity buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientEstimate {
    pub d_weights: Array2<f64>,
    pub d_visible_bias: Array1<f64>,
    pub d_hidden_bias: Array1<f64>,
}

impl GradientEstimate {
    pub fn zeros(n_visible: usize, n_hidden: usize) -> Self {
        GradientEstimate {
            d_weights: Array2::zeros((n_visible, n_hidden)),
            d_visible_bias: Array1::zeros(n_visible),
            d_hidden_bias: Array1::zeros(n_hidden),
        }
    }

    fn check_congruent(&self, params: &RbmParams) -> Result<()> {
        if self.d_weights.dim() != params.weights.dim()
            || self.d_visible_bias.len() != params.n_visible()
            || self.d_hidden_bias.len() != params.n_hidden()
        {
            return Err(Error::Shape("gradient not congruent with parameters".into()));
        }
        Ok(())
    }
}

fn check_binary_batch(batch: &ArrayView2<f64>) -> Result<()> {
    if batch.iter().any(|&x| x != 0.0 && x != 1.0) {
        return Err(Error::Domain("batch entries must be exactly 0 or 1".into()));
    }
    Ok(())
}

/// Samples a whole matrix of independent Bernoulli bits, row-major, so the
/// stream of uniform draws is reproducible.
fn sample_matrix<R: Rng>(probs: &Array2<f64>, rng: &mut R) -> Array2<f64> {
    let mut out = probs.clone();
    for x in out.iter_mut() {
        *x = if rng.random::<f64>() < *x { 1.0 } else { 0.0 };
    }
    out
}

fn hidden_probs(params: &RbmParams, visible: &ArrayView2<f64>) -> Array2<f64> {
    let mut x = visible.dot(&params.weights);
    for mut row in x.rows_mut() {
        row += &params.hidden_bias;
    }
    x.mapv_into(logistic)
}

fn visible_probs(params: &RbmParams, hidden: &ArrayView2<f64>) -> Array2<f64> {
    let mut x = hidden.dot(&params.weights.t());
    for mut row in x.rows_mut() {
        row += &params.visible_bias;
    }
    x.mapv_into(logistic)
}

/// CD-k gradient estimate, averaged over the batch (one binary example per
/// row). The data term uses `p(h|v)` at the data, the model term uses
/// `p(h|v⁻)` at the k-step Gibbs reconstruction; hidden factors enter as
/// probabilities in both terms, and `v⁻` itself is a sample.
pub fn cd_gradient<R: Rng>(
    params: &RbmParams,
    batch: ArrayView2<f64>,
    k: u32,
    rng: &mut R,
) -> Result<GradientEstimate> {
    if batch.nrows() == 0 {
        return Err(Error::Usage("cd_gradient on an empty batch".into()));
    }
    if batch.ncols() != params.n_visible() {
        return Err(Error::Shape(format!(
            "batch width {} against {} visible units",
            batch.ncols(),
            params.n_visible()
        )));
    }
    if k == 0 {
        return Err(Error::Domain("cd_gradient needs k >= 1".into()));
    }
    check_binary_batch(&batch)?;

    let n = batch.nrows() as f64;
    let h_pos = hidden_probs(params, &batch);

    let mut v_neg = batch.to_owned();
    for _ in 0..k {
        let ph = hidden_probs(params, &v_neg.view());
        let h = sample_matrix(&ph, rng);
        let pv = visible_probs(params, &h.view());
        v_neg = sample_matrix(&pv, rng);
    }
    let h_neg = hidden_probs(params, &v_neg.view());

    let d_weights = (batch.t().dot(&h_pos) - v_neg.t().dot(&h_neg)) / n;
    let d_visible_bias = (batch.sum_axis(Axis(0)) - v_neg.sum_axis(Axis(0))) / n;
    let d_hidden_bias = (h_pos.sum_axis(Axis(0)) - h_neg.sum_axis(Axis(0))) / n;
    Ok(GradientEstimate { d_weights, d_visible_bias, d_hidden_bias })
}

/// Scalar hyperparameters for one SGD step (schedules already resolved).
#[derive(Clone, Copy, Debug)]
pub struct SgdHyper {
    pub learning_rate: f64,
    pub momentum: f64,
    pub l1_coeff: f64,
    pub l2_coeff: f64,
}

/// One momentum step: `vel ← momentum·vel + lr·(grad − penalty)`,
/// `params ← params + vel`. The penalty gradient (`l2·W` or `l1·sign W`)
/// applies to weights only. Masked weight coordinates and their velocity
/// are forced to exactly zero after the step.
pub fn sgd_update(
    params: &mut RbmParams,
    velocity: &mut GradientEstimate,
    grad: &GradientEstimate,
    hyper: &SgdHyper,
    mask: Option<&PruneMask>,
) -> Result<()> {
    grad.check_congruent(params)?;
    velocity.check_congruent(params)?;
    if let Some(m) = mask {
        m.check_congruent(&params.weights)?;
    }
    let lr = hyper.learning_rate;
    let mom = hyper.momentum;

    ndarray::Zip::from(&mut velocity.d_weights)
        .and(&grad.d_weights)
        .and(&params.weights)
        .for_each(|vel, &g, &w| {
            let sign = if w == 0.0 { 0.0 } else { w.signum() };
            let penalty = hyper.l2_coeff * w + hyper.l1_coeff * sign;
            *vel = mom * *vel + lr * (g - penalty);
        });
    params.weights += &velocity.d_weights;

    ndarray::Zip::from(&mut velocity.d_visible_bias).and(&grad.d_visible_bias).for_each(
        |vel, &g| {
            *vel = mom * *vel + lr * g;
        },
    );
    params.visible_bias += &velocity.d_visible_bias;

    ndarray::Zip::from(&mut velocity.d_hidden_bias).and(&grad.d_hidden_bias).for_each(|vel, &g| {
        *vel = mom * *vel + lr * g;
    });
    params.hidden_bias += &velocity.d_hidden_bias;

    if let Some(m) = mask {
        m.zero_dropped(&mut params.weights);
        m.zero_dropped(&mut velocity.d_weights);
    }
    params.check_finite()
}

/// Per-epoch diagnostics of one training run.
#[derive(Clone, Debug, Default)]
pub struct TrainingLog {
    /// Mean-field reconstruction cross-entropy (nats per example) on the
    /// held-out validation slice, one entry per epoch.
    pub epoch_recon_ce: Vec<f64>,
}

/// Mean reconstruction cross-entropy of a one-sweep mean-field pass
/// (`v → p(h|v) → logits of p(v|·)`), in nats per example.
pub fn recon_cross_entropy(params: &RbmParams, examples: ArrayView2<f64>) -> f64 {
    let ph = hidden_probs(params, &examples);
    let mut logits = ph.dot(&params.weights.t());
    for mut row in logits.rows_mut() {
        row += &params.visible_bias;
    }
    let mut total = 0.0;
    for (x_row, z_row) in examples.rows().into_iter().zip(logits.rows()) {
        for (&x, &z) in x_row.iter().zip(z_row.iter()) {
            total += softplus(z) - x * z;
        }
    }
    total / examples.nrows() as f64
}

/// Trains an RBM with minibatch CD and momentum SGD.
///
/// `n_hidden` sizes the model when `init` is absent. The last 5% of
/// `data` is held out of the updates and scored for the log; with fewer
/// than 20 examples everything is trained on and the log scores the full
/// set. Given a mask, masked weights stay exactly zero throughout.
/// Deterministic for a fixed config (single seeded stream drives
/// initialization, shuffling and sampling).
pub fn train_rbm(
    data: &DatasetSplit,
    n_hidden: usize,
    config: &TrainConfig,
    init: Option<&RbmParams>,
    mask: Option<&PruneMask>,
) -> Result<(RbmParams, TrainingLog)> {
    config.validate()?;
    if data.len() == 0 {
        return Err(Error::Usage("training data is empty".into()));
    }
    let n_visible = data.width();
    if let Some(p) = init {
        if p.n_visible() != n_visible || p.n_hidden() != n_hidden {
            return Err(Error::Shape(format!(
                "init is {}x{} but the run wants {}x{}",
                p.n_visible(),
                p.n_hidden(),
                n_visible,
                n_hidden
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = match init {
        Some(p) => p.clone(),
        None => RbmParams::random_init(n_visible, n_hidden, &mut rng)?,
    };
    if let Some(m) = mask {
        m.check_congruent(&params.weights)?;
        m.zero_dropped(&mut params.weights);
    }

    let holdout = data.len() / 20;
    let n_train = data.len() - holdout;
    let val = if holdout > 0 { data.rows_f64(n_train..data.len()) } else { data.rows_f64(0..data.len()) };

    let mut velocity = GradientEstimate::zeros(n_visible, n_hidden);
    let mut log = TrainingLog::default();
    let mut order: Vec<usize> = (0..n_train).collect();

    for epoch in 0..config.epochs {
        let hyper = SgdHyper {
            learning_rate: config.learning_rate.at(epoch),
            momentum: config.momentum.at(epoch),
            l1_coeff: config.l1_coeff,
            l2_coeff: config.l2_coeff,
        };
        let k = config.cd_steps.at(epoch);
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch = data.gather_f64(chunk);
            let grad = cd_gradient(&params, batch.view(), k, &mut rng)?;
            sgd_update(&mut params, &mut velocity, &grad, &hyper, mask)?;
        }
        log.epoch_recon_ce.push(recon_cross_entropy(&params, val.view()));
    }
    Ok((params, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn schedule_lookup() {
        let s = Schedule::Milestones(vec![(0, 1u32), (3, 5), (10, 25)]);
        assert_eq!(s.at(0), 1);
        assert_eq!(s.at(2), 1);
        assert_eq!(s.at(3), 5);
        assert_eq!(s.at(9), 5);
        assert_eq!(s.at(100), 25);
        assert_eq!(Schedule::Constant(7u32).at(4), 7);
    }

    #[test]
    fn cd_ramp_reaches_target_and_is_nondecreasing() {
        let s = Schedule::cd_ramp(25, 30);
        let vals = s.values();
        assert_eq!(*vals.first().unwrap(), 1);
        assert_eq!(*vals.last().unwrap(), 25);
        assert!(vals.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(s.at(29), 25);
        // Compressed ramp still valid when epochs are scarce.
        let tight = Schedule::cd_ramp(25, 2);
        let mut cfg = TrainConfig::new(0);
        cfg.cd_steps = tight;
        cfg.epochs = 2;
        cfg.validate().unwrap();
    }

    #[test]
    fn config_rejects_combined_penalties() {
        let mut cfg = TrainConfig::new(1);
        cfg.l1_coeff = 1e-5;
        cfg.l2_coeff = 1e-4;
        assert!(cfg.validate().is_err());
        cfg.l2_coeff = 0.0;
        cfg.validate().unwrap();
    }

    #[test]
    fn config_rejects_decreasing_cd() {
        let mut cfg = TrainConfig::new(1);
        cfg.cd_steps = Schedule::Milestones(vec![(0, 5), (2, 1)]);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn cd_gradient_zero_when_chain_reproduces_batch() {
        // Saturated visible biases force every reconstruction to all-ones;
        // feeding all-ones data makes v⁻ = v and the two terms cancel.
        let params = RbmParams::new(
            Array2::zeros((4, 3)),
            Array1::from_elem(4, 40.0),
            Array1::zeros(3),
        )
        .unwrap();
        let batch = Array2::ones((5, 4));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = cd_gradient(&params, batch.view(), 3, &mut rng).unwrap();
        assert!(g.d_weights.iter().all(|&x| x == 0.0));
        assert!(g.d_visible_bias.iter().all(|&x| x == 0.0));
        assert!(g.d_hidden_bias.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn cd_gradient_rejects_bad_input() {
        let params = RbmParams::zeros(3, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let empty = Array2::<f64>::zeros((0, 3));
        assert!(matches!(
            cd_gradient(&params, empty.view(), 1, &mut rng),
            Err(Error::Usage(_))
        ));
        let nonbinary = Array2::from_elem((2, 3), 0.25);
        assert!(matches!(
            cd_gradient(&params, nonbinary.view(), 1, &mut rng),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn sgd_update_identity_and_decay() {
        // Zero grad, zero velocity, zero penalty: parameters unchanged.
        let mut p = RbmParams::new(array![[1.0]], array![0.3], array![-0.2]).unwrap();
        let before = p.clone();
        let mut vel = GradientEstimate::zeros(1, 1);
        let g = GradientEstimate::zeros(1, 1);
        let hyper =
            SgdHyper { learning_rate: 0.1, momentum: 0.9, l1_coeff: 0.0, l2_coeff: 0.0 };
        sgd_update(&mut p, &mut vel, &g, &hyper, None).unwrap();
        assert_eq!(p, before);

        // Pure L2 decay on a single weight: w' = 1 - 0.1*0.5*1 = 0.95.
        let mut p = RbmParams::new(array![[1.0]], array![0.0], array![0.0]).unwrap();
        let mut vel = GradientEstimate::zeros(1, 1);
        let hyper =
            SgdHyper { learning_rate: 0.1, momentum: 0.0, l1_coeff: 0.0, l2_coeff: 0.5 };
        sgd_update(&mut p, &mut vel, &g, &hyper, None).unwrap();
        assert_abs_diff_eq!(p.weights[[0, 0]], 0.95, epsilon = 1e-15);
    }

    #[test]
    fn sgd_update_mask_pins_weights_to_zero() {
        let mut p = RbmParams::new(array![[0.5, -0.3], [0.2, 0.9]], array![0.0, 0.0], array![0.0, 0.0])
            .unwrap();
        let mut keep = Array2::from_elem((2, 2), 1u8);
        keep[[0, 1]] = 0;
        let mask = PruneMask::new(keep).unwrap();
        mask.zero_dropped(&mut p.weights);
        let mut vel = GradientEstimate::zeros(2, 2);
        let hyper =
            SgdHyper { learning_rate: 0.2, momentum: 0.8, l1_coeff: 0.0, l2_coeff: 0.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let g = GradientEstimate {
                d_weights: Array2::from_shape_fn((2, 2), |_| rng.random::<f64>() - 0.5),
                d_visible_bias: Array1::zeros(2),
                d_hidden_bias: Array1::zeros(2),
            };
            sgd_update(&mut p, &mut vel, &g, &hyper, Some(&mask)).unwrap();
            assert_eq!(p.weights[[0, 1]], 0.0);
            assert_eq!(vel.d_weights[[0, 1]], 0.0);
        }
    }

    #[test]
    fn sgd_update_flags_nonfinite() {
        let mut p = RbmParams::new(array![[1.0]], array![0.0], array![0.0]).unwrap();
        let mut vel = GradientEstimate::zeros(1, 1);
        let g = GradientEstimate {
            d_weights: array![[f64::INFINITY]],
            d_visible_bias: array![0.0],
            d_hidden_bias: array![0.0],
        };
        let hyper =
            SgdHyper { learning_rate: 1.0, momentum: 0.0, l1_coeff: 0.0, l2_coeff: 0.0 };
        assert!(matches!(sgd_update(&mut p, &mut vel, &g, &hyper, None), Err(Error::Numeric(_))));
    }

    fn four_pattern_data(copies: usize) -> DatasetSplit {
        let patterns: [[u8; 6]; 4] = [
            [1, 1, 1, 0, 0, 0],
            [0, 0, 0, 1, 1, 1],
            [1, 0, 1, 0, 1, 0],
            [0, 1, 0, 1, 0, 1],
        ];
        let mut rows = Vec::new();
        for _ in 0..copies {
            for p in &patterns {
                rows.extend_from_slice(p);
            }
        }
        let m = Array2::from_shape_vec((4 * copies, 6), rows).unwrap();
        DatasetSplit::new(m, None, "four-pattern", "train").unwrap()
    }

    #[test]
    fn train_rbm_zero_lr_returns_init() {
        let data = four_pattern_data(5);
        let init = {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            RbmParams::random_init(6, 4, &mut rng).unwrap()
        };
        let mut cfg = TrainConfig::new(9);
        cfg.epochs = 1;
        cfg.learning_rate = Schedule::Constant(0.0);
        cfg.momentum = Schedule::Constant(0.0);
        cfg.l2_coeff = 0.0;
        let (out, _) = train_rbm(&data, 4, &cfg, Some(&init), None).unwrap();
        assert_eq!(out, init);
    }

    #[test]
    fn train_rbm_deterministic() {
        let data = four_pattern_data(5);
        let mut cfg = TrainConfig::new(123);
        cfg.epochs = 3;
        cfg.batch_size = 4;
        let (a, log_a) = train_rbm(&data, 4, &cfg, None, None).unwrap();
        let (b, log_b) = train_rbm(&data, 4, &cfg, None, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(log_a.epoch_recon_ce, log_b.epoch_recon_ce);
    }

    #[test]
    fn train_rbm_rejects_empty() {
        let empty = DatasetSplit::new(Array2::zeros((0, 4)), None, "none", "train").unwrap();
        let cfg = TrainConfig::new(0);
        assert!(matches!(train_rbm(&empty, 2, &cfg, None, None), Err(Error::Usage(_))));
    }

    #[test]
    fn recon_ce_uniform_model() {
        // Zero parameters reconstruct every pixel at probability 0.5:
        // cross-entropy is n_v * ln 2 per example.
        let p = RbmParams::zeros(6, 3).unwrap();
        let x = Array2::zeros((4, 6));
        assert_abs_diff_eq!(
            recon_cross_entropy(&p, x.view()),
            6.0 * std::f64::consts::LN_2,
            epsilon = 1e-12
        );
    }
}
