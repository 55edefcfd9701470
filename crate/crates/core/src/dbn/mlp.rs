//! Feedforward classifier initialized from a pretrained stack: logistic
//! hidden layers carrying the DBN weights (and masks), a softmax output
//! layer on top, cross-entropy SGD fine-tuning.

use crate::data::DatasetSplit;
use crate::dbn::DbnStack;
use crate::error::{Error, Result};
use crate::math::{derive_seed, logistic};
use crate::pruning::PruneMask;
use crate::rbm::Schedule;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

/// One dense layer: `n_in × n_out` weights, per-output bias, and an
/// optional mask pinning pruned weights to zero.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub mask: Option<PruneMask>,
}

/// Logistic hidden layers (from the DBN) and a softmax output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpNet {
    pub hidden: Vec<MlpLayer>,
    pub output: MlpLayer,
}

impl MlpNet {
    pub fn n_inputs(&self) -> usize {
        self.hidden.first().map_or(self.output.weights.nrows(), |l| l.weights.nrows())
    }

    pub fn n_classes(&self) -> usize {
        self.output.weights.ncols()
    }

    /// Class probabilities for a batch of inputs (one example per row).
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_cached(x)?.1)
    }

    /// Returns every layer's activations (input first) plus the softmax
    /// probabilities.
    fn forward_cached(&self, x: ArrayView2<f64>) -> Result<(Vec<Array2<f64>>, Array2<f64>)> {
        if x.ncols() != self.n_inputs() {
            return Err(Error::Shape(format!(
                "input width {} against {} input units",
                x.ncols(),
                self.n_inputs()
            )));
        }
        let mut acts = vec![x.to_owned()];
        for layer in &self.hidden {
            let mut z = acts.last().unwrap().dot(&layer.weights);
            for mut row in z.rows_mut() {
                row += &layer.bias;
            }
            acts.push(z.mapv_into(logistic));
        }
        let mut logits = acts.last().unwrap().dot(&self.output.weights);
        for mut row in logits.rows_mut() {
            row += &self.output.bias;
        }
        Ok((acts, softmax_rows(&logits)))
    }
}

fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|z| (z - m).exp());
        let s = row.sum();
        row.mapv_inplace(|e| e / s);
    }
    out
}

/// Copies the stack's weights, biases and masks into logistic hidden
/// layers and attaches a Gaussian-initialized (std 0.01, zero-bias)
/// softmax layer of `n_classes` units.
pub fn to_mlp(stack: &DbnStack, n_classes: usize, seed: u64) -> Result<MlpNet> {
    if n_classes < 2 {
        return Err(Error::Domain("a classifier needs at least 2 classes".into()));
    }
    let hidden: Vec<MlpLayer> = stack
        .layers()
        .iter()
        .map(|l| MlpLayer {
            weights: l.params.weights.clone(),
            bias: l.params.hidden_bias.clone(),
            mask: l.mask.clone(),
        })
        .collect();
    let n_top = stack.layer_sizes().last().copied().expect("stack is nonempty");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 0.01).expect("valid std");
    let output = MlpLayer {
        weights: Array2::from_shape_fn((n_top, n_classes), |_| normal.sample(&mut rng)),
        bias: Array1::zeros(n_classes),
        mask: None,
    };
    Ok(MlpNet { hidden, output })
}

/// Supervised fine-tuning settings. `trials` independent runs (distinct
/// derived seeds for the output-layer re-init and the shuffles) yield
/// one test error each.
#[derive(Clone, Debug)]
pub struct FinetuneConfig {
    pub learning_rate: Schedule<f64>,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub trials: usize,
}

impl FinetuneConfig {
    /// lr 0.1 halved every 20 epochs, momentum 0.9, batches of 100,
    /// 100 epochs, single trial.
    pub fn new(seed: u64) -> Self {
        FinetuneConfig {
            learning_rate: Schedule::step_decay(0.1, 0.5, 20, 100),
            momentum: 0.9,
            batch_size: 100,
            epochs: 100,
            seed,
            trials: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.learning_rate.values().iter().any(|&lr| lr < 0.0 || !lr.is_finite()) {
            return Err(Error::Domain("learning rate must be nonnegative".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Domain("momentum must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Domain("batch size must be positive".into()));
        }
        if self.trials == 0 {
            return Err(Error::Domain("at least one trial is required".into()));
        }
        Ok(())
    }
}

fn checked_labels<'a>(split: &'a DatasetSplit, n_classes: usize, what: &str) -> Result<&'a [u32]> {
    let labels = split
        .labels()
        .ok_or_else(|| Error::Usage(format!("{what} split carries no labels")))?;
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= n_classes) {
        return Err(Error::Domain(format!(
            "label {bad} out of range for {n_classes} classes in {what} split"
        )));
    }
    Ok(labels)
}

/// Mean cross-entropy gradient step over one minibatch.
fn sgd_step(
    net: &mut MlpNet,
    vel: &mut [(Array2<f64>, Array1<f64>)],
    x: ArrayView2<f64>,
    labels: &[u32],
    lr: f64,
    momentum: f64,
) -> Result<()> {
    let n = x.nrows() as f64;
    let (acts, probs) = net.forward_cached(x)?;

    // d(loss)/d(logits) of the softmax cross-entropy, averaged.
    let mut delta = probs;
    for (r, &label) in labels.iter().enumerate() {
        delta[[r, label as usize]] -= 1.0;
    }
    delta /= n;

    // Walk output layer then hidden layers backwards.
    let depth = net.hidden.len();
    let mut layer_grads: Vec<(Array2<f64>, Array1<f64>)> = Vec::with_capacity(depth + 1);
    let g_w = acts[depth].t().dot(&delta);
    let g_b = delta.sum_axis(Axis(0));
    let mut upstream = delta.dot(&net.output.weights.t());
    layer_grads.push((g_w, g_b));

    for l in (0..depth).rev() {
        let a = &acts[l + 1];
        // σ'(z) expressed through the activation itself.
        let dz = upstream * a * &(1.0 - a);
        let mut g_w = acts[l].t().dot(&dz);
        if let Some(m) = &net.hidden[l].mask {
            m.zero_dropped(&mut g_w);
        }
        let g_b = dz.sum_axis(Axis(0));
        upstream = dz.dot(&net.hidden[l].weights.t());
        layer_grads.push((g_w, g_b));
    }
    layer_grads.reverse(); // hidden layers first, output last

    for (l, (g_w, g_b)) in layer_grads.iter().enumerate() {
        let (vw, vb) = &mut vel[l];
        ndarray::Zip::from(&mut *vw).and(g_w).for_each(|v, &g| *v = momentum * *v - lr * g);
        ndarray::Zip::from(&mut *vb).and(g_b).for_each(|v, &g| *v = momentum * *v - lr * g);
        let layer =
            if l < depth { &mut net.hidden[l] } else { &mut net.output };
        layer.weights += &*vw;
        layer.bias += &*vb;
        if let Some(m) = &layer.mask {
            m.zero_dropped(&mut layer.weights);
        }
    }
    Ok(())
}

fn finetune_single_trial(
    mlp: &MlpNet,
    train: &DatasetSplit,
    test: &DatasetSplit,
    config: &FinetuneConfig,
    trial: usize,
) -> Result<(MlpNet, f64)> {
    let n_classes = mlp.n_classes();
    let labels = checked_labels(train, n_classes, "training")?;
    let trial_seed = derive_seed(config.seed, trial as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);

    // Fresh softmax head per trial; pretrained hidden layers are shared.
    let mut net = mlp.clone();
    let normal = Normal::new(0.0, 0.01).expect("valid std");
    net.output.weights.mapv_inplace(|_| normal.sample(&mut rng));
    net.output.bias.fill(0.0);

    let mut vel: Vec<(Array2<f64>, Array1<f64>)> = net
        .hidden
        .iter()
        .map(|l| (Array2::zeros(l.weights.dim()), Array1::zeros(l.bias.len())))
        .chain(std::iter::once((
            Array2::zeros(net.output.weights.dim()),
            Array1::zeros(net.output.bias.len()),
        )))
        .collect();

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..config.epochs {
        let lr = config.learning_rate.at(epoch);
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let x = train.gather_f64(chunk);
            let batch_labels: Vec<u32> = chunk.iter().map(|&i| labels[i]).collect();
            sgd_step(&mut net, &mut vel, x.view(), &batch_labels, lr, config.momentum)?;
        }
    }
    let err = error_rate(&net, test)?;
    Ok((net, err))
}

/// Fine-tunes by minibatch cross-entropy SGD with momentum; masked
/// weights receive zero gradient and stay exactly zero. Runs
/// `config.trials` independent trials (parallel, deterministic per-trial
/// seeds) and returns the first trial's network together with every
/// trial's test error.
pub fn finetune(
    mlp: &MlpNet,
    train: &DatasetSplit,
    test: &DatasetSplit,
    config: &FinetuneConfig,
) -> Result<(MlpNet, Vec<f64>)> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Usage("fine-tuning needs a nonempty training split".into()));
    }
    checked_labels(train, mlp.n_classes(), "training")?;
    checked_labels(test, mlp.n_classes(), "test")?;

    let results: Vec<Result<(MlpNet, f64)>> = (0..config.trials)
        .into_par_iter()
        .map(|trial| finetune_single_trial(mlp, train, test, config, trial))
        .collect();

    let mut errors = Vec::with_capacity(config.trials);
    let mut first_net = None;
    for (trial, r) in results.into_iter().enumerate() {
        let (net, err) = r?;
        if trial == 0 {
            first_net = Some(net);
        }
        errors.push(err);
    }
    Ok((first_net.expect("at least one trial"), errors))
}

/// Fraction of misclassified examples under argmax prediction; ties pick
/// the lowest class index.
pub fn error_rate(mlp: &MlpNet, test: &DatasetSplit) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Usage("error rate of an empty split".into()));
    }
    let labels = checked_labels(test, mlp.n_classes(), "test")?;
    let mut wrong = 0usize;
    let chunk = 2048;
    let mut start = 0;
    while start < test.len() {
        let end = (start + chunk).min(test.len());
        let probs = mlp.forward(test.rows_f64(start..end).view())?;
        for (r, row) in probs.rows().into_iter().enumerate() {
            let mut best = 0usize;
            let mut best_p = row[0];
            for (c, &p) in row.iter().enumerate().skip(1) {
                if p > best_p {
                    best = c;
                    best_p = p;
                }
            }
            if best as u32 != labels[start + r] {
                wrong += 1;
            }
        }
        start = end;
    }
    Ok(wrong as f64 / test.len() as f64)
}
