//! Binary restricted Boltzmann machines: parameterization, energy,
//! conditionals, Gibbs sampling, and free energy.
//!
//! A machine couples `n_visible` binary units to `n_hidden` binary units
//! through a dense weight matrix; there are no intra-layer connections.
//! The score of a joint state is
//! `E(v,h) = -vᵀWh - aᵀv - bᵀh`, and all probabilities derive from it.

mod train;

pub use train::{
    cd_gradient, recon_cross_entropy, sgd_update, train_rbm, CdSchedule, GradientEstimate,
    Schedule, SgdHyper, TrainConfig, TrainingLog,
};

use crate::error::{Error, Result};
use crate::math::{logistic, softplus};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, RngExt};

/// Weights and biases of one machine. `weights` is `n_visible × n_hidden`,
/// entry `(i, j)` connecting visible unit `i` to hidden unit `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct RbmParams {
    pub weights: Array2<f64>,
    pub visible_bias: Array1<f64>,
    pub hidden_bias: Array1<f64>,
}

impl RbmParams {
    pub fn new(
        weights: Array2<f64>,
        visible_bias: Array1<f64>,
        hidden_bias: Array1<f64>,
    ) -> Result<Self> {
        if weights.nrows() == 0 || weights.ncols() == 0 {
            return Err(Error::Domain("layer sizes must be at least 1".into()));
        }
        if visible_bias.len() != weights.nrows() || hidden_bias.len() != weights.ncols() {
            return Err(Error::Shape(format!(
                "weights {}x{} with visible bias {} and hidden bias {}",
                weights.nrows(),
                weights.ncols(),
                visible_bias.len(),
                hidden_bias.len()
            )));
        }
        let p = RbmParams { weights, visible_bias, hidden_bias };
        p.check_finite()?;
        Ok(p)
    }

    pub fn zeros(n_visible: usize, n_hidden: usize) -> Result<Self> {
        if n_visible == 0 || n_hidden == 0 {
            return Err(Error::Domain("layer sizes must be at least 1".into()));
        }
        Ok(RbmParams {
            weights: Array2::zeros((n_visible, n_hidden)),
            visible_bias: Array1::zeros(n_visible),
            hidden_bias: Array1::zeros(n_hidden),
        })
    }

    /// Gaussian weights (mean 0, std 0.01), zero biases.
    pub fn random_init<R: Rng>(n_visible: usize, n_hidden: usize, rng: &mut R) -> Result<Self> {
        use rand_distr::{Distribution, Normal};
        if n_visible == 0 || n_hidden == 0 {
            return Err(Error::Domain("layer sizes must be at least 1".into()));
        }
        let normal = Normal::new(0.0, 0.01).expect("valid std");
        Ok(RbmParams {
            weights: Array2::from_shape_fn((n_visible, n_hidden), |_| normal.sample(rng)),
            visible_bias: Array1::zeros(n_visible),
            hidden_bias: Array1::zeros(n_hidden),
        })
    }

    pub fn n_visible(&self) -> usize {
        self.weights.nrows()
    }

    pub fn n_hidden(&self) -> usize {
        self.weights.ncols()
    }

    /// Same machine with the roles of the two layers swapped.
    pub fn transposed(&self) -> RbmParams {
        RbmParams {
            weights: self.weights.t().to_owned(),
            visible_bias: self.hidden_bias.clone(),
            hidden_bias: self.visible_bias.clone(),
        }
    }

    pub(crate) fn check_finite(&self) -> Result<()> {
        let ok = self.weights.iter().all(|w| w.is_finite())
            && self.visible_bias.iter().all(|a| a.is_finite())
            && self.hidden_bias.iter().all(|b| b.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Numeric("non-finite entry in RBM parameters".into()))
        }
    }
}

/// A vector whose entries are exactly 0.0 or 1.0. Stored as `f64` so it
/// can enter dot products without conversion.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryVector(Array1<f64>);

impl BinaryVector {
    pub fn new(bits: Array1<f64>) -> Result<Self> {
        if bits.iter().any(|&b| b != 0.0 && b != 1.0) {
            return Err(Error::Domain("entries of a binary vector must be 0 or 1".into()));
        }
        Ok(BinaryVector(bits))
    }

    pub fn from_bits(bits: &[u8]) -> Result<Self> {
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::Domain("entries of a binary vector must be 0 or 1".into()));
        }
        Ok(BinaryVector(bits.iter().map(|&b| b as f64).collect()))
    }

    pub fn zeros(len: usize) -> Self {
        BinaryVector(Array1::zeros(len))
    }

    pub fn ones(len: usize) -> Self {
        BinaryVector(Array1::ones(len))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_array(&self) -> &Array1<f64> {
        &self.0
    }

    pub fn view(&self) -> ArrayView1<'_, f64> {
        self.0.view()
    }
}

fn check_visible(params: &RbmParams, v: &BinaryVector) -> Result<()> {
    if v.len() != params.n_visible() {
        return Err(Error::Shape(format!(
            "visible vector of length {} against {} visible units",
            v.len(),
            params.n_visible()
        )));
    }
    Ok(())
}

fn check_hidden(params: &RbmParams, h: &BinaryVector) -> Result<()> {
    if h.len() != params.n_hidden() {
        return Err(Error::Shape(format!(
            "hidden vector of length {} against {} hidden units",
            h.len(),
            params.n_hidden()
        )));
    }
    Ok(())
}

/// Joint energy `-vᵀWh - aᵀv - bᵀh`.
pub fn energy(params: &RbmParams, v: &BinaryVector, h: &BinaryVector) -> Result<f64> {
    check_visible(params, v)?;
    check_hidden(params, h)?;
    let coupling = v.view().dot(&params.weights).dot(&h.view());
    Ok(-coupling - v.view().dot(&params.visible_bias) - h.view().dot(&params.hidden_bias))
}

/// `p(h_j = 1 | v)` for every hidden unit: `logistic(W_{·j}ᵀ v + b_j)`.
pub fn hidden_conditional(params: &RbmParams, v: &BinaryVector) -> Result<Array1<f64>> {
    check_visible(params, v)?;
    let mut x = v.view().dot(&params.weights);
    x += &params.hidden_bias;
    Ok(x.mapv(logistic))
}

/// `p(v_i = 1 | h)` for every visible unit: `logistic(W_{i·} h + a_i)`.
pub fn visible_conditional(params: &RbmParams, h: &BinaryVector) -> Result<Array1<f64>> {
    check_hidden(params, h)?;
    let mut x = params.weights.dot(&h.view());
    x += &params.visible_bias;
    Ok(x.mapv(logistic))
}

/// Draws each bit independently: bit `i` is 1 with probability `probs[i]`.
pub fn sample_bernoulli<R: Rng>(probs: &Array1<f64>, rng: &mut R) -> Result<BinaryVector> {
    if probs.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(Error::Domain("Bernoulli probability outside [0, 1]".into()));
    }
    let bits = probs.mapv(|p| if rng.random::<f64>() < p { 1.0 } else { 0.0 });
    Ok(BinaryVector(bits))
}

/// Runs `steps` alternations `h ← p(h|v)`, `v ← p(v|h)` starting from `v0`
/// and returns the final visible sample together with `p(h|v_k)`.
pub fn gibbs_chain<R: Rng>(
    params: &RbmParams,
    v0: &BinaryVector,
    steps: u32,
    rng: &mut R,
) -> Result<(BinaryVector, Array1<f64>)> {
    if steps == 0 {
        return Err(Error::Domain("gibbs chain needs at least one step".into()));
    }
    check_visible(params, v0)?;
    let mut v = v0.clone();
    for _ in 0..steps {
        let ph = hidden_conditional(params, &v)?;
        let h = sample_bernoulli(&ph, rng)?;
        let pv = visible_conditional(params, &h)?;
        v = sample_bernoulli(&pv, rng)?;
    }
    let ph = hidden_conditional(params, &v)?;
    Ok((v, ph))
}

/// Free energy `F(v) = -aᵀv - Σ_j softplus(W_{·j}ᵀ v + b_j)`, so that
/// `log p(v) = -F(v) - log Z`.
pub fn free_energy(params: &RbmParams, v: &BinaryVector) -> Result<f64> {
    check_visible(params, v)?;
    Ok(free_energy_raw(params, v.view()))
}

pub(crate) fn free_energy_raw(params: &RbmParams, v: ArrayView1<f64>) -> f64 {
    let mut x = v.dot(&params.weights);
    x += &params.hidden_bias;
    -v.dot(&params.visible_bias) - x.iter().map(|&t| softplus(t)).sum::<f64>()
}

/// Free energies of every row of a binary matrix.
pub(crate) fn free_energies(params: &RbmParams, rows: ArrayView2<f64>) -> Array1<f64> {
    let mut x = rows.dot(&params.weights);
    for mut row in x.rows_mut() {
        row += &params.hidden_bias;
    }
    let softplus_sums = x.map_axis(Axis(1), |r| r.iter().map(|&t| softplus(t)).sum::<f64>());
    -(rows.dot(&params.visible_bias)) - softplus_sums
}
