//! Layered predictive coding network: predictions, prediction errors, free
//! energy and the descent directions of activities and weights.
//!
//! Layer 0 is the observation layer and the last layer is the top latent.
//! Every layer except the top is predicted from the layer directly above it:
//!
//! ```text
//! eps_l = mu_l - f_l(theta_l . mu_{l+1})
//! F     = sum_l sum_i [ eps_{l,i}^2 / sigma_{l,i} + ln(2 pi sigma_{l,i}) ]
//! ```
//!
//! Gradients are returned as descent directions of `F / 2`, the Gaussian
//! negative log-likelihood. With that scaling the precision-weighted error
//! `eps / sigma` enters every update without a factor of two and the variance
//! of the score equals the layer precision.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PcnError, Result};

/// Lower bound applied to every variance after each update.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Elementwise nonlinearity applied to a layer's top-down prediction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Identity,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative evaluated at the pre-activation `x`.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
        }
    }
}

/// Whether gradients divide errors by the learned variance or treat it as 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Weighting {
    Precision,
    Unit,
}

/// Multiplicative mask and additive offset applied to a top-down prediction.
///
/// The mask realizes prediction dropout, the offset additive prediction noise.
/// Both are drawn by the caller and stay fixed until replaced.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Perturbation {
    pub mask: Option<Array1<f64>>,
    pub offset: Option<Array1<f64>>,
}

impl Perturbation {
    pub fn is_empty(&self) -> bool {
        self.mask.is_none() && self.offset.is_none()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerState {
    pub mu: Array1<f64>,
    /// Prediction error from the last [`PcNetwork::compute_errors`]. Empty for
    /// the top layer.
    pub epsilon: Array1<f64>,
    /// Diagonal error variance. Empty for the top layer.
    pub sigma: Array1<f64>,
    /// Maps the activities above to this layer's prediction
    /// (`width_this x width_above`). `None` for the top layer.
    pub theta: Option<Array2<f64>>,
    pub activation: Activation,
    pub clamped: bool,
    pub perturbation: Perturbation,
    pre: Array1<f64>,
}

impl LayerState {
    /// A layer predicted from the layer above through `theta`.
    pub fn predicted(mu: Array1<f64>, theta: Array2<f64>, activation: Activation) -> Self {
        let n = mu.len();
        Self {
            epsilon: Array1::zeros(n),
            sigma: Array1::ones(n),
            pre: Array1::zeros(n),
            mu,
            theta: Some(theta),
            activation,
            clamped: false,
            perturbation: Perturbation::default(),
        }
    }

    /// The top layer: a latent (or label) with no incoming prediction.
    pub fn top(mu: Array1<f64>) -> Self {
        Self {
            mu,
            epsilon: Array1::zeros(0),
            sigma: Array1::zeros(0),
            theta: None,
            activation: Activation::Identity,
            clamped: false,
            perturbation: Perturbation::default(),
            pre: Array1::zeros(0),
        }
    }

    pub fn width(&self) -> usize {
        self.mu.len()
    }

    pub fn is_top(&self) -> bool {
        self.theta.is_none()
    }

    /// Pre-activation `theta . mu_above` cached by the last error computation.
    pub fn pre_activation(&self) -> &Array1<f64> {
        &self.pre
    }

    /// `eps / sigma`, or `eps` itself under unit weighting.
    pub fn weighted_error(&self, weighting: Weighting) -> Array1<f64> {
        match weighting {
            Weighting::Precision => &self.epsilon / &self.sigma,
            Weighting::Unit => self.epsilon.clone(),
        }
    }

    /// Error signal sent upward: weighted error times `f'(pre)` and the mask.
    fn upward_signal(&self, weighting: Weighting) -> Array1<f64> {
        let mut signal = self.weighted_error(weighting);
        let act = self.activation;
        Zip::from(&mut signal)
            .and(&self.pre)
            .for_each(|s, &a| *s *= act.derivative(a));
        if let Some(mask) = &self.perturbation.mask {
            signal *= mask;
        }
        signal
    }

    /// Prediction of this layer from `above`, honoring the perturbation.
    /// Returns `(pre_activation, prediction)`.
    fn predict_from(&self, above: &Array1<f64>) -> Result<(Array1<f64>, Array1<f64>)> {
        let theta = self
            .theta
            .as_ref()
            .ok_or_else(PcNetwork::no_theta_error)?;
        let pre = checked_dot(theta, above)?;
        let mut pred = pre.mapv(|x| self.activation.apply(x));
        if let Some(mask) = &self.perturbation.mask {
            check_len("prediction mask", pred.len(), mask.len())?;
            pred *= mask;
        }
        if let Some(offset) = &self.perturbation.offset {
            check_len("prediction offset", pred.len(), offset.len())?;
            pred += offset;
        }
        Ok((pre, pred))
    }
}

/// `f(theta . mu_above)` applied elementwise.
pub fn predict(
    layer_above_mu: &Array1<f64>,
    theta: &Array2<f64>,
    activation: Activation,
) -> Result<Array1<f64>> {
    Ok(checked_dot(theta, layer_above_mu)?.mapv(|x| activation.apply(x)))
}

fn checked_dot(theta: &Array2<f64>, v: &Array1<f64>) -> Result<Array1<f64>> {
    if theta.ncols() != v.len() {
        return Err(PcnError::ShapeMismatch {
            context: "predict: theta columns vs activities above",
            expected: vec![theta.nrows(), theta.ncols()],
            actual: vec![v.len()],
        });
    }
    Ok(theta.dot(v))
}

fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(PcnError::ShapeMismatch {
            context,
            expected: vec![expected],
            actual: vec![actual],
        });
    }
    Ok(())
}

/// `theta^T v`, accumulated row by row so every pass runs over contiguous
/// memory.
pub fn transpose_dot(theta: &Array2<f64>, v: &Array1<f64>) -> Array1<f64> {
    let mut out = Array1::zeros(theta.ncols());
    for (row, &vi) in theta.rows().into_iter().zip(v) {
        if vi != 0.0 {
            out.scaled_add(vi, &row);
        }
    }
    out
}

/// Outer product `a b^T`.
pub fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let a2 = a.view().insert_axis(Axis(1));
    let b2 = b.view().insert_axis(Axis(0));
    a2.dot(&b2)
}

/// Read-only view of a layer and its direct neighbors.
///
/// Activity and weight gradients are computed from this view only, so they
/// cannot depend on state further than one layer away.
#[derive(Clone, Copy, Debug)]
pub struct Neighborhood<'a> {
    pub below: Option<&'a LayerState>,
    pub this: &'a LayerState,
    pub above: Option<&'a LayerState>,
}

impl Neighborhood<'_> {
    /// Descent direction `-dF/dmu` (of `F/2`) for the center layer.
    pub fn activity_gradient(&self, weighting: Weighting) -> Array1<f64> {
        let mut grad = Array1::zeros(self.this.width());
        if let Some(below) = self.below {
            let theta = below
                .theta
                .as_ref()
                .expect("a layer with a layer above it always has theta");
            grad += &transpose_dot(theta, &below.upward_signal(weighting));
        }
        if !self.this.is_top() {
            grad -= &self.this.weighted_error(weighting);
        }
        grad
    }

    /// Diagonal of the Gauss-Newton curvature of `F/2` in the center layer's
    /// activities, which for linear predictions is the diagonal of the
    /// activity Fisher information: `1/sigma` of the layer itself plus
    /// `sum_i theta_ij^2 f'_i^2 / sigma_i` over the layer below.
    pub fn activity_curvature(&self, weighting: Weighting) -> Array1<f64> {
        let mut diag = if self.this.is_top() {
            Array1::zeros(self.this.width())
        } else {
            match weighting {
                Weighting::Precision => self.this.sigma.mapv(f64::recip),
                Weighting::Unit => Array1::ones(self.this.width()),
            }
        };
        if let Some(below) = self.below {
            let theta = below
                .theta
                .as_ref()
                .expect("a layer with a layer above it always has theta");
            let act = below.activation;
            for (i, row) in theta.rows().into_iter().enumerate() {
                let mut d = act.derivative(below.pre[i]);
                if let Some(mask) = &below.perturbation.mask {
                    d *= mask[i];
                }
                let w = match weighting {
                    Weighting::Precision => d * d / below.sigma[i],
                    Weighting::Unit => d * d,
                };
                if w != 0.0 {
                    Zip::from(&mut diag).and(&row).for_each(|o, &t| *o += w * t * t);
                }
            }
        }
        diag
    }

    /// Descent direction `-dF/dtheta` (of `F/2`) for the center layer's weights.
    pub fn weight_gradient(&self, weighting: Weighting) -> Result<Array2<f64>> {
        let above = self.above.ok_or_else(PcNetwork::no_theta_error)?;
        Ok(outer(&self.this.upward_signal(weighting), &above.mu))
    }

    /// Adds `scale * (descent direction)` to the center layer's weights
    /// without materializing the gradient matrix.
    pub(crate) fn weight_gradient_into(
        &self,
        weighting: Weighting,
        row_scale: Option<&Array1<f64>>,
        scale: f64,
        theta: &mut Array2<f64>,
    ) {
        let above = self.above.expect("weights exist only below another layer");
        let signal = self.this.upward_signal(weighting);
        for (i, mut row) in theta.rows_mut().into_iter().enumerate() {
            let r = row_scale.map_or(1.0, |s| s[i]);
            let coeff = scale * r * signal[i];
            if coeff != 0.0 {
                row.scaled_add(coeff, &above.mu);
            }
        }
    }
}

/// Ordered stack of layers, index 0 at the bottom.
#[derive(Clone, Debug, PartialEq)]
pub struct PcNetwork {
    pub layers: Vec<LayerState>,
}

impl PcNetwork {
    /// Builds a network with weights drawn uniformly from
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, the top latent at zero and every
    /// other layer initialized by one top-down pass.
    ///
    /// `activations[l]` is the nonlinearity of the prediction of layer `l`, so
    /// there is one fewer activation than widths.
    pub fn new<R: Rng + ?Sized>(
        widths: &[usize],
        activations: &[Activation],
        rng: &mut R,
    ) -> Result<Self> {
        if widths.len() < 2 {
            return Err(PcnError::InvalidNetwork(format!(
                "need at least 2 layers, got {}",
                widths.len()
            )));
        }
        if activations.len() != widths.len() - 1 {
            return Err(PcnError::InvalidNetwork(format!(
                "{} layers need {} activations, got {}",
                widths.len(),
                widths.len() - 1,
                activations.len()
            )));
        }
        if let Some(pos) = widths.iter().position(|&w| w == 0) {
            return Err(PcnError::InvalidNetwork(format!("layer {pos} has width 0")));
        }
        let depth = widths.len();
        let mut layers = Vec::with_capacity(depth);
        for l in 0..depth - 1 {
            let fan_in = widths[l + 1];
            let bound = 1.0 / (fan_in as f64).sqrt();
            let theta =
                Array2::from_shape_fn((widths[l], fan_in), |_| rng.random_range(-bound..bound));
            layers.push(LayerState::predicted(
                Array1::zeros(widths[l]),
                theta,
                activations[l],
            ));
        }
        layers.push(LayerState::top(Array1::zeros(widths[depth - 1])));
        let mut net = Self { layers };
        net.initialize_top_down()?;
        Ok(net)
    }

    /// Wraps hand-built layers after checking the shape invariants.
    pub fn from_layers(layers: Vec<LayerState>) -> Result<Self> {
        let net = Self { layers };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        let depth = self.layers.len();
        if depth < 2 {
            return Err(PcnError::InvalidNetwork(format!(
                "need at least 2 layers, got {depth}"
            )));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            let n = layer.width();
            if l + 1 == depth {
                if layer.theta.is_some() {
                    return Err(PcnError::InvalidNetwork(
                        "the top layer must not have incoming weights".into(),
                    ));
                }
                continue;
            }
            let theta = layer.theta.as_ref().ok_or_else(|| {
                PcnError::InvalidNetwork(format!("layer {l} is missing its weights"))
            })?;
            let above = self.layers[l + 1].width();
            if theta.dim() != (n, above) {
                return Err(PcnError::ShapeMismatch {
                    context: "layer weights",
                    expected: vec![n, above],
                    actual: vec![theta.nrows(), theta.ncols()],
                });
            }
            check_len("layer epsilon", n, layer.epsilon.len())?;
            check_len("layer sigma", n, layer.sigma.len())?;
            if let Some(i) = layer.sigma.iter().position(|&s| !(s >= SIGMA_FLOOR)) {
                return Err(PcnError::InvalidNetwork(format!(
                    "layer {l} unit {i}: sigma below the floor {SIGMA_FLOOR}"
                )));
            }
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn top_index(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn widths(&self) -> Vec<usize> {
        self.layers.iter().map(LayerState::width).collect()
    }

    pub fn layer(&self, l: usize) -> Result<&LayerState> {
        let depth = self.depth();
        self.layers
            .get(l)
            .ok_or(PcnError::LayerOutOfRange { index: l, depth })
    }

    pub fn layer_mut(&mut self, l: usize) -> Result<&mut LayerState> {
        let depth = self.depth();
        self.layers
            .get_mut(l)
            .ok_or(PcnError::LayerOutOfRange { index: l, depth })
    }

    /// Pins layer `l` to `values`.
    pub fn clamp(&mut self, l: usize, values: &Array1<f64>) -> Result<()> {
        let layer = self.layer_mut(l)?;
        check_len("clamped values", layer.width(), values.len())?;
        layer.mu.assign(values);
        layer.clamped = true;
        Ok(())
    }

    pub fn release(&mut self, l: usize) -> Result<()> {
        self.layer_mut(l)?.clamped = false;
        Ok(())
    }

    /// Sets every unclamped non-top layer to its top-down prediction, top first.
    pub fn initialize_top_down(&mut self) -> Result<()> {
        for l in (0..self.top_index()).rev() {
            if self.layers[l].clamped {
                continue;
            }
            let (lower, upper) = self.layers.split_at_mut(l + 1);
            let (pre, pred) = lower[l].predict_from(&upper[0].mu)?;
            lower[l].pre = pre;
            lower[l].mu = pred;
        }
        Ok(())
    }

    /// Current (perturbed) top-down prediction of layer `l`.
    pub fn prediction(&self, l: usize) -> Result<Array1<f64>> {
        let layer = self.layer(l)?;
        if layer.is_top() {
            return Err(Self::no_theta_error());
        }
        Ok(layer.predict_from(&self.layers[l + 1].mu)?.1)
    }

    /// Recomputes `eps_l = mu_l - prediction_l` for every predicted layer,
    /// storing the errors in the layers and returning a copy. The top layer
    /// yields an empty vector.
    pub fn compute_errors(&mut self) -> Result<Vec<Array1<f64>>> {
        let depth = self.depth();
        for l in 0..depth - 1 {
            let (lower, upper) = self.layers.split_at_mut(l + 1);
            let layer = &mut lower[l];
            let (pre, pred) = layer.predict_from(&upper[0].mu)?;
            layer.epsilon = &layer.mu - &pred;
            layer.pre = pre;
        }
        Ok(self.layers.iter().map(|l| l.epsilon.clone()).collect())
    }

    /// `sum_l sum_i eps^2 / sigma + ln(2 pi sigma)` over the stored errors.
    pub fn free_energy(&self) -> Result<f64> {
        let mut total = 0.0;
        for (l, layer) in self.layers.iter().enumerate() {
            for (i, (&e, &s)) in layer.epsilon.iter().zip(&layer.sigma).enumerate() {
                let term = e * e / s + (2.0 * PI * s).ln();
                if !term.is_finite() {
                    return Err(PcnError::NonFinite { layer: l, unit: i });
                }
                total += term;
            }
        }
        Ok(total)
    }

    pub fn neighborhood(&self, l: usize) -> Result<Neighborhood<'_>> {
        let this = self.layer(l)?;
        Ok(Neighborhood {
            below: l.checked_sub(1).map(|b| &self.layers[b]),
            this,
            above: self.layers.get(l + 1),
        })
    }

    /// Precision-weighted descent direction for the activities of layer `l`.
    pub fn activity_gradient(&self, l: usize) -> Result<Array1<f64>> {
        self.activity_gradient_with(l, Weighting::Precision)
    }

    pub fn activity_gradient_with(&self, l: usize, weighting: Weighting) -> Result<Array1<f64>> {
        let hood = self.neighborhood(l)?;
        if hood.this.clamped {
            return Err(PcnError::ClampedLayer(l));
        }
        Ok(hood.activity_gradient(weighting))
    }

    /// Precision-weighted descent direction for the weights of layer `l`.
    pub fn weight_gradient(&self, l: usize) -> Result<Array2<f64>> {
        self.weight_gradient_with(l, Weighting::Precision)
    }

    pub fn weight_gradient_with(&self, l: usize, weighting: Weighting) -> Result<Array2<f64>> {
        self.neighborhood(l)?.weight_gradient(weighting)
    }

    /// Drops all dropout masks and prediction offsets.
    pub fn clear_perturbations(&mut self) {
        for layer in &mut self.layers {
            layer.perturbation = Perturbation::default();
        }
    }

    /// Flattened weights of all layers, bottom first, row-major.
    pub fn weights_flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .filter_map(|l| l.theta.as_ref())
            .flat_map(|t| t.iter().copied())
            .collect()
    }

    fn no_theta_error() -> PcnError {
        PcnError::InvalidArgument("the top layer has no incoming prediction or weights".into())
    }
}
