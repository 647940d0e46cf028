//! The controller network: a stack of dense layers mapping an inventory state to
//! integer orders.

use serde::{Deserialize, Serialize};

use super::tape::{celu, Activation, Tape, Var};
use crate::demand::DemandModel;
use crate::dynamics::{Action, CostParams, InventoryState};
use crate::error::{Error, Result};
use crate::rng::SimRng;
use crate::sim::{Observation, OrderPolicy};

pub const FORMAT_VERSION: u32 = 1;

/// CELU widths of the default synthetic-demand architecture. The last two units are
/// the raw orders.
pub const DEFAULT_HIDDEN: [usize; 7] = [128, 64, 32, 16, 8, 4, 2];

/// Which state coordinates the network reads and which orders it emits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Features {
    /// `(I, Q_r, Q_e)`; emits `(q_r, q_e)`.
    Full,
    /// `(I, Q_e)`; emits one expedited order. Single sourcing.
    ExpeditedOnly,
    /// `(I + Q_r[0], Q_r[1..], Q_e, μ_t, σ_t)`; emits `(q_r, q_e)`. For time-varying demand.
    ReducedWithMoments,
}

impl Features {
    pub fn input_dim(self, params: &CostParams) -> usize {
        let (lr, le) = (params.regular_lead_time, params.expedited_lead_time);
        match self {
            Features::Full => 1 + lr + le,
            Features::ExpeditedOnly => 1 + le,
            Features::ReducedWithMoments => lr + le + 2,
        }
    }

    pub fn output_dim(self) -> usize {
        match self {
            Features::ExpeditedOnly => 1,
            _ => 2,
        }
    }

    fn check(self, params: &CostParams) -> Result<()> {
        if self == Features::ReducedWithMoments && params.regular_lead_time == 0 {
            return Err(Error::Unsupported("reduced features need a positive regular lead time".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerActivation {
    Celu,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs x inputs`.
    pub weights: Vec<f64>,
    pub bias: Option<Vec<f64>>,
    pub activation: LayerActivation,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize, bias: bool, activation: LayerActivation) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: bias.then(|| vec![0.0; outputs]),
            activation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Network {
    pub format_version: u32,
    pub features: Features,
    pub alpha: f64,
    /// Learnable starting net inventory, used through its floored positive part.
    pub init_inventory: f64,
    /// Inputs are divided by this before the first layer.
    #[serde(default = "one")]
    pub input_scale: f64,
    /// Raw outputs are multiplied by this before rounding to orders.
    #[serde(default = "one")]
    pub output_scale: f64,
    pub layers: Vec<Layer>,
}

fn one() -> f64 {
    1.0
}

impl Network {
    /// Zero-initialized network with CELU hidden layers of the given widths, biased
    /// throughout, and an identity output layer.
    pub fn new(features: Features, params: &CostParams, hidden: &[usize]) -> Result<Self> {
        Self::stack(features, params, hidden, LayerActivation::Identity)
    }

    /// Like [`Network::new`] with a chosen activation on the output layer.
    pub fn stack(features: Features, params: &CostParams, hidden: &[usize], output: LayerActivation) -> Result<Self> {
        features.check(params)?;
        let mut dims = vec![features.input_dim(params)];
        dims.extend_from_slice(hidden);
        dims.push(features.output_dim());
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i + 2 == dims.len() { output } else { LayerActivation::Celu };
                Layer::zeros(w[0], w[1], true, act)
            })
            .collect();
        Ok(Self {
            format_version: FORMAT_VERSION,
            features,
            alpha: 1.0,
            init_inventory: 0.0,
            input_scale: 1.0,
            output_scale: 1.0,
            layers,
        })
    }

    /// The default deep architecture with uniform fan-in initialization. The final CELU
    /// pair feeds the rounding directly. Outputs are scaled by the largest demand and
    /// inputs by the largest demand over a regular lead time plus one period.
    pub fn default_for(params: &CostParams, model: &DemandModel, rng: &mut SimRng) -> Result<Self> {
        let (last, hidden) = DEFAULT_HIDDEN.split_last().expect("non-empty");
        debug_assert_eq!(*last, Features::Full.output_dim());
        let mut net = Self::stack(Features::Full, params, hidden, LayerActivation::Celu)?;
        net.init_weights(rng);
        let d_max = model.max_demand()?.max(1) as f64;
        net.output_scale = d_max;
        net.input_scale = d_max * (params.regular_lead_time + 1) as f64;
        Ok(net)
    }

    /// Every weight and bias drawn from `U(−1/√fan_in, 1/√fan_in)`.
    pub fn init_weights(&mut self, rng: &mut SimRng) {
        for layer in &mut self.layers {
            let bound = 1.0 / (layer.inputs as f64).sqrt();
            for w in layer.weights.iter_mut().chain(layer.bias.iter_mut().flatten()) {
                *w = bound * (2.0 * rng.uniform() - 1.0);
            }
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.inputs)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    /// Checks internal consistency and, if given, fit to an instance.
    pub fn validate(&self, params: Option<&CostParams>) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported network format version {}", self.format_version)));
        }
        if self.layers.is_empty() {
            return Err(Error::Format("network has no layers".into()));
        }
        if !(self.alpha > 0.0) || !(self.input_scale > 0.0) || !(self.output_scale > 0.0) {
            return Err(Error::InvalidParams("alpha and scales must be positive".into()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.weights.len() != layer.inputs * layer.outputs {
                return Err(Error::DimensionMismatch { expected: layer.inputs * layer.outputs, got: layer.weights.len() });
            }
            if let Some(b) = &layer.bias {
                if b.len() != layer.outputs {
                    return Err(Error::DimensionMismatch { expected: layer.outputs, got: b.len() });
                }
            }
            if i > 0 && self.layers[i - 1].outputs != layer.inputs {
                return Err(Error::DimensionMismatch { expected: self.layers[i - 1].outputs, got: layer.inputs });
            }
        }
        let finite = self.init_inventory.is_finite()
            && self.layers.iter().all(|l| l.weights.iter().chain(l.bias.iter().flatten()).all(|w| w.is_finite()));
        if !finite {
            return Err(Error::NonFinite("network parameters".into()));
        }
        if self.output_dim() != self.features.output_dim() {
            return Err(Error::DimensionMismatch { expected: self.features.output_dim(), got: self.output_dim() });
        }
        if let Some(params) = params {
            self.features.check(params)?;
            let want = self.features.input_dim(params);
            if self.input_dim() != want {
                return Err(Error::DimensionMismatch { expected: want, got: self.input_dim() });
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let net: Network = serde_json::from_str(text).map_err(|e| Error::Format(format!("network: {e}")))?;
        net.validate(None)?;
        Ok(net)
    }

    /// Initial net inventory as it enters the dynamics.
    pub fn initial_net(&self) -> f64 {
        self.init_inventory.max(0.0).floor()
    }

    fn activation(&self, layer: &Layer) -> Activation {
        match layer.activation {
            LayerActivation::Celu => Activation::Celu { alpha: self.alpha },
            LayerActivation::Identity => Activation::Identity,
        }
    }

    /// Append one feature row for `state` to `out`.
    pub fn write_features(&self, state: &InventoryState, mean: f64, sd: f64, out: &mut Vec<f64>) {
        let s = 1.0 / self.input_scale;
        let qr = state.regular_pipeline.iter().map(|&q| q as f64 * s);
        let qe = state.expedited_pipeline.iter().map(|&q| q as f64 * s);
        match self.features {
            Features::Full => {
                out.push(state.net * s);
                out.extend(qr);
                out.extend(qe);
            }
            Features::ExpeditedOnly => {
                out.push(state.net * s);
                out.extend(qe);
            }
            Features::ReducedWithMoments => {
                let first = state.regular_pipeline.first().copied().unwrap_or(0) as f64;
                out.push((state.net + first) * s);
                out.extend(qr.skip(1));
                out.extend(qe);
                out.push(mean * s);
                out.push(sd * s);
            }
        }
    }

    /// Raw (pre-rounding, post-scaling) outputs for `rows` feature rows, off-tape.
    pub fn predict(&self, features: &[f64], rows: usize) -> Vec<f64> {
        let mut x = features.to_vec();
        debug_assert_eq!(x.len(), rows * self.input_dim());
        for layer in &self.layers {
            let (k, out) = (layer.inputs, layer.outputs);
            let mut y = vec![0.0; rows * out];
            if let Some(b) = &layer.bias {
                for row in y.chunks_exact_mut(out) {
                    row.copy_from_slice(b);
                }
            }
            let beta = if layer.bias.is_some() { 1.0 } else { 0.0 };
            unsafe {
                matrixmultiply::dgemm(
                    rows,
                    k,
                    out,
                    1.0,
                    x.as_ptr(),
                    k as isize,
                    1,
                    layer.weights.as_ptr(),
                    1,
                    k as isize,
                    beta,
                    y.as_mut_ptr(),
                    out as isize,
                    1,
                );
            }
            if layer.activation == LayerActivation::Celu {
                for v in &mut y {
                    *v = celu(*v, self.alpha);
                }
            }
            x = y;
        }
        if self.output_scale != 1.0 {
            for v in &mut x {
                *v *= self.output_scale;
            }
        }
        x
    }

    /// Integer orders from raw outputs: floor of the positive part.
    fn decode(&self, raw: &[f64]) -> Action {
        let q = |y: f64| y.max(0.0).floor() as u64;
        match self.features {
            Features::ExpeditedOnly => Action::new(0, q(raw[0])),
            _ => Action::new(q(raw[0]), q(raw[1])),
        }
    }

    /// Orders for one state.
    pub fn act(&self, state: &InventoryState, mean: f64, sd: f64) -> Action {
        let mut x = Vec::with_capacity(self.input_dim());
        self.write_features(state, mean, sd, &mut x);
        self.decode(&self.predict(&x, 1))
    }

    /// Record the forward pass for a `rows x input_dim` feature node. `weights` holds the
    /// tape leaves from [`Network::leaves`]. Returns the scaled raw output node.
    pub fn forward_tape(&self, tape: &mut Tape, weights: &[(Var, Option<Var>)], features: Var) -> Var {
        let mut x = features;
        for (layer, &(w, b)) in self.layers.iter().zip(weights) {
            x = tape.linear(x, w, b, self.activation(layer));
        }
        if self.output_scale != 1.0 {
            x = tape.scale(x, self.output_scale);
        }
        x
    }

    /// Put every weight matrix and bias on the tape as leaves.
    pub fn leaves(&self, tape: &mut Tape) -> Vec<(Var, Option<Var>)> {
        self.layers
            .iter()
            .map(|l| {
                let w = tape.leaf(l.outputs, l.inputs, l.weights.clone());
                let b = l.bias.as_ref().map(|b| tape.leaf(1, l.outputs, b.clone()));
                (w, b)
            })
            .collect()
    }

    /// Mutable views of all layer parameters in a fixed order: each layer's weights,
    /// then its bias.
    pub(crate) fn parameters_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            out.push(&mut layer.weights);
            if let Some(b) = layer.bias.as_mut() {
                out.push(b);
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.as_ref().map_or(0, Vec::len)).sum()
    }
}

impl OrderPolicy for Network {
    fn initial_state(&self, params: &CostParams) -> InventoryState {
        InventoryState::with_net(params, self.initial_net())
    }

    fn order(&self, obs: &Observation<'_>) -> Action {
        self.act(obs.state, obs.demand_mean, obs.demand_sd)
    }

    fn order_batch(&self, obs: &[Observation<'_>], out: &mut Vec<Action>) {
        let mut x = Vec::with_capacity(obs.len() * self.input_dim());
        for o in obs {
            self.write_features(o.state, o.demand_mean, o.demand_sd, &mut x);
        }
        let raw = self.predict(&x, obs.len());
        out.clear();
        out.extend(raw.chunks_exact(self.output_dim()).map(|r| self.decode(r)));
    }
}
