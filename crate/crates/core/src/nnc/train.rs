//! Backpropagation through time: simulate a minibatch of trajectories on the tape,
//! differentiate the average cost, take an RMSprop step, repeat.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::network::{Features, Network};
use super::rmsprop::{rmsprop_step, OptimizerState};
use super::tape::{Tape, Var};
use crate::demand::DemandModel;
use crate::dynamics::CostParams;
use crate::error::{Error, Result};
use crate::rng::SimRng;

/// Learning rate used from some point of training on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrStage {
    pub learning_rate: f64,
    /// Switch at this epoch...
    #[serde(default)]
    pub after_epoch: Option<usize>,
    /// ...or once the epoch loss first drops below this, whichever comes first.
    #[serde(default)]
    pub below_loss: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    /// Periods per simulated trajectory.
    pub horizon: usize,
    /// Trajectories per epoch.
    pub batch_size: usize,
    pub discount: f64,
    pub learning_rate: f64,
    pub init_inventory_rate: f64,
    pub rms_alpha: f64,
    pub rms_eps: f64,
    pub max_epochs: usize,
    pub seed: u64,
    pub schedule: Option<LrStage>,
    /// Stop early once the best loss is at or below this.
    pub target_loss: Option<f64>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            horizon: 100,
            batch_size: 512,
            discount: 1.0,
            learning_rate: 3e-3,
            init_inventory_rate: 0.1,
            rms_alpha: 0.99,
            rms_eps: 1e-8,
            max_epochs: 5000,
            seed: 0,
            schedule: None,
            target_loss: None,
        }
    }
}

impl TrainingConfig {
    /// Training horizon used for the synthetic instances with regular lead time `lr`.
    pub fn horizon_for_lead_time(lr: usize) -> usize {
        match lr {
            0..=2 => 100,
            3 => 150,
            _ => 200,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.batch_size == 0 {
            return Err(Error::InvalidParams("horizon and batch size must be positive".into()));
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return Err(Error::InvalidParams(format!("discount {} outside (0, 1]", self.discount)));
        }
        let rates = [self.learning_rate, self.schedule.map_or(1.0, |s| s.learning_rate)];
        if rates.iter().any(|r| !(*r > 0.0 && r.is_finite())) || !(self.init_inventory_rate >= 0.0) {
            return Err(Error::InvalidParams("learning rates must be positive and finite".into()));
        }
        if !(self.rms_alpha > 0.0 && self.rms_alpha < 1.0) || !(self.rms_eps > 0.0) {
            return Err(Error::InvalidParams("RMSprop smoothing must lie in (0, 1), epsilon positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub best_loss: f64,
    pub best_epoch: usize,
    pub network: Network,
    /// Loss of every epoch, measured before that epoch's update.
    pub losses: Vec<f64>,
}

/// Where the demand paths of an epoch come from.
#[derive(Debug, Clone, Copy)]
enum Paths<'a> {
    /// Fresh draws every epoch.
    Sampled,
    /// The same paths every epoch.
    Fixed(&'a [Vec<f64>]),
}

/// Train `net` on fresh demand paths each epoch and return the best parameters seen.
pub fn train(params: &CostParams, model: &DemandModel, net: &Network, cfg: &TrainingConfig) -> Result<TrainOutcome> {
    fit(params, model, net, cfg, Paths::Sampled)
}

/// Train on a fixed set of demand paths (each `cfg.horizon` long). The minibatch is the
/// set of paths; `cfg.batch_size` is ignored.
pub fn train_on_paths(
    params: &CostParams,
    model: &DemandModel,
    net: &Network,
    cfg: &TrainingConfig,
    paths: &[Vec<f64>],
) -> Result<TrainOutcome> {
    if paths.is_empty() {
        return Err(Error::InvalidParams("no training paths".into()));
    }
    if let Some(p) = paths.iter().find(|p| p.len() != cfg.horizon) {
        return Err(Error::DimensionMismatch { expected: cfg.horizon, got: p.len() });
    }
    fit(params, model, net, cfg, Paths::Fixed(paths))
}

/// Demand paths for one epoch: path `k` draws from stream `k` of a seed keyed by the epoch.
pub fn sample_paths(model: &DemandModel, horizon: usize, count: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<f64>>> {
    (0..count)
        .map(|k| {
            let mut rng = SimRng::keyed(seed, epoch, k as u64);
            (0..horizon).map(|t| model.sample(t, &mut rng)).collect()
        })
        .collect()
}

fn fit(params: &CostParams, model: &DemandModel, net: &Network, cfg: &TrainingConfig, paths: Paths<'_>) -> Result<TrainOutcome> {
    params.validate()?;
    model.validate()?;
    cfg.validate()?;
    net.validate(Some(params))?;
    if let Some(h) = model.horizon() {
        if cfg.horizon > h {
            return Err(Error::OutOfHorizon { period: cfg.horizon - 1, horizon: h });
        }
    }
    let moments = (0..cfg.horizon).map(|t| model.moments(t)).collect::<Result<Vec<_>>>()?;

    let mut net = net.clone();
    let mut states: Vec<OptimizerState> =
        net.parameters_mut().iter().map(|p| OptimizerState::zeros(p.len())).collect();
    let mut init_state = OptimizerState::zeros(1);
    let mut best: Option<(f64, usize, Network)> = None;
    let mut losses = Vec::with_capacity(cfg.max_epochs);
    let mut eta = cfg.learning_rate;
    let mut staged = false;

    for epoch in 0..cfg.max_epochs {
        if let (false, Some(stage)) = (staged, cfg.schedule) {
            let by_epoch = stage.after_epoch.is_some_and(|e| epoch >= e);
            let by_loss = stage.below_loss.is_some_and(|l| losses.last().is_some_and(|&last| last < l));
            if by_epoch || by_loss {
                eta = stage.learning_rate;
                staged = true;
            }
        }

        let sampled;
        let batch: &[Vec<f64>] = match paths {
            Paths::Fixed(p) => p,
            Paths::Sampled => {
                sampled = sample_paths(model, cfg.horizon, cfg.batch_size, cfg.seed, epoch as u64)?;
                &sampled
            }
        };
        let run = unroll(&net, params, batch, &moments, cfg.discount, Tape::new());
        let loss = run.tape.scalar(run.loss);
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss {loss} at epoch {epoch}")));
        }
        losses.push(loss);
        if best.as_ref().is_none_or(|(b, _, _)| loss < *b) {
            best = Some((loss, epoch, net.clone()));
        }
        if cfg.target_loss.is_some_and(|t| loss <= t) {
            break;
        }

        let grads = run.tape.backward(run.loss);
        let mut flat = Vec::new();
        for &(w, b) in &run.weights {
            flat.push(w);
            flat.extend(b);
        }
        for ((p, st), v) in net.parameters_mut().into_iter().zip(&mut states).zip(flat) {
            match grads.get(v) {
                Some(g) => rmsprop_step(p, g, st, eta, cfg.rms_alpha, cfg.rms_eps),
                None => {
                    let zeros = vec![0.0; p.len()];
                    rmsprop_step(p, &zeros, st, eta, cfg.rms_alpha, cfg.rms_eps)
                }
            }
        }
        let g0 = grads.get(run.init).map_or(0.0, |g| g[0]);
        let mut init = [net.init_inventory];
        rmsprop_step(&mut init, &[g0], &mut init_state, cfg.init_inventory_rate, cfg.rms_alpha, cfg.rms_eps);
        net.init_inventory = init[0];
    }

    let (best_loss, best_epoch, network) =
        best.ok_or_else(|| Error::InvalidParams("training needs at least one epoch".into()))?;
    Ok(TrainOutcome { best_loss, best_epoch, network, losses })
}

/// A recorded rollout.
pub struct Unrolled {
    pub tape: Tape,
    pub loss: Var,
    pub weights: Vec<(Var, Option<Var>)>,
    pub init: Var,
}

/// Record the minibatch rollout of `paths` on `tape`. The loss is
/// `(1/T) Σ_t γ^t · mean_k c_{k,t}` over the `T` simulated periods.
pub fn unroll(
    net: &Network,
    params: &CostParams,
    paths: &[Vec<f64>],
    moments: &[(f64, f64)],
    discount: f64,
    mut tape: Tape,
) -> Unrolled {
    let m = paths.len();
    let horizon = paths[0].len();
    let weights = net.leaves(&mut tape);
    let init = tape.leaf(1, 1, vec![net.init_inventory]);
    let spread = tape.broadcast(init, m);
    let mut inv = tape.decouple(spread);
    let zero = tape.constant(m, 1, 0.0);
    let mut regular: VecDeque<Var> = std::iter::repeat_n(zero, params.regular_lead_time).collect();
    let mut expedited: VecDeque<Var> = std::iter::repeat_n(zero, params.expedited_lead_time).collect();
    let fixed = params.regular_fixed_cost != 0.0 || params.expedited_fixed_cost != 0.0;
    let mut terms = Vec::with_capacity(horizon);
    let mut weight = 1.0 / horizon as f64;

    for t in 0..horizon {
        let mut parts = Vec::with_capacity(net.input_dim());
        match net.features {
            Features::Full => {
                parts.push(inv);
                parts.extend(regular.iter().copied());
                parts.extend(expedited.iter().copied());
            }
            Features::ExpeditedOnly => {
                parts.push(inv);
                parts.extend(expedited.iter().copied());
            }
            Features::ReducedWithMoments => {
                parts.push(tape.add(inv, regular[0]));
                parts.extend(regular.iter().skip(1).copied());
                parts.extend(expedited.iter().copied());
                let (mu, sd) = moments[t];
                parts.push(tape.constant(m, 1, mu));
                parts.push(tape.constant(m, 1, sd));
            }
        }
        let mut x = tape.concat(&parts);
        if net.input_scale != 1.0 {
            x = tape.scale(x, 1.0 / net.input_scale);
        }
        let raw = net.forward_tape(&mut tape, &weights, x);
        let q = tape.decouple(raw);
        let (qr, qe) = match net.features {
            Features::ExpeditedOnly => (zero, tape.column(q, 0)),
            _ => (tape.column(q, 0), tape.column(q, 1)),
        };
        let arrive_r = pipe(&mut regular, qr);
        let arrive_e = pipe(&mut expedited, qe);
        let demand = tape.leaf(m, 1, paths.iter().map(|p| p[t]).collect());
        inv = tape.combine(&[(inv, 1.0), (arrive_r, 1.0), (arrive_e, 1.0), (demand, -1.0)]);

        let neg = tape.scale(inv, -1.0);
        let over = tape.pos_part(inv);
        let under = tape.pos_part(neg);
        let mut cost_terms = vec![
            (qr, params.regular_unit_cost),
            (qe, params.expedited_unit_cost),
            (over, params.holding_cost),
            (under, params.backlog_cost),
        ];
        if fixed {
            let charges = tape
                .value(qr)
                .iter()
                .zip(tape.value(qe))
                .map(|(&r, &e)| {
                    let mut c = 0.0;
                    if r > 0.0 {
                        c += params.regular_fixed_cost;
                    }
                    if e > 0.0 {
                        c += params.expedited_fixed_cost;
                    }
                    c
                })
                .collect();
            cost_terms.push((tape.leaf(m, 1, charges), 1.0));
        }
        let cost = tape.combine(&cost_terms);
        terms.push((tape.mean(cost), weight));
        weight *= discount;
    }
    let loss = tape.combine(&terms);
    Unrolled { tape, loss, weights, init }
}

/// Push `order` into a pipeline and return what arrives now.
fn pipe(pipeline: &mut VecDeque<Var>, order: Var) -> Var {
    match pipeline.pop_front() {
        Some(arriving) => {
            pipeline.push_back(order);
            arriving
        }
        None => order,
    }
}

/// Two-phase schedule for time-varying demand: pretrain on a single realization,
/// then fine-tune on fresh minibatches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmpiricalSchedule {
    pub one_shot: TrainingConfig,
    pub fine_tune: TrainingConfig,
}

impl Default for EmpiricalSchedule {
    fn default() -> Self {
        let one_shot = TrainingConfig { batch_size: 1, learning_rate: 3e-3, max_epochs: 2000, ..Default::default() };
        let fine_tune = TrainingConfig { batch_size: 4, learning_rate: 1e-3, max_epochs: 2000, ..Default::default() };
        Self { one_shot, fine_tune }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalOutcome {
    pub one_shot: TrainOutcome,
    pub fine_tune: TrainOutcome,
}

impl EmpiricalOutcome {
    pub fn network(&self) -> &Network {
        &self.fine_tune.network
    }
}

/// Small network for a time-varying process: reduced state plus the period's moments,
/// three CELU layers of 8, inputs and outputs scaled by the largest mean demand.
pub fn empirical_network(params: &CostParams, model: &DemandModel, rng: &mut SimRng) -> Result<Network> {
    let DemandModel::TruncatedNormalProcess { mu, .. } = model else {
        return Err(Error::Unsupported("empirical networks need a truncated-normal process".into()));
    };
    let mut net = Network::new(Features::ReducedWithMoments, params, &[8, 8, 8])?;
    net.init_weights(rng);
    let scale = mu.iter().copied().fold(0.0f64, f64::max).max(1.0);
    net.input_scale = scale;
    net.output_scale = scale;
    Ok(net)
}

/// Pretrain on one realization of `process`, then fine-tune on fresh samples. Both
/// phases must cover the whole process.
pub fn train_empirical(
    process: &DemandModel,
    params: &CostParams,
    net: &Network,
    schedule: &EmpiricalSchedule,
) -> Result<EmpiricalOutcome> {
    let Some(len) = process.horizon() else {
        return Err(Error::Unsupported("empirical training needs a finite-horizon process".into()));
    };
    for cfg in [&schedule.one_shot, &schedule.fine_tune] {
        if cfg.horizon != len {
            return Err(Error::InvalidParams(format!(
                "training horizon {} differs from the process length {len}",
                cfg.horizon
            )));
        }
    }
    let path = sample_paths(process, len, 1, schedule.one_shot.seed, u64::MAX)?;
    let one_shot = train_on_paths(params, process, net, &schedule.one_shot, &path)?;
    let fine_tune = train(params, process, &one_shot.network, &schedule.fine_tune)?;
    Ok(EmpiricalOutcome { one_shot, fine_tune })
}
