//! Single-index and dual-index policies.

use serde::{Deserialize, Serialize};

use super::{empirical_quantile, expedited_position, order_quantity};
use crate::demand::DemandModel;
use crate::dynamics::{advance, Action, CostParams, InventoryState};
use crate::error::{Error, Result};
use crate::rng::SimRng;
use crate::sim::{mean, rollout, Observation, OrderPolicy, RolloutSpec};

/// Replaces last period's demand: `min(Δ, D_{t-1})` regular, the excess expedited.
/// Starts from net inventory `z_r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SingleIndexPolicy {
    pub regular_target: i64,
    pub delta: i64,
}

impl SingleIndexPolicy {
    pub fn split(&self, last_demand: f64) -> Action {
        let d = order_quantity(last_demand);
        let delta = self.delta.max(0) as u64;
        Action::new(d.min(delta), d.saturating_sub(delta))
    }
}

impl OrderPolicy for SingleIndexPolicy {
    fn initial_state(&self, params: &CostParams) -> InventoryState {
        InventoryState::with_net(params, self.regular_target as f64)
    }

    fn order(&self, obs: &Observation<'_>) -> Action {
        self.split(obs.last_demand)
    }
}

/// Expedites up to `z_e` on the expedited position, then orders regular up to
/// `z_e + Δ` on the full position (counting this period's expedited order).
/// Starts from net inventory `z_e`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DualIndexPolicy {
    pub expedited_target: i64,
    pub delta: i64,
}

impl DualIndexPolicy {
    pub fn orders(&self, state: &InventoryState) -> Action {
        let qe = order_quantity(self.expedited_target as f64 - expedited_position(state));
        let regular_target = (self.expedited_target + self.delta) as f64;
        let qr = order_quantity(regular_target - state.position() - qe as f64);
        Action::new(qr, qe)
    }
}

impl OrderPolicy for DualIndexPolicy {
    fn initial_state(&self, params: &CostParams) -> InventoryState {
        InventoryState::with_net(params, self.expedited_target as f64)
    }

    fn order(&self, obs: &Observation<'_>) -> Action {
        self.orders(obs.state)
    }
}

/// Sampling and simulation budget for the index-policy searches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexSearch {
    /// Draws used to estimate each level distribution.
    pub n_samples: usize,
    /// Periods discarded before overshoot samples are collected (dual index).
    pub warm_up: usize,
    pub n_reps: usize,
    pub horizon: usize,
    pub seed: u64,
}

impl Default for IndexSearch {
    fn default() -> Self {
        Self { n_samples: 100_000, warm_up: 200, n_reps: 100, horizon: 500, seed: 0 }
    }
}

const MIN_SAMPLES: usize = 10_000;

fn check_search(params: &CostParams, model: &DemandModel, search: &IndexSearch) -> Result<i64> {
    params.validate()?;
    model.validate()?;
    if search.n_samples < MIN_SAMPLES {
        return Err(Error::InsufficientSamples { need: MIN_SAMPLES, got: search.n_samples });
    }
    if !model.is_stationary() {
        return Err(Error::Unsupported("index-policy search needs stationary demand".into()));
    }
    model.max_demand()
}

/// Scan `Δ ∈ 0..=D_max`; for each, set `z_r` at the critical fractile of
/// `d₁(Δ) = Σ_{i<l} min(Δ, D_i) + Σ_{i≤l_e} D_i` and keep the pair with the lowest
/// simulated cost (ties to the smaller `Δ`).
pub fn optimize_si(params: &CostParams, model: &DemandModel, search: IndexSearch) -> Result<SingleIndexPolicy> {
    let d_max = check_search(params, model, &search)?;
    let gap = params.lead_gap();
    let mut best: Option<(f64, SingleIndexPolicy)> = None;
    for delta in 0..=d_max {
        let mut rng = SimRng::with_stream(search.seed, delta as u64);
        let mut d1: Vec<f64> = (0..search.n_samples)
            .map(|_| {
                let mut x = 0.0;
                for _ in 0..gap {
                    x += model.sample(0, &mut rng).expect("stationary").min(delta as f64);
                }
                for _ in 0..=params.expedited_lead_time {
                    x += model.sample(0, &mut rng).expect("stationary");
                }
                x
            })
            .collect();
        let z_r = empirical_quantile(&mut d1, params.critical_ratio()).round() as i64;
        let policy = SingleIndexPolicy { regular_target: z_r, delta };
        let spec = RolloutSpec::new(search.n_reps, search.horizon, search.seed);
        let cost = mean(&rollout(&policy, params, model, spec)?);
        if best.is_none_or(|(c, _)| cost < c) {
            best = Some((cost, policy));
        }
    }
    best.map(|(_, p)| p).ok_or_else(|| Error::InvalidParams("empty search range".into()))
}

/// Scan `Δ ∈ 0..=(l+1)·D_max`; for each, simulate the dual-index dynamics with
/// `z_e = 0` (they are translation invariant), collect `d₂ = Σ_{i≤l_e} D - O` after a
/// warm-up, set `z_e` at its critical fractile and keep the cheapest pair.
pub fn optimize_di(params: &CostParams, model: &DemandModel, search: IndexSearch) -> Result<DualIndexPolicy> {
    let d_max = check_search(params, model, &search)?;
    let le = params.expedited_lead_time;
    let delta_max = (params.lead_gap() as i64 + 1) * d_max;
    let mut best: Option<(f64, DualIndexPolicy)> = None;
    for delta in 0..=delta_max {
        let probe = DualIndexPolicy { expedited_target: 0, delta };
        let mut rng = SimRng::with_stream(search.seed, delta as u64);
        let mut state = InventoryState::zero(params);
        let total = search.warm_up + search.n_samples + le + 1;
        let mut overshoot = Vec::with_capacity(total);
        let mut demands = Vec::with_capacity(total);
        for _ in 0..total {
            let a = probe.orders(&state);
            overshoot.push(expedited_position(&state) + a.expedited as f64);
            let d = model.sample(0, &mut rng)?;
            demands.push(d);
            advance(&mut state, a, d, params);
        }
        // Net inventory l_e + 1 periods after an expedite decision is z_e + O_t minus
        // the demand over those periods.
        let mut d2: Vec<f64> = (search.warm_up..search.warm_up + search.n_samples)
            .map(|t| demands[t..=t + le].iter().sum::<f64>() - overshoot[t])
            .collect();
        let z_e = empirical_quantile(&mut d2, params.critical_ratio()).round() as i64;
        let policy = DualIndexPolicy { expedited_target: z_e, delta };
        let spec = RolloutSpec::new(search.n_reps, search.horizon, search.seed);
        let cost = mean(&rollout(&policy, params, model, spec)?);
        if best.is_none_or(|(c, _)| cost < c) {
            best = Some((cost, policy));
        }
    }
    best.map(|(_, p)| p).ok_or_else(|| Error::InvalidParams("empty search range".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demand::quantile;
    use crate::sim::rollout_with;

    #[test]
    fn si_split() {
        let si = SingleIndexPolicy { regular_target: 8, delta: 3 };
        assert_eq!(si.split(5.0), Action::new(3, 2));
        assert_eq!(si.split(0.0), Action::NONE);
        let wide = SingleIndexPolicy { regular_target: 8, delta: 4 };
        assert!((0..=4).all(|d| wide.split(d as f64).expedited == 0));
    }

    #[test]
    fn si_orders_replace_demand() {
        let p = CostParams::dual(2, 10.0, 5.0, 95.0);
        let si = SingleIndexPolicy { regular_target: 9, delta: 2 };
        let m = DemandModel::uniform(0, 4);
        let mut prev = [0.0; 3];
        rollout_with(&si, &p, &m, RolloutSpec::new(3, 200, 4), |tr| {
            assert_eq!((tr.action.regular + tr.action.expedited) as f64, prev[tr.rep]);
            prev[tr.rep] = tr.demand;
        })
        .unwrap();
    }

    #[test]
    fn d1_fractile_matches_exact_convolution() {
        // l = 1, Δ >= D_max: d₁ is the sum of two independent demands.
        let m = DemandModel::uniform(0, 4);
        assert_eq!(quantile(&m, 2, 0.99).unwrap(), 8);
        let p = CostParams::dual(1, 10.0, 5.0, 495.0);
        let mut rng = SimRng::new(1);
        let mut d1: Vec<f64> = (0..100_000)
            .map(|_| m.sample(0, &mut rng).unwrap().min(4.0) + m.sample(0, &mut rng).unwrap())
            .collect();
        assert_eq!(empirical_quantile(&mut d1, p.critical_ratio()), 8.0);
        assert!((CostParams::dual(2, 5.0, 5.0, 95.0).critical_ratio() - 0.95).abs() < 1e-15);
    }

    #[test]
    fn too_few_samples_rejected() {
        let p = CostParams::dual(2, 10.0, 5.0, 95.0);
        let m = DemandModel::uniform(0, 4);
        let r = optimize_si(&p, &m, IndexSearch { n_samples: 100, ..Default::default() });
        assert!(matches!(r, Err(Error::InsufficientSamples { .. })));
    }

    #[test]
    fn di_with_zero_gap_is_si() {
        let p = CostParams::dual(2, 10.0, 5.0, 95.0);
        let m = DemandModel::uniform(0, 4);
        let spec = RolloutSpec::new(20, 300, 8);
        let mut a = vec![];
        let mut b = vec![];
        let ca = rollout_with(&SingleIndexPolicy { regular_target: 7, delta: 0 }, &p, &m, spec, |t| a.push(t.action)).unwrap();
        let cb = rollout_with(&DualIndexPolicy { expedited_target: 7, delta: 0 }, &p, &m, spec, |t| b.push(t.action)).unwrap();
        assert_eq!(a, b);
        assert_eq!(ca, cb);
    }

    #[test]
    fn huge_gap_never_expedites_in_steady_state() {
        let p = CostParams::dual(2, 10.0, 5.0, 95.0);
        let m = DemandModel::uniform(0, 4);
        let di = DualIndexPolicy { expedited_target: 0, delta: 100 };
        rollout_with(&di, &p, &m, RolloutSpec::new(5, 400, 2), |t| {
            if t.period > 50 {
                assert_eq!(t.action.expedited, 0);
            }
        })
        .unwrap();
    }

    #[test]
    fn searches_land_near_the_optimum() {
        let p = CostParams::dual(2, 10.0, 5.0, 95.0);
        let m = DemandModel::uniform(0, 4);
        let search = IndexSearch { n_samples: 20_000, n_reps: 40, horizon: 300, ..Default::default() };
        let si = optimize_si(&p, &m, search).unwrap();
        let di = optimize_di(&p, &m, search).unwrap();
        let spec = RolloutSpec::new(200, 1000, 99);
        let c_si = mean(&rollout(&si, &p, &m, spec).unwrap());
        let c_di = mean(&rollout(&di, &p, &m, spec).unwrap());
        // Optimal cost of this instance is 19.73; a brute-force scan puts the best
        // single-index pair at about 22.0 and the best dual-index pair at about 20.2.
        assert!(c_si < 22.2, "SI {si:?} costs {c_si}");
        assert!(c_di < 20.4, "DI {di:?} costs {c_di}");
        assert!(c_di <= c_si + 0.1);
    }
}
