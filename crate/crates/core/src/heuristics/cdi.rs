//! Capped dual index.

use serde::{Deserialize, Serialize};

use super::{expedited_position, order_quantity};
use crate::demand::DemandModel;
use crate::dynamics::{Action, CostParams};
use crate::error::{Error, Result};
use crate::sim::{mean, rollout, Observation, OrderPolicy, RolloutSpec};

/// A policy parameter that is either constant or given per period. Periods past the
/// end of a sequence reuse its last value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Level {
    Constant(f64),
    PerPeriod(Vec<f64>),
}

impl Level {
    pub fn at(&self, t: usize) -> f64 {
        match self {
            Level::Constant(x) => *x,
            Level::PerPeriod(xs) => xs.get(t).or(xs.last()).copied().unwrap_or(0.0),
        }
    }
}

/// `q_e = [S_e - I_t^t]^+` on the expedited position and
/// `q_r = min([S_r - I_t^{t+l-1}]^+, cap)` on the position of pipeline orders,
/// which does not include this period's expedited order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CdiPolicy {
    pub regular_level: Level,
    pub expedited_level: Level,
    pub regular_cap: Level,
}

impl CdiPolicy {
    pub fn constant(regular_level: i64, expedited_level: i64, regular_cap: i64) -> Self {
        Self {
            regular_level: Level::Constant(regular_level as f64),
            expedited_level: Level::Constant(expedited_level as f64),
            regular_cap: Level::Constant(regular_cap as f64),
        }
    }

    /// Integer triple `(S_r, S_e, cap)` of a constant policy.
    pub fn constant_triple(&self) -> Option<(i64, i64, i64)> {
        match (&self.regular_level, &self.expedited_level, &self.regular_cap) {
            (Level::Constant(r), Level::Constant(e), Level::Constant(c)) => Some((*r as i64, *e as i64, *c as i64)),
            _ => None,
        }
    }
}

impl OrderPolicy for CdiPolicy {
    fn order(&self, obs: &Observation<'_>) -> Action {
        let t = obs.period;
        let qe = order_quantity(self.expedited_level.at(t) - expedited_position(obs.state));
        let gap = (self.regular_level.at(t) - obs.state.position()).max(0.0);
        let qr = order_quantity(gap.min(self.regular_cap.at(t).max(0.0)));
        Action::new(qr, qe)
    }
}

/// Simulation budget and search window for [`optimize_cdi`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdiSearch {
    pub n_reps: usize,
    pub horizon: usize,
    pub burn_in: usize,
    pub seed: u64,
    /// Half-width of the grid around the closed-form seeds; `None` uses `max(5, D_max)`.
    pub radius: Option<i64>,
}

impl Default for CdiSearch {
    fn default() -> Self {
        Self { n_reps: 100, horizon: 500, burn_in: 0, seed: 0, radius: None }
    }
}

/// Closed-form levels from the extreme cumulative demands over one and `l + 1` periods:
/// each level is the `b/(h+b)` mix of minimum and maximum.
fn closed_form_seeds(params: &CostParams, lo: f64, hi: f64) -> (f64, f64, f64) {
    let (h, b) = (params.holding_cost, params.backlog_cost);
    let mix = |min: f64, max: f64| (h * min + b * max) / (h + b);
    let span = params.lead_gap() as f64 + 1.0;
    let expedited = mix(lo, hi);
    let regular = mix(span * lo, span * hi);
    let cap = mix(lo, hi);
    (regular, expedited, cap)
}

/// Exhaustive search over integer `(S_r, S_e, cap)` in a box around the closed-form
/// seeds. Every candidate is simulated on the same demand paths; ties go to the
/// lexicographically smallest triple.
pub fn optimize_cdi(params: &CostParams, model: &DemandModel, search: CdiSearch) -> Result<CdiPolicy> {
    params.validate()?;
    model.validate()?;
    if !model.is_stationary() {
        return Err(Error::Unsupported("constant CDI search needs stationary demand".into()));
    }
    let (d_lo, d_hi) = (model.min_demand()? as f64, model.max_demand()? as f64);
    let (sr, se, cap) = closed_form_seeds(params, d_lo, d_hi);
    let radius = search.radius.unwrap_or_else(|| (d_hi as i64).max(5));
    let window = |centre: f64| {
        let c = centre.round() as i64;
        (c - radius).max(0)..=(c + radius)
    };
    let spec = RolloutSpec::new(search.n_reps, search.horizon, search.seed).with_burn_in(search.burn_in);
    let mut best: Option<(f64, CdiPolicy)> = None;
    for s_r in window(sr) {
        for s_e in window(se) {
            for q in window(cap) {
                let candidate = CdiPolicy::constant(s_r, s_e, q);
                let cost = mean(&rollout(&candidate, params, model, spec)?);
                if best.as_ref().is_none_or(|(c, _)| cost < *c) {
                    best = Some((cost, candidate));
                }
            }
        }
    }
    best.map(|(_, p)| p).ok_or_else(|| Error::InvalidParams("empty CDI grid".into()))
}

/// Which moments feed the time-varying levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CdiVariant {
    /// Only period-`t` moments; the regular level scales the one-period level by `l`.
    Current,
    /// Moments of periods `t..=t+l` for the regular level and of `t+l` for the cap.
    Future,
}

/// Per-period CDI levels for a time-varying demand process, with the minimum and maximum
/// demand of a period estimated by `μ ∓ 2.58σ` (the minimum floored at zero). Periods
/// past the end of the process contribute no demand.
pub fn cdi_time_varying_params(
    process: &DemandModel,
    params: &CostParams,
    variant: CdiVariant,
) -> Result<CdiPolicy> {
    const Z: f64 = 2.58;
    let DemandModel::TruncatedNormalProcess { mu, sigma, .. } = process else {
        return Err(Error::Unsupported("time-varying CDI levels need a demand process".into()));
    };
    process.validate()?;
    if params.expedited_lead_time != 0 {
        return Err(Error::Unsupported("CDI assumes zero expedited lead time".into()));
    }
    let (h, b) = (params.holding_cost, params.backlog_cost);
    let l = params.lead_gap();
    let n = mu.len();
    let low = |t: usize| if t < n { (mu[t] - Z * sigma[t]).max(0.0) } else { 0.0 };
    let high = |t: usize| if t < n { mu[t] + Z * sigma[t] } else { 0.0 };
    let mix = |min: f64, max: f64| (h * min + b * max) / (h + b);

    let expedited: Vec<f64> = (0..n).map(|t| mix(low(t), high(t))).collect();
    let (regular, cap): (Vec<f64>, Vec<f64>) = match variant {
        CdiVariant::Current => (expedited.iter().map(|s| l as f64 * s).collect(), expedited.clone()),
        CdiVariant::Future => (0..n)
            .map(|t| {
                let lo: f64 = (t..=t + l).map(low).sum();
                let hi: f64 = (t..=t + l).map(high).sum();
                (mix(lo, hi), mix(low(t + l), high(t + l)))
            })
            .unzip(),
    };
    Ok(CdiPolicy {
        regular_level: Level::PerPeriod(regular),
        expedited_level: Level::PerPeriod(expedited),
        regular_cap: Level::PerPeriod(cap),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::InventoryState;
    use crate::heuristics::DualIndexPolicy;
    use crate::rng::SimRng;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn obs(state: &InventoryState, period: usize) -> Observation<'_> {
        Observation { state, period, last_demand: 0.0, demand_mean: 0.0, demand_sd: 0.0 }
    }

    #[test]
    fn capped_regular_order() {
        let p = CostParams::dual(2, 20.0, 5.0, 495.0);
        let cdi = CdiPolicy::constant(6, 0, 3);
        let s = InventoryState { net: 1.0, regular_pipeline: vec![0, 0], expedited_pipeline: vec![] };
        assert_eq!(cdi.order(&obs(&s, 0)).regular, 3);
        let at_level = CdiPolicy::constant(0, 1, 0);
        assert_eq!(at_level.order(&obs(&s, 0)).expedited, 0);
        let _ = p;
    }

    #[test]
    fn time_varying_current_levels() {
        let p = CostParams::dual(2, 20.0, 5.0, 495.0);
        let process = DemandModel::TruncatedNormalProcess {
            mu: vec![100.0, 100.0],
            sigma: vec![10.0, 0.0],
            trunc_lo: 0.0,
            trunc_hi: 1e8,
        };
        let cdi = cdi_time_varying_params(&process, &p, CdiVariant::Current).unwrap();
        assert_relative_eq!(cdi.expedited_level.at(0), 125.284, epsilon = 1e-9);
        assert_relative_eq!(cdi.regular_cap.at(0), 125.284, epsilon = 1e-9);
        assert_relative_eq!(cdi.regular_level.at(0), 2.0 * 125.284, epsilon = 1e-9);
        assert_relative_eq!(cdi.expedited_level.at(1), 100.0, epsilon = 1e-12);
    }

    #[test]
    fn time_varying_future_levels_sum_the_window() {
        let p = CostParams::dual(2, 20.0, 5.0, 495.0);
        let process = DemandModel::TruncatedNormalProcess {
            mu: vec![100.0; 10],
            sigma: vec![10.0; 10],
            trunc_lo: 0.0,
            trunc_hi: 1e8,
        };
        let cdi = cdi_time_varying_params(&process, &p, CdiVariant::Future).unwrap();
        assert_relative_eq!(cdi.regular_level.at(3), 3.0 * 125.284, epsilon = 1e-9);
        assert_relative_eq!(cdi.regular_cap.at(3), 125.284, epsilon = 1e-9);
        // The last periods see the end of the process.
        assert_relative_eq!(cdi.regular_level.at(9), 125.284, epsilon = 1e-9);
    }

    #[test]
    fn optimizer_is_reproducible_and_avoids_backlog_under_constant_demand() {
        let p = CostParams::dual(2, 10.0, 5.0, 95.0);
        let m = DemandModel::uniform(2, 2);
        let search = CdiSearch { n_reps: 4, horizon: 60, burn_in: 5, ..Default::default() };
        let a = optimize_cdi(&p, &m, search).unwrap();
        assert_eq!(a, optimize_cdi(&p, &m, search).unwrap());
        let spec = RolloutSpec::new(4, 60, 1).with_burn_in(5);
        let cost = mean(&rollout(&a, &p, &m, spec).unwrap());
        assert_eq!(cost, 0.0, "{a:?}");
    }

    proptest! {
        #[test]
        fn uncapped_cdi_matches_dual_index_statewise(
            net in -15i64..15,
            pipe in prop::collection::vec(0u64..5, 2),
            s_e in 0i64..8,
            delta in 0i64..10,
        ) {
            let s = InventoryState { net: net as f64, regular_pipeline: pipe, expedited_pipeline: vec![] };
            let di = DualIndexPolicy { expedited_target: s_e, delta };
            let cdi = CdiPolicy::constant(s_e + delta, s_e, i64::MAX / 4);
            let (a, b) = (di.orders(&s), cdi.order(&obs(&s, 0)));
            prop_assert_eq!(a.expedited, b.expedited);
            prop_assert_eq!(a.regular, b.regular.saturating_sub(b.expedited));
        }

        #[test]
        fn orders_are_non_negative_integers(net in -1e3f64..1e3, s_r in -5.0f64..20.0, s_e in -5.0f64..10.0, cap in -1.0f64..6.0) {
            let s = InventoryState { net, regular_pipeline: vec![1, 2], expedited_pipeline: vec![] };
            let cdi = CdiPolicy {
                regular_level: Level::Constant(s_r),
                expedited_level: Level::Constant(s_e),
                regular_cap: Level::Constant(cap),
            };
            let a = cdi.order(&obs(&s, 0));
            prop_assert!(a.regular as f64 <= cap.max(0.0).ceil());
        }
    }

    #[test]
    fn level_lookup_clamps_to_last() {
        let l = Level::PerPeriod(vec![1.0, 2.0]);
        assert_eq!(l.at(5), 2.0);
        let _ = SimRng::new(0);
    }
}
