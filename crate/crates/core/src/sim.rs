//! Monte-Carlo rollout engine shared by the heuristic searches and the evaluator.
//!
//! Realizations advance in lockstep so that batched policies (networks) can act on all
//! of them with one forward pass per period. Realization `r` draws its demands from
//! sub-stream `r` of the seed, independent of the policy, so two policies run under the
//! same seed see identical demand paths.

use crate::demand::DemandModel;
use crate::dynamics::{advance, Action, CostParams, InventoryState};
use crate::error::{Error, Result};
use crate::rng::SimRng;

/// What a policy sees when it places period-`period` orders.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub state: &'a InventoryState,
    pub period: usize,
    /// Demand realized in the previous period (0 before the first period).
    pub last_demand: f64,
    /// Mean and standard deviation of this period's demand distribution.
    pub demand_mean: f64,
    pub demand_sd: f64,
}

pub trait OrderPolicy {
    /// Starting state for a rollout. Most policies start empty.
    fn initial_state(&self, params: &CostParams) -> InventoryState {
        InventoryState::zero(params)
    }

    fn order(&self, obs: &Observation<'_>) -> Action;

    fn order_batch(&self, obs: &[Observation<'_>], out: &mut Vec<Action>) {
        out.clear();
        out.extend(obs.iter().map(|o| self.order(o)));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RolloutSpec {
    pub n_reps: usize,
    /// Periods that count towards the average.
    pub horizon: usize,
    /// Leading periods simulated but not counted.
    pub burn_in: usize,
    pub seed: u64,
}

impl RolloutSpec {
    pub fn new(n_reps: usize, horizon: usize, seed: u64) -> Self {
        Self { n_reps, horizon, burn_in: 0, seed }
    }

    pub fn with_burn_in(mut self, burn_in: usize) -> Self {
        self.burn_in = burn_in;
        self
    }
}

/// One simulated period, as reported to a [`rollout_with`] visitor.
#[derive(Debug)]
pub struct Transition<'a> {
    pub rep: usize,
    pub period: usize,
    pub state: &'a InventoryState,
    pub action: Action,
    pub demand: f64,
    pub cost: f64,
}

/// Average cost per counted period for each realization.
pub fn rollout<P: OrderPolicy + ?Sized>(
    policy: &P,
    params: &CostParams,
    model: &DemandModel,
    spec: RolloutSpec,
) -> Result<Vec<f64>> {
    run(policy, params, model, spec, None::<&mut fn(&Transition<'_>)>)
}

/// [`rollout`] that also hands every transition (pre-decision state, action, demand,
/// cost) to `visit`.
pub fn rollout_with<P, F>(
    policy: &P,
    params: &CostParams,
    model: &DemandModel,
    spec: RolloutSpec,
    mut visit: F,
) -> Result<Vec<f64>>
where
    P: OrderPolicy + ?Sized,
    F: FnMut(&Transition<'_>),
{
    run(policy, params, model, spec, Some(&mut visit))
}

fn run<P, F>(
    policy: &P,
    params: &CostParams,
    model: &DemandModel,
    spec: RolloutSpec,
    mut visit: Option<&mut F>,
) -> Result<Vec<f64>>
where
    P: OrderPolicy + ?Sized,
    F: FnMut(&Transition<'_>),
{
    params.validate()?;
    model.validate()?;
    if spec.n_reps == 0 || spec.horizon == 0 {
        return Err(Error::InvalidParams("rollout needs at least one realization and period".into()));
    }
    let total = spec.burn_in + spec.horizon;
    if let Some(h) = model.horizon() {
        if total > h {
            return Err(Error::OutOfHorizon { period: total - 1, horizon: h });
        }
    }
    let start = policy.initial_state(params);
    if start.regular_pipeline.len() != params.regular_lead_time
        || start.expedited_pipeline.len() != params.expedited_lead_time
    {
        return Err(Error::DimensionMismatch {
            expected: params.regular_lead_time + params.expedited_lead_time,
            got: start.regular_pipeline.len() + start.expedited_pipeline.len(),
        });
    }

    let mut states = vec![start; spec.n_reps];
    let mut rngs: Vec<SimRng> = (0..spec.n_reps).map(|r| SimRng::with_stream(spec.seed, r as u64)).collect();
    let mut last_demand = vec![0.0; spec.n_reps];
    let mut totals = vec![0.0; spec.n_reps];
    let mut actions = Vec::with_capacity(spec.n_reps);
    let mut demands = vec![0.0; spec.n_reps];

    for t in 0..total {
        let (mean, sd) = model.moments(t)?;
        for (d, rng) in demands.iter_mut().zip(rngs.iter_mut()) {
            *d = model.sample(t, rng)?;
        }
        {
            let obs: Vec<Observation<'_>> = states
                .iter()
                .zip(&last_demand)
                .map(|(s, &ld)| Observation {
                    state: s,
                    period: t,
                    last_demand: ld,
                    demand_mean: mean,
                    demand_sd: sd,
                })
                .collect();
            policy.order_batch(&obs, &mut actions);
        }
        if actions.len() != spec.n_reps {
            return Err(Error::DimensionMismatch { expected: spec.n_reps, got: actions.len() });
        }
        for r in 0..spec.n_reps {
            let before = visit.is_some().then(|| states[r].clone());
            let cost = advance(&mut states[r], actions[r], demands[r], params);
            if !cost.is_finite() {
                return Err(Error::NonFinite(format!("period cost in realization {r}, period {t}")));
            }
            if let (Some(f), Some(state)) = (visit.as_mut(), before.as_ref()) {
                f(&Transition { rep: r, period: t, state, action: actions[r], demand: demands[r], cost });
            }
            if t >= spec.burn_in {
                totals[r] += cost;
            }
            last_demand[r] = demands[r];
        }
    }
    Ok(totals.into_iter().map(|c| c / spec.horizon as f64).collect())
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed(Action);

    impl OrderPolicy for Fixed {
        fn order(&self, _: &Observation<'_>) -> Action {
            self.0
        }
    }

    #[test]
    fn zero_demand_zero_orders_cost_nothing() {
        let p = CostParams::dual(2, 10.0, 5.0, 95.0);
        let costs = rollout(&Fixed(Action::NONE), &p, &DemandModel::uniform(0, 0), RolloutSpec::new(7, 50, 1)).unwrap();
        assert_eq!(costs, vec![0.0; 7]);
    }

    #[test]
    fn demand_paths_do_not_depend_on_policy() {
        let p = CostParams::dual(2, 10.0, 5.0, 95.0);
        let m = DemandModel::uniform(0, 4);
        let spec = RolloutSpec::new(5, 40, 9);
        let mut a = vec![];
        let mut b = vec![];
        rollout_with(&Fixed(Action::NONE), &p, &m, spec, |tr| a.push((tr.rep, tr.period, tr.demand))).unwrap();
        rollout_with(&Fixed(Action::new(2, 1)), &p, &m, spec, |tr| b.push((tr.rep, tr.period, tr.demand))).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn burn_in_excludes_leading_periods() {
        // Ordering 2 regular per period under demand 2: backlog for l_r periods, then flat.
        let p = CostParams::dual(2, 10.0, 5.0, 95.0);
        let m = DemandModel::uniform(2, 2);
        let spec = RolloutSpec::new(1, 10, 0).with_burn_in(2);
        let costs = rollout(&Fixed(Action::new(2, 0)), &p, &m, spec).unwrap();
        assert_eq!(costs, vec![4.0 * 95.0]);
    }

    #[test]
    fn horizon_beyond_process_is_rejected() {
        let p = CostParams::dual(2, 10.0, 5.0, 95.0);
        let m = DemandModel::TruncatedNormalProcess { mu: vec![1.0; 5], sigma: vec![0.5; 5], trunc_lo: 0.0, trunc_hi: 10.0 };
        let r = rollout(&Fixed(Action::NONE), &p, &m, RolloutSpec::new(1, 6, 0));
        assert!(matches!(r, Err(Error::OutOfHorizon { .. })));
    }
}
