//! Comparing policies state by state: RMSE against the optimal table, steady-state
//! projections and recurrent-state counts.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::Serialize;

use super::PolicyHandle;
use crate::demand::DemandModel;
use crate::dp::PolicyTable;
use crate::dynamics::{compress, Action, CompressedState, CostParams, InventoryState};
use crate::error::{Error, Result};
use crate::sim::{rollout_with, Observation, RolloutSpec};

type StateKey = (i64, Vec<u64>);

fn key(state: &CompressedState) -> StateKey {
    (state.expedited_position.round() as i64, state.tail.clone())
}

/// Full state with the arriving regular order folded into the net inventory.
fn representative(state: &CompressedState) -> InventoryState {
    let mut regular_pipeline = vec![0];
    regular_pipeline.extend_from_slice(&state.tail);
    InventoryState { net: state.expedited_position, regular_pipeline, expedited_pipeline: vec![] }
}

/// Mean orders per compressed state over the counted periods of a simulation.
fn visited_orders(
    policy: &PolicyHandle,
    params: &CostParams,
    model: &DemandModel,
    spec: RolloutSpec,
) -> Result<BTreeMap<StateKey, (f64, f64, usize)>> {
    let mut acc: BTreeMap<StateKey, (f64, f64, usize)> = BTreeMap::new();
    let mut failure = None;
    rollout_with(policy.policy(), params, model, spec, |tr| {
        if tr.period < spec.burn_in || failure.is_some() {
            return;
        }
        match compress(tr.state) {
            Ok(cs) => {
                let e = acc.entry(key(&cs)).or_insert((0.0, 0.0, 0));
                e.0 += tr.action.regular as f64;
                e.1 += tr.action.expedited as f64;
                e.2 += 1;
            }
            Err(err) => failure = Some(err),
        }
    })?;
    if let Some(err) = failure {
        return Err(err);
    }
    Ok(acc)
}

/// Root-mean-square distance between the orders of `candidate` and `optimal` over the
/// optimal policy's recurrent states, summing both order components per state.
///
/// Networks see the full state, so their orders are averaged over the visits to each
/// compressed state during a simulation under `projection`; recurrent states that
/// simulation never reaches fall back to the full state with the arriving regular order
/// already on hand. Other policies are evaluated at that state directly.
pub fn policy_rmse(
    candidate: &PolicyHandle,
    optimal: &PolicyTable,
    params: &CostParams,
    model: &DemandModel,
    projection: RolloutSpec,
) -> Result<f64> {
    if !params.is_reduced() {
        return Err(Error::Unsupported("policy RMSE needs l_e = 0 and c_r = 0".into()));
    }
    candidate.check(params)?;
    let states = optimal.recurrent_states();
    if states.is_empty() {
        return Err(Error::InvalidParams("optimal policy has no recurrent states".into()));
    }
    if matches!(candidate, PolicyHandle::SingleIndex(_)) {
        return Err(Error::Unsupported("single-index orders depend on past demand, not the state".into()));
    }
    let visited = match candidate {
        PolicyHandle::Network(_) => visited_orders(candidate, params, model, projection)?,
        _ => BTreeMap::new(),
    };
    let (mean, sd) = model.moments(0)?;
    let mut sum = 0.0;
    for s in &states {
        let best = optimal.action(s).expect("recurrent states lie in the table");
        let (qr, qe) = match visited.get(&key(s)) {
            Some(&(r, e, n)) => (r / n as f64, e / n as f64),
            None => {
                let full = representative(s);
                let a: Action = candidate.policy().order(&Observation {
                    state: &full,
                    period: 0,
                    last_demand: 0.0,
                    demand_mean: mean,
                    demand_sd: sd,
                });
                (a.regular as f64, a.expedited as f64)
            }
        };
        sum += (best.regular as f64 - qr).powi(2) + (best.expedited as f64 - qe).powi(2);
    }
    Ok((sum / states.len() as f64).sqrt())
}

/// Steady-state orders tabulated by net inventory and inventory position.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProjectionRow {
    pub net_inventory: i64,
    /// Net inventory plus every outstanding order, before this period's orders.
    pub position: i64,
    pub regular: f64,
    pub expedited: f64,
    /// Share of counted periods spent at this coordinate.
    pub frequency: f64,
}

/// Simulate `policy` and tabulate its orders over `(I_t, position)`; coordinates reached
/// with different orders report visit-weighted means. The usual setting is one
/// realization of 10^6 periods after a 10^3-period burn-in.
pub fn project_policy(
    policy: &PolicyHandle,
    params: &CostParams,
    model: &DemandModel,
    spec: RolloutSpec,
) -> Result<Vec<ProjectionRow>> {
    if !model.is_stationary() {
        return Err(Error::Unsupported("projection needs stationary demand".into()));
    }
    policy.check(params)?;
    let mut acc: BTreeMap<(i64, i64), (f64, f64, usize)> = BTreeMap::new();
    let mut total = 0usize;
    rollout_with(policy.policy(), params, model, spec, |tr| {
        if tr.period < spec.burn_in {
            return;
        }
        let k = (tr.state.net.round() as i64, tr.state.position().round() as i64);
        let e = acc.entry(k).or_insert((0.0, 0.0, 0));
        e.0 += tr.action.regular as f64;
        e.1 += tr.action.expedited as f64;
        e.2 += 1;
        total += 1;
    })?;
    Ok(acc
        .into_iter()
        .map(|((net_inventory, position), (r, e, n))| ProjectionRow {
            net_inventory,
            position,
            regular: r / n as f64,
            expedited: e / n as f64,
            frequency: n as f64 / total as f64,
        })
        .collect())
}

pub fn write_projection_csv<W: Write>(writer: W, rows: &[ProjectionRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Number of distinct compressed states visited after the burn-in.
pub fn recurrent_count(policy: &PolicyHandle, params: &CostParams, model: &DemandModel, spec: RolloutSpec) -> Result<usize> {
    if params.expedited_lead_time != 0 || params.regular_lead_time == 0 {
        return Err(Error::Unsupported("state counts use the compressed space (l_e = 0, l_r > 0)".into()));
    }
    policy.check(params)?;
    let mut seen: BTreeSet<StateKey> = BTreeSet::new();
    rollout_with(policy.policy(), params, model, spec, |tr| {
        if tr.period >= spec.burn_in {
            if let Ok(cs) = compress(tr.state) {
                seen.insert(key(&cs));
            }
        }
    })?;
    Ok(seen.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::{value_iteration, StateSpace, ViOptions};
    use crate::heuristics::CdiPolicy;

    fn solved(ce: f64, b: f64) -> (CostParams, DemandModel, PolicyTable) {
        let p = CostParams::dual(2, ce, 5.0, b);
        let m = DemandModel::uniform(0, 4);
        let space = StateSpace::for_instance(&p, &m).unwrap();
        let sol = value_iteration(&p, &m, &space, ViOptions::default()).unwrap();
        (p, m, sol.policy)
    }

    #[test]
    fn optimal_policy_has_zero_rmse() {
        let (p, m, table) = solved(20.0, 495.0);
        let r = policy_rmse(&PolicyHandle::Table(table.clone()), &table, &p, &m, RolloutSpec::new(1, 10, 0)).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn cdi_rmse_on_low_cost_row() {
        let (p, m, table) = solved(5.0, 95.0);
        let r = policy_rmse(&PolicyHandle::Cdi(CdiPolicy::constant(8, 4, 1)), &table, &p, &m, RolloutSpec::new(1, 10, 0)).unwrap();
        assert!((r - 0.58).abs() < 0.05, "{r}");
    }

    #[test]
    fn optimal_projection_keeps_inventory_between_two_and_ten() {
        let (p, m, table) = solved(20.0, 495.0);
        let rows = project_policy(&PolicyHandle::Table(table), &p, &m, RolloutSpec::new(1, 200_000, 9).with_burn_in(1000)).unwrap();
        let total: f64 = rows.iter().map(|r| r.frequency).sum();
        assert!((total - 1.0).abs() < 1e-9);
        // Inventory after ordering: expedited orders top the expedited position up to 4.
        let nets: Vec<i64> = rows.iter().map(|r| r.net_inventory).collect();
        assert!(nets.iter().all(|&n| n >= -4), "{nets:?}");
        for r in &rows {
            if r.expedited > 0.0 {
                assert!(r.net_inventory < 4, "{r:?}");
            }
        }
    }

    #[test]
    fn deterministic_demand_projects_to_one_row() {
        let p = CostParams::dual(2, 20.0, 5.0, 495.0);
        let m = DemandModel::uniform(2, 2);
        let rows = project_policy(&PolicyHandle::Cdi(CdiPolicy::constant(6, 2, 2)), &p, &m, RolloutSpec::new(1, 5000, 1).with_burn_in(100))
            .unwrap();
        assert_eq!(rows.len(), 1, "{rows:?}");
        assert_eq!(rows[0].frequency, 1.0);
    }

    #[test]
    fn optimal_table_visits_its_recurrent_class() {
        let (p, m, table) = solved(10.0, 95.0);
        let n = recurrent_count(&PolicyHandle::Table(table.clone()), &p, &m, RolloutSpec::new(20, 20_000, 4).with_burn_in(200)).unwrap();
        assert_eq!(n, table.recurrent.len());
        assert_eq!(n, 17);
    }

    #[test]
    fn rmse_is_invariant_to_state_order() {
        let (p, m, table) = solved(10.0, 95.0);
        let mut shuffled = table.clone();
        shuffled.recurrent.reverse();
        let cdi = PolicyHandle::Cdi(CdiPolicy::constant(9, 4, 2));
        let spec = RolloutSpec::new(1, 10, 0);
        let a = policy_rmse(&cdi, &table, &p, &m, spec).unwrap();
        let b = policy_rmse(&cdi, &shuffled, &p, &m, spec).unwrap();
        assert_eq!(a, b);
    }
}
