//! Period dynamics of the dual-sourcing system.
//!
//! Within a period: orders are placed, the oldest pipeline entries arrive (an order
//! with zero lead time arrives at once), demand is served or backlogged, and
//! holding/backlog cost is charged on the resulting net inventory.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostParams {
    pub holding_cost: f64,
    pub backlog_cost: f64,
    #[serde(default)]
    pub regular_unit_cost: f64,
    pub expedited_unit_cost: f64,
    #[serde(default)]
    pub regular_fixed_cost: f64,
    #[serde(default)]
    pub expedited_fixed_cost: f64,
    pub regular_lead_time: usize,
    #[serde(default)]
    pub expedited_lead_time: usize,
}

impl CostParams {
    /// Instance with zero regular cost, zero expedited lead time and no fixed charges.
    pub fn dual(regular_lead_time: usize, expedited_unit_cost: f64, holding_cost: f64, backlog_cost: f64) -> Self {
        Self {
            holding_cost,
            backlog_cost,
            regular_unit_cost: 0.0,
            expedited_unit_cost,
            regular_fixed_cost: 0.0,
            expedited_fixed_cost: 0.0,
            regular_lead_time,
            expedited_lead_time: 0,
        }
    }

    pub fn with_fixed_costs(mut self, regular: f64, expedited: f64) -> Self {
        self.regular_fixed_cost = regular;
        self.expedited_fixed_cost = expedited;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.holding_cost,
            self.backlog_cost,
            self.regular_unit_cost,
            self.expedited_unit_cost,
            self.regular_fixed_cost,
            self.expedited_fixed_cost,
        ]
        .iter()
        .all(|x| x.is_finite());
        if !finite {
            return Err(Error::NonFinite("cost parameters".into()));
        }
        if !(self.holding_cost > 0.0 && self.backlog_cost > 0.0) {
            return Err(Error::InvalidParams("holding and backlog costs must be positive".into()));
        }
        if !(self.regular_unit_cost >= 0.0 && self.expedited_unit_cost >= self.regular_unit_cost) {
            return Err(Error::InvalidParams(
                "unit costs must satisfy 0 <= regular <= expedited".into(),
            ));
        }
        if self.regular_fixed_cost < 0.0 || self.expedited_fixed_cost < 0.0 {
            return Err(Error::Negative("fixed order cost".into()));
        }
        if self.expedited_lead_time >= self.regular_lead_time {
            return Err(Error::InvalidParams(format!(
                "expedited lead time {} must be shorter than regular lead time {}",
                self.expedited_lead_time, self.regular_lead_time
            )));
        }
        Ok(())
    }

    /// Lead-time gap `l_r - l_e`, the dimension of the compressed state.
    pub fn lead_gap(&self) -> usize {
        self.regular_lead_time - self.expedited_lead_time
    }

    /// Critical fractile b / (b + h).
    pub fn critical_ratio(&self) -> f64 {
        self.backlog_cost / (self.backlog_cost + self.holding_cost)
    }

    /// Holding/backlog charge on end-of-period net inventory.
    pub fn inventory_cost(&self, net: f64) -> f64 {
        self.holding_cost * net.max(0.0) + self.backlog_cost * (-net).max(0.0)
    }

    /// Purchase cost of an action, including fixed charges.
    pub fn order_cost(&self, action: Action) -> f64 {
        let mut c = self.regular_unit_cost * action.regular as f64
            + self.expedited_unit_cost * action.expedited as f64;
        if action.regular > 0 {
            c += self.regular_fixed_cost;
        }
        if action.expedited > 0 {
            c += self.expedited_fixed_cost;
        }
        c
    }

    /// Whether the instance satisfies the `l_e = 0`, `c_r = 0` reduction that the
    /// compressed state relies on.
    pub fn is_reduced(&self) -> bool {
        self.expedited_lead_time == 0 && self.regular_unit_cost == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Action {
    pub regular: u64,
    pub expedited: u64,
}

impl Action {
    pub const NONE: Action = Action { regular: 0, expedited: 0 };

    pub fn new(regular: u64, expedited: u64) -> Self {
        Self { regular, expedited }
    }
}

/// Full state: net inventory plus both pipelines, oldest order first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InventoryState {
    pub net: f64,
    pub regular_pipeline: Vec<u64>,
    pub expedited_pipeline: Vec<u64>,
}

impl InventoryState {
    pub fn zero(params: &CostParams) -> Self {
        Self::with_net(params, 0.0)
    }

    pub fn with_net(params: &CostParams, net: f64) -> Self {
        Self {
            net,
            regular_pipeline: vec![0; params.regular_lead_time],
            expedited_pipeline: vec![0; params.expedited_lead_time],
        }
    }

    /// Net inventory plus everything in transit.
    pub fn position(&self) -> f64 {
        self.net + pipeline_sum(&self.regular_pipeline) + pipeline_sum(&self.expedited_pipeline)
    }

    /// Net inventory plus regular arrivals due within `k` periods (`I_t^{t+k}` with an
    /// empty expedited pipeline). `k` beyond the pipeline counts the whole pipeline.
    pub fn position_through(&self, k: usize) -> f64 {
        let end = (k + 1).min(self.regular_pipeline.len());
        self.net + pipeline_sum(&self.regular_pipeline[..end])
    }

    fn check_shape(&self, params: &CostParams) -> Result<()> {
        if self.regular_pipeline.len() != params.regular_lead_time {
            return Err(Error::DimensionMismatch {
                expected: params.regular_lead_time,
                got: self.regular_pipeline.len(),
            });
        }
        if self.expedited_pipeline.len() != params.expedited_lead_time {
            return Err(Error::DimensionMismatch {
                expected: params.expedited_lead_time,
                got: self.expedited_pipeline.len(),
            });
        }
        Ok(())
    }
}

fn pipeline_sum(p: &[u64]) -> f64 {
    p.iter().map(|&q| q as f64).sum()
}

/// Compressed state under `l_e = 0`: expedited inventory position `I + Q_r[0]` and the
/// `l_r - 1` most recent regular orders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressedState {
    pub expedited_position: f64,
    pub tail: Vec<u64>,
}

impl CompressedState {
    /// `I_e` plus the outstanding tail: the full inventory position.
    pub fn position(&self) -> f64 {
        self.expedited_position + pipeline_sum(&self.tail)
    }
}

/// Advance one period. Returns the next state and the period cost.
pub fn step(
    state: &InventoryState,
    action: Action,
    demand: f64,
    params: &CostParams,
) -> Result<(InventoryState, f64)> {
    if !(demand >= 0.0) {
        return Err(Error::Negative(format!("demand {demand}")));
    }
    state.check_shape(params)?;
    let mut next = state.clone();
    let cost = advance(&mut next, action, demand, params);
    Ok((next, cost))
}

/// In-place [`step`] without validation, for simulation loops that have already checked
/// shapes and demand signs.
pub fn advance(state: &mut InventoryState, action: Action, demand: f64, params: &CostParams) -> f64 {
    let arriving_regular = shift_in(&mut state.regular_pipeline, action.regular);
    let arriving_expedited = shift_in(&mut state.expedited_pipeline, action.expedited);
    state.net += arriving_regular as f64 + arriving_expedited as f64 - demand;
    params.order_cost(action) + params.inventory_cost(state.net)
}

/// Append `order` to the pipeline and return what arrives this period. An empty
/// pipeline means zero lead time, so the order itself arrives.
fn shift_in(pipeline: &mut [u64], order: u64) -> u64 {
    let Some(&arriving) = pipeline.first() else {
        return order;
    };
    pipeline.rotate_left(1);
    pipeline[pipeline.len() - 1] = order;
    arriving
}

pub fn compress(state: &InventoryState) -> Result<CompressedState> {
    if !state.expedited_pipeline.is_empty() {
        return Err(Error::Unsupported("compression requires zero expedited lead time".into()));
    }
    let Some((&first, tail)) = state.regular_pipeline.split_first() else {
        return Err(Error::Unsupported("compression requires a positive regular lead time".into()));
    };
    Ok(CompressedState { expedited_position: state.net + first as f64, tail: tail.to_vec() })
}

/// Compressed-state transition. With `l = 1` the tail is empty and this period's
/// regular order is the next one to arrive.
pub fn compressed_step(
    state: &CompressedState,
    action: Action,
    demand: f64,
    params: &CostParams,
) -> Result<(CompressedState, f64)> {
    if !(demand >= 0.0) {
        return Err(Error::Negative(format!("demand {demand}")));
    }
    if !params.is_reduced() {
        return Err(Error::Unsupported(
            "compressed dynamics require zero expedited lead time and regular unit cost".into(),
        ));
    }
    if state.tail.len() + 1 != params.regular_lead_time {
        return Err(Error::DimensionMismatch {
            expected: params.regular_lead_time - 1,
            got: state.tail.len(),
        });
    }
    let after_demand = state.expedited_position + action.expedited as f64 - demand;
    let mut tail = state.tail.clone();
    let incoming = shift_in(&mut tail, action.regular);
    let next = CompressedState { expedited_position: after_demand + incoming as f64, tail };
    let cost = params.order_cost(action) + params.inventory_cost(after_demand);
    Ok((next, cost))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SimRng;
    use proptest::prelude::*;

    fn params_20_495() -> CostParams {
        CostParams {
            holding_cost: 5.0,
            backlog_cost: 495.0,
            regular_unit_cost: 0.0,
            expedited_unit_cost: 20.0,
            regular_fixed_cost: 0.0,
            expedited_fixed_cost: 0.0,
            regular_lead_time: 2,
            expedited_lead_time: 1,
        }
    }

    #[test]
    fn hand_checked_step() {
        let p = params_20_495();
        let s = InventoryState { net: 3.0, regular_pipeline: vec![2, 0], expedited_pipeline: vec![1] };
        let (next, cost) = step(&s, Action::new(0, 1), 4.0, &p).unwrap();
        assert_eq!(next.net, 2.0);
        assert_eq!(cost, 30.0);
        assert_eq!(next.regular_pipeline, vec![0, 0]);
        assert_eq!(next.expedited_pipeline, vec![1]);

        let fixed = p.with_fixed_costs(5.0, 10.0);
        let (_, cost) = step(&s, Action::new(1, 1), 4.0, &fixed).unwrap();
        assert_eq!(cost, 45.0);
    }

    #[test]
    fn null_system() {
        let p = params_20_495();
        let (next, cost) = step(&InventoryState::zero(&p), Action::NONE, 0.0, &p).unwrap();
        assert_eq!(next, InventoryState::zero(&p));
        assert_eq!(cost, 0.0);
    }

    #[test]
    fn negative_demand_rejected() {
        let p = params_20_495();
        assert!(step(&InventoryState::zero(&p), Action::NONE, -1.0, &p).is_err());
    }

    #[test]
    fn compress_examples() {
        let s = InventoryState { net: 2.0, regular_pipeline: vec![3, 1], expedited_pipeline: vec![] };
        let c = compress(&s).unwrap();
        assert_eq!(c, CompressedState { expedited_position: 5.0, tail: vec![1] });
        let with_exp = InventoryState { net: 0.0, regular_pipeline: vec![0, 0], expedited_pipeline: vec![0] };
        assert!(compress(&with_exp).is_err());
    }

    #[test]
    fn compressed_step_example() {
        let p = CostParams::dual(2, 20.0, 5.0, 495.0);
        let s = CompressedState { expedited_position: 3.0, tail: vec![2] };
        let (next, cost) = compressed_step(&s, Action::new(1, 0), 2.0, &p).unwrap();
        assert_eq!(next, CompressedState { expedited_position: 3.0, tail: vec![1] });
        assert_eq!(cost, 5.0);
        assert_eq!(p.inventory_cost(2.0), 10.0);
        assert_eq!(p.inventory_cost(-1.0), 495.0);
    }

    #[test]
    fn zero_demand_drains_only_through_tail() {
        let p = CostParams::dual(3, 10.0, 5.0, 95.0);
        let mut s = CompressedState { expedited_position: 2.0, tail: vec![1, 3] };
        let mut costs = vec![];
        for _ in 0..4 {
            let (n, c) = compressed_step(&s, Action::NONE, 0.0, &p).unwrap();
            costs.push(c);
            s = n;
        }
        assert_eq!(costs, vec![10.0, 15.0, 30.0, 30.0]);
    }

    #[test]
    fn full_and_compressed_agree_on_random_tuples() {
        let mut rng = SimRng::new(17);
        for _ in 0..10_000 {
            let l = 1 + rng.below(4) as usize;
            let p = CostParams::dual(l, 5.0 + rng.below(20) as f64, 5.0, 95.0 + rng.below(400) as f64)
                .with_fixed_costs(rng.below(3) as f64, rng.below(3) as f64);
            let s = InventoryState {
                net: rng.below(21) as f64 - 10.0,
                regular_pipeline: (0..l).map(|_| rng.below(5)).collect(),
                expedited_pipeline: vec![],
            };
            let a = Action::new(rng.below(5), rng.below(5));
            let d = rng.below(5) as f64;
            let (full, c1) = step(&s, a, d, &p).unwrap();
            let (comp, c2) = compressed_step(&compress(&s).unwrap(), a, d, &p).unwrap();
            assert_eq!(c1, c2);
            assert_eq!(compress(&full).unwrap(), comp);
        }
    }

    proptest! {
        #[test]
        fn pipeline_conservation(
            lr in 1usize..5,
            le_raw in 0usize..4,
            steps in prop::collection::vec((0u64..6, 0u64..6, 0u64..6), 1..60),
        ) {
            let le = le_raw.min(lr - 1);
            let mut p = CostParams::dual(lr, 10.0, 5.0, 95.0);
            p.expedited_lead_time = le;
            let mut s = InventoryState::zero(&p);
            let (mut ordered, mut demanded) = (0u64, 0u64);
            for (qr, qe, d) in steps {
                let (n, c) = step(&s, Action::new(qr, qe), d as f64, &p).unwrap();
                prop_assert!(c >= 0.0);
                ordered += qr + qe;
                demanded += d;
                s = n;
                let in_transit: u64 = s.regular_pipeline.iter().chain(&s.expedited_pipeline).sum();
                let arrived = ordered - in_transit;
                prop_assert_eq!(s.net, arrived as f64 - demanded as f64);
            }
        }

        #[test]
        fn cost_matches_formula_without_fixed_charges(
            net in -20i64..20, qr in 0u64..5, qe in 0u64..5, d in 0u64..8, arr in 0u64..5,
        ) {
            let p = CostParams::dual(2, 20.0, 5.0, 495.0);
            let s = InventoryState { net: net as f64, regular_pipeline: vec![arr, 1], expedited_pipeline: vec![] };
            let (n, c) = step(&s, Action::new(qr, qe), d as f64, &p).unwrap();
            let x = net + arr as i64 + qe as i64 - d as i64;
            prop_assert_eq!(n.net, x as f64);
            let expected = 20.0 * qe as f64 + 5.0 * x.max(0) as f64 + 495.0 * (-x).max(0) as f64;
            prop_assert_eq!(c, expected);
        }
    }
}
