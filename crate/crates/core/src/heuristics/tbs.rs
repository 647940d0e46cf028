use serde::{Deserialize, Serialize};

use super::{expedited_position, order_quantity};
use crate::dynamics::Action;
use crate::sim::{Observation, OrderPolicy};

/// Tailored base-surge: a constant regular order every period, topped up by an
/// expedited order-up-to rule on the expedited inventory position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TbsPolicy {
    pub regular_quantity: u64,
    pub expedited_target: i64,
}

impl OrderPolicy for TbsPolicy {
    fn order(&self, obs: &Observation<'_>) -> Action {
        let qe = order_quantity(self.expedited_target as f64 - expedited_position(obs.state));
        Action::new(self.regular_quantity, qe)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{CostParams, InventoryState};

    fn obs(state: &InventoryState) -> Observation<'_> {
        Observation { state, period: 0, last_demand: 0.0, demand_mean: 0.0, demand_sd: 0.0 }
    }

    #[test]
    fn rule() {
        let p = CostParams::dual(3, 10.0, 40.0, 60.0);
        let tbs = TbsPolicy { regular_quantity: 2, expedited_target: 4 };
        let mut s = InventoryState::zero(&p);
        s.net = 1.0;
        s.regular_pipeline = vec![2, 5, 5];
        assert_eq!(tbs.order(&obs(&s)), Action::new(2, 1));
        s.net = 3.0;
        assert_eq!(tbs.order(&obs(&s)), Action::new(2, 0));
        let one = TbsPolicy { regular_quantity: 1, expedited_target: 0 };
        assert_eq!(one.order(&obs(&s)).regular, 1);
    }
}
