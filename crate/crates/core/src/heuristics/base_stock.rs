use serde::{Deserialize, Serialize};

use super::order_quantity;
use crate::demand::{quantile, DemandModel};
use crate::dynamics::{Action, CostParams, InventoryState};
use crate::error::Result;
use crate::sim::{Observation, OrderPolicy};

/// Single-supplier order-up-to rule on the inventory position.
///
/// The supplier is the expedited channel: a single-sourcing system with lead time `l`
/// is modelled with `l_e = l` and an idle regular channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseStockPolicy {
    pub target: i64,
}

impl BaseStockPolicy {
    /// Critical-fractile level: the `b/(b+h)` quantile of demand over `l_e + 1` periods.
    pub fn optimal(params: &CostParams, model: &DemandModel) -> Result<Self> {
        let target = quantile(model, params.expedited_lead_time + 1, params.critical_ratio())?;
        Ok(Self { target })
    }

    pub fn order_quantity(&self, state: &InventoryState) -> u64 {
        order_quantity(self.target as f64 - state.position())
    }
}

impl OrderPolicy for BaseStockPolicy {
    fn order(&self, obs: &Observation<'_>) -> Action {
        Action::new(0, self.order_quantity(obs.state))
    }
}
