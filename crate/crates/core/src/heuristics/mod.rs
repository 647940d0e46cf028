//! Classic ordering heuristics and their parameter searches.
//!
//! Order quantities are integers. Rules that produce a real-valued gap (time-varying
//! levels, continuous demand) order the ceiling of the gap.

mod base_stock;
mod cdi;
mod index;
mod tbs;

pub use base_stock::BaseStockPolicy;
pub use cdi::{cdi_time_varying_params, optimize_cdi, CdiPolicy, CdiSearch, CdiVariant, Level};
pub use index::{optimize_di, optimize_si, DualIndexPolicy, IndexSearch, SingleIndexPolicy};
pub use tbs::TbsPolicy;

use crate::dynamics::InventoryState;

/// Integer order covering a real-valued gap; gaps within 1e-9 of an integer are not
/// rounded up past it.
pub(crate) fn order_quantity(gap: f64) -> u64 {
    if gap <= 0.0 || gap.is_nan() {
        0
    } else {
        (gap - 1e-9).ceil().max(0.0) as u64
    }
}

/// Net inventory plus every unit due within the expedited lead time: the expedited
/// pipeline and the regular orders arriving by then.
pub(crate) fn expedited_position(state: &InventoryState) -> f64 {
    let le = state.expedited_pipeline.len();
    state.expedited_pipeline.iter().map(|&q| q as f64).sum::<f64>() + state.position_through(le)
}

/// Smallest sample `x` with empirical `P(X <= x) >= p`; sorts in place.
pub(crate) fn empirical_quantile(samples: &mut [f64], p: f64) -> f64 {
    samples.sort_by(|a, b| a.total_cmp(b));
    let k = ((p * samples.len() as f64).ceil() as usize).clamp(1, samples.len());
    samples[k - 1]
}
