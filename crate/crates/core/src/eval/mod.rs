//! Monte-Carlo evaluation and comparison of policies.
//!
//! Every evaluation draws realization `r` from stream `r` of its seed, so two policies
//! evaluated under one seed face the same demand paths and their per-realization costs
//! can be compared pairwise.

mod projection;
mod wilcoxon;

use std::io::Write;

use serde::Serialize;

pub use projection::{policy_rmse, project_policy, recurrent_count, write_projection_csv, ProjectionRow};
pub use wilcoxon::{wilcoxon_signed_rank, WilcoxonResult};

use crate::demand::DemandModel;
use crate::dp::PolicyTable;
use crate::dynamics::CostParams;
use crate::error::{Error, Result};
use crate::heuristics::{BaseStockPolicy, CdiPolicy, DualIndexPolicy, SingleIndexPolicy, TbsPolicy};
use crate::nnc::Network;
use crate::sim::{rollout_with, OrderPolicy, RolloutSpec};

/// Any policy the crate can produce.
#[derive(Debug, Clone)]
pub enum PolicyHandle {
    BaseStock(BaseStockPolicy),
    SingleIndex(SingleIndexPolicy),
    DualIndex(DualIndexPolicy),
    Cdi(CdiPolicy),
    Tbs(TbsPolicy),
    Table(PolicyTable),
    Network(Network),
}

impl PolicyHandle {
    pub fn policy(&self) -> &dyn OrderPolicy {
        match self {
            PolicyHandle::BaseStock(p) => p,
            PolicyHandle::SingleIndex(p) => p,
            PolicyHandle::DualIndex(p) => p,
            PolicyHandle::Cdi(p) => p,
            PolicyHandle::Tbs(p) => p,
            PolicyHandle::Table(p) => p,
            PolicyHandle::Network(p) => p,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            PolicyHandle::BaseStock(_) => "base_stock",
            PolicyHandle::SingleIndex(_) => "single_index",
            PolicyHandle::DualIndex(_) => "dual_index",
            PolicyHandle::Cdi(_) => "cdi",
            PolicyHandle::Tbs(_) => "tbs",
            PolicyHandle::Table(_) => "table",
            PolicyHandle::Network(_) => "network",
        }
    }

    /// Rejects policies built for a different instance shape.
    pub fn check(&self, params: &CostParams) -> Result<()> {
        match self {
            PolicyHandle::Network(net) => net.validate(Some(params)),
            PolicyHandle::Table(t) => {
                if !params.is_reduced() {
                    return Err(Error::Unsupported("policy tables need l_e = 0 and c_r = 0".into()));
                }
                if t.space.lead_gap != params.lead_gap() {
                    return Err(Error::DimensionMismatch { expected: params.lead_gap(), got: t.space.lead_gap });
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Per-realization average costs of one policy plus summary statistics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub policy: String,
    pub params: CostParams,
    pub n_reps: usize,
    pub horizon: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub mean: f64,
    pub median: f64,
    pub std_error: f64,
    /// Hash of every demand drawn, in simulation order. Equal for two reports exactly
    /// when both saw the same demand paths.
    pub demand_fingerprint: u64,
    pub costs: Vec<f64>,
}

impl EvalReport {
    fn new(policy: &str, params: &CostParams, spec: RolloutSpec, costs: Vec<f64>, demand_fingerprint: u64) -> Self {
        let n = costs.len() as f64;
        let mean = costs.iter().sum::<f64>() / n;
        let var = if costs.len() > 1 {
            costs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            policy: policy.to_string(),
            params: *params,
            n_reps: spec.n_reps,
            horizon: spec.horizon,
            burn_in: spec.burn_in,
            seed: spec.seed,
            mean,
            median: median(&costs),
            std_error: (var / n).sqrt(),
            demand_fingerprint,
            costs,
        }
    }

    /// Empirical CDF at each sorted per-realization cost.
    pub fn cdf(&self) -> Vec<(f64, f64)> {
        let mut sorted = self.costs.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        sorted.into_iter().enumerate().map(|(i, c)| (c, (i + 1) as f64 / n)).collect()
    }

    /// One row per realization.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["realization", "cost"])?;
        for (i, c) in self.costs.iter().enumerate() {
            w.write_record([i.to_string(), format!("{c}")])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_cdf_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["cost", "cdf"])?;
        for (c, p) in self.cdf() {
            w.write_record([format!("{c}"), format!("{p}")])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Everything except the per-realization costs.
    pub fn summary(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("report serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("costs");
        }
        v
    }
}

fn median(xs: &[f64]) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0100_0000_01b3;

fn fnv_mix(hash: u64, x: u64) -> u64 {
    x.to_le_bytes().iter().fold(hash, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Simulate `spec.n_reps` realizations of `policy` and report their average costs.
pub fn evaluate(policy: &PolicyHandle, params: &CostParams, model: &DemandModel, spec: RolloutSpec) -> Result<EvalReport> {
    policy.check(params)?;
    let mut fingerprint = FNV_OFFSET;
    let costs = rollout_with(policy.policy(), params, model, spec, |tr| {
        fingerprint = fnv_mix(fingerprint, tr.demand.to_bits());
    })?;
    Ok(EvalReport::new(policy.label(), params, spec, costs, fingerprint))
}
