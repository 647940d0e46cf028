//! Run configuration files.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use dualsource::heuristics::CdiVariant;
use dualsource::nnc::{EmpiricalSchedule, Features, TrainingConfig, DEFAULT_HIDDEN};
use dualsource::{CostParams, DemandModel};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub instance: Option<CostParams>,
    #[serde(default)]
    pub demand: Option<DemandModel>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub dp: DpSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub ingest: IngestSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            instance: None,
            demand: None,
            seed: None,
            out: None,
            dp: DpSection::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
            sweep: SweepSection::default(),
            ingest: IngestSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            bail!("config schema version {} is not supported (expected {SCHEMA_VERSION})", cfg.schema_version);
        }
        Ok(cfg)
    }

    pub fn instance(&self) -> anyhow::Result<CostParams> {
        let p = self.instance.context("config needs an `instance`")?;
        p.validate()?;
        Ok(p)
    }

    pub fn demand(&self) -> anyhow::Result<DemandModel> {
        let d = self.demand.clone().context("config needs a `demand` model")?;
        d.validate()?;
        Ok(d)
    }

    pub fn seed(&self) -> anyhow::Result<u64> {
        self.seed.context("this command is randomized: pass --seed or set `seed` in the config")
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DpSection {
    pub eps: f64,
    pub max_iter: usize,
    /// Extra inventory levels added on both sides of the default box.
    pub widen: i64,
}

impl Default for DpSection {
    fn default() -> Self {
        Self { eps: 1e-9, max_iter: 1_000_000, widen: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub config: TrainingConfig,
    pub hidden: Vec<usize>,
    pub features: Features,
    pub warm_start: Option<PathBuf>,
    /// Used instead of `config` when the demand is a truncated-normal process.
    pub empirical: EmpiricalSchedule,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            config: TrainingConfig::default(),
            hidden: DEFAULT_HIDDEN.to_vec(),
            features: Features::Full,
            warm_start: None,
            empirical: EmpiricalSchedule::default(),
        }
    }
}

/// A policy to evaluate, either given outright, optimized on the spot, or loaded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    /// Optimal base stock when `target` is omitted.
    BaseStock {
        #[serde(default)]
        target: Option<i64>,
    },
    /// Searched when both fields are omitted.
    SingleIndex {
        #[serde(default)]
        regular_target: Option<i64>,
        #[serde(default)]
        delta: Option<i64>,
    },
    DualIndex {
        #[serde(default)]
        expedited_target: Option<i64>,
        #[serde(default)]
        delta: Option<i64>,
    },
    /// Searched when all three levels are omitted.
    Cdi {
        #[serde(default)]
        regular_level: Option<i64>,
        #[serde(default)]
        expedited_level: Option<i64>,
        #[serde(default)]
        regular_cap: Option<i64>,
    },
    CdiTimeVarying {
        variant: CdiVariant,
    },
    Tbs {
        regular_quantity: u64,
        expedited_target: i64,
    },
    /// Solve value iteration for the instance.
    Optimal,
    /// A policy table written by `dp`.
    Table {
        path: PathBuf,
    },
    /// A network written by `train`.
    Network {
        path: PathBuf,
    },
}

impl PolicySpec {
    /// Guess the kind of a policy file from its extension.
    pub fn from_path(path: &Path) -> anyhow::Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Ok(PolicySpec::Network { path: path.to_path_buf() }),
            Some("csv") => Ok(PolicySpec::Table { path: path.to_path_buf() }),
            _ => bail!("cannot tell the policy kind of {} (expected .json or .csv)", path.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub policy: Option<PolicySpec>,
    /// Second policy evaluated on the same demand paths.
    pub compare: Option<PolicySpec>,
    pub n_reps: usize,
    pub horizon: usize,
    pub burn_in: usize,
    pub project: Option<ProjectSection>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { policy: None, compare: None, n_reps: 500, horizon: 1000, burn_in: 0, project: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProjectSection {
    pub periods: usize,
    pub burn_in: usize,
}

impl Default for ProjectSection {
    fn default() -> Self {
        Self { periods: 1_000_000, burn_in: 1000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableId {
    /// h = 5, no fixed costs, b in {95, 495}.
    Costs,
    /// As `Costs` with f_r = 5, f_e = 10.
    FixedCosts,
    /// h = 15, b = 85.
    LowService,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Dp,
    Cdi,
    Nnc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub table: TableId,
    pub lead_times: Vec<usize>,
    pub expedited_costs: Vec<f64>,
    /// Ignored for the low-service table.
    pub backlog_costs: Vec<f64>,
    /// Upper ends of the uniform demand supports.
    pub demand_max: Vec<i64>,
    pub methods: Vec<Method>,
    pub n_reps: usize,
    pub horizon: usize,
    pub dry_run: bool,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            table: TableId::Costs,
            lead_times: vec![2],
            expedited_costs: vec![5.0, 10.0, 20.0],
            backlog_costs: vec![95.0, 495.0],
            demand_max: vec![4],
            methods: vec![Method::Dp, Method::Cdi],
            n_reps: 500,
            horizon: 1000,
            dry_run: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestSection {
    /// CSV with columns `period,series_id,demand`.
    pub input: Option<PathBuf>,
    /// Generate this many synthetic hump-shaped series instead of reading a file.
    pub synthetic_series: Option<usize>,
}

impl Default for IngestSection {
    fn default() -> Self {
        Self { input: None, synthetic_series: None }
    }
}
