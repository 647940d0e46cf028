use std::collections::BTreeSet;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use serde_json::json;

use dualsource::demand::{ingest_empirical, read_demand_csv, synthetic_hump_series, write_demand_csv};
use dualsource::dp::{value_iteration, PolicyTable, StateSpace, ViOptions};
use dualsource::eval::{evaluate, project_policy, wilcoxon_signed_rank, write_projection_csv, EvalReport, PolicyHandle};
use dualsource::heuristics::{
    cdi_time_varying_params, optimize_cdi, optimize_di, optimize_si, BaseStockPolicy, CdiPolicy, CdiSearch,
    DualIndexPolicy, IndexSearch, SingleIndexPolicy, TbsPolicy,
};
use dualsource::nnc::{empirical_network, train, train_empirical, Features, Network, TrainOutcome, DEFAULT_HIDDEN};
use dualsource::sim::RolloutSpec;
use dualsource::{CostParams, DemandModel, SimRng};

use crate::config::{Method, PolicySpec, RunConfig, TableId};
use crate::output::OutputDir;

/// Largest regular lead time `dp` accepts; the state space grows geometrically in it.
const DP_MAX_LEAD_TIME: usize = 4;

fn solve(params: &CostParams, model: &DemandModel, cfg: &RunConfig) -> anyhow::Result<(StateSpace, dualsource::dp::DpSolution)> {
    if params.regular_lead_time > DP_MAX_LEAD_TIME {
        bail!("dp handles regular lead times up to {DP_MAX_LEAD_TIME}, got {}", params.regular_lead_time);
    }
    let mut space = StateSpace::for_instance(params, model)?;
    space.inventory_lo -= cfg.dp.widen;
    space.inventory_hi += cfg.dp.widen;
    let opts = ViOptions { eps: cfg.dp.eps, max_iter: cfg.dp.max_iter, ..ViOptions::default() };
    let sol = value_iteration(params, model, &space, opts)?;
    Ok((space, sol))
}

pub fn dp(cfg: &RunConfig) -> anyhow::Result<()> {
    let params = cfg.instance()?;
    let model = cfg.demand()?;
    let out = OutputDir::acquire(&cfg.out_dir())?;
    let (space, sol) = solve(&params, &model, cfg)?;
    let mut w = out.create("policy.csv")?;
    sol.policy.write_csv(&mut w, Some(&sol.values))?;
    w.flush()?;
    out.write_json(
        "summary.json",
        &json!({
            "command": "dp",
            "config": cfg,
            "lambda_star": sol.lambda_star,
            "states": space.len(),
            "recurrent_states": sol.policy.recurrent.len(),
        }),
    )?;
    println!("lambda* = {:.6} over {} states ({} recurrent)", sol.lambda_star, space.len(), sol.policy.recurrent.len());
    Ok(())
}

pub fn train_cmd(cfg: &RunConfig) -> anyhow::Result<()> {
    let params = cfg.instance()?;
    let model = cfg.demand()?;
    let seed = cfg.seed()?;
    let warm = match &cfg.train.warm_start {
        Some(path) => Some(load_network(path)?),
        None => None,
    };
    let out = OutputDir::acquire(&cfg.out_dir())?;

    let (outcome, extra) = if let Some(len) = model.horizon() {
        let net = match warm {
            Some(net) => net,
            None => empirical_network(&params, &model, &mut SimRng::new(seed))?,
        };
        let mut schedule = cfg.train.empirical;
        schedule.one_shot.horizon = len;
        schedule.fine_tune.horizon = len;
        schedule.one_shot.seed = seed;
        schedule.fine_tune.seed = seed;
        let res = train_empirical(&model, &params, &net, &schedule)?;
        let extra = json!({
            "one_shot_best_loss": res.one_shot.best_loss,
            "one_shot_best_epoch": res.one_shot.best_epoch,
        });
        (res.fine_tune, extra)
    } else {
        let net = match warm {
            Some(net) => net,
            None => fresh_network(cfg, &params, &model, seed)?,
        };
        let tc = dualsource::nnc::TrainingConfig { seed, ..cfg.train.config };
        (train(&params, &model, &net, &tc)?, json!({}))
    };

    write_losses(&out, &outcome)?;
    out.write_text("network.json", &outcome.network.to_json()?)?;
    out.write_json(
        "summary.json",
        &json!({
            "command": "train",
            "config": cfg,
            "best_loss": outcome.best_loss,
            "best_epoch": outcome.best_epoch,
            "epochs": outcome.losses.len(),
            "parameters": outcome.network.parameter_count(),
            "empirical": extra,
        }),
    )?;
    println!("best loss {:.6} at epoch {} of {}", outcome.best_loss, outcome.best_epoch, outcome.losses.len());
    Ok(())
}

/// The default architecture unless the config asks for other widths or features, in
/// which case the stack gets an identity output layer and unit scales.
fn fresh_network(cfg: &RunConfig, params: &CostParams, model: &DemandModel, seed: u64) -> anyhow::Result<Network> {
    let mut rng = SimRng::new(seed);
    if cfg.train.features == Features::Full && cfg.train.hidden == DEFAULT_HIDDEN {
        return Ok(Network::default_for(params, model, &mut rng)?);
    }
    let mut net = Network::new(cfg.train.features, params, &cfg.train.hidden)?;
    net.init_weights(&mut rng);
    Ok(net)
}

fn write_losses(out: &OutputDir, outcome: &TrainOutcome) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(out.create("loss.csv")?);
    w.write_record(["epoch", "loss"])?;
    for (i, l) in outcome.losses.iter().enumerate() {
        w.write_record([i.to_string(), format!("{l}")])?;
    }
    w.flush()?;
    Ok(())
}

fn load_network(path: &Path) -> anyhow::Result<Network> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Network::from_json(&text).with_context(|| format!("loading network {}", path.display()))?)
}

fn load_table(path: &Path) -> anyhow::Result<PolicyTable> {
    let f = File::open(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(PolicyTable::read_csv(f).with_context(|| format!("loading policy table {}", path.display()))?)
}

fn resolve(spec: &PolicySpec, params: &CostParams, model: &DemandModel, cfg: &RunConfig) -> anyhow::Result<PolicyHandle> {
    let search_seed = || cfg.seed();
    Ok(match spec {
        PolicySpec::BaseStock { target: Some(t) } => PolicyHandle::BaseStock(BaseStockPolicy { target: *t }),
        PolicySpec::BaseStock { target: None } => PolicyHandle::BaseStock(BaseStockPolicy::optimal(params, model)?),
        PolicySpec::SingleIndex { regular_target: Some(t), delta: Some(d) } => {
            PolicyHandle::SingleIndex(SingleIndexPolicy { regular_target: *t, delta: *d })
        }
        PolicySpec::SingleIndex { regular_target: None, delta: None } => {
            let search = IndexSearch { seed: search_seed()?, ..IndexSearch::default() };
            PolicyHandle::SingleIndex(optimize_si(params, model, search)?)
        }
        PolicySpec::DualIndex { expedited_target: Some(t), delta: Some(d) } => {
            PolicyHandle::DualIndex(DualIndexPolicy { expedited_target: *t, delta: *d })
        }
        PolicySpec::DualIndex { expedited_target: None, delta: None } => {
            let search = IndexSearch { seed: search_seed()?, ..IndexSearch::default() };
            PolicyHandle::DualIndex(optimize_di(params, model, search)?)
        }
        PolicySpec::SingleIndex { .. } | PolicySpec::DualIndex { .. } => {
            bail!("give both index-policy fields or neither")
        }
        PolicySpec::Cdi { regular_level: Some(r), expedited_level: Some(e), regular_cap: Some(c) } => {
            PolicyHandle::Cdi(CdiPolicy::constant(*r, *e, *c))
        }
        PolicySpec::Cdi { regular_level: None, expedited_level: None, regular_cap: None } => {
            let search = CdiSearch { seed: search_seed()?, ..CdiSearch::default() };
            PolicyHandle::Cdi(optimize_cdi(params, model, search)?)
        }
        PolicySpec::Cdi { .. } => bail!("give all three CDI levels or none"),
        PolicySpec::CdiTimeVarying { variant } => PolicyHandle::Cdi(cdi_time_varying_params(model, params, *variant)?),
        PolicySpec::Tbs { regular_quantity, expedited_target } => {
            PolicyHandle::Tbs(TbsPolicy { regular_quantity: *regular_quantity, expedited_target: *expedited_target })
        }
        PolicySpec::Optimal => PolicyHandle::Table(solve(params, model, cfg)?.1.policy),
        PolicySpec::Table { path } => PolicyHandle::Table(load_table(path)?),
        PolicySpec::Network { path } => PolicyHandle::Network(load_network(path)?),
    })
}

fn write_report(out: &OutputDir, prefix: &str, report: &EvalReport) -> anyhow::Result<()> {
    report.write_csv(out.create(&format!("{prefix}costs.csv"))?)?;
    report.write_cdf_csv(out.create(&format!("{prefix}cdf.csv"))?)?;
    Ok(())
}

pub fn eval(cfg: &RunConfig) -> anyhow::Result<()> {
    let params = cfg.instance()?;
    let model = cfg.demand()?;
    let seed = cfg.seed()?;
    let spec = cfg.eval.policy.as_ref().context("eval needs a policy: pass --policy or set eval.policy")?;
    let mut horizon = cfg.eval.horizon;
    if let Some(len) = model.horizon() {
        horizon = horizon.min(len);
    }
    let rollout = RolloutSpec::new(cfg.eval.n_reps, horizon, seed).with_burn_in(cfg.eval.burn_in);
    let out = OutputDir::acquire(&cfg.out_dir())?;

    let policy = resolve(spec, &params, &model, cfg)?;
    let report = evaluate(&policy, &params, &model, rollout)?;
    write_report(&out, "", &report)?;
    println!("{}: mean {:.4} (se {:.4}, median {:.4})", report.policy, report.mean, report.std_error, report.median);

    let mut comparison = serde_json::Value::Null;
    if let Some(other) = &cfg.eval.compare {
        let baseline = resolve(other, &params, &model, cfg)?;
        let base = evaluate(&baseline, &params, &model, rollout)?;
        write_report(&out, "compare_", &base)?;
        // Positive differences favour the evaluated policy.
        let diffs: Vec<f64> = base.costs.iter().zip(&report.costs).map(|(b, a)| b - a).collect();
        let test = wilcoxon_signed_rank(&diffs)?;
        println!(
            "{}: mean {:.4} (se {:.4}); one-sided Wilcoxon p = {:.3e}",
            base.policy, base.mean, base.std_error, test.p_value
        );
        comparison = json!({ "baseline": base.summary(), "wilcoxon": test });
    }

    if let Some(proj) = cfg.eval.project {
        let spec = RolloutSpec::new(1, proj.periods, seed).with_burn_in(proj.burn_in);
        let rows = project_policy(&policy, &params, &model, spec)?;
        write_projection_csv(out.create("projection.csv")?, &rows)?;
    }

    out.write_json(
        "summary.json",
        &json!({
            "command": "eval",
            "config": cfg,
            "resolved_policy": describe(&policy),
            "report": report.summary(),
            "comparison": comparison,
        }),
    )?;
    Ok(())
}

/// Policy parameters worth recording; tables and networks are files already.
fn describe(policy: &PolicyHandle) -> serde_json::Value {
    let v = match policy {
        PolicyHandle::BaseStock(p) => serde_json::to_value(p),
        PolicyHandle::SingleIndex(p) => serde_json::to_value(p),
        PolicyHandle::DualIndex(p) => serde_json::to_value(p),
        PolicyHandle::Cdi(p) => serde_json::to_value(p),
        PolicyHandle::Tbs(p) => serde_json::to_value(p),
        PolicyHandle::Table(_) | PolicyHandle::Network(_) => Ok(serde_json::Value::Null),
    };
    json!({ "kind": policy.label(), "parameters": v.unwrap_or(serde_json::Value::Null) })
}

/// One cell of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lead_time: usize,
    pub demand_max: i64,
    pub expedited_cost: f64,
    pub backlog_cost: f64,
    pub method: Method,
    pub cost: f64,
    /// Zero for exact values.
    pub std_error: f64,
}

impl SweepRow {
    fn key(&self) -> String {
        format!("{}/{}/{}/{}/{:?}", self.lead_time, self.demand_max, self.expedited_cost, self.backlog_cost, self.method)
    }
}

fn sweep_instance(table: TableId, lr: usize, ce: f64, b: f64) -> CostParams {
    match table {
        TableId::Costs => CostParams::dual(lr, ce, 5.0, b),
        TableId::FixedCosts => CostParams::dual(lr, ce, 5.0, b).with_fixed_costs(5.0, 10.0),
        TableId::LowService => CostParams::dual(lr, ce, 15.0, 85.0),
    }
}

pub fn sweep(cfg: &RunConfig) -> anyhow::Result<()> {
    let s = &cfg.sweep;
    let backlogs = if s.table == TableId::LowService { vec![85.0] } else { s.backlog_costs.clone() };
    let mut cells = Vec::new();
    for &lr in &s.lead_times {
        for &dmax in &s.demand_max {
            for &ce in &s.expedited_costs {
                for &b in &backlogs {
                    for &m in &s.methods {
                        cells.push((lr, dmax, ce, b, m));
                    }
                }
            }
        }
    }
    if s.dry_run {
        for (lr, dmax, ce, b, m) in &cells {
            println!("l_r={lr} U{{0,{dmax}}} c_e={ce} b={b} {m:?}");
        }
        println!("{} cells", cells.len());
        return Ok(());
    }
    let needs_seed = s.methods.iter().any(|m| *m != Method::Dp);
    let seed = if needs_seed { cfg.seed()? } else { cfg.seed.unwrap_or(0) };
    let out = OutputDir::acquire(&cfg.out_dir())?;
    let rows_path = out.path("rows.csv");

    let mut rows: Vec<SweepRow> = Vec::new();
    if rows_path.exists() {
        let mut r = csv::Reader::from_path(&rows_path)?;
        for row in r.deserialize() {
            rows.push(row.with_context(|| format!("resuming from {}", rows_path.display()))?);
        }
    }
    let done: BTreeSet<String> = rows.iter().map(SweepRow::key).collect();
    let append = !rows.is_empty();
    let file = std::fs::OpenOptions::new().create(true).append(true).open(&rows_path)?;
    let mut w = csv::WriterBuilder::new().has_headers(!append).from_writer(file);

    for (lr, dmax, ce, b, method) in cells {
        let params = sweep_instance(s.table, lr, ce, b);
        let model = DemandModel::uniform(0, dmax);
        let mut row = SweepRow { lead_time: lr, demand_max: dmax, expedited_cost: ce, backlog_cost: b, method, cost: 0.0, std_error: 0.0 };
        if done.contains(&row.key()) {
            continue;
        }
        let rollout = RolloutSpec::new(s.n_reps, s.horizon, seed);
        match method {
            Method::Dp => {
                row.cost = solve(&params, &model, cfg)?.1.lambda_star;
            }
            Method::Cdi => {
                let cdi = optimize_cdi(&params, &model, CdiSearch { seed, ..CdiSearch::default() })?;
                let rep = evaluate(&PolicyHandle::Cdi(cdi), &params, &model, rollout)?;
                (row.cost, row.std_error) = (rep.mean, rep.std_error);
            }
            Method::Nnc => {
                let net = fresh_network(cfg, &params, &model, seed)?;
                let tc = dualsource::nnc::TrainingConfig { seed, ..cfg.train.config };
                let trained = train(&params, &model, &net, &tc)?;
                let rep = evaluate(&PolicyHandle::Network(trained.network), &params, &model, rollout)?;
                (row.cost, row.std_error) = (rep.mean, rep.std_error);
            }
        }
        println!("l_r={lr} U{{0,{dmax}}} c_e={ce} b={b} {method:?}: {:.4}", row.cost);
        w.serialize(&row)?;
        w.flush()?;
        rows.push(row);
    }
    drop(w);
    out.write_json("summary.json", &json!({ "command": "sweep", "config": cfg, "rows": rows }))?;
    Ok(())
}

pub fn ingest(cfg: &RunConfig) -> anyhow::Result<()> {
    let records = match (&cfg.ingest.input, cfg.ingest.synthetic_series) {
        (Some(path), None) => {
            let f = File::open(path).with_context(|| format!("reading {}", path.display()))?;
            read_demand_csv(f)?
        }
        (None, Some(n)) => synthetic_hump_series(n, cfg.seed()?),
        _ => bail!("ingest needs exactly one of an input file or a synthetic series count"),
    };
    let model = ingest_empirical(&records)?;
    let out = OutputDir::acquire(&cfg.out_dir())?;
    if cfg.ingest.synthetic_series.is_some() {
        write_demand_csv(out.create("series.csv")?, &records)?;
    }
    out.write_json("demand.json", &model)?;
    let periods = model.horizon().unwrap_or(0);
    out.write_json("summary.json", &json!({ "command": "ingest", "config": cfg, "records": records.len(), "periods": periods }))?;
    println!("{} records over {periods} periods", records.len());
    Ok(())
}
