//! Average-cost value iteration on the compressed state space.
//!
//! Requires the `l_e = 0`, `c_r = 0` reduction. A state is the expedited inventory
//! position `I_e` (bounded to `[lo, hi]`) and the `l - 1` most recent regular orders.
//! Transitions that would leave the box are clamped back onto it; leaving through the
//! bottom also carries a large penalty so no optimal action relies on it, while
//! overflow at the top is clamped for free (it is unavoidable from some corner states
//! and never reached from the origin by a sensible policy).

use std::collections::VecDeque;
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;

use crate::demand::DemandModel;
use crate::dynamics::{compress, Action, CompressedState, CostParams};
use crate::error::{Error, Result};
use crate::sim::{Observation, OrderPolicy};

const ESCAPE_PENALTY: f64 = 1e9;

/// Bounded compressed state space with a square order domain `{0..=max_order}²`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateSpace {
    pub inventory_lo: i64,
    pub inventory_hi: i64,
    pub max_order: u64,
    pub lead_gap: usize,
}

impl StateSpace {
    /// Default box for a discrete demand model: `q_max = D_max`,
    /// `lo = -(l+1) D_max - 5`, `hi = (l+2) D_max + 5`.
    pub fn for_instance(params: &CostParams, model: &DemandModel) -> Result<Self> {
        let d_max = model.max_demand()?;
        let l = params.lead_gap() as i64;
        Ok(Self {
            inventory_lo: -(l + 1) * d_max - 5,
            inventory_hi: (l + 2) * d_max + 5,
            max_order: d_max as u64,
            lead_gap: params.lead_gap(),
        })
    }

    /// Same space with the inventory box widened by `by` on both sides.
    pub fn widened(&self, by: i64) -> Self {
        Self { inventory_lo: self.inventory_lo - by, inventory_hi: self.inventory_hi + by, ..self.clone() }
    }

    fn validate(&self) -> Result<()> {
        if self.lead_gap == 0 {
            return Err(Error::InvalidParams("lead-time gap must be positive".into()));
        }
        if !(self.inventory_lo <= 0 && 0 <= self.inventory_hi) {
            return Err(Error::InvalidParams("inventory box must contain zero".into()));
        }
        Ok(())
    }

    fn radix(&self) -> usize {
        self.max_order as usize + 1
    }

    pub fn tail_count(&self) -> usize {
        self.radix().pow(self.lead_gap as u32 - 1)
    }

    fn inventory_count(&self) -> usize {
        (self.inventory_hi - self.inventory_lo + 1) as usize
    }

    pub fn len(&self) -> usize {
        self.inventory_count() * self.tail_count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Index of a state, `None` outside the box or for fractional positions.
    pub fn index(&self, state: &CompressedState) -> Option<usize> {
        let ie = state.expedited_position;
        if ie.fract() != 0.0 || state.tail.len() + 1 != self.lead_gap {
            return None;
        }
        let ie = ie as i64;
        if ie < self.inventory_lo || ie > self.inventory_hi {
            return None;
        }
        let mut code = 0usize;
        for &q in &state.tail {
            if q > self.max_order {
                return None;
            }
            code = code * self.radix() + q as usize;
        }
        Some((ie - self.inventory_lo) as usize * self.tail_count() + code)
    }

    pub fn state(&self, index: usize) -> CompressedState {
        let nt = self.tail_count();
        let ie = self.inventory_lo + (index / nt) as i64;
        let mut code = index % nt;
        let mut tail = vec![0u64; self.lead_gap - 1];
        for slot in tail.iter_mut().rev() {
            *slot = (code % self.radix()) as u64;
            code /= self.radix();
        }
        CompressedState { expedited_position: ie as f64, tail }
    }

    fn zero_index(&self) -> usize {
        (-self.inventory_lo) as usize * self.tail_count()
    }
}

/// Precomputed transition structure shared by value iteration and chain analysis.
struct Model<'a> {
    space: &'a StateSpace,
    params: &'a CostParams,
    pmf: Vec<(i64, f64)>,
    /// Expected holding/backlog cost `E f(x - D)` indexed by `x - lo`.
    stage: Vec<f64>,
}

impl<'a> Model<'a> {
    fn new(space: &'a StateSpace, params: &'a CostParams, model: &DemandModel) -> Result<Self> {
        params.validate()?;
        model.validate()?;
        space.validate()?;
        if !params.is_reduced() {
            return Err(Error::Unsupported(
                "dynamic programming requires zero expedited lead time and zero regular unit cost".into(),
            ));
        }
        if space.lead_gap != params.lead_gap() {
            return Err(Error::DimensionMismatch { expected: params.lead_gap(), got: space.lead_gap });
        }
        let pmf: Vec<(i64, f64)> = model.pmf()?.into_iter().filter(|(_, p)| *p > 0.0).collect();
        if space.max_order < model.max_demand()? as u64 {
            return Err(Error::InvalidParams("order bound below maximum demand".into()));
        }
        let span = space.inventory_count() + space.max_order as usize;
        let stage = (0..span)
            .map(|i| {
                let x = space.inventory_lo + i as i64;
                pmf.iter().map(|&(d, p)| p * params.inventory_cost((x - d) as f64)).sum()
            })
            .collect();
        Ok(Self { space, params, pmf, stage })
    }

    fn tail_shift(&self) -> usize {
        self.space.tail_count() / self.space.radix()
    }

    /// Deterministic part of acting: expected period cost, the pre-demand level
    /// `y = I_e + q_e + arrival` and the next tail code.
    fn act(&self, index: usize, action: Action) -> (f64, i64, usize) {
        let nt = self.space.tail_count();
        let ie = self.space.inventory_lo + (index / nt) as i64;
        let code = index % nt;
        let (arrival, next_code) = if self.space.lead_gap == 1 {
            (action.regular as i64, 0)
        } else {
            let shift = self.tail_shift();
            ((code / shift) as i64, (code % shift) * self.space.radix() + action.regular as usize)
        };
        let raised = ie + action.expedited as i64;
        let cost = self.params.order_cost(action) + self.stage[(raised - self.space.inventory_lo) as usize];
        (cost, raised + arrival, next_code)
    }

    /// Successor index for pre-demand level `y`, demand `d`; also whether the bottom
    /// of the box was breached.
    fn successor(&self, y: i64, d: i64, next_code: usize) -> (usize, bool) {
        let raw = y - d;
        let ie = raw.clamp(self.space.inventory_lo, self.space.inventory_hi);
        ((ie - self.space.inventory_lo) as usize * self.space.tail_count() + next_code, raw < self.space.inventory_lo)
    }

    fn actions(&self) -> impl Iterator<Item = Action> + '_ {
        let q = self.space.max_order;
        (0..=q).flat_map(move |qe| (0..=q).map(move |qr| Action::new(qr, qe)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViOptions {
    /// Stop once the span of `J_{k+1} - J_k` (discounted: its sup norm) is below this.
    pub eps: f64,
    /// 1 for average cost.
    pub gamma: f64,
    pub max_iter: usize,
}

impl Default for ViOptions {
    fn default() -> Self {
        Self { eps: 1e-9, gamma: 1.0, max_iter: 1_000_000 }
    }
}

/// Value function after `iterations` Bellman updates from `J_0 = 0`.
#[derive(Debug, Clone)]
pub struct ValueTable {
    pub values: Vec<f64>,
    /// `J_k(s) / k`.
    pub lambda: Vec<f64>,
    pub iterations: usize,
}

/// Deterministic map from compressed states to actions, with the recurrent set of the
/// induced chain started at the origin.
#[derive(Debug, Clone)]
pub struct PolicyTable {
    pub space: StateSpace,
    pub actions: Vec<Action>,
    pub recurrent: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct DpSolution {
    pub lambda_star: f64,
    pub values: ValueTable,
    pub policy: PolicyTable,
}

pub fn value_iteration(
    params: &CostParams,
    model: &DemandModel,
    space: &StateSpace,
    opts: ViOptions,
) -> Result<DpSolution> {
    if !(opts.gamma > 0.0 && opts.gamma <= 1.0) {
        return Err(Error::InvalidParams(format!("discount {}", opts.gamma)));
    }
    let m = Model::new(space, params, model)?;
    let n = space.len();
    let nt = space.tail_count();
    let y_lo = space.inventory_lo;
    let y_count = space.inventory_count() + 2 * space.max_order as usize;
    let actions: Vec<Action> = m.actions().collect();

    let mut j = vec![0.0; n];
    let mut next = vec![0.0; n];
    // w[y, code'] = E[J(successor) + penalty], rebuilt each sweep.
    let mut w = vec![0.0; y_count * nt];
    let mut iterations = 0;
    let mut span = f64::INFINITY;
    let mut lambda_star = 0.0;
    let mut diff = vec![f64::NAN; n];
    let ref_state = space.zero_index();

    while iterations < opts.max_iter {
        fill_continuation(&m, &j, &mut w, y_lo, y_count, nt);
        for (s, out) in next.iter_mut().enumerate() {
            let mut best = f64::INFINITY;
            for &a in &actions {
                let (c, y, code) = m.act(s, a);
                let v = c + opts.gamma * w[(y - y_lo) as usize * nt + code];
                if v < best {
                    best = v;
                }
            }
            *out = best;
        }
        iterations += 1;
        let (mut lo, mut hi, mut drift) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64);
        for ((d, a), b) in diff.iter_mut().zip(&next).zip(&j) {
            let delta = a - b;
            drift = drift.max((delta - *d).abs());
            *d = delta;
            lo = lo.min(delta);
            hi = hi.max(delta);
        }
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(Error::NonFinite("value function".into()));
        }
        std::mem::swap(&mut j, &mut next);
        if opts.gamma < 1.0 {
            span = hi.abs().max(lo.abs());
            lambda_star = (1.0 - opts.gamma) * j[ref_state];
        } else if iterations > 1 && drift < 1e-3 * opts.eps && hi - lo >= opts.eps {
            // Several closed classes with different gains (e.g. demand that never
            // arrives): per-state increments have settled, report the origin's gain.
            span = 0.0;
            lambda_star = diff[ref_state];
        } else {
            span = hi - lo;
            lambda_star = 0.5 * (lo + hi);
        }
        if span < opts.eps {
            break;
        }
    }
    if span >= opts.eps {
        return Err(Error::NotConverged { iterations, span });
    }

    // Greedy policy; ties go to the smallest expedited, then smallest regular order.
    fill_continuation(&m, &j, &mut w, y_lo, y_count, nt);
    let policy_actions: Vec<Action> = (0..n)
        .map(|s| {
            let mut best: Option<(f64, Action)> = None;
            for &a in &actions {
                let (c, y, code) = m.act(s, a);
                let v = c + opts.gamma * w[(y - y_lo) as usize * nt + code];
                match best {
                    Some((b, _)) if v >= b - 1e-10 * b.abs().max(1.0) => {}
                    _ => best = Some((v, a)),
                }
            }
            best.map_or(Action::NONE, |(_, a)| a)
        })
        .collect();
    let lambda = j.iter().map(|v| v / iterations as f64).collect();
    let mut policy = PolicyTable { space: space.clone(), actions: policy_actions, recurrent: vec![] };
    policy.recurrent = recurrent_indices(&policy, &m)?.into_iter().flatten().collect();
    policy.recurrent.sort_unstable();
    Ok(DpSolution { lambda_star, values: ValueTable { values: j, lambda, iterations }, policy })
}

fn fill_continuation(m: &Model<'_>, j: &[f64], w: &mut [f64], y_lo: i64, y_count: usize, nt: usize) {
    for yi in 0..y_count {
        let y = y_lo + yi as i64;
        for code in 0..nt {
            let mut acc = 0.0;
            for &(d, p) in &m.pmf {
                let (s, escaped) = m.successor(y, d, code);
                acc += p * (j[s] + if escaped { ESCAPE_PENALTY } else { 0.0 });
            }
            w[yi * nt + code] = acc;
        }
    }
}

impl PolicyTable {
    /// Tabulate an arbitrary rule over every state of `space`.
    pub fn from_fn(
        space: &StateSpace,
        params: &CostParams,
        model: &DemandModel,
        mut rule: impl FnMut(&CompressedState) -> Action,
    ) -> Result<Self> {
        let actions = (0..space.len())
            .map(|i| {
                let a = rule(&space.state(i));
                Action::new(a.regular.min(space.max_order), a.expedited.min(space.max_order))
            })
            .collect();
        let mut table = PolicyTable { space: space.clone(), actions, recurrent: vec![] };
        let m = Model::new(space, params, model)?;
        table.recurrent = recurrent_indices(&table, &m)?.into_iter().flatten().collect();
        table.recurrent.sort_unstable();
        Ok(table)
    }

    pub fn action(&self, state: &CompressedState) -> Option<Action> {
        self.space.index(state).map(|i| self.actions[i])
    }

    pub fn recurrent_states(&self) -> Vec<CompressedState> {
        self.recurrent.iter().map(|&i| self.space.state(i)).collect()
    }

    /// CSV with one row per state: coordinates, orders, and optionally `J` and `J/k`.
    pub fn write_csv<W: Write>(&self, writer: W, values: Option<&ValueTable>) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["expedited_position".to_string()];
        header.extend((0..self.space.lead_gap - 1).map(|i| format!("tail_{i}")));
        header.extend(["regular", "expedited", "recurrent", "value", "lambda"].map(String::from));
        w.write_record(&header)?;
        let mut recurrent = self.recurrent.iter().peekable();
        for (i, a) in self.actions.iter().enumerate() {
            let s = self.space.state(i);
            let is_rec = recurrent.next_if_eq(&&i).is_some();
            let mut row = vec![format!("{}", s.expedited_position)];
            row.extend(s.tail.iter().map(|q| q.to_string()));
            row.push(a.regular.to_string());
            row.push(a.expedited.to_string());
            row.push((is_rec as u8).to_string());
            match values {
                Some(v) => {
                    row.push(format!("{}", v.values[i]));
                    row.push(format!("{}", v.lambda[i]));
                }
                None => row.extend([String::new(), String::new()]),
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

impl PolicyTable {
    /// Inverse of [`PolicyTable::write_csv`]. The box and order bound are recovered from
    /// the rows, which must cover the whole space.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        let tails = header.len().checked_sub(6).ok_or_else(|| Error::Format("policy table header too short".into()))?;
        if header.get(0) != Some("expedited_position") || header.get(tails + 1) != Some("regular") {
            return Err(Error::Format("not a policy table".into()));
        }
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let num = |i: usize| -> Result<i64> {
                rec.get(i)
                    .and_then(|v| v.parse::<f64>().ok())
                    .filter(|v| v.fract() == 0.0)
                    .map(|v| v as i64)
                    .ok_or_else(|| Error::Format(format!("bad policy table field {i} in {rec:?}")))
            };
            let ie = num(0)?;
            let tail = (1..=tails).map(|i| num(i).map(|v| v as u64)).collect::<Result<Vec<_>>>()?;
            let a = Action::new(num(tails + 1)? as u64, num(tails + 2)? as u64);
            rows.push((ie, tail, a, num(tails + 3)? == 1));
        }
        if rows.is_empty() {
            return Err(Error::Format("empty policy table".into()));
        }
        let lo = rows.iter().map(|r| r.0).min().unwrap_or(0);
        let hi = rows.iter().map(|r| r.0).max().unwrap_or(0);
        let max_order = rows
            .iter()
            .flat_map(|r| r.1.iter().copied().chain([r.2.regular, r.2.expedited]))
            .max()
            .unwrap_or(0);
        let space = StateSpace { inventory_lo: lo, inventory_hi: hi, max_order, lead_gap: tails + 1 };
        space.validate().map_err(|e| Error::Format(format!("policy table box: {e}")))?;
        if rows.len() != space.len() {
            return Err(Error::Format(format!("policy table has {} rows, its box needs {}", rows.len(), space.len())));
        }
        let mut actions = vec![None; space.len()];
        let mut recurrent = Vec::new();
        for (ie, tail, a, rec) in rows {
            let cs = CompressedState { expedited_position: ie as f64, tail };
            let i = space.index(&cs).ok_or_else(|| Error::Format("policy table row outside its box".into()))?;
            if actions[i].replace(a).is_some() {
                return Err(Error::Format("duplicate policy table row".into()));
            }
            if rec {
                recurrent.push(i);
            }
        }
        recurrent.sort_unstable();
        let actions = actions.into_iter().map(|a| a.expect("every index filled once")).collect();
        Ok(PolicyTable { space, actions, recurrent })
    }
}

impl OrderPolicy for PolicyTable {
    /// Looks up the compressed state; positions outside the table are clamped onto its
    /// box first.
    fn order(&self, obs: &Observation<'_>) -> Action {
        let Ok(mut cs) = compress(obs.state) else {
            return Action::NONE;
        };
        cs.expedited_position = cs
            .expedited_position
            .round()
            .clamp(self.space.inventory_lo as f64, self.space.inventory_hi as f64);
        for q in cs.tail.iter_mut() {
            *q = (*q).min(self.space.max_order);
        }
        self.action(&cs).unwrap_or(Action::NONE)
    }
}

/// Closed communicating classes of the chain induced by `policy`, restricted to states
/// reachable from the origin.
fn recurrent_indices(policy: &PolicyTable, m: &Model<'_>) -> Result<Vec<Vec<usize>>> {
    let n = policy.space.len();
    let succ = |s: usize| -> Vec<usize> {
        let (_, y, code) = m.act(s, policy.actions[s]);
        let mut out: Vec<usize> = m.pmf.iter().map(|&(d, _)| m.successor(y, d, code).0).collect();
        out.sort_unstable();
        out.dedup();
        out
    };
    let start = policy.space.zero_index();
    let mut local = vec![usize::MAX; n];
    let mut order = vec![start];
    local[start] = 0;
    let mut queue = VecDeque::from([start]);
    let mut graph = DiGraph::<usize, ()>::new();
    graph.add_node(start);
    let mut edges = vec![];
    while let Some(s) = queue.pop_front() {
        for t in succ(s) {
            if local[t] == usize::MAX {
                local[t] = order.len();
                order.push(t);
                graph.add_node(t);
                queue.push_back(t);
            }
            edges.push((local[s], local[t]));
        }
    }
    for (a, b) in edges {
        graph.add_edge((a as u32).into(), (b as u32).into(), ());
    }
    let sccs = tarjan_scc(&graph);
    let mut comp = vec![0usize; order.len()];
    for (c, members) in sccs.iter().enumerate() {
        for v in members {
            comp[v.index()] = c;
        }
    }
    let mut closed = vec![true; sccs.len()];
    for e in graph.raw_edges() {
        let (a, b) = (comp[e.source().index()], comp[e.target().index()]);
        if a != b {
            closed[a] = false;
        }
    }
    Ok(sccs
        .into_iter()
        .zip(closed)
        .filter(|(_, c)| *c)
        .map(|(members, _)| {
            let mut v: Vec<usize> = members.into_iter().map(|x| order[x.index()]).collect();
            v.sort_unstable();
            v
        })
        .collect())
}

/// Recurrent states of the chain induced by `policy` from the origin.
pub fn recurrent_states(policy: &PolicyTable, params: &CostParams, model: &DemandModel) -> Result<Vec<CompressedState>> {
    let m = Model::new(&policy.space, params, model)?;
    let mut all: Vec<usize> = recurrent_indices(policy, &m)?.into_iter().flatten().collect();
    all.sort_unstable();
    Ok(all.into_iter().map(|i| policy.space.state(i)).collect())
}

/// Exact long-run average cost of `policy` from its stationary distribution.
///
/// Fails with [`Error::Divergent`] when the recurrent class leans on the box boundary
/// (the unbounded chain drifts), and with [`Error::MultipleRecurrentClasses`] when the
/// origin reaches more than one closed class.
pub fn policy_long_run_cost(policy: &PolicyTable, params: &CostParams, model: &DemandModel) -> Result<f64> {
    let m = Model::new(&policy.space, params, model)?;
    let classes = recurrent_indices(policy, &m)?;
    if classes.len() != 1 {
        return Err(Error::MultipleRecurrentClasses(classes.len()));
    }
    let class = &classes[0];
    let k = class.len();
    let pos = |s: usize| class.binary_search(&s).ok();
    // Build A = (P^T - I) with the last balance equation replaced by normalization.
    let mut a = DMatrix::<f64>::zeros(k, k);
    let mut costs = DVector::<f64>::zeros(k);
    for (i, &s) in class.iter().enumerate() {
        let action = policy.actions[s];
        let (c, y, code) = m.act(s, action);
        costs[i] = c;
        for &(d, p) in &m.pmf {
            let raw = y - d;
            if raw < policy.space.inventory_lo || raw > policy.space.inventory_hi {
                return Err(Error::Divergent(format!(
                    "recurrent class reaches the state-space boundary from {:?}",
                    policy.space.state(s)
                )));
            }
            let (t, _) = m.successor(y, d, code);
            let j = pos(t).expect("closed class");
            a[(j, i)] += p;
        }
        a[(i, i)] -= 1.0;
    }
    for i in 0..k {
        a[(k - 1, i)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(k);
    rhs[k - 1] = 1.0;
    let pi = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::NonFinite("singular balance equations".into()))?;
    Ok(pi.dot(&costs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn solve(l: usize, ce: f64, h: f64, b: f64) -> DpSolution {
        let p = CostParams::dual(l, ce, h, b);
        let m = DemandModel::uniform(0, 4);
        let space = StateSpace::for_instance(&p, &m).unwrap();
        value_iteration(&p, &m, &space, ViOptions::default()).unwrap()
    }

    #[test]
    fn index_round_trip() {
        let space = StateSpace { inventory_lo: -7, inventory_hi: 9, max_order: 4, lead_gap: 3 };
        for i in 0..space.len() {
            assert_eq!(space.index(&space.state(i)), Some(i));
        }
        assert_eq!(space.state(space.zero_index()), CompressedState { expedited_position: 0.0, tail: vec![0, 0] });
        assert_eq!(space.index(&CompressedState { expedited_position: 10.0, tail: vec![0, 0] }), None);
    }

    #[test]
    fn table_one_corners() {
        assert_abs_diff_eq!(solve(2, 5.0, 5.0, 95.0).lambda_star, 16.77, epsilon = 0.01);
        assert_abs_diff_eq!(solve(2, 20.0, 5.0, 495.0).lambda_star, 23.07, epsilon = 0.01);
    }

    #[test]
    fn gain_is_flat_and_reproducible() {
        let p = CostParams::dual(2, 10.0, 5.0, 95.0);
        let m = DemandModel::uniform(0, 4);
        let space = StateSpace::for_instance(&p, &m).unwrap();
        let loose = value_iteration(&p, &m, &space, ViOptions::default()).unwrap();
        let tight = value_iteration(&p, &m, &space, ViOptions { eps: 1e-12, ..Default::default() }).unwrap();
        assert!((loose.lambda_star - tight.lambda_star).abs() < 1e-9);
        // J_k / k carries the bias h(s) / k on top of the common gain.
        let k = loose.values.iterations as f64;
        for (j, l) in loose.values.values.iter().zip(&loose.values.lambda) {
            assert_eq!(*l, j / k);
        }
        let again = value_iteration(&p, &m, &space, ViOptions::default()).unwrap();
        assert_eq!(loose.lambda_star.to_bits(), again.lambda_star.to_bits());
    }

    #[test]
    fn zero_demand_costs_nothing() {
        let p = CostParams::dual(2, 5.0, 5.0, 95.0);
        let m = DemandModel::uniform(0, 0);
        let space = StateSpace::for_instance(&p, &m).unwrap();
        let sol = value_iteration(&p, &m, &space, ViOptions::default()).unwrap();
        assert_abs_diff_eq!(sol.lambda_star, 0.0, epsilon = 1e-12);
        assert_eq!(sol.policy.action(&space.state(space.zero_index())), Some(Action::NONE));
        assert_eq!(sol.policy.recurrent, vec![space.zero_index()]);
    }

    #[test]
    fn fixed_costs_and_low_service() {
        let p = CostParams::dual(2, 5.0, 5.0, 95.0).with_fixed_costs(5.0, 10.0);
        let m = DemandModel::uniform(0, 4);
        let space = StateSpace::for_instance(&p, &m).unwrap();
        let sol = value_iteration(&p, &m, &space, ViOptions::default()).unwrap();
        assert_abs_diff_eq!(sol.lambda_star, 23.61, epsilon = 0.01);
        assert_abs_diff_eq!(solve(2, 5.0, 15.0, 85.0).lambda_star, 39.45, epsilon = 0.01);
    }

    #[test]
    fn zero_fixed_costs_match_standard_path() {
        let a = solve(2, 10.0, 5.0, 95.0);
        let p = CostParams::dual(2, 10.0, 5.0, 95.0).with_fixed_costs(0.0, 0.0);
        let m = DemandModel::uniform(0, 4);
        let b = value_iteration(&p, &m, &StateSpace::for_instance(&p, &m).unwrap(), ViOptions::default()).unwrap();
        assert_eq!(a.lambda_star.to_bits(), b.lambda_star.to_bits());
        assert_eq!(a.policy.actions, b.policy.actions);
    }

    #[test]
    fn widening_the_box_does_not_move_lambda() {
        let p = CostParams::dual(2, 20.0, 5.0, 495.0);
        let m = DemandModel::uniform(0, 4);
        let space = StateSpace::for_instance(&p, &m).unwrap();
        let a = value_iteration(&p, &m, &space, ViOptions::default()).unwrap();
        let b = value_iteration(&p, &m, &space.widened(5), ViOptions::default()).unwrap();
        assert!((a.lambda_star - b.lambda_star).abs() < 1e-6);
    }

    #[test]
    fn recurrent_count_matches_known_instance() {
        let sol = solve(2, 10.0, 5.0, 95.0);
        assert_eq!(sol.policy.recurrent.len(), 17);
    }

    #[test]
    fn stationary_cost_matches_lambda() {
        let p = CostParams::dual(2, 5.0, 5.0, 95.0);
        let m = DemandModel::uniform(0, 4);
        let sol = solve(2, 5.0, 5.0, 95.0);
        let exact = policy_long_run_cost(&sol.policy, &p, &m).unwrap();
        assert_abs_diff_eq!(exact, sol.lambda_star, epsilon = 1e-6);
    }

    #[test]
    fn never_ordering_diverges() {
        let p = CostParams::dual(2, 5.0, 5.0, 495.0);
        let m = DemandModel::uniform(0, 4);
        let space = StateSpace::for_instance(&p, &m).unwrap();
        let never = PolicyTable::from_fn(&space, &p, &m, |_| Action::NONE).unwrap();
        assert!(matches!(policy_long_run_cost(&never, &p, &m), Err(Error::Divergent(_))));
    }

    #[test]
    fn single_sourcing_base_stock_costs_ten() {
        // Zero-lead expedited channel as the only supplier; the regular channel idles.
        let mut p = CostParams::dual(1, 0.0, 5.0, 495.0);
        p.expedited_unit_cost = 0.0;
        let m = DemandModel::uniform(0, 4);
        let space = StateSpace::for_instance(&p, &m).unwrap();
        let bs = PolicyTable::from_fn(&space, &p, &m, |s| {
            Action::new(0, (4.0 - s.position()).max(0.0) as u64)
        })
        .unwrap();
        assert_abs_diff_eq!(policy_long_run_cost(&bs, &p, &m).unwrap(), 10.0, epsilon = 1e-9);
        assert_eq!(bs.recurrent.len(), 5);
    }

    #[test]
    fn deterministic_demand_has_one_recurrent_state() {
        let p = CostParams::dual(2, 5.0, 5.0, 95.0);
        let m = DemandModel::uniform(0, 0);
        let space = StateSpace::for_instance(&p, &m).unwrap();
        let table = PolicyTable::from_fn(&space, &p, &m, |_| Action::NONE).unwrap();
        assert_eq!(recurrent_states(&table, &p, &m).unwrap().len(), 1);
    }

    #[test]
    fn rejects_unreduced_instances() {
        let mut p = CostParams::dual(2, 5.0, 5.0, 95.0);
        p.regular_unit_cost = 1.0;
        let m = DemandModel::uniform(0, 4);
        let space = StateSpace::for_instance(&p, &m).unwrap();
        assert!(matches!(value_iteration(&p, &m, &space, ViOptions::default()), Err(Error::Unsupported(_))));
    }

    #[test]
    fn csv_has_one_row_per_state() {
        let sol = solve(2, 5.0, 5.0, 95.0);
        let mut buf = Vec::new();
        sol.policy.write_csv(&mut buf, Some(&sol.values)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("expedited_position,tail_0,regular,expedited,recurrent,value,lambda\n"));
        assert_eq!(text.lines().count(), sol.policy.space.len() + 1);
        let back = PolicyTable::read_csv(text.as_bytes()).unwrap();
        assert_eq!(back.space, sol.policy.space);
        assert_eq!(back.actions, sol.policy.actions);
        assert_eq!(back.recurrent, sol.policy.recurrent);
    }

    #[test]
    fn truncated_table_is_rejected() {
        let sol = solve(2, 10.0, 5.0, 95.0);
        let mut buf = Vec::new();
        sol.policy.write_csv(&mut buf, None).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let cut: String = text.lines().take(43).map(|l| format!("{l}\n")).collect();
        assert!(matches!(PolicyTable::read_csv(cut.as_bytes()), Err(Error::Format(_))));
    }
}
