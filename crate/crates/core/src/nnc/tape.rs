//! Reverse-mode automatic differentiation over row-major matrices.
//!
//! Every node holds a `rows x cols` block of values. Rows are minibatch samples, so a
//! dense layer is one GEMM per period instead of one small product per trajectory.
//! Nodes are appended in evaluation order, which is already a topological order, and
//! [`Tape::backward`] walks them once in reverse.

use matrixmultiply::dgemm;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise activation fused into [`Tape::linear`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Identity,
    Celu { alpha: f64 },
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Celu { alpha } => celu(x, alpha),
        }
    }

    /// Derivative expressed through the activation's output. For CELU the negative
    /// branch `α(exp(x/α) − 1)` has slope `exp(x/α) = y/α + 1`.
    fn slope_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Celu { alpha } => {
                if y > 0.0 {
                    1.0
                } else {
                    y / alpha + 1.0
                }
            }
        }
    }
}

/// `max(0, x) + min(0, α(exp(x/α) − 1))`.
pub fn celu(x: f64, alpha: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        alpha * (x / alpha).exp_m1()
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// `act(x · wᵀ + b)` with `w` stored `out x in`.
    Linear { x: Var, w: Var, b: Option<Var>, act: Activation },
    /// Floor of the positive part forward, gradient of the positive part backward.
    Decouple { x: Var },
    PosPart { x: Var },
    /// `Σ kᵢ xᵢ` over equally shaped nodes.
    Combine { terms: Vec<(Var, f64)> },
    /// Column-wise concatenation of nodes with equal row counts.
    Concat { parts: Vec<Var> },
    Column { x: Var, j: usize },
    /// Repeat a single row `rows` times.
    Broadcast { x: Var },
    /// Mean over all entries, a `1 x 1` node.
    Mean { x: Var },
    /// Elementwise product of equally shaped nodes.
    Mul { a: Var, b: Var },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    rows: usize,
    cols: usize,
    value: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    surrogate: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape whose decouple nodes emit `[y]^+` without flooring. Its gradients are
    /// those of an ordinary piecewise-linear function, so finite differences can check
    /// the straight-through gradients of the real tape.
    pub fn surrogate() -> Self {
        Self { nodes: Vec::new(), surrogate: true }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        debug_assert_eq!(self.shape(v), (1, 1));
        self.nodes[v.0].value[0]
    }

    fn push(&mut self, op: Op, rows: usize, cols: usize, value: Vec<f64>) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node { op, rows, cols, value });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> Var {
        assert_eq!(value.len(), rows * cols, "leaf shape");
        self.push(Op::Leaf, rows, cols, value)
    }

    pub fn constant(&mut self, rows: usize, cols: usize, fill: f64) -> Var {
        self.push(Op::Leaf, rows, cols, vec![fill; rows * cols])
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>, act: Activation) -> Var {
        let (rows, k) = self.shape(x);
        let (out, k_w) = self.shape(w);
        assert_eq!(k, k_w, "linear: input width {k} vs weight width {k_w}");
        let mut value = vec![0.0; rows * out];
        if let Some(b) = b {
            assert_eq!(self.shape(b), (1, out), "linear: bias shape");
            let bias = self.value(b);
            for row in value.chunks_exact_mut(out) {
                row.copy_from_slice(bias);
            }
        }
        let beta = if b.is_some() { 1.0 } else { 0.0 };
        // value (rows x out) += x (rows x k) · wᵀ (k x out)
        unsafe {
            dgemm(
                rows,
                k,
                out,
                1.0,
                self.value(x).as_ptr(),
                k as isize,
                1,
                self.value(w).as_ptr(),
                1,
                k as isize,
                beta,
                value.as_mut_ptr(),
                out as isize,
                1,
            );
        }
        if act != Activation::Identity {
            for v in &mut value {
                *v = act.apply(*v);
            }
        }
        self.push(Op::Linear { x, w, b, act }, rows, out, value)
    }

    pub fn decouple(&mut self, x: Var) -> Var {
        let (rows, cols) = self.shape(x);
        let surrogate = self.surrogate;
        let value = self
            .value(x)
            .iter()
            .map(|&y| {
                let p = y.max(0.0);
                if surrogate {
                    p
                } else {
                    p.floor()
                }
            })
            .collect();
        self.push(Op::Decouple { x }, rows, cols, value)
    }

    pub fn pos_part(&mut self, x: Var) -> Var {
        let (rows, cols) = self.shape(x);
        let value = self.value(x).iter().map(|&y| y.max(0.0)).collect();
        self.push(Op::PosPart { x }, rows, cols, value)
    }

    pub fn combine(&mut self, terms: &[(Var, f64)]) -> Var {
        assert!(!terms.is_empty(), "combine of nothing");
        let (rows, cols) = self.shape(terms[0].0);
        let mut value = vec![0.0; rows * cols];
        for &(v, k) in terms {
            assert_eq!(self.shape(v), (rows, cols), "combine: shape mismatch");
            for (acc, &x) in value.iter_mut().zip(self.value(v)) {
                *acc += k * x;
            }
        }
        self.push(Op::Combine { terms: terms.to_vec() }, rows, cols, value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.combine(&[(a, 1.0), (b, 1.0)])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.combine(&[(a, 1.0), (b, -1.0)])
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        self.combine(&[(x, k)])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let shape = self.shape(a);
        assert_eq!(shape, self.shape(b), "mul: shape mismatch");
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        self.push(Op::Mul { a, b }, shape.0, shape.1, value)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = self.shape(parts[0]).0;
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut value = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                let (pr, pc) = self.shape(p);
                assert_eq!(pr, rows, "concat: row mismatch");
                value.extend_from_slice(&self.value(p)[r * pc..(r + 1) * pc]);
            }
        }
        self.push(Op::Concat { parts: parts.to_vec() }, rows, cols, value)
    }

    pub fn column(&mut self, x: Var, j: usize) -> Var {
        let (rows, cols) = self.shape(x);
        assert!(j < cols, "column {j} of {cols}");
        let value = self.value(x).iter().skip(j).step_by(cols).copied().collect();
        self.push(Op::Column { x, j }, rows, 1, value)
    }

    pub fn broadcast(&mut self, x: Var, rows: usize) -> Var {
        let (r, cols) = self.shape(x);
        assert_eq!(r, 1, "broadcast expects a single row");
        let value = self.value(x).repeat(rows);
        self.push(Op::Broadcast { x }, rows, cols, value)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let m = v.iter().sum::<f64>() / v.len() as f64;
        self.push(Op::Mean { x }, 1, 1, vec![m])
    }

    /// Gradients of the scalar `root` with respect to the leaves recorded before it.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.shape(root), (1, 1), "backward from a non-scalar node");
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            // Interior gradients are dropped once pushed to their inputs.
            self.propagate(node, &g, &mut grads);
        }
        Gradients { grads }
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b, act } => {
                let (rows, k) = self.shape(*x);
                let out = node.cols;
                let dz: Vec<f64> = if *act == Activation::Identity {
                    g.to_vec()
                } else {
                    g.iter().zip(&node.value).map(|(&gi, &y)| gi * act.slope_from_output(y)).collect()
                };
                // dx (rows x k) += dz (rows x out) · w (out x k)
                let dx = slot(grads, *x, rows * k);
                unsafe {
                    dgemm(
                        rows,
                        out,
                        k,
                        1.0,
                        dz.as_ptr(),
                        out as isize,
                        1,
                        self.value(*w).as_ptr(),
                        k as isize,
                        1,
                        1.0,
                        dx.as_mut_ptr(),
                        k as isize,
                        1,
                    );
                }
                // dw (out x k) += dzᵀ (out x rows) · x (rows x k)
                let dw = slot(grads, *w, out * k);
                unsafe {
                    dgemm(
                        out,
                        rows,
                        k,
                        1.0,
                        dz.as_ptr(),
                        1,
                        out as isize,
                        self.value(*x).as_ptr(),
                        k as isize,
                        1,
                        1.0,
                        dw.as_mut_ptr(),
                        k as isize,
                        1,
                    );
                }
                if let Some(b) = b {
                    let db = slot(grads, *b, out);
                    for row in dz.chunks_exact(out) {
                        for (acc, &d) in db.iter_mut().zip(row) {
                            *acc += d;
                        }
                    }
                }
            }
            Op::Decouple { x } | Op::PosPart { x } => {
                let input = &self.nodes[x.0].value;
                let dx = slot(grads, *x, input.len());
                for ((acc, &gi), &y) in dx.iter_mut().zip(g).zip(input) {
                    if y > 0.0 {
                        *acc += gi;
                    }
                }
            }
            Op::Combine { terms } => {
                for &(v, k) in terms {
                    let dv = slot(grads, v, g.len());
                    for (acc, &gi) in dv.iter_mut().zip(g) {
                        *acc += k * gi;
                    }
                }
            }
            Op::Concat { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let (rows, pc) = self.shape(p);
                    let dp = slot(grads, p, rows * pc);
                    for r in 0..rows {
                        let src = &g[r * node.cols + offset..r * node.cols + offset + pc];
                        for (acc, &gi) in dp[r * pc..(r + 1) * pc].iter_mut().zip(src) {
                            *acc += gi;
                        }
                    }
                    offset += pc;
                }
            }
            Op::Column { x, j } => {
                let (rows, cols) = self.shape(*x);
                let dx = slot(grads, *x, rows * cols);
                for (r, &gi) in g.iter().enumerate() {
                    dx[r * cols + j] += gi;
                }
            }
            Op::Broadcast { x } => {
                let cols = node.cols;
                let dx = slot(grads, *x, cols);
                for row in g.chunks_exact(cols) {
                    for (acc, &gi) in dx.iter_mut().zip(row) {
                        *acc += gi;
                    }
                }
            }
            Op::Mean { x } => {
                let n = self.nodes[x.0].value.len();
                let share = g[0] / n as f64;
                for acc in slot(grads, *x, n).iter_mut() {
                    *acc += share;
                }
            }
            Op::Mul { a, b } => {
                let n = g.len();
                let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                {
                    let da = slot(grads, *a, n);
                    for ((acc, &gi), &y) in da.iter_mut().zip(g).zip(vb) {
                        *acc += gi * y;
                    }
                }
                let db = slot(grads, *b, n);
                for ((acc, &gi), &x) in db.iter_mut().zip(g).zip(va) {
                    *acc += gi * x;
                }
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

/// Result of [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient with respect to leaf `v`; `None` when the root does not depend on it.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central differences of `f` around `x`, one coordinate at a time.
    fn numeric_gradient(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        let mut probe = x.to_vec();
        (0..x.len())
            .map(|i| {
                let h = 1e-6 * x[i].abs().max(1.0);
                probe[i] = x[i] + h;
                let up = f(&probe);
                probe[i] = x[i] - h;
                let down = f(&probe);
                probe[i] = x[i];
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    fn assert_close(analytic: &[f64], numeric: &[f64]) {
        for (a, n) in analytic.iter().zip(numeric) {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-3);
            assert!(rel < 1e-5, "analytic {a} vs numeric {n}");
        }
    }

    /// Gradient check of a scalar function built from one `3 x 2` input.
    fn check(build: impl Fn(&mut Tape, Var) -> Var) {
        let x0 = vec![0.3, -1.2, 2.5, -0.4, 0.9, 1.7];
        let mut tape = Tape::new();
        let x = tape.leaf(3, 2, x0.clone());
        let root = build(&mut tape, x);
        let analytic = tape.backward(root).get(x).map(<[f64]>::to_vec).unwrap_or(vec![0.0; 6]);
        let numeric = numeric_gradient(&x0, |p| {
            let mut t = Tape::new();
            let x = t.leaf(3, 2, p.to_vec());
            let r = build(&mut t, x);
            t.scalar(r)
        });
        assert_close(&analytic, &numeric);
    }

    /// Weighted sum with distinct weights so every entry's gradient is distinguishable.
    fn weighted_sum(t: &mut Tape, x: Var) -> Var {
        let (r, c) = t.shape(x);
        let w = t.leaf(r, c, (0..r * c).map(|i| 0.5 + i as f64).collect());
        let p = t.mul(x, w);
        t.mean(p)
    }

    #[test]
    fn celu_matches_closed_form() {
        assert_eq!(celu(2.0, 1.0), 2.0);
        assert_eq!(celu(0.0, 1.0), 0.0);
        assert!((celu(-1.0, 1.0) + 0.632_120_558_828_557_7).abs() < 1e-12);
        assert!((celu(-2.0, 0.5) - 0.5 * ((-4.0f64).exp() - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn linear_celu_gradient() {
        for act in [Activation::Identity, Activation::Celu { alpha: 1.0 }, Activation::Celu { alpha: 0.7 }] {
            check(|t, x| {
                let w = t.leaf(4, 2, vec![0.5, -0.3, 1.1, 0.2, -0.8, 0.6, 0.05, -1.4]);
                let b = t.leaf(1, 4, vec![0.1, -0.2, 0.3, 0.0]);
                let y = t.linear(x, w, Some(b), act);
                weighted_sum(t, y)
            });
        }
    }

    #[test]
    fn linear_gradient_with_respect_to_weights_and_bias() {
        let x0 = vec![0.3, -1.2, 2.5, -0.4, 0.9, 1.7];
        let w0 = vec![0.5, -0.3, 1.1, 0.2, -0.8, 0.6];
        let b0 = vec![0.1, -0.2, 0.3];
        let eval = |w: &[f64], b: &[f64]| {
            let mut t = Tape::new();
            let x = t.leaf(3, 2, x0.clone());
            let wv = t.leaf(3, 2, w.to_vec());
            let bv = t.leaf(1, 3, b.to_vec());
            let y = t.linear(x, wv, Some(bv), Activation::Celu { alpha: 1.0 });
            let root = weighted_sum(&mut t, y);
            (t, wv, bv, root)
        };
        let (t, wv, bv, root) = eval(&w0, &b0);
        let g = t.backward(root);
        let num_w = numeric_gradient(&w0, |w| {
            let (t, _, _, r) = eval(w, &b0);
            t.scalar(r)
        });
        let num_b = numeric_gradient(&b0, |b| {
            let (t, _, _, r) = eval(&w0, b);
            t.scalar(r)
        });
        assert_close(g.get(wv).unwrap(), &num_w);
        assert_close(g.get(bv).unwrap(), &num_b);
    }

    #[test]
    fn structural_op_gradients() {
        check(|t, x| {
            let y = t.pos_part(x);
            weighted_sum(t, y)
        });
        check(|t, x| {
            let y = t.combine(&[(x, 2.0), (x, -0.5)]);
            weighted_sum(t, y)
        });
        check(|t, x| {
            let a = t.column(x, 1);
            let b = t.column(x, 0);
            let c = t.concat(&[a, x, b]);
            weighted_sum(t, c)
        });
        check(|t, x| {
            let y = t.mul(x, x);
            weighted_sum(t, y)
        });
        check(|t, x| {
            let m = t.mean(x);
            let row = t.concat(&[m, m]);
            let b = t.broadcast(row, 5);
            weighted_sum(t, b)
        });
    }

    #[test]
    fn decouple_forward_and_straight_through_gradient() {
        let mut t = Tape::new();
        let y = t.leaf(1, 3, vec![3.7, -2.1, 5.0]);
        let q = t.decouple(y);
        assert_eq!(t.value(q), &[3.0, 0.0, 5.0]);
        let root = weighted_sum(&mut t, q);
        let g = t.backward(root).get(y).unwrap().to_vec();

        let mut s = Tape::surrogate();
        let ys = s.leaf(1, 3, vec![3.7, -2.1, 5.0]);
        let p = s.pos_part(ys);
        let root = weighted_sum(&mut s, p);
        let gs = s.backward(root).get(ys).unwrap().to_vec();
        assert_eq!(g, gs);
        assert_eq!(g[1], 0.0);
        assert!(g[0] > 0.0 && g[2] > 0.0);
    }

    #[test]
    fn surrogate_decouple_matches_finite_differences() {
        let x0 = vec![0.3, -1.2, 2.5, -0.4, 0.9, 1.7];
        let build = |t: &mut Tape, x: Var| {
            let q = t.decouple(x);
            weighted_sum(t, q)
        };
        let mut t = Tape::new();
        let x = t.leaf(3, 2, x0.clone());
        let r = build(&mut t, x);
        let analytic = t.backward(r).get(x).unwrap().to_vec();
        let numeric = numeric_gradient(&x0, |p| {
            let mut s = Tape::surrogate();
            let x = s.leaf(3, 2, p.to_vec());
            let r = build(&mut s, x);
            s.scalar(r)
        });
        assert_close(&analytic, &numeric);
    }

    #[test]
    fn gradients_accumulate_over_reuse() {
        let mut t = Tape::new();
        let x = t.leaf(1, 1, vec![2.0]);
        let y = t.add(x, x);
        let z = t.mul(y, x);
        let m = t.mean(z);
        // z = 2x², dz/dx = 4x
        assert_eq!(t.backward(m).get(x).unwrap(), &[8.0]);
    }

    #[test]
    fn unrelated_nodes_get_no_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(1, 1, vec![1.0]);
        let unused = t.leaf(1, 1, vec![1.0]);
        let m = t.mean(x);
        let g = t.backward(m);
        assert!(g.get(unused).is_none());
        assert_eq!(g.get(x).unwrap(), &[1.0]);
    }
}
