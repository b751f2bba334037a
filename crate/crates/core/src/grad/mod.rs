//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] is built fresh for every forward pass (define-by-run). Leaves
//! created with `requires_grad` own a gradient buffer; [`Tape::backward`]
//! *adds* `d loss / d leaf` into those buffers, so calling it twice without
//! [`Tape::zero_grad`] doubles every leaf gradient.

pub(crate) mod kernels;
mod optim;

pub use optim::{Sgd, SgdStep};

use kernels::{matmul_acc, matmul_at_b_acc, matmul_a_bt_acc};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GradError {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("{op}: index {index} out of range {bound}")]
    Index { op: &'static str, index: usize, bound: usize },
    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("loss does not depend on any leaf that requires a gradient")]
    Detached,
    #[error("non-finite gradient (norm {0})")]
    NonFiniteGradient(f64),
}

type Result<T> = std::result::Result<T, GradError>;

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// A dense row-major tensor with an optional gradient buffer.
#[derive(Debug, Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    fn dims(&self) -> Option<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Some((*r, *c)),
            [n] => Some((1, *n)),
            _ => None,
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Affine { x: usize, w: usize, b: Option<usize> },
    MatMul { a: usize, b: usize },
    MatMulBt { a: usize, b: usize },
    Add { a: usize, b: usize },
    Scale { x: usize, c: f64 },
    AddConst { x: usize },
    Embed { table: usize, ids: Vec<usize> },
    Tanh { x: usize },
    SoftmaxRows { x: usize },
    LogSoftmaxRows { x: usize },
    GatherRows { x: usize, idx: Vec<usize> },
    SliceRows { x: usize, start: usize },
    Sum { x: usize },
    ScaleAdd { acc: usize, c: f64, x: usize },
    WeightedSum { x: usize, w: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    tensor: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, detail: String) -> GradError {
    GradError::Shape { op, detail }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn tensor(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].tensor
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].tensor.values
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].tensor.shape
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].tensor.grad.as_deref()
    }

    /// Records a leaf tensor. The gradient buffer exists iff `requires_grad`.
    pub fn leaf(&mut self, shape: &[usize], values: Vec<f64>, requires_grad: bool) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(shape_err("leaf", format!("shape {shape:?} needs {numel} values, got {}", values.len())));
        }
        let grad = requires_grad.then(|| vec![0.0; numel]);
        let tensor = Tensor { shape: shape.to_vec(), values, requires_grad, grad };
        self.nodes.push(Node { tensor, op: Op::Leaf, needs_grad: requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, shape: &[usize], values: Vec<f64>) -> Result<Var> {
        self.leaf(shape, values, false)
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            if let Some(g) = node.tensor.grad.as_mut() {
                g.iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }

    fn push(&mut self, shape: Vec<usize>, values: Vec<f64>, op: Op, inputs: &[usize]) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        debug_assert!(
            !inputs.iter().all(|&i| self.nodes[i].tensor.values.iter().all(|v| v.is_finite()))
                || values.iter().all(|v| v.is_finite()),
            "non-finite output from {op:?} on finite inputs"
        );
        let needs_grad = inputs.iter().any(|&i| self.nodes[i].needs_grad);
        let tensor = Tensor { shape, values, requires_grad: false, grad: None };
        self.nodes.push(Node { tensor, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn dims(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        self.nodes[v.0]
            .tensor
            .dims()
            .ok_or_else(|| shape_err(op, format!("expected a matrix, got {:?}", self.shape(v))))
    }

    /// `x · w + b` with `x: n×k`, `w: k×m`, `b: m` (broadcast over rows).
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (n, k) = self.dims(x, "affine")?;
        let (k2, m) = self.dims(w, "affine")?;
        if k != k2 {
            return Err(shape_err("affine", format!("{n}x{k} · {k2}x{m}")));
        }
        let mut out = vec![0.0; n * m];
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.len() != m {
                return Err(shape_err("affine", format!("bias of length {} for width {m}", bv.len())));
            }
            for row in out.chunks_exact_mut(m) {
                row.copy_from_slice(bv);
            }
        }
        matmul_acc(self.value(x), self.value(w), &mut out, n, k, m);
        let mut inputs = vec![x.0, w.0];
        inputs.extend(b.map(|b| b.0));
        Ok(self.push(vec![n, m], out, Op::Affine { x: x.0, w: w.0, b: b.map(|b| b.0) }, &inputs))
    }

    /// `a · b` with `a: n×k`, `b: k×m`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.dims(a, "matmul")?;
        let (k2, m) = self.dims(b, "matmul")?;
        if k != k2 {
            return Err(shape_err("matmul", format!("{n}x{k} · {k2}x{m}")));
        }
        let mut out = vec![0.0; n * m];
        matmul_acc(self.value(a), self.value(b), &mut out, n, k, m);
        Ok(self.push(vec![n, m], out, Op::MatMul { a: a.0, b: b.0 }, &[a.0, b.0]))
    }

    /// `a · bᵀ` with `a: n×k`, `b: m×k`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.dims(a, "matmul_bt")?;
        let (m, k2) = self.dims(b, "matmul_bt")?;
        if k != k2 {
            return Err(shape_err("matmul_bt", format!("{n}x{k} · ({m}x{k2})ᵀ")));
        }
        let mut out = vec![0.0; n * m];
        matmul_a_bt_acc(self.value(a), self.value(b), &mut out, n, k, m);
        Ok(self.push(vec![n, m], out, Op::MatMulBt { a: a.0, b: b.0 }, &[a.0, b.0]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("add", format!("{:?} + {:?}", self.shape(a), self.shape(b))));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        Ok(self.push(self.shape(a).to_vec(), out, Op::Add { a: a.0, b: b.0 }, &[a.0, b.0]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let out = self.value(x).iter().map(|v| v * c).collect();
        Ok(self.push(self.shape(x).to_vec(), out, Op::Scale { x: x.0, c }, &[x.0]))
    }

    /// Adds a constant of identical shape (e.g. an attention mask).
    pub fn add_const(&mut self, x: Var, c: &[f64]) -> Result<Var> {
        if c.len() != self.value(x).len() {
            return Err(shape_err("add_const", format!("{} values for {:?}", c.len(), self.shape(x))));
        }
        let out = self.value(x).iter().zip(c).map(|(v, c)| v + c).collect();
        Ok(self.push(self.shape(x).to_vec(), out, Op::AddConst { x: x.0 }, &[x.0]))
    }

    /// Row lookup: `out[r] = table[ids[r]]`.
    pub fn embed(&mut self, ids: &[usize], table: Var) -> Result<Var> {
        let (rows, d) = self.dims(table, "embed")?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(GradError::Index { op: "embed", index: bad, bound: rows });
        }
        let tv = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        Ok(self.push(vec![ids.len(), d], out, Op::Embed { table: table.0, ids: ids.to_vec() }, &[table.0]))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).iter().map(|v| v.tanh()).collect();
        Ok(self.push(self.shape(x).to_vec(), out, Op::Tanh { x: x.0 }, &[x.0]))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (n, m) = self.dims(x, "softmax_rows")?;
        let mut out = self.value(x).to_vec();
        for row in out.chunks_exact_mut(m) {
            kernels::softmax_in_place(row);
        }
        Ok(self.push(vec![n, m], out, Op::SoftmaxRows { x: x.0 }, &[x.0]))
    }

    /// Row-wise `log softmax`, stabilised by subtracting the row maximum.
    pub fn log_softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (n, m) = self.dims(x, "log_softmax_rows")?;
        let mut out = self.value(x).to_vec();
        for row in out.chunks_exact_mut(m) {
            kernels::log_softmax_in_place(row);
        }
        Ok(self.push(vec![n, m], out, Op::LogSoftmaxRows { x: x.0 }, &[x.0]))
    }

    /// Picks one column per row: `out[r] = x[r, idx[r]]`.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (n, m) = self.dims(x, "gather_rows")?;
        if idx.len() != n {
            return Err(shape_err("gather_rows", format!("{} indices for {n} rows", idx.len())));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= m) {
            return Err(GradError::Index { op: "gather_rows", index: bad, bound: m });
        }
        let xv = self.value(x);
        let out = idx.iter().enumerate().map(|(r, &c)| xv[r * m + c]).collect();
        Ok(self.push(vec![n], out, Op::GatherRows { x: x.0, idx: idx.to_vec() }, &[x.0]))
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (n, m) = self.dims(x, "slice_rows")?;
        if start > end || end > n {
            return Err(shape_err("slice_rows", format!("rows {start}..{end} of {n}")));
        }
        let out = self.value(x)[start * m..end * m].to_vec();
        Ok(self.push(vec![end - start, m], out, Op::SliceRows { x: x.0, start }, &[x.0]))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).iter().sum();
        Ok(self.push(Vec::new(), vec![s], Op::Sum { x: x.0 }, &[x.0]))
    }

    /// `acc + c · x`.
    pub fn scale_add(&mut self, acc: Var, c: f64, x: Var) -> Result<Var> {
        if self.shape(acc) != self.shape(x) {
            return Err(shape_err("scale_add", format!("{:?} vs {:?}", self.shape(acc), self.shape(x))));
        }
        let out = self.value(acc).iter().zip(self.value(x)).map(|(a, v)| a + c * v).collect();
        Ok(self.push(self.shape(acc).to_vec(), out, Op::ScaleAdd { acc: acc.0, c, x: x.0 }, &[acc.0, x.0]))
    }

    /// `Σ w ⊙ x` for a constant weight vector; returns a scalar.
    pub fn weighted_sum(&mut self, x: Var, w: &[f64]) -> Result<Var> {
        if w.len() != self.value(x).len() {
            return Err(shape_err("weighted_sum", format!("{} weights for {:?}", w.len(), self.shape(x))));
        }
        let s = self.value(x).iter().zip(w).map(|(a, b)| a * b).sum();
        Ok(self.push(Vec::new(), vec![s], Op::WeightedSum { x: x.0, w: w.to_vec() }, &[x.0]))
    }

    /// Accumulates `d loss / d leaf` into every gradient buffer reachable
    /// from `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let root = &self.nodes[loss.0];
        if root.tensor.values.len() != 1 || root.tensor.shape.len() > 1 {
            return Err(GradError::NotScalar(root.tensor.shape.clone()));
        }
        if !root.needs_grad {
            return Err(GradError::Detached);
        }
        let mut adj: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(dy) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let nodes = &self.nodes;
            // Adjoint buffer of input `j`, or None if it needs none.
            macro_rules! slot {
                ($j:expr) => {{
                    let j: usize = $j;
                    if nodes[j].needs_grad {
                        Some(adj[j].get_or_insert_with(|| vec![0.0; nodes[j].tensor.values.len()]))
                    } else {
                        None
                    }
                }};
            }
            match &node.op {
                Op::Leaf => {
                    adj[i] = Some(dy);
                }
                Op::Affine { x, w, b } => {
                    let (n, k) = nodes[*x].tensor.dims().unwrap();
                    let m = node.tensor.shape[1];
                    if let Some(dx) = slot!(*x) {
                        matmul_a_bt_acc(&dy, &nodes[*w].tensor.values, dx, n, m, k);
                    }
                    if let Some(dw) = slot!(*w) {
                        matmul_at_b_acc(&nodes[*x].tensor.values, &dy, dw, n, k, m);
                    }
                    if let Some(b) = b {
                        if let Some(db) = slot!(*b) {
                            for row in dy.chunks_exact(m) {
                                db.iter_mut().zip(row).for_each(|(g, d)| *g += d);
                            }
                        }
                    }
                }
                Op::MatMul { a, b } => {
                    let (n, k) = nodes[*a].tensor.dims().unwrap();
                    let m = node.tensor.shape[1];
                    if let Some(da) = slot!(*a) {
                        matmul_a_bt_acc(&dy, &nodes[*b].tensor.values, da, n, m, k);
                    }
                    if let Some(db) = slot!(*b) {
                        matmul_at_b_acc(&nodes[*a].tensor.values, &dy, db, n, k, m);
                    }
                }
                Op::MatMulBt { a, b } => {
                    let (n, k) = nodes[*a].tensor.dims().unwrap();
                    let m = node.tensor.shape[1];
                    if let Some(da) = slot!(*a) {
                        matmul_acc(&dy, &nodes[*b].tensor.values, da, n, m, k);
                    }
                    if let Some(db) = slot!(*b) {
                        matmul_at_b_acc(&dy, &nodes[*a].tensor.values, db, n, m, k);
                    }
                }
                Op::Add { a, b } => {
                    for j in [*a, *b] {
                        if let Some(d) = slot!(j) {
                            d.iter_mut().zip(&dy).for_each(|(g, v)| *g += v);
                        }
                    }
                }
                Op::Scale { x, c } => {
                    if let Some(dx) = slot!(*x) {
                        dx.iter_mut().zip(&dy).for_each(|(g, v)| *g += c * v);
                    }
                }
                Op::AddConst { x } => {
                    if let Some(dx) = slot!(*x) {
                        dx.iter_mut().zip(&dy).for_each(|(g, v)| *g += v);
                    }
                }
                Op::Embed { table, ids } => {
                    let d = nodes[*table].tensor.dims().unwrap().1;
                    if let Some(dt) = slot!(*table) {
                        for (r, &id) in ids.iter().enumerate() {
                            dt[id * d..(id + 1) * d]
                                .iter_mut()
                                .zip(&dy[r * d..(r + 1) * d])
                                .for_each(|(g, v)| *g += v);
                        }
                    }
                }
                Op::Tanh { x } => {
                    let y = &node.tensor.values;
                    if let Some(dx) = slot!(*x) {
                        for ((g, d), y) in dx.iter_mut().zip(&dy).zip(y) {
                            *g += d * (1.0 - y * y);
                        }
                    }
                }
                Op::SoftmaxRows { x } => {
                    let m = node.tensor.shape[1];
                    let y = &node.tensor.values;
                    if let Some(dx) = slot!(*x) {
                        for ((g, d), y) in dx.chunks_exact_mut(m).zip(dy.chunks_exact(m)).zip(y.chunks_exact(m)) {
                            let dot: f64 = d.iter().zip(y).map(|(a, b)| a * b).sum();
                            for j in 0..m {
                                g[j] += y[j] * (d[j] - dot);
                            }
                        }
                    }
                }
                Op::LogSoftmaxRows { x } => {
                    let m = node.tensor.shape[1];
                    let y = &node.tensor.values;
                    if let Some(dx) = slot!(*x) {
                        for ((g, d), y) in dx.chunks_exact_mut(m).zip(dy.chunks_exact(m)).zip(y.chunks_exact(m)) {
                            let total: f64 = d.iter().sum();
                            for j in 0..m {
                                g[j] += d[j] - y[j].exp() * total;
                            }
                        }
                    }
                }
                Op::GatherRows { x, idx } => {
                    let m = nodes[*x].tensor.dims().unwrap().1;
                    if let Some(dx) = slot!(*x) {
                        for (r, &c) in idx.iter().enumerate() {
                            dx[r * m + c] += dy[r];
                        }
                    }
                }
                Op::SliceRows { x, start } => {
                    let m = nodes[*x].tensor.dims().unwrap().1;
                    if let Some(dx) = slot!(*x) {
                        dx[start * m..start * m + dy.len()]
                            .iter_mut()
                            .zip(&dy)
                            .for_each(|(g, v)| *g += v);
                    }
                }
                Op::Sum { x } => {
                    if let Some(dx) = slot!(*x) {
                        dx.iter_mut().for_each(|g| *g += dy[0]);
                    }
                }
                Op::ScaleAdd { acc, c, x } => {
                    if let Some(da) = slot!(*acc) {
                        da.iter_mut().zip(&dy).for_each(|(g, v)| *g += v);
                    }
                    if let Some(dx) = slot!(*x) {
                        dx.iter_mut().zip(&dy).for_each(|(g, v)| *g += c * v);
                    }
                }
                Op::WeightedSum { x, w } => {
                    if let Some(dx) = slot!(*x) {
                        dx.iter_mut().zip(w).for_each(|(g, w)| *g += w * dy[0]);
                    }
                }
            }
        }

        for (node, a) in self.nodes.iter_mut().zip(adj) {
            if let (Some(g), Some(a)) = (node.tensor.grad.as_mut(), a) {
                g.iter_mut().zip(a).for_each(|(g, a)| *g += a);
            }
        }
        Ok(())
    }
}
