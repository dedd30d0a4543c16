use std::cell::RefCell;

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    MatMul(usize, usize),
    Transpose(usize),
    Exp(usize),
    Log { src: usize, floor: f64 },
    Square(usize),
    LeakyRelu { src: usize, slope: f64 },
    Softmax(usize),
    Sum(usize),
    Mean(usize),
    GatherRows { src: usize, indices: Vec<usize> },
    PickPerRow { src: usize, indices: Vec<usize> },
    ConcatRows(Vec<usize>),
    SqL2Norm(usize),
    SqDist(usize, usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Operation record for one forward pass.
///
/// Nodes are appended in evaluation order, so the node list is always
/// topologically sorted. `backward` may run once per tape; a second call is
/// rejected rather than accumulating.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    grads: RefCell<Option<Vec<Option<Vec<f64>>>>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

enum Broadcast {
    Same,
    LhsScalar,
    RhsScalar,
}

fn broadcast(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Broadcast> {
    if a.shape() == b.shape() {
        Ok(Broadcast::Same)
    } else if b.numel() == 1 {
        Ok(Broadcast::RhsScalar)
    } else if a.numel() == 1 {
        Ok(Broadcast::LhsScalar)
    } else {
        Err(Error::Dimension {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        })
    }
}

fn zip_broadcast(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    let out = match broadcast(op, a, b)? {
        Broadcast::Same => Tensor {
            shape: a.shape.clone(),
            data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
        },
        Broadcast::RhsScalar => {
            let y = b.data[0];
            Tensor {
                shape: a.shape.clone(),
                data: a.data.iter().map(|&x| f(x, y)).collect(),
            }
        }
        Broadcast::LhsScalar => {
            let x = a.data[0];
            Tensor {
                shape: b.shape.clone(),
                data: b.data.iter().map(|&y| f(x, y)).collect(),
            }
        }
    };
    Ok(out)
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor {
        shape: t.shape.clone(),
        data: t.data.iter().map(|&x| f(x)).collect(),
    }
}

/// `a[m×k] · b[k×n]` with an i-k-j loop order.
fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

fn accumulate(slot: &mut Option<Vec<f64>>, contribution: Vec<f64>) {
    match slot {
        Some(g) => {
            for (a, c) in g.iter_mut().zip(contribution) {
                *a += c;
            }
        }
        None => *slot = Some(contribution),
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Registers a differentiable input.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Registers an input that receives no gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, tracked: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, tracked });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn tracked(&self, id: usize) -> bool {
        self.nodes.borrow()[id].tracked
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn concat_rows<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>> {
        if parts.is_empty() {
            return Err(Error::contract("concat_rows of zero tensors"));
        }
        let value = {
            let nodes = self.nodes.borrow();
            let first = &nodes[parts[0].id].value;
            let (_, cols) = first.dims2("concat_rows")?;
            let mut rows = 0;
            let mut data = Vec::new();
            for p in parts {
                p.same_tape(self)?;
                let t = &nodes[p.id].value;
                let (r, c) = t.dims2("concat_rows")?;
                if c != cols {
                    return Err(Error::Dimension {
                        op: "concat_rows",
                        lhs: first.shape.clone(),
                        rhs: t.shape.clone(),
                    });
                }
                rows += r;
                data.extend_from_slice(&t.data);
            }
            Tensor {
                shape: vec![rows, cols],
                data,
            }
        };
        let tracked = parts.iter().any(|p| self.tracked(p.id));
        let ids = parts.iter().map(|p| p.id).collect();
        Ok(self.push(value, Op::ConcatRows(ids), tracked))
    }

    /// Reverse sweep from a one-element root. Afterwards [`Tape::grad`]
    /// returns `∂root/∂node` for every tracked node that the root depends on.
    pub fn backward(&self, root: Var<'_>) -> Result<()> {
        root.same_tape(self)?;
        if self.grads.borrow().is_some() {
            return Err(Error::contract("backward already ran on this tape"));
        }
        let nodes = self.nodes.borrow();
        let root_node = &nodes[root.id];
        if root_node.value.numel() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar root, got shape {:?}",
                root_node.value.shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[root.id] = Some(vec![1.0]);

        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            if !node.tracked {
                continue;
            }
            let g = match &grads[id] {
                Some(g) => g.clone(),
                None => continue,
            };
            let val = |i: usize| &nodes[i].value;
            let wants = |i: usize| nodes[i].tracked;
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                    let (ta, tb) = (val(*a), val(*b));
                    let mode = broadcast("add", ta, tb)?;
                    if wants(*a) {
                        let ga = match mode {
                            Broadcast::LhsScalar => vec![g.iter().sum()],
                            _ => g.clone(),
                        };
                        accumulate(&mut grads[*a], ga);
                    }
                    if wants(*b) {
                        let gb = match mode {
                            Broadcast::RhsScalar => vec![sign * g.iter().sum::<f64>()],
                            _ => g.iter().map(|x| sign * x).collect(),
                        };
                        accumulate(&mut grads[*b], gb);
                    }
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (val(*a), val(*b));
                    let mode = broadcast("mul", ta, tb)?;
                    let (ga, gb) = match mode {
                        Broadcast::Same => (
                            g.iter().zip(&tb.data).map(|(g, y)| g * y).collect(),
                            g.iter().zip(&ta.data).map(|(g, x)| g * x).collect(),
                        ),
                        Broadcast::RhsScalar => {
                            let y = tb.data[0];
                            (
                                g.iter().map(|g| g * y).collect(),
                                vec![g.iter().zip(&ta.data).map(|(g, x)| g * x).sum()],
                            )
                        }
                        Broadcast::LhsScalar => {
                            let x = ta.data[0];
                            (
                                vec![g.iter().zip(&tb.data).map(|(g, y)| g * y).sum()],
                                g.iter().map(|g| g * x).collect(),
                            )
                        }
                    };
                    if wants(*a) {
                        accumulate(&mut grads[*a], ga);
                    }
                    if wants(*b) {
                        accumulate(&mut grads[*b], gb);
                    }
                }
                Op::AddRow(a, r) => {
                    if wants(*a) {
                        accumulate(&mut grads[*a], g.clone());
                    }
                    if wants(*r) {
                        let cols = val(*r).numel();
                        let mut gr = vec![0.0; cols];
                        for row in g.chunks(cols.max(1)) {
                            for (acc, x) in gr.iter_mut().zip(row) {
                                *acc += x;
                            }
                        }
                        accumulate(&mut grads[*r], gr);
                    }
                }
                Op::Scale(a, c) => {
                    accumulate(&mut grads[*a], g.iter().map(|x| x * c).collect());
                }
                Op::AddScalar(a) => accumulate(&mut grads[*a], g),
                Op::MatMul(a, b) => {
                    let (ta, tb) = (val(*a), val(*b));
                    let (m, k) = ta.dims2("matmul")?;
                    let (_, n) = tb.dims2("matmul")?;
                    if wants(*a) {
                        let bt = transpose_raw(&tb.data, k, n);
                        accumulate(&mut grads[*a], matmul_raw(&g, &bt, m, n, k));
                    }
                    if wants(*b) {
                        let at = transpose_raw(&ta.data, m, k);
                        accumulate(&mut grads[*b], matmul_raw(&at, &g, k, m, n));
                    }
                }
                Op::Transpose(a) => {
                    let (r, c) = val(*a).dims2("transpose")?;
                    accumulate(&mut grads[*a], transpose_raw(&g, c, r));
                }
                Op::Exp(a) => {
                    let y = &node.value.data;
                    accumulate(&mut grads[*a], g.iter().zip(y).map(|(g, y)| g * y).collect());
                }
                Op::Log { src, floor } => {
                    let x = &val(*src).data;
                    let gx = g
                        .iter()
                        .zip(x)
                        .map(|(g, &x)| if x > *floor { g / x } else { 0.0 })
                        .collect();
                    accumulate(&mut grads[*src], gx);
                }
                Op::Square(a) => {
                    let x = &val(*a).data;
                    accumulate(
                        &mut grads[*a],
                        g.iter().zip(x).map(|(g, x)| 2.0 * x * g).collect(),
                    );
                }
                Op::LeakyRelu { src, slope } => {
                    let x = &val(*src).data;
                    let gx = g
                        .iter()
                        .zip(x)
                        .map(|(g, &x)| if x > 0.0 { *g } else { slope * g })
                        .collect();
                    accumulate(&mut grads[*src], gx);
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let cols = y.cols();
                    let mut gx = vec![0.0; g.len()];
                    for i in 0..y.rows() {
                        let yr = &y.data[i * cols..(i + 1) * cols];
                        let gr = &g[i * cols..(i + 1) * cols];
                        let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                        for j in 0..cols {
                            gx[i * cols + j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    accumulate(&mut grads[*a], gx);
                }
                Op::Sum(a) => {
                    accumulate(&mut grads[*a], vec![g[0]; val(*a).numel()]);
                }
                Op::Mean(a) => {
                    let n = val(*a).numel();
                    accumulate(&mut grads[*a], vec![g[0] / n as f64; n]);
                }
                Op::GatherRows { src, indices } => {
                    let t = val(*src);
                    let cols = t.cols();
                    let mut gx = vec![0.0; t.numel()];
                    for (k, &i) in indices.iter().enumerate() {
                        for j in 0..cols {
                            gx[i * cols + j] += g[k * cols + j];
                        }
                    }
                    accumulate(&mut grads[*src], gx);
                }
                Op::PickPerRow { src, indices } => {
                    let t = val(*src);
                    let cols = t.cols();
                    let mut gx = vec![0.0; t.numel()];
                    for (i, &j) in indices.iter().enumerate() {
                        gx[i * cols + j] += g[i];
                    }
                    accumulate(&mut grads[*src], gx);
                }
                Op::ConcatRows(ids) => {
                    let mut offset = 0;
                    for &p in ids {
                        let n = val(p).numel();
                        if wants(p) {
                            accumulate(&mut grads[p], g[offset..offset + n].to_vec());
                        }
                        offset += n;
                    }
                }
                Op::SqL2Norm(a) => {
                    let x = &val(*a).data;
                    accumulate(&mut grads[*a], x.iter().map(|x| 2.0 * x * g[0]).collect());
                }
                Op::SqDist(a, b) => {
                    let (ta, tb) = (val(*a), val(*b));
                    let (m, f) = ta.dims2("sq_dist")?;
                    let (n, _) = tb.dims2("sq_dist")?;
                    let mut ga = vec![0.0; m * f];
                    let mut gb = vec![0.0; n * f];
                    for i in 0..m {
                        let ai = &ta.data[i * f..(i + 1) * f];
                        for j in 0..n {
                            let gij = 2.0 * g[i * n + j];
                            if gij == 0.0 {
                                continue;
                            }
                            let bj = &tb.data[j * f..(j + 1) * f];
                            for d in 0..f {
                                let diff = gij * (ai[d] - bj[d]);
                                ga[i * f + d] += diff;
                                gb[j * f + d] -= diff;
                            }
                        }
                    }
                    if wants(*a) {
                        accumulate(&mut grads[*a], ga);
                    }
                    if wants(*b) {
                        accumulate(&mut grads[*b], gb);
                    }
                }
            }
        }
        drop(nodes);
        *self.grads.borrow_mut() = Some(grads);
        Ok(())
    }

    /// Gradient of the last backward root with respect to `var`, if `var`
    /// is tracked and the root depends on it. Tracked nodes the root does
    /// not depend on report a zero gradient.
    pub fn grad(&self, var: Var<'_>) -> Option<Tensor> {
        let grads = self.grads.borrow();
        let grads = grads.as_ref()?;
        let nodes = self.nodes.borrow();
        let node = nodes.get(var.id)?;
        if !node.tracked {
            return None;
        }
        let data = grads
            .get(var.id)
            .cloned()
            .flatten()
            .unwrap_or_else(|| vec![0.0; node.value.numel()]);
        Some(Tensor {
            shape: node.value.shape.clone(),
            data,
        })
    }
}

impl<'t> Var<'t> {
    fn same_tape(&self, tape: &Tape) -> Result<()> {
        if std::ptr::eq(self.tape, tape) {
            Ok(())
        } else {
            Err(Error::contract("variables from different tapes"))
        }
    }

    fn unary(self, value: Tensor, op: Op) -> Var<'t> {
        let tracked = self.tape.tracked(self.id);
        self.tape.push(value, op, tracked)
    }

    fn binary(self, rhs: Var<'t>, value: Tensor, op: Op) -> Var<'t> {
        let tracked = self.tape.tracked(self.id) || self.tape.tracked(rhs.id);
        self.tape.push(value, op, tracked)
    }

    fn with<R>(&self, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.id].value)
    }

    fn with2<R>(&self, rhs: &Var<'t>, f: impl FnOnce(&Tensor, &Tensor) -> R) -> Result<R> {
        rhs.same_tape(self.tape)?;
        let nodes = self.tape.nodes.borrow();
        Ok(f(&nodes[self.id].value, &nodes[rhs.id].value))
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Tensor {
        self.with(Tensor::clone)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.with(|t| t.shape.clone())
    }

    pub fn item(&self) -> Result<f64> {
        self.with(Tensor::item)
    }

    pub fn is_tracked(&self) -> bool {
        self.tape.tracked(self.id)
    }

    pub fn grad(&self) -> Option<Tensor> {
        self.tape.grad(*self)
    }

    pub fn add(self, rhs: Var<'t>) -> Result<Var<'t>> {
        let value = self.with2(&rhs, |a, b| zip_broadcast("add", a, b, |x, y| x + y))??;
        Ok(self.binary(rhs, value, Op::Add(self.id, rhs.id)))
    }

    pub fn sub(self, rhs: Var<'t>) -> Result<Var<'t>> {
        let value = self.with2(&rhs, |a, b| zip_broadcast("sub", a, b, |x, y| x - y))??;
        Ok(self.binary(rhs, value, Op::Sub(self.id, rhs.id)))
    }

    /// Elementwise product; a one-element operand broadcasts.
    pub fn mul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        let value = self.with2(&rhs, |a, b| zip_broadcast("mul", a, b, |x, y| x * y))??;
        Ok(self.binary(rhs, value, Op::Mul(self.id, rhs.id)))
    }

    /// Adds a row vector (`[c]` or `[1×c]`) to every row of an `n×c` matrix.
    pub fn add_row(self, row: Var<'t>) -> Result<Var<'t>> {
        let value = self.with2(&row, |a, r| -> Result<Tensor> {
            let (_, c) = a.dims2("add_row")?;
            if r.numel() != c || r.shape.len() > 2 || (r.shape.len() == 2 && r.shape[0] != 1) {
                return Err(Error::Dimension {
                    op: "add_row",
                    lhs: a.shape.clone(),
                    rhs: r.shape.clone(),
                });
            }
            let mut data = a.data.clone();
            for chunk in data.chunks_mut(c.max(1)) {
                for (x, b) in chunk.iter_mut().zip(&r.data) {
                    *x += b;
                }
            }
            Ok(Tensor {
                shape: a.shape.clone(),
                data,
            })
        })??;
        Ok(self.binary(row, value, Op::AddRow(self.id, row.id)))
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        let value = self.with(|t| map(t, |x| x * c));
        self.unary(value, Op::Scale(self.id, c))
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        let value = self.with(|t| map(t, |x| x + c));
        self.unary(value, Op::AddScalar(self.id))
    }

    pub fn matmul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        let value = self.with2(&rhs, |a, b| -> Result<Tensor> {
            let (m, k) = a.dims2("matmul")?;
            let (k2, n) = b.dims2("matmul")?;
            if k != k2 {
                return Err(Error::Dimension {
                    op: "matmul",
                    lhs: a.shape.clone(),
                    rhs: b.shape.clone(),
                });
            }
            Ok(Tensor {
                shape: vec![m, n],
                data: matmul_raw(&a.data, &b.data, m, k, n),
            })
        })??;
        Ok(self.binary(rhs, value, Op::MatMul(self.id, rhs.id)))
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        let value = self.with(|t| -> Result<Tensor> {
            let (r, c) = t.dims2("transpose")?;
            Ok(Tensor {
                shape: vec![c, r],
                data: transpose_raw(&t.data, r, c),
            })
        })?;
        Ok(self.unary(value, Op::Transpose(self.id)))
    }

    pub fn exp(self) -> Var<'t> {
        let value = self.with(|t| map(t, f64::exp));
        self.unary(value, Op::Exp(self.id))
    }

    /// Natural log; every entry must be strictly positive.
    pub fn log(self) -> Result<Var<'t>> {
        if self.with(|t| t.data.iter().any(|&x| x.is_nan() || x <= 0.0)) {
            return Err(Error::NonFinite("log of a non-positive value".into()));
        }
        let value = self.with(|t| map(t, f64::ln));
        Ok(self.unary(
            value,
            Op::Log {
                src: self.id,
                floor: 0.0,
            },
        ))
    }

    /// `ln(max(x, floor))`; entries at or below the floor pass no gradient.
    pub fn log_clamped(self, floor: f64) -> Var<'t> {
        let value = self.with(|t| map(t, |x| x.max(floor).ln()));
        self.unary(value, Op::Log { src: self.id, floor })
    }

    pub fn square(self) -> Var<'t> {
        let value = self.with(|t| map(t, |x| x * x));
        self.unary(value, Op::Square(self.id))
    }

    /// Elementwise `max(x, slope·x)` for `slope` in (0, 1).
    pub fn leaky_relu(self, slope: f64) -> Var<'t> {
        let value = self.with(|t| map(t, |x| if x > 0.0 { x } else { slope * x }));
        self.unary(value, Op::LeakyRelu { src: self.id, slope })
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax(self) -> Result<Var<'t>> {
        let value = self.with(|t| -> Result<Tensor> {
            let (r, c) = t.dims2("softmax")?;
            if c == 0 {
                return Err(Error::contract("softmax over zero classes"));
            }
            if !t.all_finite() {
                return Err(Error::NonFinite("softmax logits".into()));
            }
            let mut data = vec![0.0; r * c];
            for i in 0..r {
                let row = &t.data[i * c..(i + 1) * c];
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let out = &mut data[i * c..(i + 1) * c];
                let mut total = 0.0;
                for (o, &x) in out.iter_mut().zip(row) {
                    *o = (x - max).exp();
                    total += *o;
                }
                for o in out.iter_mut() {
                    *o /= total;
                }
            }
            Ok(Tensor {
                shape: vec![r, c],
                data,
            })
        })?;
        Ok(self.unary(value, Op::Softmax(self.id)))
    }

    pub fn sum(self) -> Var<'t> {
        let value = self.with(|t| Tensor::scalar(t.data.iter().sum()));
        self.unary(value, Op::Sum(self.id))
    }

    pub fn mean(self) -> Result<Var<'t>> {
        let value = self.with(|t| {
            if t.numel() == 0 {
                Err(Error::contract("mean of an empty tensor"))
            } else {
                Ok(Tensor::scalar(t.data.iter().sum::<f64>() / t.numel() as f64))
            }
        })?;
        Ok(self.unary(value, Op::Mean(self.id)))
    }

    /// Selects rows of a matrix; indices may repeat.
    pub fn gather_rows(self, indices: &[usize]) -> Result<Var<'t>> {
        let value = self.with(|t| t.select_rows(indices))?;
        Ok(self.unary(
            value,
            Op::GatherRows {
                src: self.id,
                indices: indices.to_vec(),
            },
        ))
    }

    /// `out[i] = x[i, indices[i]]`, shaped `n×1`.
    pub fn pick_per_row(self, indices: &[usize]) -> Result<Var<'t>> {
        let value = self.with(|t| -> Result<Tensor> {
            let (r, c) = t.dims2("pick_per_row")?;
            if indices.len() != r {
                return Err(Error::Dimension {
                    op: "pick_per_row",
                    lhs: t.shape.clone(),
                    rhs: vec![indices.len()],
                });
            }
            let mut data = Vec::with_capacity(r);
            for (i, &j) in indices.iter().enumerate() {
                if j >= c {
                    return Err(Error::Index {
                        op: "pick_per_row",
                        index: j,
                        extent: c,
                    });
                }
                data.push(t.data[i * c + j]);
            }
            Ok(Tensor {
                shape: vec![r, 1],
                data,
            })
        })?;
        Ok(self.unary(
            value,
            Op::PickPerRow {
                src: self.id,
                indices: indices.to_vec(),
            },
        ))
    }

    /// Sum of squared entries.
    pub fn sq_l2_norm(self) -> Var<'t> {
        let value = self.with(|t| Tensor::scalar(t.data.iter().map(|x| x * x).sum()));
        self.unary(value, Op::SqL2Norm(self.id))
    }

    /// Pairwise squared Euclidean distances between the rows of `self[m×f]`
    /// and `rhs[n×f]`, shaped `m×n`.
    pub fn sq_dist(self, rhs: Var<'t>) -> Result<Var<'t>> {
        let value = self.with2(&rhs, |a, b| -> Result<Tensor> {
            let (m, f) = a.dims2("sq_dist")?;
            let (n, f2) = b.dims2("sq_dist")?;
            if f != f2 {
                return Err(Error::Dimension {
                    op: "sq_dist",
                    lhs: a.shape.clone(),
                    rhs: b.shape.clone(),
                });
            }
            let mut data = Vec::with_capacity(m * n);
            for i in 0..m {
                let ai = &a.data[i * f..(i + 1) * f];
                for j in 0..n {
                    let bj = &b.data[j * f..(j + 1) * f];
                    data.push(ai.iter().zip(bj).map(|(x, y)| (x - y) * (x - y)).sum());
                }
            }
            Ok(Tensor {
                shape: vec![m, n],
                data,
            })
        })??;
        Ok(self.binary(rhs, value, Op::SqDist(self.id, rhs.id)))
    }
}
