use std::cell::{Ref, RefCell};
use std::rc::Rc;

use super::gemm::gemm;
use super::tensor::matrix_dims;
use super::{AutodiffError, AutodiffResult, Tensor, EPS};

pub type NodeId = usize;

/// Differentiable operation kinds understood by [`Tape::record`].
#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    Add,
    Sub,
    /// Elementwise product of two equally shaped tensors.
    Mul,
    Scale(f64),
    /// `[m, k] x [k, n]`.
    MatMul,
    /// `[m, n] + [n]` broadcast over rows.
    BiasAdd,
    Sin,
    Sum,
    Mean,
    /// Subgradient 0 at the origin.
    Abs,
    Square,
    /// `sqrt(max(x, EPS))`; zero gradient below the floor.
    Sqrt,
    GatherRows(Rc<[usize]>),
    /// Adjoint of `GatherRows`: row `r` of the input is added to output row
    /// `indices[r]` of a `rows`-row result.
    ScatterAddRows { indices: Rc<[usize]>, rows: usize },
    /// Row-wise `sum((a - b)^2)`, shape `[r, 1]`.
    SquaredRowDistance,
    /// Row-wise dot product, shape `[r, 1]`.
    DotRows,
    /// Row-wise cross product of `[r, 3]` operands.
    CrossRows,
    /// Row-wise `a / max(|a|, EPS)`.
    NormalizeRows,
}

impl OpKind {
    fn arity(&self) -> usize {
        match self {
            OpKind::Add
            | OpKind::Sub
            | OpKind::Mul
            | OpKind::MatMul
            | OpKind::BiasAdd
            | OpKind::SquaredRowDistance
            | OpKind::DotRows
            | OpKind::CrossRows => 2,
            _ => 1,
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Option<OpKind>,
    parents: [NodeId; 2],
    requires_grad: bool,
    is_param: bool,
}

/// Records operations in execution order for a single backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a recorded value.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: NodeId,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({})", self.id)
    }
}

/// Gradients of parameter leaves from one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of a parameter leaf; `None` for anything else.
    pub fn get(&self, var: &Var<'_>) -> Option<&[f64]> {
        self.grads.get(var.id).and_then(|g| g.as_deref())
    }

    pub fn by_id(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id).and_then(|g| g.as_deref())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, value: Tensor, op: Option<OpKind>, parents: [NodeId; 2], requires_grad: bool, is_param: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            parents,
            requires_grad,
            is_param,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// A constant input; never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, None, [0, 0], false, false)
    }

    /// A leaf whose gradient [`Tape::backward`] reports.
    pub fn parameter(&self, value: Tensor) -> Var<'_> {
        self.push(value, None, [0, 0], true, true)
    }

    pub fn value(&self, var: &Var<'_>) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[var.id].value)
    }

    /// Records `kind` applied to `inputs` and computes its forward value.
    pub fn record<'t>(&'t self, kind: OpKind, inputs: &[Var<'t>]) -> AutodiffResult<Var<'t>> {
        if inputs.len() != kind.arity() {
            return Err(AutodiffError::ShapeMismatch(format!(
                "{kind:?} takes {} inputs, got {}",
                kind.arity(),
                inputs.len()
            )));
        }
        if inputs.iter().any(|v| !std::ptr::eq(v.tape, self)) {
            return Err(AutodiffError::ForeignVariable);
        }
        let (value, requires_grad) = {
            let nodes = self.nodes.borrow();
            let a = &nodes[inputs[0].id];
            let b = inputs.get(1).map(|v| &nodes[v.id]);
            let value = forward(&kind, &a.value, b.map(|n| &n.value))?;
            let rg = a.requires_grad || b.is_some_and(|n| n.requires_grad);
            (value, rg)
        };
        let parents = [inputs[0].id, inputs.get(1).map_or(inputs[0].id, |v| v.id)];
        Ok(self.push(value, Some(kind), parents, requires_grad, false))
    }

    /// Gradients of the scalar `output` with respect to every parameter leaf.
    pub fn backward(&self, output: &Var<'_>) -> AutodiffResult<Gradients> {
        if !std::ptr::eq(output.tape, self) {
            return Err(AutodiffError::ForeignVariable);
        }
        let nodes = self.nodes.borrow();
        let out = &nodes[output.id];
        if out.value.len() != 1 {
            return Err(AutodiffError::NonScalarOutput(out.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[output.id] = Some(vec![1.0]);
        for id in (0..=output.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(op) = &node.op else { continue };
            let Some(g) = grads[id].take() else { continue };
            let [pa, pb] = node.parents;
            let a = &nodes[pa];
            let b = &nodes[pb];
            let need_a = a.requires_grad;
            let need_b = op.arity() == 2 && b.requires_grad;
            let (da, db) = vjp(op, &a.value, &b.value, &node.value, &g, need_a, need_b);
            if let Some(da) = da {
                accumulate(&mut grads[pa], da);
            }
            if let Some(db) = db {
                accumulate(&mut grads[pb], db);
            }
            // keep grads of leaves only; intermediates are consumed
        }
        let grads = grads
            .into_iter()
            .zip(nodes.iter())
            .map(|(g, n)| {
                if n.is_param {
                    Some(g.unwrap_or_else(|| vec![0.0; n.value.len()]))
                } else {
                    None
                }
            })
            .collect();
        Ok(Gradients { grads })
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, delta: Vec<f64>) {
    match slot {
        Some(existing) => {
            for (e, d) in existing.iter_mut().zip(delta) {
                *e += d;
            }
        }
        None => *slot = Some(delta),
    }
}

fn same_shape(kind: &OpKind, a: &Tensor, b: &Tensor) -> AutodiffResult<()> {
    if a.shape() != b.shape() {
        return Err(AutodiffError::ShapeMismatch(format!(
            "{kind:?}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn same_rows(kind: &OpKind, a: &Tensor, b: &Tensor) -> AutodiffResult<(usize, usize)> {
    let da = a.dims();
    if da != b.dims() {
        return Err(AutodiffError::ShapeMismatch(format!(
            "{kind:?}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(da)
}

fn map(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(a.shape().to_vec(), a.data().iter().map(|&x| f(x)).collect()).expect("same shape")
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::new(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
    .expect("same shape")
}

fn forward(kind: &OpKind, a: &Tensor, b: Option<&Tensor>) -> AutodiffResult<Tensor> {
    let b = || b.expect("arity checked");
    Ok(match kind {
        OpKind::Add => {
            same_shape(kind, a, b())?;
            zip(a, b(), |x, y| x + y)
        }
        OpKind::Sub => {
            same_shape(kind, a, b())?;
            zip(a, b(), |x, y| x - y)
        }
        OpKind::Mul => {
            same_shape(kind, a, b())?;
            zip(a, b(), |x, y| x * y)
        }
        OpKind::Scale(s) => map(a, |x| s * x),
        OpKind::MatMul => {
            let (m, k) = a.dims();
            let (k2, n) = b().dims();
            if a.shape().len() != 2 || k != k2 {
                return Err(AutodiffError::ShapeMismatch(format!(
                    "MatMul: {:?} x {:?}",
                    a.shape(),
                    b().shape()
                )));
            }
            let mut out = vec![0.0; m * n];
            gemm(m, k, n, a.data(), false, b().data(), false, 0.0, &mut out);
            Tensor::matrix(m, n, out)?
        }
        OpKind::BiasAdd => {
            let (m, n) = a.dims();
            let bias = b();
            if bias.len() != n || !matches!(bias.shape(), [_] | [1, _]) {
                return Err(AutodiffError::ShapeMismatch(format!(
                    "BiasAdd: {:?} + {:?}",
                    a.shape(),
                    bias.shape()
                )));
            }
            let mut out = a.data().to_vec();
            for row in 0..m {
                for (o, bv) in out[row * n..(row + 1) * n].iter_mut().zip(bias.data()) {
                    *o += bv;
                }
            }
            Tensor::new(a.shape().to_vec(), out)?
        }
        OpKind::Sin => map(a, f64::sin),
        OpKind::Sum => Tensor::scalar(a.data().iter().sum()),
        OpKind::Mean => {
            if a.is_empty() {
                return Err(AutodiffError::ShapeMismatch("Mean of an empty tensor".into()));
            }
            Tensor::scalar(a.data().iter().sum::<f64>() / a.len() as f64)
        }
        OpKind::Abs => map(a, f64::abs),
        OpKind::Square => map(a, |x| x * x),
        OpKind::Sqrt => map(a, |x| x.max(EPS).sqrt()),
        OpKind::GatherRows(indices) => {
            let (rows, cols) = a.dims();
            let mut out = Vec::with_capacity(indices.len() * cols);
            for &i in indices.iter() {
                if i >= rows {
                    return Err(AutodiffError::IndexOutOfRange { index: i, rows });
                }
                out.extend_from_slice(&a.data()[i * cols..(i + 1) * cols]);
            }
            Tensor::matrix(indices.len(), cols, out)?
        }
        OpKind::ScatterAddRows { indices, rows } => {
            let (r, cols) = a.dims();
            if r != indices.len() {
                return Err(AutodiffError::ShapeMismatch(format!(
                    "ScatterAddRows: {r} input rows for {} indices",
                    indices.len()
                )));
            }
            let mut out = vec![0.0; rows * cols];
            for (src, &dst) in indices.iter().enumerate() {
                if dst >= *rows {
                    return Err(AutodiffError::IndexOutOfRange { index: dst, rows: *rows });
                }
                for c in 0..cols {
                    out[dst * cols + c] += a.data()[src * cols + c];
                }
            }
            Tensor::matrix(*rows, cols, out)?
        }
        OpKind::SquaredRowDistance => {
            let (r, c) = same_rows(kind, a, b())?;
            let (ad, bd) = (a.data(), b().data());
            let out = (0..r)
                .map(|i| {
                    let mut s = 0.0;
                    for j in 0..c {
                        let d = ad[i * c + j] - bd[i * c + j];
                        s += d * d;
                    }
                    s
                })
                .collect();
            Tensor::column(out)
        }
        OpKind::DotRows => {
            let (r, c) = same_rows(kind, a, b())?;
            let (ad, bd) = (a.data(), b().data());
            let out = (0..r)
                .map(|i| (0..c).map(|j| ad[i * c + j] * bd[i * c + j]).sum())
                .collect();
            Tensor::column(out)
        }
        OpKind::CrossRows => {
            let (r, c) = same_rows(kind, a, b())?;
            if c != 3 {
                return Err(AutodiffError::ShapeMismatch("CrossRows needs [r, 3]".into()));
            }
            let (ad, bd) = (a.data(), b().data());
            let mut out = Vec::with_capacity(r * 3);
            for i in 0..r {
                out.extend_from_slice(&cross(&ad[3 * i..3 * i + 3], &bd[3 * i..3 * i + 3]));
            }
            Tensor::matrix(r, 3, out)?
        }
        OpKind::NormalizeRows => {
            let (r, c) = a.dims();
            let mut out = a.data().to_vec();
            for row in out.chunks_mut(c.max(1)).take(r) {
                let n = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(EPS);
                row.iter_mut().for_each(|x| *x /= n);
            }
            Tensor::new(a.shape().to_vec(), out)?
        }
    })
}

fn cross(a: &[f64], b: &[f64]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Vector-Jacobian products for both operands.
fn vjp(
    op: &OpKind,
    a: &Tensor,
    b: &Tensor,
    out: &Tensor,
    g: &[f64],
    need_a: bool,
    need_b: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let some_if = |need: bool, f: &dyn Fn() -> Vec<f64>| if need { Some(f()) } else { None };
    match op {
        OpKind::Add => (some_if(need_a, &|| g.to_vec()), some_if(need_b, &|| g.to_vec())),
        OpKind::Sub => (
            some_if(need_a, &|| g.to_vec()),
            some_if(need_b, &|| g.iter().map(|x| -x).collect()),
        ),
        OpKind::Mul => (
            some_if(need_a, &|| g.iter().zip(b.data()).map(|(g, y)| g * y).collect()),
            some_if(need_b, &|| g.iter().zip(a.data()).map(|(g, x)| g * x).collect()),
        ),
        OpKind::Scale(s) => (some_if(need_a, &|| g.iter().map(|x| s * x).collect()), None),
        OpKind::MatMul => {
            let (m, k) = a.dims();
            let (_, n) = b.dims();
            let da = some_if(need_a, &|| {
                let mut d = vec![0.0; m * k];
                gemm(m, n, k, g, false, b.data(), true, 0.0, &mut d);
                d
            });
            let db = some_if(need_b, &|| {
                let mut d = vec![0.0; k * n];
                gemm(k, m, n, a.data(), true, g, false, 0.0, &mut d);
                d
            });
            (da, db)
        }
        OpKind::BiasAdd => {
            let (m, n) = a.dims();
            let db = some_if(need_b, &|| {
                let mut d = vec![0.0; n];
                for row in 0..m {
                    for (dj, gv) in d.iter_mut().zip(&g[row * n..(row + 1) * n]) {
                        *dj += gv;
                    }
                }
                d
            });
            (some_if(need_a, &|| g.to_vec()), db)
        }
        OpKind::Sin => (
            some_if(need_a, &|| g.iter().zip(a.data()).map(|(g, x)| g * x.cos()).collect()),
            None,
        ),
        OpKind::Sum => (some_if(need_a, &|| vec![g[0]; a.len()]), None),
        OpKind::Mean => (some_if(need_a, &|| vec![g[0] / a.len() as f64; a.len()]), None),
        OpKind::Abs => (
            some_if(need_a, &|| {
                g.iter()
                    .zip(a.data())
                    .map(|(g, &x)| {
                        if x > 0.0 {
                            *g
                        } else if x < 0.0 {
                            -g
                        } else {
                            0.0
                        }
                    })
                    .collect()
            }),
            None,
        ),
        OpKind::Square => (
            some_if(need_a, &|| g.iter().zip(a.data()).map(|(g, x)| 2.0 * x * g).collect()),
            None,
        ),
        OpKind::Sqrt => (
            some_if(need_a, &|| {
                g.iter()
                    .zip(a.data())
                    .zip(out.data())
                    .map(|((g, &x), y)| if x > EPS { 0.5 * g / y } else { 0.0 })
                    .collect()
            }),
            None,
        ),
        OpKind::GatherRows(indices) => (
            some_if(need_a, &|| {
                let cols = a.cols();
                let mut d = vec![0.0; a.len()];
                for (r, &i) in indices.iter().enumerate() {
                    for c in 0..cols {
                        d[i * cols + c] += g[r * cols + c];
                    }
                }
                d
            }),
            None,
        ),
        OpKind::ScatterAddRows { indices, .. } => (
            some_if(need_a, &|| {
                let cols = a.cols();
                let mut d = Vec::with_capacity(a.len());
                for &dst in indices.iter() {
                    d.extend_from_slice(&g[dst * cols..(dst + 1) * cols]);
                }
                d
            }),
            None,
        ),
        OpKind::SquaredRowDistance => {
            let (r, c) = a.dims();
            let diff = || -> Vec<f64> {
                let mut d = Vec::with_capacity(r * c);
                for i in 0..r {
                    for j in 0..c {
                        d.push(2.0 * (a.data()[i * c + j] - b.data()[i * c + j]) * g[i]);
                    }
                }
                d
            };
            (
                some_if(need_a, &diff),
                some_if(need_b, &|| diff().into_iter().map(|x| -x).collect()),
            )
        }
        OpKind::DotRows => {
            let (r, c) = a.dims();
            let scaled = |other: &Tensor| -> Vec<f64> {
                let mut d = Vec::with_capacity(r * c);
                for i in 0..r {
                    for j in 0..c {
                        d.push(other.data()[i * c + j] * g[i]);
                    }
                }
                d
            };
            (some_if(need_a, &|| scaled(b)), some_if(need_b, &|| scaled(a)))
        }
        OpKind::CrossRows => {
            let r = a.rows();
            let da = some_if(need_a, &|| {
                let mut d = Vec::with_capacity(3 * r);
                for i in 0..r {
                    d.extend_from_slice(&cross(&b.data()[3 * i..3 * i + 3], &g[3 * i..3 * i + 3]));
                }
                d
            });
            let db = some_if(need_b, &|| {
                let mut d = Vec::with_capacity(3 * r);
                for i in 0..r {
                    d.extend_from_slice(&cross(&g[3 * i..3 * i + 3], &a.data()[3 * i..3 * i + 3]));
                }
                d
            });
            (da, db)
        }
        OpKind::NormalizeRows => (
            some_if(need_a, &|| {
                let (r, c) = a.dims();
                let mut d = Vec::with_capacity(r * c);
                for i in 0..r {
                    let row = &a.data()[i * c..(i + 1) * c];
                    let y = &out.data()[i * c..(i + 1) * c];
                    let gi = &g[i * c..(i + 1) * c];
                    let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if norm > EPS {
                        let yg: f64 = y.iter().zip(gi).map(|(y, g)| y * g).sum();
                        d.extend(y.iter().zip(gi).map(|(y, g)| (g - y * yg) / norm));
                    } else {
                        d.extend(gi.iter().map(|g| g / EPS));
                    }
                }
                d
            }),
            None,
        ),
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// Copy of the forward value.
    pub fn value(&self) -> Tensor {
        self.tape.value(self).clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.value(self).shape().to_vec()
    }

    pub fn dims(&self) -> (usize, usize) {
        matrix_dims(self.tape.value(self).shape())
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        self.tape.value(self).item()
    }

    fn unary(&self, kind: OpKind) -> AutodiffResult<Var<'t>> {
        self.tape.record(kind, &[*self])
    }

    fn binary(&self, kind: OpKind, other: &Var<'t>) -> AutodiffResult<Var<'t>> {
        self.tape.record(kind, &[*self, *other])
    }

    pub fn add(&self, other: &Var<'t>) -> AutodiffResult<Var<'t>> {
        self.binary(OpKind::Add, other)
    }

    pub fn sub(&self, other: &Var<'t>) -> AutodiffResult<Var<'t>> {
        self.binary(OpKind::Sub, other)
    }

    pub fn mul(&self, other: &Var<'t>) -> AutodiffResult<Var<'t>> {
        self.binary(OpKind::Mul, other)
    }

    pub fn scale(&self, s: f64) -> AutodiffResult<Var<'t>> {
        self.unary(OpKind::Scale(s))
    }

    pub fn matmul(&self, other: &Var<'t>) -> AutodiffResult<Var<'t>> {
        self.binary(OpKind::MatMul, other)
    }

    pub fn bias_add(&self, bias: &Var<'t>) -> AutodiffResult<Var<'t>> {
        self.binary(OpKind::BiasAdd, bias)
    }

    pub fn sin(&self) -> AutodiffResult<Var<'t>> {
        self.unary(OpKind::Sin)
    }

    pub fn sum(&self) -> AutodiffResult<Var<'t>> {
        self.unary(OpKind::Sum)
    }

    pub fn mean(&self) -> AutodiffResult<Var<'t>> {
        self.unary(OpKind::Mean)
    }

    pub fn abs(&self) -> AutodiffResult<Var<'t>> {
        self.unary(OpKind::Abs)
    }

    pub fn square(&self) -> AutodiffResult<Var<'t>> {
        self.unary(OpKind::Square)
    }

    pub fn sqrt(&self) -> AutodiffResult<Var<'t>> {
        self.unary(OpKind::Sqrt)
    }

    pub fn gather_rows(&self, indices: impl Into<Rc<[usize]>>) -> AutodiffResult<Var<'t>> {
        self.unary(OpKind::GatherRows(indices.into()))
    }

    pub fn scatter_add_rows(&self, indices: impl Into<Rc<[usize]>>, rows: usize) -> AutodiffResult<Var<'t>> {
        self.unary(OpKind::ScatterAddRows {
            indices: indices.into(),
            rows,
        })
    }

    pub fn squared_row_distance(&self, other: &Var<'t>) -> AutodiffResult<Var<'t>> {
        self.binary(OpKind::SquaredRowDistance, other)
    }

    pub fn dot_rows(&self, other: &Var<'t>) -> AutodiffResult<Var<'t>> {
        self.binary(OpKind::DotRows, other)
    }

    pub fn cross_rows(&self, other: &Var<'t>) -> AutodiffResult<Var<'t>> {
        self.binary(OpKind::CrossRows, other)
    }

    pub fn normalize_rows(&self) -> AutodiffResult<Var<'t>> {
        self.unary(OpKind::NormalizeRows)
    }

    /// `self + c` for a scalar tensor `self`.
    pub fn add_scalar(&self, c: f64) -> AutodiffResult<Var<'t>> {
        let shape = self.shape();
        let n: usize = shape.iter().product();
        let k = self.tape.constant(Tensor::new(shape, vec![c; n])?);
        self.add(&k)
    }
}
