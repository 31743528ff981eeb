//! Define-by-run tape with reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order and `backward` is a single reverse sweep.

use std::collections::HashMap;

use super::array::Array;
use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

/// Clamp applied to `acos` inputs.
pub const ACOS_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatVec(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    MatMulNt(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Scale(NodeId, f64),
    AddConst(NodeId),
    ScaleBy(NodeId, NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Softmax(NodeId),
    Norm(NodeId),
    Normalize(NodeId),
    NormalizeRows(NodeId),
    Dot(NodeId, NodeId),
    Acos(NodeId),
    Cos(NodeId),
    Square(NodeId),
    Sqrt(NodeId),
    Recip(NodeId),
    ClampMin(NodeId, f64),
    Sum(NodeId),
    Mean(NodeId),
    Concat(Vec<NodeId>),
    Pick(NodeId, usize),
    Row(NodeId, usize),
}

#[derive(Debug)]
struct Node {
    value: Array,
    op: Op,
    requires_grad: bool,
}

/// Computation graph rebuilt for every evaluation.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Array>>,
    bound: HashMap<ParamId, NodeId>,
}

fn check_finite(op: &'static str, a: &Array) -> Result<()> {
    if a.all_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

fn mismatch(op: &'static str, shapes: &[&[usize]]) -> Error {
    Error::ShapeMismatch {
        op,
        shapes: shapes.iter().map(|s| s.to_vec()).collect(),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array {
        &self.nodes[id.0].value
    }

    /// Scalar value of a node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value.data()[0]
    }

    fn push(&mut self, op: &'static str, value: Array, kind: Op) -> Result<NodeId> {
        check_finite(op, &value)?;
        let requires_grad = self.parents(&kind).iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op: kind,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn parents(&self, op: &Op) -> Vec<NodeId> {
        match op {
            Op::Leaf => vec![],
            Op::MatVec(a, b)
            | Op::MatMul(a, b)
            | Op::MatMulNt(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::ScaleBy(a, b)
            | Op::Dot(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::AddConst(a)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Softmax(a)
            | Op::Norm(a)
            | Op::Normalize(a)
            | Op::NormalizeRows(a)
            | Op::Acos(a)
            | Op::Cos(a)
            | Op::Square(a)
            | Op::Sqrt(a)
            | Op::Recip(a)
            | Op::ClampMin(a, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Pick(a, _)
            | Op::Row(a, _) => vec![*a],
            Op::Concat(xs) => xs.clone(),
        }
    }

    fn leaf(&mut self, value: Array, requires_grad: bool) -> Result<NodeId> {
        check_finite("leaf", &value)?;
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Input that is not differentiated.
    pub fn constant(&mut self, value: Array) -> Result<NodeId> {
        self.leaf(value, false)
    }

    /// Differentiable leaf.
    pub fn variable(&mut self, value: Array) -> Result<NodeId> {
        self.leaf(value, true)
    }

    /// Bind a stored parameter. Repeated calls return the same node so
    /// shared use accumulates into one gradient.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<NodeId> {
        if let Some(&n) = self.bound.get(&id) {
            return Ok(n);
        }
        let n = self.variable(store.value(id).clone())?;
        self.bound.insert(id, n);
        Ok(n)
    }

    /// Bound parameters and their gradients after `backward`.
    pub fn param_grads(&self) -> Vec<(ParamId, Array)> {
        let mut out: Vec<(ParamId, Array)> = self
            .bound
            .iter()
            .map(|(&pid, &nid)| {
                let g = self
                    .grad(nid)
                    .cloned()
                    .unwrap_or_else(|| Array::zeros(self.value(nid).shape()));
                (pid, g)
            })
            .collect();
        out.sort_by_key(|(p, _)| *p);
        out
    }

    pub fn grad(&self, id: NodeId) -> Option<&Array> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    // ---- primitives -------------------------------------------------------

    /// `W x` for a matrix `W` of shape `[m, n]` and a vector `x` of length `n`.
    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> Result<NodeId> {
        let (wv, xv) = (self.value(w), self.value(x));
        if !wv.is_matrix() || !xv.is_vector() || wv.cols() != xv.len() {
            return Err(mismatch("matvec", &[wv.shape(), xv.shape()]));
        }
        let (m, n) = (wv.rows(), wv.cols());
        let xd = xv.data();
        let out: Vec<f64> = (0..m)
            .map(|i| wv.data()[i * n..(i + 1) * n].iter().zip(xd).map(|(a, b)| a * b).sum())
            .collect();
        self.push("matvec", Array::vector(out), Op::MatVec(w, x))
    }

    /// `A B` for matrices `[m, k]` and `[k, n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if !av.is_matrix() || !bv.is_matrix() || av.cols() != bv.rows() {
            return Err(mismatch("matmul", &[av.shape(), bv.shape()]));
        }
        let out = matmul_raw(av.data(), bv.data(), av.rows(), av.cols(), bv.cols());
        let shape = vec![av.rows(), bv.cols()];
        self.push("matmul", Array::from_parts(shape, out), Op::MatMul(a, b))
    }

    /// `A Bᵀ` for matrices `[m, k]` and `[n, k]`.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if !av.is_matrix() || !bv.is_matrix() || av.cols() != bv.cols() {
            return Err(mismatch("matmul_nt", &[av.shape(), bv.shape()]));
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.rows());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let ar = &av.data()[i * k..(i + 1) * k];
            for j in 0..n {
                let br = &bv.data()[j * k..(j + 1) * k];
                out[i * n + j] = ar.iter().zip(br).map(|(x, y)| x * y).sum();
            }
        }
        self.push("matmul_nt", Array::from_parts(vec![m, n], out), Op::MatMulNt(a, b))
    }

    fn zip_same(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if !av.same_shape(bv) {
            return Err(mismatch(name, &[av.shape(), bv.shape()]));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Array::from_parts(av.shape().to_vec(), data);
        self.push(name, value, op)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_same("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_same("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_same("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_same("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// Multiply by a constant.
    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let v = self.value(a).map(|x| x * c);
        self.push("scale", v, Op::Scale(a, c))
    }

    pub fn neg(&mut self, a: NodeId) -> Result<NodeId> {
        self.scale(a, -1.0)
    }

    /// Add a constant to every element.
    pub fn add_const(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let v = self.value(a).map(|x| x + c);
        self.push("add_const", v, Op::AddConst(a))
    }

    /// Multiply every element of `a` by the scalar node `s`.
    pub fn scale_by(&mut self, a: NodeId, s: NodeId) -> Result<NodeId> {
        let sv = self.value(s);
        if !sv.is_scalar() {
            return Err(mismatch("scale_by", &[self.value(a).shape(), sv.shape()]));
        }
        let c = sv.item();
        let v = self.value(a).map(|x| x * c);
        self.push("scale_by", v, Op::ScaleBy(a, s))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push("relu", v, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map(sigmoid);
        self.push("sigmoid", v, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map(f64::exp);
        self.push("exp", v, Op::Exp(a))
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map(f64::ln);
        self.push("log", v, Op::Log(a))
    }

    /// Softmax over a vector, computed with max subtraction.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.value(a);
        if !av.is_vector() {
            return Err(mismatch("softmax", &[av.shape()]));
        }
        let v = Array::vector(softmax(av.data()));
        self.push("softmax", v, Op::Softmax(a))
    }

    /// L2 norm of all elements, as a scalar.
    pub fn norm(&mut self, a: NodeId) -> Result<NodeId> {
        let n = self.value(a).norm();
        self.push("norm", Array::scalar(n), Op::Norm(a))
    }

    /// Scale a vector to unit L2 norm.
    pub fn normalize(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.value(a);
        let n = av.norm();
        if n == 0.0 {
            return Err(Error::ZeroNorm { op: "normalize" });
        }
        let v = av.map(|x| x / n);
        self.push("normalize", v, Op::Normalize(a))
    }

    /// Scale every row of a matrix to unit L2 norm.
    pub fn normalize_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.value(a);
        if !av.is_matrix() {
            return Err(mismatch("normalize_rows", &[av.shape()]));
        }
        let mut v = av.clone();
        for r in 0..v.rows() {
            let row = v.row_mut(r);
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n == 0.0 {
                return Err(Error::ZeroNorm { op: "normalize_rows" });
            }
            row.iter_mut().for_each(|x| *x /= n);
        }
        self.push("normalize_rows", v, Op::NormalizeRows(a))
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if !av.same_shape(bv) {
            return Err(mismatch("dot", &[av.shape(), bv.shape()]));
        }
        let d = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).sum();
        self.push("dot", Array::scalar(d), Op::Dot(a, b))
    }

    /// `acos` with the input clamped to `[-1 + ε, 1 - ε]`.
    pub fn acos(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map(|x| clamp_acos(x).acos());
        self.push("acos", v, Op::Acos(a))
    }

    pub fn cos(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map(f64::cos);
        self.push("cos", v, Op::Cos(a))
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map(|x| x * x);
        self.push("square", v, Op::Square(a))
    }

    /// Square root of non-negative values; the gradient at exactly zero is
    /// taken as zero.
    pub fn sqrt(&mut self, a: NodeId) -> Result<NodeId> {
        if self.value(a).data().iter().any(|&x| x < 0.0) {
            return Err(Error::InvalidInput("sqrt of a negative value".into()));
        }
        let v = self.value(a).map(f64::sqrt);
        self.push("sqrt", v, Op::Sqrt(a))
    }

    pub fn recip(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map(|x| 1.0 / x);
        self.push("recip", v, Op::Recip(a))
    }

    /// Elementwise `max(x, floor)`; no gradient flows where the floor binds.
    pub fn clamp_min(&mut self, a: NodeId, floor: f64) -> Result<NodeId> {
        let v = self.value(a).map(|x| x.max(floor));
        self.push("clamp_min", v, Op::ClampMin(a, floor))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.value(a).data().iter().sum();
        self.push("sum", Array::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.value(a);
        let s = av.data().iter().sum::<f64>() / av.len() as f64;
        self.push("mean", Array::scalar(s), Op::Mean(a))
    }

    /// Concatenate along the first axis. Vectors (and scalars) join into a
    /// vector; matrices with equal column counts stack their rows.
    pub fn concat(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(Error::InvalidInput("concat of an empty list".into()));
        }
        let first = self.value(xs[0]);
        let matrix = first.is_matrix();
        let cols = first.cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for &x in xs {
            let v = self.value(x);
            let ok = if matrix {
                v.is_matrix() && v.cols() == cols
            } else {
                v.is_vector()
            };
            if !ok {
                let shapes: Vec<&[usize]> = xs.iter().map(|&i| self.value(i).shape()).collect();
                return Err(mismatch("concat", &shapes));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let shape = if matrix { vec![rows, cols] } else { vec![rows] };
        self.push("concat", Array::from_parts(shape, data), Op::Concat(xs.to_vec()))
    }

    /// Element `i` of a vector, as a scalar.
    pub fn pick(&mut self, a: NodeId, i: usize) -> Result<NodeId> {
        let av = self.value(a);
        if !av.is_vector() || i >= av.len() {
            return Err(Error::InvalidInput(format!(
                "pick index {i} out of range for shape {:?}",
                av.shape()
            )));
        }
        let v = Array::scalar(av.data()[i]);
        self.push("pick", v, Op::Pick(a, i))
    }

    /// Row `i` of a matrix, as a vector.
    pub fn row(&mut self, a: NodeId, i: usize) -> Result<NodeId> {
        let av = self.value(a);
        if !av.is_matrix() || i >= av.rows() {
            return Err(Error::InvalidInput(format!(
                "row index {i} out of range for shape {:?}",
                av.shape()
            )));
        }
        let v = Array::vector(av.row(i).to_vec());
        self.push("row", v, Op::Row(a, i))
    }

    // ---- reverse sweep ----------------------------------------------------

    /// Accumulate d(root)/d(node) into every node that requires a gradient.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        let rv = self.value(root);
        if !rv.is_scalar() {
            return Err(Error::NotScalar(rv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Array>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Array::filled(rv.shape(), 1.0));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                grads[idx] = Some(g);
                continue;
            }
            for (parent, contrib) in self.local_grads(idx, &g) {
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                match &mut grads[parent.0] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
            grads[idx] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    /// Contributions of node `idx`'s output gradient `g` to its parents.
    fn local_grads(&self, idx: usize, g: &Array) -> Vec<(NodeId, Array)> {
        let node = &self.nodes[idx];
        let out = &node.value;
        let gd = g.data();
        let val = |id: NodeId| &self.nodes[id.0].value;
        match &node.op {
            Op::Leaf => vec![],
            Op::MatVec(w, x) => {
                let (wv, xv) = (val(*w), val(*x));
                let (m, n) = (wv.rows(), wv.cols());
                let mut gw = vec![0.0; m * n];
                let mut gx = vec![0.0; n];
                for i in 0..m {
                    let gi = gd[i];
                    let wr = &wv.data()[i * n..(i + 1) * n];
                    for j in 0..n {
                        gw[i * n + j] = gi * xv.data()[j];
                        gx[j] += gi * wr[j];
                    }
                }
                vec![
                    (*w, Array::from_parts(wv.shape().to_vec(), gw)),
                    (*x, Array::from_parts(xv.shape().to_vec(), gx)),
                ]
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                // dA = G Bᵀ, dB = Aᵀ G
                let mut ga = vec![0.0; m * k];
                let mut gb = vec![0.0; k * n];
                for i in 0..m {
                    for p in 0..k {
                        let aip = av.data()[i * k + p];
                        let mut acc = 0.0;
                        for j in 0..n {
                            let gij = gd[i * n + j];
                            acc += gij * bv.data()[p * n + j];
                            gb[p * n + j] += aip * gij;
                        }
                        ga[i * k + p] = acc;
                    }
                }
                vec![
                    (*a, Array::from_parts(av.shape().to_vec(), ga)),
                    (*b, Array::from_parts(bv.shape().to_vec(), gb)),
                ]
            }
            Op::MatMulNt(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.rows());
                // C = A Bᵀ: dA = G B, dB = Gᵀ A
                let mut ga = vec![0.0; m * k];
                let mut gb = vec![0.0; n * k];
                for i in 0..m {
                    for j in 0..n {
                        let gij = gd[i * n + j];
                        if gij == 0.0 {
                            continue;
                        }
                        for p in 0..k {
                            ga[i * k + p] += gij * bv.data()[j * k + p];
                            gb[j * k + p] += gij * av.data()[i * k + p];
                        }
                    }
                }
                vec![
                    (*a, Array::from_parts(av.shape().to_vec(), ga)),
                    (*b, Array::from_parts(bv.shape().to_vec(), gb)),
                ]
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|x| -x))],
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                vec![(*a, zip(g, bv, |g, y| g * y)), (*b, zip(g, av, |g, x| g * x))]
            }
            Op::Div(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let ga = zip(g, bv, |g, y| g / y);
                let gb_data = gd
                    .iter()
                    .zip(av.data())
                    .zip(bv.data())
                    .map(|((g, x), y)| -g * x / (y * y))
                    .collect();
                vec![(*a, ga), (*b, Array::from_parts(bv.shape().to_vec(), gb_data))]
            }
            Op::Scale(a, c) => vec![(*a, g.map(|x| x * c))],
            Op::AddConst(a) => vec![(*a, g.clone())],
            Op::ScaleBy(a, s) => {
                let (av, sv) = (val(*a), val(*s));
                let c = sv.item();
                let gs: f64 = gd.iter().zip(av.data()).map(|(g, x)| g * x).sum();
                vec![(*a, g.map(|x| x * c)), (*s, Array::from_parts(sv.shape().to_vec(), vec![gs]))]
            }
            Op::Relu(a) => {
                let av = val(*a);
                vec![(*a, zip(g, av, |g, x| if x > 0.0 { g } else { 0.0 }))]
            }
            Op::Sigmoid(a) => vec![(*a, zip(g, out, |g, y| g * y * (1.0 - y)))],
            Op::Exp(a) => vec![(*a, zip(g, out, |g, y| g * y))],
            Op::Log(a) => vec![(*a, zip(g, val(*a), |g, x| g / x))],
            Op::Softmax(a) => {
                let gy: f64 = gd.iter().zip(out.data()).map(|(g, y)| g * y).sum();
                vec![(*a, zip(g, out, |g, y| y * (g - gy)))]
            }
            Op::Norm(a) => {
                let n = out.item();
                let gn = gd[0];
                let ga = if n > 0.0 {
                    val(*a).map(|x| gn * x / n)
                } else {
                    Array::zeros(val(*a).shape())
                };
                vec![(*a, ga)]
            }
            Op::Normalize(a) => {
                let n = val(*a).norm();
                let yg: f64 = gd.iter().zip(out.data()).map(|(g, y)| g * y).sum();
                vec![(*a, zip(g, out, |g, y| (g - y * yg) / n))]
            }
            Op::NormalizeRows(a) => {
                let av = val(*a);
                let mut ga = Array::zeros(av.shape());
                for r in 0..av.rows() {
                    let n = av.row(r).iter().map(|x| x * x).sum::<f64>().sqrt();
                    let yr = out.row(r);
                    let gr = g.row(r);
                    let yg: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                    for ((dst, &gv), &yv) in ga.row_mut(r).iter_mut().zip(gr).zip(yr) {
                        *dst = (gv - yv * yg) / n;
                    }
                }
                vec![(*a, ga)]
            }
            Op::Dot(a, b) => {
                let gs = gd[0];
                let (av, bv) = (val(*a), val(*b));
                vec![(*a, bv.map(|y| gs * y)), (*b, av.map(|x| gs * x))]
            }
            Op::Acos(a) => {
                let lim = 1.0 - ACOS_EPS;
                let ga = zip(g, val(*a), |g, x| {
                    if x > -lim && x < lim {
                        -g / (1.0 - x * x).sqrt()
                    } else {
                        0.0
                    }
                });
                vec![(*a, ga)]
            }
            Op::Cos(a) => vec![(*a, zip(g, val(*a), |g, x| -g * x.sin()))],
            Op::Square(a) => vec![(*a, zip(g, val(*a), |g, x| 2.0 * g * x))],
            Op::Sqrt(a) => vec![(*a, zip(g, out, |g, y| if y > 0.0 { g / (2.0 * y) } else { 0.0 }))],
            Op::Recip(a) => vec![(*a, zip(g, out, |g, y| -g * y * y))],
            Op::ClampMin(a, floor) => {
                let f = *floor;
                vec![(*a, zip(g, val(*a), |g, x| if x > f { g } else { 0.0 }))]
            }
            Op::Sum(a) => vec![(*a, Array::filled(val(*a).shape(), gd[0]))],
            Op::Mean(a) => {
                let av = val(*a);
                vec![(*a, Array::filled(av.shape(), gd[0] / av.len() as f64))]
            }
            Op::Concat(xs) => {
                let mut offset = 0;
                xs.iter()
                    .map(|&x| {
                        let xv = val(x);
                        let n = xv.len();
                        let part = gd[offset..offset + n].to_vec();
                        offset += n;
                        (x, Array::from_parts(xv.shape().to_vec(), part))
                    })
                    .collect()
            }
            Op::Pick(a, i) => {
                let mut ga = Array::zeros(val(*a).shape());
                ga.data_mut()[*i] = gd[0];
                vec![(*a, ga)]
            }
            Op::Row(a, i) => {
                let mut ga = Array::zeros(val(*a).shape());
                ga.row_mut(*i).copy_from_slice(gd);
                vec![(*a, ga)]
            }
        }
    }
}

fn zip(g: &Array, other: &Array, f: impl Fn(f64, f64) -> f64) -> Array {
    let data = g.data().iter().zip(other.data()).map(|(&a, &b)| f(a, b)).collect();
    Array::from_parts(other.shape().to_vec(), data)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|&x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub(crate) fn clamp_acos(x: f64) -> f64 {
    x.clamp(-1.0 + ACOS_EPS, 1.0 - ACOS_EPS)
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}
