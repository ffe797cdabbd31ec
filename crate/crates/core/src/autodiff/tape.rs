//! Reverse-mode differentiation on a Wengert tape.
//!
//! Operations execute eagerly. When an operand is tracked, the operation is
//! also recorded: the tape snapshots every node's forward value, so
//! `backward` can replay the list in reverse and accumulate gradients
//! without touching the caller's tensors. Replaying the same tape twice
//! yields bit-identical gradients.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::scalar::{s, Scalar};

use super::tensor::{NodeRef, Tensor};

static TAPE_IDS: AtomicU64 = AtomicU64::new(1);

// ── kernels ─────────────────────────────────────────────────────────────

fn matmul_raw<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut out = vec![S::zero(); m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &aip) in arow.iter().enumerate() {
            if aip == S::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bpj) in orow.iter_mut().zip(brow) {
                *o += aip * bpj;
            }
        }
    }
    out
}

fn transpose_raw<S: Scalar>(a: &[S], r: usize, c: usize) -> Vec<S> {
    let mut out = vec![S::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

fn swap01_raw<S: Scalar>(a: &[S], d0: usize, d1: usize, inner: usize) -> Vec<S> {
    let mut out = vec![S::zero(); a.len()];
    for i in 0..d0 {
        for j in 0..d1 {
            let src = (i * d1 + j) * inner;
            let dst = (j * d0 + i) * inner;
            out[dst..dst + inner].copy_from_slice(&a[src..src + inner]);
        }
    }
    out
}

fn row_sum_raw<S: Scalar>(a: &[S], r: usize, c: usize) -> Vec<S> {
    (0..r)
        .map(|i| {
            a[i * c..(i + 1) * c]
                .iter()
                .fold(S::zero(), |acc, &v| acc + v)
        })
        .collect()
}

/// Subgradient of |x|; zero at the kink.
fn l1_sign<S: Scalar>(x: S) -> S {
    if x > S::zero() {
        S::one()
    } else if x < S::zero() {
        -S::one()
    } else {
        S::zero()
    }
}

// ── recorded operations ─────────────────────────────────────────────────

#[derive(Debug, Clone)]
enum Op<S: Scalar> {
    /// `[m,k] x [k,n] -> [m,n]`.
    MatMul,
    /// Rank-2 transpose.
    Transpose,
    /// Swap the first two axes of a rank>=2 tensor.
    SwapAxes01,
    Add,
    Sub,
    Hadamard,
    Tanh,
    /// `c * x`.
    Scale(S),
    /// `a * x + b`.
    Affine(S, S),
    /// `x^p` elementwise; domain is the caller's responsibility.
    Powf(S),
    Sum,
    Mean,
    /// Sum of absolute values.
    L1,
    /// `[r,c] -> [r,1]`.
    RowSum,
    Reshape,
}

#[derive(Debug)]
struct Node<S: Scalar> {
    shape: Vec<usize>,
    values: Vec<S>,
    var: bool,
}

#[derive(Debug)]
struct Record<S: Scalar> {
    op: Op<S>,
    inputs: [usize; 2],
    output: usize,
}

/// Elementwise operation selector for callers that dispatch dynamically.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ElementwiseKind<S: Scalar> {
    Add,
    Sub,
    Hadamard,
    Tanh,
    Scale(S),
    Affine(S, S),
}

/// Reduction selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    L1,
}

// ── tape ────────────────────────────────────────────────────────────────

/// Records a computation for reverse-mode differentiation.
///
/// Tensors returned by tape methods carry a node handle tied to this tape;
/// feeding them to a different tape is an error. Untracked operands are
/// registered as constants on first use.
#[derive(Debug)]
pub struct Tape<S: Scalar> {
    id: u64,
    nodes: Vec<Node<S>>,
    records: Vec<Record<S>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            id: TAPE_IDS.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            records: Vec::new(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_records(&self) -> usize {
        self.records.len()
    }

    /// Registers a tracked leaf. Gradients can be queried for the returned
    /// tensor after `backward`.
    pub fn var(&mut self, t: &Tensor<S>) -> Tensor<S> {
        let id = self.push_node(t.shape().to_vec(), t.values().to_vec(), true);
        Tensor::with_node(
            t.shape().to_vec(),
            t.values().to_vec(),
            NodeRef { tape: self.id, id },
        )
    }

    fn push_node(&mut self, shape: Vec<usize>, values: Vec<S>, var: bool) -> usize {
        self.nodes.push(Node { shape, values, var });
        self.nodes.len() - 1
    }

    fn node_of(&mut self, t: &Tensor<S>, op: &'static str) -> Result<usize> {
        match t.node {
            Some(nref) if nref.tape == self.id => Ok(nref.id),
            Some(_) => Err(Error::TapeMismatch { op }),
            None => Ok(self.push_node(t.shape().to_vec(), t.values().to_vec(), false)),
        }
    }

    fn emit1(
        &mut self,
        op: Op<S>,
        opname: &'static str,
        x: &Tensor<S>,
        shape: Vec<usize>,
        values: Vec<S>,
    ) -> Result<Tensor<S>> {
        if !x.is_tracked() {
            return Tensor::new(shape, values);
        }
        let xi = self.node_of(x, opname)?;
        let out = self.push_node(shape.clone(), values.clone(), false);
        self.records.push(Record {
            op,
            inputs: [xi, usize::MAX],
            output: out,
        });
        Ok(Tensor::with_node(
            shape,
            values,
            NodeRef {
                tape: self.id,
                id: out,
            },
        ))
    }

    fn emit2(
        &mut self,
        op: Op<S>,
        opname: &'static str,
        x: &Tensor<S>,
        y: &Tensor<S>,
        shape: Vec<usize>,
        values: Vec<S>,
    ) -> Result<Tensor<S>> {
        if !x.is_tracked() && !y.is_tracked() {
            return Tensor::new(shape, values);
        }
        let xi = self.node_of(x, opname)?;
        let yi = self.node_of(y, opname)?;
        let out = self.push_node(shape.clone(), values.clone(), false);
        self.records.push(Record {
            op,
            inputs: [xi, yi],
            output: out,
        });
        Ok(Tensor::with_node(
            shape,
            values,
            NodeRef {
                tape: self.id,
                id: out,
            },
        ))
    }

    // ── linear algebra ──────────────────────────────────────────────

    pub fn matmul(&mut self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape(
                "matmul",
                format!("cannot multiply {sa:?} by {sb:?}"),
            ));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let values = matmul_raw(a.values(), b.values(), m, k, n);
        self.emit2(Op::MatMul, "matmul", a, b, vec![m, n], values)
    }

    pub fn transpose(&mut self, a: &Tensor<S>) -> Result<Tensor<S>> {
        let sa = a.shape();
        if sa.len() != 2 {
            return Err(Error::shape(
                "transpose",
                format!("expected rank 2, got {sa:?}"),
            ));
        }
        let values = transpose_raw(a.values(), sa[0], sa[1]);
        self.emit1(Op::Transpose, "transpose", a, vec![sa[1], sa[0]], values)
    }

    /// Swaps the first two axes, keeping trailing axes contiguous.
    pub fn swap_axes01(&mut self, a: &Tensor<S>) -> Result<Tensor<S>> {
        let sa = a.shape();
        if sa.len() < 2 {
            return Err(Error::shape(
                "swap_axes01",
                format!("expected rank >= 2, got {sa:?}"),
            ));
        }
        let inner: usize = sa[2..].iter().product();
        let values = swap01_raw(a.values(), sa[0], sa[1], inner);
        let mut shape = sa.to_vec();
        shape.swap(0, 1);
        self.emit1(Op::SwapAxes01, "swap_axes01", a, shape, values)
    }

    pub fn reshape(&mut self, a: &Tensor<S>, shape: impl Into<Vec<usize>>) -> Result<Tensor<S>> {
        let shape = shape.into();
        let want: usize = shape.iter().product();
        if want != a.len() || shape.contains(&0) {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {shape:?} changes element count", a.shape()),
            ));
        }
        self.emit1(Op::Reshape, "reshape", a, shape, a.values().to_vec())
    }

    pub fn row_sum(&mut self, a: &Tensor<S>) -> Result<Tensor<S>> {
        let sa = a.shape();
        if sa.len() != 2 {
            return Err(Error::shape(
                "row_sum",
                format!("expected rank 2, got {sa:?}"),
            ));
        }
        let values = row_sum_raw(a.values(), sa[0], sa[1]);
        self.emit1(Op::RowSum, "row_sum", a, vec![sa[0], 1], values)
    }

    // ── elementwise ─────────────────────────────────────────────────

    fn zip_shapes(a: &Tensor<S>, b: &Tensor<S>, op: &'static str) -> Result<()> {
        if a.shape() != b.shape() {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", a.shape(), b.shape()),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        Self::zip_shapes(a, b, "add")?;
        let values = a
            .values()
            .iter()
            .zip(b.values())
            .map(|(&x, &y)| x + y)
            .collect();
        self.emit2(Op::Add, "add", a, b, a.shape().to_vec(), values)
    }

    pub fn sub(&mut self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        Self::zip_shapes(a, b, "sub")?;
        let values = a
            .values()
            .iter()
            .zip(b.values())
            .map(|(&x, &y)| x - y)
            .collect();
        self.emit2(Op::Sub, "sub", a, b, a.shape().to_vec(), values)
    }

    pub fn hadamard(&mut self, a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
        Self::zip_shapes(a, b, "hadamard")?;
        let values = a
            .values()
            .iter()
            .zip(b.values())
            .map(|(&x, &y)| x * y)
            .collect();
        self.emit2(Op::Hadamard, "hadamard", a, b, a.shape().to_vec(), values)
    }

    pub fn tanh(&mut self, a: &Tensor<S>) -> Result<Tensor<S>> {
        let values = a.values().iter().map(|v| v.tanh()).collect();
        self.emit1(Op::Tanh, "tanh", a, a.shape().to_vec(), values)
    }

    pub fn scale(&mut self, c: S, a: &Tensor<S>) -> Result<Tensor<S>> {
        let values = a.values().iter().map(|&v| c * v).collect();
        self.emit1(Op::Scale(c), "scale", a, a.shape().to_vec(), values)
    }

    /// `coeff * x + offset` elementwise.
    pub fn affine(&mut self, coeff: S, offset: S, a: &Tensor<S>) -> Result<Tensor<S>> {
        let values = a.values().iter().map(|&v| coeff * v + offset).collect();
        self.emit1(
            Op::Affine(coeff, offset),
            "affine",
            a,
            a.shape().to_vec(),
            values,
        )
    }

    /// Elementwise power. Gradient uses `p * x^(p-1)`, so keep inputs
    /// inside the differentiable domain (positive for fractional `p`).
    pub fn powf(&mut self, p: S, a: &Tensor<S>) -> Result<Tensor<S>> {
        let values = a.values().iter().map(|v| v.powf(p)).collect();
        self.emit1(Op::Powf(p), "powf", a, a.shape().to_vec(), values)
    }

    pub fn elementwise(
        &mut self,
        kind: ElementwiseKind<S>,
        x: &Tensor<S>,
        y: Option<&Tensor<S>>,
    ) -> Result<Tensor<S>> {
        let need_two = matches!(
            kind,
            ElementwiseKind::Add | ElementwiseKind::Sub | ElementwiseKind::Hadamard
        );
        match (need_two, y) {
            (true, None) => Err(Error::domain(
                "elementwise",
                format!("{kind:?} needs a second operand"),
            )),
            (false, Some(_)) => Err(Error::domain(
                "elementwise",
                format!("{kind:?} takes one operand"),
            )),
            _ => match kind {
                ElementwiseKind::Add => self.add(x, y.unwrap()),
                ElementwiseKind::Sub => self.sub(x, y.unwrap()),
                ElementwiseKind::Hadamard => self.hadamard(x, y.unwrap()),
                ElementwiseKind::Tanh => self.tanh(x),
                ElementwiseKind::Scale(c) => self.scale(c, x),
                ElementwiseKind::Affine(a, b) => self.affine(a, b, x),
            },
        }
    }

    // ── reductions (any rank -> scalar) ─────────────────────────────

    pub fn sum(&mut self, a: &Tensor<S>) -> Result<Tensor<S>> {
        let total = a.values().iter().fold(S::zero(), |acc, &v| acc + v);
        self.emit1(Op::Sum, "sum", a, vec![], vec![total])
    }

    pub fn mean(&mut self, a: &Tensor<S>) -> Result<Tensor<S>> {
        let total = a.values().iter().fold(S::zero(), |acc, &v| acc + v);
        let v = total / s::<S>(a.len() as f64);
        self.emit1(Op::Mean, "mean", a, vec![], vec![v])
    }

    /// Sum of absolute values; the subgradient at zero is zero.
    pub fn l1(&mut self, a: &Tensor<S>) -> Result<Tensor<S>> {
        let total = a.values().iter().fold(S::zero(), |acc, &v| acc + v.abs());
        self.emit1(Op::L1, "l1", a, vec![], vec![total])
    }

    pub fn reduce(&mut self, kind: ReduceKind, x: &Tensor<S>) -> Result<Tensor<S>> {
        match kind {
            ReduceKind::Sum => self.sum(x),
            ReduceKind::Mean => self.mean(x),
            ReduceKind::L1 => self.l1(x),
        }
    }

    // ── backward ────────────────────────────────────────────────────

    /// Accumulates `d loss / d node` for every node by replaying the tape
    /// in reverse. `loss` must be a tracked scalar from this tape.
    pub fn backward(&self, loss: &Tensor<S>) -> Result<Gradients<S>> {
        let nref = match loss.node {
            Some(r) if r.tape == self.id => r,
            Some(_) => return Err(Error::TapeMismatch { op: "backward" }),
            None => {
                return Err(Error::domain("backward", "loss is not on the tape"));
            }
        };
        if !loss.is_scalar() {
            return Err(Error::shape(
                "backward",
                format!("loss has shape {:?}, expected scalar", loss.shape()),
            ));
        }

        let mut grads: Vec<Option<Vec<S>>> = vec![None; self.nodes.len()];
        grads[nref.id] = Some(vec![S::one()]);

        for rec in self.records.iter().rev() {
            let Some(gout) = grads[rec.output].clone() else {
                continue;
            };
            self.step_back(rec, &gout, &mut grads);
        }

        Ok(Gradients {
            tape: self.id,
            shapes: self.nodes.iter().map(|n| n.shape.clone()).collect(),
            vars: self.nodes.iter().map(|n| n.var).collect(),
            grads,
        })
    }

    fn step_back(&self, rec: &Record<S>, gout: &[S], grads: &mut [Option<Vec<S>>]) {
        let xi = rec.inputs[0];
        let xnode = &self.nodes[xi];
        match rec.op {
            Op::MatMul => {
                let yi = rec.inputs[1];
                let ynode = &self.nodes[yi];
                let (m, k) = (xnode.shape[0], xnode.shape[1]);
                let n = ynode.shape[1];
                let bt = transpose_raw(&ynode.values, k, n);
                let ga = matmul_raw(gout, &bt, m, n, k);
                acc(grads, xi, &ga);
                let at = transpose_raw(&xnode.values, m, k);
                let gb = matmul_raw(&at, gout, k, m, n);
                acc(grads, yi, &gb);
            }
            Op::Transpose => {
                let (r, c) = (xnode.shape[0], xnode.shape[1]);
                let ga = transpose_raw(gout, c, r);
                acc(grads, xi, &ga);
            }
            Op::SwapAxes01 => {
                let inner: usize = xnode.shape[2..].iter().product();
                let ga = swap01_raw(gout, xnode.shape[1], xnode.shape[0], inner);
                acc(grads, xi, &ga);
            }
            Op::Add => {
                acc(grads, xi, gout);
                acc(grads, rec.inputs[1], gout);
            }
            Op::Sub => {
                acc(grads, xi, gout);
                let neg: Vec<S> = gout.iter().map(|&g| -g).collect();
                acc(grads, rec.inputs[1], &neg);
            }
            Op::Hadamard => {
                let yi = rec.inputs[1];
                let ga: Vec<S> = gout
                    .iter()
                    .zip(&self.nodes[yi].values)
                    .map(|(&g, &y)| g * y)
                    .collect();
                acc(grads, xi, &ga);
                let gb: Vec<S> = gout
                    .iter()
                    .zip(&xnode.values)
                    .map(|(&g, &x)| g * x)
                    .collect();
                acc(grads, yi, &gb);
            }
            Op::Tanh => {
                let out = &self.nodes[rec.output].values;
                let ga: Vec<S> = gout
                    .iter()
                    .zip(out)
                    .map(|(&g, &y)| g * (S::one() - y * y))
                    .collect();
                acc(grads, xi, &ga);
            }
            Op::Scale(c) => {
                let ga: Vec<S> = gout.iter().map(|&g| c * g).collect();
                acc(grads, xi, &ga);
            }
            Op::Affine(a, _) => {
                let ga: Vec<S> = gout.iter().map(|&g| a * g).collect();
                acc(grads, xi, &ga);
            }
            Op::Powf(p) => {
                let ga: Vec<S> = gout
                    .iter()
                    .zip(&xnode.values)
                    .map(|(&g, &x)| g * p * x.powf(p - S::one()))
                    .collect();
                acc(grads, xi, &ga);
            }
            Op::Sum => {
                let g = gout[0];
                let ga = vec![g; xnode.values.len()];
                acc(grads, xi, &ga);
            }
            Op::Mean => {
                let g = gout[0] / s::<S>(xnode.values.len() as f64);
                let ga = vec![g; xnode.values.len()];
                acc(grads, xi, &ga);
            }
            Op::L1 => {
                let g = gout[0];
                let ga: Vec<S> = xnode.values.iter().map(|&x| g * l1_sign(x)).collect();
                acc(grads, xi, &ga);
            }
            Op::RowSum => {
                let (r, c) = (xnode.shape[0], xnode.shape[1]);
                let mut ga = vec![S::zero(); r * c];
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] = gout[i];
                    }
                }
                acc(grads, xi, &ga);
            }
            Op::Reshape => {
                acc(grads, xi, gout);
            }
        }
    }
}

fn acc<S: Scalar>(grads: &mut [Option<Vec<S>>], node: usize, contrib: &[S]) {
    match &mut grads[node] {
        Some(g) => {
            for (gi, &ci) in g.iter_mut().zip(contrib) {
                *gi += ci;
            }
        }
        slot @ None => *slot = Some(contrib.to_vec()),
    }
}

/// Result of [`Tape::backward`]: gradients keyed by tape node.
#[derive(Debug)]
pub struct Gradients<S: Scalar> {
    tape: u64,
    shapes: Vec<Vec<usize>>,
    vars: Vec<bool>,
    grads: Vec<Option<Vec<S>>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient with respect to a tensor returned by [`Tape::var`].
    /// Leaves the loss never touched get a zero tensor.
    pub fn wrt(&self, t: &Tensor<S>) -> Result<Tensor<S>> {
        let nref = t.node.ok_or(Error::Domain {
            op: "gradients",
            detail: "tensor is not tracked".into(),
        })?;
        if nref.tape != self.tape {
            return Err(Error::TapeMismatch { op: "gradients" });
        }
        let shape = self.shapes[nref.id].clone();
        match &self.grads[nref.id] {
            Some(g) => Tensor::new(shape, g.clone()),
            None => Ok(Tensor::zeros(shape)),
        }
    }

    /// Gradients of every tracked leaf, keyed by node id.
    pub fn leaf_map(&self) -> BTreeMap<usize, Tensor<S>> {
        let mut out = BTreeMap::new();
        for (id, &isvar) in self.vars.iter().enumerate() {
            if !isvar {
                continue;
            }
            let shape = self.shapes[id].clone();
            let t = match &self.grads[id] {
                Some(g) => Tensor::new(shape, g.clone()).expect("stored shape is valid"),
                None => Tensor::zeros(shape),
            };
            out.insert(id, t);
        }
        out
    }
}
