//! Expression graphs of piecewise-smooth primitives and a reverse-mode oracle
//! that multiplies per-primitive Clarke Jacobian selections.
//!
//! Every node produces a vector (scalars are vectors of length one). The set
//! of primitives is fixed: each one ships with an explicit rule for the
//! element of its Clarke Jacobian returned at nondifferentiable points, see
//! [`SelectionPolicy`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{check_finite, ParamVector};

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Primitive {
    /// `w[offset .. offset + len]`
    InputW {
        offset: usize,
        len: usize,
    },
    /// `s[offset .. offset + len]`
    InputS {
        offset: usize,
        len: usize,
    },
    Const {
        value: Vec<f64>,
    },
    /// Elementwise; a length-one operand broadcasts.
    Add {
        a: NodeId,
        b: NodeId,
    },
    Sub {
        a: NodeId,
        b: NodeId,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    /// Row-major `rows x len(x)` matrix times `x`.
    MatVec {
        matrix: NodeId,
        x: NodeId,
        rows: usize,
    },
    Dot {
        a: NodeId,
        b: NodeId,
    },
    Abs {
        x: NodeId,
    },
    Relu {
        x: NodeId,
    },
    /// Elementwise `max(a, b)`.
    Max2 {
        a: NodeId,
        b: NodeId,
    },
    /// `0.5 * ||pred - target||^2`
    SquaredLoss {
        pred: NodeId,
        target: NodeId,
    },
    /// `sum_i |x_i|`
    Norm1 {
        x: NodeId,
    },
    /// `W x + b` with `params = [W row-major (rows x len(x)), b (rows)]`.
    AffineLayer {
        params: NodeId,
        x: NodeId,
        rows: usize,
    },
}

impl Primitive {
    /// Operand nodes.
    pub fn inputs(&self) -> Vec<NodeId> {
        use Primitive::*;
        match self {
            InputW { .. } | InputS { .. } | Const { .. } => vec![],
            Add { a, b } | Sub { a, b } | Mul { a, b } | Dot { a, b } | Max2 { a, b } => vec![*a, *b],
            MatVec { matrix, x, .. } => vec![*matrix, *x],
            AffineLayer { params, x, .. } => vec![*params, *x],
            Abs { x } | Relu { x } | Norm1 { x } => vec![*x],
            SquaredLoss { pred, target } => vec![*pred, *target],
        }
    }

    fn name(&self) -> &'static str {
        use Primitive::*;
        match self {
            InputW { .. } => "input_w",
            InputS { .. } => "input_s",
            Const { .. } => "const",
            Add { .. } => "add",
            Sub { .. } => "sub",
            Mul { .. } => "mul",
            MatVec { .. } => "mat_vec",
            Dot { .. } => "dot",
            Abs { .. } => "abs",
            Relu { .. } => "relu",
            Max2 { .. } => "max2",
            SquaredLoss { .. } => "squared_loss",
            Norm1 { .. } => "norm1",
            AffineLayer { .. } => "affine_layer",
        }
    }
}

/// Which element of the Clarke subdifferential each kinked primitive returns
/// at its nondifferentiable points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionPolicy {
    /// Derivative of `|x|` at 0, in `[-1, 1]`. Also used by `norm1`.
    pub abs_at_zero: f64,
    /// Derivative of `relu` at 0, in `[0, 1]`.
    pub relu_at_zero: f64,
    /// Weight given to the first argument of `max2` on ties, in `[0, 1]`.
    pub max2_tie: f64,
}

impl Default for SelectionPolicy {
    fn default() -> Self {
        SelectionPolicy { abs_at_zero: 0.0, relu_at_zero: 0.0, max2_tie: 1.0 }
    }
}

impl SelectionPolicy {
    pub fn new(abs_at_zero: f64, relu_at_zero: f64, max2_tie: f64) -> Result<Self> {
        let p = SelectionPolicy { abs_at_zero, relu_at_zero, max2_tie };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let inside = |x: f64, lo: f64, hi: f64| x.is_finite() && (lo..=hi).contains(&x);
        if !inside(self.abs_at_zero, -1.0, 1.0) {
            return Err(Error::InvalidSpec(format!("abs_at_zero = {} not in [-1, 1]", self.abs_at_zero)));
        }
        if !inside(self.relu_at_zero, 0.0, 1.0) {
            return Err(Error::InvalidSpec(format!("relu_at_zero = {} not in [0, 1]", self.relu_at_zero)));
        }
        if !inside(self.max2_tie, 0.0, 1.0) {
            return Err(Error::InvalidSpec(format!("max2_tie = {} not in [0, 1]", self.max2_tie)));
        }
        Ok(())
    }

    pub fn with_abs(mut self, g: f64) -> Result<Self> {
        self.abs_at_zero = g;
        self.validate().map(|_| self)
    }

    pub fn with_relu(mut self, g: f64) -> Result<Self> {
        self.relu_at_zero = g;
        self.validate().map(|_| self)
    }

    /// The vertices of the selection box: every combination of extreme kink choices.
    pub fn extremes() -> Vec<SelectionPolicy> {
        let mut out = Vec::with_capacity(8);
        for abs in [-1.0, 1.0] {
            for relu in [0.0, 1.0] {
                for tie in [0.0, 1.0] {
                    out.push(SelectionPolicy { abs_at_zero: abs, relu_at_zero: relu, max2_tie: tie });
                }
            }
        }
        out
    }

    fn abs_slope(&self, x: f64) -> f64 {
        if x > 0.0 {
            1.0
        } else if x < 0.0 {
            -1.0
        } else {
            self.abs_at_zero
        }
    }

    fn relu_slope(&self, x: f64) -> f64 {
        if x > 0.0 {
            1.0
        } else if x < 0.0 {
            0.0
        } else {
            self.relu_at_zero
        }
    }

    /// Weight routed to the first argument of `max(a, b)`.
    fn max_weight(&self, a: f64, b: f64) -> f64 {
        if a > b {
            1.0
        } else if a < b {
            0.0
        } else {
            self.max2_tie
        }
    }
}

/// Serialized description of a graph, validated into an [`ExprGraph`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub w_dim: usize,
    pub s_dim: usize,
    pub nodes: Vec<Primitive>,
    pub output: NodeId,
}

/// A validated, topologically ordered DAG of primitives with a scalar output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GraphSpec", into = "GraphSpec")]
pub struct ExprGraph {
    w_dim: usize,
    s_dim: usize,
    nodes: Vec<Primitive>,
    shapes: Vec<usize>,
    output: NodeId,
}

impl TryFrom<GraphSpec> for ExprGraph {
    type Error = Error;
    fn try_from(spec: GraphSpec) -> Result<Self> {
        let mut b = GraphBuilder::new(spec.w_dim, spec.s_dim);
        for node in spec.nodes {
            b.push(node)?;
        }
        b.finish(spec.output)
    }
}

impl From<ExprGraph> for GraphSpec {
    fn from(g: ExprGraph) -> Self {
        GraphSpec { w_dim: g.w_dim, s_dim: g.s_dim, nodes: g.nodes, output: g.output }
    }
}

/// Incremental, shape-checked graph construction.
#[derive(Debug, Clone)]
pub struct GraphBuilder {
    w_dim: usize,
    s_dim: usize,
    nodes: Vec<Primitive>,
    shapes: Vec<usize>,
}

fn invalid<T>(msg: String) -> Result<T> {
    Err(Error::InvalidSpec(msg))
}

impl GraphBuilder {
    pub fn new(w_dim: usize, s_dim: usize) -> Self {
        GraphBuilder { w_dim, s_dim, nodes: Vec::new(), shapes: Vec::new() }
    }

    fn shape(&self, id: NodeId) -> Result<usize> {
        self.shapes.get(id).copied().ok_or_else(|| {
            Error::InvalidSpec(format!("node {} refers to later or missing node {id}", self.nodes.len()))
        })
    }

    fn broadcast(&self, a: NodeId, b: NodeId) -> Result<usize> {
        let (sa, sb) = (self.shape(a)?, self.shape(b)?);
        if sa == sb || sb == 1 {
            Ok(sa)
        } else if sa == 1 {
            Ok(sb)
        } else {
            invalid(format!("incompatible operand lengths {sa} and {sb}"))
        }
    }

    /// Appends a node after checking that its inputs exist and shapes agree.
    pub fn push(&mut self, p: Primitive) -> Result<NodeId> {
        use Primitive::*;
        let shape = match &p {
            InputW { offset, len } => {
                if *len == 0 || offset + len > self.w_dim {
                    return invalid(format!("w slice {offset}..{} out of range 0..{}", offset + len, self.w_dim));
                }
                *len
            }
            InputS { offset, len } => {
                if *len == 0 || offset + len > self.s_dim {
                    return invalid(format!("s slice {offset}..{} out of range 0..{}", offset + len, self.s_dim));
                }
                *len
            }
            Const { value } => {
                if value.is_empty() {
                    return invalid("empty constant".into());
                }
                check_finite(value, "constant node")?;
                value.len()
            }
            Add { a, b } | Sub { a, b } | Mul { a, b } | Max2 { a, b } => self.broadcast(*a, *b)?,
            Dot { a, b } => {
                let (sa, sb) = (self.shape(*a)?, self.shape(*b)?);
                if sa != sb {
                    return invalid(format!("dot of lengths {sa} and {sb}"));
                }
                1
            }
            MatVec { matrix, x, rows } => {
                let cols = self.shape(*x)?;
                if *rows == 0 || self.shape(*matrix)? != rows * cols {
                    return invalid(format!("mat_vec matrix must have {rows} x {cols} entries"));
                }
                *rows
            }
            AffineLayer { params, x, rows } => {
                let cols = self.shape(*x)?;
                if *rows == 0 || self.shape(*params)? != rows * cols + rows {
                    return invalid(format!("affine_layer params must have {} entries", rows * cols + rows));
                }
                *rows
            }
            Abs { x } | Relu { x } => self.shape(*x)?,
            Norm1 { x } => {
                self.shape(*x)?;
                1
            }
            SquaredLoss { pred, target } => {
                let (sa, sb) = (self.shape(*pred)?, self.shape(*target)?);
                if sa != sb {
                    return invalid(format!("squared_loss of lengths {sa} and {sb}"));
                }
                1
            }
        };
        self.nodes.push(p);
        self.shapes.push(shape);
        Ok(self.nodes.len() - 1)
    }

    pub fn input_w(&mut self, offset: usize, len: usize) -> Result<NodeId> {
        self.push(Primitive::InputW { offset, len })
    }
    pub fn input_s(&mut self, offset: usize, len: usize) -> Result<NodeId> {
        self.push(Primitive::InputS { offset, len })
    }
    pub fn constant(&mut self, value: Vec<f64>) -> Result<NodeId> {
        self.push(Primitive::Const { value })
    }
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Primitive::Add { a, b })
    }
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Primitive::Sub { a, b })
    }
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Primitive::Mul { a, b })
    }
    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Primitive::Dot { a, b })
    }
    pub fn mat_vec(&mut self, matrix: NodeId, x: NodeId, rows: usize) -> Result<NodeId> {
        self.push(Primitive::MatVec { matrix, x, rows })
    }
    pub fn affine(&mut self, params: NodeId, x: NodeId, rows: usize) -> Result<NodeId> {
        self.push(Primitive::AffineLayer { params, x, rows })
    }
    pub fn abs(&mut self, x: NodeId) -> Result<NodeId> {
        self.push(Primitive::Abs { x })
    }
    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.push(Primitive::Relu { x })
    }
    pub fn max2(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Primitive::Max2 { a, b })
    }
    pub fn squared_loss(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        self.push(Primitive::SquaredLoss { pred, target })
    }
    pub fn norm1(&mut self, x: NodeId) -> Result<NodeId> {
        self.push(Primitive::Norm1 { x })
    }

    pub fn finish(self, output: NodeId) -> Result<ExprGraph> {
        match self.shapes.get(output) {
            Some(1) => {}
            Some(n) => return invalid(format!("output node {output} has length {n}, expected a scalar")),
            None => return invalid(format!("output node {output} does not exist")),
        }
        Ok(ExprGraph { w_dim: self.w_dim, s_dim: self.s_dim, nodes: self.nodes, shapes: self.shapes, output })
    }
}

fn bcast(v: &[f64], i: usize) -> f64 {
    if v.len() == 1 {
        v[0]
    } else {
        v[i]
    }
}

/// Adds `g` into `adj`, summing over broadcast positions when `adj` is a scalar.
fn accumulate(adj: &mut [f64], g: impl Iterator<Item = (usize, f64)>) {
    if adj.len() == 1 {
        for (_, x) in g {
            adj[0] += x;
        }
    } else {
        for (i, x) in g {
            adj[i] += x;
        }
    }
}

impl ExprGraph {
    pub fn w_dim(&self) -> usize {
        self.w_dim
    }

    pub fn s_dim(&self) -> usize {
        self.s_dim
    }

    pub fn nodes(&self) -> &[Primitive] {
        &self.nodes
    }

    pub fn output(&self) -> NodeId {
        self.output
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serialization cannot fail")
    }

    fn check_dims(&self, w: &[f64], s: &[f64]) -> Result<()> {
        if w.len() != self.w_dim {
            return Err(Error::DimensionMismatch { what: "w", expected: self.w_dim, got: w.len() });
        }
        if s.len() != self.s_dim {
            return Err(Error::DimensionMismatch { what: "s", expected: self.s_dim, got: s.len() });
        }
        Ok(())
    }

    /// Forward pass; returns the value of every node.
    fn forward(&self, w: &[f64], s: &[f64]) -> Result<Vec<Vec<f64>>> {
        use Primitive::*;
        self.check_dims(w, s)?;
        let mut vals: Vec<Vec<f64>> = Vec::with_capacity(self.nodes.len());
        for (id, node) in self.nodes.iter().enumerate() {
            let n = self.shapes[id];
            let v: Vec<f64> = match node {
                InputW { offset, len } => w[*offset..offset + len].to_vec(),
                InputS { offset, len } => s[*offset..offset + len].to_vec(),
                Const { value } => value.clone(),
                Add { a, b } => (0..n).map(|i| bcast(&vals[*a], i) + bcast(&vals[*b], i)).collect(),
                Sub { a, b } => (0..n).map(|i| bcast(&vals[*a], i) - bcast(&vals[*b], i)).collect(),
                Mul { a, b } => (0..n).map(|i| bcast(&vals[*a], i) * bcast(&vals[*b], i)).collect(),
                Max2 { a, b } => (0..n).map(|i| bcast(&vals[*a], i).max(bcast(&vals[*b], i))).collect(),
                Dot { a, b } => vec![vals[*a].iter().zip(&vals[*b]).map(|(x, y)| x * y).sum()],
                MatVec { matrix, x, rows } => mat_vec(&vals[*matrix], &vals[*x], *rows, None),
                AffineLayer { params, x, rows } => {
                    let cols = vals[*x].len();
                    let (m, bias) = vals[*params].split_at(rows * cols);
                    mat_vec(m, &vals[*x], *rows, Some(bias))
                }
                Abs { x } => vals[*x].iter().map(|v| v.abs()).collect(),
                Relu { x } => vals[*x].iter().map(|v| v.max(0.0)).collect(),
                Norm1 { x } => vec![vals[*x].iter().map(|v| v.abs()).sum()],
                SquaredLoss { pred, target } => {
                    let r: f64 = vals[*pred].iter().zip(&vals[*target]).map(|(p, t)| (p - t) * (p - t)).sum();
                    vec![0.5 * r]
                }
            };
            if !v.iter().all(|x| x.is_finite()) {
                return Err(Error::NonFiniteValue(format!("node {id} ({})", node.name())));
            }
            vals.push(v);
        }
        Ok(vals)
    }

    /// `f(w, s)`.
    pub fn evaluate(&self, w: &[f64], s: &[f64]) -> Result<f64> {
        Ok(self.forward(w, s)?[self.output][0])
    }

    /// Reverse-mode product of per-primitive Jacobian selections. Returns
    /// `(f(w, s), v)` where `v` is the backprop output with respect to `w`.
    pub fn value_and_backprop(&self, w: &[f64], s: &[f64], policy: &SelectionPolicy) -> Result<(f64, Vec<f64>)> {
        use Primitive::*;
        let vals = self.forward(w, s)?;
        let mut adj: Vec<Vec<f64>> = self.shapes.iter().map(|&n| vec![0.0; n]).collect();
        adj[self.output][0] = 1.0;
        let mut grad = vec![0.0; self.w_dim];
        for id in (0..=self.output).rev() {
            if adj[id].iter().all(|g| *g == 0.0) {
                continue;
            }
            let g = std::mem::take(&mut adj[id]);
            match &self.nodes[id] {
                InputW { offset, .. } => {
                    for (i, gi) in g.iter().enumerate() {
                        grad[offset + i] += gi;
                    }
                }
                InputS { .. } | Const { .. } => {}
                Add { a, b } => {
                    accumulate(&mut adj[*a], g.iter().copied().enumerate());
                    accumulate(&mut adj[*b], g.iter().copied().enumerate());
                }
                Sub { a, b } => {
                    accumulate(&mut adj[*a], g.iter().copied().enumerate());
                    accumulate(&mut adj[*b], g.iter().map(|x| -x).enumerate());
                }
                Mul { a, b } => {
                    let (va, vb) = (&vals[*a], &vals[*b]);
                    accumulate(&mut adj[*a], g.iter().enumerate().map(|(i, x)| (i, x * bcast(vb, i))));
                    accumulate(&mut adj[*b], g.iter().enumerate().map(|(i, x)| (i, x * bcast(va, i))));
                }
                Max2 { a, b } => {
                    let (va, vb) = (&vals[*a], &vals[*b]);
                    let lam: Vec<f64> = (0..g.len()).map(|i| policy.max_weight(bcast(va, i), bcast(vb, i))).collect();
                    accumulate(&mut adj[*a], g.iter().enumerate().map(|(i, x)| (i, x * lam[i])));
                    accumulate(&mut adj[*b], g.iter().enumerate().map(|(i, x)| (i, x * (1.0 - lam[i]))));
                }
                Dot { a, b } => {
                    let g0 = g[0];
                    let (va, vb) = (vals[*a].clone(), vals[*b].clone());
                    accumulate(&mut adj[*a], vb.iter().enumerate().map(|(i, y)| (i, g0 * y)));
                    accumulate(&mut adj[*b], va.iter().enumerate().map(|(i, x)| (i, g0 * x)));
                }
                MatVec { matrix, x, rows } => {
                    mat_vec_adjoint(&g, &vals[*matrix], &vals[*x], *rows, &mut adj, *matrix, *x, None);
                }
                AffineLayer { params, x, rows } => {
                    mat_vec_adjoint(&g, &vals[*params], &vals[*x], *rows, &mut adj, *params, *x, Some(()));
                }
                Abs { x } => {
                    let vx = &vals[*x];
                    accumulate(&mut adj[*x], g.iter().enumerate().map(|(i, gi)| (i, gi * policy.abs_slope(vx[i]))));
                }
                Relu { x } => {
                    let vx = &vals[*x];
                    accumulate(&mut adj[*x], g.iter().enumerate().map(|(i, gi)| (i, gi * policy.relu_slope(vx[i]))));
                }
                Norm1 { x } => {
                    let g0 = g[0];
                    let vx = &vals[*x];
                    accumulate(&mut adj[*x], vx.iter().enumerate().map(|(i, xi)| (i, g0 * policy.abs_slope(*xi))));
                }
                SquaredLoss { pred, target } => {
                    let g0 = g[0];
                    let r: Vec<f64> = vals[*pred].iter().zip(&vals[*target]).map(|(p, t)| g0 * (p - t)).collect();
                    accumulate(&mut adj[*pred], r.iter().copied().enumerate());
                    accumulate(&mut adj[*target], r.iter().map(|x| -x).enumerate());
                }
            }
        }
        check_finite(&grad, "backprop output")?;
        Ok((vals[self.output][0], grad))
    }

    pub fn backprop(&self, w: &[f64], s: &[f64], policy: &SelectionPolicy) -> Result<Vec<f64>> {
        Ok(self.value_and_backprop(w, s, policy)?.1)
    }

    /// Smallest distance of any kinked primitive's argument to its kink along
    /// the evaluation trace (`|x|` for abs/relu/norm1, `|a - b|` for max2).
    /// Infinite for graphs without kinked primitives.
    pub fn kink_margin(&self, w: &[f64], s: &[f64]) -> Result<f64> {
        use Primitive::*;
        let vals = self.forward(w, s)?;
        let mut margin = f64::INFINITY;
        for (id, node) in self.nodes.iter().enumerate() {
            match node {
                Abs { x } | Relu { x } | Norm1 { x } => {
                    for v in &vals[*x] {
                        margin = margin.min(v.abs());
                    }
                }
                Max2 { a, b } => {
                    for i in 0..self.shapes[id] {
                        margin = margin.min((bcast(&vals[*a], i) - bcast(&vals[*b], i)).abs());
                    }
                }
                _ => {}
            }
        }
        Ok(margin)
    }
}

fn mat_vec(m: &[f64], x: &[f64], rows: usize, bias: Option<&[f64]>) -> Vec<f64> {
    let cols = x.len();
    (0..rows)
        .map(|r| {
            let row = &m[r * cols..(r + 1) * cols];
            let acc: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum();
            acc + bias.map_or(0.0, |b| b[r])
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn mat_vec_adjoint(
    g: &[f64],
    params: &[f64],
    x: &[f64],
    rows: usize,
    adj: &mut [Vec<f64>],
    params_id: NodeId,
    x_id: NodeId,
    bias: Option<()>,
) {
    let cols = x.len();
    let mut dparams = vec![0.0; params.len()];
    let mut dx = vec![0.0; cols];
    for r in 0..rows {
        let gr = g[r];
        for c in 0..cols {
            dparams[r * cols + c] += gr * x[c];
            dx[c] += gr * params[r * cols + c];
        }
        if bias.is_some() {
            dparams[rows * cols + r] += gr;
        }
    }
    accumulate(&mut adj[params_id], dparams.into_iter().enumerate());
    accumulate(&mut adj[x_id], dx.into_iter().enumerate());
}

/// `f(w, s)` for a parameter vector.
pub fn evaluate(graph: &ExprGraph, w: &ParamVector, s: &[f64]) -> Result<f64> {
    graph.evaluate(w.as_slice(), s)
}

/// Backprop output as a parameter vector.
pub fn backprop(graph: &ExprGraph, w: &ParamVector, s: &[f64], policy: &SelectionPolicy) -> Result<ParamVector> {
    ParamVector::new(graph.backprop(w.as_slice(), s, policy)?)
}

/// Central-difference step `1e-6 * (1 + ||w||_inf)`.
pub fn default_fd_step(w: &[f64]) -> f64 {
    1e-6 * (1.0 + w.iter().fold(0.0f64, |m, x| m.max(x.abs())))
}

/// Coordinate-wise central differences of any scalar function.
pub fn central_differences<F>(f: F, w: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::InvalidSpec(format!("finite-difference step must be positive, got {h}")));
    }
    let mut x = w.to_vec();
    let mut out = Vec::with_capacity(w.len());
    for i in 0..w.len() {
        x[i] = w[i] + h;
        let up = f(&x)?;
        x[i] = w[i] - h;
        let down = f(&x)?;
        x[i] = w[i];
        out.push((up - down) / (2.0 * h));
    }
    check_finite(&out, "finite differences")?;
    Ok(out)
}

/// Central finite-difference gradient of `f(., s)` at `w`.
pub fn fd_gradient(graph: &ExprGraph, w: &ParamVector, s: &[f64], h: f64) -> Result<ParamVector> {
    ParamVector::new(central_differences(|x| graph.evaluate(x, s), w.as_slice(), h)?)
}
