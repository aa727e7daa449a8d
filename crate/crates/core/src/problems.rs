//! Canonical integrands `f(w, s)`, their closed-form risks where known, the
//! teacher-student ReLU network builder and the distance function to
//! `C = {1/k : k != 0} ∪ {0}`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::sampling::DistributionSpec;
use crate::tape::{ExprGraph, GraphBuilder, SelectionPolicy};
use crate::types::{norm, ParamVector, RngSpec, SampleVector};

// ---------------------------------------------------------------------------
// Distance to C
// ---------------------------------------------------------------------------

/// Largest index kept when truncating `C`.
pub const K_MAX: u64 = 1_000_000;

/// `F(x) = dist(x, C)` with `C = {1/k : 0 < |k| <= K_MAX} ∪ {0}`, plus a
/// conservative oracle returning slopes `±1` off the kink set.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DistanceToC;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Nearest {
    dist: f64,
    /// Nearest point of C to `|x|` (the left one on ties).
    point: f64,
    tie: bool,
}

fn nearest_in_c(a: f64) -> Nearest {
    debug_assert!(a >= 0.0);
    let inv_kmax = 1.0 / K_MAX as f64;
    if a >= 1.0 {
        return Nearest { dist: a - 1.0, point: 1.0, tie: false };
    }
    let mut cands: Vec<f64> = Vec::with_capacity(5);
    if a <= inv_kmax {
        cands.extend([0.0, inv_kmax]);
    } else {
        let m = (1.0 / a).floor() as u64;
        for k in m.saturating_sub(1)..=m + 2 {
            if (1..=K_MAX).contains(&k) {
                cands.push(1.0 / k as f64);
            }
        }
    }
    let mut best = Nearest { dist: f64::INFINITY, point: 0.0, tie: false };
    for c in cands {
        let d = (a - c).abs();
        if d < best.dist {
            best = Nearest { dist: d, point: c, tie: false };
        } else if d == best.dist && c != best.point {
            best.tie = true;
            best.point = best.point.min(c);
        }
    }
    best
}

impl DistanceToC {
    pub fn value(&self, x: f64) -> f64 {
        nearest_in_c(x.abs()).dist
    }

    /// A selection of the Clarke subdifferential of `F` at `x`. At points of
    /// `C` the policy's `abs_at_zero` is used; at midpoints between
    /// consecutive points the `max2_tie` weight `t` gives slope `2t - 1`.
    pub fn slope(&self, x: f64, policy: &SelectionPolicy) -> f64 {
        let a = x.abs();
        if a == 0.0 {
            return policy.abs_at_zero;
        }
        let n = nearest_in_c(a);
        let positive_side = if n.dist == 0.0 {
            policy.abs_at_zero
        } else if n.tie {
            2.0 * policy.max2_tie - 1.0
        } else if a > n.point {
            1.0
        } else {
            -1.0
        };
        if x > 0.0 {
            positive_side
        } else {
            -positive_side
        }
    }

    /// Distance from `x` to the kink set (points of C and midpoints between
    /// neighbours), i.e. the radius of the largest interval on which `F` is affine.
    pub fn kink_margin(&self, x: f64) -> f64 {
        let a = x.abs();
        let n = nearest_in_c(a);
        if n.tie {
            return 0.0;
        }
        if a >= 1.0 {
            return a - 1.0;
        }
        if a <= 1.0 / K_MAX as f64 {
            return n.dist.min((0.5 / K_MAX as f64 - a).abs());
        }
        let m = (1.0 / a).floor().max(1.0);
        let (left, right) = (1.0 / (m + 1.0), 1.0 / m);
        let mid = 0.5 * (left + right);
        (a - left).abs().min((right - a).abs()).min((a - mid).abs())
    }
}

// ---------------------------------------------------------------------------
// Networks
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    #[default]
    Squared,
    L1,
}

/// Fully connected ReLU network `p_0 -> p_1 -> ... -> p_L`, affine last layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub layer_dims: Vec<usize>,
    #[serde(default)]
    pub loss: Loss,
}

impl NetworkSpec {
    pub fn new(layer_dims: Vec<usize>, loss: Loss) -> Result<Self> {
        let spec = NetworkSpec { layer_dims, loss };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 2 {
            return Err(Error::InvalidSpec("a network needs at least input and output layers".into()));
        }
        if self.layer_dims.contains(&0) {
            return Err(Error::InvalidSpec(format!("layer dims {:?} contain 0", self.layer_dims)));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    /// Parameter count; layer `l` stores `W_l` row-major then `b_l`.
    pub fn n_params(&self) -> usize {
        self.layer_dims.windows(2).map(|d| d[1] * d[0] + d[1]).sum()
    }

    /// `h(w, x)`, computed directly (independently of the expression graph).
    pub fn predict(&self, w: &[f64], x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        let mut off = 0;
        let layers = self.layer_dims.len() - 1;
        for (l, d) in self.layer_dims.windows(2).enumerate() {
            let (cols, rows) = (d[0], d[1]);
            let wm = &w[off..off + rows * cols];
            let b = &w[off + rows * cols..off + rows * cols + rows];
            off += rows * cols + rows;
            h = (0..rows)
                .map(|r| {
                    let z: f64 = (0..cols).map(|c| wm[r * cols + c] * h[c]).sum::<f64>() + b[r];
                    if l + 1 < layers {
                        z.max(0.0)
                    } else {
                        z
                    }
                })
                .collect();
        }
        h
    }

    /// Graph of `loss(h(w, x), y)` with `s = (x, y)`.
    pub fn build_graph(&self) -> Result<ExprGraph> {
        self.validate()?;
        let (d_in, d_out) = (self.input_dim(), self.output_dim());
        let mut b = GraphBuilder::new(self.n_params(), d_in + d_out);
        let mut h = b.input_s(0, d_in)?;
        let y = b.input_s(d_in, d_out)?;
        let mut off = 0;
        let layers = self.layer_dims.len() - 1;
        for (l, d) in self.layer_dims.windows(2).enumerate() {
            let n = d[1] * d[0] + d[1];
            let params = b.input_w(off, n)?;
            off += n;
            let z = b.affine(params, h, d[1])?;
            h = if l + 1 < layers { b.relu(z)? } else { z };
        }
        let out = match self.loss {
            Loss::Squared => b.squared_loss(h, y)?,
            Loss::L1 => {
                let r = b.sub(h, y)?;
                b.norm1(r)?
            }
        };
        b.finish(out)
    }

    /// Random parameters with `N(0, 1/fan_in)` weights and `N(0, 0.01)` biases.
    pub fn random_params(&self, rng: RngSpec) -> Vec<f64> {
        let mut r = rng.rng();
        let mut w = Vec::with_capacity(self.n_params());
        for d in self.layer_dims.windows(2) {
            let scale = 1.0 / (d[0] as f64).sqrt();
            for _ in 0..d[1] * d[0] {
                w.push(scale * r.sample::<f64, _>(StandardNormal));
            }
            for _ in 0..d[1] {
                w.push(0.1 * r.sample::<f64, _>(StandardNormal));
            }
        }
        w
    }
}

/// Labels samples as `(x, h(w_teacher, x))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Teacher {
    pub spec: NetworkSpec,
    pub params: Vec<f64>,
}

// ---------------------------------------------------------------------------
// Closed forms
// ---------------------------------------------------------------------------

/// The Clarke subdifferential of the risk at a point.
#[derive(Debug, Clone, PartialEq)]
pub enum ClarkeSet {
    Point(Vec<f64>),
    Interval { lo: f64, hi: f64 },
}

impl ClarkeSet {
    /// `dist(0, set)`.
    pub fn distance_to_zero(&self) -> f64 {
        match self {
            ClarkeSet::Point(g) => norm(g),
            ClarkeSet::Interval { lo, hi } => {
                if *lo > 0.0 {
                    *lo
                } else if *hi < 0.0 {
                    -hi
                } else {
                    0.0
                }
            }
        }
    }
}

/// Known risk `J` and Clarke subdifferential.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClosedForm {
    /// `J ≡ 0`
    Zero,
    /// `J(w) = ||w||^2 / 2`
    HalfSquaredNorm,
    /// `J(w, b) = E[(w x + b - (a x + c))^2] / 2` with `E x = m1`, `E x^2 = m2`.
    AffineRegression { a: f64, c: f64, m1: f64, m2: f64 },
    /// `J(w) = (w - 1)^2 E[x^2] / 2`
    IdentityRelu { m2: f64 },
    /// `J = F`, the distance to C.
    DistanceToC,
}

impl ClosedForm {
    pub fn value(&self, w: &[f64]) -> f64 {
        match self {
            ClosedForm::Zero => 0.0,
            ClosedForm::HalfSquaredNorm => 0.5 * w.iter().map(|x| x * x).sum::<f64>(),
            ClosedForm::AffineRegression { a, c, m1, m2 } => {
                let (u, v) = (w[0] - a, w[1] - c);
                0.5 * (u * u * m2 + 2.0 * u * v * m1 + v * v)
            }
            ClosedForm::IdentityRelu { m2 } => 0.5 * (w[0] - 1.0).powi(2) * m2,
            ClosedForm::DistanceToC => DistanceToC.value(w[0]),
        }
    }

    pub fn clarke_subdifferential(&self, w: &[f64]) -> ClarkeSet {
        match self {
            ClosedForm::Zero => ClarkeSet::Point(vec![0.0; w.len()]),
            ClosedForm::HalfSquaredNorm => ClarkeSet::Point(w.to_vec()),
            ClosedForm::AffineRegression { a, c, m1, m2 } => {
                let (u, v) = (w[0] - a, w[1] - c);
                ClarkeSet::Point(vec![u * m2 + v * m1, u * m1 + v])
            }
            ClosedForm::IdentityRelu { m2 } => ClarkeSet::Point(vec![(w[0] - 1.0) * m2]),
            ClosedForm::DistanceToC => {
                let x = w[0];
                if DistanceToC.kink_margin(x) == 0.0 || x == 0.0 {
                    ClarkeSet::Interval { lo: -1.0, hi: 1.0 }
                } else {
                    ClarkeSet::Point(vec![DistanceToC.slope(x, &SelectionPolicy::default())])
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Problems
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub enum Integrand {
    Graph(ExprGraph),
    DistanceToC(DistanceToC),
}

impl Integrand {
    pub fn w_dim(&self) -> usize {
        match self {
            Integrand::Graph(g) => g.w_dim(),
            Integrand::DistanceToC(_) => 1,
        }
    }

    pub fn s_dim(&self) -> usize {
        match self {
            Integrand::Graph(g) => g.s_dim(),
            Integrand::DistanceToC(_) => 0,
        }
    }

    pub fn value(&self, w: &[f64], s: &[f64]) -> Result<f64> {
        match self {
            Integrand::Graph(g) => g.evaluate(w, s),
            Integrand::DistanceToC(f) => {
                check_scalar(w)?;
                Ok(f.value(w[0]))
            }
        }
    }

    pub fn value_and_selection(&self, w: &[f64], s: &[f64], policy: &SelectionPolicy) -> Result<(f64, Vec<f64>)> {
        match self {
            Integrand::Graph(g) => g.value_and_backprop(w, s, policy),
            Integrand::DistanceToC(f) => {
                check_scalar(w)?;
                Ok((f.value(w[0]), vec![f.slope(w[0], policy)]))
            }
        }
    }

    pub fn kink_margin(&self, w: &[f64], s: &[f64]) -> Result<f64> {
        match self {
            Integrand::Graph(g) => g.kink_margin(w, s),
            Integrand::DistanceToC(f) => {
                check_scalar(w)?;
                Ok(f.kink_margin(w[0]))
            }
        }
    }
}

fn check_scalar(w: &[f64]) -> Result<()> {
    if w.len() != 1 {
        return Err(Error::DimensionMismatch { what: "w", expected: 1, got: w.len() });
    }
    Ok(())
}

/// A stochastic objective `J(w) = E[f(w, xi)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub name: String,
    pub integrand: Integrand,
    pub dist: DistributionSpec,
    pub teacher: Option<Teacher>,
    pub closed_form: Option<ClosedForm>,
}

/// Mean and standard error of a Monte-Carlo estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl McEstimate {
    fn from_moments(sum: f64, sum_sq: f64, n: usize) -> McEstimate {
        let nf = n as f64;
        let mean = sum / nf;
        let var = if n > 1 { ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0) } else { 0.0 };
        McEstimate { mean, se: (var / nf).sqrt(), n }
    }
}

impl Problem {
    pub fn new(
        name: impl Into<String>,
        integrand: Integrand,
        dist: DistributionSpec,
        teacher: Option<Teacher>,
        closed_form: Option<ClosedForm>,
    ) -> Result<Problem> {
        dist.validate()?;
        let label_dim = teacher.as_ref().map_or(0, |t| t.spec.output_dim());
        if let Some(t) = &teacher {
            if t.spec.input_dim() != dist.dim() || t.params.len() != t.spec.n_params() {
                return Err(Error::InvalidSpec("teacher does not match the input distribution".into()));
            }
        }
        if integrand.s_dim() != dist.dim() + label_dim {
            return Err(Error::DimensionMismatch {
                what: "sample",
                expected: integrand.s_dim(),
                got: dist.dim() + label_dim,
            });
        }
        Ok(Problem { name: name.into(), integrand, dist, teacher, closed_form })
    }

    pub fn w_dim(&self) -> usize {
        self.integrand.w_dim()
    }

    fn label(&self, mut raw: SampleVector) -> SampleVector {
        if let Some(t) = &self.teacher {
            let y = t.spec.predict(&t.params, &raw);
            raw.extend(y);
        }
        raw
    }

    /// Sample `index` of the stream `rng`, labelled when the problem has a teacher.
    pub fn sample_at(&self, rng: RngSpec, index: u64) -> SampleVector {
        self.label(self.dist.sample(&mut rng.rng_at(index)))
    }

    /// `n` samples of the stream, in order.
    pub fn draw(&self, rng: RngSpec, n: usize) -> Vec<SampleVector> {
        par::map_indexed(n, |i| self.sample_at(rng, i as u64))
    }

    /// Weighted atoms when the distribution is finite.
    pub fn atoms(&self) -> Option<Vec<(SampleVector, f64)>> {
        self.dist.atoms().map(|a| a.into_iter().map(|(s, p)| (self.label(s), p)).collect())
    }

    pub fn value(&self, w: &[f64], s: &[f64]) -> Result<f64> {
        self.integrand.value(w, s)
    }

    pub fn value_and_selection(&self, w: &[f64], s: &[f64], policy: &SelectionPolicy) -> Result<(f64, Vec<f64>)> {
        self.integrand.value_and_selection(w, s, policy)
    }

    /// Monte-Carlo risk over the given samples.
    pub fn risk_on(&self, w: &[f64], samples: &[SampleVector]) -> Result<McEstimate> {
        let m = par::try_sum_vectors::<Error, _>(samples.len(), 2, |i, acc| {
            let f = self.value(w, &samples[i])?;
            acc[0] += f;
            acc[1] += f * f;
            Ok(())
        })?;
        Ok(McEstimate::from_moments(m[0], m[1], samples.len()))
    }

    /// Monte-Carlo risk from `n` fresh draws of `rng`.
    pub fn risk_mc(&self, w: &[f64], rng: RngSpec, n: usize) -> Result<McEstimate> {
        let m = par::try_sum_vectors::<Error, _>(n, 2, |i, acc| {
            let f = self.value(w, &self.sample_at(rng, i as u64))?;
            acc[0] += f;
            acc[1] += f * f;
            Ok(())
        })?;
        Ok(McEstimate::from_moments(m[0], m[1], n))
    }

    /// Exact risk on finite distributions.
    pub fn risk_exact(&self, w: &[f64]) -> Option<Result<f64>> {
        self.atoms().map(|atoms| atoms.iter().try_fold(0.0, |acc, (s, p)| Ok(acc + p * self.value(w, s)?)))
    }

    /// Smallest kink margin over a set of samples.
    pub fn kink_margin(&self, w: &[f64], samples: &[SampleVector]) -> Result<f64> {
        samples.iter().try_fold(f64::INFINITY, |m, s| Ok(m.min(self.integrand.kink_margin(w, s)?)))
    }

    /// Checks the closed form against Monte Carlo at `n_points` random `w` in
    /// `[-2, 2]^p`: `|MC - J(w)| <= 4 SE` (plus rounding slack).
    pub fn self_check(&self, rng: RngSpec, n_points: usize, n_samples: usize) -> Result<()> {
        let Some(cf) = &self.closed_form else {
            return Ok(());
        };
        let mut r = rng.substream(0).rng();
        for j in 0..n_points {
            let w: Vec<f64> = (0..self.w_dim()).map(|_| r.random_range(-2.0..=2.0)).collect();
            let est = self.risk_mc(&w, rng.substream(1 + j as u64), n_samples)?;
            let exact = cf.value(&w);
            let slack = 1e-12 * (1.0 + exact.abs());
            if (est.mean - exact).abs() > 4.0 * est.se + slack {
                return Err(Error::InvalidSpec(format!(
                    "closed form of '{}' disagrees with Monte Carlo at w = {w:?}: J = {exact}, MC = {} ± {}",
                    self.name, est.mean, est.se
                )));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Builders
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbsDist {
    Rademacher,
    Uniform,
}

/// `f(w, s) = s |w|`. The risk is identically zero, yet the expected
/// subdifferential at 0 is `[-1, 1]`.
pub fn make_abs_problem(dist: AbsDist) -> Problem {
    let mut b = GraphBuilder::new(1, 1);
    let w = b.input_w(0, 1).unwrap();
    let s = b.input_s(0, 1).unwrap();
    let a = b.abs(w).unwrap();
    let out = b.mul(s, a).unwrap();
    let (name, d) = match dist {
        AbsDist::Rademacher => ("abs_rademacher", DistributionSpec::rademacher()),
        AbsDist::Uniform => ("abs_uniform", DistributionSpec::uniform(-1.0, 1.0)),
    };
    Problem::new(name, Integrand::Graph(b.finish(out).unwrap()), d, None, Some(ClosedForm::Zero)).unwrap()
}

/// `f(w, s) = ||w||^2 / 2 + noise * <s, w>` with `s` uniform on `{-1, 1}^dim`,
/// so `J(w) = ||w||^2 / 2` exactly.
pub fn make_quadratic_problem(dim: usize, noise: f64) -> Result<Problem> {
    if dim == 0 || !noise.is_finite() || noise < 0.0 {
        return Err(Error::InvalidSpec("quadratic problem needs dim >= 1 and noise >= 0".into()));
    }
    if noise == 0.0 {
        let mut b = GraphBuilder::new(dim, 0);
        let w = b.input_w(0, dim)?;
        let zero = b.constant(vec![0.0; dim])?;
        let out = b.squared_loss(w, zero)?;
        return Problem::new(
            "quadratic_deterministic",
            Integrand::Graph(b.finish(out)?),
            DistributionSpec::point_mass(),
            None,
            Some(ClosedForm::HalfSquaredNorm),
        );
    }
    if dim > 12 {
        return Err(Error::InvalidSpec("noisy quadratic enumerates 2^dim atoms; dim must be <= 12".into()));
    }
    let mut b = GraphBuilder::new(dim, dim);
    let w = b.input_w(0, dim)?;
    let s = b.input_s(0, dim)?;
    let zero = b.constant(vec![0.0; dim])?;
    let half = b.squared_loss(w, zero)?;
    let lin = b.dot(s, w)?;
    let out = b.add(half, lin)?;
    let n_atoms = 1usize << dim;
    let points =
        (0..n_atoms).map(|m| (0..dim).map(|i| if m >> i & 1 == 1 { noise } else { -noise }).collect()).collect();
    let weights = vec![1.0 / n_atoms as f64; n_atoms];
    Problem::new(
        "quadratic",
        Integrand::Graph(b.finish(out)?),
        DistributionSpec::DiscreteAtoms { points, weights },
        None,
        Some(ClosedForm::HalfSquaredNorm),
    )
}

/// Network regression on labels produced by a teacher with explicit parameters.
pub fn network_problem_with_teacher(
    name: impl Into<String>,
    spec: NetworkSpec,
    teacher_params: Vec<f64>,
    dist: DistributionSpec,
) -> Result<Problem> {
    spec.validate()?;
    dist.validate()?;
    if dist.is_finite() {
        return Err(Error::InvalidSpec("network inputs must have a density (continuous distribution)".into()));
    }
    let graph = spec.build_graph()?;
    let closed_form = match (&spec.layer_dims[..], spec.loss, &dist) {
        ([1, 1], Loss::Squared, DistributionSpec::UniformBox { lo, hi }) => {
            let (l, h) = (lo[0], hi[0]);
            Some(ClosedForm::AffineRegression {
                a: teacher_params[0],
                c: teacher_params[1],
                m1: 0.5 * (l + h),
                m2: (l * l + l * h + h * h) / 3.0,
            })
        }
        _ => None,
    };
    let teacher = Teacher { spec, params: teacher_params };
    Problem::new(name, Integrand::Graph(graph), dist, Some(teacher), closed_form)
}

/// Teacher-student network regression with a random teacher drawn from `teacher_seed`.
pub fn make_network_problem(spec: NetworkSpec, teacher_seed: RngSpec, dist: DistributionSpec) -> Result<Problem> {
    spec.validate()?;
    let params = spec.random_params(teacher_seed);
    let name = format!("network_{}", spec.layer_dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x"));
    network_problem_with_teacher(name, spec, params, dist)
}

/// Default truncated Gaussian input: `N(0, 1)` per coordinate, truncated to `[-2, 2]`.
pub fn truncated_gaussian_inputs(dim: usize) -> DistributionSpec {
    DistributionSpec::TruncatedGaussian {
        mean: vec![0.0; dim],
        sd: vec![1.0; dim],
        lo: vec![-2.0; dim],
        hi: vec![2.0; dim],
    }
}

/// `f(w, x, y) = ((relu(w) - relu(-w)) x - y)^2 / 2` with `y = x`, `x ~ U[lo, hi]`.
/// The model is the identity in `w`, but backprop with `relu'(0) = 0` returns 0 at `w = 0`.
pub fn make_identity_relu_problem(lo: f64, hi: f64) -> Result<Problem> {
    let dist = DistributionSpec::uniform(lo, hi);
    dist.validate()?;
    let mut b = GraphBuilder::new(1, 2);
    let w = b.input_w(0, 1)?;
    let x = b.input_s(0, 1)?;
    let y = b.input_s(1, 1)?;
    let minus = b.constant(vec![-1.0])?;
    let neg = b.mul(minus, w)?;
    let r1 = b.relu(w)?;
    let r2 = b.relu(neg)?;
    let id = b.sub(r1, r2)?;
    let pred = b.mul(id, x)?;
    let out = b.squared_loss(pred, y)?;
    let teacher = Teacher { spec: NetworkSpec::new(vec![1, 1], Loss::Squared)?, params: vec![1.0, 0.0] };
    Problem::new(
        "identity_relu",
        Integrand::Graph(b.finish(out)?),
        dist,
        Some(teacher),
        Some(ClosedForm::IdentityRelu { m2: (lo * lo + lo * hi + hi * hi) / 3.0 }),
    )
}

/// The deterministic distance-to-C problem.
pub fn make_distance_to_c_problem() -> Problem {
    Problem::new(
        "distance_to_c",
        Integrand::DistanceToC(DistanceToC),
        DistributionSpec::point_mass(),
        None,
        Some(ClosedForm::DistanceToC),
    )
    .unwrap()
}

// ---------------------------------------------------------------------------
// Registry
// ---------------------------------------------------------------------------

fn default_quadratic_dim() -> usize {
    2
}
fn default_noise() -> f64 {
    1.0
}
fn default_slope() -> f64 {
    2.0
}
fn default_lo() -> f64 {
    -1.0
}
fn default_hi() -> f64 {
    1.0
}
fn default_layers() -> Vec<usize> {
    vec![2, 3, 1]
}
fn default_teacher_seed() -> u64 {
    7
}
fn default_identity_lo() -> f64 {
    -2.0
}
fn default_identity_hi() -> f64 {
    2.0
}

/// Problem description used by experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    Abs {
        dist: AbsDist,
    },
    Quadratic {
        #[serde(default = "default_quadratic_dim")]
        dim: usize,
        #[serde(default = "default_noise")]
        noise: f64,
    },
    AffineRegression {
        #[serde(default = "default_slope")]
        slope: f64,
        #[serde(default)]
        intercept: f64,
        #[serde(default = "default_lo")]
        lo: f64,
        #[serde(default = "default_hi")]
        hi: f64,
    },
    TeacherStudent {
        #[serde(default = "default_layers")]
        layers: Vec<usize>,
        #[serde(default)]
        loss: Loss,
        #[serde(default = "default_teacher_seed")]
        teacher_seed: u64,
        /// Input distribution; truncated standard Gaussian on `[-2, 2]^d` when absent.
        #[serde(default)]
        inputs: Option<DistributionSpec>,
    },
    IdentityRelu {
        #[serde(default = "default_identity_lo")]
        lo: f64,
        #[serde(default = "default_identity_hi")]
        hi: f64,
    },
    DistanceToC,
}

impl ProblemSpec {
    /// Builds the problem without the Monte-Carlo self-check.
    pub fn build_unchecked(&self) -> Result<Problem> {
        match self {
            ProblemSpec::Abs { dist } => Ok(make_abs_problem(*dist)),
            ProblemSpec::Quadratic { dim, noise } => make_quadratic_problem(*dim, *noise),
            ProblemSpec::AffineRegression { slope, intercept, lo, hi } => network_problem_with_teacher(
                "affine_regression",
                NetworkSpec::new(vec![1, 1], Loss::Squared)?,
                vec![*slope, *intercept],
                DistributionSpec::uniform(*lo, *hi),
            ),
            ProblemSpec::TeacherStudent { layers, loss, teacher_seed, inputs } => {
                let spec = NetworkSpec::new(layers.clone(), *loss)?;
                let dist = inputs.clone().unwrap_or_else(|| truncated_gaussian_inputs(spec.input_dim()));
                let mut p = make_network_problem(spec, RngSpec::new(*teacher_seed, 0), dist)?;
                p.name = "teacher_student".into();
                Ok(p)
            }
            ProblemSpec::IdentityRelu { lo, hi } => make_identity_relu_problem(*lo, *hi),
            ProblemSpec::DistanceToC => Ok(make_distance_to_c_problem()),
        }
    }

    /// Builds the problem and runs the closed-form self-check
    /// (20 points, 10^5 samples each) when a closed form exists.
    pub fn build(&self) -> Result<Problem> {
        let p = self.build_unchecked()?;
        p.self_check(RngSpec::new(0x5E1F_C4EC, 0), 20, 100_000)?;
        Ok(p)
    }
}

/// Named problems with their default parameters.
pub fn registry() -> Vec<(&'static str, ProblemSpec)> {
    vec![
        ("abs_rademacher", ProblemSpec::Abs { dist: AbsDist::Rademacher }),
        ("abs_uniform", ProblemSpec::Abs { dist: AbsDist::Uniform }),
        ("quadratic", ProblemSpec::Quadratic { dim: 2, noise: 1.0 }),
        ("quadratic_deterministic", ProblemSpec::Quadratic { dim: 2, noise: 0.0 }),
        ("affine_regression", ProblemSpec::AffineRegression { slope: 2.0, intercept: 0.0, lo: -1.0, hi: 1.0 }),
        (
            "teacher_student",
            ProblemSpec::TeacherStudent { layers: vec![2, 3, 1], loss: Loss::Squared, teacher_seed: 7, inputs: None },
        ),
        ("identity_relu", ProblemSpec::IdentityRelu { lo: -2.0, hi: 2.0 }),
        ("distance_to_c", ProblemSpec::DistanceToC),
    ]
}

/// Looks up a registered problem by name and builds it (with self-check).
pub fn lookup(name: &str) -> Result<Problem> {
    registry().into_iter().find(|(n, _)| *n == name).ok_or_else(|| Error::UnknownProblem(name.to_string()))?.1.build()
}

/// Convenience: the parameter vector as a [`ParamVector`].
pub fn teacher_params(problem: &Problem) -> Option<ParamVector> {
    problem.teacher.as_ref().and_then(|t| ParamVector::new(t.params.clone()).ok())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distance_to_c_values() {
        let f = DistanceToC;
        assert_eq!(f.value(0.5), 0.0);
        assert_eq!(f.value(0.75), 0.25);
        assert_eq!(f.value(0.0), 0.0);
        assert_eq!(f.value(-0.75), 0.25);
        assert_eq!(f.value(1.5), 0.5);
        assert_eq!(f.value(-2.0), 1.0);
        assert!((f.value(0.4) - (0.5 - 0.4f64).min(0.4 - 1.0 / 3.0)).abs() < 1e-15);
        for j in 1..=10_000u64 {
            assert_eq!(f.value(1.0 / j as f64), 0.0, "j = {j}");
        }
        // below 1/K_MAX only 0 and 1/K_MAX remain
        assert_eq!(f.value(1e-7), 1e-7);
    }

    #[test]
    fn distance_to_c_matches_enumeration() {
        let mut r = RngSpec::new(11, 0).rng();
        for _ in 0..20_000 {
            let x: f64 = r.random_range(-2.0..2.0);
            let a = x.abs();
            let mut best = a;
            for k in 1..=20_000u64 {
                best = best.min((a - 1.0 / k as f64).abs());
            }
            if a > 1.0 / 19_000.0 {
                assert!((DistanceToC.value(x) - best).abs() <= 1e-15, "x = {x}");
            }
        }
    }

    #[test]
    fn distance_to_c_slopes() {
        let f = DistanceToC;
        let p = SelectionPolicy::default();
        assert_eq!(f.slope(0.6, &p), 1.0);
        assert_eq!(f.slope(0.9, &p), -1.0);
        assert_eq!(f.slope(-0.6, &p), -1.0);
        assert_eq!(f.slope(1.5, &p), 1.0);
        assert_eq!(f.slope(0.5, &p), 0.0);
        let minus = p.with_abs(-1.0).unwrap();
        assert_eq!(f.slope(0.25, &minus), -1.0);
        assert_eq!(f.slope(0.75, &p), 1.0);
        let half = SelectionPolicy::new(0.0, 0.0, 0.5).unwrap();
        assert_eq!(f.slope(0.75, &half), 0.0);
        assert_eq!(ClosedForm::DistanceToC.clarke_subdifferential(&[0.5]), ClarkeSet::Interval { lo: -1.0, hi: 1.0 });
        assert!(f.kink_margin(0.6) > 0.09 && f.kink_margin(0.6) < 0.11);
    }

    #[test]
    fn distance_to_c_is_one_lipschitz() {
        let mut r = RngSpec::new(12, 0).rng();
        for _ in 0..100_000 {
            let x: f64 = r.random_range(-2.0..2.0);
            let y: f64 = r.random_range(-2.0..2.0);
            let lhs = (DistanceToC.value(x) - DistanceToC.value(y)).abs();
            let rhs = (x - y).abs();
            assert!(lhs <= rhs * (1.0 + f64::EPSILON) + f64::EPSILON * 4.0, "{x} {y}");
        }
    }

    #[test]
    fn abs_problem_closed_form() {
        let p = make_abs_problem(AbsDist::Rademacher);
        let est = p.risk_mc(&[0.7], RngSpec::new(1, 2), 100_000).unwrap();
        assert!(est.mean.abs() <= 4.0 * est.se);
        assert_eq!(p.closed_form.as_ref().unwrap().clarke_subdifferential(&[0.0]), ClarkeSet::Point(vec![0.0]));
    }

    #[test]
    fn abs_selections_at_zero_enumerated() {
        // every assignment of an Abs@0 selection g in {-1, 0, 1} to each atom
        let p = make_abs_problem(AbsDist::Rademacher);
        let atoms = p.atoms().unwrap();
        let mut seen: Vec<f64> = Vec::new();
        for g1 in [-1.0, 0.0, 1.0] {
            for g2 in [-1.0, 0.0, 1.0] {
                let mut v = 0.0;
                for ((s, w), g) in atoms.iter().zip([g1, g2]) {
                    let pol = SelectionPolicy::default().with_abs(g).unwrap();
                    v += w * p.value_and_selection(&[0.0], s, &pol).unwrap().1[0];
                }
                if !seen.contains(&v) {
                    seen.push(v);
                }
            }
        }
        seen.sort_by(f64::total_cmp);
        assert_eq!(seen, vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
    }

    #[test]
    fn network_graph_matches_direct_forward() {
        let spec = NetworkSpec::new(vec![2, 3, 2], Loss::Squared).unwrap();
        let g = spec.build_graph().unwrap();
        let w = spec.random_params(RngSpec::new(3, 3));
        let mut r = RngSpec::new(4, 4).rng();
        for _ in 0..100 {
            let x: Vec<f64> = (0..2).map(|_| r.random_range(-2.0..2.0)).collect();
            let y: Vec<f64> = (0..2).map(|_| r.random_range(-2.0..2.0)).collect();
            let pred = spec.predict(&w, &x);
            let expect = 0.5 * pred.iter().zip(&y).map(|(p, t)| (p - t).powi(2)).sum::<f64>();
            let s: Vec<f64> = x.iter().chain(&y).copied().collect();
            assert!((g.evaluate(&w, &s).unwrap() - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn teacher_fits_its_own_labels() {
        let spec = NetworkSpec::new(vec![2, 3, 1], Loss::Squared).unwrap();
        let p = make_network_problem(spec, RngSpec::new(9, 0), truncated_gaussian_inputs(2)).unwrap();
        let w = p.teacher.as_ref().unwrap().params.clone();
        let est = p.risk_mc(&w, RngSpec::new(1, 0), 10_000).unwrap();
        assert_eq!(est.mean, 0.0);
    }

    #[test]
    fn affine_regression_closed_form_matches_mc() {
        // J(w, b) = ((w - 2)^2 / 3 + b^2) / 2 for x ~ U[-1, 1], y = 2x
        let p =
            ProblemSpec::AffineRegression { slope: 2.0, intercept: 0.0, lo: -1.0, hi: 1.0 }.build_unchecked().unwrap();
        let cf = p.closed_form.clone().unwrap();
        let w = [0.5, -0.3];
        let analytic = 0.5 * ((0.5f64 - 2.0).powi(2) / 3.0 + 0.09);
        assert!((cf.value(&w) - analytic).abs() < 1e-15);
        let est = p.risk_mc(&w, RngSpec::new(2, 0), 100_000).unwrap();
        assert!((est.mean - analytic).abs() <= 4.0 * est.se);
    }

    #[test]
    fn degenerate_network_rejected() {
        assert!(NetworkSpec::new(vec![2, 0, 1], Loss::Squared).is_err());
        assert!(NetworkSpec::new(vec![2], Loss::Squared).is_err());
        let bad = NetworkSpec { layer_dims: vec![1, 0], loss: Loss::L1 };
        assert!(make_network_problem(bad, RngSpec::new(0, 0), DistributionSpec::uniform(-1.0, 1.0)).is_err());
    }

    #[test]
    fn every_registered_problem_passes_self_check() {
        for (name, spec) in registry() {
            let p = spec.build().unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(p.name, name);
        }
        assert!(matches!(lookup("nope"), Err(Error::UnknownProblem(_))));
    }

    #[test]
    fn wrong_closed_form_is_caught() {
        let mut p = make_abs_problem(AbsDist::Uniform);
        p.closed_form = Some(ClosedForm::HalfSquaredNorm);
        assert!(p.self_check(RngSpec::new(1, 1), 20, 100_000).is_err());
    }

    #[test]
    fn problem_spec_json() {
        let spec: ProblemSpec = serde_json::from_str(r#"{"kind": "teacher_student", "layers": [2, 4, 1]}"#).unwrap();
        let p = spec.build().unwrap();
        assert_eq!(p.w_dim(), 2 * 4 + 4 + 4 + 1);
        assert!(serde_json::from_str::<ProblemSpec>(r#"{"kind": "abs", "dist": "rademacher", "x": 1}"#).is_err());
    }
}
