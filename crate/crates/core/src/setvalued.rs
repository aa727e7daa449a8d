//! Finite approximations of set-valued expectations `E[D(w, xi)]` and the
//! convex-geometry queries used on them.
//!
//! A [`SetEstimate`] is a cloud of achievable averaged selections; every query
//! acts on its convex hull.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::problems::Problem;
use crate::tape::SelectionPolicy;
use crate::types::{dot, fmt_f64, norm, ParamVector, RngSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetMeta {
    pub n_samples: usize,
    pub n_selections: usize,
    pub w: ParamVector,
    /// True when the set was computed by exact enumeration of a finite distribution.
    pub exact: bool,
    /// Largest norm of any per-sample selection seen.
    pub max_sample_norm: f64,
    /// Largest coordinate-wise standard error of the first policy's average.
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetEstimate {
    pub points: Vec<ParamVector>,
    pub meta: SetMeta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AumannMode {
    /// Exhaustive on finite distributions, Monte Carlo otherwise.
    #[default]
    Auto,
    MonteCarlo,
    Exhaustive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AumannOptions {
    pub n_samples: usize,
    pub policies: Vec<SelectionPolicy>,
    #[serde(default)]
    pub mode: AumannMode,
    /// Extra points from random per-sample policy assignments and random
    /// directional selections.
    #[serde(default = "default_mixes")]
    pub n_mixes: usize,
    /// Cap on the number of selection combinations enumerated exactly.
    #[serde(default = "default_max_enumeration")]
    pub max_enumeration: usize,
}

fn default_mixes() -> usize {
    8
}
fn default_max_enumeration() -> usize {
    4096
}

impl AumannOptions {
    pub fn new(n_samples: usize, policies: Vec<SelectionPolicy>) -> Self {
        AumannOptions {
            n_samples,
            policies,
            mode: AumannMode::Auto,
            n_mixes: default_mixes(),
            max_enumeration: default_max_enumeration(),
        }
    }

    pub fn mode(mut self, mode: AumannMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn mixes(mut self, n: usize) -> Self {
        self.n_mixes = n;
        self
    }
}

/// Default policy plus every extreme kink choice.
pub fn default_policy_family() -> Vec<SelectionPolicy> {
    let mut v = vec![SelectionPolicy::default()];
    v.extend(SelectionPolicy::extremes());
    v
}

/// Distinct selections produced at one sample, and which one each policy picked.
struct SampleSelections {
    distinct: Vec<Vec<f64>>,
    by_policy: Vec<usize>,
}

fn selections_at(problem: &Problem, w: &[f64], s: &[f64], policies: &[SelectionPolicy]) -> Result<SampleSelections> {
    let mut distinct: Vec<Vec<f64>> = Vec::new();
    let mut by_policy = Vec::with_capacity(policies.len());
    for p in policies {
        let v = problem.value_and_selection(w, s, p)?.1;
        let idx = match distinct.iter().position(|d| *d == v) {
            Some(i) => i,
            None => {
                distinct.push(v);
                distinct.len() - 1
            }
        };
        by_policy.push(idx);
    }
    Ok(SampleSelections { distinct, by_policy })
}

fn push_unique(points: &mut Vec<Vec<f64>>, v: Vec<f64>) {
    if !points.contains(&v) {
        points.push(v);
    }
}

fn argmax_dir(cands: &[Vec<f64>], q: &[f64]) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, c) in cands.iter().enumerate() {
        let v = dot(c, q);
        if v > best_val {
            best_val = v;
            best = i;
        }
    }
    best
}

fn directions(p: usize, n_random: usize, rng: RngSpec) -> Vec<Vec<f64>> {
    let mut dirs = Vec::with_capacity(2 * p + n_random);
    for j in 0..p {
        for sign in [1.0, -1.0] {
            let mut e = vec![0.0; p];
            e[j] = sign;
            dirs.push(e);
        }
    }
    let mut r = rng.rng();
    for _ in 0..n_random {
        dirs.push((0..p).map(|_| r.random_range(-1.0..1.0)).collect());
    }
    dirs
}

/// Averages oracle selections at `w` over samples (or atoms) for each policy,
/// plus mixed and directional selections, and returns the resulting cloud.
pub fn estimate_aumann(problem: &Problem, w: &ParamVector, opts: &AumannOptions, rng: RngSpec) -> Result<SetEstimate> {
    if opts.policies.is_empty() {
        return Err(Error::InvalidSpec("at least one selection policy is required".into()));
    }
    for p in &opts.policies {
        p.validate()?;
    }
    if w.dim() != problem.w_dim() {
        return Err(Error::DimensionMismatch { what: "w", expected: problem.w_dim(), got: w.dim() });
    }
    let exhaustive = match opts.mode {
        AumannMode::Auto => problem.dist.is_finite(),
        AumannMode::Exhaustive => {
            if !problem.dist.is_finite() {
                return Err(Error::InvalidSpec("exhaustive Aumann estimate needs a finite distribution".into()));
            }
            true
        }
        AumannMode::MonteCarlo => false,
    };
    if exhaustive {
        estimate_exhaustive(problem, w, opts, rng)
    } else {
        estimate_monte_carlo(problem, w, opts, rng)
    }
}

fn estimate_exhaustive(problem: &Problem, w: &ParamVector, opts: &AumannOptions, rng: RngSpec) -> Result<SetEstimate> {
    let atoms = problem.atoms().expect("finite distribution");
    let p = w.dim();
    let sels: Vec<SampleSelections> =
        atoms.iter().map(|(s, _)| selections_at(problem, w.as_slice(), s, &opts.policies)).collect::<Result<_>>()?;
    let max_sample_norm = sels.iter().flat_map(|s| s.distinct.iter()).map(|v| norm(v)).fold(0.0, f64::max);

    let combos = sels.iter().try_fold(1usize, |acc, s| acc.checked_mul(s.distinct.len())).unwrap_or(usize::MAX);
    let mut points: Vec<Vec<f64>> = Vec::new();
    if combos <= opts.max_enumeration {
        // Minkowski sum of weighted per-atom selection sets.
        let mut partial: Vec<Vec<f64>> = vec![vec![0.0; p]];
        for ((_, weight), sel) in atoms.iter().zip(&sels) {
            let mut next = Vec::with_capacity(partial.len() * sel.distinct.len());
            for acc in &partial {
                for v in &sel.distinct {
                    let sum: Vec<f64> = acc.iter().zip(v).map(|(a, x)| a + weight * x).collect();
                    push_unique(&mut next, sum);
                }
            }
            partial = next;
        }
        points = partial;
    } else {
        for k in 0..opts.policies.len() {
            let mut acc = vec![0.0; p];
            for ((_, weight), sel) in atoms.iter().zip(&sels) {
                for (a, x) in acc.iter_mut().zip(&sel.distinct[sel.by_policy[k]]) {
                    *a += weight * x;
                }
            }
            push_unique(&mut points, acc);
        }
        for q in directions(p, opts.n_mixes, rng.substream(1)) {
            let mut acc = vec![0.0; p];
            for ((_, weight), sel) in atoms.iter().zip(&sels) {
                for (a, x) in acc.iter_mut().zip(&sel.distinct[argmax_dir(&sel.distinct, &q)]) {
                    *a += weight * x;
                }
            }
            push_unique(&mut points, acc);
        }
    }
    let points = points.into_iter().map(ParamVector::new).collect::<Result<Vec<_>>>()?;
    Ok(SetEstimate {
        meta: SetMeta {
            n_samples: atoms.len(),
            n_selections: points.len(),
            w: w.clone(),
            exact: true,
            max_sample_norm,
            std_error: 0.0,
        },
        points,
    })
}

fn estimate_monte_carlo(problem: &Problem, w: &ParamVector, opts: &AumannOptions, rng: RngSpec) -> Result<SetEstimate> {
    if opts.n_samples == 0 {
        return Err(Error::InvalidSpec("n_samples must be >= 1".into()));
    }
    let p = w.dim();
    let n = opts.n_samples;
    let sels: Vec<SampleSelections> = par::try_map_indexed(n, |i| {
        let s = problem.sample_at(rng, i as u64);
        selections_at(problem, w.as_slice(), &s, &opts.policies)
    })?;
    let nf = n as f64;
    let max_sample_norm = sels.iter().flat_map(|s| s.distinct.iter()).map(|v| norm(v)).fold(0.0, f64::max);

    let average = |pick: &dyn Fn(usize, &SampleSelections) -> usize| -> Vec<f64> {
        let mut acc = vec![0.0; p];
        for (i, sel) in sels.iter().enumerate() {
            for (a, x) in acc.iter_mut().zip(&sel.distinct[pick(i, sel)]) {
                *a += x;
            }
        }
        acc.iter().map(|a| a / nf).collect()
    };

    let mut points: Vec<Vec<f64>> = Vec::new();
    for k in 0..opts.policies.len() {
        push_unique(&mut points, average(&|_, sel| sel.by_policy[k]));
    }
    let ambiguous = sels.iter().any(|s| s.distinct.len() > 1);
    if ambiguous {
        for m in 0..opts.n_mixes {
            let mix_rng = rng.substream(1_000 + m as u64);
            let n_pol = opts.policies.len();
            push_unique(&mut points, average(&|i, sel| sel.by_policy[mix_rng.rng_at(i as u64).random_range(0..n_pol)]));
        }
        for q in directions(p, opts.n_mixes, rng.substream(1)) {
            push_unique(&mut points, average(&|_, sel| argmax_dir(&sel.distinct, &q)));
        }
    }

    // standard error of the first policy's average, worst coordinate
    let mean0 = &points[0];
    let mut var = vec![0.0; p];
    for sel in &sels {
        for (j, x) in sel.distinct[sel.by_policy[0]].iter().enumerate() {
            var[j] += (x - mean0[j]).powi(2);
        }
    }
    let std_error = if n > 1 { var.iter().map(|v| (v / (nf - 1.0) / nf).sqrt()).fold(0.0, f64::max) } else { 0.0 };
    let points = points.into_iter().map(ParamVector::new).collect::<Result<Vec<_>>>()?;
    Ok(SetEstimate {
        meta: SetMeta {
            n_samples: n,
            n_selections: points.len(),
            w: w.clone(),
            exact: false,
            max_sample_norm,
            std_error,
        },
        points,
    })
}

impl SetEstimate {
    /// A bare point cloud (for geometry queries on arbitrary sets).
    pub fn from_points(points: Vec<ParamVector>) -> Result<SetEstimate> {
        let first = points.first().ok_or_else(|| Error::InvalidSpec("empty point set".into()))?;
        let p = first.dim();
        if let Some(bad) = points.iter().find(|x| x.dim() != p) {
            return Err(Error::DimensionMismatch { what: "set point", expected: p, got: bad.dim() });
        }
        Ok(SetEstimate {
            meta: SetMeta {
                n_samples: 0,
                n_selections: points.len(),
                w: ParamVector::zeros(p),
                exact: true,
                max_sample_norm: points.iter().map(|x| x.norm()).fold(0.0, f64::max),
                std_error: 0.0,
            },
            points,
        })
    }

    pub fn dim(&self) -> usize {
        self.points[0].dim()
    }

    /// One point per row, columns `p_0..p_{d-1}`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record((0..self.dim()).map(|i| format!("p_{i}")))?;
        for pt in &self.points {
            wtr.write_record(pt.as_slice().iter().map(|x| fmt_f64(*x)))?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Componentwise hull of a one-dimensional set.
    pub fn interval(&self) -> Option<(f64, f64)> {
        if self.dim() != 1 {
            return None;
        }
        let xs = self.points.iter().map(|p| p[0]);
        Some((xs.clone().fold(f64::INFINITY, f64::min), xs.fold(f64::NEG_INFINITY, f64::max)))
    }
}

/// `h(q) = max_{v in set} <v, q>`.
pub fn support_function(set: &SetEstimate, q: &ParamVector) -> Result<f64> {
    if q.dim() != set.dim() {
        return Err(Error::DimensionMismatch { what: "direction", expected: set.dim(), got: q.dim() });
    }
    if q.norm() == 0.0 {
        return Err(Error::ZeroDirection);
    }
    Ok(set.points.iter().map(|v| v.dot(q)).fold(f64::NEG_INFINITY, f64::max))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinNormPoint {
    pub point: ParamVector,
    pub norm: f64,
    /// Barycentric weights over the set's points.
    pub weights: Vec<f64>,
    /// `min_v <x*, v - x*>` over the stored points; nonnegative at the optimum.
    pub certificate: f64,
    pub iterations: usize,
}

/// Point of the affine hull of `pts[support]` closest to the origin, as
/// affine weights. `None` when the points are numerically affinely dependent.
fn affine_min_norm(pts: &[Vec<f64>], support: &[usize]) -> Option<Vec<f64>> {
    let m = support.len();
    if m == 1 {
        return Some(vec![1.0]);
    }
    let p = pts[0].len();
    let base = &pts[support[0]];
    let d = DMatrix::from_fn(p, m - 1, |r, c| pts[support[c + 1]][r] - base[r]);
    let rhs = DVector::from_fn(p, |r, _| -base[r]);
    let svd = d.svd(true, true);
    let smax = svd.singular_values.max();
    if svd.singular_values.min() <= 1e-12 * smax.max(1e-300) {
        return None;
    }
    let c = svd.solve(&rhs, 0.0).ok()?;
    let mut mu = Vec::with_capacity(m);
    mu.push(1.0 - c.sum());
    mu.extend(c.iter().copied());
    Some(mu)
}

fn combine(pts: &[Vec<f64>], support: &[usize], lambda: &[f64]) -> Vec<f64> {
    let p = pts[0].len();
    let mut x = vec![0.0; p];
    for (&i, &l) in support.iter().zip(lambda) {
        for (xj, pj) in x.iter_mut().zip(&pts[i]) {
            *xj += l * pj;
        }
    }
    x
}

/// Nearest point to the origin in the convex hull of the set (Wolfe's
/// algorithm), with an optimality certificate.
pub fn min_norm_point(set: &SetEstimate) -> MinNormPoint {
    let pts: Vec<Vec<f64>> = set.points.iter().map(|p| p.as_slice().to_vec()).collect();
    let n = pts.len();
    let scale = pts.iter().map(|p| dot(p, p)).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let tol = 1e-15 * scale;

    let start = (0..n).min_by(|&a, &b| dot(&pts[a], &pts[a]).total_cmp(&dot(&pts[b], &pts[b]))).unwrap();
    let mut support = vec![start];
    let mut lambda = vec![1.0];
    let mut x = pts[start].clone();
    let mut iterations = 0;

    'major: while iterations < 50 * n + 100 {
        iterations += 1;
        let xx = dot(&x, &x);
        let j = (0..n).min_by(|&a, &b| dot(&x, &pts[a]).total_cmp(&dot(&x, &pts[b]))).unwrap();
        if xx - dot(&x, &pts[j]) <= tol || support.contains(&j) {
            break;
        }
        support.push(j);
        lambda.push(0.0);
        loop {
            let Some(mu) = affine_min_norm(&pts, &support) else {
                // numerically dependent: drop the newcomer and stop
                support.pop();
                lambda.pop();
                break 'major;
            };
            if mu.iter().all(|&m| m > 1e-14) {
                lambda = mu;
                x = combine(&pts, &support, &lambda);
                break;
            }
            let mut theta = 1.0f64;
            for (l, m) in lambda.iter().zip(&mu) {
                if *m <= 1e-14 {
                    let denom = l - m;
                    if denom > 0.0 {
                        theta = theta.min(l / denom);
                    }
                }
            }
            for (l, m) in lambda.iter_mut().zip(&mu) {
                *l = (1.0 - theta) * *l + theta * m;
            }
            let mut keep_s = Vec::with_capacity(support.len());
            let mut keep_l = Vec::with_capacity(support.len());
            for (&i, &l) in support.iter().zip(&lambda) {
                if l > 1e-14 {
                    keep_s.push(i);
                    keep_l.push(l);
                }
            }
            if keep_s.is_empty() {
                // cannot happen in exact arithmetic; fall back to the best vertex seen
                keep_s.push(j);
                keep_l.push(1.0);
            }
            let total: f64 = keep_l.iter().sum();
            keep_l.iter_mut().for_each(|l| *l /= total);
            support = keep_s;
            lambda = keep_l;
            x = combine(&pts, &support, &lambda);
        }
    }

    let mut weights = vec![0.0; n];
    for (&i, &l) in support.iter().zip(&lambda) {
        weights[i] += l;
    }
    let xx = dot(&x, &x);
    let certificate = pts.iter().map(|v| dot(&x, v) - xx).fold(f64::INFINITY, f64::min);
    let norm = xx.sqrt();
    MinNormPoint {
        point: ParamVector::new(x).expect("convex combination of finite points"),
        norm,
        weights,
        certificate,
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{make_abs_problem, AbsDist};

    fn set(points: &[&[f64]]) -> SetEstimate {
        SetEstimate::from_points(points.iter().map(|p| ParamVector::new(p.to_vec()).unwrap()).collect()).unwrap()
    }

    fn pv(x: &[f64]) -> ParamVector {
        ParamVector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn abs_hull_at_zero_is_full_interval() {
        let p = make_abs_problem(AbsDist::Rademacher);
        let pols: Vec<_> = [-1.0, 0.0, 1.0].iter().map(|g| SelectionPolicy::default().with_abs(*g).unwrap()).collect();
        let est = estimate_aumann(&p, &pv(&[0.0]), &AumannOptions::new(1, pols), RngSpec::new(0, 0)).unwrap();
        assert!(est.meta.exact);
        assert_eq!(est.interval(), Some((-1.0, 1.0)));
        let mut vals: Vec<f64> = est.points.iter().map(|x| x[0]).collect();
        vals.sort_by(f64::total_cmp);
        assert_eq!(vals, vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
    }

    #[test]
    fn smooth_point_gives_single_point() {
        let p = make_abs_problem(AbsDist::Rademacher);
        let opts = AumannOptions::new(100_000, default_policy_family()).mode(AumannMode::MonteCarlo);
        let est = estimate_aumann(&p, &pv(&[0.5]), &opts, RngSpec::new(3, 0)).unwrap();
        assert_eq!(est.points.len(), 1);
        assert!(est.points[0][0].abs() <= 4.0 * est.meta.std_error);
    }

    #[test]
    fn single_sample_single_policy() {
        let p = make_abs_problem(AbsDist::Uniform);
        let rng = RngSpec::new(8, 1);
        let opts = AumannOptions::new(1, vec![SelectionPolicy::default()]);
        let est = estimate_aumann(&p, &pv(&[0.3]), &opts, rng).unwrap();
        let s = p.sample_at(rng, 0);
        let v = p.value_and_selection(&[0.3], &s, &SelectionPolicy::default()).unwrap().1;
        assert_eq!(est.points, vec![pv(&v)]);
    }

    #[test]
    fn needs_a_policy() {
        let p = make_abs_problem(AbsDist::Uniform);
        assert!(estimate_aumann(&p, &pv(&[0.3]), &AumannOptions::new(10, vec![]), RngSpec::new(0, 0)).is_err());
        let opts = AumannOptions::new(10, vec![SelectionPolicy::default()]).mode(AumannMode::Exhaustive);
        assert!(estimate_aumann(&p, &pv(&[0.3]), &opts, RngSpec::new(0, 0)).is_err());
    }

    #[test]
    fn support_function_examples() {
        assert_eq!(support_function(&set(&[&[-1.0], &[1.0]]), &pv(&[1.0])).unwrap(), 1.0);
        assert_eq!(support_function(&set(&[&[1.0, 0.0], &[0.0, 1.0]]), &pv(&[1.0, 1.0])).unwrap(), 1.0);
        assert_eq!(support_function(&set(&[&[1.0]]), &pv(&[0.0])), Err(Error::ZeroDirection));
    }

    #[test]
    fn support_ignores_interior_points() {
        let with_mid = set(&[&[1.0, 0.0], &[0.0, 1.0], &[0.5, 0.5]]);
        let without = set(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let mut r = RngSpec::new(1, 0).rng();
        for _ in 0..100 {
            let q = pv(&[r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)]);
            assert_eq!(support_function(&with_mid, &q).unwrap(), support_function(&without, &q).unwrap());
        }
    }

    #[test]
    fn min_norm_examples() {
        let r = min_norm_point(&set(&[&[-1.0], &[1.0]]));
        assert_eq!(r.norm, 0.0);
        let r = min_norm_point(&set(&[&[1.0, 0.0], &[0.0, 1.0]]));
        assert!((r.point[0] - 0.5).abs() < 1e-15 && (r.point[1] - 0.5).abs() < 1e-15);
        assert!((r.norm - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(r.certificate >= -1e-9);
        let r = min_norm_point(&set(&[&[2.0, 1.0]]));
        assert_eq!(r.point, pv(&[2.0, 1.0]));
        // duplicated and collinear points
        let r = min_norm_point(&set(&[&[1.0, 1.0], &[1.0, 1.0], &[2.0, 2.0], &[3.0, 3.0]]));
        assert!((r.norm - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn set_csv() {
        let mut buf = Vec::new();
        set(&[&[1.0, 0.0], &[0.0, 1.0]]).write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("p_0,p_1\n"));
    }
}
