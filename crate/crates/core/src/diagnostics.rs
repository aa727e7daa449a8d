//! Statistical and analytical checks: criticality residuals, occupation
//! measures, chain-rule and interchange validation, semismoothness residuals
//! and noise extinction.
//!
//! Every check is read-only over trajectories and problems.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynamics::{FlowPath, NoiseDecomposition};
use crate::error::{Error, Result};
use crate::par;
use crate::problems::Problem;
use crate::setvalued::{estimate_aumann, min_norm_point, AumannOptions};
use crate::tape::{default_fd_step, SelectionPolicy};
use crate::types::{dot, ParamVector, RngSpec, SampleVector, ScheduleFlags, Trajectory};

/// Version tag written into every serialized report.
pub const SCHEMA_VERSION: u32 = 1;

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    NotApplicable,
}

impl Verdict {
    pub fn from_bool(ok: bool) -> Verdict {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn passed(self) -> bool {
        self == Verdict::Pass
    }
}

/// Samples with weights: the atoms of a finite distribution or a uniform MC batch.
fn weighted_samples(problem: &Problem, n_samples: usize, rng: RngSpec) -> Result<(Vec<SampleVector>, Vec<f64>, bool)> {
    match problem.atoms() {
        Some(atoms) => {
            let (s, w) = atoms.into_iter().unzip();
            Ok((s, w, true))
        }
        None if n_samples < 2 => Err(Error::InvalidSpec("at least two samples are needed".into())),
        None => {
            let w = vec![1.0 / n_samples as f64; n_samples];
            Ok((problem.draw(rng, n_samples), w, false))
        }
    }
}

/// Weighted mean and standard error of the mean (zero for exact atoms).
fn weighted_mean_se(values: &[f64], weights: &[f64], exact: bool) -> (f64, f64) {
    let mean: f64 = values.iter().zip(weights).map(|(v, w)| v * w).sum();
    if exact || values.len() < 2 {
        return (mean, 0.0);
    }
    let n = values.len() as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

// ---------------------------------------------------------------------------
// Criticality
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalityReport {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub w: ParamVector,
    /// Norm of the min-norm point of the estimated set-valued expectation.
    pub residual: f64,
    /// `4 * max per-sample selection norm / sqrt(n_samples)`.
    pub se_budget: f64,
    /// Distance from 0 to the closed-form Clarke subdifferential, when known.
    pub clarke_residual: Option<f64>,
    pub n_samples: usize,
    pub exact: bool,
}

impl CriticalityReport {
    pub fn within(&self, slack: f64) -> bool {
        self.residual <= self.se_budget + slack
    }
}

pub fn criticality_residual(
    problem: &Problem,
    w: &ParamVector,
    n_samples: usize,
    policies: &[SelectionPolicy],
    rng: RngSpec,
) -> Result<CriticalityReport> {
    if n_samples < 100 {
        return Err(Error::InvalidSpec(format!("criticality needs at least 100 samples, got {n_samples}")));
    }
    let set = estimate_aumann(problem, w, &AumannOptions::new(n_samples, policies.to_vec()), rng)?;
    let residual = min_norm_point(&set).norm;
    Ok(CriticalityReport {
        schema_version: SCHEMA_VERSION,
        w: w.clone(),
        residual,
        se_budget: 4.0 * set.meta.max_sample_norm / (n_samples as f64).sqrt(),
        clarke_residual: problem
            .closed_form
            .as_ref()
            .map(|c| c.clarke_subdifferential(w.as_slice()).distance_to_zero()),
        n_samples,
        exact: set.meta.exact,
    })
}

// ---------------------------------------------------------------------------
// Occupation measures
// ---------------------------------------------------------------------------

/// Mass threshold above which a center is flagged as an essential accumulation
/// candidate (when it holds at every checkpoint).
pub const ESSENTIAL_MASS: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationReport {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub radii: Vec<f64>,
    pub centers: Vec<ParamVector>,
    /// Record counts at which masses are evaluated (k/2, 3k/4, k).
    pub checkpoints: Vec<usize>,
    /// `masses[c][r][j]`: mass of ball `(centers[c], radii[r])` at checkpoint `j`.
    pub masses: Vec<Vec<Vec<f64>>>,
    /// `essential[c][r]`: mass >= threshold at every checkpoint.
    pub essential: Vec<Vec<bool>>,
    pub threshold: f64,
    /// Neighborhoods are restricted to closed balls around the reported centers.
    pub neighborhoods: String,
}

/// Step weight of each record: the algorithmic time until the next record.
fn record_weights(traj: &Trajectory) -> Vec<f64> {
    let taus: Vec<f64> = traj.records.iter().map(|r| r.tau).chain(std::iter::once(traj.final_tau)).collect();
    taus.windows(2).map(|w| w[1] - w[0]).collect()
}

/// `sum_{i<upto} alpha_i 1{w_i in B(c, r)} / sum_{i<upto} alpha_i` over records.
pub fn occupation_mass(traj: &Trajectory, center: &ParamVector, r: f64, upto: usize) -> f64 {
    let weights = record_weights(traj);
    let upto = upto.min(traj.len());
    let mut inside = 0.0;
    let mut total = 0.0;
    for (rec, w) in traj.records[..upto].iter().zip(&weights) {
        total += w;
        if rec.w.distance(center) <= r {
            inside += w;
        }
    }
    if total > 0.0 {
        inside / total
    } else {
        0.0
    }
}

/// Most clusters reported by [`occupation_measure`].
pub const MAX_CENTERS: usize = 16;
/// Cap on clusters opened during the leader pass; later outliers are dropped.
const MAX_LEADERS: usize = 4096;

pub fn occupation_measure(traj: &Trajectory, radii: &[f64]) -> Result<OccupationReport> {
    if traj.is_empty() {
        return Err(Error::InsufficientData("empty trajectory".into()));
    }
    if radii.is_empty() || radii.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
        return Err(Error::InvalidSpec("radii must be positive and finite".into()));
    }
    let weights = record_weights(traj);
    let half = traj.final_tau / 2.0;
    let cluster_r = radii.iter().copied().fold(f64::INFINITY, f64::min);

    // leader clustering of the late phase
    let mut leaders: Vec<(ParamVector, f64)> = Vec::new();
    for (rec, w) in traj.records.iter().zip(&weights) {
        if rec.tau < half {
            continue;
        }
        let n_leaders = leaders.len();
        match leaders.iter_mut().find(|(c, _)| c.distance(&rec.w) <= cluster_r) {
            Some(l) => l.1 += w,
            None if n_leaders < MAX_LEADERS => leaders.push((rec.w.clone(), *w)),
            None => {}
        }
    }
    if leaders.is_empty() {
        leaders.push((traj.records.last().unwrap().w.clone(), 0.0));
    }
    leaders.sort_by(|a, b| b.1.total_cmp(&a.1));
    leaders.truncate(MAX_CENTERS);
    let centers: Vec<ParamVector> = leaders.into_iter().map(|(c, _)| c).collect();

    let n = traj.len();
    let checkpoints = vec![n.div_ceil(2), (3 * n).div_ceil(4), n];
    let masses: Vec<Vec<Vec<f64>>> = centers
        .iter()
        .map(|c| radii.iter().map(|&r| checkpoints.iter().map(|&k| occupation_mass(traj, c, r, k)).collect()).collect())
        .collect();
    let essential =
        masses.iter().map(|per_r| per_r.iter().map(|m| m.iter().all(|&x| x >= ESSENTIAL_MASS)).collect()).collect();
    Ok(OccupationReport {
        schema_version: SCHEMA_VERSION,
        radii: radii.to_vec(),
        centers,
        checkpoints,
        masses,
        essential,
        threshold: ESSENTIAL_MASS,
        neighborhoods: "closed balls around late-phase cluster leaders".into(),
    })
}

// ---------------------------------------------------------------------------
// Chain rule along curves
// ---------------------------------------------------------------------------

/// Piecewise-affine curve on `[0, 1]` through `knots`, each segment taking
/// equal time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseAffine {
    pub knots: Vec<ParamVector>,
}

impl PiecewiseAffine {
    pub fn new(knots: Vec<ParamVector>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::InvalidSpec("a curve needs at least two knots".into()));
        }
        let p = knots[0].dim();
        if let Some(k) = knots.iter().find(|k| k.dim() != p) {
            return Err(Error::DimensionMismatch { what: "curve knot", expected: p, got: k.dim() });
        }
        Ok(PiecewiseAffine { knots })
    }

    pub fn segment(a: ParamVector, b: ParamVector) -> Result<Self> {
        Self::new(vec![a, b])
    }

    /// Start uniform in `[-half_width, half_width]^p`, then `n_segments`
    /// Gaussian steps of scale `step`.
    pub fn random(p: usize, n_segments: usize, half_width: f64, step: f64, rng: RngSpec) -> Self {
        let mut r = rng.rng();
        let mut cur: Vec<f64> = (0..p).map(|_| r.random_range(-half_width..=half_width)).collect();
        let mut knots = vec![ParamVector::new(cur.clone()).expect("finite")];
        for _ in 0..n_segments.max(1) {
            for c in cur.iter_mut() {
                *c += step * r.sample::<f64, _>(StandardNormal);
            }
            knots.push(ParamVector::new(cur.clone()).expect("finite"));
        }
        PiecewiseAffine { knots }
    }

    pub fn dim(&self) -> usize {
        self.knots[0].dim()
    }

    pub fn n_segments(&self) -> usize {
        self.knots.len() - 1
    }

    pub fn at(&self, t: f64) -> ParamVector {
        let m = self.n_segments();
        let x = (t.clamp(0.0, 1.0) * m as f64).min(m as f64);
        let j = (x.floor() as usize).min(m - 1);
        let u = x - j as f64;
        self.point(j, u)
    }

    /// Point at local parameter `u` in `[0, 1]` of segment `j`.
    pub fn point(&self, j: usize, u: f64) -> ParamVector {
        let (a, b) = (self.knots[j].as_slice(), self.knots[j + 1].as_slice());
        if u == 0.0 {
            return self.knots[j].clone();
        }
        if u == 1.0 {
            return self.knots[j + 1].clone();
        }
        ParamVector::new(a.iter().zip(b).map(|(x, y)| x + u * (y - x)).collect()).expect("finite")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRuleReport {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    /// Estimate of `J(gamma(1)) - J(gamma(0))`.
    pub lhs: f64,
    /// Trapezoid estimate of `int_0^1 <v(gamma(t)), gamma'(t)> dt`.
    pub rhs: f64,
    pub gap: f64,
    /// Standard error of the per-sample difference (zero on exact atoms).
    pub se: f64,
    pub tol: f64,
    /// Richardson estimate of the quadrature error (trapezoid at `n_quad` vs `n_quad / 2`).
    pub quadrature_error_estimate: f64,
    pub n_quad: usize,
    pub n_samples: usize,
    pub verdict: Verdict,
}

/// Fixed slack added to the statistical tolerance of the chain-rule check.
pub const CHAIN_RULE_SLACK: f64 = 1e-3;

/// Compares the increment of `J` along `curve` with the integral of the
/// averaged selection against the velocity. Samples are shared across all
/// quadrature nodes.
pub fn validate_chain_rule(
    problem: &Problem,
    curve: &PiecewiseAffine,
    n_quad: usize,
    n_samples: usize,
    policy: &SelectionPolicy,
    rng: RngSpec,
) -> Result<ChainRuleReport> {
    if n_quad < 100 {
        return Err(Error::InvalidSpec(format!("n_quad must be >= 100 per segment, got {n_quad}")));
    }
    if curve.dim() != problem.w_dim() {
        return Err(Error::DimensionMismatch { what: "curve", expected: problem.w_dim(), got: curve.dim() });
    }
    let n_quad = n_quad + n_quad % 2;
    let (samples, weights, exact) = weighted_samples(problem, n_samples, rng)?;
    let m = curve.n_segments();
    let deltas: Vec<Vec<f64>> = (0..m)
        .map(|j| curve.knots[j + 1].as_slice().iter().zip(curve.knots[j].as_slice()).map(|(b, a)| b - a).collect())
        .collect();

    // per sample: (increment, trapezoid at n_quad, trapezoid at n_quad / 2)
    let per_sample: Vec<(f64, f64, f64)> = par::try_map_indexed(samples.len(), |i| {
        let s = &samples[i];
        let first = curve.knots[0].as_slice();
        let last = curve.knots[m].as_slice();
        let increment = problem.value(last, s)? - problem.value(first, s)?;
        let h = 1.0 / n_quad as f64;
        let (mut fine, mut coarse) = (0.0, 0.0);
        for (j, delta) in deltas.iter().enumerate() {
            for q in 0..=n_quad {
                let u = q as f64 * h;
                let w = curve.point(j, u);
                let g = dot(&problem.value_and_selection(w.as_slice(), s, policy)?.1, delta);
                let end = q == 0 || q == n_quad;
                fine += if end { 0.5 * h * g } else { h * g };
                if q % 2 == 0 {
                    coarse += if end { h * g } else { 2.0 * h * g };
                }
            }
        }
        Ok::<_, Error>((increment, fine, coarse))
    })?;

    let lhs: f64 = per_sample.iter().zip(&weights).map(|((d, _, _), w)| d * w).sum();
    let rhs: f64 = per_sample.iter().zip(&weights).map(|((_, f, _), w)| f * w).sum();
    let rhs_coarse: f64 = per_sample.iter().zip(&weights).map(|((_, _, c), w)| c * w).sum();
    let diffs: Vec<f64> = per_sample.iter().map(|(d, f, _)| d - f).collect();
    let (_, se) = weighted_mean_se(&diffs, &weights, exact);
    let gap = (lhs - rhs).abs();
    let tol = CHAIN_RULE_SLACK + 4.0 * se;
    Ok(ChainRuleReport {
        schema_version: SCHEMA_VERSION,
        lhs,
        rhs,
        gap,
        se,
        tol,
        quadrature_error_estimate: (rhs - rhs_coarse) / 3.0,
        n_quad,
        n_samples: samples.len(),
        verdict: Verdict::from_bool(gap <= tol),
    })
}

// ---------------------------------------------------------------------------
// Interchange of derivative and expectation
// ---------------------------------------------------------------------------

/// Fixed slack for finite-difference bias in the interchange check.
pub const INTERCHANGE_SLACK: f64 = 1e-4;
/// Average one-sided slope disagreement above which `w` is declared too close
/// to the nonsmooth set.
pub const KINK_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterchangeReport {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    /// `<mean selection, q>`.
    pub lhs: f64,
    /// Central difference of the sample risk along `q`.
    pub rhs: f64,
    /// Standard error of the paired per-sample difference.
    pub se: f64,
    pub tol: f64,
    pub h: f64,
    pub n_samples: usize,
    pub verdict: Verdict,
}

pub fn interchange_check(
    problem: &Problem,
    w: &ParamVector,
    q: &ParamVector,
    n_samples: usize,
    policy: &SelectionPolicy,
    rng: RngSpec,
) -> Result<InterchangeReport> {
    if q.dim() != w.dim() || w.dim() != problem.w_dim() {
        return Err(Error::DimensionMismatch { what: "direction", expected: problem.w_dim(), got: q.dim() });
    }
    if q.norm() == 0.0 {
        return Err(Error::ZeroDirection);
    }
    let h = default_fd_step(w.as_slice()) / q.norm_inf();
    let plus = w.offset(h, q)?;
    let minus = w.offset(-h, q)?;
    let (samples, weights, exact) = weighted_samples(problem, n_samples, rng)?;
    // per sample: (<v, q>, central difference, one-sided disagreement)
    let per_sample: Vec<(f64, f64, f64)> = par::try_map_indexed(samples.len(), |i| {
        let s = &samples[i];
        let (f0, v) = problem.value_and_selection(w.as_slice(), s, policy)?;
        let fp = problem.value(plus.as_slice(), s)?;
        let fm = problem.value(minus.as_slice(), s)?;
        let right = (fp - f0) / h;
        let left = (f0 - fm) / h;
        Ok::<_, Error>((dot(&v, q.as_slice()), (fp - fm) / (2.0 * h), (right - left).abs()))
    })?;
    let kink_mass: f64 = per_sample
        .iter()
        .zip(&weights)
        .map(|((_, _, d), wt)| if *d > 1e-4 * (1.0 + q.norm()) { d * wt } else { 0.0 })
        .sum();
    if kink_mass > KINK_TOLERANCE {
        return Err(Error::KinkSuspected { gap: kink_mass });
    }
    let lhs: f64 = per_sample.iter().zip(&weights).map(|((a, _, _), wt)| a * wt).sum();
    let rhs: f64 = per_sample.iter().zip(&weights).map(|((_, b, _), wt)| b * wt).sum();
    let diffs: Vec<f64> = per_sample.iter().map(|(a, b, _)| a - b).collect();
    let (_, se) = weighted_mean_se(&diffs, &weights, exact);
    let tol = 4.0 * se + INTERCHANGE_SLACK;
    Ok(InterchangeReport {
        schema_version: SCHEMA_VERSION,
        lhs,
        rhs,
        se,
        tol,
        h,
        n_samples: samples.len(),
        verdict: Verdict::from_bool((lhs - rhs).abs() <= tol),
    })
}

// ---------------------------------------------------------------------------
// Semismoothness
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum SemismoothVerdict {
    Consistent,
    Violated { index: usize, y: f64, g: f64, residual: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemismoothnessReport {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub x: f64,
    /// `r_j = (f(y_j) - f(x) - g_j (y_j - x)) / |y_j - x|`.
    pub residuals: Vec<f64>,
    /// Largest `|r_j|` over the second half of the sequence.
    pub tail_max: f64,
    pub tol: f64,
    pub verdict: SemismoothVerdict,
}

/// Residuals of the semismoothness quotient along `approach = [(y_j, g_j)]`.
pub fn semismoothness_residual<F>(f: F, x: f64, approach: &[(f64, f64)], tol: f64) -> Result<SemismoothnessReport>
where
    F: Fn(f64) -> f64,
{
    if approach.is_empty() {
        return Err(Error::InsufficientData("empty approach sequence".into()));
    }
    let fx = f(x);
    let mut residuals = Vec::with_capacity(approach.len());
    for (j, &(y, g)) in approach.iter().enumerate() {
        if y == x {
            return Err(Error::InvalidSpec(format!("approach point {j} equals x")));
        }
        residuals.push((f(y) - fx - g * (y - x)) / (y - x).abs());
    }
    let tail = approach.len() / 2;
    let (idx, tail_max) = residuals[tail..]
        .iter()
        .enumerate()
        .map(|(i, r)| (tail + i, r.abs()))
        .fold((tail, 0.0f64), |best, cur| if cur.1 > best.1 { cur } else { best });
    let verdict = if tail_max <= tol {
        SemismoothVerdict::Consistent
    } else {
        let (y, g) = approach[idx];
        SemismoothVerdict::Violated { index: idx, y, g, residual: residuals[idx] }
    };
    Ok(SemismoothnessReport { schema_version: SCHEMA_VERSION, x, residuals, tail_max, tol, verdict })
}

// ---------------------------------------------------------------------------
// Noise extinction
// ---------------------------------------------------------------------------

/// Shortest decomposition accepted by [`noise_extinction_check`].
pub const MIN_EXTINCTION_LEN: usize = 10_000;
/// Window length for the windowed statistic.
pub const EXTINCTION_WINDOW: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtinctionStatistic {
    /// `sup_{m in [k, K]} ||S_m - S_k||`
    TailCauchy,
    /// `sup_{k <= j <= l(k, T)} ||sum_{i=k}^{j} alpha_i u_i||`
    Windowed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseExtinctionReport {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub statistic: ExtinctionStatistic,
    pub flags: ScheduleFlags,
    pub checkpoints: Vec<usize>,
    /// `stats[r][j]`: statistic of replication `r` at checkpoint `j`.
    pub stats: Vec<Vec<f64>>,
    pub decreasing: Vec<bool>,
    pub n_decreasing: usize,
    pub required: usize,
    pub verdict: Verdict,
}

/// Checks that the noise statistic strictly decreases across the checkpoints
/// `K/4, K/2, 3K/4` in at least 80% of the replications. The verdict is
/// `NotApplicable` when the schedule is neither square-summable nor
/// `o(1/log k)`; statistics are still reported.
pub fn noise_extinction_check(decomps: &[NoiseDecomposition], flags: ScheduleFlags) -> Result<NoiseExtinctionReport> {
    let k_len = decomps.iter().map(|d| d.len()).min().unwrap_or(0);
    if k_len < MIN_EXTINCTION_LEN {
        return Err(Error::InsufficientData(format!(
            "noise extinction needs at least {MIN_EXTINCTION_LEN} iterations, got {k_len}"
        )));
    }
    let statistic = if flags.square_summable || !flags.little_o_log {
        ExtinctionStatistic::TailCauchy
    } else {
        ExtinctionStatistic::Windowed
    };
    let checkpoints = vec![k_len / 4, k_len / 2, 3 * k_len / 4];
    let stats: Vec<Vec<f64>> = par::map_indexed(decomps.len(), |r| {
        let d = &decomps[r];
        checkpoints
            .iter()
            .map(|&k| match statistic {
                ExtinctionStatistic::TailCauchy => d.tail_sup(k),
                ExtinctionStatistic::Windowed => d.window_sup(k, EXTINCTION_WINDOW),
            })
            .collect()
    });
    let decreasing: Vec<bool> = stats.iter().map(|s| s.windows(2).all(|w| w[1] < w[0])).collect();
    let n_decreasing = decreasing.iter().filter(|&&b| b).count();
    let required = (4 * decomps.len()).div_ceil(5);
    let applicable = flags.square_summable || (flags.little_o_log && flags.sum_divergent);
    let verdict = if applicable { Verdict::from_bool(n_decreasing >= required) } else { Verdict::NotApplicable };
    Ok(NoiseExtinctionReport {
        schema_version: SCHEMA_VERSION,
        statistic,
        flags,
        checkpoints,
        stats,
        decreasing,
        n_decreasing,
        required,
        verdict,
    })
}

// ---------------------------------------------------------------------------
// Risk along paths
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovReport {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub risks: Vec<f64>,
    pub ses: Vec<f64>,
    /// Largest `J(t_{i+1}) - J(t_i) - k_se * se_{i+1}` over the grid (<= 0 when decreasing).
    pub worst_excess: f64,
    pub violations: usize,
    pub k_se: f64,
    pub verdict: Verdict,
}

/// Risk along a flow path is nonincreasing up to `k_se` standard errors at
/// every grid step.
pub fn lyapunov_check(path: &FlowPath, k_se: f64) -> Result<LyapunovReport> {
    if path.risk.len() < 2 {
        return Err(Error::InsufficientData("flow path carries no risk estimates".into()));
    }
    let mut worst = f64::NEG_INFINITY;
    let mut violations = 0;
    for w in path.risk.windows(2) {
        let excess = w[1].mean - w[0].mean - k_se * w[1].se.max(w[0].se);
        worst = worst.max(excess);
        if excess > 0.0 {
            violations += 1;
        }
    }
    Ok(LyapunovReport {
        schema_version: SCHEMA_VERSION,
        risks: path.risk.iter().map(|r| r.mean).collect(),
        ses: path.risk.iter().map(|r| r.se).collect(),
        worst_excess: worst,
        violations,
        k_se,
        verdict: Verdict::from_bool(violations == 0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OscillationReport {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub ks: Vec<u64>,
    pub risks: Vec<f64>,
    /// `max - min` of the risk estimates.
    pub oscillation: f64,
    /// Largest standard error among the estimates.
    pub se: f64,
    pub k_se: f64,
    pub verdict: Verdict,
}

/// Risk at `n_points` iterates spread over the final `fraction` of the
/// records, all estimated on one common batch of `n_eval` samples.
pub fn risk_oscillation(
    problem: &Problem,
    traj: &Trajectory,
    fraction: f64,
    n_points: usize,
    n_eval: usize,
    k_se: f64,
    rng: RngSpec,
) -> Result<OscillationReport> {
    if traj.is_empty() || n_points < 2 || n_eval < 2 {
        return Err(Error::InsufficientData("oscillation needs records, >= 2 points and >= 2 samples".into()));
    }
    let iterates: Vec<(u64, f64, &ParamVector)> = traj.iterates().collect();
    let n = iterates.len();
    let start = ((1.0 - fraction.clamp(0.0, 1.0)) * (n - 1) as f64).floor() as usize;
    let idx: Vec<usize> = (0..n_points)
        .map(|j| start + ((n - 1 - start) as f64 * j as f64 / (n_points - 1) as f64).round() as usize)
        .collect();
    let batch = problem.draw(rng, n_eval);
    let mut ks = Vec::with_capacity(n_points);
    let mut risks = Vec::with_capacity(n_points);
    let mut se = 0.0f64;
    for &i in &idx {
        let (k, _, w) = iterates[i];
        let r = problem.risk_on(w.as_slice(), &batch)?;
        ks.push(k);
        risks.push(r.mean);
        se = se.max(r.se);
    }
    let hi = risks.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = risks.iter().copied().fold(f64::INFINITY, f64::min);
    let oscillation = hi - lo;
    Ok(OscillationReport {
        schema_version: SCHEMA_VERSION,
        ks,
        risks,
        oscillation,
        se,
        k_se,
        verdict: Verdict::from_bool(oscillation <= k_se * se),
    })
}
