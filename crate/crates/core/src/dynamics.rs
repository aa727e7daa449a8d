//! The subgradient sampling recursion, its martingale-noise decomposition,
//! the Euler discretization of the differential inclusion `w' in -D_J(w)`
//! and the affine interpolation of iterates on the `sum alpha` clock.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::problems::{McEstimate, Problem};
use crate::setvalued::{default_policy_family, estimate_aumann, min_norm_point, AumannOptions};
use crate::tape::SelectionPolicy;
use crate::types::{check_finite, fmt_f64, norm, ParamVector, Record, RngSpec, RunStatus, StepSchedule, Trajectory};

/// Iterates with a larger norm stop the run with [`RunStatus::Diverged`].
pub const DIVERGENCE_NORM: f64 = 1e8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schedule: StepSchedule,
    pub w0: ParamVector,
    pub n_iters: u64,
    #[serde(default)]
    pub policy: SelectionPolicy,
    pub rng: RngSpec,
    #[serde(default = "one")]
    pub record_every: u64,
}

fn one() -> u64 {
    1
}

impl RunConfig {
    pub fn new(schedule: StepSchedule, w0: ParamVector, n_iters: u64, rng: RngSpec) -> Self {
        RunConfig { schedule, w0, n_iters, policy: SelectionPolicy::default(), rng, record_every: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_iters == 0 {
            return Err(Error::InvalidSpec("n_iters must be >= 1".into()));
        }
        if self.record_every == 0 {
            return Err(Error::InvalidSpec("record_every must be >= 1".into()));
        }
        if let Some(len) = self.schedule.defined_len() {
            if (len as u64) < self.n_iters {
                return Err(Error::InvalidSpec(format!(
                    "custom schedule has {len} terms but the run needs {}",
                    self.n_iters
                )));
            }
        }
        self.policy.validate()
    }
}

/// Runs `w_{k+1} = w_k - alpha_k v(w_k, xi_k)` where `xi_k` is sample `k` of
/// `cfg.rng` and `v` is the oracle selection under `cfg.policy`.
pub fn run_sgd(problem: &Problem, cfg: &RunConfig) -> Result<Trajectory> {
    cfg.validate()?;
    if cfg.w0.dim() != problem.w_dim() {
        return Err(Error::DimensionMismatch { what: "w0", expected: problem.w_dim(), got: cfg.w0.dim() });
    }
    let capacity = (cfg.n_iters / cfg.record_every).min(1 << 24) as usize + 1;
    let mut records = Vec::with_capacity(capacity);
    let mut w = cfg.w0.clone();
    let mut tau = 0.0;
    let mut status = RunStatus::Completed;
    let mut k = 0;
    while k < cfg.n_iters {
        let alpha = cfg.schedule.alpha(k);
        let s = problem.sample_at(cfg.rng, k);
        let (loss, v) = problem.value_and_selection(w.as_slice(), &s, &cfg.policy)?;
        let v = ParamVector::new(v)?;
        let next = w.step(alpha, &v);
        if k % cfg.record_every == 0 {
            records.push(Record { k, w: w.clone(), alpha, sample_index: k, v: v.clone(), loss_sample: loss, tau });
        }
        tau += alpha;
        k += 1;
        match next {
            Ok(n) if n.norm() <= DIVERGENCE_NORM => w = n,
            Ok(n) => {
                status = RunStatus::Diverged { k, norm: n.norm() };
                w = n;
                break;
            }
            Err(_) => {
                // overflow: keep the last finite iterate
                status = RunStatus::Diverged { k, norm: f64::INFINITY };
                break;
            }
        }
    }
    Ok(Trajectory { records, final_k: k, final_w: w, final_tau: tau, status })
}

/// Runs independent replications (streams `0..n` of `base`) in parallel.
pub fn run_replications(
    problem: &Problem,
    cfg: &RunConfig,
    base: RngSpec,
    n: usize,
    w0: impl Fn(usize) -> ParamVector + Sync + Send,
) -> Result<Vec<Trajectory>> {
    par::try_map_indexed(n, |r| {
        let mut c = cfg.clone();
        c.rng = base.substream(r as u64);
        c.w0 = w0(r);
        run_sgd(problem, &c)
    })
}

/// `a_k = E[v(w_k, xi) | w_k]`, `u_k = v_k - a_k` and the partial sums
/// `S_m = sum_{k<=m} alpha_k u_k`, stored row-major (`len x dim`).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDecomposition {
    pub dim: usize,
    pub alphas: Vec<f64>,
    pub exact: bool,
    a: Vec<f64>,
    u: Vec<f64>,
    sums: Vec<f64>,
}

impl NoiseDecomposition {
    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    pub fn a(&self, k: usize) -> &[f64] {
        &self.a[k * self.dim..(k + 1) * self.dim]
    }

    pub fn u(&self, k: usize) -> &[f64] {
        &self.u[k * self.dim..(k + 1) * self.dim]
    }

    pub fn partial_sum(&self, m: usize) -> &[f64] {
        &self.sums[m * self.dim..(m + 1) * self.dim]
    }

    /// `sup_{m in [k, K)} ||S_m - S_k||`.
    pub fn tail_sup(&self, k: usize) -> f64 {
        let base = self.partial_sum(k);
        (k..self.len())
            .map(|m| {
                let s = self.partial_sum(m);
                s.iter().zip(base).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
            })
            .fold(0.0, f64::max)
    }

    /// `sup_{k <= j <= l(k, T)} ||sum_{i=k}^{j} alpha_i u_i||` where `l(k, T)`
    /// is the last index whose cumulative step from `k` stays within `T`.
    pub fn window_sup(&self, k: usize, horizon: f64) -> f64 {
        let base: Vec<f64> = if k == 0 { vec![0.0; self.dim] } else { self.partial_sum(k - 1).to_vec() };
        let mut elapsed = 0.0;
        let mut best = 0.0f64;
        for j in k..self.len() {
            elapsed += self.alphas[j];
            if elapsed > horizon {
                break;
            }
            let s = self.partial_sum(j);
            best = best.max(s.iter().zip(&base).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt());
        }
        best
    }
}

/// Splits the applied selections of a dense trajectory into drift and noise.
/// On finite distributions the drift is exact; otherwise it is averaged over
/// `n_mc` fresh samples per iteration drawn from `rng`.
pub fn noise_decomposition(
    traj: &Trajectory,
    problem: &Problem,
    policy: &SelectionPolicy,
    n_mc: usize,
    rng: RngSpec,
) -> Result<NoiseDecomposition> {
    if !traj.is_dense() {
        return Err(Error::InvalidSpec("noise decomposition needs every iteration recorded".into()));
    }
    let p = traj.dim();
    let atoms = problem.atoms();
    if atoms.is_none() && n_mc == 0 {
        return Err(Error::InvalidSpec("n_mc must be >= 1 for continuous distributions".into()));
    }
    let drifts: Vec<Vec<f64>> = par::try_map_indexed(traj.len(), |k| {
        let w = traj.records[k].w.as_slice();
        let mut acc = vec![0.0; p];
        match &atoms {
            Some(atoms) => {
                for (s, weight) in atoms {
                    let v = problem.value_and_selection(w, s, policy)?.1;
                    for (a, x) in acc.iter_mut().zip(&v) {
                        *a += weight * x;
                    }
                }
            }
            None => {
                for j in 0..n_mc {
                    let s = problem.sample_at(rng, (k * n_mc + j) as u64);
                    let v = problem.value_and_selection(w, &s, policy)?.1;
                    for (a, x) in acc.iter_mut().zip(&v) {
                        *a += x;
                    }
                }
                acc.iter_mut().for_each(|a| *a /= n_mc as f64);
            }
        }
        Ok::<_, Error>(acc)
    })?;

    let n = traj.len();
    let mut a = Vec::with_capacity(n * p);
    let mut u = Vec::with_capacity(n * p);
    let mut sums = Vec::with_capacity(n * p);
    let mut running = vec![0.0; p];
    let mut alphas = Vec::with_capacity(n);
    for (rec, drift) in traj.records.iter().zip(drifts) {
        for j in 0..p {
            let noise = rec.v[j] - drift[j];
            running[j] += rec.alpha * noise;
            a.push(drift[j]);
            u.push(noise);
        }
        sums.extend_from_slice(&running);
        alphas.push(rec.alpha);
    }
    Ok(NoiseDecomposition { dim: p, alphas, exact: atoms.is_some(), a, u, sums })
}

// ---------------------------------------------------------------------------
// Differential-inclusion flow
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldMode {
    /// Min-norm element of the estimated Aumann set at `w_t`.
    MinNormSelection {
        n_samples: usize,
        #[serde(default = "default_policy_family")]
        policies: Vec<SelectionPolicy>,
    },
    /// Average selection of a single policy.
    PolicyAverage {
        n_samples: usize,
        #[serde(default)]
        policy: SelectionPolicy,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub w0: ParamVector,
    pub horizon: f64,
    pub euler_dt: f64,
    pub field: FieldMode,
    /// Samples in the (fixed) batch used to track the risk along the path; 0 disables it.
    #[serde(default)]
    pub n_eval: usize,
    pub rng: RngSpec,
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.euler_dt > 0.0 && self.euler_dt.is_finite()) {
            return Err(Error::InvalidSpec(format!("euler_dt must be positive, got {}", self.euler_dt)));
        }
        if !(self.horizon >= self.euler_dt && self.horizon.is_finite()) {
            return Err(Error::InvalidSpec(format!("horizon {} is shorter than euler_dt", self.horizon)));
        }
        match &self.field {
            FieldMode::MinNormSelection { n_samples, policies } => {
                if *n_samples == 0 || policies.is_empty() {
                    return Err(Error::InvalidSpec("min-norm field needs samples and policies".into()));
                }
            }
            FieldMode::PolicyAverage { n_samples, policy } => {
                policy.validate()?;
                if *n_samples == 0 {
                    return Err(Error::InvalidSpec("policy-average field needs samples".into()));
                }
            }
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.horizon / self.euler_dt).round().max(1.0) as usize
    }
}

/// Euler path: grid times, points, the field applied at each point (the last
/// point carries a zero field) and optional risk estimates on a fixed batch.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowPath {
    pub times: Vec<f64>,
    pub points: Vec<ParamVector>,
    pub fields: Vec<ParamVector>,
    pub risk: Vec<McEstimate>,
    pub dt: f64,
}

impl FlowPath {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn last(&self) -> &ParamVector {
        self.points.last().expect("flow path has at least one point")
    }

    /// Linear interpolation between grid points.
    pub fn at(&self, t: f64) -> ParamVector {
        interpolate(&self.times, &self.points, t)
    }

    pub fn csv_header(p: usize) -> Vec<String> {
        let mut h: Vec<String> =
            ["k", "t", "alpha", "sample_index", "loss_sample"].iter().map(|s| s.to_string()).collect();
        h.extend((0..p).map(|i| format!("w_{i}")));
        h.extend((0..p).map(|i| format!("v_{i}")));
        h
    }

    /// Flow rows in the trajectory layout plus a `t` column. `alpha` is the
    /// Euler step, `sample_index` is -1 (batch field) and `loss_sample` holds
    /// the tracked risk (empty when not tracked).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let p = self.points[0].dim();
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(Self::csv_header(p))?;
        for (i, (w, g)) in self.points.iter().zip(&self.fields).enumerate() {
            let alpha = if i + 1 < self.points.len() { self.dt } else { 0.0 };
            let mut row = vec![
                i.to_string(),
                fmt_f64(self.times[i]),
                fmt_f64(alpha),
                "-1".to_string(),
                self.risk.get(i).map(|r| fmt_f64(r.mean)).unwrap_or_default(),
            ];
            row.extend(w.as_slice().iter().map(|x| fmt_f64(*x)));
            row.extend(g.as_slice().iter().map(|x| fmt_f64(*x)));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Consecutive Euler steps whose risk increase exceeds the budget before the
/// flow is declared too coarse.
pub const STEP_TOO_LARGE_STREAK: usize = 3;

/// Field value `g(w)` for the configured mode. Randomness is a fixed batch,
/// so the field is a deterministic function of `w`.
pub fn flow_field(problem: &Problem, w: &ParamVector, field: &FieldMode, rng: RngSpec) -> Result<ParamVector> {
    match field {
        FieldMode::MinNormSelection { n_samples, policies } => {
            let set = estimate_aumann(problem, w, &AumannOptions::new(*n_samples, policies.clone()), rng)?;
            Ok(min_norm_point(&set).point)
        }
        FieldMode::PolicyAverage { n_samples, policy } => {
            let p = w.dim();
            let sum = match problem.atoms() {
                Some(atoms) => {
                    let mut acc = vec![0.0; p];
                    for (s, weight) in &atoms {
                        let v = problem.value_and_selection(w.as_slice(), s, policy)?.1;
                        acc.iter_mut().zip(&v).for_each(|(a, x)| *a += weight * x);
                    }
                    acc
                }
                None => {
                    let mut acc = par::try_sum_vectors::<Error, _>(*n_samples, p, |i, acc| {
                        let s = problem.sample_at(rng, i as u64);
                        let v = problem.value_and_selection(w.as_slice(), &s, policy)?.1;
                        acc.iter_mut().zip(&v).for_each(|(a, x)| *a += x);
                        Ok(())
                    })?;
                    acc.iter_mut().for_each(|a| *a /= *n_samples as f64);
                    acc
                }
            };
            ParamVector::new(sum)
        }
    }
}

/// Explicit Euler scheme `w_{t+dt} = w_t - dt g(w_t)`.
pub fn run_flow(problem: &Problem, cfg: &FlowConfig) -> Result<FlowPath> {
    cfg.validate()?;
    if cfg.w0.dim() != problem.w_dim() {
        return Err(Error::DimensionMismatch { what: "w0", expected: problem.w_dim(), got: cfg.w0.dim() });
    }
    let field_rng = cfg.rng.substream(0xF1E1D);
    let eval_samples = if cfg.n_eval > 0 { problem.draw(cfg.rng.substream(0xE7A1), cfg.n_eval) } else { Vec::new() };
    let risk_at = |w: &ParamVector| -> Result<Option<McEstimate>> {
        if eval_samples.is_empty() {
            Ok(None)
        } else {
            problem.risk_on(w.as_slice(), &eval_samples).map(Some)
        }
    };

    let n_steps = cfg.n_steps();
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut points = Vec::with_capacity(n_steps + 1);
    let mut fields = Vec::with_capacity(n_steps + 1);
    let mut risk = Vec::new();
    let mut w = cfg.w0.clone();
    let mut streak = 0;
    if let Some(r) = risk_at(&w)? {
        risk.push(r);
    }
    for i in 0..n_steps {
        let g = flow_field(problem, &w, &cfg.field, field_rng)?;
        let next = w.step(cfg.euler_dt, &g)?;
        times.push(i as f64 * cfg.euler_dt);
        points.push(w);
        fields.push(g);
        if let Some(r) = risk_at(&next)? {
            let prev = risk.last().expect("risk tracked from the start");
            if r.mean - prev.mean > 10.0 * r.se.max(prev.se) {
                streak += 1;
                if streak >= STEP_TOO_LARGE_STREAK {
                    return Err(Error::StepTooLarge { t: (i + 1) as f64 * cfg.euler_dt, count: streak });
                }
            } else {
                streak = 0;
            }
            risk.push(r);
        }
        w = next;
    }
    times.push(n_steps as f64 * cfg.euler_dt);
    fields.push(ParamVector::zeros(w.dim()));
    points.push(w);
    Ok(FlowPath { times, points, fields, risk, dt: cfg.euler_dt })
}

// ---------------------------------------------------------------------------
// Affine interpolation
// ---------------------------------------------------------------------------

fn interpolate(knots: &[f64], values: &[ParamVector], t: f64) -> ParamVector {
    if t <= knots[0] {
        return values[0].clone();
    }
    let last = knots.len() - 1;
    if t >= knots[last] {
        return values[last].clone();
    }
    // largest i with knots[i] <= t
    let i = knots.partition_point(|&x| x <= t) - 1;
    if knots[i] == t {
        return values[i].clone();
    }
    let lam = (t - knots[i]) / (knots[i + 1] - knots[i]);
    let (a, b) = (values[i].as_slice(), values[i + 1].as_slice());
    ParamVector::new(a.iter().zip(b).map(|(x, y)| x + lam * (y - x)).collect())
        .expect("interpolation of finite iterates")
}

/// Piecewise-affine path through the iterates with knots at `tau_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Interpolation {
    pub knots: Vec<f64>,
    pub values: Vec<ParamVector>,
}

impl Interpolation {
    /// Value at time `t`; clamped to the end points outside `[0, tau_K]`.
    pub fn at(&self, t: f64) -> ParamVector {
        interpolate(&self.knots, &self.values, t)
    }

    pub fn end_time(&self) -> f64 {
        *self.knots.last().expect("nonempty")
    }
}

pub fn affine_interpolation(traj: &Trajectory) -> Result<Interpolation> {
    if traj.is_empty() {
        return Err(Error::InsufficientData("empty trajectory".into()));
    }
    let mut knots = Vec::with_capacity(traj.len() + 1);
    let mut values = Vec::with_capacity(traj.len() + 1);
    for (_, tau, w) in traj.iterates() {
        if let Some(&prev) = knots.last() {
            if tau <= prev {
                return Err(Error::InvalidSpec(format!("non-increasing algorithmic time {tau} after {prev}")));
            }
        }
        knots.push(tau);
        values.push(w.clone());
    }
    Ok(Interpolation { knots, values })
}

/// `sup_{t in [tau_k, tau_k + window]} ||interp(t) - flow_k(t - tau_k)||` where
/// `flow_k` is the Euler flow restarted at the `start`-th record. Evaluated at
/// every flow grid point and every knot inside the window.
pub fn interpolation_gap(
    problem: &Problem,
    traj: &Trajectory,
    start: usize,
    window: f64,
    euler_dt: f64,
    field: &FieldMode,
    rng: RngSpec,
) -> Result<f64> {
    let interp = affine_interpolation(traj)?;
    let rec = traj.records.get(start).ok_or_else(|| Error::InvalidSpec(format!("record {start} out of range")))?;
    if rec.tau + window > interp.end_time() {
        return Err(Error::InsufficientData("window extends past the trajectory".into()));
    }
    let cfg = FlowConfig { w0: rec.w.clone(), horizon: window, euler_dt, field: field.clone(), n_eval: 0, rng };
    let flow = run_flow(problem, &cfg)?;
    let dist = |t_rel: f64| -> f64 {
        let a = interp.at(rec.tau + t_rel);
        let b = flow.at(t_rel);
        norm(&a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x - y).collect::<Vec<_>>())
    };
    let mut gap = 0.0f64;
    for &t in &flow.times {
        gap = gap.max(dist(t));
    }
    for &t in interp.knots.iter().filter(|&&t| t >= rec.tau && t <= rec.tau + window) {
        gap = gap.max(dist(t - rec.tau));
    }
    check_finite(&[gap], "interpolation gap")?;
    Ok(gap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{lookup, make_abs_problem, make_quadratic_problem, AbsDist};
    use crate::types::ScheduleFamily;

    fn pv(x: &[f64]) -> ParamVector {
        ParamVector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn abs_stuck_at_zero() {
        let p = make_abs_problem(AbsDist::Rademacher);
        for sched in [StepSchedule::power_law(1.0, 0.6).unwrap(), StepSchedule::constant(0.3).unwrap()] {
            let t = run_sgd(&p, &RunConfig::new(sched, pv(&[0.0]), 1000, RngSpec::new(1, 0))).unwrap();
            assert!(t.records.iter().all(|r| r.w[0] == 0.0 && r.v[0] == 0.0));
            assert_eq!(t.final_w[0], 0.0);
            assert_eq!(t.verify_recursion(), Ok(()));
        }
    }

    #[test]
    fn abs_steps_are_exactly_alpha_off_kink() {
        let p = make_abs_problem(AbsDist::Rademacher);
        let sched = StepSchedule::power_law(0.1, 1.0).unwrap();
        let t = run_sgd(&p, &RunConfig::new(sched, pv(&[1.0]), 5000, RngSpec::new(2, 0))).unwrap();
        let ws: Vec<f64> = t.iterates().map(|(_, _, w)| w[0]).collect();
        for (k, r) in t.records.iter().enumerate() {
            if r.w[0] != 0.0 {
                assert_eq!(r.v[0].abs(), 1.0);
                assert_eq!(ws[k + 1], ws[k] - r.alpha * r.v[0]);
                assert!(((ws[k + 1] - ws[k]).abs() - r.alpha).abs() <= 1e-15 * (1.0 + ws[k].abs()));
            }
        }
        assert_eq!(t.verify_recursion(), Ok(()));
    }

    #[test]
    fn teacher_start_is_fixed() {
        let p = lookup("teacher_student").unwrap();
        let w0 = crate::problems::teacher_params(&p).unwrap();
        let cfg = RunConfig::new(StepSchedule::constant(0.1).unwrap(), w0.clone(), 500, RngSpec::new(3, 0));
        let t = run_sgd(&p, &cfg).unwrap();
        assert_eq!(t.final_w, w0);
        assert!(t.records.iter().all(|r| r.v.norm() == 0.0));
    }

    #[test]
    fn divergence_is_reported() {
        let p = make_quadratic_problem(1, 0.0).unwrap();
        let cfg = RunConfig::new(StepSchedule::constant(3.0).unwrap(), pv(&[1.0]), 1000, RngSpec::new(0, 0));
        let t = run_sgd(&p, &cfg).unwrap();
        assert!(matches!(t.status, RunStatus::Diverged { .. }));
        assert!(t.final_k < 1000);
        assert_eq!(t.verify_recursion(), Ok(()));
    }

    #[test]
    fn config_validation() {
        let p = make_abs_problem(AbsDist::Rademacher);
        let mut cfg = RunConfig::new(StepSchedule::constant(0.1).unwrap(), pv(&[0.0]), 0, RngSpec::new(0, 0));
        assert!(run_sgd(&p, &cfg).is_err());
        cfg.n_iters = 10;
        cfg.record_every = 0;
        assert!(run_sgd(&p, &cfg).is_err());
        cfg.record_every = 1;
        cfg.schedule = crate::types::classify_schedule(ScheduleFamily::Custom {
            terms: vec![0.1; 5],
            flags: crate::types::ScheduleFlags { sum_divergent: true, square_summable: false, little_o_log: false },
        })
        .unwrap();
        assert!(run_sgd(&p, &cfg).is_err());
        cfg.n_iters = 5;
        assert!(run_sgd(&p, &cfg).is_ok());
    }

    #[test]
    fn thinned_records_keep_recursion_checkable() {
        let p = make_abs_problem(AbsDist::Uniform);
        let mut cfg = RunConfig::new(StepSchedule::power_law(0.5, 0.7).unwrap(), pv(&[0.7]), 1000, RngSpec::new(4, 0));
        cfg.record_every = 10;
        let t = run_sgd(&p, &cfg).unwrap();
        assert_eq!(t.len(), 100);
        assert!(!t.is_dense());
        let dense = run_sgd(&p, &RunConfig { record_every: 1, ..cfg }).unwrap();
        assert_eq!(dense.final_w, t.final_w);
        assert_eq!(dense.final_tau, t.final_tau);
    }

    #[test]
    fn decomposition_on_atoms() {
        let p = make_abs_problem(AbsDist::Rademacher);
        let cfg = RunConfig::new(StepSchedule::power_law(1.0, 1.0).unwrap(), pv(&[1.0]), 200, RngSpec::new(5, 0));
        let t = run_sgd(&p, &cfg).unwrap();
        let d = noise_decomposition(&t, &p, &SelectionPolicy::default(), 0, RngSpec::new(0, 0)).unwrap();
        assert!(d.exact);
        for k in 0..d.len() {
            assert_eq!(d.a(k), &[0.0]);
            if t.records[k].w[0] != 0.0 {
                assert_eq!(d.u(k)[0].abs(), 1.0);
            }
        }
        let mut s = 0.0;
        for k in 0..d.len() {
            s += d.alphas[k] * d.u(k)[0];
            assert_eq!(d.partial_sum(k)[0], s);
        }
    }

    #[test]
    fn deterministic_problem_has_no_noise() {
        let p = make_quadratic_problem(2, 0.0).unwrap();
        let cfg = RunConfig::new(StepSchedule::power_law(0.5, 1.0).unwrap(), pv(&[1.0, -2.0]), 300, RngSpec::new(6, 0));
        let t = run_sgd(&p, &cfg).unwrap();
        let d = noise_decomposition(&t, &p, &SelectionPolicy::default(), 0, RngSpec::new(0, 0)).unwrap();
        assert!((0..d.len()).all(|m| d.partial_sum(m) == [0.0, 0.0]));
        assert_eq!(d.tail_sup(0), 0.0);
    }

    #[test]
    fn decomposition_requires_dense_records() {
        let p = make_abs_problem(AbsDist::Rademacher);
        let mut cfg = RunConfig::new(StepSchedule::constant(0.1).unwrap(), pv(&[1.0]), 100, RngSpec::new(5, 0));
        cfg.record_every = 2;
        let t = run_sgd(&p, &cfg).unwrap();
        assert!(noise_decomposition(&t, &p, &SelectionPolicy::default(), 0, RngSpec::new(0, 0)).is_err());
    }

    #[test]
    fn quadratic_flow_matches_exponential() {
        let p = lookup("quadratic_deterministic").unwrap();
        let w0 = pv(&[1.0, -0.5]);
        let cfg = FlowConfig {
            w0: w0.clone(),
            horizon: 1.0,
            euler_dt: 1e-3,
            field: FieldMode::MinNormSelection { n_samples: 1, policies: default_policy_family() },
            n_eval: 0,
            rng: RngSpec::new(0, 0),
        };
        let path = run_flow(&p, &cfg).unwrap();
        let exact = w0.scale((-1.0f64).exp()).unwrap();
        let err = path.last().distance(&exact) / exact.norm();
        assert!(err <= 5e-3, "relative error {err}");
    }

    #[test]
    fn abs_flow_stays_at_zero() {
        let p = make_abs_problem(AbsDist::Rademacher);
        let cfg = FlowConfig {
            w0: pv(&[0.0]),
            horizon: 1.0,
            euler_dt: 0.01,
            field: FieldMode::MinNormSelection { n_samples: 1, policies: default_policy_family() },
            n_eval: 0,
            rng: RngSpec::new(0, 0),
        };
        let path = run_flow(&p, &cfg).unwrap();
        assert!(path.points.iter().all(|w| w[0].to_bits() == 0.0f64.to_bits()));
    }

    #[test]
    fn flow_config_validation() {
        let p = make_abs_problem(AbsDist::Rademacher);
        let mut cfg = FlowConfig {
            w0: pv(&[0.0]),
            horizon: 1.0,
            euler_dt: 0.0,
            field: FieldMode::PolicyAverage { n_samples: 10, policy: SelectionPolicy::default() },
            n_eval: 0,
            rng: RngSpec::new(0, 0),
        };
        assert!(run_flow(&p, &cfg).is_err());
        cfg.euler_dt = 2.0;
        assert!(run_flow(&p, &cfg).is_err());
    }

    #[test]
    fn flow_with_huge_step_is_rejected() {
        let p = lookup("quadratic").unwrap();
        let cfg = FlowConfig {
            w0: pv(&[1.0, 1.0]),
            horizon: 10.0,
            euler_dt: 3.0,
            field: FieldMode::PolicyAverage { n_samples: 1, policy: SelectionPolicy::default() },
            n_eval: 1000,
            rng: RngSpec::new(0, 0),
        };
        assert!(matches!(run_flow(&p, &cfg), Err(Error::StepTooLarge { .. })));
    }

    #[test]
    fn interpolation_examples() {
        let traj = Trajectory {
            records: vec![Record {
                k: 0,
                w: pv(&[0.0]),
                alpha: 1.0,
                sample_index: 0,
                v: pv(&[-1.0]),
                loss_sample: 0.0,
                tau: 0.0,
            }],
            final_k: 1,
            final_w: pv(&[1.0]),
            final_tau: 1.0,
            status: RunStatus::Completed,
        };
        let interp = affine_interpolation(&traj).unwrap();
        assert_eq!(interp.at(0.5), pv(&[0.5]));

        let p = make_abs_problem(AbsDist::Uniform);
        let t = run_sgd(
            &p,
            &RunConfig::new(StepSchedule::power_law(0.3, 0.8).unwrap(), pv(&[0.4]), 500, RngSpec::new(9, 0)),
        )
        .unwrap();
        let interp = affine_interpolation(&t).unwrap();
        for r in &t.records {
            assert_eq!(interp.at(r.tau), r.w);
        }
        assert_eq!(interp.at(t.final_tau), t.final_w);
    }

    #[test]
    fn flow_csv_has_time_column() {
        let p = lookup("quadratic_deterministic").unwrap();
        let cfg = FlowConfig {
            w0: pv(&[1.0, 0.0]),
            horizon: 0.05,
            euler_dt: 0.01,
            field: FieldMode::PolicyAverage { n_samples: 1, policy: SelectionPolicy::default() },
            n_eval: 1,
            rng: RngSpec::new(0, 0),
        };
        let path = run_flow(&p, &cfg).unwrap();
        let mut buf = Vec::new();
        path.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("k,t,alpha,sample_index,loss_sample,w_0,w_1,v_0,v_1\n"));
        assert_eq!(text.lines().count(), 7);
    }
}
