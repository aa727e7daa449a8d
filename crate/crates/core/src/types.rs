//! Shared numeric and bookkeeping types: parameter vectors, step-size
//! schedules, reproducible random streams and SGD trajectories.

use std::io::{Read, Write};
use std::ops::Index;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Raw sample drawn from a distribution. May be empty for deterministic problems.
pub type SampleVector = Vec<f64>;

/// A point `w` in parameter space. Entries are always finite.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl<'de> Deserialize<'de> for ParamVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let coords = Vec::<f64>::deserialize(d)?;
        ParamVector::new(coords).map_err(serde::de::Error::custom)
    }
}

impl ParamVector {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::InvalidSpec("parameter vector must have dimension >= 1".into()));
        }
        check_finite(&coords, "parameter vector")?;
        Ok(ParamVector(coords))
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "parameter vector must have dimension >= 1");
        ParamVector(vec![0.0; dim])
    }

    pub fn scalar(x: f64) -> Result<Self> {
        Self::new(vec![x])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn norm_inf(&self) -> f64 {
        self.0.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        dot(&self.0, &other.0)
    }

    /// `self - alpha * v`, computed coordinate-wise without fused operations so
    /// the result can be recomputed bit-for-bit.
    pub fn step(&self, alpha: f64, v: &ParamVector) -> Result<ParamVector> {
        self.same_dim(v)?;
        let out: Vec<f64> = self.0.iter().zip(&v.0).map(|(w, g)| w - alpha * g).collect();
        check_finite(&out, "sgd step")?;
        Ok(ParamVector(out))
    }

    /// `self + t * dir`.
    pub fn offset(&self, t: f64, dir: &ParamVector) -> Result<ParamVector> {
        self.same_dim(dir)?;
        let out: Vec<f64> = self.0.iter().zip(&dir.0).map(|(w, d)| w + t * d).collect();
        check_finite(&out, "offset")?;
        Ok(ParamVector(out))
    }

    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.same_dim(other)?;
        Ok(ParamVector(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect()))
    }

    pub fn scale(&self, t: f64) -> Result<ParamVector> {
        let out: Vec<f64> = self.0.iter().map(|x| t * x).collect();
        check_finite(&out, "scale")?;
        Ok(ParamVector(out))
    }

    pub fn distance(&self, other: &ParamVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }

    fn same_dim(&self, other: &ParamVector) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch { what: "parameter vector", expected: self.dim(), got: other.dim() });
        }
        Ok(())
    }
}

impl Index<usize> for ParamVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl AsRef<[f64]> for ParamVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn check_finite(xs: &[f64], what: &str) -> Result<()> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteValue(what.to_string()))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

// ---------------------------------------------------------------------------
// Step-size schedules
// ---------------------------------------------------------------------------

/// Asymptotic properties of a step-size sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleFlags {
    /// `sum_k alpha_k = infinity`
    pub sum_divergent: bool,
    /// `sum_k alpha_k^2 < infinity`
    pub square_summable: bool,
    /// `alpha_k = o(1 / log k)`
    pub little_o_log: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleFamily {
    /// `alpha_k = a / (k + 1)^gamma`
    PowerLaw {
        a: f64,
        gamma: f64,
    },
    Constant {
        a: f64,
    },
    /// Explicit terms with declared flags. Indices past the end reuse the last term.
    Custom {
        terms: Vec<f64>,
        flags: ScheduleFlags,
    },
}

/// Limits used when falsifying the declared flags of a custom schedule.
#[derive(Debug, Clone, Copy)]
pub struct SpotCheck {
    pub horizon: usize,
    /// Declared square-summable schedules whose partial sum of squares exceeds
    /// this are rejected.
    pub max_square_sum: f64,
    /// Declared summable (not divergent) schedules whose partial sum exceeds
    /// this are rejected.
    pub max_sum: f64,
}

impl Default for SpotCheck {
    fn default() -> Self {
        SpotCheck { horizon: 1_000_000, max_square_sum: 1e3, max_sum: 1e6 }
    }
}

/// A lazily generated step-size sequence together with its classification.
/// Serializes as its family; flags are recomputed on load.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSchedule {
    family: ScheduleFamily,
    flags: ScheduleFlags,
}

impl Serialize for StepSchedule {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.family.serialize(s)
    }
}

impl<'de> Deserialize<'de> for StepSchedule {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let family = ScheduleFamily::deserialize(d)?;
        classify_schedule(family).map_err(serde::de::Error::custom)
    }
}

/// Builds a schedule and computes (or, for custom schedules, verifies) its flags.
pub fn classify_schedule(family: ScheduleFamily) -> Result<StepSchedule> {
    classify_schedule_with(family, &SpotCheck::default())
}

pub fn classify_schedule_with(family: ScheduleFamily, check: &SpotCheck) -> Result<StepSchedule> {
    let flags = match &family {
        ScheduleFamily::PowerLaw { a, gamma } => {
            if !(a.is_finite() && *a > 0.0) {
                return Err(Error::NonPositiveStep { index: 0, value: *a });
            }
            if !gamma.is_finite() {
                return Err(Error::InvalidSpec(format!("power-law exponent {gamma} is not finite")));
            }
            ScheduleFlags { sum_divergent: *gamma <= 1.0, square_summable: *gamma > 0.5, little_o_log: *gamma > 0.0 }
        }
        ScheduleFamily::Constant { a } => {
            if !(a.is_finite() && *a > 0.0) {
                return Err(Error::NonPositiveStep { index: 0, value: *a });
            }
            ScheduleFlags { sum_divergent: true, square_summable: false, little_o_log: false }
        }
        ScheduleFamily::Custom { terms, flags } => {
            if terms.is_empty() {
                return Err(Error::InvalidSpec("custom schedule has no terms".into()));
            }
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for (k, &a) in terms.iter().take(check.horizon).enumerate() {
                if !(a.is_finite() && a > 0.0) {
                    return Err(Error::NonPositiveStep { index: k, value: a });
                }
                sum += a;
                sum_sq += a * a;
                if flags.square_summable && sum_sq > check.max_square_sum {
                    return Err(Error::ContradictoryFlags(format!(
                        "declared square-summable but sum of squares exceeds {} after {} terms",
                        check.max_square_sum,
                        k + 1
                    )));
                }
                if !flags.sum_divergent && sum > check.max_sum {
                    return Err(Error::ContradictoryFlags(format!(
                        "declared summable but partial sum exceeds {} after {} terms",
                        check.max_sum,
                        k + 1
                    )));
                }
            }
            if flags.little_o_log && !flags.sum_divergent && !flags.square_summable {
                // o(1/log k) forces alpha_k -> 0, so alpha_k^2 <= alpha_k eventually:
                // a summable sequence is then also square-summable.
                return Err(Error::ContradictoryFlags("summable sequences tending to zero are square-summable".into()));
            }
            *flags
        }
    };
    Ok(StepSchedule { family, flags })
}

impl StepSchedule {
    pub fn power_law(a: f64, gamma: f64) -> Result<Self> {
        classify_schedule(ScheduleFamily::PowerLaw { a, gamma })
    }

    pub fn constant(a: f64) -> Result<Self> {
        classify_schedule(ScheduleFamily::Constant { a })
    }

    pub fn flags(&self) -> ScheduleFlags {
        self.flags
    }

    pub fn family(&self) -> &ScheduleFamily {
        &self.family
    }

    /// Number of explicitly defined terms, if finite.
    pub fn defined_len(&self) -> Option<usize> {
        match &self.family {
            ScheduleFamily::Custom { terms, .. } => Some(terms.len()),
            _ => None,
        }
    }

    pub fn alpha(&self, k: u64) -> f64 {
        match &self.family {
            ScheduleFamily::PowerLaw { a, gamma } => a / ((k as f64) + 1.0).powf(*gamma),
            ScheduleFamily::Constant { a } => *a,
            ScheduleFamily::Custom { terms, .. } => {
                let i = (k as usize).min(terms.len() - 1);
                terms[i]
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        (0u64..).map(move |k| self.alpha(k))
    }
}

// ---------------------------------------------------------------------------
// Random streams
// ---------------------------------------------------------------------------

/// Identifies a reproducible random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSpec {
    pub seed: u64,
    pub stream_id: u64,
}

/// Words of generator output reserved for each indexed draw.
const WORDS_PER_INDEX: u128 = 1 << 20;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl RngSpec {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        RngSpec { seed, stream_id }
    }

    /// A child stream, independent of the parent and of children with other tags.
    pub fn substream(&self, tag: u64) -> RngSpec {
        RngSpec { seed: self.seed, stream_id: splitmix64(self.stream_id ^ splitmix64(tag.wrapping_add(0xA5A5_A5A5))) }
    }

    fn key(&self) -> [u8; 32] {
        let mut key = [0u8; 32];
        let mut s = self.seed;
        for chunk in key.chunks_mut(8) {
            s = splitmix64(s);
            chunk.copy_from_slice(&s.to_le_bytes());
        }
        key
    }

    /// Sequential generator for this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key());
        rng.set_stream(self.stream_id);
        rng
    }

    /// Generator positioned at draw `index`: each index owns a disjoint block of
    /// the stream, so draws can be produced in any order or on any thread.
    pub fn rng_at(&self, index: u64) -> ChaCha8Rng {
        let mut rng = self.rng();
        rng.set_word_pos(index as u128 * WORDS_PER_INDEX);
        rng
    }
}

// ---------------------------------------------------------------------------
// Trajectories
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub k: u64,
    pub w: ParamVector,
    pub alpha: f64,
    pub sample_index: u64,
    /// The applied selection `v(w_k, xi_k)`.
    pub v: ParamVector,
    pub loss_sample: f64,
    /// Algorithmic time `sum_{i<k} alpha_i`.
    pub tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    /// `||w_k||` exceeded the divergence guard at iteration `k`.
    Diverged {
        k: u64,
        norm: f64,
    },
}

/// Output of the SGD recursion: one record per iteration (or per
/// `record_every` iterations) plus the iterate after the last step.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub records: Vec<Record>,
    pub final_k: u64,
    pub final_w: ParamVector,
    pub final_tau: f64,
    pub status: RunStatus,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.final_w.dim()
    }

    /// True when records cover every iteration `0..final_k` without gaps.
    pub fn is_dense(&self) -> bool {
        self.records.iter().enumerate().all(|(i, r)| r.k == i as u64) && self.records.len() as u64 == self.final_k
    }

    /// All iterates `w_0, ..., w_K` (record points followed by the final iterate).
    pub fn iterates(&self) -> impl Iterator<Item = (u64, f64, &ParamVector)> {
        self.records.iter().map(|r| (r.k, r.tau, &r.w)).chain(std::iter::once((
            self.final_k,
            self.final_tau,
            &self.final_w,
        )))
    }

    /// Checks `w_{k+1} == w_k - alpha_k v_k` bitwise for every consecutive pair.
    /// Returns the first offending `k`.
    pub fn verify_recursion(&self) -> std::result::Result<(), u64> {
        let next =
            self.records.iter().skip(1).map(|r| (r.k, &r.w)).chain(std::iter::once((self.final_k, &self.final_w)));
        for (rec, (k_next, w_next)) in self.records.iter().zip(next) {
            if k_next != rec.k + 1 {
                continue;
            }
            let recomputed = rec.w.step(rec.alpha, &rec.v).map_err(|_| rec.k)?;
            let same = recomputed.as_slice().iter().zip(w_next.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits());
            if !same {
                return Err(rec.k);
            }
        }
        Ok(())
    }

    /// CSV header for a `p`-dimensional trajectory.
    pub fn csv_header(p: usize) -> Vec<String> {
        let mut h: Vec<String> = ["k", "alpha", "sample_index", "loss_sample"].iter().map(|s| s.to_string()).collect();
        h.extend((0..p).map(|i| format!("w_{i}")));
        h.extend((0..p).map(|i| format!("v_{i}")));
        h
    }

    /// Writes the trajectory as CSV. The terminal row carries the final iterate
    /// with `alpha = 0` and `v = 0`; rows are thinned to every `every`-th record.
    pub fn write_csv<W: Write>(&self, out: W, every: usize) -> Result<()> {
        let p = self.dim();
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(Self::csv_header(p))?;
        let every = every.max(1);
        for rec in self.records.iter().step_by(every) {
            let mut row =
                vec![rec.k.to_string(), fmt_f64(rec.alpha), rec.sample_index.to_string(), fmt_f64(rec.loss_sample)];
            row.extend(rec.w.as_slice().iter().map(|x| fmt_f64(*x)));
            row.extend(rec.v.as_slice().iter().map(|x| fmt_f64(*x)));
            wtr.write_record(&row)?;
        }
        let mut row = vec![self.final_k.to_string(), fmt_f64(0.0), self.final_k.to_string(), fmt_f64(0.0)];
        row.extend(self.final_w.as_slice().iter().map(|x| fmt_f64(*x)));
        row.extend((0..p).map(|_| fmt_f64(0.0)));
        wtr.write_record(&row)?;
        wtr.flush()?;
        Ok(())
    }

    /// Reads a trajectory written by [`Trajectory::write_csv`]. Algorithmic time
    /// is rebuilt from the alphas, weighting gaps by the record's alpha.
    pub fn read_csv<R: Read>(input: R) -> Result<Trajectory> {
        let mut rdr = csv::Reader::from_reader(input);
        let header = rdr.headers()?.clone();
        if header.len() < 6 || (header.len() - 4) % 2 != 0 {
            return Err(Error::Parse(format!("bad trajectory header with {} columns", header.len())));
        }
        let p = (header.len() - 4) / 2;
        if header != Self::csv_header(p) {
            return Err(Error::Parse("unexpected trajectory header".into()));
        }
        let mut rows = Vec::new();
        for row in rdr.records() {
            let row = row?;
            let num = |i: usize| -> Result<f64> {
                row[i].parse::<f64>().map_err(|e| Error::Parse(format!("column {i}: {e}")))
            };
            let int = |i: usize| -> Result<u64> {
                row[i].parse::<u64>().map_err(|e| Error::Parse(format!("column {i}: {e}")))
            };
            let w = ParamVector::new((0..p).map(|i| num(4 + i)).collect::<Result<_>>()?)?;
            let v = ParamVector::new((0..p).map(|i| num(4 + p + i)).collect::<Result<_>>()?)?;
            rows.push(Record {
                k: int(0)?,
                alpha: num(1)?,
                sample_index: int(2)?,
                loss_sample: num(3)?,
                w,
                v,
                tau: 0.0,
            });
        }
        let last = rows.pop().ok_or_else(|| Error::Parse("trajectory csv has no terminal row".into()))?;
        let mut tau = 0.0;
        for i in 0..rows.len() {
            rows[i].tau = tau;
            let next_k = rows.get(i + 1).map_or(last.k, |r| r.k);
            tau += rows[i].alpha * (next_k - rows[i].k) as f64;
        }
        Ok(Trajectory { records: rows, final_k: last.k, final_w: last.w, final_tau: tau, status: RunStatus::Completed })
    }
}

/// 17 significant digits: enough for an exact round trip of any f64.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}
