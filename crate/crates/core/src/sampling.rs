//! I.i.d. sample streams over compactly supported distributions.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{RngSpec, SampleVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistributionSpec {
    /// Finitely many atoms. Points may be empty vectors (deterministic problems).
    DiscreteAtoms { points: Vec<Vec<f64>>, weights: Vec<f64> },
    /// Independent uniform coordinates on `[lo_i, hi_i]`.
    UniformBox { lo: Vec<f64>, hi: Vec<f64> },
    /// Independent normal coordinates conditioned on the box, drawn by rejection.
    TruncatedGaussian { mean: Vec<f64>, sd: Vec<f64>, lo: Vec<f64>, hi: Vec<f64> },
    /// A discrete label followed by a continuous draw from the label's conditional.
    ProductMixture { labels: Vec<Vec<f64>>, weights: Vec<f64>, conditionals: Vec<DistributionSpec> },
}

fn check_weights(weights: &[f64], n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidSpec("no atoms".into()));
    }
    if weights.len() != n {
        return Err(Error::InvalidSpec(format!("{} weights for {n} atoms", weights.len())));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::InvalidSpec("weights must be finite and nonnegative".into()));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidSpec(format!("weights sum to {total}, expected 1")));
    }
    Ok(())
}

fn check_points(points: &[Vec<f64>]) -> Result<usize> {
    let d = points.first().map_or(0, |p| p.len());
    if points.iter().any(|p| p.len() != d) {
        return Err(Error::InvalidSpec("atoms have different dimensions".into()));
    }
    if points.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::InvalidSpec("non-finite atom".into()));
    }
    Ok(d)
}

fn check_box(lo: &[f64], hi: &[f64]) -> Result<()> {
    if lo.len() != hi.len() || lo.is_empty() {
        return Err(Error::InvalidSpec("box bounds must be nonempty and of equal length".into()));
    }
    for (l, h) in lo.iter().zip(hi) {
        if !(l.is_finite() && h.is_finite()) {
            return Err(Error::InvalidSpec("box bounds must be finite".into()));
        }
        if l > h {
            return Err(Error::InvalidSpec(format!("lo {l} > hi {h}")));
        }
    }
    Ok(())
}

/// Draws `N(mean, sd^2)` conditioned on `[lo, hi]` by rejection. Returns the
/// value and the number of proposals used.
pub fn sample_truncated_normal<R: Rng + ?Sized>(rng: &mut R, mean: f64, sd: f64, lo: f64, hi: f64) -> (f64, u64) {
    let mut proposals = 0;
    loop {
        proposals += 1;
        let z: f64 = rng.sample(StandardNormal);
        let x = mean + sd * z;
        if (lo..=hi).contains(&x) {
            return (x, proposals);
        }
    }
}

impl DistributionSpec {
    pub fn rademacher() -> Self {
        DistributionSpec::DiscreteAtoms { points: vec![vec![-1.0], vec![1.0]], weights: vec![0.5, 0.5] }
    }

    pub fn uniform(lo: f64, hi: f64) -> Self {
        DistributionSpec::UniformBox { lo: vec![lo], hi: vec![hi] }
    }

    /// A single empty atom: the distribution of a deterministic problem.
    pub fn point_mass() -> Self {
        DistributionSpec::DiscreteAtoms { points: vec![vec![]], weights: vec![1.0] }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DistributionSpec::DiscreteAtoms { points, weights } => {
                check_weights(weights, points.len())?;
                check_points(points)?;
            }
            DistributionSpec::UniformBox { lo, hi } => check_box(lo, hi)?,
            DistributionSpec::TruncatedGaussian { mean, sd, lo, hi } => {
                check_box(lo, hi)?;
                if mean.len() != lo.len() || sd.len() != lo.len() {
                    return Err(Error::InvalidSpec("mean/sd/box lengths differ".into()));
                }
                for i in 0..lo.len() {
                    if !(sd[i].is_finite() && sd[i] > 0.0) {
                        return Err(Error::InvalidSpec(format!("sd {} must be positive", sd[i])));
                    }
                    if !mean[i].is_finite() {
                        return Err(Error::InvalidSpec("mean must be finite".into()));
                    }
                    // Keep rejection sampling cheap: the box must overlap the bulk.
                    let a = lo[i].max(mean[i] - 3.0 * sd[i]);
                    let b = hi[i].min(mean[i] + 3.0 * sd[i]);
                    if b - a < 1e-2 * sd[i] {
                        return Err(Error::InvalidSpec(format!(
                            "truncation box [{}, {}] has negligible mass",
                            lo[i], hi[i]
                        )));
                    }
                }
            }
            DistributionSpec::ProductMixture { labels, weights, conditionals } => {
                check_weights(weights, labels.len())?;
                check_points(labels)?;
                if conditionals.len() != labels.len() {
                    return Err(Error::InvalidSpec("one conditional per label required".into()));
                }
                let d = conditionals[0].dim();
                for c in conditionals {
                    match c {
                        DistributionSpec::UniformBox { .. } | DistributionSpec::TruncatedGaussian { .. } => {}
                        _ => return Err(Error::InvalidSpec("conditionals must be continuous".into())),
                    }
                    c.validate()?;
                    if c.dim() != d {
                        return Err(Error::InvalidSpec("conditionals have different dimensions".into()));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            DistributionSpec::DiscreteAtoms { points, .. } => points.first().map_or(0, |p| p.len()),
            DistributionSpec::UniformBox { lo, .. } => lo.len(),
            DistributionSpec::TruncatedGaussian { lo, .. } => lo.len(),
            DistributionSpec::ProductMixture { labels, conditionals, .. } => {
                labels.first().map_or(0, |p| p.len()) + conditionals.first().map_or(0, |c| c.dim())
            }
        }
    }

    /// `sup ||s||` over the support.
    pub fn support_radius(&self) -> f64 {
        let box_radius =
            |lo: &[f64], hi: &[f64]| lo.iter().zip(hi).map(|(l, h)| l.abs().max(h.abs()).powi(2)).sum::<f64>().sqrt();
        let atom_radius =
            |pts: &[Vec<f64>]| pts.iter().map(|p| p.iter().map(|x| x * x).sum::<f64>().sqrt()).fold(0.0, f64::max);
        match self {
            DistributionSpec::DiscreteAtoms { points, .. } => atom_radius(points),
            DistributionSpec::UniformBox { lo, hi } | DistributionSpec::TruncatedGaussian { lo, hi, .. } => {
                box_radius(lo, hi)
            }
            DistributionSpec::ProductMixture { labels, conditionals, .. } => {
                let l = atom_radius(labels);
                let c = conditionals.iter().map(|c| c.support_radius()).fold(0.0, f64::max);
                (l * l + c * c).sqrt()
            }
        }
    }

    /// Atoms and their weights for finite distributions.
    pub fn atoms(&self) -> Option<Vec<(SampleVector, f64)>> {
        match self {
            DistributionSpec::DiscreteAtoms { points, weights } => {
                Some(points.iter().cloned().zip(weights.iter().copied()).filter(|(_, w)| *w > 0.0).collect())
            }
            _ => None,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, DistributionSpec::DiscreteAtoms { .. })
    }

    /// One draw. Assumes the spec is valid.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SampleVector {
        match self {
            DistributionSpec::DiscreteAtoms { points, weights } => points[pick(rng, weights)].clone(),
            DistributionSpec::UniformBox { lo, hi } => {
                lo.iter().zip(hi).map(|(l, h)| if l == h { *l } else { rng.random_range(*l..=*h) }).collect()
            }
            DistributionSpec::TruncatedGaussian { mean, sd, lo, hi } => {
                (0..lo.len()).map(|i| sample_truncated_normal(rng, mean[i], sd[i], lo[i], hi[i]).0).collect()
            }
            DistributionSpec::ProductMixture { labels, weights, conditionals } => {
                let i = pick(rng, weights);
                let mut s = labels[i].clone();
                s.extend(conditionals[i].sample(rng));
                s
            }
        }
    }
}

fn pick<R: Rng + ?Sized>(rng: &mut R, weights: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, w) in weights.iter().enumerate() {
        if *w > 0.0 {
            last = i;
            acc += w;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// An addressable i.i.d. stream: draw `k` depends only on `(dist, rng, k)`.
#[derive(Debug, Clone)]
pub struct SampleStream<'a> {
    dist: &'a DistributionSpec,
    rng: RngSpec,
    next: u64,
}

impl<'a> SampleStream<'a> {
    /// Draw number `index` of the stream.
    pub fn at(&self, index: u64) -> SampleVector {
        self.dist.sample(&mut self.rng.rng_at(index))
    }

    /// A copy of the stream positioned at `index`.
    pub fn skip_to(&self, index: u64) -> SampleStream<'a> {
        SampleStream { next: index, ..self.clone() }
    }

    pub fn position(&self) -> u64 {
        self.next
    }
}

impl Iterator for SampleStream<'_> {
    type Item = SampleVector;
    fn next(&mut self) -> Option<SampleVector> {
        let s = self.at(self.next);
        self.next += 1;
        Some(s)
    }
}

pub fn sample_stream(dist: &DistributionSpec, rng: RngSpec) -> Result<SampleStream<'_>> {
    dist.validate()?;
    Ok(SampleStream { dist, rng, next: 0 })
}

/// Draw `index` of `(dist, rng)` without building a stream.
pub fn sample_at(dist: &DistributionSpec, rng: RngSpec, index: u64) -> SampleVector {
    dist.sample(&mut rng.rng_at(index))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rademacher_mean() {
        let d = DistributionSpec::rademacher();
        let n = 1_000_000;
        let sum: f64 = sample_stream(&d, RngSpec::new(1, 0)).unwrap().take(n).map(|s| s[0]).sum();
        assert!((sum / n as f64).abs() <= 4.0 / (n as f64).sqrt());
    }

    #[test]
    fn uniform_variance() {
        let d = DistributionSpec::uniform(-1.0, 1.0);
        let n = 1_000_000;
        let xs: Vec<f64> = sample_stream(&d, RngSpec::new(2, 0)).unwrap().take(n).map(|s| s[0]).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        assert!((var - 1.0 / 3.0).abs() <= 0.01 / 3.0, "variance {var}");
    }

    #[test]
    fn truncated_gaussian_stays_in_box() {
        let d = DistributionSpec::TruncatedGaussian { mean: vec![0.0], sd: vec![1.0], lo: vec![-2.0], hi: vec![2.0] };
        let mut rng = RngSpec::new(3, 0).rng();
        let outside = (0..10_000_000).filter(|_| d.sample(&mut rng)[0].abs() > 2.0).count();
        assert_eq!(outside, 0);
    }

    #[test]
    fn truncated_gaussian_acceptance_rate() {
        // Phi(2) - Phi(-2) = 0.954499736...
        let target = 0.954_499_736_103_642;
        let mut rng = RngSpec::new(4, 0).rng();
        let mut proposals = 0u64;
        let mut accepted = 0u64;
        while proposals < 1_000_000 {
            let (_, used) = sample_truncated_normal(&mut rng, 0.0, 1.0, -2.0, 2.0);
            proposals += used;
            accepted += 1;
        }
        let rate = accepted as f64 / proposals as f64;
        assert!((rate - target).abs() / target < 0.005, "rate {rate}");
    }

    #[test]
    fn invalid_specs() {
        assert!(DistributionSpec::DiscreteAtoms { points: vec![], weights: vec![] }.validate().is_err());
        assert!(DistributionSpec::uniform(1.0, -1.0).validate().is_err());
        let tg = DistributionSpec::TruncatedGaussian { mean: vec![0.0], sd: vec![0.0], lo: vec![-1.0], hi: vec![1.0] };
        assert!(tg.validate().is_err());
        let w = DistributionSpec::DiscreteAtoms { points: vec![vec![0.0], vec![1.0]], weights: vec![0.5, 0.4] };
        assert!(w.validate().is_err());
        assert!(sample_stream(&w, RngSpec::new(0, 0)).is_err());
    }

    #[test]
    fn streams_are_addressable() {
        let d = DistributionSpec::TruncatedGaussian {
            mean: vec![0.0, 1.0],
            sd: vec![1.0, 0.5],
            lo: vec![-2.0, 0.0],
            hi: vec![2.0, 2.0],
        };
        let s = sample_stream(&d, RngSpec::new(5, 9)).unwrap();
        let first: Vec<_> = s.clone().take(100).collect();
        let replay: Vec<_> = s.skip_to(50).take(50).collect();
        assert_eq!(&first[50..], &replay[..]);
        assert_eq!(first[17], sample_at(&d, RngSpec::new(5, 9), 17));
    }

    #[test]
    fn mixture_concatenates_label_and_feature() {
        let d = DistributionSpec::ProductMixture {
            labels: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            weights: vec![0.3, 0.7],
            conditionals: vec![DistributionSpec::uniform(-1.0, 0.0), DistributionSpec::uniform(0.0, 1.0)],
        };
        d.validate().unwrap();
        assert_eq!(d.dim(), 3);
        let n = 100_000;
        let mut ones = 0;
        for s in sample_stream(&d, RngSpec::new(6, 0)).unwrap().take(n) {
            if s[0] == 1.0 {
                ones += 1;
                assert!(s[2] <= 0.0);
            } else {
                assert!(s[2] >= 0.0);
            }
        }
        let frac = ones as f64 / n as f64;
        assert!((frac - 0.3).abs() < 4.0 * (0.21f64 / n as f64).sqrt());
    }
}
