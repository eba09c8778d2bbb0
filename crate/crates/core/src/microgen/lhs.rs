use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DescriptorPoint;
use crate::error::{Error, Result};

/// Closed sampling interval for one descriptor dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Sampling box over (particle count, aspect ratio, volume fraction).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescriptorRanges {
    pub n_particles: Range,
    pub aspect_ratio: Range,
    pub volume_fraction: Range,
}

impl Default for DescriptorRanges {
    fn default() -> Self {
        Self {
            n_particles: Range::new(15.0, 35.0),
            aspect_ratio: Range::new(1.0, 4.0),
            volume_fraction: Range::new(0.10, 0.40),
        }
    }
}

impl DescriptorRanges {
    pub fn contains(&self, d: &DescriptorPoint) -> bool {
        self.n_particles.contains(d.n_particles as f64)
            && self.aspect_ratio.contains(d.aspect_ratio)
            && self.volume_fraction.contains(d.volume_fraction)
    }
}

/// `n` Latin-hypercube points in the unit cube of dimension `dims`.
///
/// Each dimension is cut into `n` equal strata; every stratum receives exactly
/// one point, placed uniformly inside it, and strata are matched across
/// dimensions by independent random permutations.
pub fn latin_hypercube(n: usize, dims: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut points = vec![vec![0.0; dims]; n];
    for d in 0..dims {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(rng);
        for (p, s) in points.iter_mut().zip(strata) {
            let u: f64 = rng.random();
            p[d] = (s as f64 + u) / n as f64;
        }
    }
    points
}

/// Latin-hypercube sample of the descriptor box; the particle count is
/// rounded to the nearest integer after sampling.
pub fn lhs_sample(n: usize, ranges: &DescriptorRanges, seed: u64) -> Result<Vec<DescriptorPoint>> {
    if n == 0 {
        return Err(Error::invalid("lhs_sample needs n >= 1"));
    }
    for (name, r) in [
        ("n_particles", ranges.n_particles),
        ("aspect_ratio", ranges.aspect_ratio),
        ("volume_fraction", ranges.volume_fraction),
    ] {
        if !(r.width() > 0.0) {
            return Err(Error::invalid(format!("degenerate {name} range {r:?}")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = latin_hypercube(n, 3, &mut rng);
    let scale = |r: Range, u: f64| r.lo + u * r.width();
    Ok(unit
        .into_iter()
        .map(|u| DescriptorPoint {
            n_particles: scale(ranges.n_particles, u[0]).round() as u32,
            aspect_ratio: scale(ranges.aspect_ratio, u[1]),
            volume_fraction: scale(ranges.volume_fraction, u[2]),
        })
        .collect())
}
