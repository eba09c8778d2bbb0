use std::f64::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{derive_seed, DescriptorPoint};
use crate::error::{Error, Result};

/// Boundary samples per ellipse in the overlap predicate.
pub const BOUNDARY_SAMPLES: usize = 64;

/// Full-RVE reseeds attempted after a placement failure.
pub const MAX_RESEEDS: u32 = 8;

/// Elliptical inclusion in the periodic unit square.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    /// Semi-major axis.
    pub a: f64,
    /// Semi-minor axis.
    pub b: f64,
    /// Orientation of the major axis, in `[0, π)`.
    pub theta: f64,
}

impl Ellipse {
    pub fn area(&self) -> f64 {
        PI * self.a * self.b
    }

    pub fn is_circle(&self) -> bool {
        self.a == self.b
    }

    /// Level-set value of the offset `(dx, dy)` from the centre against an
    /// ellipse enclosing every point within distance `pad` of this one;
    /// inside iff `<= 1`.
    ///
    /// Growing both semi-axes by `pad (a + b) / (2 sqrt(ab))` is enough: the
    /// support function then exceeds the original one by at least `pad` in
    /// every direction.
    fn level(&self, dx: f64, dy: f64, pad: f64) -> f64 {
        let (s, c) = self.theta.sin_cos();
        let x = dx * c + dy * s;
        let y = -dx * s + dy * c;
        let grow = pad * (self.a + self.b) / (2.0 * (self.a * self.b).sqrt());
        let (a, b) = (self.a + grow, self.b + grow);
        (x / a) * (x / a) + (y / b) * (y / b)
    }

    pub fn contains_offset(&self, dx: f64, dy: f64) -> bool {
        self.level(dx, dy, 0.0) <= 1.0
    }

    /// Boundary point at parameter `t`, relative to the centre.
    pub fn boundary_offset(&self, t: f64) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        let (x, y) = (self.a * t.cos(), self.b * t.sin());
        (x * c - y * s, x * s + y * c)
    }
}

/// Periodic two-phase representative volume element on the unit square.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Rve {
    pub inclusions: Vec<Ellipse>,
}

impl Rve {
    pub fn inclusion_area(&self) -> f64 {
        self.inclusions.iter().map(Ellipse::area).sum()
    }
}

/// Semi-axes giving each of `n_particles` fibres area `v_f / n_particles`
/// with `a / b` equal to the aspect ratio.
pub fn size_fibers(d: &DescriptorPoint) -> (f64, f64) {
    let a = (d.volume_fraction * d.aspect_ratio / (PI * d.n_particles as f64)).sqrt();
    (a, a / d.aspect_ratio)
}

fn sampled_penetration(e1: &Ellipse, e2: &Ellipse, dx: f64, dy: f64) -> bool {
    // Any boundary point of e1 lies within half a parametric step of a sample,
    // and |dp/dt| <= a, so padding e2 by that distance keeps the test conservative.
    let step = 2.0 * PI / BOUNDARY_SAMPLES as f64;
    let pad = 0.5 * step * e1.a;
    (0..BOUNDARY_SAMPLES).any(|k| {
        let (px, py) = e1.boundary_offset(k as f64 * step);
        e2.level(px - dx, py - dy, pad) <= 1.0
    })
}

/// Conservative overlap test under periodic wrap.
///
/// Bounding circles reject distant pairs, inscribed circles accept close
/// ones, and otherwise boundary samples of each ellipse are tested against
/// the (slightly padded) other. Never reports `false` for overlapping
/// ellipses; may report `true` for near-touching ones.
pub fn ellipses_overlap(e1: &Ellipse, e2: &Ellipse) -> bool {
    for sx in [-1.0, 0.0, 1.0] {
        for sy in [-1.0, 0.0, 1.0] {
            // offset of e2's centre (wrapped copy) from e1's centre
            let dx = e2.cx + sx - e1.cx;
            let dy = e2.cy + sy - e1.cy;
            let d2 = dx * dx + dy * dy;
            let reach = e1.a + e2.a;
            if d2 >= reach * reach {
                continue;
            }
            if e1.is_circle() && e2.is_circle() {
                return true;
            }
            let inner = e1.b + e2.b;
            if d2 < inner * inner
                || sampled_penetration(e1, e2, dx, dy)
                || sampled_penetration(e2, e1, -dx, -dy)
            {
                return true;
            }
        }
    }
    false
}

fn place(
    shape: (f64, f64),
    count: u32,
    descriptor: &DescriptorPoint,
    seed: u64,
    max_attempts: u64,
) -> Result<Rve> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rve = Rve::default();
    let mut total = 0u64;
    for _ in 0..count {
        let mut placed = false;
        for _ in 0..max_attempts {
            total += 1;
            let candidate = Ellipse {
                cx: rng.random(),
                cy: rng.random(),
                a: shape.0,
                b: shape.1,
                theta: rng.random::<f64>() * PI,
            };
            if rve.inclusions.iter().all(|e| !ellipses_overlap(e, &candidate)) {
                rve.inclusions.push(candidate);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Placement {
                descriptor: *descriptor,
                attempts: total,
            });
        }
    }
    Ok(rve)
}

/// Random sequential adsorption of equal elliptical fibres with uniform
/// random centres and orientations.
pub fn rsa_place(d: &DescriptorPoint, seed: u64, max_attempts: u64) -> Result<Rve> {
    if d.n_particles == 0 || !(d.aspect_ratio >= 1.0) || !(d.volume_fraction > 0.0 && d.volume_fraction < 1.0) {
        return Err(Error::invalid(format!("infeasible descriptor {d:?}")));
    }
    place(size_fibers(d), d.n_particles, d, seed, max_attempts)
}

/// Number of fixed-radius circles approximating volume fraction `v_f`.
pub fn circle_count(v_f: f64, radius: f64) -> u32 {
    (v_f / (PI * radius * radius)).round() as u32
}

/// RSA of `round(v_f / πr²)` circles of fixed radius.
pub fn rsa_place_circles(v_f: f64, radius: f64, seed: u64, max_attempts: u64) -> Result<Rve> {
    if !(0.0..1.0).contains(&v_f) || !(radius > 0.0 && radius < 0.5) {
        return Err(Error::invalid(format!("circle packing v_f={v_f}, r={radius}")));
    }
    let count = circle_count(v_f, radius);
    let d = DescriptorPoint {
        n_particles: count,
        aspect_ratio: 1.0,
        volume_fraction: v_f,
    };
    place((radius, radius), count, &d, seed, max_attempts)
}

/// Retries `attempt` with derived seeds up to [`MAX_RESEEDS`] times.
/// Returns the RVE and the number of reseeds used.
pub fn with_reseed(seed: u64, mut attempt: impl FnMut(u64) -> Result<Rve>) -> Result<(Rve, u32)> {
    let mut last = None;
    for retry in 0..=MAX_RESEEDS {
        let s = if retry == 0 { seed } else { derive_seed(seed, 0x5EED_0000 + retry as u64) };
        match attempt(s) {
            Ok(rve) => return Ok((rve, retry)),
            Err(e @ Error::Placement { .. }) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one attempt"))
}
