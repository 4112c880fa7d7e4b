//! Quadrature sample placement: uniform strata in depth inside the boundary
//! sphere, uniform strata in `s = t_B / r` outside it, and the coarse-to-fine
//! schedule of sample counts and grid resolutions.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ray_sphere_intersection, Ray};

/// Samples for one ray. Interval lengths are the stratum widths in ray depth.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SampleBatch {
    pub fg_depths: Vec<f64>,
    pub fg_deltas: Vec<f64>,
    pub bg_radii: Vec<f64>,
    pub bg_depths: Vec<f64>,
    pub bg_deltas: Vec<f64>,
    pub jittered: bool,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.fg_depths.len() + self.bg_depths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `n` equal strata over `[t_near, t_boundary]`; midpoints, or one uniform
/// draw per stratum when `rng` is given. Returns `(depths, deltas)`.
pub fn sample_foreground<R: Rng>(ray: &Ray, n: usize, rng: Option<&mut R>) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let w = (ray.t_boundary - ray.t_near) / n as f64;
    let mut depths = Vec::with_capacity(n);
    match rng {
        None => depths.extend((0..n).map(|i| ray.t_near + (i as f64 + 0.5) * w)),
        Some(rng) => depths.extend((0..n).map(|i| {
            let u: f64 = rng.random();
            ray.t_near + (i as f64 + u) * w
        })),
    }
    (depths, vec![w; n])
}

/// Background samples from `m` equal strata over `s in (s_far, 1]` with
/// `s = boundary_radius / r`. For an unbounded ray `s_far = 0` and the
/// innermost stratum is truncated at half its width, so no sample lies at
/// infinity. Returns `(radii, depths, deltas)` with radii ascending.
pub fn sample_background<R: Rng>(
    ray: &Ray,
    boundary_radius: f64,
    m: usize,
    rng: Option<&mut R>,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    assert!(m >= 1);
    let s_far = if ray.t_far.is_finite() {
        boundary_radius / ray.at(ray.t_far).norm()
    } else {
        0.0
    };
    let w = (1.0 - s_far) / m as f64;
    let s_min = if s_far > 0.0 { s_far } else { 0.5 * w };
    // edge j separates stratum j-1 (inner) from stratum j (outer)
    let edge = |j: usize| -> f64 {
        if j == m {
            s_min
        } else {
            1.0 - j as f64 * w
        }
    };
    let depth_at = |s: f64| -> f64 {
        if s >= 1.0 {
            ray.t_boundary
        } else {
            ray_sphere_intersection(&ray.origin, &ray.direction, boundary_radius / s)
                .expect("origin inside the boundary sphere")
        }
    };
    let mut radii = Vec::with_capacity(m);
    let mut depths = Vec::with_capacity(m);
    let mut deltas = Vec::with_capacity(m);
    let mut rng = rng;
    let mut prev_edge_depth = ray.t_boundary;
    for j in 0..m {
        let hi = edge(j);
        let lo = edge(j + 1);
        let s = match rng.as_mut() {
            None => {
                if j + 1 == m && s_far == 0.0 {
                    s_min
                } else {
                    0.5 * (hi + lo)
                }
            }
            Some(r) => {
                let u: f64 = r.random();
                hi - u * (hi - lo)
            }
        };
        let outer = depth_at(lo);
        radii.push(boundary_radius / s);
        depths.push(depth_at(s));
        deltas.push(outer - prev_edge_depth);
        prev_edge_depth = outer;
    }
    (radii, depths, deltas)
}

pub fn sample_ray<R: Rng>(
    ray: &Ray,
    boundary_radius: f64,
    n: usize,
    m: usize,
    mut rng: Option<&mut R>,
) -> SampleBatch {
    let jittered = rng.is_some();
    let (fg_depths, fg_deltas) = sample_foreground(ray, n, rng.as_deref_mut());
    let (bg_radii, bg_depths, bg_deltas) = sample_background(ray, boundary_radius, m, rng);
    SampleBatch {
        fg_depths,
        fg_deltas,
        bg_radii,
        bg_depths,
        bg_deltas,
        jittered,
    }
}

/// Per-ray random stream: `hash(global_seed, ray_index, step)`.
pub fn ray_rng(seed: u64, ray_index: u64, step: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(mix(mix(seed) ^ ray_index) ^ step.rotate_left(32)))
}

/// SplitMix64 finalizer.
pub fn mix(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage {
    pub level: usize,
    pub n_fg: usize,
    pub m_bg: usize,
    pub res_fg: [usize; 3],
    pub res_bg: [usize; 3],
}

/// Piecewise-constant coarse-to-fine schedule stepping geometrically from
/// its start to its final values at each milestone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub milestones: Vec<usize>,
    pub n_fg: [usize; 2],
    pub m_bg: [usize; 2],
    pub res_fg: [[usize; 3]; 2],
    pub res_bg: [[usize; 3]; 2],
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "milestones must be strictly ascending: {:?}",
                self.milestones
            )));
        }
        let pairs = [self.n_fg, self.m_bg]
            .into_iter()
            .chain((0..3).map(|a| [self.res_fg[0][a], self.res_fg[1][a]]))
            .chain((0..3).map(|a| [self.res_bg[0][a], self.res_bg[1][a]]));
        for [start, end] in pairs {
            if start == 0 || end < start {
                return Err(Error::Config(format!(
                    "schedule must be non-decreasing from a positive start ({start} -> {end})"
                )));
            }
        }
        if self.res_fg[0].iter().chain(&self.res_bg[0]).any(|&r| r < 2) {
            return Err(Error::Config("grid resolutions must be >= 2".into()));
        }
        Ok(())
    }

    pub fn levels(&self) -> usize {
        self.milestones.len()
    }

    pub fn stage(&self, step: usize) -> Stage {
        let levels = self.levels();
        let level = self.milestones.iter().filter(|&&m| m <= step).count();
        let frac = if levels == 0 {
            1.0
        } else {
            level as f64 / levels as f64
        };
        let interp = |[a, b]: [usize; 2]| -> usize {
            if frac >= 1.0 {
                return b;
            }
            let v = (a as f64 * (b as f64 / a as f64).powf(frac)).round() as usize;
            v.clamp(a, b)
        };
        let res = |r: [[usize; 3]; 2]| -> [usize; 3] {
            std::array::from_fn(|i| interp([r[0][i], r[1][i]]))
        };
        Stage {
            level,
            n_fg: interp(self.n_fg),
            m_bg: interp(self.m_bg),
            res_fg: res(self.res_fg),
            res_bg: res(self.res_bg),
        }
    }
}
