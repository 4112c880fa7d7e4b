//! Analytic scenes with piecewise-constant density and a dense-quadrature
//! reference renderer.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::geometry::{SceneFrame, Vec3, WarpedPoint};
use crate::renderer::RadianceField;

/// Density of the opaque environment shell.
pub const ENV_SIGMA: f64 = 1e6;
pub const DEFAULT_SAMPLES_PER_UNIT: f64 = 1e4;
/// Upper bound on sub-samples in one constant-density interval.
pub const MAX_INTERVAL_SAMPLES: usize = 4096;
const TRANSMITTANCE_CUTOFF: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Texture {
    Constant([f64; 3]),
    /// `base + amp * (n . axis)` where `n` is the outward unit direction
    /// from the sphere center, clamped to [0, 1].
    Radial {
        base: [f64; 3],
        amp: [f64; 3],
        axis: [f64; 3],
    },
}

impl Texture {
    fn at(&self, n: &Vec3) -> Vec3 {
        match *self {
            Texture::Constant(c) => Vec3::from(c),
            Texture::Radial { base, amp, axis } => {
                let t = n.dot(&Vec3::from(axis));
                (Vec3::from(base) + Vec3::from(amp) * t).map(|v| v.clamp(0.0, 1.0))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sphere {
    pub center: [f64; 3],
    pub radius: f64,
    pub sigma: f64,
    pub texture: Texture,
}

impl Sphere {
    fn contains(&self, p: &Vec3) -> bool {
        (p - Vec3::from(self.center)).norm() <= self.radius
    }

    fn color(&self, p: &Vec3) -> Vec3 {
        let d = p - Vec3::from(self.center);
        let n = d.try_normalize(1e-300).unwrap_or(Vec3::z());
        self.texture.at(&n)
    }
}

/// Direction-dependent environment colors, functions of the polar angle
/// `theta` from +z and the azimuth `phi`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Environment {
    /// Smoothed checkerboard with `cells` squares around the azimuth.
    Checker {
        a: [f64; 3],
        b: [f64; 3],
        cells: u32,
        sharpness: f64,
        phase: f64,
    },
    /// Vertical blend from `top` to `bottom` with a gentle azimuthal ripple.
    Gradient {
        top: [f64; 3],
        bottom: [f64; 3],
        ripple: f64,
        phase: f64,
    },
}

impl Environment {
    pub fn color(&self, dir: &Vec3) -> Vec3 {
        let d = dir.normalize();
        let theta = d.z.clamp(-1.0, 1.0).acos();
        let phi = d.y.atan2(d.x);
        match *self {
            Environment::Checker {
                a,
                b,
                cells,
                sharpness,
                phase,
            } => {
                let k = cells as f64 / 2.0;
                let s = (k * (phi + phase)).sin() * (k * theta).sin();
                let t = 0.5 + 0.5 * (sharpness * s).tanh();
                Vec3::from(a) * (1.0 - t) + Vec3::from(b) * t
            }
            Environment::Gradient {
                top,
                bottom,
                ripple,
                phase,
            } => {
                let t = theta / PI;
                let c = Vec3::from(top) * (1.0 - t) + Vec3::from(bottom) * t;
                let w = 1.0 + ripple * (phi + phase).sin() * theta.sin();
                (c * w).map(|v| v.clamp(0.0, 1.0))
            }
        }
    }
}

/// Constant-density shell between two radii about the origin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Haze {
    pub inner: f64,
    pub outer: f64,
    pub sigma: f64,
    pub color: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticScene {
    pub name: String,
    pub spheres: Vec<Sphere>,
    pub environment: Environment,
    /// Radius of the opaque environment shell about the origin.
    pub env_radius: f64,
    pub haze: Option<Haze>,
}

impl AnalyticScene {
    /// True when no primitive crosses the sphere of radius `t_b`.
    pub fn respects_boundary(&self, t_b: f64) -> bool {
        let spheres_ok = self.spheres.iter().all(|s| {
            let d = Vec3::from(s.center).norm();
            d + s.radius < t_b || d - s.radius > t_b
        });
        let haze_ok = self
            .haze
            .is_none_or(|h| h.inner >= t_b || h.outer <= t_b);
        spheres_ok && haze_ok && self.env_radius > t_b
    }

    /// Exact density and color at `p`. Overlapping media mix their colors by
    /// density.
    pub fn sigma_color(&self, p: &Vec3) -> (f64, Vec3) {
        let r = p.norm();
        if r >= self.env_radius {
            return (ENV_SIGMA, self.environment.color(p));
        }
        let mut sigma = 0.0;
        let mut acc = Vec3::zeros();
        for s in &self.spheres {
            if s.contains(p) {
                sigma += s.sigma;
                acc += s.color(p) * s.sigma;
            }
        }
        if let Some(h) = &self.haze {
            if r >= h.inner && r <= h.outer {
                sigma += h.sigma;
                acc += Vec3::from(h.color) * h.sigma;
            }
        }
        if sigma > 0.0 {
            (sigma, acc / sigma)
        } else {
            (0.0, Vec3::zeros())
        }
    }

    /// Interval endpoints along `o + t d` where the medium may change.
    fn breakpoints(&self, o: &Vec3, d: &Vec3, t0: f64) -> Vec<f64> {
        let mut ts = vec![t0];
        let mut sphere_hits = |c: &Vec3, r: f64| {
            let oc = o - c;
            let b = oc.dot(d);
            let disc = b * b - (oc.norm_squared() - r * r);
            if disc > 0.0 {
                let q = disc.sqrt();
                for t in [-b - q, -b + q] {
                    if t > t0 {
                        ts.push(t);
                    }
                }
            }
        };
        for s in &self.spheres {
            sphere_hits(&Vec3::from(s.center), s.radius);
        }
        if let Some(h) = &self.haze {
            sphere_hits(&Vec3::zeros(), h.inner);
            sphere_hits(&Vec3::zeros(), h.outer);
        }
        ts.sort_by(f64::total_cmp);
        ts
    }

    /// Depth at which the ray meets the environment shell.
    fn env_hit(&self, o: &Vec3, d: &Vec3) -> f64 {
        let b = o.dot(d);
        let c = o.norm_squared() - self.env_radius * self.env_radius;
        -b + (b * b - c).max(0.0).sqrt()
    }

    /// Dense alpha-composited quadrature of the scene along `o + t d` from
    /// `t_near` to the environment shell. Each interval of constant density
    /// is split into sub-steps at `samples_per_unit`, so transmittance is
    /// exact and only color variation inside an interval is sampled.
    pub fn reference_render(&self, origin: &Vec3, dir: &Vec3, t_near: f64, samples_per_unit: f64) -> Vec3 {
        let d = dir.normalize();
        let t_env = self.env_hit(origin, &d);
        let mut ts = self.breakpoints(origin, &d, t_near);
        ts.retain(|&t| t < t_env);
        ts.push(t_env);
        let mut trans = 1.0;
        let mut color = Vec3::zeros();
        for w in ts.windows(2) {
            let (a, b) = (w[0], w[1]);
            let len = b - a;
            if len <= 0.0 {
                continue;
            }
            let (sigma, _) = self.sigma_color(&(origin + d * (0.5 * (a + b))));
            if sigma == 0.0 {
                continue;
            }
            let n = ((len * samples_per_unit).ceil() as usize).clamp(1, MAX_INTERVAL_SAMPLES);
            let h = len / n as f64;
            let alpha = -(-sigma * h).exp_m1();
            for i in 0..n {
                let p = origin + d * (a + (i as f64 + 0.5) * h);
                let (_, c) = self.sigma_color(&p);
                color += c * (trans * alpha);
                trans *= 1.0 - alpha;
            }
            if trans < TRANSMITTANCE_CUTOFF {
                return color;
            }
        }
        color + self.environment.color(&(origin + d * t_env)) * trans
    }

    /// True when the ray meets a sphere primitive before leaving the ball of
    /// radius `t_b`.
    pub fn hits_foreground(&self, origin: &Vec3, dir: &Vec3, t_b: f64) -> bool {
        let d = dir.normalize();
        self.spheres.iter().any(|s| {
            let c = Vec3::from(s.center);
            if c.norm() > t_b {
                return false;
            }
            let oc = origin - c;
            let b = oc.dot(&d);
            let disc = b * b - (oc.norm_squared() - s.radius * s.radius);
            disc > 0.0 && -b + disc.sqrt() > 0.0
        })
    }
}

/// An analytic scene seen through the renderer's two-region interface.
pub struct AnalyticField<'a> {
    pub scene: &'a AnalyticScene,
    pub frame: SceneFrame,
}

impl RadianceField for AnalyticField<'_> {
    fn frame(&self) -> &SceneFrame {
        &self.frame
    }

    fn foreground(&self, p: &Vec3, _view_dir: &Vec3) -> (f64, Vec3) {
        self.scene.sigma_color(p)
    }

    fn background(&self, p: &Vec3, _wp: &WarpedPoint, _view_dir: &Vec3) -> (f64, Vec3) {
        self.scene.sigma_color(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene() -> AnalyticScene {
        AnalyticScene {
            name: "test".into(),
            spheres: vec![
                Sphere {
                    center: [2.0, 0.0, 0.0],
                    radius: 0.5,
                    sigma: 5.0,
                    texture: Texture::Constant([0.9, 0.1, 0.2]),
                },
                Sphere {
                    center: [0.0, 3.0, 0.0],
                    radius: 0.5,
                    sigma: 1e4,
                    texture: Texture::Constant([0.2, 0.8, 0.3]),
                },
            ],
            environment: Environment::Gradient {
                top: [0.8, 0.9, 1.0],
                bottom: [0.3, 0.2, 0.1],
                ripple: 0.1,
                phase: 0.0,
            },
            env_radius: 100.0,
            haze: None,
        }
    }

    #[test]
    fn pointwise_queries() {
        let s = scene();
        assert_eq!(s.sigma_color(&Vec3::new(0.0, 0.0, 1.0)).0, 0.0);
        let (sigma, c) = s.sigma_color(&Vec3::new(2.1, 0.0, 0.0));
        assert_eq!(sigma, 5.0);
        assert!((c - Vec3::new(0.9, 0.1, 0.2)).amax() < 1e-15);
        let p = Vec3::new(0.0, 0.0, 150.0);
        let (sigma, c) = s.sigma_color(&p);
        assert_eq!(sigma, ENV_SIGMA);
        assert_eq!(c, s.environment.color(&p));
    }

    #[test]
    fn miss_gives_environment_exactly() {
        let s = scene();
        let d = Vec3::new(0.0, -0.3, 1.0).normalize();
        let got = s.reference_render(&Vec3::zeros(), &d, 0.0, DEFAULT_SAMPLES_PER_UNIT);
        assert_eq!(got, s.environment.color(&(d * 100.0)));
    }

    #[test]
    fn opaque_sphere_saturates() {
        let s = scene();
        let got = s.reference_render(&Vec3::zeros(), &Vec3::y(), 0.0, DEFAULT_SAMPLES_PER_UNIT);
        assert!((got - Vec3::new(0.2, 0.8, 0.3)).amax() < 1e-6);
    }

    #[test]
    fn beer_lambert_chord() {
        let s = scene();
        let d = Vec3::x();
        let got = s.reference_render(&Vec3::zeros(), &d, 0.0, DEFAULT_SAMPLES_PER_UNIT);
        let w = 1.0 - (-5.0f64 * 1.0).exp();
        let want = Vec3::new(0.9, 0.1, 0.2) * w + s.environment.color(&(d * 100.0)) * (1.0 - w);
        assert!((got - want).amax() < 1e-6, "{got} vs {want}");
    }

    #[test]
    fn boundary_check() {
        let s = scene();
        assert!(s.respects_boundary(5.0));
        assert!(!s.respects_boundary(2.2));
        assert!(s.hits_foreground(&Vec3::zeros(), &Vec3::x(), 5.0));
        assert!(!s.hits_foreground(&Vec3::zeros(), &Vec3::z(), 5.0));
    }
}
