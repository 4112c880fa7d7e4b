//! Discrete volume rendering with the foreground/background composite.
//!
//! Both segments use the alpha-compositing form `alpha_i = 1 - exp(-sigma_i
//! delta_i)`, `w_i = T_i alpha_i`, `T_{i+1} = T_i (1 - alpha_i)`. The
//! background segment starts from the transmittance left after the
//! foreground, and whatever transmittance survives the background is black.

mod batch;
mod output;

pub use batch::{trace_batch, BatchTrace};
pub use output::{
    colorize_depth, linear_to_srgb, read_fdepth, read_png_linear, srgb_to_linear, write_fdepth,
    write_png, write_png_rgb8, DEPTH_SENTINEL_COLOR, FDEPTH_MAGIC,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::field::HybridField;
use crate::geometry::{pixel_to_ray, spherical_coords, PosedCamera, SceneFrame, Vec3, WarpedPoint};
use crate::sampler::{sample_foreground, sample_ray, SampleBatch};

/// Reported when the foreground weight is too small to define a depth.
pub const NO_DEPTH: f64 = -1.0;
const MIN_DEPTH_WEIGHT: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderOutput {
    pub color: Vec3,
    /// Transmittance at the boundary sphere.
    pub fg_transmittance: f64,
    /// Weight-normalized foreground depth, or [`NO_DEPTH`].
    pub fg_depth: f64,
    pub fg_weight: f64,
    pub bg_weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Quadrature {
    pub color: Vec3,
    pub t_out: f64,
    pub weights: Vec<f64>,
}

#[inline]
pub fn alpha(sigma: f64, delta: f64) -> f64 {
    -(-sigma * delta).exp_m1()
}

/// Alpha-composites one segment starting from transmittance `t_in`.
pub fn quadrature_segment(sigmas: &[f64], colors: &[Vec3], deltas: &[f64], t_in: f64) -> Quadrature {
    let mut t = t_in;
    let mut color = Vec3::zeros();
    let mut weights = Vec::with_capacity(sigmas.len());
    for ((&s, c), &d) in sigmas.iter().zip(colors).zip(deltas) {
        let a = alpha(s, d);
        let w = t * a;
        color += c * w;
        weights.push(w);
        t *= 1.0 - a;
    }
    Quadrature {
        color,
        t_out: t,
        weights,
    }
}

/// Anything that yields density and color on both sides of the boundary.
pub trait RadianceField: Sync {
    fn frame(&self) -> &SceneFrame;
    fn foreground(&self, p: &Vec3, view_dir: &Vec3) -> (f64, Vec3);
    /// `wp` holds the spherical coordinates of `p`.
    fn background(&self, p: &Vec3, wp: &WarpedPoint, view_dir: &Vec3) -> (f64, Vec3);
}

impl RadianceField for HybridField {
    fn frame(&self) -> &SceneFrame {
        &self.frame
    }

    fn foreground(&self, p: &Vec3, view_dir: &Vec3) -> (f64, Vec3) {
        self.eval_foreground(p, view_dir)
    }

    fn background(&self, _p: &Vec3, wp: &WarpedPoint, view_dir: &Vec3) -> (f64, Vec3) {
        self.eval_background(wp, view_dir)
    }
}

fn eval_segments<F: RadianceField + ?Sized>(
    field: &F,
    ray: &crate::geometry::Ray,
    samples: &SampleBatch,
    view_dir: &Vec3,
) -> [(Vec<f64>, Vec<Vec3>); 2] {
    let frame = field.frame();
    let fg = samples
        .fg_depths
        .iter()
        .map(|&t| field.foreground(&ray.at(t), view_dir))
        .unzip();
    let bg = samples
        .bg_depths
        .iter()
        .map(|&t| {
            let p = ray.at(t);
            field.background(&p, &spherical_coords(&p, frame), view_dir)
        })
        .unzip();
    [fg, bg]
}

fn expected_depth(weights: &[f64], depths: &[f64]) -> (f64, f64) {
    let sum: f64 = weights.iter().sum();
    let depth = if sum < MIN_DEPTH_WEIGHT {
        NO_DEPTH
    } else {
        weights.iter().zip(depths).map(|(w, t)| w * t).sum::<f64>() / sum
    };
    (sum, depth)
}

/// Renders one ray: the foreground segment from `T = 1`, then the
/// background segment from the foreground's outgoing transmittance.
pub fn composite_render<F: RadianceField + ?Sized>(
    field: &F,
    ray: &crate::geometry::Ray,
    samples: &SampleBatch,
    view_dir: &Vec3,
) -> RenderOutput {
    let [(sf, cf), (sb, cb)] = eval_segments(field, ray, samples, view_dir);
    let fg = quadrature_segment(&sf, &cf, &samples.fg_deltas, 1.0);
    let bg = quadrature_segment(&sb, &cb, &samples.bg_deltas, fg.t_out);
    let (fg_weight, fg_depth) = expected_depth(&fg.weights, &samples.fg_depths);
    RenderOutput {
        color: fg.color + bg.color,
        fg_transmittance: fg.t_out,
        fg_depth,
        fg_weight,
        bg_weight: bg.weights.iter().sum(),
    }
}

/// Transmittance through the foreground samples only.
pub fn fg_transmittance<F: RadianceField + ?Sized>(
    field: &F,
    ray: &crate::geometry::Ray,
    fg_depths: &[f64],
    fg_deltas: &[f64],
) -> f64 {
    let dir = ray.direction;
    let sigmas: Vec<f64> = fg_depths
        .iter()
        .map(|&t| field.foreground(&ray.at(t), &dir).0)
        .collect();
    let colors = vec![Vec3::zeros(); sigmas.len()];
    quadrature_segment(&sigmas, &colors, fg_deltas, 1.0).t_out
}

/// Dense foreground transmittance with `n` midpoint samples.
pub fn fg_transmittance_dense<F: RadianceField + ?Sized>(field: &F, ray: &crate::geometry::Ray, n: usize) -> f64 {
    let (d, w) = sample_foreground::<rand_chacha::ChaCha8Rng>(ray, n, None);
    fg_transmittance(field, ray, &d, &w)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderOptions {
    pub n_fg: usize,
    pub m_bg: usize,
    /// Samples whose weight is at or below this skip color decoding.
    pub weight_threshold: f64,
    /// Rays traced per batch.
    pub chunk: usize,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            n_fg: 128,
            m_bg: 128,
            weight_threshold: 1e-4,
            chunk: 512,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedImage {
    pub width: u32,
    pub height: u32,
    /// Linear RGB, row-major.
    pub color: Vec<Vec3>,
    pub fg_depth: Vec<f64>,
    /// Transmittance at the boundary; 1 outside the image circle.
    pub fg_transmittance: Vec<f64>,
}

/// Deterministic (unjittered) render of every pixel center. Pixels outside a
/// fisheye image circle come out black with no depth.
pub fn render_image(field: &HybridField, cam: &PosedCamera, opts: &RenderOptions) -> RenderedImage {
    let (w, h) = (cam.width as usize, cam.height as usize);
    let pixels: Vec<usize> = (0..w * h).collect();
    let chunk = opts.chunk.max(1);
    let per_chunk: Vec<Vec<(Vec3, f64, f64)>> = pixels
        .par_chunks(chunk)
        .map(|idx| {
            let mut rays = Vec::with_capacity(idx.len());
            let mut slots = Vec::with_capacity(idx.len());
            for &i in idx {
                let (u, v) = ((i % w) as f64 + 0.5, (i / w) as f64 + 0.5);
                match pixel_to_ray(cam, u, v, &field.frame) {
                    Ok(r) => {
                        slots.push(Some(rays.len()));
                        rays.push(r);
                    }
                    Err(_) => slots.push(None),
                }
            }
            let samples: Vec<SampleBatch> = rays
                .iter()
                .map(|r| {
                    sample_ray::<rand_chacha::ChaCha8Rng>(r, field.frame.boundary_radius, opts.n_fg, opts.m_bg, None)
                })
                .collect();
            let trace = trace_batch(field, &rays, &samples, opts.weight_threshold);
            slots
                .iter()
                .map(|s| match s {
                    Some(k) => {
                        let o = &trace.outputs[*k];
                        (o.color, o.fg_depth, o.fg_transmittance)
                    }
                    None => (Vec3::zeros(), NO_DEPTH, 1.0),
                })
                .collect()
        })
        .collect();
    let mut img = RenderedImage {
        width: cam.width,
        height: cam.height,
        color: Vec::with_capacity(w * h),
        fg_depth: Vec::with_capacity(w * h),
        fg_transmittance: Vec::with_capacity(w * h),
    };
    for (c, d, t) in per_chunk.into_iter().flatten() {
        img.color.push(c);
        img.fg_depth.push(d);
        img.fg_transmittance.push(t);
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::LN_2;

    #[test]
    fn single_sample_half_alpha() {
        let q = quadrature_segment(&[LN_2], &[Vec3::x()], &[1.0], 1.0);
        assert_abs_diff_eq!(q.color, Vec3::new(0.5, 0.0, 0.0), epsilon = 1e-15);
        assert_abs_diff_eq!(q.t_out, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn cascaded_alpha() {
        let q = quadrature_segment(&[LN_2, LN_2], &[Vec3::x(), Vec3::y()], &[1.0, 1.0], 1.0);
        assert_abs_diff_eq!(q.color, Vec3::new(0.5, 0.25, 0.0), epsilon = 1e-15);
        assert_abs_diff_eq!(q.t_out, 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(q.weights[1], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn empty_space_passes_through() {
        let q = quadrature_segment(&[0.0; 3], &[Vec3::repeat(1.0); 3], &[1.0, 2.0, 3.0], 0.7);
        assert_eq!(q.color, Vec3::zeros());
        assert_eq!(q.t_out, 0.7);
    }

    #[test]
    fn depth_sentinel() {
        assert_eq!(expected_depth(&[1e-5, 2e-5], &[1.0, 2.0]).1, NO_DEPTH);
        let (s, d) = expected_depth(&[0.25, 0.75], &[1.0, 2.0]);
        assert_eq!(s, 1.0);
        assert_abs_diff_eq!(d, 1.75, epsilon = 1e-15);
    }
}
