//! Batched forward pass over many rays with a tape for reverse-mode
//! gradients. Evaluation renders and training share this path.
//!
//! Colors are decoded only for samples whose compositing weight exceeds a
//! threshold; skipped samples count as black in both directions, so the
//! gradient is exact for the function actually evaluated.

use super::{alpha, expected_depth, RenderOutput};
use crate::field::{encode_direction, sigmoid, softplus, DecoderTape, FactoredVolume, HybridField};
use crate::geometry::{spherical_coords, Ray, Vec3};
use crate::sampler::SampleBatch;

const INACTIVE: u32 = u32::MAX;

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Default)]
pub struct BatchTrace {
    pub outputs: Vec<RenderOutput>,
    ray_start: Vec<usize>,
    ray_nfg: Vec<usize>,
    // per sample, foreground samples of a ray first
    coords: Vec<Vec3>,
    delta: Vec<f64>,
    pre: Vec<f64>,
    alpha: Vec<f64>,
    trans: Vec<f64>,
    weight: Vec<f64>,
    row: Vec<u32>,
    // per decoded row
    fg_row_sample: Vec<usize>,
    bg_row_sample: Vec<usize>,
    fg_tape: DecoderTape,
    bg_tape: DecoderTape,
}

impl BatchTrace {
    pub fn sample_count(&self) -> usize {
        self.coords.len()
    }

    pub fn decoded_count(&self) -> usize {
        self.fg_tape.rows + self.bg_tape.rows
    }
}

/// Forward pass over `rays` with their `samples`. `weight_threshold <= 0`
/// decodes every sample.
pub fn trace_batch(
    field: &HybridField,
    rays: &[Ray],
    samples: &[SampleBatch],
    weight_threshold: f64,
) -> BatchTrace {
    assert_eq!(rays.len(), samples.len());
    let total: usize = samples.iter().map(|s| s.len()).sum();
    let mut tr = BatchTrace {
        outputs: Vec::with_capacity(rays.len()),
        ray_start: Vec::with_capacity(rays.len() + 1),
        ray_nfg: Vec::with_capacity(rays.len()),
        coords: Vec::with_capacity(total),
        delta: Vec::with_capacity(total),
        pre: Vec::with_capacity(total),
        alpha: Vec::with_capacity(total),
        trans: Vec::with_capacity(total),
        weight: Vec::with_capacity(total),
        row: Vec::with_capacity(total),
        ..BatchTrace::default()
    };
    let fg_vol = &field.foreground;
    let bg_vol = &field.background;
    let fg_din = field.fg_decoder.input_width();
    let bg_din = field.bg_decoder.input_width();
    let mut fg_x: Vec<f64> = Vec::new();
    let mut bg_x: Vec<f64> = Vec::new();
    let mut fg_enc = vec![0.0; fg_din - field.fg_decoder.feature_width];
    let mut bg_enc = vec![0.0; bg_din - field.bg_decoder.feature_width];
    let frame = &field.frame;

    for (ray, s) in rays.iter().zip(samples) {
        let start = tr.coords.len();
        tr.ray_start.push(start);
        tr.ray_nfg.push(s.fg_depths.len());
        for &t in &s.fg_depths {
            tr.coords.push(ray.at(t));
        }
        for &t in &s.bg_depths {
            tr.coords.push(spherical_coords(&ray.at(t), frame).coords);
        }
        tr.delta.extend_from_slice(&s.fg_deltas);
        tr.delta.extend_from_slice(&s.bg_deltas);
        let nfg = s.fg_depths.len();
        let mut t = 1.0;
        for i in start..tr.coords.len() {
            let vol = if i - start < nfg { fg_vol } else { bg_vol };
            let st = vol.stencil(&tr.coords[i]);
            let pre = vol.density_feature(&st) + field.density_bias;
            let a = alpha(softplus(pre), tr.delta[i]);
            tr.pre.push(pre);
            tr.alpha.push(a);
            tr.trans.push(t);
            tr.weight.push(t * a);
            t *= 1.0 - a;
        }
        encode_direction(&ray.direction, field.fg_decoder.octaves, &mut fg_enc);
        encode_direction(&ray.direction, field.bg_decoder.octaves, &mut bg_enc);
        for i in start..tr.coords.len() {
            if weight_threshold > 0.0 && tr.weight[i] <= weight_threshold {
                tr.row.push(INACTIVE);
                continue;
            }
            let (vol, x, rows, enc, fw) = if i - start < nfg {
                (fg_vol, &mut fg_x, &mut tr.fg_row_sample, &fg_enc, field.fg_decoder.feature_width)
            } else {
                (bg_vol, &mut bg_x, &mut tr.bg_row_sample, &bg_enc, field.bg_decoder.feature_width)
            };
            tr.row.push(rows.len() as u32);
            rows.push(i);
            let base = x.len();
            x.resize(base + fw, 0.0);
            vol.appearance_features(&vol.stencil(&tr.coords[i]), &mut x[base..]);
            x.extend_from_slice(enc);
        }
    }
    tr.ray_start.push(tr.coords.len());

    tr.fg_tape = field.fg_decoder.forward(fg_x);
    tr.bg_tape = field.bg_decoder.forward(bg_x);

    for r in 0..rays.len() {
        let (start, end, nfg) = (tr.ray_start[r], tr.ray_start[r + 1], tr.ray_nfg[r]);
        let mut color = Vec3::zeros();
        for i in start..end {
            if let Some(c) = tr.sample_color(i, i - start < nfg) {
                color += c * tr.weight[i];
            }
        }
        let fg_weights = &tr.weight[start..start + nfg];
        let (fg_weight, fg_depth) = expected_depth(fg_weights, &samples[r].fg_depths);
        let fg_t = if nfg == 0 {
            1.0
        } else {
            tr.trans[start + nfg - 1] * (1.0 - tr.alpha[start + nfg - 1])
        };
        tr.outputs.push(RenderOutput {
            color,
            fg_transmittance: fg_t,
            fg_depth,
            fg_weight,
            bg_weight: tr.weight[start + nfg..end].iter().sum(),
        });
    }
    tr
}

impl BatchTrace {
    fn sample_color(&self, i: usize, is_fg: bool) -> Option<Vec3> {
        let row = self.row[i];
        if row == INACTIVE {
            return None;
        }
        let tape = if is_fg { &self.fg_tape } else { &self.bg_tape };
        let o = &tape.out[row as usize * 3..row as usize * 3 + 3];
        Some(Vec3::new(o[0], o[1], o[2]))
    }

    /// Accumulates into `grads` the gradient of a loss whose partials are
    /// `d_color[r]` w.r.t. each ray's color and `d_fg_trans[r]` w.r.t. each
    /// ray's foreground transmittance.
    pub fn backward(
        &self,
        field: &HybridField,
        d_color: &[Vec3],
        d_fg_trans: &[f64],
        grads: &mut HybridField,
    ) {
        let mut d_fg_out = vec![0.0; self.fg_tape.rows * 3];
        let mut d_bg_out = vec![0.0; self.bg_tape.rows * 3];
        for r in 0..self.outputs.len() {
            let (start, end, nfg) = (self.ray_start[r], self.ray_start[r + 1], self.ray_nfg[r]);
            let gc = d_color[r];
            let g_t = d_fg_trans[r];
            let t_fg = self.outputs[r].fg_transmittance;
            // suffix sum of w_j (c_j . gc) over samples after i
            let mut suffix = 0.0;
            for i in (start..end).rev() {
                let is_fg = i - start < nfg;
                let e = match self.sample_color(i, is_fg) {
                    Some(c) => {
                        let row = self.row[i] as usize;
                        let w = self.weight[i];
                        let out = if is_fg { &mut d_fg_out } else { &mut d_bg_out };
                        out[row * 3] = w * gc.x;
                        out[row * 3 + 1] = w * gc.y;
                        out[row * 3 + 2] = w * gc.z;
                        c.dot(&gc)
                    }
                    None => 0.0,
                };
                let t_after = self.trans[i] * (1.0 - self.alpha[i]);
                let mut d_sigma = self.delta[i] * (t_after * e - suffix);
                if is_fg {
                    d_sigma -= g_t * self.delta[i] * t_fg;
                }
                suffix += self.weight[i] * e;
                let d_pre = d_sigma * sigmoid(self.pre[i]);
                if d_pre != 0.0 {
                    let (vol, gvol) = if is_fg {
                        (&field.foreground, &mut grads.foreground)
                    } else {
                        (&field.background, &mut grads.background)
                    };
                    vol.scatter_density(gvol, &vol.stencil(&self.coords[i]), d_pre);
                }
            }
        }
        let dx = field.fg_decoder.backward(&self.fg_tape, &d_fg_out, &mut grads.fg_decoder);
        scatter_rows(
            &field.foreground,
            &mut grads.foreground,
            &self.fg_row_sample,
            &self.coords,
            &dx,
            field.fg_decoder.input_width(),
            field.fg_decoder.feature_width,
        );
        let dx = field.bg_decoder.backward(&self.bg_tape, &d_bg_out, &mut grads.bg_decoder);
        scatter_rows(
            &field.background,
            &mut grads.background,
            &self.bg_row_sample,
            &self.coords,
            &dx,
            field.bg_decoder.input_width(),
            field.bg_decoder.feature_width,
        );
    }
}

fn scatter_rows(
    vol: &FactoredVolume,
    grad: &mut FactoredVolume,
    row_sample: &[usize],
    coords: &[Vec3],
    dx: &[f64],
    din: usize,
    feature_width: usize,
) {
    for (row, &i) in row_sample.iter().enumerate() {
        let g = &dx[row * din..row * din + feature_width];
        vol.scatter_appearance(grad, &vol.stencil(&coords[i]), g);
    }
}
