use serde::{Deserialize, Serialize};

use crate::field::{HybridField, ParamGroup};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.99;
pub const ADAM_EPS: f64 = 1e-8;

/// Adaptive-moment state for every tensor of a [`HybridField`], in the
/// order of [`HybridField::tensors`]. Grid and decoder groups keep separate
/// step counters so grid moments can restart after upsampling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t_grid: u64,
    pub t_decoder: u64,
}

impl Adam {
    pub fn new(field: &HybridField) -> Self {
        let shapes: Vec<usize> = field.tensors().iter().map(|(_, t)| t.len()).collect();
        Adam {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t_grid: 0,
            t_decoder: 0,
        }
    }

    /// Zeroes the grid moments, resized to the tensors of `field`.
    pub fn reset_grids(&mut self, field: &HybridField) {
        for (i, (group, t)) in field.tensors().iter().enumerate() {
            if *group == ParamGroup::Grid {
                self.m[i] = vec![0.0; t.len()];
                self.v[i] = vec![0.0; t.len()];
            }
        }
        self.t_grid = 0;
    }

    pub fn step(&mut self, field: &mut HybridField, grads: &HybridField, lr_grid: f64, lr_decoder: f64) {
        self.t_grid += 1;
        self.t_decoder += 1;
        let bias = |t: u64| (1.0 - BETA1.powf(t as f64), 1.0 - BETA2.powf(t as f64));
        let grid_bias = bias(self.t_grid);
        let dec_bias = bias(self.t_decoder);
        let g_all = grads.tensors();
        for (i, (group, p)) in field.tensors_mut().into_iter().enumerate() {
            let (lr, (b1, b2)) = match group {
                ParamGroup::Grid => (lr_grid, grid_bias),
                ParamGroup::Decoder => (lr_decoder, dec_bias),
            };
            let g = g_all[i].1;
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            debug_assert_eq!(p.len(), g.len());
            for j in 0..p.len() {
                m[j] = BETA1 * m[j] + (1.0 - BETA1) * g[j];
                v[j] = BETA2 * v[j] + (1.0 - BETA2) * g[j] * g[j];
                let mh = m[j] / b1;
                let vh = v[j] / b2;
                p[j] -= lr * mh / (vh.sqrt() + ADAM_EPS);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{init_field, FieldConfig};
    use crate::geometry::SceneFrame;

    fn small() -> HybridField {
        let cfg = FieldConfig {
            k_density: 1,
            k_appearance: 1,
            res_fg: [2, 2, 2],
            res_bg: [2, 2, 2],
            decoder_width: 2,
            view_octaves: 0,
            ..FieldConfig::default()
        };
        init_field(&cfg, SceneFrame::new(1.0, 2.0).unwrap(), 0).unwrap()
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut f = small();
        let before: Vec<f64> = f.tensors().iter().flat_map(|(_, t)| t.to_vec()).collect();
        let mut g = f.zeros_like();
        for (_, t) in g.tensors_mut() {
            t.fill(3.0);
        }
        let mut opt = Adam::new(&f);
        opt.step(&mut f, &g, 0.5, 0.25);
        let after: Vec<(ParamGroup, Vec<f64>)> = f.tensors().iter().map(|(g, t)| (*g, t.to_vec())).collect();
        let mut k = 0;
        for (group, t) in after {
            let lr = if group == ParamGroup::Grid { 0.5 } else { 0.25 };
            for x in t {
                assert!((before[k] - x - lr).abs() < 1e-6);
                k += 1;
            }
        }
    }
}
