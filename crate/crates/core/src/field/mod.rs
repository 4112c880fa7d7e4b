//! The learnable hybrid representation: a Euclidean factored volume inside
//! the boundary sphere, a spherical (theta, phi, s) one outside it, and a
//! color decoder for each.

mod decoder;
mod grid;
mod volume;

pub use decoder::{encode_direction, encoding_width, sigmoid, Decoder, DecoderTape};
pub use grid::{FactorPair, Lerp};
pub use volume::{FactorGroup, FactoredVolume, Layout, Stencil};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Region, SceneFrame, Vec3, WarpedPoint};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldConfig {
    /// Components per density factor group.
    pub k_density: usize,
    /// Components per appearance factor group.
    pub k_appearance: usize,
    /// Foreground (x, y, z) grid nodes.
    pub res_fg: [usize; 3],
    /// Background (theta, phi, s) grid nodes.
    pub res_bg: [usize; 3],
    pub decoder_width: usize,
    pub view_octaves: usize,
    /// Added to the density feature before the softplus.
    pub density_bias_init: f64,
    /// Factor entries start as `Normal(0, init_scale / sqrt(K))`.
    pub init_scale: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig {
            k_density: 8,
            k_appearance: 12,
            res_fg: [32, 32, 32],
            res_bg: [32, 64, 16],
            decoder_width: 64,
            view_octaves: 4,
            density_bias_init: -10.0,
            init_scale: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    Grid,
    Decoder,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HybridField {
    pub frame: SceneFrame,
    pub foreground: FactoredVolume,
    pub fg_decoder: Decoder,
    pub background: FactoredVolume,
    pub bg_decoder: Decoder,
    pub density_bias: f64,
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn init_field(config: &FieldConfig, frame: SceneFrame, seed: u64) -> Result<HybridField> {
    if config.k_density == 0 || config.k_appearance == 0 {
        return Err(Error::Config("component count K must be >= 1".into()));
    }
    if config.decoder_width == 0 {
        return Err(Error::Config("decoder width must be >= 1".into()));
    }
    let mut foreground = FactoredVolume::zeros(
        Layout::EuclideanVm,
        config.res_fg,
        config.k_density,
        config.k_appearance,
        frame.boundary_radius,
    )?;
    let mut background = FactoredVolume::zeros(
        Layout::SphericalVm,
        config.res_bg,
        config.k_density,
        config.k_appearance,
        frame.boundary_radius,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for vol in [&mut foreground, &mut background] {
        for (group_k, pairs) in [
            (config.k_density, &mut vol.density),
            (config.k_appearance, &mut vol.appearance),
        ] {
            let std = config.init_scale / (group_k as f64).sqrt();
            let normal = Normal::new(0.0, std)
                .map_err(|e| Error::Config(format!("bad init scale: {e}")))?;
            for p in pairs.iter_mut() {
                for x in p.matrix.iter_mut().chain(p.vector.iter_mut()) {
                    *x = normal.sample(&mut rng);
                }
            }
        }
    }
    let fg_decoder = Decoder::init(
        foreground.appearance_width(),
        config.view_octaves,
        config.decoder_width,
        &mut rng,
    );
    let bg_decoder = Decoder::init(
        background.appearance_width(),
        config.view_octaves,
        config.decoder_width,
        &mut rng,
    );
    Ok(HybridField {
        frame,
        foreground,
        fg_decoder,
        background,
        bg_decoder,
        density_bias: config.density_bias_init,
    })
}

impl HybridField {
    pub fn volume(&self, region: Region) -> &FactoredVolume {
        match region {
            Region::Foreground => &self.foreground,
            Region::Background => &self.background,
        }
    }

    pub fn decoder(&self, region: Region) -> &Decoder {
        match region {
            Region::Foreground => &self.fg_decoder,
            Region::Background => &self.bg_decoder,
        }
    }

    fn eval_region(&self, region: Region, coords: &Vec3, view_dir: &Vec3) -> (f64, Vec3) {
        let vol = self.volume(region);
        let st = vol.stencil(coords);
        let sigma = softplus(vol.density_feature(&st) + self.density_bias);
        let mut feat = vec![0.0; vol.appearance_width()];
        vol.appearance_features(&st, &mut feat);
        (sigma, self.decoder(region).decode(&feat, view_dir))
    }

    /// Density and color at a point inside the boundary sphere.
    pub fn eval_foreground(&self, p: &Vec3, view_dir: &Vec3) -> (f64, Vec3) {
        self.eval_region(Region::Foreground, p, view_dir)
    }

    pub fn eval_background(&self, wp: &WarpedPoint, view_dir: &Vec3) -> (f64, Vec3) {
        debug_assert_eq!(wp.region, Region::Background);
        self.eval_region(Region::Background, &wp.coords, view_dir)
    }

    /// Grids and decoders replaced with zeros of the same shape; used as the
    /// gradient accumulator.
    pub fn zeros_like(&self) -> HybridField {
        HybridField {
            frame: self.frame,
            foreground: self.foreground.zeros_like(),
            fg_decoder: self.fg_decoder.zeros_like(),
            background: self.background.zeros_like(),
            bg_decoder: self.bg_decoder.zeros_like(),
            density_bias: 0.0,
        }
    }

    /// Every learnable tensor in a fixed order.
    pub fn tensors(&self) -> Vec<(ParamGroup, &[f64])> {
        let mut out: Vec<(ParamGroup, &[f64])> = Vec::new();
        out.extend(self.foreground.tensors().map(|t| (ParamGroup::Grid, t)));
        out.extend(self.background.tensors().map(|t| (ParamGroup::Grid, t)));
        out.extend(self.fg_decoder.tensors().map(|t| (ParamGroup::Decoder, t)));
        out.extend(self.bg_decoder.tensors().map(|t| (ParamGroup::Decoder, t)));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(ParamGroup, &mut Vec<f64>)> {
        let mut out: Vec<(ParamGroup, &mut Vec<f64>)> = Vec::new();
        out.extend(self.foreground.tensors_mut().map(|t| (ParamGroup::Grid, t)));
        out.extend(self.background.tensors_mut().map(|t| (ParamGroup::Grid, t)));
        out.extend(self.fg_decoder.tensors_mut().map(|t| (ParamGroup::Decoder, t)));
        out.extend(self.bg_decoder.tensors_mut().map(|t| (ParamGroup::Decoder, t)));
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Resamples both volumes onto finer grids.
    pub fn upsample(&self, res_fg: [usize; 3], res_bg: [usize; 3]) -> Result<HybridField> {
        Ok(HybridField {
            foreground: self.foreground.upsample(res_fg)?,
            background: self.background.upsample(res_bg)?,
            ..self.clone()
        })
    }
}
