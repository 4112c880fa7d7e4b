//! `HYBRIDFIELD-v1` checkpoints: the magic line, a little-endian u64 header
//! length, a JSON header, then every tensor as little-endian f64 in the
//! order of [`HybridField::tensors`], followed by the optimizer moments.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Decoder, FactoredVolume, HybridField, Layout};
use crate::geometry::SceneFrame;
use crate::training::{Adam, TrainConfig};

pub const CHECKPOINT_MAGIC: &[u8] = b"HYBRIDFIELD-v1\n";

/// State at the start of step `step`.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub step: usize,
    pub field: HybridField,
    pub optimizer: Option<Adam>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DecoderShape {
    feature_width: usize,
    octaves: usize,
    width: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: TrainConfig,
    step: usize,
    frame: SceneFrame,
    res_fg: [usize; 3],
    res_bg: [usize; 3],
    k_density: usize,
    k_appearance: usize,
    fg_decoder: DecoderShape,
    bg_decoder: DecoderShape,
    density_bias: f64,
    tensor_lengths: Vec<usize>,
    optimizer_steps: Option<[u64; 2]>,
}

fn shape(d: &Decoder) -> DecoderShape {
    DecoderShape {
        feature_width: d.feature_width,
        octaves: d.octaves,
        width: d.width,
    }
}

fn push_f64s(buf: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let f = &self.field;
        let header = Header {
            config: self.config.clone(),
            step: self.step,
            frame: f.frame,
            res_fg: f.foreground.resolution,
            res_bg: f.background.resolution,
            k_density: f.foreground.density_comps(),
            k_appearance: f.foreground.appearance_comps(),
            fg_decoder: shape(&f.fg_decoder),
            bg_decoder: shape(&f.bg_decoder),
            density_bias: f.density_bias,
            tensor_lengths: f.tensors().iter().map(|(_, t)| t.len()).collect(),
            optimizer_steps: self.optimizer.as_ref().map(|a| [a.t_grid, a.t_decoder]),
        };
        let json = serde_json::to_vec(&header)?;
        let mut buf = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
        buf.extend_from_slice(&json);
        for (_, t) in f.tensors() {
            push_f64s(&mut buf, t);
        }
        if let Some(a) = &self.optimizer {
            for t in a.m.iter().chain(&a.v) {
                push_f64s(&mut buf, t);
            }
        }
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let rest = bytes
            .strip_prefix(CHECKPOINT_MAGIC)
            .ok_or_else(|| bad("missing HYBRIDFIELD-v1 magic"))?;
        if rest.len() < 8 {
            return Err(bad("truncated header"));
        }
        let hlen = u64::from_le_bytes(rest[..8].try_into().unwrap()) as usize;
        let rest = &rest[8..];
        if rest.len() < hlen {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&rest[..hlen])
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        let mut data = rest[hlen..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        if (rest.len() - hlen) % 8 != 0 {
            return Err(bad("payload is not a whole number of f64 values"));
        }

        let vol = |layout, res| {
            FactoredVolume::zeros(
                layout,
                res,
                header.k_density,
                header.k_appearance,
                header.frame.boundary_radius,
            )
        };
        let dec = |s: &DecoderShape| Decoder::zeros(s.feature_width, s.octaves, s.width);
        let mut field = HybridField {
            frame: header.frame,
            foreground: vol(Layout::EuclideanVm, header.res_fg)?,
            fg_decoder: dec(&header.fg_decoder),
            background: vol(Layout::SphericalVm, header.res_bg)?,
            bg_decoder: dec(&header.bg_decoder),
            density_bias: header.density_bias,
        };
        let lengths: Vec<usize> = field.tensors().iter().map(|(_, t)| t.len()).collect();
        if lengths != header.tensor_lengths {
            return Err(bad("tensor shapes disagree with header"));
        }
        let mut fill = |dst: &mut Vec<f64>| -> Result<()> {
            for x in dst.iter_mut() {
                *x = data.next().ok_or_else(|| bad("truncated tensor data"))?;
            }
            Ok(())
        };
        for (_, t) in field.tensors_mut() {
            fill(t)?;
        }
        let optimizer = match header.optimizer_steps {
            None => None,
            Some([t_grid, t_decoder]) => {
                let mut a = Adam::new(&field);
                for t in a.m.iter_mut().chain(a.v.iter_mut()) {
                    fill(t)?;
                }
                a.t_grid = t_grid;
                a.t_decoder = t_decoder;
                Some(a)
            }
        };
        if data.next().is_some() {
            return Err(bad("trailing data"));
        }
        Ok(Checkpoint {
            config: header.config,
            step: header.step,
            field,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::init_field;

    fn ckpt(with_opt: bool) -> Checkpoint {
        let config = TrainConfig {
            res_fg: [[3, 4, 5], [6, 6, 6]],
            res_bg: [[3, 4, 2], [4, 4, 4]],
            k_density: 2,
            k_appearance: 2,
            decoder_width: 4,
            view_octaves: 1,
            ..TrainConfig::default()
        };
        let frame = SceneFrame::new(0.5, 5.0).unwrap();
        let field = init_field(&config.field_config(), frame, 4).unwrap();
        let mut optimizer = Adam::new(&field);
        optimizer.m[0][1] = 0.25;
        optimizer.t_grid = 7;
        Checkpoint {
            config,
            step: 123,
            field,
            optimizer: with_opt.then_some(optimizer),
        }
    }

    #[test]
    fn roundtrip() {
        for with_opt in [true, false] {
            let c = ckpt(with_opt);
            let bytes = c.to_bytes().unwrap();
            assert!(bytes.starts_with(CHECKPOINT_MAGIC));
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.to_bytes().unwrap(), bytes);
        }
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let bytes = ckpt(true).to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 8]).is_err());
        assert!(Checkpoint::from_bytes(b"NOTACHECKPOINT").is_err());
        let mut extra = bytes.clone();
        extra.extend_from_slice(&[0u8; 8]);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }
}
