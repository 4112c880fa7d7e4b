//! On-disk dataset: a JSON manifest listing posed cameras next to their
//! PNG images.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Matrix4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PosedCamera, Projection, Vec3, DEFAULT_BOUNDARY_MULTIPLIER};
use crate::renderer::read_png_linear;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;
/// Rotation blocks in a manifest may deviate from orthonormal by this much.
pub const MANIFEST_ROTATION_TOL: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraEntry {
    /// Relative to the manifest directory.
    pub image: String,
    pub role: Role,
    pub model: Projection,
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Camera-to-world, row-major.
    pub c2w: [f64; 16],
}

fn default_multiplier() -> f64 {
    DEFAULT_BOUNDARY_MULTIPLIER
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    #[serde(default)]
    pub rig_radius: Option<f64>,
    #[serde(default = "default_multiplier")]
    pub boundary_multiplier: f64,
    pub cameras: Vec<CameraEntry>,
}

/// Nearest rotation in the Frobenius sense.
fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut out = u * vt;
    if out.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        out = u * vt;
    }
    out
}

impl CameraEntry {
    pub fn from_camera(cam: &PosedCamera, image: String, role: Role) -> Self {
        let mut c2w = [0.0; 16];
        for (i, v) in c2w.iter_mut().enumerate() {
            *v = cam.c2w[(i / 4, i % 4)];
        }
        CameraEntry {
            image,
            role,
            model: cam.model,
            width: cam.width,
            height: cam.height,
            fx: cam.fx,
            fy: cam.fy,
            cx: cam.cx,
            cy: cam.cy,
            c2w,
        }
    }

    /// The posed camera, with its rotation snapped to the nearest
    /// orthonormal matrix.
    pub fn camera(&self) -> Result<PosedCamera> {
        let m = Matrix4::from_row_slice(&self.c2w);
        let raw = PosedCamera {
            model: self.model,
            width: self.width,
            height: self.height,
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            c2w: m,
        };
        raw.validate(MANIFEST_ROTATION_TOL)
            .map_err(|e| Error::Data(format!("camera {}: {e}", self.image)))?;
        let mut c2w = m;
        c2w.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&orthonormalize(&raw.rotation()));
        PosedCamera::new(
            self.model,
            self.width,
            self.height,
            self.fx,
            self.fy,
            self.cx,
            self.cy,
            c2w,
        )
    }
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::Data(format!(
                "unsupported manifest version {} (expected {MANIFEST_VERSION})",
                self.version
            )));
        }
        if !self.cameras.iter().any(|c| c.role == Role::Train) {
            return Err(Error::Data("manifest has no train camera".into()));
        }
        if !(self.boundary_multiplier > 1.0) {
            return Err(Error::Data(format!(
                "boundary_multiplier must exceed 1, got {}",
                self.boundary_multiplier
            )));
        }
        if let Some(r) = self.rig_radius {
            if !(r > 0.0) {
                return Err(Error::Data(format!("rig_radius must be positive, got {r}")));
            }
        }
        for c in &self.cameras {
            c.camera()?;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: DatasetManifest = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Json(j) => Error::Data(format!("{}: {j}", path.display())),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn indices(&self, role: Role) -> Vec<usize> {
        (0..self.cameras.len())
            .filter(|&i| self.cameras[i].role == role)
            .collect()
    }
}

/// A manifest with its cameras and linear-RGB images loaded.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    pub cameras: Vec<PosedCamera>,
    pub images: Vec<Vec<Vec3>>,
}

impl Dataset {
    /// Loads `dir/manifest.json` and every image it references.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = DatasetManifest::load(&dir.join(MANIFEST_FILE))?;
        let mut cameras = Vec::with_capacity(manifest.cameras.len());
        let mut images = Vec::with_capacity(manifest.cameras.len());
        for entry in &manifest.cameras {
            let cam = entry.camera()?;
            let path = dir.join(&entry.image);
            if !path.is_file() {
                return Err(Error::Data(format!("missing image {}", path.display())));
            }
            let (w, h, img) = read_png_linear(&path)?;
            if (w, h) != (cam.width, cam.height) {
                return Err(Error::Data(format!(
                    "{} is {w}x{h}, manifest says {}x{}",
                    path.display(),
                    cam.width,
                    cam.height
                )));
            }
            cameras.push(cam);
            images.push(img);
        }
        Ok(Dataset {
            root: dir.to_path_buf(),
            manifest,
            cameras,
            images,
        })
    }
}
