//! Synthetic ground truth: camera rigs, analytic scenes and dataset export.

mod analytic;
mod rig;

pub use analytic::{
    AnalyticField, AnalyticScene, Environment, Haze, Sphere, Texture, DEFAULT_SAMPLES_PER_UNIT,
    ENV_SIGMA, MAX_INTERVAL_SAMPLES,
};
pub use rig::{center_rig, geodesic_vertices, make_rig, make_rig_with, RigIntrinsics};

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::dataset::{CameraEntry, DatasetManifest, Role, MANIFEST_FILE, MANIFEST_VERSION};
use crate::error::{Error, Result};
use crate::geometry::{PosedCamera, Vec3, DEFAULT_BOUNDARY_MULTIPLIER};
use crate::renderer::write_png;
use crate::sampler::mix;

pub const PRESETS: [&str; 3] = ["goat-like", "two-object", "haze"];
pub const SCENE_FILE: &str = "scene.json";
/// The environment shell sits this many nominal boundary radii out.
pub const ENV_RADIUS_FACTOR: f64 = 100.0;

fn phase_for(seed: u64) -> f64 {
    (mix(seed) >> 11) as f64 / (1u64 << 53) as f64 * std::f64::consts::TAU
}

/// Builds a named preset for a rig of radius `rig_radius` centered on the
/// origin. `seed` rotates the environment pattern.
pub fn preset(name: &str, rig_radius: f64, seed: u64) -> Result<AnalyticScene> {
    let t_b = DEFAULT_BOUNDARY_MULTIPLIER * rig_radius;
    let env_radius = ENV_RADIUS_FACTOR * t_b;
    let phase = phase_for(seed);
    let s = rig_radius / 0.54;
    let at = |x: f64, y: f64, z: f64| [x * s, y * s, z * s];
    let gradient = Environment::Gradient {
        top: [0.55, 0.7, 0.95],
        bottom: [0.35, 0.3, 0.25],
        ripple: 0.15,
        phase,
    };
    let scene = match name {
        "goat-like" => AnalyticScene {
            name: name.into(),
            spheres: vec![Sphere {
                center: at(0.5, 1.4, 1.6),
                radius: 0.6 * s,
                sigma: 200.0,
                texture: Texture::Radial {
                    base: [0.75, 0.65, 0.5],
                    amp: [0.2, 0.2, 0.25],
                    axis: [0.0, 0.0, 1.0],
                },
            }],
            environment: Environment::Checker {
                a: [0.2, 0.35, 0.2],
                b: [0.7, 0.75, 0.8],
                cells: 8,
                sharpness: 3.0,
                phase,
            },
            env_radius,
            haze: None,
        },
        "two-object" => AnalyticScene {
            name: name.into(),
            spheres: vec![
                Sphere {
                    center: at(1.6, 0.6, 1.4),
                    radius: 0.45 * s,
                    sigma: 200.0,
                    texture: Texture::Radial {
                        base: [0.85, 0.3, 0.2],
                        amp: [0.1, 0.15, 0.1],
                        axis: [0.0, 0.0, 1.0],
                    },
                },
                Sphere {
                    center: at(-1.3, -1.1, 1.8),
                    radius: 0.55 * s,
                    sigma: 1.2 / s,
                    texture: Texture::Constant([0.2, 0.45, 0.9]),
                },
            ],
            environment: gradient,
            env_radius,
            haze: None,
        },
        "haze" => AnalyticScene {
            name: name.into(),
            spheres: vec![
                Sphere {
                    center: at(1.6, 0.6, 1.4),
                    radius: 0.45 * s,
                    sigma: 200.0,
                    texture: Texture::Constant([0.85, 0.3, 0.2]),
                },
                Sphere {
                    center: at(-1.3, -1.1, 1.8),
                    radius: 0.55 * s,
                    sigma: 200.0,
                    texture: Texture::Constant([0.2, 0.45, 0.9]),
                },
            ],
            environment: gradient,
            env_radius,
            haze: Some(Haze {
                inner: t_b,
                outer: 3.0 * t_b,
                sigma: 0.06 / s,
                color: [0.75, 0.75, 0.78],
            }),
        },
        other => {
            return Err(Error::Config(format!(
                "unknown preset {other:?}; known presets: {}",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(scene)
}

/// Index of the camera with the highest center.
pub fn topmost_camera(cams: &[PosedCamera]) -> usize {
    let mut best = 0;
    for (i, c) in cams.iter().enumerate() {
        if c.center().z > cams[best].center().z {
            best = i;
        }
    }
    best
}

/// Ground-truth image of one camera; pixels outside a fisheye image circle
/// are black.
pub fn render_reference_image(scene: &AnalyticScene, cam: &PosedCamera, samples_per_unit: f64) -> Vec<Vec3> {
    let (w, h) = (cam.width as usize, cam.height as usize);
    let rot = cam.rotation();
    let origin = cam.center();
    (0..w * h)
        .into_par_iter()
        .map(|i| {
            let (u, v) = ((i % w) as f64 + 0.5, (i / w) as f64 + 0.5);
            match cam.camera_direction(u, v) {
                Ok(d) => scene.reference_render(&origin, &(rot * d), 0.0, samples_per_unit),
                Err(_) => Vec3::zeros(),
            }
        })
        .collect()
}

/// Renders every camera, writes `cam_NNN.png`, the scene description and the
/// manifest into `out_dir`. The topmost camera is the test view.
pub fn export_dataset(
    scene: &AnalyticScene,
    cams: &[PosedCamera],
    out_dir: &Path,
    samples_per_unit: f64,
) -> Result<DatasetManifest> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let test = topmost_camera(cams);
    let mut entries = Vec::with_capacity(cams.len());
    for (i, cam) in cams.iter().enumerate() {
        let name = format!("cam_{i:03}.png");
        let img = render_reference_image(scene, cam, samples_per_unit);
        write_png(&out_dir.join(&name), cam.width, cam.height, &img)?;
        let role = if i == test { Role::Test } else { Role::Train };
        entries.push(CameraEntry::from_camera(cam, name, role));
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        rig_radius: None,
        boundary_multiplier: DEFAULT_BOUNDARY_MULTIPLIER,
        cameras: entries,
    };
    manifest.validate()?;
    manifest.save(&out_dir.join(MANIFEST_FILE))?;
    let path = out_dir.join(SCENE_FILE);
    fs::write(&path, serde_json::to_string_pretty(scene)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn load_scene(dir: &Path) -> Result<AnalyticScene> {
    let path = dir.join(SCENE_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::normalize_scene;

    #[test]
    fn presets_respect_boundaries() {
        let mut cams = make_rig(2, 0.5, true);
        center_rig(&mut cams);
        let (_, frame) = normalize_scene(&cams).unwrap();
        for name in PRESETS {
            let s = preset(name, frame.rig_radius, 7).unwrap();
            for m in [2.0, 10.0, 50.0] {
                assert!(s.respects_boundary(m * frame.rig_radius), "{name} at {m}");
            }
        }
        assert!(preset("nope", 0.5, 0).is_err());
    }

    #[test]
    fn seed_changes_only_environment() {
        let a = preset("two-object", 0.5, 1).unwrap();
        let b = preset("two-object", 0.5, 2).unwrap();
        assert_eq!(a.spheres, b.spheres);
        assert_ne!(a.environment, b.environment);
        assert_eq!(preset("haze", 0.5, 3).unwrap(), preset("haze", 0.5, 3).unwrap());
    }

    #[test]
    fn export_is_deterministic_with_one_test_view() {
        let intr = RigIntrinsics::fisheye(12, std::f64::consts::FRAC_PI_2);
        let mut cams = make_rig_with(0, 0.5, true, &intr);
        center_rig(&mut cams);
        let scene = preset("two-object", 0.5, 7).unwrap();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let m = export_dataset(&scene, &cams, d1.path(), 1e3).unwrap();
        export_dataset(&scene, &cams, d2.path(), 1e3).unwrap();
        assert_eq!(m.cameras.iter().filter(|c| c.role == Role::Test).count(), 1);
        for e in &m.cameras {
            let a = fs::read(d1.path().join(&e.image)).unwrap();
            let b = fs::read(d2.path().join(&e.image)).unwrap();
            assert_eq!(a, b);
        }
        assert_eq!(load_scene(d1.path()).unwrap(), scene);
    }
}
