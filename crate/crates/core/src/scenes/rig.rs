//! Geodesic camera rigs on a subdivided icosahedron.
//!
//! Level `n` splits every icosahedron edge into `n + 1` segments and projects
//! the lattice points onto the sphere, giving `10 (n + 1)^2 + 2` vertices on
//! the full sphere: 12, 42, 92, 162, ... Level 2 (the "v3" tiling) keeps 46
//! vertices on the upper hemisphere.

use std::f64::consts::PI;

use crate::geometry::{look_along, PosedCamera, Projection, Vec3};

const WELD_TOL: f64 = 1e-9;

/// Shared intrinsics for every rig camera.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigIntrinsics {
    pub model: Projection,
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl RigIntrinsics {
    /// Square equidistant fisheye whose image circle edge sits at
    /// `half_fov` radians off axis.
    pub fn fisheye(size: u32, half_fov: f64) -> Self {
        let c = size as f64 / 2.0;
        let f = c / half_fov;
        RigIntrinsics {
            model: Projection::FisheyeEquidistant,
            width: size,
            height: size,
            fx: f,
            fy: f,
            cx: c,
            cy: c,
        }
    }
}

impl Default for RigIntrinsics {
    fn default() -> Self {
        RigIntrinsics::fisheye(64, PI / 2.0)
    }
}

/// Unit icosahedron with a vertex on +z.
fn icosahedron() -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let z = 1.0 / 5f64.sqrt();
    let r = 2.0 / 5f64.sqrt();
    let mut v = vec![Vec3::z()];
    for k in 0..5 {
        let a = 2.0 * PI * k as f64 / 5.0;
        v.push(Vec3::new(r * a.cos(), r * a.sin(), z));
    }
    for k in 0..5 {
        let a = 2.0 * PI * k as f64 / 5.0 + PI / 5.0;
        v.push(Vec3::new(r * a.cos(), r * a.sin(), -z));
    }
    v.push(-Vec3::z());
    let mut f = Vec::new();
    for k in 0..5 {
        let (u0, u1) = (1 + k, 1 + (k + 1) % 5);
        let (l0, l1) = (6 + k, 6 + (k + 1) % 5);
        f.push([0, u0, u1]);
        f.push([u0, l0, u1]);
        f.push([u1, l0, l1]);
        f.push([11, l1, l0]);
    }
    (v, f)
}

/// Unit vertices of the level-`n_subdiv` geodesic sphere, welded and sorted
/// from the top (+z) down.
pub fn geodesic_vertices(n_subdiv: usize) -> Vec<Vec3> {
    let (base, faces) = icosahedron();
    let freq = n_subdiv + 1;
    let mut out: Vec<Vec3> = Vec::new();
    for [a, b, c] in faces {
        for i in 0..=freq {
            for j in 0..=freq - i {
                let k = freq - i - j;
                let p = (base[a] * i as f64 + base[b] * j as f64 + base[c] * k as f64).normalize();
                if !out.iter().any(|q| (q - p).amax() < WELD_TOL) {
                    out.push(p);
                }
            }
        }
    }
    out.sort_by(|p, q| {
        q.z.total_cmp(&p.z)
            .then(p.y.atan2(p.x).total_cmp(&q.y.atan2(q.x)))
    });
    out
}

/// Cameras at the geodesic vertices scaled to `radius`, each looking outward
/// along its vertex normal with world +z as the up hint. With `hemisphere`
/// only vertices with `z >= -1e-9` are kept.
pub fn make_rig_with(
    n_subdiv: usize,
    radius: f64,
    hemisphere: bool,
    intr: &RigIntrinsics,
) -> Vec<PosedCamera> {
    geodesic_vertices(n_subdiv)
        .into_iter()
        .filter(|v| !hemisphere || v.z >= -1e-9)
        .map(|n| PosedCamera {
            model: intr.model,
            width: intr.width,
            height: intr.height,
            fx: intr.fx,
            fy: intr.fy,
            cx: intr.cx,
            cy: intr.cy,
            c2w: look_along(n * radius, n, Vec3::z()),
        })
        .collect()
}

pub fn make_rig(n_subdiv: usize, radius: f64, hemisphere: bool) -> Vec<PosedCamera> {
    make_rig_with(n_subdiv, radius, hemisphere, &RigIntrinsics::default())
}

/// Shifts every camera so their centroid is the origin.
pub fn center_rig(cams: &mut [PosedCamera]) {
    let c = cams.iter().map(|c| c.center()).sum::<Vec3>() / cams.len().max(1) as f64;
    for cam in cams {
        cam.set_center(cam.center() - c);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vertex_counts() {
        for (n, want) in [(0, 12), (1, 42), (2, 92), (3, 162)] {
            assert_eq!(geodesic_vertices(n).len(), want);
        }
        assert_eq!(make_rig(0, 1.0, false).len(), 12);
        assert_eq!(make_rig(2, 1.0, true).len(), 46);
    }

    #[test]
    fn vertices_on_sphere_and_distinct() {
        let cams = make_rig(2, 0.5, false);
        let mut min_angle = f64::INFINITY;
        for (i, a) in cams.iter().enumerate() {
            assert!((a.center().norm() - 0.5).abs() < 1e-9);
            for b in &cams[i + 1..] {
                let cos = a.center().normalize().dot(&b.center().normalize()).clamp(-1.0, 1.0);
                min_angle = min_angle.min(cos.acos());
            }
        }
        assert!(min_angle > 0.1, "{min_angle}");
    }

    #[test]
    fn cameras_look_outward() {
        for c in make_rig(1, 2.0, true) {
            assert!(c.validate(1e-9).is_ok());
            let fwd = c.rotation() * Vec3::z();
            assert!((fwd - c.center().normalize()).amax() < 1e-12);
            assert!(c.center().z >= -1e-9);
        }
        let top = &make_rig(2, 1.0, true)[0];
        assert!((top.center() - Vec3::z()).amax() < 1e-12);
    }

    #[test]
    fn centering_moves_centroid() {
        let mut cams = make_rig(2, 0.5, true);
        center_rig(&mut cams);
        let c: Vec3 = cams.iter().map(|c| c.center()).sum();
        assert!(c.norm() < 1e-12);
    }
}
