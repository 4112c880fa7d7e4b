//! Cameras, rays, scene normalization and the foreground/background warp.
//!
//! Conventions: the world is right-handed; in the camera frame +z looks
//! forward, +x points right and +y points down in the image. A pixel `(i, j)`
//! has its center at `(i + 0.5, j + 0.5)`.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Boundary radius as a multiple of the rig radius when nothing better is known.
pub const DEFAULT_BOUNDARY_MULTIPLIER: f64 = 10.0;

/// Near bound of every ray as a fraction of the rig radius.
const NEAR_FRACTION: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Projection {
    Pinhole,
    FisheyeEquidistant,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PosedCamera {
    pub model: Projection,
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Camera-to-world rigid transform.
    pub c2w: Matrix4<f64>,
}

impl PosedCamera {
    /// Builds a camera, checking intrinsics and that the rotation block is
    /// orthonormal with determinant +1 (tolerance 1e-6).
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        model: Projection,
        width: u32,
        height: u32,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        c2w: Matrix4<f64>,
    ) -> Result<Self> {
        let cam = PosedCamera {
            model,
            width,
            height,
            fx,
            fy,
            cx,
            cy,
            c2w,
        };
        cam.validate(1e-6)?;
        Ok(cam)
    }

    pub fn validate(&self, rotation_tol: f64) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidCamera(format!(
                "focal lengths must be positive (fx = {}, fy = {})",
                self.fx, self.fy
            )));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64)
            || !(self.cy >= 0.0 && self.cy < self.height as f64)
        {
            return Err(Error::InvalidCamera(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        let r = self.rotation();
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if !(err <= rotation_tol) || (r.determinant() - 1.0).abs() > rotation_tol {
            return Err(Error::InvalidCamera(format!(
                "rotation is not orthonormal (max deviation {err:e})"
            )));
        }
        let bottom = self.c2w.fixed_view::<1, 4>(3, 0);
        if bottom[0] != 0.0 || bottom[1] != 0.0 || bottom[2] != 0.0 || bottom[3] != 1.0 {
            return Err(Error::InvalidCamera(
                "last row of c2w must be (0, 0, 0, 1)".into(),
            ));
        }
        Ok(())
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.c2w.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn center(&self) -> Vec3 {
        self.c2w.fixed_view::<3, 1>(0, 3).into_owned()
    }

    pub fn set_center(&mut self, c: Vec3) {
        self.c2w.fixed_view_mut::<3, 1>(0, 3).copy_from(&c);
    }

    /// Unit view direction in the camera frame for sub-pixel position `(u, v)`.
    pub fn camera_direction(&self, u: f64, v: f64) -> Result<Vec3> {
        if !(u >= 0.0 && u < self.width as f64 && v >= 0.0 && v < self.height as f64) {
            return Err(Error::InvalidCamera(format!(
                "pixel ({u}, {v}) outside {}x{} image",
                self.width, self.height
            )));
        }
        let x = (u - self.cx) / self.fx;
        let y = (v - self.cy) / self.fy;
        match self.model {
            Projection::Pinhole => Ok(Vec3::new(x, y, 1.0).normalize()),
            Projection::FisheyeEquidistant => {
                let theta = x.hypot(y);
                if theta > PI {
                    return Err(Error::InvalidPixel { u, v, theta });
                }
                if theta < 1e-12 {
                    return Ok(Vec3::new(0.0, 0.0, 1.0));
                }
                let s = theta.sin() / theta;
                Ok(Vec3::new(s * x, s * y, theta.cos()))
            }
        }
    }

    /// Inverse of [`PosedCamera::camera_direction`] for a world-space
    /// direction. Returns `None` when the direction has no image under the
    /// projection model (behind a pinhole camera).
    pub fn project_direction(&self, dir_world: &Vec3) -> Option<(f64, f64)> {
        let d = self.rotation().transpose() * dir_world.normalize();
        let (x, y) = match self.model {
            Projection::Pinhole => {
                if d.z <= 0.0 {
                    return None;
                }
                (d.x / d.z, d.y / d.z)
            }
            Projection::FisheyeEquidistant => {
                let planar = d.x.hypot(d.y);
                let theta = planar.atan2(d.z);
                if planar < 1e-15 {
                    (0.0, 0.0)
                } else {
                    (theta * d.x / planar, theta * d.y / planar)
                }
            }
        };
        Some((x * self.fx + self.cx, y * self.fy + self.cy))
    }
}

/// Camera-to-world transform for a camera at `center` looking along
/// `forward`, with image-up as close to `up` as possible. Falls back to
/// world +y as up when `forward` is parallel to `up`.
pub fn look_along(center: Vec3, forward: Vec3, up: Vec3) -> Matrix4<f64> {
    let z = forward.normalize();
    let mut up_proj = up - z * up.dot(&z);
    if up_proj.norm() < 1e-9 {
        let alt = Vec3::new(0.0, 1.0, 0.0);
        up_proj = alt - z * alt.dot(&z);
    }
    let y = -up_proj.normalize();
    let x = y.cross(&z);
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 1>(0, 0).copy_from(&x);
    m.fixed_view_mut::<3, 1>(0, 1).copy_from(&y);
    m.fixed_view_mut::<3, 1>(0, 2).copy_from(&z);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&center);
    m
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub t_near: f64,
    /// Depth at which the ray leaves the boundary sphere.
    pub t_boundary: f64,
    /// `f64::INFINITY` for unbounded rays.
    pub t_far: f64,
}

impl Ray {
    /// Unbounded ray from an origin inside the boundary sphere of `frame`.
    pub fn new(origin: Vec3, direction: Vec3, frame: &SceneFrame) -> Result<Self> {
        let direction = direction.normalize();
        let t_boundary = ray_sphere_intersection(&origin, &direction, frame.boundary_radius)?;
        let t_near = frame.near().min(0.5 * t_boundary);
        Ok(Ray {
            origin,
            direction,
            t_near,
            t_boundary,
            t_far: f64::INFINITY,
        })
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneFrame {
    /// Rig center in the normalized frame; zero after [`normalize_scene`].
    pub rig_center: [f64; 3],
    pub rig_radius: f64,
    /// Radius of the foreground/background boundary sphere about the origin.
    pub boundary_radius: f64,
    /// Translation that was subtracted from the input poses.
    #[serde(default)]
    pub origin_offset: [f64; 3],
}

impl SceneFrame {
    pub fn new(rig_radius: f64, boundary_radius: f64) -> Result<Self> {
        if !(rig_radius > 0.0 && boundary_radius > rig_radius) {
            return Err(Error::Config(format!(
                "boundary radius {boundary_radius} must exceed rig radius {rig_radius} > 0"
            )));
        }
        Ok(SceneFrame {
            rig_center: [0.0; 3],
            rig_radius,
            boundary_radius,
            origin_offset: [0.0; 3],
        })
    }

    pub fn with_boundary_radius(mut self, boundary_radius: f64) -> Result<Self> {
        let f = SceneFrame::new(self.rig_radius, boundary_radius)?;
        self.boundary_radius = f.boundary_radius;
        Ok(self)
    }

    pub fn with_boundary_multiplier(self, multiplier: f64) -> Result<Self> {
        let r = self.rig_radius;
        self.with_boundary_radius(multiplier * r)
    }

    pub fn near(&self) -> f64 {
        NEAR_FRACTION * self.rig_radius
    }

    /// Maps a world point from the input coordinates into this frame.
    pub fn to_normalized(&self, p: &Vec3) -> Vec3 {
        p - Vec3::from(self.origin_offset)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    Foreground,
    Background,
}

/// `coords` is `(x, y, z)` in the foreground and `(theta, phi, s)` with
/// `s = boundary_radius / r` in the background.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WarpedPoint {
    pub region: Region,
    pub coords: Vec3,
}

/// Pixel to world ray. `t_boundary` comes from the boundary sphere of `frame`.
pub fn pixel_to_ray(cam: &PosedCamera, u: f64, v: f64, frame: &SceneFrame) -> Result<Ray> {
    let d_cam = cam.camera_direction(u, v)?;
    let d = cam.rotation() * d_cam;
    Ray::new(cam.center(), d, frame)
}

/// Positive root of `|o + t d| = radius` for an origin inside the sphere.
pub fn ray_sphere_intersection(origin: &Vec3, dir: &Vec3, radius: f64) -> Result<f64> {
    let c = origin.norm_squared() - radius * radius;
    if !(c < 0.0) {
        return Err(Error::OriginOutsideSphere {
            origin_norm: origin.norm(),
            radius,
        });
    }
    let b = origin.dot(dir);
    let disc = (b * b - c).sqrt();
    // Avoid cancellation when the ray already heads outward.
    if b > 0.0 {
        Ok(-c / (b + disc))
    } else {
        Ok(disc - b)
    }
}

pub fn warp_point(p: &Vec3, frame: &SceneFrame) -> WarpedPoint {
    if p.norm() <= frame.boundary_radius {
        return WarpedPoint {
            region: Region::Foreground,
            coords: *p,
        };
    }
    spherical_coords(p, frame)
}

/// Background coordinates of `p` regardless of which side of the boundary
/// it lies on. Samples placed exactly on the boundary by the background
/// sampler go through here.
pub fn spherical_coords(p: &Vec3, frame: &SceneFrame) -> WarpedPoint {
    let r = p.norm();
    let theta = (p.z / r).clamp(-1.0, 1.0).acos();
    let phi = if p.x == 0.0 && p.y == 0.0 {
        0.0
    } else {
        p.y.atan2(p.x)
    };
    WarpedPoint {
        region: Region::Background,
        coords: Vec3::new(theta, phi, (frame.boundary_radius / r).min(1.0)),
    }
}

/// Inverse of [`warp_point`].
pub fn unwarp_point(wp: &WarpedPoint, frame: &SceneFrame) -> Vec3 {
    match wp.region {
        Region::Foreground => wp.coords,
        Region::Background => {
            let (theta, phi, s) = (wp.coords.x, wp.coords.y, wp.coords.z);
            let r = frame.boundary_radius / s;
            Vec3::new(
                r * theta.sin() * phi.cos(),
                r * theta.sin() * phi.sin(),
                r * theta.cos(),
            )
        }
    }
}

/// Stereo depth of a keypoint: focal length (px) times baseline over disparity (px).
pub fn boundary_from_disparity(focal: f64, baseline: f64, disparity: f64) -> Result<f64> {
    if !(disparity > 0.0) {
        return Err(Error::NonPositiveDisparity(disparity));
    }
    if !(focal > 0.0 && baseline > 0.0) {
        return Err(Error::Config(format!(
            "focal length and baseline must be positive (f = {focal}, b = {baseline})"
        )));
    }
    Ok(focal * baseline / disparity)
}

pub fn default_boundary(rig_radius: f64) -> f64 {
    DEFAULT_BOUNDARY_MULTIPLIER * rig_radius
}

/// Translates all poses so the camera centroid is the origin. World units are
/// not rescaled; the boundary defaults to `10 * rig_radius`.
pub fn normalize_scene(cameras: &[PosedCamera]) -> Result<(Vec<PosedCamera>, SceneFrame)> {
    if cameras.len() < 2 {
        return Err(Error::DegenerateRig(format!(
            "need at least 2 cameras, got {}",
            cameras.len()
        )));
    }
    let centroid = cameras.iter().map(|c| c.center()).sum::<Vec3>() / cameras.len() as f64;
    let moved: Vec<PosedCamera> = cameras
        .iter()
        .map(|c| {
            let mut c = c.clone();
            c.set_center(c.center() - centroid);
            c
        })
        .collect();
    let rig_radius = moved
        .iter()
        .map(|c| c.center().norm())
        .fold(0.0_f64, f64::max);
    if !(rig_radius > 1e-12) {
        return Err(Error::DegenerateRig("all camera centers coincide".into()));
    }
    let mut frame = SceneFrame::new(rig_radius, default_boundary(rig_radius))?;
    frame.origin_offset = centroid.into();
    Ok((moved, frame))
}
