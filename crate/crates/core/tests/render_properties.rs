//! Sampler and compositing invariants over random rays and fields.

use hybrid_radiance::field::{init_field, FieldConfig, HybridField};
use hybrid_radiance::geometry::{Ray, SceneFrame, Vec3, WarpedPoint};
use hybrid_radiance::renderer::{
    composite_render, fg_transmittance, fg_transmittance_dense, quadrature_segment, render_image,
    trace_batch, RadianceField, RenderOptions,
};
use hybrid_radiance::sampler::{ray_rng, sample_ray};
use hybrid_radiance::scenes::{AnalyticField, AnalyticScene, Environment, Sphere, Texture};
use proptest::prelude::*;
use rand_chacha::ChaCha8Rng;

fn frame() -> SceneFrame {
    SceneFrame::new(0.5, 3.0).unwrap()
}

fn field(seed: u64, bias: f64) -> HybridField {
    let cfg = FieldConfig {
        k_density: 2,
        k_appearance: 2,
        res_fg: [6, 6, 6],
        res_bg: [6, 6, 4],
        decoder_width: 8,
        view_octaves: 1,
        density_bias_init: bias,
        init_scale: 1.0,
    };
    init_field(&cfg, frame(), seed).unwrap()
}

fn unit(v: [f64; 3]) -> Vec3 {
    let d = Vec3::from(v);
    if d.norm() < 1e-3 {
        Vec3::z()
    } else {
        d.normalize()
    }
}

fn arb_ray() -> impl Strategy<Value = Ray> {
    (prop::array::uniform3(-0.25f64..0.25), prop::array::uniform3(-1.0f64..1.0))
        .prop_map(|(o, d)| Ray::new(Vec3::from(o), unit(d), &frame()).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sampler_strata_are_ordered_and_tile(ray in arb_ray(), n in 1usize..40, m in 1usize..40, seed in any::<u64>(), jitter in any::<bool>()) {
        let mut rng = ray_rng(seed, 0, 0);
        let s = sample_ray(&ray, frame().boundary_radius, n, m, if jitter { Some(&mut rng) } else { None });
        prop_assert_eq!(s.fg_depths.len(), n);
        prop_assert_eq!(s.bg_depths.len(), m);
        prop_assert!(s.fg_depths.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(s.bg_depths.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(s.bg_radii.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(s.fg_deltas.iter().chain(&s.bg_deltas).all(|&d| d > 0.0));
        prop_assert!(s.fg_depths[0] >= ray.t_near && s.fg_depths[n - 1] <= ray.t_boundary);
        prop_assert!(s.bg_depths[0] >= ray.t_boundary);
        let fg_sum: f64 = s.fg_deltas.iter().sum();
        prop_assert!((fg_sum - (ray.t_boundary - ray.t_near)).abs() < 1e-9);
        for (k, &t) in s.fg_depths.iter().enumerate() {
            let w = s.fg_deltas[k];
            let lo = ray.t_near + k as f64 * w;
            prop_assert!(t >= lo - 1e-12 && t <= lo + w + 1e-12);
            prop_assert!(ray.at(t).norm() <= frame().boundary_radius + 1e-9);
        }
        for &r in &s.bg_radii {
            let s_coord = frame().boundary_radius / r;
            prop_assert!(s_coord > 0.0 && s_coord <= 1.0);
        }
    }

    #[test]
    fn weights_and_transmittance_partition_unity(ray in arb_ray(), seed in 0u64..1000, bias in -3.0f64..2.0) {
        let f = field(seed, bias);
        let s = sample_ray::<ChaCha8Rng>(&ray, frame().boundary_radius, 24, 24, None);
        let out = composite_render(&f, &ray, &s, &ray.direction);
        prop_assert!((0.0..=1.0).contains(&out.fg_transmittance));
        prop_assert!((out.fg_weight - (1.0 - out.fg_transmittance)).abs() < 1e-6);
        // residual transmittance after the last background sample
        let mut sig = Vec::new();
        for &t in &s.bg_depths {
            let p = ray.at(t);
            sig.push(f.background(&p, &hybrid_radiance::geometry::spherical_coords(&p, &frame()), &ray.direction).0);
        }
        let q = quadrature_segment(&sig, &vec![Vec3::zeros(); sig.len()], &s.bg_deltas, out.fg_transmittance);
        prop_assert!((out.fg_weight + out.bg_weight + q.t_out - 1.0).abs() < 1e-6);
        prop_assert!(out.color.iter().all(|c| (0.0..=1.0).contains(c)));
        prop_assert_eq!(fg_transmittance(&f, &ray, &s.fg_depths, &s.fg_deltas), out.fg_transmittance);
    }

    #[test]
    fn batched_trace_matches_single_ray_render(seed in 0u64..1000, bias in -3.0f64..1.0) {
        let f = field(seed, bias);
        let rays: Vec<Ray> = (0..6)
            .map(|k| Ray::new(Vec3::new(0.01 * k as f64, -0.02, 0.03), unit([k as f64 - 2.5, 1.0, 0.4]), &frame()).unwrap())
            .collect();
        let samples: Vec<_> = rays
            .iter()
            .enumerate()
            .map(|(k, r)| sample_ray(r, frame().boundary_radius, 12, 10, Some(&mut ray_rng(seed, k as u64, 3))))
            .collect();
        let tr = trace_batch(&f, &rays, &samples, 0.0);
        for (k, r) in rays.iter().enumerate() {
            let one = composite_render(&f, r, &samples[k], &r.direction);
            prop_assert!((one.color - tr.outputs[k].color).amax() < 1e-12);
            prop_assert!((one.fg_transmittance - tr.outputs[k].fg_transmittance).abs() < 1e-12);
        }
    }
}

struct Constant {
    frame: SceneFrame,
    fg: (f64, Vec3),
    bg: (f64, Vec3),
}

impl RadianceField for Constant {
    fn frame(&self) -> &SceneFrame {
        &self.frame
    }
    fn foreground(&self, _p: &Vec3, _d: &Vec3) -> (f64, Vec3) {
        self.fg
    }
    fn background(&self, _p: &Vec3, _wp: &WarpedPoint, _d: &Vec3) -> (f64, Vec3) {
        self.bg
    }
}

#[test]
fn constant_density_transmittance_reaches_closed_form() {
    // sigma 2 over a foreground segment of length 0.5
    let frame = SceneFrame::new(0.1, 0.5).unwrap();
    let f = Constant { frame, fg: (2.0, Vec3::x()), bg: (0.0, Vec3::zeros()) };
    let mut ray = Ray::new(Vec3::zeros(), Vec3::z(), &frame).unwrap();
    ray.t_near = 0.0;
    let t = fg_transmittance_dense(&f, &ray, 10_000);
    assert!((t - (-1.0f64).exp()).abs() < 1e-3, "T = {t}");
    let empty = Constant { frame, fg: (0.0, Vec3::x()), bg: (0.0, Vec3::zeros()) };
    assert_eq!(fg_transmittance_dense(&empty, &ray, 64), 1.0);
}

#[test]
fn opaque_foreground_hides_background() {
    let frame = frame();
    let f = Constant { frame, fg: (1e4, Vec3::new(0.2, 0.4, 0.6)), bg: (5.0, Vec3::new(1.0, 1.0, 1.0)) };
    let ray = Ray::new(Vec3::zeros(), Vec3::x(), &frame).unwrap();
    let s = sample_ray::<ChaCha8Rng>(&ray, frame.boundary_radius, 32, 32, None);
    let out = composite_render(&f, &ray, &s, &ray.direction);
    assert!(out.bg_weight < 1e-6);
    assert!((out.color - Vec3::new(0.2, 0.4, 0.6)).amax() < 1e-6);
}

#[test]
fn empty_foreground_equals_background_only() {
    let frame = frame();
    let f = Constant { frame, fg: (0.0, Vec3::x()), bg: (0.3, Vec3::new(0.1, 0.7, 0.3)) };
    let ray = Ray::new(Vec3::new(0.1, 0.0, 0.0), unit([0.3, 0.5, 0.8]), &frame).unwrap();
    let s = sample_ray::<ChaCha8Rng>(&ray, frame.boundary_radius, 16, 16, None);
    let out = composite_render(&f, &ray, &s, &ray.direction);
    assert_eq!(out.fg_transmittance, 1.0);
    let bg = quadrature_segment(&[0.3; 16], &[Vec3::new(0.1, 0.7, 0.3); 16], &s.bg_deltas, 1.0);
    assert!((out.color - bg.color).amax() < 1e-15);
}

fn sphere_scene() -> AnalyticScene {
    AnalyticScene {
        name: "sphere".into(),
        spheres: vec![Sphere {
            center: [0.0, 0.0, 1.5],
            radius: 0.5,
            sigma: 3.0,
            texture: Texture::Constant([0.6, 0.4, 0.3]),
        }],
        environment: Environment::Gradient { top: [0.5, 0.6, 0.9], bottom: [0.3, 0.3, 0.2], ripple: 0.1, phase: 0.0 },
        env_radius: 300.0,
        haze: None,
    }
}

fn max_error(scene: &AnalyticScene, frame: SceneFrame, rays: &[Ray], n: usize) -> f64 {
    let f = AnalyticField { scene, frame };
    rays.iter()
        .map(|r| {
            let want = scene.reference_render(&r.origin, &r.direction, r.t_near, 1e4);
            let s = sample_ray::<ChaCha8Rng>(r, frame.boundary_radius, n, n, None);
            (composite_render(&f, r, &s, &r.direction).color - want).amax()
        })
        .fold(0.0, f64::max)
}

fn spread_rays(frame: &SceneFrame, scale: f64) -> Vec<Ray> {
    (0..100)
        .map(|k| {
            let a = k as f64 * 0.61;
            let b = (k as f64 * 0.37).sin();
            let o = Vec3::new(a.cos(), a.sin(), b) * (0.1 * scale);
            Ray::new(o, unit([0.4 * a.cos(), 0.4 * a.sin(), 0.6 + 0.3 * b]), frame).unwrap()
        })
        .collect()
}

#[test]
fn constant_sphere_matches_reference_at_1024_samples() {
    let scene = sphere_scene();
    let frame = frame();
    let e = max_error(&scene, frame, &spread_rays(&frame, 0.5), 1024);
    assert!(e < 1e-3, "error at 1024 samples {e}");
}

/// Smooth density blobs on both sides of the boundary.
struct Smooth {
    frame: SceneFrame,
}

impl Smooth {
    fn at(&self, p: &Vec3) -> (f64, Vec3) {
        let r = p.norm();
        let blob = 4.0 * (-(p - Vec3::new(0.3, 0.2, 1.2)).norm_squared() / 0.25).exp();
        let shell = 0.4 * (-((r - 6.0) / 1.5).powi(2)).exp();
        let sigma = if r <= self.frame.boundary_radius { blob } else { shell };
        let c = Vec3::new(0.5 + 0.3 * (2.0 * p.x).sin(), 0.5 + 0.3 * (1.5 * p.y).cos(), 0.5 + 0.2 * (p.z / r.max(1e-9)));
        (sigma, c)
    }

    /// Fine midpoint quadrature with exact per-step attenuation.
    fn reference(&self, ray: &Ray) -> Vec3 {
        let t_end = ray.t_boundary + 40.0;
        let steps = 400_000;
        let h = (t_end - ray.t_near) / steps as f64;
        let (mut t_acc, mut color) = (1.0, Vec3::zeros());
        for i in 0..steps {
            let (sigma, c) = self.at(&ray.at(ray.t_near + (i as f64 + 0.5) * h));
            let a = 1.0 - (-sigma * h).exp();
            color += c * (t_acc * a);
            t_acc *= 1.0 - a;
        }
        color
    }
}

impl RadianceField for Smooth {
    fn frame(&self) -> &SceneFrame {
        &self.frame
    }
    fn foreground(&self, p: &Vec3, _d: &Vec3) -> (f64, Vec3) {
        self.at(p)
    }
    fn background(&self, p: &Vec3, _wp: &WarpedPoint, _d: &Vec3) -> (f64, Vec3) {
        self.at(p)
    }
}

#[test]
fn smooth_field_error_shrinks_as_samples_double() {
    let frame = frame();
    let f = Smooth { frame };
    let rays = spread_rays(&frame, 1.0);
    let refs: Vec<Vec3> = rays.iter().map(|r| f.reference(r)).collect();
    let err = |n: usize| {
        rays.iter()
            .zip(&refs)
            .map(|(r, want)| {
                let s = sample_ray::<ChaCha8Rng>(r, frame.boundary_radius, n, n, None);
                (composite_render(&f, r, &s, &r.direction).color - want).amax()
            })
            .fold(0.0, f64::max)
    };
    let e: Vec<f64> = [64, 128, 256].iter().map(|&n| err(n)).collect();
    assert!(e[0] > e[1] && e[1] > e[2], "errors {e:?}");
}

#[test]
fn eval_render_is_deterministic_and_empty_field_shows_decoder_bias() {
    let intr = hybrid_radiance::scenes::RigIntrinsics::fisheye(12, std::f64::consts::FRAC_PI_2);
    let cams = hybrid_radiance::scenes::make_rig_with(0, 0.5, true, &intr);
    let (cams, fr) = hybrid_radiance::geometry::normalize_scene(&cams).unwrap();
    let mut f = init_field(&FieldConfig { res_fg: [8; 3], res_bg: [8, 8, 4], ..FieldConfig::default() }, fr.with_boundary_multiplier(10.0).unwrap(), 2).unwrap();
    let opts = RenderOptions { n_fg: 16, m_bg: 16, ..RenderOptions::default() };
    let a = render_image(&f, &cams[0], &opts);
    let b = render_image(&f, &cams[0], &opts);
    assert_eq!(a, b);

    // empty foreground, opaque background with zero appearance factors: the
    // pixel is the background decoder output at the zero feature vector
    for vol in [&mut f.foreground, &mut f.background] {
        for p in vol.density.iter_mut().chain(vol.appearance.iter_mut()) {
            p.matrix.iter_mut().for_each(|x| *x = 0.0);
            p.vector.iter_mut().for_each(|x| *x = 0.0);
        }
    }
    for p in f.background.density.iter_mut() {
        p.matrix.iter_mut().for_each(|x| *x = 10.0);
        p.vector.iter_mut().for_each(|x| *x = 10.0);
    }
    f.density_bias = -50.0;
    let img = render_image(&f, &cams[0], &opts);
    let cam = &cams[0];
    let center = (cam.height / 2 * cam.width + cam.width / 2) as usize;
    let ray = hybrid_radiance::geometry::pixel_to_ray(cam, cam.width as f64 / 2.0 + 0.5, cam.height as f64 / 2.0 + 0.5, &f.frame).unwrap();
    let want = f.bg_decoder.decode(&vec![0.0; f.background.appearance_width()], &ray.direction);
    assert!((img.fg_transmittance[center] - 1.0).abs() < 1e-12);
    assert!((img.color[center] - want).amax() < 1e-9);
}
