//! The optimized field queries against a direct re-evaluation of the factor
//! sums and decoder, plus upsampling and initialization behavior.

use hybrid_radiance::field::{init_field, softplus, Decoder, FactorPair, FieldConfig, HybridField};
use hybrid_radiance::geometry::{spherical_coords, Ray, SceneFrame, Vec3};
use hybrid_radiance::renderer::composite_render;
use hybrid_radiance::sampler::sample_ray;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config() -> FieldConfig {
    FieldConfig {
        k_density: 2,
        k_appearance: 3,
        res_fg: [5, 6, 7],
        res_bg: [6, 5, 4],
        decoder_width: 7,
        view_octaves: 2,
        density_bias_init: -1.0,
        init_scale: 1.0,
    }
}

/// Node coordinate split into a lower index and fraction, clamped at the ends.
fn node(x: f64, lo: f64, hi: f64, n: usize) -> (usize, f64) {
    let u = ((x - lo) / (hi - lo)).max(0.0).min(1.0);
    let t = u * (n as f64 - 1.0);
    let mut i = t.floor() as usize;
    if i > n - 2 {
        i = n - 2;
    }
    (i, t - i as f64)
}

fn pair_value(p: &FactorPair, k: usize, row: (usize, f64), col: (usize, f64), along: (usize, f64)) -> f64 {
    let m = |r: usize, c: usize| p.matrix[(r * p.cols + c) * p.comps + k];
    let v = |i: usize| p.vector[i * p.comps + k];
    let (r, fr) = row;
    let (c, fc) = col;
    let mat = m(r, c) * (1.0 - fr) * (1.0 - fc)
        + m(r, c + 1) * (1.0 - fr) * fc
        + m(r + 1, c) * fr * (1.0 - fc)
        + m(r + 1, c + 1) * fr * fc;
    let (i, f) = along;
    mat * (v(i) * (1.0 - f) + v(i + 1) * f)
}

fn decode(dec: &Decoder, feat: &[f64], d: &Vec3) -> Vec3 {
    let mut x = feat.to_vec();
    x.extend_from_slice(&[d.x, d.y, d.z]);
    for k in 0..dec.octaves {
        let f = 2f64.powi(k as i32);
        x.extend_from_slice(&[(f * d.x).sin(), (f * d.y).sin(), (f * d.z).sin()]);
        x.extend_from_slice(&[(f * d.x).cos(), (f * d.y).cos(), (f * d.z).cos()]);
    }
    let layer = |w: &[f64], b: &[f64], input: &[f64], relu: bool| -> Vec<f64> {
        (0..b.len())
            .map(|o| {
                let s = b[o] + (0..input.len()).map(|i| w[o * input.len() + i] * input[i]).sum::<f64>();
                if relu {
                    s.max(0.0)
                } else {
                    s
                }
            })
            .collect()
    };
    let h1 = layer(&dec.w1, &dec.b1, &x, true);
    let h2 = layer(&dec.w2, &dec.b2, &h1, true);
    let o = layer(&dec.w3, &dec.b3, &h2, false);
    let s = |v: f64| 1.0 / (1.0 + (-v).exp());
    Vec3::new(s(o[0]), s(o[1]), s(o[2]))
}

fn oracle(field: &HybridField, coords: &Vec3, background: bool, d: &Vec3) -> (f64, Vec3) {
    let (vol, dec) = if background {
        (&field.background, &field.bg_decoder)
    } else {
        (&field.foreground, &field.fg_decoder)
    };
    let st: Vec<(usize, f64)> = (0..3)
        .map(|a| node(coords[a], vol.domain[a][0], vol.domain[a][1], vol.resolution[a]))
        .collect();
    let axes: Vec<[usize; 3]> = if background {
        vec![[0, 1, 2]]
    } else {
        vec![[0, 1, 2], [0, 2, 1], [1, 2, 0]]
    };
    let mut density = 0.0;
    for (p, ax) in vol.density.iter().zip(&axes) {
        for k in 0..p.comps {
            density += pair_value(p, k, st[ax[0]], st[ax[1]], st[ax[2]]);
        }
    }
    let mut feat = Vec::new();
    for (p, ax) in vol.appearance.iter().zip(&axes) {
        for k in 0..p.comps {
            feat.push(pair_value(p, k, st[ax[0]], st[ax[1]], st[ax[2]]));
        }
    }
    (softplus(density + field.density_bias), decode(dec, &feat, d))
}

#[test]
fn queries_match_straight_line_oracle() {
    let frame = SceneFrame::new(0.5, 2.0).unwrap();
    let field = init_field(&small_config(), frame, 21).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let d = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize();
        let p = Vec3::new(rng.random_range(-2.2..2.2), rng.random_range(-2.2..2.2), rng.random_range(-2.2..2.2));
        let (s, c) = field.eval_foreground(&p, &d);
        let (so, co) = oracle(&field, &p, false, &d);
        assert!((s - so).abs() < 1e-12 * so.max(1.0), "fg sigma {s} vs {so}");
        assert!((c - co).amax() < 1e-12);

        let q = p.normalize() * rng.random_range(2.0..200.0);
        let wp = spherical_coords(&q, &frame);
        let (s, c) = field.eval_background(&wp, &d);
        let (so, co) = oracle(&field, &wp.coords, true, &d);
        assert!((s - so).abs() < 1e-12 * so.max(1.0), "bg sigma {s} vs {so}");
        assert!((c - co).amax() < 1e-12);
    }
}

#[test]
fn fresh_field_is_nearly_transparent() {
    let mut cfg = FieldConfig::default();
    cfg.res_fg = [16; 3];
    cfg.res_bg = [8, 16, 4];
    let frame = SceneFrame::new(0.1, 1.0).unwrap();
    let field = init_field(&cfg, frame, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let o = Vec3::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), 0.0);
        let d = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize();
        let ray = Ray::new(o, d, &frame).unwrap();
        let s = sample_ray::<ChaCha8Rng>(&ray, frame.boundary_radius, 64, 64, None);
        let out = composite_render(&field, &ray, &s, &d);
        assert!(out.fg_weight + out.bg_weight < 0.01, "weight sum {}", out.fg_weight + out.bg_weight);
    }
}

#[test]
fn upsampling_is_exact_at_old_nodes() {
    let frame = SceneFrame::new(0.5, 2.0).unwrap();
    let field = init_field(&small_config(), frame, 5).unwrap();
    let fine = field.upsample([9, 11, 13], [11, 9, 7]).unwrap();
    let d = Vec3::new(0.3, -0.2, 0.9).normalize();
    let fg = &field.foreground;
    for i in 0..fg.resolution[0] {
        for j in 0..fg.resolution[1] {
            for k in 0..fg.resolution[2] {
                let at = |a: usize, n: usize| -2.0 + 4.0 * n as f64 / (fg.resolution[a] - 1) as f64;
                let p = Vec3::new(at(0, i), at(1, j), at(2, k));
                let (s0, c0) = field.eval_foreground(&p, &d);
                let (s1, c1) = fine.eval_foreground(&p, &d);
                assert!((s0 - s1).abs() < 1e-12 * s0.max(1.0));
                assert!((c0 - c1).amax() < 1e-12);
            }
        }
    }
    let same = field.upsample(field.foreground.resolution, field.background.resolution).unwrap();
    assert_eq!(same, field);
}

#[test]
fn upsampled_render_differs_only_by_interpolation() {
    let d = Vec3::new(0.2, 0.4, 0.9).normalize();
    let frame = SceneFrame::new(0.5, 2.0).unwrap();
    let field = init_field(&small_config(), frame, 1).unwrap();
    let rays: Vec<Ray> = (0..20)
        .map(|k| {
            let a = k as f64 * 0.7;
            Ray::new(Vec3::new(0.1, 0.0, 0.0), Vec3::new(a.cos(), a.sin(), 0.3 + 0.05 * k as f64), &frame).unwrap()
        })
        .collect();
    // nested grids reproduce the piecewise-linear field exactly
    let [a, b, c] = field.foreground.resolution;
    let [p, q, r] = field.background.resolution;
    let nested = field.upsample([2 * a - 1, 2 * b - 1, 2 * c - 1], [2 * p - 1, 2 * q - 1, 2 * r - 1]).unwrap();
    let other = field.upsample([13, 17, 19], [11, 13, 9]).unwrap();
    let mut worst_other: f64 = 0.0;
    for ray in &rays {
        let s = sample_ray::<ChaCha8Rng>(ray, frame.boundary_radius, 32, 32, None);
        let base = composite_render(&field, ray, &s, &d).color;
        let n = composite_render(&nested, ray, &s, &d).color;
        let o = composite_render(&other, ray, &s, &d).color;
        assert!((base - n).amax() < 1e-12);
        worst_other = worst_other.max((base - o).amax());
    }
    assert!(worst_other > 0.0 && worst_other < 0.1, "non-nested difference {worst_other}");
}
