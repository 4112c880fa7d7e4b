//! Small fully connected color decoder with a batched backward pass.

use rand::Rng;

use crate::geometry::Vec3;

/// Two hidden rectifier layers; logistic output in (0, 1)^3.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoder {
    pub feature_width: usize,
    pub octaves: usize,
    pub width: usize,
    /// `width x input_width`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `width x width`
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    /// `3 x width`
    pub w3: Vec<f64>,
    pub b3: Vec<f64>,
}

/// Activations kept for the backward pass.
#[derive(Clone, Debug, Default)]
pub struct DecoderTape {
    pub rows: usize,
    pub x: Vec<f64>,
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
    /// Colors after the logistic, `rows x 3`.
    pub out: Vec<f64>,
}

pub fn encoding_width(octaves: usize) -> usize {
    3 + 6 * octaves
}

/// `[d, sin(2^k d), cos(2^k d)]` for `k < octaves`.
pub fn encode_direction(d: &Vec3, octaves: usize, out: &mut [f64]) {
    out[..3].copy_from_slice(d.as_slice());
    let mut freq = 1.0;
    for k in 0..octaves {
        for a in 0..3 {
            let (s, c) = (freq * d[a]).sin_cos();
            out[3 + 6 * k + a] = s;
            out[6 + 6 * k + a] = c;
        }
        freq *= 2.0;
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Logistic kept strictly inside (0, 1) even where f64 would round to 0 or 1.
#[inline]
fn squash(x: f64) -> f64 {
    sigmoid(x).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

impl Decoder {
    pub fn zeros(feature_width: usize, octaves: usize, width: usize) -> Self {
        let din = feature_width + encoding_width(octaves);
        Decoder {
            feature_width,
            octaves,
            width,
            w1: vec![0.0; width * din],
            b1: vec![0.0; width],
            w2: vec![0.0; width * width],
            b2: vec![0.0; width],
            w3: vec![0.0; 3 * width],
            b3: vec![0.0; 3],
        }
    }

    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` weights and biases.
    pub fn init<R: Rng>(feature_width: usize, octaves: usize, width: usize, rng: &mut R) -> Self {
        let mut d = Decoder::zeros(feature_width, octaves, width);
        let din = d.input_width();
        let mut fill = |buf: &mut [f64], fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for x in buf.iter_mut() {
                *x = rng.random_range(-bound..bound);
            }
        };
        fill(&mut d.w1, din);
        fill(&mut d.b1, din);
        fill(&mut d.w2, width);
        fill(&mut d.b2, width);
        fill(&mut d.w3, width);
        fill(&mut d.b3, width);
        d
    }

    pub fn input_width(&self) -> usize {
        self.feature_width + encoding_width(self.octaves)
    }

    pub fn tensors(&self) -> [&[f64]; 6] {
        [&self.w1, &self.b1, &self.w2, &self.b2, &self.w3, &self.b3]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w3,
            &mut self.b3,
        ]
    }

    pub fn zeros_like(&self) -> Decoder {
        Decoder::zeros(self.feature_width, self.octaves, self.width)
    }

    /// Forward pass over `x` (`rows x input_width`, row-major), which is
    /// moved into the returned tape.
    pub fn forward(&self, x: Vec<f64>) -> DecoderTape {
        let din = self.input_width();
        let h = self.width;
        let rows = x.len() / din;
        debug_assert_eq!(rows * din, x.len());
        let mut h1 = bias_rows(&self.b1, rows);
        gemm_nt(rows, din, h, &x, &self.w1, &mut h1);
        relu(&mut h1);
        let mut h2 = bias_rows(&self.b2, rows);
        gemm_nt(rows, h, h, &h1, &self.w2, &mut h2);
        relu(&mut h2);
        let mut out = bias_rows(&self.b3, rows);
        gemm_nt(rows, h, 3, &h2, &self.w3, &mut out);
        for o in out.iter_mut() {
            *o = squash(*o);
        }
        DecoderTape {
            rows,
            x,
            h1,
            h2,
            out,
        }
    }

    /// Back-propagates `d_color` (`rows x 3`, gradient w.r.t. the output
    /// colors). Parameter gradients accumulate into `grad`; the gradient
    /// w.r.t. the input rows is returned.
    pub fn backward(&self, tape: &DecoderTape, d_color: &[f64], grad: &mut Decoder) -> Vec<f64> {
        let din = self.input_width();
        let h = self.width;
        let rows = tape.rows;
        let mut d3: Vec<f64> = d_color
            .iter()
            .zip(&tape.out)
            .map(|(g, c)| g * c * (1.0 - c))
            .collect();
        accumulate_bias(&d3, 3, &mut grad.b3);
        gemm_tn(rows, 3, h, &d3, &tape.h2, &mut grad.w3);
        let mut d2 = vec![0.0; rows * h];
        gemm_nn(rows, 3, h, &d3, &self.w3, &mut d2);
        relu_mask(&mut d2, &tape.h2);
        d3.clear();
        accumulate_bias(&d2, h, &mut grad.b2);
        gemm_tn(rows, h, h, &d2, &tape.h1, &mut grad.w2);
        let mut d1 = vec![0.0; rows * h];
        gemm_nn(rows, h, h, &d2, &self.w2, &mut d1);
        relu_mask(&mut d1, &tape.h1);
        accumulate_bias(&d1, h, &mut grad.b1);
        gemm_tn(rows, h, din, &d1, &tape.x, &mut grad.w1);
        let mut dx = vec![0.0; rows * din];
        gemm_nn(rows, h, din, &d1, &self.w1, &mut dx);
        dx
    }

    /// Color for one feature vector and view direction.
    pub fn decode(&self, features: &[f64], view_dir: &Vec3) -> Vec3 {
        let mut x = vec![0.0; self.input_width()];
        x[..self.feature_width].copy_from_slice(features);
        encode_direction(view_dir, self.octaves, &mut x[self.feature_width..]);
        let tape = self.forward(x);
        Vec3::new(tape.out[0], tape.out[1], tape.out[2])
    }
}

fn bias_rows(b: &[f64], rows: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * b.len());
    for _ in 0..rows {
        out.extend_from_slice(b);
    }
    out
}

fn relu(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

fn relu_mask(d: &mut [f64], activated: &[f64]) {
    for (g, a) in d.iter_mut().zip(activated) {
        if *a <= 0.0 {
            *g = 0.0;
        }
    }
}

fn accumulate_bias(d: &[f64], width: usize, b: &mut [f64]) {
    for row in d.chunks_exact(width) {
        for (acc, g) in b.iter_mut().zip(row) {
            *acc += g;
        }
    }
}

/// `c += a (m x k) * b^T` with `b` stored `n x k`.
fn gemm_nt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    if m == 0 {
        return;
    }
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `c += a (m x k) * b (k x n)`.
fn gemm_nn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    if m == 0 {
        return;
    }
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `c (k x n) += a^T * b` with `a` stored `m x k` and `b` stored `m x n`.
fn gemm_tn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    if m == 0 {
        return;
    }
    unsafe {
        matrixmultiply::dgemm(
            k,
            m,
            n,
            1.0,
            a.as_ptr(),
            1,
            k as isize,
            b.as_ptr(),
            n as isize,
            1,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive_forward(d: &Decoder, x: &[f64]) -> Vec3 {
        let layer = |w: &[f64], b: &[f64], input: &[f64], relu: bool| -> Vec<f64> {
            b.iter()
                .enumerate()
                .map(|(o, bo)| {
                    let s: f64 = bo + input.iter().enumerate().map(|(i, xi)| w[o * input.len() + i] * xi).sum::<f64>();
                    if relu { s.max(0.0) } else { s }
                })
                .collect()
        };
        let h1 = layer(&d.w1, &d.b1, x, true);
        let h2 = layer(&d.w2, &d.b2, &h1, true);
        let o = layer(&d.w3, &d.b3, &h2, false);
        Vec3::new(sigmoid(o[0]), sigmoid(o[1]), sigmoid(o[2]))
    }

    #[test]
    fn batched_forward_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = Decoder::init(5, 2, 7, &mut rng);
        let din = d.input_width();
        let x: Vec<f64> = (0..4 * din).map(|_| rng.random_range(-1.0..1.0)).collect();
        let tape = d.forward(x.clone());
        for r in 0..4 {
            let want = naive_forward(&d, &x[r * din..(r + 1) * din]);
            for c in 0..3 {
                assert!((tape.out[r * 3 + c] - want[c]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn outputs_stay_in_open_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = Decoder::init(4, 4, 16, &mut rng);
        for scale in [0.0, 1.0, 10.0, 1e3, 1e12] {
            let f: Vec<f64> = (0..4).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
            let c = d.decode(&f, &Vec3::new(0.0, 0.6, 0.8));
            assert!(c.iter().all(|&v| v > 0.0 && v < 1.0), "{c:?}");
        }
    }

    #[test]
    fn encoding_layout() {
        let mut out = vec![0.0; encoding_width(2)];
        encode_direction(&Vec3::new(0.5, 0.0, 1.0), 2, &mut out);
        assert_eq!(&out[..3], &[0.5, 0.0, 1.0]);
        assert_eq!(out[3], 0.5f64.sin());
        assert_eq!(out[6], 0.5f64.cos());
        assert_eq!(out[9], 1.0f64.sin());
        assert_eq!(out[14], 2.0f64.cos());
    }
}
