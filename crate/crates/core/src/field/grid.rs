//! Matrix/vector factor grids and their interpolation stencils.

use crate::error::{Error, Result};

/// Linear interpolation stencil along one grid axis (align-corners nodes).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lerp {
    pub i0: usize,
    pub w0: f64,
    pub w1: f64,
}

impl Lerp {
    /// Stencil for `coord` on `n` nodes spanning `[lo, hi]`; clamps to the edges.
    #[inline]
    pub fn new(coord: f64, lo: f64, hi: f64, n: usize) -> Self {
        let t = ((coord - lo) / (hi - lo)).clamp(0.0, 1.0) * (n - 1) as f64;
        Self::from_node_coord(t, n)
    }

    /// Stencil for a fractional node coordinate `t` in `[0, n - 1]`.
    #[inline]
    pub fn from_node_coord(t: f64, n: usize) -> Self {
        let i0 = (t.floor() as usize).min(n - 2);
        let f = t - i0 as f64;
        Lerp {
            i0,
            w0: 1.0 - f,
            w1: f,
        }
    }
}

/// One matrix–vector factor pair with `comps` components.
///
/// The matrix spans two axes (`rows` x `cols` nodes), the vector the third
/// (`len` nodes). Storage is component-minor: `matrix[(r * cols + c) * comps + k]`
/// and `vector[i * comps + k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorPair {
    pub rows: usize,
    pub cols: usize,
    pub len: usize,
    pub comps: usize,
    pub matrix: Vec<f64>,
    pub vector: Vec<f64>,
}

impl FactorPair {
    pub fn zeros(rows: usize, cols: usize, len: usize, comps: usize) -> Self {
        FactorPair {
            rows,
            cols,
            len,
            comps,
            matrix: vec![0.0; rows * cols * comps],
            vector: vec![0.0; len * comps],
        }
    }

    /// Interpolated matrix and vector component values at the stencils.
    #[inline]
    pub fn query(&self, row: &Lerp, col: &Lerp, along: &Lerp, m: &mut [f64], v: &mut [f64]) {
        let k = self.comps;
        let c00 = (row.i0 * self.cols + col.i0) * k;
        let c01 = c00 + k;
        let c10 = c00 + self.cols * k;
        let c11 = c10 + k;
        let (w00, w01, w10, w11) = (
            row.w0 * col.w0,
            row.w0 * col.w1,
            row.w1 * col.w0,
            row.w1 * col.w1,
        );
        let mat = &self.matrix;
        for j in 0..k {
            m[j] = w00 * mat[c00 + j] + w01 * mat[c01 + j] + w10 * mat[c10 + j] + w11 * mat[c11 + j];
        }
        let v0 = along.i0 * k;
        let v1 = v0 + k;
        for j in 0..k {
            v[j] = along.w0 * self.vector[v0 + j] + along.w1 * self.vector[v1 + j];
        }
    }

    /// Accumulates `d/d(params)` of `sum_k g[k] * m_k * v_k` into `grad`,
    /// given the interpolated values `m`, `v` at the same stencils.
    #[inline]
    #[allow(clippy::too_many_arguments)]
    pub fn scatter(
        grad: &mut FactorPair,
        row: &Lerp,
        col: &Lerp,
        along: &Lerp,
        m: &[f64],
        v: &[f64],
        g: &[f64],
    ) {
        let k = grad.comps;
        let c00 = (row.i0 * grad.cols + col.i0) * k;
        let c01 = c00 + k;
        let c10 = c00 + grad.cols * k;
        let c11 = c10 + k;
        let (w00, w01, w10, w11) = (
            row.w0 * col.w0,
            row.w0 * col.w1,
            row.w1 * col.w0,
            row.w1 * col.w1,
        );
        let mat = &mut grad.matrix;
        for j in 0..k {
            let gm = g[j] * v[j];
            mat[c00 + j] += w00 * gm;
            mat[c01 + j] += w01 * gm;
            mat[c10 + j] += w10 * gm;
            mat[c11 + j] += w11 * gm;
        }
        let v0 = along.i0 * k;
        let v1 = v0 + k;
        for j in 0..k {
            let gv = g[j] * m[j];
            grad.vector[v0 + j] += along.w0 * gv;
            grad.vector[v1 + j] += along.w1 * gv;
        }
    }

    /// Resamples onto a finer grid over the same domain: bilinear for the
    /// matrix, linear for the vector.
    pub fn upsample(&self, rows: usize, cols: usize, len: usize) -> Result<FactorPair> {
        for (axis, from, to) in [(0, self.rows, rows), (1, self.cols, cols), (2, self.len, len)] {
            if to < from {
                return Err(Error::Downsample { axis, from, to });
            }
        }
        let k = self.comps;
        let mut out = FactorPair::zeros(rows, cols, len, k);
        let rs = node_stencils(self.rows, rows);
        let cs = node_stencils(self.cols, cols);
        let ls = node_stencils(self.len, len);
        let zero = Lerp {
            i0: 0,
            w0: 1.0,
            w1: 0.0,
        };
        let mut m = vec![0.0; k];
        let mut v = vec![0.0; k];
        for (r, rl) in rs.iter().enumerate() {
            for (c, cl) in cs.iter().enumerate() {
                self.query(rl, cl, &zero, &mut m, &mut v);
                let base = (r * cols + c) * k;
                out.matrix[base..base + k].copy_from_slice(&m);
            }
        }
        for (i, ll) in ls.iter().enumerate() {
            self.query(&zero, &zero, ll, &mut m, &mut v);
            out.vector[i * k..(i + 1) * k].copy_from_slice(&v);
        }
        Ok(out)
    }
}

/// Stencils of the `to` new node positions on the `from`-node grid. Node
/// coordinates are formed from integers so coinciding nodes get an exact
/// zero fractional weight.
fn node_stencils(from: usize, to: usize) -> Vec<Lerp> {
    (0..to)
        .map(|i| {
            let t = if to == 1 {
                0.0
            } else {
                (i * (from - 1)) as f64 / (to - 1) as f64
            };
            Lerp::from_node_coord(t, from)
        })
        .collect()
}
