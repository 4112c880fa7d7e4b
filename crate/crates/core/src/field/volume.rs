use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::grid::{FactorPair, Lerp};
use crate::error::{Error, Result};
use crate::geometry::{Region, Vec3, WarpedPoint};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// Three axis pairs over the cube: (XY | Z), (XZ | Y), (YZ | X).
    EuclideanVm,
    /// One pair: a (theta, phi) matrix perpendicular to the radius and an
    /// s vector along it.
    SphericalVm,
}

impl Layout {
    /// `(matrix row axis, matrix col axis, vector axis)` for every pair.
    pub fn pair_axes(self) -> &'static [[usize; 3]] {
        match self {
            Layout::EuclideanVm => &[[0, 1, 2], [0, 2, 1], [1, 2, 0]],
            Layout::SphericalVm => &[[0, 1, 2]],
        }
    }

    pub fn region(self) -> Region {
        match self {
            Layout::EuclideanVm => Region::Foreground,
            Layout::SphericalVm => Region::Background,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FactorGroup {
    Density,
    Appearance,
}

/// Per-axis interpolation stencils for one query point.
#[derive(Clone, Copy, Debug)]
pub struct Stencil([Lerp; 3]);

/// A feature volume represented as sums of matrix x vector products.
#[derive(Clone, Debug, PartialEq)]
pub struct FactoredVolume {
    pub layout: Layout,
    pub resolution: [usize; 3],
    pub domain: [[f64; 2]; 3],
    pub density: Vec<FactorPair>,
    pub appearance: Vec<FactorPair>,
}

impl FactoredVolume {
    /// Zero volume. Euclidean domains span `[-half_width, half_width]^3`;
    /// spherical ones `theta in [0, pi], phi in [-pi, pi], s in [0, 1]`.
    pub fn zeros(
        layout: Layout,
        resolution: [usize; 3],
        density_comps: usize,
        appearance_comps: usize,
        half_width: f64,
    ) -> Result<Self> {
        if resolution.iter().any(|&n| n < 2) {
            return Err(Error::Config(format!(
                "grid resolution must be >= 2 per axis, got {resolution:?}"
            )));
        }
        if density_comps == 0 || appearance_comps == 0 {
            return Err(Error::Config("component count K must be >= 1".into()));
        }
        let domain = match layout {
            Layout::EuclideanVm => [[-half_width, half_width]; 3],
            Layout::SphericalVm => [[0.0, PI], [-PI, PI], [0.0, 1.0]],
        };
        let make = |k: usize| {
            layout
                .pair_axes()
                .iter()
                .map(|&[a, b, c]| FactorPair::zeros(resolution[a], resolution[b], resolution[c], k))
                .collect::<Vec<_>>()
        };
        Ok(FactoredVolume {
            layout,
            resolution,
            domain,
            density: make(density_comps),
            appearance: make(appearance_comps),
        })
    }

    pub fn density_comps(&self) -> usize {
        self.density[0].comps
    }

    pub fn appearance_comps(&self) -> usize {
        self.appearance[0].comps
    }

    /// Channels produced by an appearance query.
    pub fn appearance_width(&self) -> usize {
        self.appearance.iter().map(|p| p.comps).sum()
    }

    #[inline]
    pub fn stencil(&self, coords: &Vec3) -> Stencil {
        Stencil(std::array::from_fn(|a| {
            Lerp::new(coords[a], self.domain[a][0], self.domain[a][1], self.resolution[a])
        }))
    }

    #[inline]
    pub fn density_feature(&self, st: &Stencil) -> f64 {
        let k = self.density_comps();
        let mut m = [0.0; MAX_STACK];
        let mut v = [0.0; MAX_STACK];
        let (m, v) = scratch(&mut m, &mut v, k);
        let mut acc = 0.0;
        for (pair, &[a, b, c]) in self.density.iter().zip(self.layout.pair_axes()) {
            pair.query(&st.0[a], &st.0[b], &st.0[c], m, v);
            for j in 0..k {
                acc += m[j] * v[j];
            }
        }
        acc
    }

    /// Appearance channels: pair-major, component-minor products `m_k * v_k`.
    #[inline]
    pub fn appearance_features(&self, st: &Stencil, out: &mut [f64]) {
        let k = self.appearance_comps();
        let mut m = [0.0; MAX_STACK];
        let mut v = [0.0; MAX_STACK];
        let (m, v) = scratch(&mut m, &mut v, k);
        for (p, (pair, &[a, b, c])) in self.appearance.iter().zip(self.layout.pair_axes()).enumerate() {
            pair.query(&st.0[a], &st.0[b], &st.0[c], m, v);
            for j in 0..k {
                out[p * k + j] = m[j] * v[j];
            }
        }
    }

    /// Adds `g * d(density_feature)/d(params)` into `grad`.
    pub fn scatter_density(&self, grad: &mut FactoredVolume, st: &Stencil, g: f64) {
        let k = self.density_comps();
        let mut m = [0.0; MAX_STACK];
        let mut v = [0.0; MAX_STACK];
        let gs = [g; MAX_STACK];
        let (m, v) = scratch(&mut m, &mut v, k);
        for ((pair, gp), &[a, b, c]) in self
            .density
            .iter()
            .zip(grad.density.iter_mut())
            .zip(self.layout.pair_axes())
        {
            pair.query(&st.0[a], &st.0[b], &st.0[c], m, v);
            FactorPair::scatter(gp, &st.0[a], &st.0[b], &st.0[c], m, v, &gs[..k]);
        }
    }

    /// Adds the vector-Jacobian product of the appearance channels with `g`.
    pub fn scatter_appearance(&self, grad: &mut FactoredVolume, st: &Stencil, g: &[f64]) {
        let k = self.appearance_comps();
        let mut m = [0.0; MAX_STACK];
        let mut v = [0.0; MAX_STACK];
        let (m, v) = scratch(&mut m, &mut v, k);
        for (p, ((pair, gp), &[a, b, c])) in self
            .appearance
            .iter()
            .zip(grad.appearance.iter_mut())
            .zip(self.layout.pair_axes())
            .enumerate()
        {
            pair.query(&st.0[a], &st.0[b], &st.0[c], m, v);
            FactorPair::scatter(gp, &st.0[a], &st.0[b], &st.0[c], m, v, &g[p * k..(p + 1) * k]);
        }
    }

    /// Factor features at a warped point: one summed scalar for the density
    /// group, the stacked per-component products for appearance.
    pub fn interpolate(&self, wp: &WarpedPoint, group: FactorGroup) -> Vec<f64> {
        debug_assert_eq!(wp.region, self.layout.region());
        let st = self.stencil(&wp.coords);
        match group {
            FactorGroup::Density => vec![self.density_feature(&st)],
            FactorGroup::Appearance => {
                let mut out = vec![0.0; self.appearance_width()];
                self.appearance_features(&st, &mut out);
                out
            }
        }
    }

    pub fn upsample(&self, resolution: [usize; 3]) -> Result<FactoredVolume> {
        for a in 0..3 {
            if resolution[a] < self.resolution[a] {
                return Err(Error::Downsample {
                    axis: a,
                    from: self.resolution[a],
                    to: resolution[a],
                });
            }
        }
        let resample = |pairs: &[FactorPair]| -> Result<Vec<FactorPair>> {
            pairs
                .iter()
                .zip(self.layout.pair_axes())
                .map(|(p, &[a, b, c])| p.upsample(resolution[a], resolution[b], resolution[c]))
                .collect()
        };
        Ok(FactoredVolume {
            layout: self.layout,
            resolution,
            domain: self.domain,
            density: resample(&self.density)?,
            appearance: resample(&self.appearance)?,
        })
    }

    pub fn zeros_like(&self) -> FactoredVolume {
        let z = |pairs: &[FactorPair]| {
            pairs
                .iter()
                .map(|p| FactorPair::zeros(p.rows, p.cols, p.len, p.comps))
                .collect()
        };
        FactoredVolume {
            layout: self.layout,
            resolution: self.resolution,
            domain: self.domain,
            density: z(&self.density),
            appearance: z(&self.appearance),
        }
    }

    pub fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.density
            .iter()
            .chain(self.appearance.iter())
            .flat_map(|p| [p.matrix.as_slice(), p.vector.as_slice()])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.density
            .iter_mut()
            .chain(self.appearance.iter_mut())
            .flat_map(|p| [&mut p.matrix, &mut p.vector])
    }
}

/// Component counts above this spill to the heap.
const MAX_STACK: usize = 64;

#[inline]
fn scratch<'a>(
    m: &'a mut [f64; MAX_STACK],
    v: &'a mut [f64; MAX_STACK],
    k: usize,
) -> (&'a mut [f64], &'a mut [f64]) {
    assert!(k <= MAX_STACK, "at most {MAX_STACK} components per factor group");
    (&mut m[..k], &mut v[..k])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pair_product() {
        let mut vol = FactoredVolume::zeros(Layout::SphericalVm, [2, 2, 2], 1, 1, 1.0).unwrap();
        vol.density[0].matrix.fill(2.0);
        vol.density[0].vector.fill(3.0);
        let wp = WarpedPoint {
            region: Region::Background,
            coords: Vec3::new(1.0, 0.3, 0.5),
        };
        assert_eq!(vol.interpolate(&wp, FactorGroup::Density), vec![6.0]);
    }

    #[test]
    fn zero_field_zero_features() {
        let vol = FactoredVolume::zeros(Layout::EuclideanVm, [3, 4, 5], 2, 3, 1.0).unwrap();
        let wp = WarpedPoint {
            region: Region::Foreground,
            coords: Vec3::new(0.2, -0.1, 0.7),
        };
        assert_eq!(vol.interpolate(&wp, FactorGroup::Density), vec![0.0]);
        assert_eq!(vol.interpolate(&wp, FactorGroup::Appearance), vec![0.0; 9]);
    }

    #[test]
    fn construction_errors() {
        assert!(FactoredVolume::zeros(Layout::EuclideanVm, [1, 4, 4], 1, 1, 1.0).is_err());
        assert!(FactoredVolume::zeros(Layout::EuclideanVm, [4, 4, 4], 0, 1, 1.0).is_err());
    }
}
