//! Uniform 4D grids over a box in C² ≅ R⁴.
//!
//! Axis order is (x1, y1, x2, y2), row-major with x1 slowest. Node `i` on axis `a`
//! sits at `−r_a + i·h_a` with `h_a = 2r_a/(N_a − 1)`, so the box faces carry nodes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map::Point2C;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid4 {
    pub resolution: [usize; 4],
    pub radii: [f64; 4],
}

impl Grid4 {
    pub fn new(resolution: [usize; 4], radii: [f64; 4]) -> Result<Self> {
        if resolution.iter().any(|&n| n < 2) {
            return Err(Error::InvalidArgument("resolution must be at least 2 per axis".into()));
        }
        if radii.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
            return Err(Error::InvalidArgument("box radii must be positive".into()));
        }
        Ok(Self { resolution, radii })
    }

    /// Same resolution and radius on every axis.
    pub fn cube(resolution: usize, radius: f64) -> Result<Self> {
        Self::new([resolution; 4], [radius; 4])
    }

    pub fn len(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self) -> [f64; 4] {
        std::array::from_fn(|a| 2.0 * self.radii[a] / (self.resolution[a] - 1) as f64)
    }

    /// Largest axis spacing.
    pub fn h(&self) -> f64 {
        self.spacing().into_iter().fold(0.0, f64::max)
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().iter().product()
    }

    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        -self.radii[axis] + i as f64 * self.spacing()[axis]
    }

    pub fn strides(&self) -> [usize; 4] {
        let n = self.resolution;
        [n[1] * n[2] * n[3], n[2] * n[3], n[3], 1]
    }

    pub fn index(&self, i: [usize; 4]) -> usize {
        let s = self.strides();
        i[0] * s[0] + i[1] * s[1] + i[2] * s[2] + i[3]
    }

    pub fn unravel(&self, mut idx: usize) -> [usize; 4] {
        let mut out = [0; 4];
        for a in (0..4).rev() {
            out[a] = idx % self.resolution[a];
            idx /= self.resolution[a];
        }
        out
    }

    pub fn node(&self, i: [usize; 4]) -> [f64; 4] {
        let h = self.spacing();
        std::array::from_fn(|a| -self.radii[a] + i[a] as f64 * h[a])
    }

    pub fn node_point(&self, idx: usize) -> Point2C {
        Point2C::from_real(self.node(self.unravel(idx)))
    }

    /// Number of node layers between `i` and the nearest box face (0 on a face).
    pub fn layer(&self, i: [usize; 4]) -> usize {
        (0..4)
            .map(|a| i[a].min(self.resolution[a] - 1 - i[a]))
            .min()
            .unwrap_or(0)
    }

    pub fn contains(&self, x: [f64; 4]) -> bool {
        (0..4).all(|a| x[a].abs() <= self.radii[a])
    }

    /// Fractional grid coordinates of a point.
    pub fn locate(&self, x: [f64; 4]) -> [f64; 4] {
        let h = self.spacing();
        std::array::from_fn(|a| (x[a] + self.radii[a]) / h[a])
    }

    /// Same node set up to floating tolerance.
    pub fn same_as(&self, other: &Grid4) -> bool {
        self.resolution == other.resolution
            && (0..4).all(|a| (self.radii[a] - other.radii[a]).abs() <= 1e-12 * self.radii[a])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn nodes_span_the_box() {
        let g = Grid4::cube(5, 2.0).unwrap();
        assert_eq!(g.len(), 625);
        assert_eq!(g.spacing(), [1.0; 4]);
        assert_eq!(g.node([0, 0, 0, 0]), [-2.0; 4]);
        assert_eq!(g.node([4, 2, 0, 1]), [2.0, 0.0, -2.0, -1.0]);
        assert_eq!(g.layer([4, 2, 1, 1]), 0);
        assert_eq!(g.layer([2, 2, 1, 3]), 1);
    }

    #[test]
    fn rejects_degenerate_geometry() {
        assert!(Grid4::cube(1, 1.0).is_err());
        assert!(Grid4::cube(8, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn index_roundtrip(a in 0usize..7, b in 0usize..5, c in 0usize..6, d in 0usize..9) {
            let g = Grid4::new([7, 5, 6, 9], [1.0, 2.0, 3.0, 4.0]).unwrap();
            let i = [a, b, c, d];
            prop_assert_eq!(g.unravel(g.index(i)), i);
            let x = g.node(i);
            let f = g.locate(x);
            for k in 0..4 {
                prop_assert!((f[k] - i[k] as f64).abs() < 1e-12);
            }
        }
    }
}
