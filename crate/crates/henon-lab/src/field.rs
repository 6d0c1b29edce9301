//! Green functions tabulated on a 4D grid, their mollifications, and smooth
//! off-grid evaluation.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::green::{GreenEngine, GreenKind};
use crate::grid::Grid4;
use crate::map::Point2C;

/// Exponent of the mollifier (1 − r²/ρ²)^k. k = 3 is the smallest power whose
/// kernel is C² across the support boundary, and the field is differentiated twice.
pub const KERNEL_POWER: i32 = 3;

/// Default cap on grid nodes for one field (1 GiB of f64 values).
pub const DEFAULT_NODE_LIMIT: usize = 1 << 27;

#[derive(Clone, Debug, PartialEq)]
pub struct GreenField {
    pub geom: Grid4,
    pub kind: GreenKind,
    /// 0 for a raw field.
    pub mollification_radius: f64,
    pub tol: f64,
    pub values: Vec<f64>,
}

/// Diagnostics from [`build_field`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldReport {
    pub max_error_bound: f64,
    pub unescaped_nodes: usize,
    /// Whether every box axis reaches the filtration radius of both directions.
    pub covers_filtration: bool,
}

impl GreenField {
    pub fn is_raw(&self) -> bool {
        self.mollification_radius == 0.0
    }

    pub fn at(&self, i: [usize; 4]) -> f64 {
        self.values[self.geom.index(i)]
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Pointwise max(G⁺, G⁻) of two fields over the same grid.
    pub fn combine(plus: &GreenField, minus: &GreenField) -> Result<GreenField> {
        if !plus.geom.same_as(&minus.geom) {
            return Err(Error::GeometryMismatch("combine: grids differ".into()));
        }
        if plus.mollification_radius != minus.mollification_radius {
            return Err(Error::GeometryMismatch("combine: mollification radii differ".into()));
        }
        let values = plus
            .values
            .par_iter()
            .zip(minus.values.par_iter())
            .map(|(a, b)| a.max(*b))
            .collect();
        Ok(GreenField {
            geom: plus.geom,
            kind: GreenKind::Combined,
            mollification_radius: plus.mollification_radius,
            tol: plus.tol.max(minus.tol),
            values,
        })
    }

    /// Smooth off-grid value: tensor cubic B-spline with the node values as
    /// coefficients, edges clamped. Points outside the box are projected onto it.
    pub fn interp(&self, x: [f64; 4]) -> f64 {
        let t = self.geom.locate(x);
        let n = self.geom.resolution;
        let strides = self.geom.strides();
        let mut idx = [[0usize; 4]; 4];
        let mut w = [[0.0f64; 4]; 4];
        for a in 0..4 {
            let ta = t[a].clamp(0.0, (n[a] - 1) as f64);
            let base = ta.floor().min((n[a] - 2) as f64);
            let u = ta - base;
            let b = base as isize;
            for k in 0..4 {
                let i = (b - 1 + k as isize).clamp(0, n[a] as isize - 1) as usize;
                idx[a][k] = i * strides[a];
            }
            let u2 = u * u;
            let u3 = u2 * u;
            let om = 1.0 - u;
            w[a] = [
                om * om * om / 6.0,
                (3.0 * u3 - 6.0 * u2 + 4.0) / 6.0,
                (-3.0 * u3 + 3.0 * u2 + 3.0 * u + 1.0) / 6.0,
                u3 / 6.0,
            ];
        }
        let mut acc = 0.0;
        for i0 in 0..4 {
            for i1 in 0..4 {
                let o01 = idx[0][i0] + idx[1][i1];
                let w01 = w[0][i0] * w[1][i1];
                for i2 in 0..4 {
                    let o012 = o01 + idx[2][i2];
                    let w012 = w01 * w[2][i2];
                    let v = &self.values;
                    acc += w012
                        * (w[3][0] * v[o012 + idx[3][0]]
                            + w[3][1] * v[o012 + idx[3][1]]
                            + w[3][2] * v[o012 + idx[3][2]]
                            + w[3][3] * v[o012 + idx[3][3]]);
                }
            }
        }
        acc
    }

    pub fn interp_point(&self, q: Point2C) -> f64 {
        self.interp(q.to_real())
    }
}

/// Tabulate G⁺, G⁻ or G over the grid.
pub fn build_field(
    engine: &GreenEngine,
    geom: Grid4,
    kind: GreenKind,
    tol: f64,
    n_max: usize,
    node_limit: usize,
) -> Result<(GreenField, FieldReport)> {
    if geom.resolution.iter().any(|&n| n < 8) {
        return Err(Error::InvalidArgument("resolution must be at least 8".into()));
    }
    let len = geom.len();
    if len > node_limit {
        return Err(Error::ResourceLimit {
            requested: len,
            limit: node_limit,
        });
    }
    engine.green(Point2C::ORIGIN, kind, tol, n_max)?;
    let results: Vec<(f64, f64, bool)> = (0..len)
        .into_par_iter()
        .map(|idx| {
            let g = engine
                .green(geom.node_point(idx), kind, tol, n_max)
                .expect("parameters validated above");
            (g.value, g.error_bound, g.escape_step.is_none())
        })
        .collect();
    let mut values = Vec::with_capacity(len);
    let mut max_error_bound: f64 = 0.0;
    let mut unescaped_nodes = 0;
    for (v, e, u) in results {
        values.push(v);
        max_error_bound = max_error_bound.max(e);
        unescaped_nodes += u as usize;
    }
    if max_error_bound > tol {
        return Err(Error::InvalidArgument(format!(
            "n_max = {n_max} leaves unescaped nodes with error bound {max_error_bound:e} > tol {tol:e}"
        )));
    }
    let r = engine
        .filtration_radius(crate::map::Direction::Forward)
        .max(engine.filtration_radius(crate::map::Direction::Backward));
    let covers_filtration = geom.radii.iter().all(|&b| b >= r);
    Ok((
        GreenField {
            geom,
            kind,
            mollification_radius: 0.0,
            tol,
            values,
        },
        FieldReport {
            max_error_bound,
            unescaped_nodes,
            covers_filtration,
        },
    ))
}

/// Integer offsets and weights of the discrete mollifier.
#[derive(Clone, Debug)]
pub struct Kernel {
    pub offsets: Vec<[isize; 4]>,
    pub weights: Vec<f64>,
    /// max |offset| per axis
    pub reach: [usize; 4],
}

impl Kernel {
    pub fn new(geom: &Grid4, radius: f64) -> Self {
        let h = geom.spacing();
        let reach: [usize; 4] = std::array::from_fn(|a| (radius / h[a]).ceil() as usize);
        let mut offsets = Vec::new();
        let mut weights = Vec::new();
        let r = |a: usize| -(reach[a] as isize)..=reach[a] as isize;
        for o0 in r(0) {
            for o1 in r(1) {
                for o2 in r(2) {
                    for o3 in r(3) {
                        let o = [o0, o1, o2, o3];
                        let s: f64 = (0..4).map(|a| (o[a] as f64 * h[a]).powi(2)).sum::<f64>() / (radius * radius);
                        if s < 1.0 {
                            offsets.push(o);
                            weights.push((1.0 - s).powi(KERNEL_POWER));
                        }
                    }
                }
            }
        }
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        Self {
            offsets,
            weights,
            reach,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Convolve a raw field with the normalized polynomial bump of the given radius.
/// Near the faces the kernel is truncated to the grid and renormalized.
pub fn mollify(field: &GreenField, radius: f64) -> Result<GreenField> {
    if !(radius >= 0.0) {
        return Err(Error::InvalidArgument("mollification radius must be nonnegative".into()));
    }
    if !field.is_raw() {
        return Err(Error::InvalidArgument("mollify expects a raw field".into()));
    }
    if radius == 0.0 {
        return Ok(field.clone());
    }
    let geom = field.geom;
    let limit = geom.radii.iter().copied().fold(f64::INFINITY, f64::min) / 2.0;
    if radius > limit {
        return Err(Error::BoundaryContamination { radius, limit });
    }
    let kernel = Kernel::new(&geom, radius);
    let strides = geom.strides();
    let lin: Vec<isize> = kernel
        .offsets
        .iter()
        .map(|o| (0..4).map(|a| o[a] * strides[a] as isize).sum())
        .collect();
    let n = geom.resolution;
    let v = &field.values;
    let mut out = vec![0.0; v.len()];
    out.par_chunks_mut(strides[0])
        .enumerate()
        .for_each(|(i0, chunk)| {
            for (rest, slot) in chunk.iter_mut().enumerate() {
                let idx = i0 * strides[0] + rest;
                let i = geom.unravel(idx);
                let interior = (0..4).all(|a| i[a] >= kernel.reach[a] && i[a] + kernel.reach[a] < n[a]);
                if interior {
                    let mut acc = 0.0;
                    for (k, &w) in kernel.weights.iter().enumerate() {
                        acc += w * v[(idx as isize + lin[k]) as usize];
                    }
                    *slot = acc;
                } else {
                    let mut acc = 0.0;
                    let mut wsum = 0.0;
                    for (k, o) in kernel.offsets.iter().enumerate() {
                        let inside = (0..4).all(|a| {
                            let j = i[a] as isize + o[a];
                            j >= 0 && j < n[a] as isize
                        });
                        if inside {
                            acc += kernel.weights[k] * v[(idx as isize + lin[k]) as usize];
                            wsum += kernel.weights[k];
                        }
                    }
                    *slot = acc / wsum;
                }
            }
        });
    Ok(GreenField {
        geom,
        kind: field.kind,
        mollification_radius: radius,
        tol: field.tol,
        values: out,
    })
}

/// Levels κ₁ < κ₂ of a mollified field nesting {G < δ} ⋐ {G_λ < κ₁} ⋐ {G_λ < κ₂} ⋐ box.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct Thresholds {
    pub kappa1: f64,
    pub kappa2: f64,
    /// Smallest G_λ on the two outermost node layers; {G_λ < κ₂} stays below it.
    pub boundary_min: f64,
}

/// Nodes within one cell (L∞, all 81 neighbours) of a node in `set`.
fn dilate(geom: &Grid4, set: &[bool]) -> Vec<bool> {
    let n = geom.resolution;
    let s = geom.strides();
    (0..geom.len())
        .into_par_iter()
        .map(|idx| {
            let i = geom.unravel(idx);
            let lo: [usize; 4] = std::array::from_fn(|a| i[a].saturating_sub(1));
            let hi: [usize; 4] = std::array::from_fn(|a| (i[a] + 1).min(n[a] - 1));
            for j0 in lo[0]..=hi[0] {
                for j1 in lo[1]..=hi[1] {
                    for j2 in lo[2]..=hi[2] {
                        for j3 in lo[3]..=hi[3] {
                            if set[j0 * s[0] + j1 * s[1] + j2 * s[2] + j3] {
                                return true;
                            }
                        }
                    }
                }
            }
            false
        })
        .collect()
}

/// Node-level nesting levels for the extension construction.
///
/// `raw` supplies G itself for {G < δ}; κ₁ is the largest G_λ within one cell of that
/// set, and κ₂ sits halfway between the largest G_λ within one cell of {G_λ < κ₁} and
/// the boundary minimum.
pub fn sublevel_thresholds(field_lambda: &GreenField, raw: &GreenField, delta: f64) -> Result<Thresholds> {
    if !field_lambda.geom.same_as(&raw.geom) {
        return Err(Error::GeometryMismatch("sublevel_thresholds: grids differ".into()));
    }
    if field_lambda.is_raw() {
        return Err(Error::InvalidArgument("sublevel_thresholds expects a mollified field".into()));
    }
    if !raw.is_raw() {
        return Err(Error::InvalidArgument("sublevel_thresholds expects the raw G as second field".into()));
    }
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument("delta must be positive".into()));
    }
    if delta > raw.max() {
        return Err(Error::NestingInfeasible(format!(
            "delta {delta} exceeds the field maximum {}, so {{G < delta}} is the whole grid",
            raw.max()
        )));
    }
    let geom = field_lambda.geom;
    let gl = &field_lambda.values;
    let max_over = |set: &[bool]| {
        set.par_iter()
            .zip(gl.par_iter())
            .filter(|(s, _)| **s)
            .map(|(_, v)| *v)
            .reduce(|| f64::NEG_INFINITY, f64::max)
    };
    let below: Vec<bool> = raw.values.par_iter().map(|&g| g < delta).collect();
    if !below.iter().any(|&b| b) {
        return Err(Error::NestingInfeasible(format!("no node has G < {delta}")));
    }
    let k1_base = max_over(&dilate(&geom, &below));
    let kappa1 = k1_base + 1e-12 * k1_base.abs().max(1.0);
    let inner: Vec<bool> = gl.par_iter().map(|&g| g < kappa1).collect();
    let k1_dilated = max_over(&dilate(&geom, &inner));
    let boundary_min = (0..geom.len())
        .into_par_iter()
        .filter(|&idx| geom.layer(geom.unravel(idx)) <= 1)
        .map(|idx| gl[idx])
        .reduce(|| f64::INFINITY, f64::min);
    if !(k1_dilated < boundary_min) {
        return Err(Error::NestingInfeasible(format!(
            "the one-cell neighbourhood of {{G_lambda < {kappa1:.4}}} reaches G_lambda = {k1_dilated:.4}, \
             not below the boundary minimum {boundary_min:.4}"
        )));
    }
    Ok(Thresholds {
        kappa1,
        kappa2: 0.5 * (k1_dilated + boundary_min),
        boundary_min,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::{HenonMap, C64};

    fn synthetic(geom: Grid4, f: impl Fn([f64; 4]) -> f64 + Sync) -> GreenField {
        GreenField {
            geom,
            kind: GreenKind::Combined,
            mollification_radius: 0.0,
            tol: 1e-8,
            values: (0..geom.len()).map(|i| f(geom.node(geom.unravel(i)))).collect(),
        }
    }

    #[test]
    fn kernel_at_two_cells_has_65_taps() {
        let g = Grid4::cube(17, 2.0).unwrap();
        let k = Kernel::new(&g, 2.0 * g.h());
        assert_eq!(k.len(), 65);
        assert!((k.weights.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn radius_zero_is_identity_and_constants_survive() {
        let g = Grid4::cube(12, 2.0).unwrap();
        let f = synthetic(g, |x| x[0] * x[1] + x[3]);
        assert_eq!(mollify(&f, 0.0).unwrap(), f);
        let c = synthetic(g, |_| 0.75);
        let m = mollify(&c, 2.0 * g.h()).unwrap();
        assert!(m.values.iter().all(|v| (v - 0.75).abs() < 1e-14));
    }

    #[test]
    fn mollify_preconditions() {
        let g = Grid4::cube(12, 2.0).unwrap();
        let f = synthetic(g, |x| x[0]);
        assert!(matches!(mollify(&f, 1.5), Err(Error::BoundaryContamination { .. })));
        let m = mollify(&f, 0.5).unwrap();
        assert!(mollify(&m, 0.5).is_err());
        // linear functions are reproduced away from the faces
        let i = [5, 6, 5, 6];
        assert!((m.at(i) - f.at(i)).abs() < 1e-13);
    }

    #[test]
    fn interpolant_reproduces_affine_functions_and_nodes_of_constants() {
        let g = Grid4::cube(10, 1.5).unwrap();
        let f = synthetic(g, |x| 0.3 + x[0] - 2.0 * x[2] + 0.5 * x[3]);
        let x = [0.123, -0.4, 0.31, 0.07];
        assert!((f.interp(x) - (0.3 + x[0] - 2.0 * x[2] + 0.5 * x[3])).abs() < 1e-12);
        let c = synthetic(g, |_| 2.0);
        assert!((c.interp([1.5, -1.5, 0.2, 1.49]) - 2.0).abs() < 1e-13);
    }

    #[test]
    fn build_field_rejects_small_or_huge_grids() {
        let f = HenonMap::quadratic(C64::new(0.0, 0.5), C64::new(1.0, 0.0)).unwrap();
        let e = GreenEngine::new(&f);
        let small = Grid4::cube(6, 2.0).unwrap();
        assert!(build_field(&e, small, GreenKind::Forward, 1e-8, 40, DEFAULT_NODE_LIMIT).is_err());
        let g = Grid4::cube(10, 2.0).unwrap();
        assert!(matches!(
            build_field(&e, g, GreenKind::Forward, 1e-8, 40, 100),
            Err(Error::ResourceLimit { requested: 10000, limit: 100 })
        ));
    }

    #[test]
    fn shared_nodes_agree_across_resolutions() {
        let f = HenonMap::quadratic(C64::new(0.0, 0.5), C64::new(1.0, 0.0)).unwrap();
        let e = GreenEngine::new(&f);
        let coarse = Grid4::cube(9, 2.0).unwrap();
        let fine = Grid4::cube(17, 2.0).unwrap();
        let (a, _) = build_field(&e, coarse, GreenKind::Combined, 1e-8, 60, DEFAULT_NODE_LIMIT).unwrap();
        let (b, rep) = build_field(&e, fine, GreenKind::Combined, 1e-8, 60, DEFAULT_NODE_LIMIT).unwrap();
        assert!(!rep.covers_filtration);
        for idx in (0..coarse.len()).step_by(37) {
            let i = coarse.unravel(idx);
            let j = [2 * i[0], 2 * i[1], 2 * i[2], 2 * i[3]];
            assert_eq!(a.at(i), b.at(j));
        }
        assert!(a.values.iter().all(|&v| v >= 0.0));
    }
}
