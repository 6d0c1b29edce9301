//! Discrete equilibrium measure μ ≈ dd^cG⁺ ∧ dd^cG⁻ from mollified Green fields.
//!
//! The complex Hessian ∂²u/∂z_j∂z̄_k is assembled from central real second differences,
//! the wedge of two (1,1)-forms is taken against Lebesgue measure, and the result is
//! integrated cell by cell (one dual cell per node).

use std::sync::OnceLock;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{GreenField, Kernel};
use crate::grid::Grid4;
use crate::map::Point2C;

/// Hermitian 2×2 matrix (h11, h12; conj(h12), h22).
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Hermitian2 {
    pub h11: f64,
    pub h22: f64,
    pub h12: Complex64,
}

impl Hermitian2 {
    pub const IDENTITY: Hermitian2 = Hermitian2 {
        h11: 1.0,
        h22: 1.0,
        h12: Complex64::new(0.0, 0.0),
    };

    pub fn min_eigenvalue(&self) -> f64 {
        let m = 0.5 * (self.h11 + self.h22);
        let d = 0.5 * (self.h11 - self.h22);
        m - (d * d + self.h12.norm_sqr()).sqrt()
    }
}

/// Real second partials of `v` at the origin of its offset argument, axes (x1,y1,x2,y2).
pub(crate) fn real_hessian(v: impl Fn([isize; 4]) -> f64, h: [f64; 4]) -> [[f64; 4]; 4] {
    let c = v([0; 4]);
    let mut d = [[0.0; 4]; 4];
    for a in 0..4 {
        let mut p = [0isize; 4];
        p[a] = 1;
        let mut m = [0isize; 4];
        m[a] = -1;
        d[a][a] = (v(p) - 2.0 * c + v(m)) / (h[a] * h[a]);
        for b in a + 1..4 {
            let mut pp = [0isize; 4];
            pp[a] = 1;
            pp[b] = 1;
            let mut pm = pp;
            pm[b] = -1;
            let mut mp = pp;
            mp[a] = -1;
            let mut mm = mp;
            mm[b] = -1;
            let x = (v(pp) - v(pm) - v(mp) + v(mm)) / (4.0 * h[a] * h[b]);
            d[a][b] = x;
            d[b][a] = x;
        }
    }
    d
}

/// ∂²u/∂z_j∂z̄_k = ¼[(∂x_j∂x_k + ∂y_j∂y_k) + i(∂x_j∂y_k − ∂y_j∂x_k)].
pub(crate) fn complex_hessian2(d: &[[f64; 4]; 4]) -> Hermitian2 {
    Hermitian2 {
        h11: 0.25 * (d[0][0] + d[1][1]),
        h22: 0.25 * (d[2][2] + d[3][3]),
        h12: Complex64::new(0.25 * (d[0][2] + d[1][3]), 0.25 * (d[0][3] - d[1][2])),
    }
}

/// Discrete complex Hessian of a grid field at an interior node.
pub fn mixed_hessian(field: &GreenField, node: [usize; 4]) -> Result<Hermitian2> {
    if field.geom.layer(node) < 1 {
        return Err(Error::BoundaryNode(node));
    }
    Ok(hessian_unchecked(&field.values, &field.geom, node))
}

fn hessian_unchecked(values: &[f64], geom: &Grid4, node: [usize; 4]) -> Hermitian2 {
    let s = geom.strides();
    let base = geom.index(node) as isize;
    let v = |o: [isize; 4]| {
        let off: isize = (0..4).map(|a| o[a] * s[a] as isize).sum();
        values[(base + off) as usize]
    };
    complex_hessian2(&real_hessian(v, geom.spacing()))
}

/// dd^c with d^c = (i/π)∂̄-convention: the wedge of (i/π)∂∂̄u and (i/π)∂∂̄v has density
/// 4/π² times the mixed determinant against Lebesgue measure.
pub const KAPPA_ANALYTIC: f64 = 4.0 / (std::f64::consts::PI * std::f64::consts::PI);

/// κ·(hp11·hm22 + hp22·hm11 − 2·Re(hp12·conj(hm12))).
pub fn wedge_density(hp: &Hermitian2, hm: &Hermitian2, kappa: f64) -> f64 {
    kappa * (hp.h11 * hm.h22 + hp.h22 * hm.h11 - 2.0 * (hp.h12 * hm.h12.conj()).re)
}

/// Result of the Fubini–Study calibration.
#[derive(Clone, Debug, Serialize)]
pub struct Calibration {
    pub h: f64,
    /// Half-widths of the nested boxes.
    pub boxes: Vec<f64>,
    /// Σ density·h⁴ with κ = 1 inside each box.
    pub integrals: Vec<f64>,
    /// Limit of the integrals as the box grows, from a fit in 1/L² and 1/L⁴.
    pub extrapolated: f64,
    /// 1 / extrapolated
    pub kappa: f64,
    pub kappa_analytic: f64,
    /// κ · integral over the largest box
    pub mass_on_grid: f64,
}

/// Integrate the FS self-wedge (dd^c ½log(1+‖z‖²))² on a grid of spacing `h` over
/// nested boxes [−L, L]⁴, extrapolate to the whole space and set κ = 1/limit.
pub fn calibrate(h: f64, boxes: &[f64]) -> Result<Calibration> {
    if boxes.len() < 3 || !(h > 0.0) {
        return Err(Error::InvalidArgument("calibration needs h > 0 and at least three boxes".into()));
    }
    let steps: Vec<usize> = boxes.iter().map(|l| (l / h).round() as usize).collect();
    if steps.windows(2).any(|w| w[0] >= w[1]) || steps[0] < 2 {
        return Err(Error::InvalidArgument("boxes must be increasing multiples of h".into()));
    }
    let k = *steps.last().expect("nonempty") as isize;
    let n = (2 * k + 1) as usize;
    // the potential only depends on the integer ‖node‖², so tabulate it
    let table: Vec<f64> = (0..=(4 * k * k) as usize)
        .map(|r2| 0.5 * (r2 as f64 * h * h).ln_1p())
        .collect();
    let hh = [h; 4];
    // z_j ↦ i·z_j rotates the (x_j, y_j) index plane by 90° and leaves the discrete
    // wedge unchanged, so one representative per rotation orbit suffices.
    let mut plane: Vec<(isize, isize, f64)> = vec![(0, 0, 1.0)];
    for a in 1..k {
        for b in 0..k {
            plane.push((a, b, 4.0));
        }
    }
    let parts: Vec<Vec<f64>> = plane
        .par_iter()
        .map(|&(i0, i1, w0)| {
            let mut local = vec![0.0; n];
            for &(i2, i3, w1) in &plane {
                let v = |o: [isize; 4]| {
                    let (a, b, c, d) = (i0 + o[0], i1 + o[1], i2 + o[2], i3 + o[3]);
                    table[(a * a + b * b + c * c + d * d) as usize]
                };
                let hs = complex_hessian2(&real_hessian(v, hh));
                let dens = wedge_density(&hs, &hs, 1.0);
                let c = i0.abs().max(i1.abs()).max(i2.abs()).max(i3.abs()) as usize;
                local[c] += w0 * w1 * dens;
            }
            local
        })
        .collect();
    let mut bins = vec![0.0; n];
    for part in parts {
        for (a, b) in bins.iter_mut().zip(part) {
            *a += b;
        }
    }
    let vol = h.powi(4);
    let integrals: Vec<f64> = steps
        .iter()
        .map(|&s| bins[..s].iter().sum::<f64>() * vol)
        .collect();
    // least squares for I(L) = I∞ + a/L² + b/L⁴
    let rows: Vec<[f64; 3]> = boxes.iter().map(|l| [1.0, l.powi(-2), l.powi(-4)]).collect();
    let coef = least_squares3(&rows, &integrals);
    let extrapolated = coef[0];
    let kappa = 1.0 / extrapolated;
    Ok(Calibration {
        h,
        boxes: boxes.to_vec(),
        mass_on_grid: kappa * integrals[integrals.len() - 1],
        integrals,
        extrapolated,
        kappa,
        kappa_analytic: KAPPA_ANALYTIC,
    })
}

fn least_squares3(rows: &[[f64; 3]], y: &[f64]) -> [f64; 3] {
    let mut a = [[0.0; 3]; 3];
    let mut b = [0.0; 3];
    for (r, &yv) in rows.iter().zip(y) {
        for i in 0..3 {
            b[i] += r[i] * yv;
            for j in 0..3 {
                a[i][j] += r[i] * r[j];
            }
        }
    }
    // Gaussian elimination with partial pivoting
    let mut m = [[0.0; 4]; 3];
    for i in 0..3 {
        m[i][..3].copy_from_slice(&a[i]);
        m[i][3] = b[i];
    }
    for col in 0..3 {
        let piv = (col..3)
            .max_by(|&p, &q| m[p][col].abs().total_cmp(&m[q][col].abs()))
            .expect("nonempty");
        m.swap(col, piv);
        for r in col + 1..3 {
            let f = m[r][col] / m[col][col];
            for c in col..4 {
                m[r][c] -= f * m[col][c];
            }
        }
    }
    let mut x = [0.0; 3];
    for i in (0..3).rev() {
        let s: f64 = (i + 1..3).map(|j| m[i][j] * x[j]).sum();
        x[i] = (m[i][3] - s) / m[i][i];
    }
    x
}

pub const CALIBRATION_H: f64 = 0.25;
pub const CALIBRATION_BOXES: [f64; 3] = [6.0, 9.0, 12.0];

/// κ from the default calibration grid, computed once per process.
pub fn default_kappa() -> f64 {
    static KAPPA: OnceLock<f64> = OnceLock::new();
    *KAPPA.get_or_init(|| {
        calibrate(CALIBRATION_H, &CALIBRATION_BOXES)
            .expect("default calibration grid is valid")
            .kappa
    })
}

/// Nonnegative cell masses summing to 1.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteMeasure {
    pub geom: Grid4,
    pub masses: Vec<f64>,
    /// Total negative mass removed by clipping (as a positive number).
    pub clipped_mass: f64,
    /// Total of the clipped masses before normalization.
    pub raw_total: f64,
    support: Vec<usize>,
}

#[derive(Clone, Copy, Debug)]
pub struct MeasureOptions {
    pub kappa: f64,
    /// Largest admissible clipped / (positive + clipped) ratio.
    pub clip_ceiling: f64,
    /// Boundary layers left out; `None` means kernel reach + 1.
    pub margin: Option<usize>,
}

impl Default for MeasureOptions {
    fn default() -> Self {
        Self {
            kappa: default_kappa(),
            clip_ceiling: 0.05,
            margin: None,
        }
    }
}

impl DiscreteMeasure {
    /// Validate and wrap already-normalized masses.
    pub fn from_parts(geom: Grid4, masses: Vec<f64>, clipped_mass: f64, raw_total: f64) -> Result<Self> {
        if masses.len() != geom.len() {
            return Err(Error::GeometryMismatch(format!(
                "{} masses for {} cells",
                masses.len(),
                geom.len()
            )));
        }
        if masses.iter().any(|m| !(*m >= 0.0) || !m.is_finite()) {
            return Err(Error::InvalidArgument("masses must be finite and nonnegative".into()));
        }
        let support = masses
            .iter()
            .enumerate()
            .filter(|(_, &m)| m > 0.0)
            .map(|(i, _)| i)
            .collect();
        Ok(Self {
            geom,
            masses,
            clipped_mass,
            raw_total,
            support,
        })
    }

    /// Cells with positive mass, in index order.
    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn clipped_fraction(&self) -> f64 {
        self.clipped_mass / (self.raw_total + self.clipped_mass)
    }

    pub fn total(&self) -> f64 {
        det_sum(self.support.len(), |k| self.masses[self.support[k]])
    }

    pub fn center(&self, idx: usize) -> Point2C {
        self.geom.node_point(idx)
    }

    /// Σ mass·f(center), summed in a fixed order.
    pub fn integrate_fn(&self, f: impl Fn(Point2C) -> f64 + Sync) -> f64 {
        det_sum(self.support.len(), |k| {
            let idx = self.support[k];
            self.masses[idx] * f(self.center(idx))
        })
    }

    /// Σ mass·f(cell index), summed in a fixed order.
    pub fn integrate_fn_indexed(&self, f: impl Fn(usize) -> f64 + Sync) -> f64 {
        det_sum(self.support.len(), |k| {
            let idx = self.support[k];
            self.masses[idx] * f(idx)
        })
    }

    /// Cell draws proportional to mass, jittered uniformly in the cell; deterministic
    /// in (seed, count) independent of the thread count.
    pub fn sample(&self, count: usize, seed: u64) -> Vec<Point2C> {
        const BLOCK: usize = 1024;
        let table = AliasTable::new(&self.support.iter().map(|&i| self.masses[i]).collect::<Vec<_>>());
        let h = self.geom.spacing();
        let blocks = count.div_ceil(BLOCK);
        (0..blocks)
            .into_par_iter()
            .flat_map_iter(|b| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(b as u64);
                let n = BLOCK.min(count - b * BLOCK);
                let table = &table;
                (0..n)
                    .map(|_| {
                        let cell = self.support[table.draw(&mut rng)];
                        let x = self.geom.node(self.geom.unravel(cell));
                        let y: [f64; 4] = std::array::from_fn(|a| x[a] + (rng.random::<f64>() - 0.5) * h[a]);
                        Point2C::from_real(y)
                    })
                    .collect::<Vec<_>>()
            })
            .collect()
    }
}

/// ⟨μ, obs⟩ with the number and mass of cells whose value needed the floor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Integral {
    pub value: f64,
    pub floored_cells: usize,
    pub floored_mass: f64,
}

/// Midpoint rule Σ mass·obs(center). Values below `floor` (including −∞ at a singular
/// center) are replaced by `floor` and reported; NaN is an error.
pub fn integrate(measure: &DiscreteMeasure, obs: &crate::observable::Observable, floor: f64) -> Result<Integral> {
    let sup = measure.support();
    let vals: Vec<f64> = sup.par_iter().map(|&i| obs.eval(measure.center(i))).collect();
    if vals.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument(format!("{} is undefined at a cell center", obs.label)));
    }
    let low = |v: f64| v < floor;
    let floored_cells = vals.iter().filter(|&&v| low(v)).count();
    let floored_mass = neumaier_sum(sup.iter().zip(&vals).filter(|(_, &v)| low(v)).map(|(&i, _)| measure.masses[i]));
    let value = det_sum(sup.len(), |k| measure.masses[sup[k]] * vals[k].max(floor));
    Ok(Integral {
        value,
        floored_cells,
        floored_mass,
    })
}

/// Compensated (Neumaier) sum.
pub fn neumaier_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut s = 0.0f64;
    let mut c = 0.0f64;
    for x in xs {
        let t = s + x;
        if s.abs() >= x.abs() {
            c += (s - t) + x;
        } else {
            c += (x - t) + s;
        }
        s = t;
    }
    s + c
}

/// Compensated sum of `f(0..n)` in fixed-size chunks, so the result does not depend
/// on scheduling.
pub fn det_sum(n: usize, f: impl Fn(usize) -> f64 + Sync) -> f64 {
    const CHUNK: usize = 4096;
    let parts: Vec<f64> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| neumaier_sum((c * CHUNK..((c + 1) * CHUNK).min(n)).map(&f)))
        .collect();
    neumaier_sum(parts)
}

/// Walker alias table.
#[derive(Clone, Debug)]
pub struct AliasTable {
    prob: Vec<f64>,
    alias: Vec<usize>,
}

impl AliasTable {
    pub fn new(weights: &[f64]) -> Self {
        let n = weights.len();
        let total: f64 = weights.iter().sum();
        let mut scaled: Vec<f64> = weights.iter().map(|w| w * n as f64 / total).collect();
        let mut prob = vec![1.0; n];
        let mut alias: Vec<usize> = (0..n).collect();
        let (mut small, mut large): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| scaled[i] < 1.0);
        while let (Some(s), Some(&l)) = (small.pop(), large.last()) {
            prob[s] = scaled[s];
            alias[s] = l;
            scaled[l] -= 1.0 - scaled[s];
            if scaled[l] < 1.0 {
                large.pop();
                small.push(l);
            }
        }
        Self { prob, alias }
    }

    pub fn draw<R: Rng>(&self, rng: &mut R) -> usize {
        let i = rng.random_range(0..self.prob.len());
        if rng.random::<f64>() < self.prob[i] {
            i
        } else {
            self.alias[i]
        }
    }
}

/// μ from two mollified fields over the same grid.
pub fn build_measure(plus: &GreenField, minus: &GreenField, opts: &MeasureOptions) -> Result<DiscreteMeasure> {
    if !plus.geom.same_as(&minus.geom) {
        return Err(Error::GeometryMismatch("fields live on different grids".into()));
    }
    if plus.is_raw() || minus.is_raw() {
        return Err(Error::InvalidArgument("build_measure needs mollified fields".into()));
    }
    let geom = plus.geom;
    let margin = opts.margin.unwrap_or_else(|| {
        let rho = plus.mollification_radius.max(minus.mollification_radius);
        Kernel::new(&geom, rho).reach.into_iter().max().unwrap_or(0) + 1
    });
    let margin = margin.max(1);
    let vol = geom.cell_volume();
    let s0 = geom.strides()[0];
    let mut raw = vec![0.0; geom.len()];
    let neg: f64 = raw
        .par_chunks_mut(s0)
        .enumerate()
        .map(|(i0, chunk)| {
            let mut n = 0.0;
            for (rest, slot) in chunk.iter_mut().enumerate() {
                let idx = i0 * s0 + rest;
                let i = geom.unravel(idx);
                if geom.layer(i) < margin {
                    continue;
                }
                let hp = hessian_unchecked(&plus.values, &geom, i);
                let hm = hessian_unchecked(&minus.values, &geom, i);
                let m = wedge_density(&hp, &hm, opts.kappa) * vol;
                if m > 0.0 {
                    *slot = m;
                } else {
                    n -= m;
                }
            }
            n
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    let pos = det_sum(raw.len(), |i| raw[i]);
    if pos < 1e-6 {
        return Err(Error::EmptyMeasure(pos));
    }
    let fraction = neg / (pos + neg);
    if fraction > opts.clip_ceiling {
        return Err(Error::ClippedFraction {
            fraction,
            ceiling: opts.clip_ceiling,
        });
    }
    raw.par_iter_mut().for_each(|m| *m /= pos);
    DiscreteMeasure::from_parts(geom, raw, neg, pos)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::green::GreenKind;

    fn synthetic(geom: Grid4, radius: f64, f: impl Fn([f64; 4]) -> f64) -> GreenField {
        GreenField {
            geom,
            kind: GreenKind::Combined,
            mollification_radius: radius,
            tol: 1e-8,
            values: (0..geom.len()).map(|i| f(geom.node(geom.unravel(i)))).collect(),
        }
    }

    #[test]
    fn hessian_of_norm_squared_is_identity() {
        let g = Grid4::cube(9, 1.0).unwrap();
        let f = synthetic(g, 0.0, |x| x.iter().map(|v| v * v).sum());
        let h = mixed_hessian(&f, [3, 4, 5, 2]).unwrap();
        assert!((h.h11 - 1.0).abs() < 1e-12 && (h.h22 - 1.0).abs() < 1e-12 && h.h12.norm() < 1e-12);
        assert!(matches!(mixed_hessian(&f, [0, 4, 4, 4]), Err(Error::BoundaryNode(_))));
    }

    #[test]
    fn pluriharmonic_field_has_zero_hessian() {
        let g = Grid4::cube(9, 1.0).unwrap();
        let f = synthetic(g, 0.0, |x| x[0]);
        let h = mixed_hessian(&f, [4, 4, 4, 4]).unwrap();
        assert!(h.h11.abs() < 1e-12 && h.h22.abs() < 1e-12 && h.h12.norm() < 1e-12);
        // Re(z1 z2) = x1x2 − y1y2 is pluriharmonic too
        let f = synthetic(g, 0.0, |x| x[0] * x[2] - x[1] * x[3]);
        let h = mixed_hessian(&f, [2, 5, 4, 3]).unwrap();
        assert!(h.h11.abs() < 1e-12 && h.h22.abs() < 1e-12 && h.h12.norm() < 1e-12);
    }

    #[test]
    fn hermitian_cross_terms() {
        // Re(z1 z̄2) has ∂²/∂z1∂z̄2 = ½, Im(z1 z̄2) has −i/2
        let g = Grid4::cube(9, 1.0).unwrap();
        let f = synthetic(g, 0.0, |x| x[0] * x[2] + x[1] * x[3]);
        let h = mixed_hessian(&f, [4, 4, 4, 4]).unwrap();
        assert!((h.h12 - Complex64::new(0.5, 0.0)).norm() < 1e-12);
        let f = synthetic(g, 0.0, |x| x[1] * x[2] - x[0] * x[3]);
        let h = mixed_hessian(&f, [4, 4, 4, 4]).unwrap();
        assert!((h.h12 - Complex64::new(0.0, -0.5)).norm() < 1e-12);
    }

    #[test]
    fn fubini_study_hessian_at_origin() {
        // ½log(1+|z|²) has ∂∂̄ = ½δ_jk at 0; the O(h²) term is bounded by 2h²
        let h = 0.05;
        let g = Grid4::cube(21, 10.0 * h).unwrap();
        let f = synthetic(g, 0.0, |x| 0.5 * x.iter().map(|v| v * v).sum::<f64>().ln_1p());
        let hs = mixed_hessian(&f, [10, 10, 10, 10]).unwrap();
        assert!((hs.h11 - 0.5).abs() < 2.0 * h * h);
        assert!((hs.h22 - 0.5).abs() < 2.0 * h * h);
        assert!(hs.h12.norm() < 1e-12);
    }

    #[test]
    fn wedge_examples() {
        let k = 0.3;
        assert_eq!(wedge_density(&Hermitian2::IDENTITY, &Hermitian2::IDENTITY, k), 2.0 * k);
        assert_eq!(wedge_density(&Hermitian2::default(), &Hermitian2::IDENTITY, k), 0.0);
    }

    #[test]
    fn calibration_recovers_the_analytic_constant() {
        let c = calibrate(0.25, &[3.0, 4.5, 6.0]).unwrap();
        assert!((c.kappa / KAPPA_ANALYTIC - 1.0).abs() < 0.02, "{c:?}");
        assert!(c.integrals.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn degenerate_minus_field_gives_empty_measure() {
        let g = Grid4::cube(12, 1.0).unwrap();
        let p = synthetic(g, 0.2, |x| x.iter().map(|v| v * v).sum());
        let m = synthetic(g, 0.2, |_| 0.0);
        let opts = MeasureOptions {
            kappa: KAPPA_ANALYTIC,
            ..MeasureOptions::default()
        };
        assert!(matches!(build_measure(&p, &m, &opts), Err(Error::EmptyMeasure(_))));
        let raw = synthetic(g, 0.0, |_| 0.0);
        assert!(build_measure(&p, &raw, &opts).is_err());
    }

    #[test]
    fn norm_squared_measure_is_uniform_inside_the_margin() {
        let g = Grid4::cube(10, 1.0).unwrap();
        let p = synthetic(g, 0.2, |x| x.iter().map(|v| v * v).sum());
        let opts = MeasureOptions {
            kappa: KAPPA_ANALYTIC,
            clip_ceiling: 0.0,
            margin: Some(2),
        };
        let m = build_measure(&p, &p, &opts).unwrap();
        assert_eq!(m.support().len(), 6usize.pow(4));
        assert!((m.total() - 1.0).abs() < 1e-14, "{}", m.total());
        assert_eq!(m.clipped_mass, 0.0);
        let expected = 2.0 * KAPPA_ANALYTIC * g.cell_volume() * 6f64.powi(4);
        assert!((m.raw_total - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn alias_sampler_frequencies() {
        let g = Grid4::cube(3, 1.0).unwrap();
        let mut masses = vec![0.0; g.len()];
        let w = [(5usize, 0.5), (17, 0.3), (40, 0.15), (80, 0.05)];
        for (i, m) in w {
            masses[i] = m;
        }
        let mu = DiscreteMeasure::from_parts(g, masses, 0.0, 1.0).unwrap();
        let n = 1_000_000;
        let pts = mu.sample(n, 11);
        assert_eq!(pts, mu.sample(n, 11));
        let h = g.spacing();
        let mut counts = [0usize; 4];
        for p in &pts {
            let x = p.to_real();
            let t = g.locate(x);
            let i: [usize; 4] = std::array::from_fn(|a| t[a].round() as usize);
            for a in 0..4 {
                assert!((x[a] - g.coord(a, i[a])).abs() <= 0.5 * h[a] + 1e-12);
            }
            let k = w.iter().position(|(c, _)| *c == g.index(i)).expect("sample in a support cell");
            counts[k] += 1;
        }
        for (k, (_, m)) in w.iter().enumerate() {
            let sd = (n as f64 * m * (1.0 - m)).sqrt();
            assert!((counts[k] as f64 - n as f64 * m).abs() < 4.0 * sd);
        }
    }

    #[test]
    fn single_cell_measure_samples_stay_in_the_cell() {
        let g = Grid4::cube(4, 1.0).unwrap();
        let mut masses = vec![0.0; g.len()];
        masses[g.index([1, 2, 1, 2])] = 1.0;
        let mu = DiscreteMeasure::from_parts(g, masses, 0.0, 1.0).unwrap();
        let c = g.node([1, 2, 1, 2]);
        let h = g.spacing();
        for p in mu.sample(500, 3) {
            let x = p.to_real();
            assert!((0..4).all(|a| (x[a] - c[a]).abs() <= 0.5 * h[a]));
        }
    }

    #[test]
    fn integrate_constants_linearity_and_floor() {
        use crate::observable::{constant, coord_sq, make_log_distance, re_z1};
        let g = Grid4::cube(5, 1.0).unwrap();
        let mut masses = vec![0.0; g.len()];
        masses[g.index([2, 2, 2, 2])] = 0.25;
        masses[g.index([1, 2, 3, 2])] = 0.75;
        let mu = DiscreteMeasure::from_parts(g, masses, 0.0, 1.0).unwrap();
        assert_eq!(integrate(&mu, &constant(1.0), f64::NEG_INFINITY).unwrap().value, 1.0);
        let (a, b) = (0.7, -1.3);
        let lhs = integrate(&mu, &coord_sq().linear_combination(a, &re_z1(), b), -1e300).unwrap().value;
        let rhs = a * integrate(&mu, &coord_sq(), -1e300).unwrap().value + b * integrate(&mu, &re_z1(), -1e300).unwrap().value;
        assert!((lhs - rhs).abs() < 1e-15);
        // log-distance to the center of the first cell is −∞ there
        let r = integrate(&mu, &make_log_distance(Point2C::ORIGIN), -10.0).unwrap();
        assert_eq!(r.floored_cells, 1);
        assert_eq!(r.floored_mass, 0.25);
        let far = 0.5 * (0.25f64 + 0.25).ln();
        assert!((r.value - (0.25 * -10.0 + 0.75 * far)).abs() < 1e-15);
    }
}
