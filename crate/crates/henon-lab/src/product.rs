//! The product system F(z, w) = (f(z), f⁻¹(w)) and the eight test functions
//! Φ_jl± = φ_j±(z)·ψ_l±(w) with their coefficient combinations.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::map::{Direction, HenonMap, Point2C};
use crate::measure::{det_sum, DiscreteMeasure};
use crate::observable::{levi_check_fn, LeviReport, Observable, Region, Tolerance};

/// (f(z), f⁻¹(w)).
pub fn product_map_eval(map: &HenonMap, z: Point2C, w: Point2C) -> Result<(Point2C, Point2C)> {
    Ok((map.forward(z)?, map.backward(w)?))
}

/// F⁻¹(z, w) = (f⁻¹(z), f(w)).
pub fn product_map_inverse(map: &HenonMap, z: Point2C, w: Point2C) -> Result<(Point2C, Point2C)> {
    Ok((map.backward(z)?, map.forward(w)?))
}

/// Fⁿ(z, w) = (fⁿ(z), f⁻ⁿ(w)).
pub fn product_map_iterate(map: &HenonMap, z: Point2C, w: Point2C, n: usize) -> Result<(Point2C, Point2C)> {
    Ok((
        map.step_n(z, n, Direction::Forward)?,
        map.step_n(w, n, Direction::Backward)?,
    ))
}

/// Algebraic degree of F and of F⁻¹; both equal d.
pub fn product_degree(map: &HenonMap) -> u64 {
    map.degree()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub const BOTH: [Sign; 2] = [Sign::Plus, Sign::Minus];
}

/// φ_j⁺ = φ² + jφ + 6, φ_j⁻ = φ² + jφ − 6 as functions of the value φ.
pub fn phi_j(sign: Sign, j: u8, v: f64) -> f64 {
    let j = j as f64;
    match sign {
        Sign::Plus => v * v + j * v + 6.0,
        Sign::Minus => v * v + j * v - 6.0,
    }
}

/// ψ_l⁺ = ψ² + lψ + 6, ψ_l⁻ = −ψ² − lψ + 6 as functions of the value ψ.
pub fn psi_l(sign: Sign, l: u8, v: f64) -> f64 {
    let l = l as f64;
    match sign {
        Sign::Plus => v * v + l * v + 6.0,
        Sign::Minus => -v * v - l * v + 6.0,
    }
}

/// A pair of observables rescaled so that |φ|, |ψ| ≤ ½ on the working region.
#[derive(Clone, Debug)]
pub struct TestFunctionFamily {
    pub phi: Observable,
    pub psi: Observable,
    /// Factors applied to the inputs.
    pub phi_scale: f64,
    pub psi_scale: f64,
}

/// Sampled sup|obs| over a region of C².
fn sampled_sup(obs: &Observable, region: &Region, samples: usize, seed: u64) -> Result<f64> {
    let vals: Vec<Result<f64>> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let x = region
                .sample(&mut rng)
                .ok_or_else(|| Error::InvalidArgument("region too small to sample".into()))?;
            Ok(obs.eval_real([x[0], x[1], x[2], x[3]]).abs())
        })
        .collect();
    let mut sup: f64 = 0.0;
    for v in vals {
        let v = v?;
        if !v.is_finite() {
            return Err(Error::Unbounded(format!("{} on the family region", obs.label)));
        }
        sup = sup.max(v);
    }
    Ok(sup)
}

impl TestFunctionFamily {
    /// Samples sup|φ| on `dz` and sup|ψ| on `dw` and scales each input down so the
    /// sampled sup, inflated by 2%, is at most ½.
    pub fn new(phi: &Observable, psi: &Observable, dz: &Region, dw: &Region, samples: usize, seed: u64) -> Result<Self> {
        let scale_for = |sup: f64| if 1.02 * sup > 0.5 { 0.5 / (1.02 * sup) } else { 1.0 };
        let phi_scale = scale_for(sampled_sup(phi, dz, samples, seed)?);
        let psi_scale = scale_for(sampled_sup(psi, dw, samples, seed ^ 0x9e37_79b9)?);
        Ok(Self {
            phi: if phi_scale == 1.0 { phi.clone() } else { phi.scaled(phi_scale) },
            psi: if psi_scale == 1.0 { psi.clone() } else { psi.scaled(psi_scale) },
            phi_scale,
            psi_scale,
        })
    }

    /// Uses the observables as given; the caller vouches for the sup bound.
    pub fn unscaled(phi: Observable, psi: Observable) -> Self {
        Self {
            phi,
            psi,
            phi_scale: 1.0,
            psi_scale: 1.0,
        }
    }
}

/// Φ_jl±(z, w).
pub fn eval_phi_product(fam: &TestFunctionFamily, j: u8, l: u8, sign: Sign, z: Point2C, w: Point2C) -> f64 {
    phi_j(sign, j, fam.phi.eval(z)) * psi_l(sign, l, fam.psi.eval(w))
}

/// One Levi report per Φ_jl±, in the order (j, l, sign) with sign varying fastest.
pub fn levi_check_phi(
    fam: &TestFunctionFamily,
    region: &Region,
    samples: usize,
    h: Option<f64>,
    tol: Tolerance,
    seed: u64,
) -> Result<Vec<((u8, u8, Sign), LeviReport)>> {
    if region.dim() != 8 {
        return Err(Error::InvalidArgument("levi_check_phi needs a region in C² × C²".into()));
    }
    let mut out = Vec::with_capacity(8);
    for j in 1..=2u8 {
        for l in 1..=2u8 {
            for sign in Sign::BOTH {
                let f = |x: &[f64]| {
                    let z = Point2C::from_real([x[0], x[1], x[2], x[3]]);
                    let w = Point2C::from_real([x[4], x[5], x[6], x[7]]);
                    eval_phi_product(fam, j, l, sign, z, w)
                };
                out.push(((j, l, sign), levi_check_fn(&f, region, samples, h, tol, seed)?));
            }
        }
    }
    Ok(out)
}

/// α and β tables, indexed [j−1][l−1].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct CoefficientSet {
    pub alpha_plus: [[u32; 2]; 2],
    pub alpha_minus: [[u32; 2]; 2],
    pub beta_plus: [[u32; 2]; 2],
    pub beta_minus: [[u32; 2]; 2],
}

impl CoefficientSet {
    pub fn standard() -> Self {
        Self {
            alpha_plus: [[2, 0], [0, 1]],
            alpha_minus: [[1, 1], [1, 0]],
            beta_plus: [[1, 1], [1, 0]],
            beta_minus: [[2, 0], [0, 1]],
        }
    }

    pub fn zero() -> Self {
        Self {
            alpha_plus: [[0; 2]; 2],
            alpha_minus: [[0; 2]; 2],
            beta_plus: [[0; 2]; 2],
            beta_minus: [[0; 2]; 2],
        }
    }

    fn tables(&self, which: Combination) -> ([[u32; 2]; 2], [[u32; 2]; 2]) {
        match which {
            Combination::A => (self.alpha_plus, self.alpha_minus),
            Combination::B => (self.beta_plus, self.beta_minus),
        }
    }
}

/// (Σα, Σβ) over both signs and all (j, l).
pub fn coefficient_sums(c: &CoefficientSet) -> (u32, u32) {
    let s = |t: [[u32; 2]; 2]| t.iter().flatten().sum::<u32>();
    (s(c.alpha_plus) + s(c.alpha_minus), s(c.beta_plus) + s(c.beta_minus))
}

/// 𝒜 targets ab, ℬ targets a·(−b).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Combination {
    A,
    B,
}

/// Σ coeff·φ_j±(a)·ψ_l±(b) and the sum of absolute terms (the rounding scale).
pub fn combination_value(c: &CoefficientSet, which: Combination, a: f64, b: f64) -> (f64, f64) {
    let (plus, minus) = c.tables(which);
    let mut acc = 0.0;
    let mut mag = 0.0;
    for j in 1..=2u8 {
        for l in 1..=2u8 {
            for (sign, t) in [(Sign::Plus, plus), (Sign::Minus, minus)] {
                let k = t[j as usize - 1][l as usize - 1] as f64;
                let term = k * phi_j(sign, j, a) * psi_l(sign, l, b);
                acc += term;
                mag += term.abs();
            }
        }
    }
    (acc, mag)
}

/// ±ab + 36a² + 36b² + 48a + 48b.
pub fn combination_target(which: Combination, a: f64, b: f64) -> f64 {
    let cross = match which {
        Combination::A => a * b,
        Combination::B => -a * b,
    };
    cross + 36.0 * a * a + 36.0 * b * b + 48.0 * a + 48.0 * b
}

/// Relative residual of the combination identity at the values (a, b).
pub fn value_residual(c: &CoefficientSet, which: Combination, a: f64, b: f64) -> f64 {
    let (lhs, mag) = combination_value(c, which, a, b);
    let rhs = combination_target(which, a, b);
    (lhs - rhs).abs() / mag.max(rhs.abs()).max(f64::MIN_POSITIVE)
}

/// Residual with a = φ(fⁿ(z)), b = ψ(f⁻ⁿ(w)); escape during iteration is an error.
pub fn combination_identity_residual(
    fam: &TestFunctionFamily,
    c: &CoefficientSet,
    which: Combination,
    map: &HenonMap,
    n: usize,
    z: Point2C,
    w: Point2C,
) -> Result<f64> {
    let (zn, wn) = product_map_iterate(map, z, w, n)?;
    Ok(value_residual(c, which, fam.phi.eval(zn), fam.psi.eval(wn)))
}

/// Integrated form over μ⊗δ_diag: Σ coeff·⟨μ, (φ_j±∘fⁿ)(ψ_l±∘f⁻ⁿ)⟩ against ⟨μ, target⟩.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IntegratedResidual {
    pub lhs: f64,
    pub rhs: f64,
    pub relative: f64,
    /// Mass of cells whose orbit overflowed and were skipped.
    pub skipped_mass: f64,
}

pub fn integrated_identity_residual(
    fam: &TestFunctionFamily,
    c: &CoefficientSet,
    which: Combination,
    map: &HenonMap,
    n: usize,
    measure: &DiscreteMeasure,
) -> IntegratedResidual {
    let sup = measure.support();
    let ab: Vec<Option<(f64, f64)>> = sup
        .par_iter()
        .map(|&i| {
            let x = measure.center(i);
            let (zn, wn) = product_map_iterate(map, x, x, n).ok()?;
            Some((fam.phi.eval(zn), fam.psi.eval(wn)))
        })
        .collect();
    let mass = |k: usize| if ab[k].is_some() { measure.masses[sup[k]] } else { 0.0 };
    let (plus, minus) = c.tables(which);
    let mut lhs = 0.0;
    let mut mag = 0.0;
    for j in 1..=2u8 {
        for l in 1..=2u8 {
            for (sign, t) in [(Sign::Plus, plus), (Sign::Minus, minus)] {
                let k = t[j as usize - 1][l as usize - 1] as f64;
                if k == 0.0 {
                    continue;
                }
                let integral = det_sum(sup.len(), |i| {
                    ab[i].map_or(0.0, |(a, b)| mass(i) * phi_j(sign, j, a) * psi_l(sign, l, b))
                });
                lhs += k * integral;
                mag += (k * integral).abs();
            }
        }
    }
    let rhs = det_sum(sup.len(), |i| ab[i].map_or(0.0, |(a, b)| mass(i) * combination_target(which, a, b)));
    let skipped_mass = det_sum(sup.len(), |i| if ab[i].is_none() { measure.masses[sup[i]] } else { 0.0 });
    IntegratedResidual {
        lhs,
        rhs,
        relative: (lhs - rhs).abs() / mag.max(rhs.abs()).max(f64::MIN_POSITIVE),
        skipped_mass,
    }
}
