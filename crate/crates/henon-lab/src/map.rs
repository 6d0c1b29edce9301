//! Generalized Hénon maps of C² and their orbits.
//!
//! A map is a composition of elementary factors `(z, w) ↦ (p(z) − δw, z)`, applied
//! in list order. Each factor has the closed-form inverse `(z, w) ↦ (w, (p(w) − z)/δ)`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// A point of C².
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2C {
    pub z1: C64,
    pub z2: C64,
}

impl Point2C {
    pub const ORIGIN: Point2C = Point2C {
        z1: C64::new(0.0, 0.0),
        z2: C64::new(0.0, 0.0),
    };

    pub fn new(z1: C64, z2: C64) -> Self {
        Self { z1, z2 }
    }

    /// From real coordinates in the order (x1, y1, x2, y2).
    pub fn from_real(x: [f64; 4]) -> Self {
        Self::new(C64::new(x[0], x[1]), C64::new(x[2], x[3]))
    }

    pub fn to_real(self) -> [f64; 4] {
        [self.z1.re, self.z1.im, self.z2.re, self.z2.im]
    }

    pub fn norm_sqr(self) -> f64 {
        self.z1.norm_sqr() + self.z2.norm_sqr()
    }

    pub fn norm(self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// max(|z1|, |z2|)
    pub fn norm_inf(self) -> f64 {
        self.z1.norm().max(self.z2.norm())
    }

    pub fn is_finite(self) -> bool {
        self.z1.is_finite() && self.z2.is_finite()
    }

    /// Coordinate swap σ(z, w) = (w, z).
    pub fn swap(self) -> Self {
        Self::new(self.z2, self.z1)
    }

    pub fn dist(self, other: Point2C) -> f64 {
        ((self.z1 - other.z1).norm_sqr() + (self.z2 - other.z2).norm_sqr()).sqrt()
    }
}

/// One factor `(z, w) ↦ (p(z) − δw, z)`. Coefficients are stored in ascending order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElementaryFactor {
    coeffs: Vec<C64>,
    delta: C64,
}

impl ElementaryFactor {
    pub fn new(coeffs: Vec<C64>, delta: C64) -> Result<Self> {
        if coeffs.len() < 3 {
            return Err(Error::InvalidMap(format!(
                "polynomial degree {} < 2",
                coeffs.len().saturating_sub(1)
            )));
        }
        if coeffs.iter().any(|c| !c.is_finite()) || !delta.is_finite() {
            return Err(Error::InvalidMap("non-finite coefficient".into()));
        }
        if coeffs[coeffs.len() - 1] == C64::new(0.0, 0.0) {
            return Err(Error::InvalidMap("leading coefficient is zero".into()));
        }
        if delta == C64::new(0.0, 0.0) {
            return Err(Error::InvalidMap("twist δ is zero".into()));
        }
        Ok(Self { coeffs, delta })
    }

    /// p(z) = z² + c with twist δ.
    pub fn quadratic(c: C64, delta: C64) -> Result<Self> {
        Self::new(vec![c, C64::new(0.0, 0.0), C64::new(1.0, 0.0)], delta)
    }

    pub fn coeffs(&self) -> &[C64] {
        &self.coeffs
    }

    pub fn delta(&self) -> C64 {
        self.delta
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn leading(&self) -> C64 {
        self.coeffs[self.coeffs.len() - 1]
    }

    pub fn poly(&self, z: C64) -> C64 {
        self.coeffs.iter().rev().fold(C64::new(0.0, 0.0), |acc, &c| acc * z + c)
    }

    pub fn poly_deriv(&self, z: C64) -> C64 {
        let d = self.degree();
        let mut acc = C64::new(0.0, 0.0);
        for k in (1..=d).rev() {
            acc = acc * z + self.coeffs[k] * k as f64;
        }
        acc
    }

    pub fn forward(&self, q: Point2C) -> Point2C {
        Point2C::new(self.poly(q.z1) - self.delta * q.z2, q.z1)
    }

    pub fn backward(&self, q: Point2C) -> Point2C {
        Point2C::new(q.z2, (self.poly(q.z2) - q.z1) / self.delta)
    }

    /// The factor g̃ with p̃ = p/δ and δ̃ = 1/δ, so that g⁻¹ = σ∘g̃∘σ.
    pub fn inverse_conjugate(&self) -> Self {
        let coeffs = self.coeffs.iter().map(|&c| c / self.delta).collect();
        Self {
            coeffs,
            delta: C64::new(1.0, 0.0) / self.delta,
        }
    }

    /// Upper bound on |η| in p(z) − δw = a z^d (1 + η) for |z| = r ≥ |w|.
    pub fn eta_bound(&self, r: f64) -> f64 {
        let d = self.degree() as i32;
        let a = self.leading().norm();
        let lower: f64 = (0..d)
            .map(|i| self.coeffs[i as usize].norm() / a * r.powi(i - d))
            .sum();
        lower + self.delta.norm() / a * r.powi(1 - d)
    }

    /// Positive root of |a|r^d − Σ_{i<d}|a_i|r^i − extra·r.
    ///
    /// One sign change in the coefficient sequence, so the root is unique and the
    /// polynomial is positive beyond it. Returns the upper end of the bisection bracket.
    fn coefficient_root(&self, extra: f64) -> f64 {
        let d = self.degree();
        let a = self.leading().norm();
        let f = |r: f64| {
            let mut v = a * r.powi(d as i32) - extra * r;
            for i in 0..d {
                v -= self.coeffs[i].norm() * r.powi(i as i32);
            }
            v
        };
        let mut hi = 1.0;
        while f(hi) <= 0.0 {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= 1e-15 * hi {
                break;
            }
        }
        hi
    }

    /// Smallest R ≥ 2 with |p(z)| − |δ||w| ≥ 2|z| whenever |z| ≥ max(R, |w|).
    pub fn filtration_radius(&self) -> f64 {
        self.coefficient_root(self.delta.norm() + 2.0).max(2.0)
    }

    /// Radius beyond which |p(z)| − |δ||w| > |z| for |z| ≥ |w|.
    pub fn growth_radius(&self) -> f64 {
        self.coefficient_root(self.delta.norm() + 1.0)
    }
}

/// Iteration direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

/// Result of [`HenonMap::iterate`].
#[derive(Clone, Debug, PartialEq)]
pub enum OrbitOutcome {
    /// q, f(q), ..., fⁿ(q), all inside the escape radius.
    Survived(Vec<Point2C>),
    /// First step k with ‖f^k(q)‖∞ > radius (k = 0 if q itself is outside).
    Exited { step: usize, point: Point2C },
}

impl OrbitOutcome {
    pub fn survived(&self) -> bool {
        matches!(self, OrbitOutcome::Survived(_))
    }
}

/// A composition of elementary factors; `factors[0]` is applied first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HenonMap {
    factors: Vec<ElementaryFactor>,
    degree: u64,
}

impl HenonMap {
    pub fn new(factors: Vec<ElementaryFactor>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::InvalidMap("no factors".into()));
        }
        let degree = factors.iter().map(|f| f.degree() as u64).product();
        Ok(Self { factors, degree })
    }

    pub fn quadratic(c: C64, delta: C64) -> Result<Self> {
        Self::new(vec![ElementaryFactor::quadratic(c, delta)?])
    }

    /// The map used for documentation and acceptance: p(z) = z² + i/2, δ = −1.
    /// Volume preserving, so G⁺ and G⁻ are equally regular; K fits in |z|, |w| < 1.6.
    pub fn reference() -> Self {
        Self::quadratic(C64::new(0.0, 0.5), C64::new(-1.0, 0.0)).expect("reference coefficients are valid")
    }

    pub fn factors(&self) -> &[ElementaryFactor] {
        &self.factors
    }

    pub fn degree(&self) -> u64 {
        self.degree
    }

    pub fn forward(&self, q: Point2C) -> Result<Point2C> {
        let mut x = q;
        for f in &self.factors {
            x = f.forward(x);
            if !x.is_finite() {
                return Err(Error::Escaped { step: 1 });
            }
        }
        Ok(x)
    }

    pub fn backward(&self, q: Point2C) -> Result<Point2C> {
        let mut x = q;
        for f in self.factors.iter().rev() {
            x = f.backward(x);
            if !x.is_finite() {
                return Err(Error::Escaped { step: 1 });
            }
        }
        Ok(x)
    }

    pub fn step(&self, q: Point2C, dir: Direction) -> Result<Point2C> {
        match dir {
            Direction::Forward => self.forward(q),
            Direction::Backward => self.backward(q),
        }
    }

    /// f^n or f^{-n}; the escape signal carries the failing step.
    pub fn step_n(&self, q: Point2C, n: usize, dir: Direction) -> Result<Point2C> {
        let mut x = q;
        for k in 1..=n {
            x = self.step(x, dir).map_err(|_| Error::Escaped { step: k })?;
        }
        Ok(x)
    }

    /// a ∘ b: apply `b` first.
    pub fn compose(a: &HenonMap, b: &HenonMap) -> HenonMap {
        let mut factors = b.factors.clone();
        factors.extend(a.factors.iter().cloned());
        HenonMap {
            factors,
            degree: a.degree * b.degree,
        }
    }

    /// The map f̃ with f⁻¹ = σ∘f̃∘σ.
    pub fn inverse_conjugate(&self) -> HenonMap {
        HenonMap {
            factors: self
                .factors
                .iter()
                .rev()
                .map(ElementaryFactor::inverse_conjugate)
                .collect(),
            degree: self.degree,
        }
    }

    pub fn iterate(&self, q: Point2C, n: usize, escape_radius: f64, dir: Direction) -> OrbitOutcome {
        if !(q.norm_inf() <= escape_radius) {
            return OrbitOutcome::Exited { step: 0, point: q };
        }
        let mut orbit = Vec::with_capacity(n + 1);
        orbit.push(q);
        let mut x = q;
        for k in 1..=n {
            x = match self.step(x, dir) {
                Ok(y) => y,
                Err(_) => {
                    return OrbitOutcome::Exited {
                        step: k,
                        point: Point2C::new(C64::new(f64::INFINITY, 0.0), C64::new(0.0, 0.0)),
                    }
                }
            };
            if !(x.norm_inf() <= escape_radius) {
                return OrbitOutcome::Exited { step: k, point: x };
            }
            orbit.push(x);
        }
        OrbitOutcome::Survived(orbit)
    }

    /// Forward filtration radius: {|z1| ≥ max(R, |z2|)} is invariant under every
    /// factor, and |z1| at least doubles per factor there.
    pub fn filtration_radius(&self) -> f64 {
        self.factors
            .iter()
            .map(ElementaryFactor::filtration_radius)
            .fold(2.0, f64::max)
    }

    /// Radius of a closed bidisk containing K = K₊ ∩ K₋.
    ///
    /// Outside it, either |z1| ≥ |z2| and the forward orbit grows without bound, or
    /// |z2| > |z1| and the backward orbit does.
    pub fn k_bound(&self) -> f64 {
        let fwd = self.factors.iter().map(ElementaryFactor::growth_radius);
        let bwd = self
            .inverse_conjugate()
            .factors
            .iter()
            .map(ElementaryFactor::growth_radius)
            .collect::<Vec<_>>();
        fwd.chain(bwd).fold(0.0, f64::max)
    }

    /// Jacobian of f at q as a row-major 2×2 complex matrix.
    pub fn jacobian(&self, q: Point2C) -> [[C64; 2]; 2] {
        let one = C64::new(1.0, 0.0);
        let zero = C64::new(0.0, 0.0);
        let mut j = [[one, zero], [zero, one]];
        let mut x = q;
        for f in &self.factors {
            let jf = [[f.poly_deriv(x.z1), -f.delta], [one, zero]];
            j = mat_mul(jf, j);
            x = f.forward(x);
        }
        j
    }
}

pub(crate) fn mat_mul(a: [[C64; 2]; 2], b: [[C64; 2]; 2]) -> [[C64; 2]; 2] {
    [
        [
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
        ],
        [
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        ],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn quad(cc: f64, delta: f64) -> HenonMap {
        HenonMap::quadratic(c(cc, 0.0), c(delta, 0.0)).unwrap()
    }

    #[test]
    fn forward_examples() {
        let f = quad(0.0, 1.0);
        assert_eq!(f.forward(Point2C::ORIGIN).unwrap(), Point2C::ORIGIN);
        let q = Point2C::new(c(1.0, 0.0), c(1.0, 0.0));
        assert_eq!(f.forward(q).unwrap(), Point2C::new(c(0.0, 0.0), c(1.0, 0.0)));
        let g = quad(0.3, 0.15);
        let out = g.forward(q).unwrap();
        assert!((out.z1 - c(1.15, 0.0)).norm() < 1e-15);
        assert_eq!(out.z2, c(1.0, 0.0));
    }

    #[test]
    fn backward_examples() {
        let g = quad(0.3, 0.15);
        let back = g.backward(Point2C::new(c(1.15, 0.0), c(1.0, 0.0))).unwrap();
        assert!(back.dist(Point2C::new(c(1.0, 0.0), c(1.0, 0.0))) < 1e-14);
        assert_eq!(quad(0.0, 1.0).backward(Point2C::ORIGIN).unwrap(), Point2C::ORIGIN);
    }

    #[test]
    fn factor_validation() {
        assert!(ElementaryFactor::new(vec![c(1.0, 0.0), c(1.0, 0.0)], c(1.0, 0.0)).is_err());
        assert!(ElementaryFactor::new(vec![c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)], c(1.0, 0.0)).is_err());
        assert!(ElementaryFactor::quadratic(c(0.0, 0.0), c(0.0, 0.0)).is_err());
        assert!(HenonMap::new(vec![]).is_err());
    }

    #[test]
    fn overflow_is_signalled() {
        let f = quad(0.0, 1.0);
        let q = Point2C::new(c(1e200, 0.0), c(0.0, 0.0));
        assert!(matches!(f.forward(q), Err(Error::Escaped { step: 1 })));
        let q = Point2C::new(c(1e3, 0.0), c(0.0, 0.0));
        match f.step_n(q, 10, Direction::Forward) {
            Err(Error::Escaped { step }) => assert!(step > 1 && step <= 10),
            other => panic!("expected escape, got {other:?}"),
        }
    }

    #[test]
    fn compose_degree_and_order() {
        let a = quad(0.3, 0.15);
        let b = HenonMap::new(vec![ElementaryFactor::new(
            vec![c(0.1, 0.2), c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)],
            c(0.5, 0.1),
        )
        .unwrap()])
        .unwrap();
        let ab = HenonMap::compose(&a, &b);
        assert_eq!(ab.degree(), 6);
        assert_eq!(HenonMap::compose(&a, &a).factors().len(), 2);
        let q = Point2C::new(c(0.3, -0.2), c(0.1, 0.4));
        let lhs = ab.forward(q).unwrap();
        let rhs = a.forward(b.forward(q).unwrap()).unwrap();
        assert!(lhs.dist(rhs) < 1e-14);
    }

    #[test]
    fn filtration_radius_examples() {
        // |z|² − |z| ≥ 2|z| iff |z| ≥ 3
        assert!((quad(0.0, 1.0).filtration_radius() - 3.0).abs() < 1e-12);
        // |z|² − 0.15|z| ≥ 2|z| iff |z| ≥ 2.15
        assert!((quad(0.0, 0.15).filtration_radius() - 2.15).abs() < 1e-12);
        // the root 2.01/10 sits below 2, so the floor applies
        let steep = HenonMap::new(vec![ElementaryFactor::new(
            vec![c(0.0, 0.0), c(0.0, 0.0), c(10.0, 0.0)],
            c(0.01, 0.0),
        )
        .unwrap()])
        .unwrap();
        assert_eq!(steep.filtration_radius(), 2.0);
    }

    #[test]
    fn k_bound_for_balanced_quadratic() {
        // r² − 2r − |c| = 0
        let f = HenonMap::quadratic(c(0.0, 0.5), c(1.0, 0.0)).unwrap();
        assert!((f.k_bound() - (1.0 + 1.5f64.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn iterate_examples() {
        let f = quad(0.0, 1.0);
        let out = f.iterate(Point2C::ORIGIN, 25, 3.0, Direction::Forward);
        assert!(matches!(out, OrbitOutcome::Survived(ref v) if v.len() == 26));
        let far = Point2C::new(c(10.0, 0.0), c(0.0, 0.0));
        assert!(matches!(
            f.iterate(far, 5, 3.0, Direction::Forward),
            OrbitOutcome::Exited { step: 0, .. }
        ));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let f = HenonMap::compose(&quad(0.2, 0.7), &HenonMap::quadratic(c(-0.1, 0.3), c(1.0, 0.5)).unwrap());
        let q = Point2C::new(c(0.3, 0.1), c(-0.2, 0.4));
        let j = f.jacobian(q);
        let h = 1e-6;
        // holomorphic, so a real step gives the complex derivative
        let e1 = f.forward(Point2C::new(q.z1 + h, q.z2)).unwrap();
        let e0 = f.forward(Point2C::new(q.z1 - h, q.z2)).unwrap();
        assert!(((e1.z1 - e0.z1) / (2.0 * h) - j[0][0]).norm() < 1e-7);
        assert!(((e1.z2 - e0.z2) / (2.0 * h) - j[1][0]).norm() < 1e-7);
        let e1 = f.forward(Point2C::new(q.z1, q.z2 + h)).unwrap();
        let e0 = f.forward(Point2C::new(q.z1, q.z2 - h)).unwrap();
        assert!(((e1.z1 - e0.z1) / (2.0 * h) - j[0][1]).norm() < 1e-7);
        assert!(((e1.z2 - e0.z2) / (2.0 * h) - j[1][1]).norm() < 1e-7);
    }
}
