//! Periodic points by Newton's method on fᴾ(x) = x.
//!
//! Periodic points lie in K, which makes them convenient probes: centers for
//! log-distance observables and points with G⁺ = G⁻ = 0.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::map::{mat_mul, HenonMap, Point2C, C64};

/// Newton solve of fᴾ(x) = x from `start`. Returns the converged point, if any.
pub fn newton_periodic(map: &HenonMap, start: Point2C, period: usize, max_iter: usize) -> Option<Point2C> {
    let one = C64::new(1.0, 0.0);
    let zero = C64::new(0.0, 0.0);
    let mut x = start;
    for _ in 0..max_iter {
        let mut j = [[one, zero], [zero, one]];
        let mut y = x;
        for _ in 0..period {
            j = mat_mul(map.jacobian(y), j);
            y = map.forward(y).ok()?;
        }
        let r1 = y.z1 - x.z1;
        let r2 = y.z2 - x.z2;
        if (r1.norm_sqr() + r2.norm_sqr()).sqrt() < 1e-14 * (1.0 + x.norm()) {
            return Some(x);
        }
        // (J − I) Δ = −r
        let a = j[0][0] - one;
        let b = j[0][1];
        let c = j[1][0];
        let d = j[1][1] - one;
        let det = a * d - b * c;
        if det.norm() < 1e-300 {
            return None;
        }
        let dx1 = (-r1 * d + r2 * b) / det;
        let dx2 = (-r2 * a + r1 * c) / det;
        x = Point2C::new(x.z1 + dx1, x.z2 + dx2);
        if !x.is_finite() || x.norm() > 1e6 {
            return None;
        }
    }
    None
}

/// Smallest k ≥ 1 with f^k(q) = q up to `tol`.
pub fn minimal_period(map: &HenonMap, q: Point2C, max_period: usize, tol: f64) -> Option<usize> {
    let mut y = q;
    for k in 1..=max_period {
        y = map.forward(y).ok()?;
        if y.dist(q) <= tol * (1.0 + q.norm()) {
            return Some(k);
        }
    }
    None
}

/// Distinct points of exact period `period`, found from `starts` random seeds in
/// the bidisk of radius `radius`. Sorted by (Re z1, Im z1) for reproducibility.
pub fn periodic_points(map: &HenonMap, period: usize, radius: f64, starts: usize, seed: u64) -> Vec<Point2C> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut found: Vec<Point2C> = Vec::new();
    for _ in 0..starts {
        let mut coord = || C64::from_polar(radius * rng.random::<f64>().sqrt(), std::f64::consts::TAU * rng.random::<f64>());
        let s = Point2C::new(coord(), coord());
        let Some(p) = newton_periodic(map, s, period, 80) else { continue };
        if minimal_period(map, p, period, 1e-9) != Some(period) {
            continue;
        }
        if found.iter().all(|q| q.dist(p) > 1e-8 * (1.0 + p.norm())) {
            found.push(p);
        }
    }
    found.sort_by(|a, b| {
        a.z1.re
            .total_cmp(&b.z1.re)
            .then(a.z1.im.total_cmp(&b.z1.im))
            .then(a.z2.re.total_cmp(&b.z2.re))
    });
    found
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_fixed_points_match_closed_form() {
        // fixed points of (z,w) ↦ (z² + c − w, z): z = w, z² − 2z + c = 0
        let c = C64::new(0.0, 0.5);
        let f = HenonMap::quadratic(c, C64::new(1.0, 0.0)).unwrap();
        let pts = periodic_points(&f, 1, 3.0, 60, 1);
        assert_eq!(pts.len(), 2);
        let disc = (C64::new(1.0, 0.0) - c).sqrt();
        for r in [C64::new(1.0, 0.0) - disc, C64::new(1.0, 0.0) + disc] {
            assert!(pts.iter().any(|p| (p.z1 - r).norm() < 1e-12 && (p.z2 - r).norm() < 1e-12));
        }
    }

    #[test]
    fn period_two_points_are_not_fixed() {
        let f = HenonMap::quadratic(C64::new(0.0, 0.5), C64::new(1.0, 0.0)).unwrap();
        let pts = periodic_points(&f, 2, 3.0, 200, 2);
        assert!(!pts.is_empty());
        for p in pts {
            let y = f.step_n(p, 2, crate::map::Direction::Forward).unwrap();
            assert!(y.dist(p) < 1e-10);
            assert!(f.forward(p).unwrap().dist(p) > 1e-6);
        }
    }
}
