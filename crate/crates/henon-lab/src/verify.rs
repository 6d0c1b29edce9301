//! Identity and positivity suites shared by `henon-lab verify` and the acceptance
//! tests. Each suite reports a margin: tolerance minus the worst observed
//! violation, so a suite passes exactly when its margin is nonnegative.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::green::{green_point, green_potential_pullback, GreenKind};
use crate::map::{Direction, HenonMap, Point2C};
use crate::measure::{calibrate, CALIBRATION_BOXES, CALIBRATION_H};
use crate::mixing::{fit_decay, synthetic_series};
use crate::observable::{
    coord_sq, fs_potential, levi_check, re_z1, z1z2_sq, Observable, Region, Tolerance,
};
use crate::periodic::periodic_points;
use crate::pipeline::Lab;
use crate::product::{coefficient_sums, levi_check_phi, value_residual, Combination, CoefficientSet, TestFunctionFamily};
use crate::Result;

#[derive(Clone, Debug, Serialize)]
pub struct Suite {
    pub name: String,
    pub passed: bool,
    pub worst_margin: f64,
    pub detail: String,
}

impl Suite {
    fn new(name: &str, worst_margin: f64, detail: String) -> Self {
        Self {
            name: name.into(),
            passed: worst_margin >= 0.0,
            worst_margin,
            detail,
        }
    }

    /// `name PASS margin=… detail`
    pub fn line(&self) -> String {
        format!(
            "{} {} margin={:e} {}",
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.worst_margin,
            self.detail
        )
    }
}

fn uniform_point(rng: &mut ChaCha8Rng, radius: f64) -> Point2C {
    Point2C::from_real(std::array::from_fn(|_| rng.random_range(-radius..radius)))
}

fn points(count: usize, radius: f64, seed: u64) -> Vec<Point2C> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| uniform_point(&mut rng, radius)).collect()
}

/// f⁻¹∘f = id at random points of the box, relative error ≤ 1e−9.
pub fn round_trip(map: &HenonMap, radius: f64, count: usize, seed: u64) -> Result<Suite> {
    let mut worst: f64 = 0.0;
    for q in points(count, radius, seed) {
        let back = map.backward(map.forward(q)?)?;
        worst = worst.max(back.dist(q) / q.norm());
    }
    Ok(Suite::new("map_round_trip", 1e-9 - worst, format!("points={count} worst_rel={worst:e}")))
}

/// |G⁺(f(q)) − d·G⁺(q)| and |G⁻(f⁻¹(q)) − d·G⁻(q)| within the combined error bounds.
pub fn functional_equation(map: &HenonMap, radius: f64, count: usize, tol: f64, seed: u64) -> Result<Suite> {
    let d = map.degree() as f64;
    let n_max = 200;
    let mut worst = f64::INFINITY;
    let mut worst_residual: f64 = 0.0;
    for q in points(count, radius, seed) {
        for (kind, dir) in [(GreenKind::Forward, Direction::Forward), (GreenKind::Backward, Direction::Backward)] {
            let Ok(image) = map.step(q, dir) else { continue };
            let a = green_point(map, q, kind, tol, n_max)?;
            let b = green_point(map, image, kind, tol, n_max)?;
            let residual = (b.value - d * a.value).abs();
            worst_residual = worst_residual.max(residual);
            worst = worst.min(b.error_bound + d * a.error_bound - residual);
        }
    }
    Ok(Suite::new(
        "green_functional_equation",
        worst,
        format!("points={count} tol={tol:e} worst_residual={worst_residual:e}"),
    ))
}

/// Least-squares slope of ys against xs.
fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Up to `count` periodic points of low period, the points where the pullback
/// error decays slowest.
pub fn periodic_sample(map: &HenonMap, count: usize, seed: u64) -> Vec<Point2C> {
    let mut out = Vec::new();
    for period in 1..=8 {
        for p in periodic_points(map, period, map.k_bound(), 4000 * period, seed + period as u64) {
            if out.len() < count {
                out.push(p);
            }
        }
        if out.len() >= count {
            break;
        }
    }
    out
}

/// Slope of log|G_n − G| over n = 2..=12 lies within 0.3 of −log d at each point.
pub fn pullback_convergence(map: &HenonMap, count: usize, seed: u64) -> Result<Suite> {
    let d = map.degree() as f64;
    let pts = periodic_sample(map, count, seed);
    let ns: Vec<f64> = (2..=12).map(f64::from).collect();
    let mut worst = f64::INFINITY;
    let mut slopes = Vec::new();
    for q in &pts {
        let g = green_point(map, *q, GreenKind::Forward, 1e-12, 200)?.value;
        let ys = (2..=12)
            .map(|n| Ok((green_potential_pullback(map, *q, n)? - g).abs().ln()))
            .collect::<Result<Vec<f64>>>()?;
        let s = slope(&ns, &ys);
        slopes.push(s);
        worst = worst.min(0.3 - (s + d.ln()).abs());
    }
    if pts.len() < count {
        worst = worst.min(-1.0);
    }
    let lo = slopes.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = slopes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(Suite::new(
        "potential_pullback_convergence",
        worst,
        format!("points={} slopes=[{lo:.4},{hi:.4}] target={:.4}", pts.len(), -d.ln()),
    ))
}

/// FS self-wedge mass with the analytic constant 4/π², on the largest calibration
/// box and extrapolated, is 1 ± 0.02.
pub fn calibration() -> Result<Suite> {
    let c = calibrate(CALIBRATION_H, &CALIBRATION_BOXES)?;
    let on_grid = c.kappa_analytic * c.integrals[c.integrals.len() - 1];
    let limit = c.kappa_analytic * c.extrapolated;
    let worst = 0.02 - (on_grid - 1.0).abs().max((limit - 1.0).abs());
    Ok(Suite::new(
        "fs_calibration",
        worst,
        format!("mass_on_grid={on_grid:.5} extrapolated={limit:.5} kappa_fit={:.6} kappa_analytic={:.6}", c.kappa, c.kappa_analytic),
    ))
}

/// raw_total ∈ [0.7, 1.3], clipped ≤ 5%, mass-weighted mean of G ≤ 0.05.
pub fn measure_sanity(lab: &Lab) -> Suite {
    let m = &lab.measure;
    let mean = lab.mean_green();
    let margins = [
        0.3 - (m.raw_total - 1.0).abs(),
        0.05 - m.clipped_fraction(),
        0.05 - mean,
    ];
    Suite::new(
        "measure_sanity",
        margins.iter().copied().fold(f64::INFINITY, f64::min),
        format!(
            "raw_total={:.4} clipped={:.4} mean_G={:.4} support={}",
            m.raw_total,
            m.clipped_fraction(),
            mean,
            m.support().len()
        ),
    )
}

/// |⟨μ, φ∘f⟩ − ⟨μ, φ⟩| ≤ 0.05·osc(φ), osc = max − min over the grid nodes.
pub fn invariance(lab: &Lab, observables: &[Observable]) -> Suite {
    let mut worst = f64::INFINITY;
    let mut parts = Vec::new();
    for o in observables {
        let (lo, hi) = (0..lab.grid.len())
            .into_par_iter()
            .map(|i| o.eval(lab.grid.node_point(i)))
            .fold(|| (f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)))
            .reduce(|| (f64::INFINITY, f64::NEG_INFINITY), |(a, b), (c, d)| (a.min(c), b.max(d)));
        let osc = hi - lo;
        let before = lab.measure.integrate_fn(|q| o.eval(q));
        let after = lab.measure.integrate_fn(|q| lab.map.forward(q).map_or(f64::NAN, |p| o.eval(p)));
        let diff = (after - before).abs();
        let margin = if osc.is_finite() && diff.is_finite() { 0.05 * osc - diff } else { -1.0 };
        worst = worst.min(margin);
        parts.push(format!("{}:diff={diff:.3e},osc={osc:.3}", o.label));
    }
    Suite::new("approximate_invariance", worst, parts.join(" "))
}

/// extend(obs) equals obs exactly on {G_λ < κ₁}, vanishes outside {G_λ < end} and
/// outside the box, and passes a Levi check on {G_λ < κ₂} at tol = 10h²·scale.
pub fn extension_lemma(lab: &Lab, inner: &str, points: usize, levi_samples: usize, seed: u64) -> Result<Suite> {
    let th = lab.thresholds()?;
    let base = lab.observable(inner)?;
    let ext = lab.observable(&format!("ext:{inner}"))?;
    let field = lab.lambda.clone();

    let inside = Region::Sublevel {
        field: field.clone(),
        level: th.kappa1,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut equal = 0;
    for _ in 0..points {
        let x = inside
            .sample(&mut rng)
            .ok_or_else(|| crate::Error::InvalidArgument("{G_lambda < kappa1} is too small to sample".into()))?;
        let q = Point2C::from_real([x[0], x[1], x[2], x[3]]);
        // bit-for-bit, so −∞ at the singular point compares equal too
        if ext.eval(q).to_bits() == base.eval(q).to_bits() {
            equal += 1;
        }
    }

    let r = lab.grid.radii[0];
    let mut zero = 0;
    let mut outside = 0;
    while outside < points {
        let q = uniform_point(&mut rng, 1.25 * r);
        let x = q.to_real();
        let in_box = x.iter().all(|c| c.abs() <= r);
        if in_box && field.interp(x) < th.boundary_min {
            continue;
        }
        outside += 1;
        if ext.eval(q) == 0.0 {
            zero += 1;
        }
    }

    let region = Region::Sublevel {
        field,
        level: th.kappa2,
    };
    let levi = levi_check(&ext, &region, levi_samples, None, Tolerance::RelativeH2(10.0), seed)?;
    let margin = [
        if equal == points { 0.0 } else { -((points - equal) as f64) },
        if zero == points { 0.0 } else { -((points - zero) as f64) },
        levi.min_eigenvalue + levi.tol,
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min);
    Ok(Suite::new(
        "extension_lemma",
        margin,
        format!(
            "equal={equal}/{points} zero_outside={zero}/{points} levi_fraction={:.4} min_eig={:.3e} tol={:.3e} scale={:.3e}",
            levi.fraction_ok, levi.min_eigenvalue, levi.tol, levi.max_abs_eigenvalue
        ),
    ))
}

/// The built-in p.s.h. pairs for the Φ_jl± suite, on the unit polydisk box.
pub fn test_function_pairs() -> Vec<(Observable, Observable)> {
    vec![(coord_sq(), fs_potential()), (fs_potential(), z1z2_sq()), (re_z1(), coord_sq())]
}

/// All eight Φ_jl± pass the Levi check (fraction 1, tol = 10h²·scale) for each pair.
pub fn test_function_levi(samples: usize, seed: u64) -> Result<Suite> {
    let d = Region::centered_box(&[1.0; 4]);
    let prod = Region::Product(Box::new(d.clone()), Box::new(d.clone()));
    let mut worst = f64::INFINITY;
    let mut failures = 0;
    let mut checked = 0;
    for (phi, psi) in test_function_pairs() {
        let fam = TestFunctionFamily::new(&phi, &psi, &d, &d, 4000, seed)?;
        for (_, rep) in levi_check_phi(&fam, &prod, samples, None, Tolerance::RelativeH2(10.0), seed)? {
            checked += 1;
            if !rep.passed() {
                failures += 1;
            }
            worst = worst.min(rep.min_eigenvalue + rep.tol);
        }
    }
    Ok(Suite::new(
        "test_function_levi",
        worst,
        format!("functions={checked} failing={failures} samples={samples}"),
    ))
}

/// 𝒜 and ℬ identities at random values in [−½, ½]², residual ≤ 1e−12, and
/// Σα = Σβ = 6.
pub fn coefficient_identities(count: usize, seed: u64) -> Suite {
    let c = CoefficientSet::standard();
    let residuals: Vec<f64> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let (a, b) = (rng.random_range(-0.5..=0.5), rng.random_range(-0.5..=0.5));
            value_residual(&c, Combination::A, a, b).max(value_residual(&c, Combination::B, a, b))
        })
        .collect();
    let worst = residuals.iter().copied().fold(0.0, f64::max);
    let (sa, sb) = coefficient_sums(&c);
    let sums_ok = sa == 6 && sb == 6;
    Suite::new(
        "coefficient_identities",
        if sums_ok { 1e-12 - worst } else { -1.0 },
        format!("pairs={count} worst_rel={worst:e} sum_alpha={sa} sum_beta={sb}"),
    )
}

/// fit_decay on C_n = 4·2⁻ⁿ recovers slope −log 2 and intercept log 4 to 1e−12.
pub fn fit_oracle() -> Result<Suite> {
    let lags: Vec<usize> = (0..=12).step_by(2).collect();
    let series = synthetic_series(&lags, 4.0, 0.5, 0.0);
    let fit = fit_decay(&series, 3.0, 0)?;
    let es = (fit.slope + 2f64.ln()).abs();
    let ei = (fit.intercept - 4f64.ln()).abs();
    Ok(Suite::new(
        "fit_oracle",
        1e-12 - es.max(ei),
        format!("slope_err={es:e} intercept_err={ei:e}"),
    ))
}
