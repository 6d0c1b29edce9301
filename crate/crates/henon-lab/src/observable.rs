//! Test observables on C², truncation, the extension operator and a numerical
//! Levi-form checker.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{GreenField, Thresholds};
use crate::map::Point2C;
use crate::measure::Hermitian2;

pub type Evaluator = Arc<dyn Fn(Point2C) -> f64 + Send + Sync>;

/// Where an observable is known to be plurisubharmonic.
#[derive(Clone)]
pub enum PshRegion {
    Nowhere,
    Everywhere,
    /// Real half-widths of a box centred at the origin.
    Box([f64; 4]),
    Sublevel { field: Arc<GreenField>, level: f64 },
}

impl fmt::Debug for PshRegion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PshRegion::Nowhere => write!(f, "Nowhere"),
            PshRegion::Everywhere => write!(f, "Everywhere"),
            PshRegion::Box(r) => write!(f, "Box({r:?})"),
            PshRegion::Sublevel { level, .. } => write!(f, "Sublevel(G_lambda < {level})"),
        }
    }
}

/// A real function on C² plus the metadata the experiments rely on.
#[derive(Clone)]
pub struct Observable {
    eval: Evaluator,
    pub psh_region: PshRegion,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub label: String,
    /// Points where the evaluator may return −∞.
    pub singular: Vec<Point2C>,
    /// Box outside which the observable vanishes identically.
    pub support: Option<[f64; 4]>,
}

impl fmt::Debug for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Observable")
            .field("label", &self.label)
            .field("psh_region", &self.psh_region)
            .field("lower_bound", &self.lower_bound)
            .field("upper_bound", &self.upper_bound)
            .field("support", &self.support)
            .finish()
    }
}

impl Observable {
    pub fn new(label: impl Into<String>, eval: impl Fn(Point2C) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            eval: Arc::new(eval),
            psh_region: PshRegion::Nowhere,
            lower_bound: f64::NEG_INFINITY,
            upper_bound: f64::INFINITY,
            label: label.into(),
            singular: Vec::new(),
            support: None,
        }
    }

    pub fn eval(&self, q: Point2C) -> f64 {
        (self.eval)(q)
    }

    pub fn eval_real(&self, x: [f64; 4]) -> f64 {
        (self.eval)(Point2C::from_real(x))
    }

    /// s·obs. A negative factor drops the p.s.h. region.
    pub fn scaled(&self, s: f64) -> Observable {
        let inner = self.eval.clone();
        let (lo, hi) = if s >= 0.0 {
            (s * self.lower_bound, s * self.upper_bound)
        } else {
            (s * self.upper_bound, s * self.lower_bound)
        };
        Observable {
            eval: Arc::new(move |q| s * inner(q)),
            psh_region: if s >= 0.0 { self.psh_region.clone() } else { PshRegion::Nowhere },
            lower_bound: if s == 0.0 { 0.0 } else { lo },
            upper_bound: if s == 0.0 { 0.0 } else { hi },
            label: format!("{s}*{}", self.label),
            singular: self.singular.clone(),
            support: self.support,
        }
    }

    /// obs + c.
    pub fn shifted(&self, c: f64) -> Observable {
        let inner = self.eval.clone();
        Observable {
            eval: Arc::new(move |q| inner(q) + c),
            lower_bound: self.lower_bound + c,
            upper_bound: self.upper_bound + c,
            label: format!("{}+{c}", self.label),
            support: None,
            ..self.clone()
        }
    }

    /// a·self + b·other, with no p.s.h. claim.
    pub fn linear_combination(&self, a: f64, other: &Observable, b: f64) -> Observable {
        let (f, g) = (self.eval.clone(), other.eval.clone());
        let support = match (self.support, other.support) {
            (Some(s), Some(t)) => Some(std::array::from_fn(|k| s[k].max(t[k]))),
            _ => None,
        };
        let mut o = Observable::new(format!("{a}*{}+{b}*{}", self.label, other.label), move |q| {
            a * f(q) + b * g(q)
        });
        o.support = support;
        o
    }
}

/// z ↦ log‖z − a‖ (Euclidean norm on C²).
pub fn make_log_distance(a: Point2C) -> Observable {
    let mut o = Observable::new(
        format!("log_dist:{},{},{},{}", a.z1.re, a.z1.im, a.z2.re, a.z2.im),
        move |q| {
            let d = (q.z1 - a.z1).norm_sqr() + (q.z2 - a.z2).norm_sqr();
            0.5 * d.ln()
        },
    );
    o.psh_region = PshRegion::Everywhere;
    o.singular = vec![a];
    o
}

/// max(obs, −M).
pub fn truncate(obs: &Observable, m: f64) -> Result<Observable> {
    if !(m > 0.0) {
        return Err(Error::InvalidArgument(format!("truncation level must be positive, got {m}")));
    }
    Ok(truncate_unchecked(obs, m))
}

/// max(obs, −M) for any M ≥ 0; M = 0 clamps the negative part.
pub(crate) fn truncate_unchecked(obs: &Observable, m: f64) -> Observable {
    let inner = obs.eval.clone();
    Observable {
        eval: Arc::new(move |q| inner(q).max(-m)),
        psh_region: obs.psh_region.clone(),
        lower_bound: obs.lower_bound.max(-m),
        upper_bound: obs.upper_bound.max(-m),
        label: format!("trunc:{m}:{}", obs.label),
        singular: Vec::new(),
        // max(0, −M) = 0 off the support
        support: obs.support,
    }
}

/// ‖z‖².
pub fn coord_sq() -> Observable {
    let mut o = Observable::new("coord_sq", |q| q.norm_sqr());
    o.psh_region = PshRegion::Everywhere;
    o.lower_bound = 0.0;
    o
}

/// Re z1 (pluriharmonic).
pub fn re_z1() -> Observable {
    let mut o = Observable::new("re_z1", |q| q.z1.re);
    o.psh_region = PshRegion::Everywhere;
    o
}

/// ½ log(1 + ‖z‖²).
pub fn fs_potential() -> Observable {
    let mut o = Observable::new("fs", |q| 0.5 * q.norm_sqr().ln_1p());
    o.psh_region = PshRegion::Everywhere;
    o.lower_bound = 0.0;
    o
}

/// |z1 z2|², the squared modulus of a holomorphic function.
pub fn z1z2_sq() -> Observable {
    let mut o = Observable::new("z1z2_sq", |q| (q.z1 * q.z2).norm_sqr());
    o.psh_region = PshRegion::Everywhere;
    o.lower_bound = 0.0;
    o
}

pub fn constant(c: f64) -> Observable {
    let mut o = Observable::new(format!("const:{c}"), move |_| c);
    o.psh_region = PshRegion::Everywhere;
    o.lower_bound = c;
    o.upper_bound = c;
    o
}

/// Smooth cutoff in the value of G_λ: 1 up to `start`, 0 from `end` on, and a quintic
/// smoothstep in between.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Cutoff {
    pub start: f64,
    pub end: f64,
}

impl Cutoff {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !(start < end) {
            return Err(Error::InvalidArgument(format!("cutoff needs start < end, got {start} >= {end}")));
        }
        Ok(Self { start, end })
    }

    pub fn value(&self, g: f64) -> f64 {
        if g <= self.start {
            1.0
        } else if g >= self.end {
            0.0
        } else {
            let t = (g - self.start) / (self.end - self.start);
            1.0 - t * t * t * (10.0 + t * (-15.0 + 6.0 * t))
        }
    }

    /// Sup of |χ'| and |χ''| as functions of G_λ.
    pub fn derivative_bounds(&self) -> (f64, f64) {
        let w = self.end - self.start;
        (1.875 / w, 10.0 / 3f64.sqrt() / (w * w))
    }
}

/// Regularized max(0, u) with smoothing width ε: (u + ε·θ(u/ε))/2 where θ is |t| outside
/// [−1, 1] and the C² convex polynomial with θ'' = (15/8)(1 − t²)² inside. It equals 0 for
/// u ≤ −ε and u for u ≥ ε exactly.
pub fn soft_positive_part(u: f64, eps: f64) -> f64 {
    if u <= -eps {
        0.0
    } else if u >= eps {
        u
    } else {
        let t = u / eps;
        let t2 = t * t;
        let theta = 1.875 * t2 * (0.5 - t2 / 6.0 + t2 * t2 / 30.0) + 0.3125;
        0.5 * (u + eps * theta)
    }
}

/// Parameters realized by one call to [`extend`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Extension {
    pub kappa1: f64,
    pub kappa2: f64,
    pub cutoff: Cutoff,
    /// Smoothing width of the regularized max.
    pub epsilon: f64,
    /// Internal nonnegativity shift, including ε.
    pub shift: f64,
    /// Bounds of the input on the cutoff support, as used.
    pub inf_obs: f64,
    pub sup_obs: f64,
    /// τ slope factor ‖φ + shift‖∞ + ε.
    pub tau_height: f64,
    pub chi_d1: f64,
    pub chi_d2: f64,
    /// sup|φ̃| / sup|φ| over the grid nodes.
    pub realized_ratio: f64,
}

impl Extension {
    /// τ in the caller's normalization.
    pub fn tau(&self, g: f64) -> f64 {
        self.tau_height * (g - self.kappa1) / (self.kappa2 - self.kappa1) - self.shift
    }
}

/// φ̃ = χ·max_ε(φ, τ) built from a mollified field and nesting levels. The result
/// equals `obs` exactly on {G_λ < κ₁}, equals χ·τ outside {G_λ < κ₂}, and vanishes
/// outside {G_λ < cutoff.end} and outside the box.
pub fn extend(
    obs: &Observable,
    field_lambda: Arc<GreenField>,
    kappa1: f64,
    kappa2: f64,
    cutoff: Cutoff,
) -> Result<(Observable, Extension)> {
    if !(kappa1 < kappa2) || !(kappa2 <= cutoff.start) || !(cutoff.start < cutoff.end) {
        return Err(Error::InvalidArgument(format!(
            "need kappa1 < kappa2 <= cutoff start < cutoff end, got {kappa1}, {kappa2}, {}, {}",
            cutoff.start, cutoff.end
        )));
    }
    if field_lambda.is_raw() {
        return Err(Error::InvalidArgument("extend expects a mollified field".into()));
    }
    let geom = field_lambda.geom;
    let (lo, hi) = (0..geom.len())
        .into_par_iter()
        .filter(|&i| field_lambda.values[i] < cutoff.end)
        .map(|i| {
            let v = obs.eval(geom.node_point(i));
            (v, v)
        })
        .reduce(
            || (f64::INFINITY, f64::NEG_INFINITY),
            |a, b| (a.0.min(b.0), a.1.max(b.1)),
        );
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Unbounded(format!(
            "{} takes values in [{lo}, {hi}] on the cutoff support",
            obs.label
        )));
    }
    // Off-grid values can exceed the node extremes slightly; declared bounds are exact.
    let pad = 0.05 * (hi - lo);
    let inf_obs = if obs.lower_bound.is_finite() { obs.lower_bound } else { lo - pad };
    let sup_obs = if obs.upper_bound.is_finite() { obs.upper_bound } else { hi + pad };
    let scale = (sup_obs - inf_obs).max(sup_obs.abs()).max(inf_obs.abs());
    let epsilon = if scale > 0.0 { 0.05 * scale } else { 1e-3 };
    let shift = (-inf_obs).max(0.0) + epsilon;
    let tau_height = sup_obs + shift + epsilon;
    let (chi_d1, chi_d2) = cutoff.derivative_bounds();
    let mut ext = Extension {
        kappa1,
        kappa2,
        cutoff,
        epsilon,
        shift,
        inf_obs,
        sup_obs,
        tau_height,
        chi_d1,
        chi_d2,
        realized_ratio: f64::NAN,
    };

    let inner = obs.eval.clone();
    let field = field_lambda.clone();
    let radii = geom.radii;
    let p = ext.clone();
    let eval = move |q: Point2C| {
        let x = q.to_real();
        if (0..4).any(|a| !(x[a].abs() <= radii[a])) {
            return 0.0;
        }
        let g = field.interp(x);
        let chi = p.cutoff.value(g);
        if chi == 0.0 {
            return 0.0;
        }
        let tau = p.tau_height * (g - p.kappa1) / (p.kappa2 - p.kappa1);
        let v = inner(q);
        let u = tau - (v + p.shift);
        let core = if u <= -p.epsilon {
            v
        } else if u >= p.epsilon {
            tau - p.shift
        } else {
            v + soft_positive_part(u, p.epsilon)
        };
        chi * core
    };
    let bound = tau_height * (cutoff.end - kappa1) / (kappa2 - kappa1);
    let out = Observable {
        eval: Arc::new(eval),
        psh_region: PshRegion::Sublevel {
            field: field_lambda.clone(),
            level: kappa2,
        },
        lower_bound: (inf_obs).min(0.0).min(-shift),
        upper_bound: bound.max(sup_obs).max(0.0),
        label: format!("ext:{}", obs.label),
        singular: Vec::new(),
        support: Some(radii),
    };
    let (sup_in, sup_out) = (0..geom.len())
        .into_par_iter()
        .map(|i| {
            let q = geom.node_point(i);
            let a = if field_lambda.values[i] < cutoff.end { obs.eval(q).abs() } else { 0.0 };
            (a, out.eval(q).abs())
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1)));
    ext.realized_ratio = if sup_in > 0.0 { sup_out / sup_in } else { f64::NAN };
    Ok((out, ext))
}

/// Extension with the levels of [`crate::field::sublevel_thresholds`] and the cutoff
/// running from κ₂ to the boundary minimum.
pub fn extend_with(obs: &Observable, field_lambda: Arc<GreenField>, th: &Thresholds) -> Result<(Observable, Extension)> {
    let cutoff = Cutoff::new(th.kappa2, th.boundary_min)?;
    extend(obs, field_lambda, th.kappa1, th.kappa2, cutoff)
}

/// χ(G_λ)·obs with the cutoff vanishing before the box boundary.
pub fn localize(obs: &Observable, field_lambda: Arc<GreenField>, cutoff: Cutoff) -> Observable {
    let inner = obs.eval.clone();
    let radii = field_lambda.geom.radii;
    let field = field_lambda.clone();
    Observable {
        eval: Arc::new(move |q| {
            let x = q.to_real();
            if (0..4).any(|a| !(x[a].abs() <= radii[a])) {
                return 0.0;
            }
            let chi = cutoff.value(field.interp(x));
            if chi == 0.0 {
                0.0
            } else {
                chi * inner(q)
            }
        }),
        psh_region: PshRegion::Sublevel {
            field: field_lambda,
            level: cutoff.start,
        },
        lower_bound: obs.lower_bound.min(0.0),
        upper_bound: obs.upper_bound.max(0.0),
        label: format!("loc:{}", obs.label),
        singular: obs.singular.clone(),
        support: Some(radii),
    }
}

/// A parsed catalog label. `ext:` and `loc:` need a mollified field and thresholds,
/// supplied at build time.
#[derive(Clone, Debug, PartialEq)]
pub enum ObsSpec {
    LogDist([f64; 4]),
    Trunc(f64, Box<ObsSpec>),
    Ext(Box<ObsSpec>),
    Loc(Box<ObsSpec>),
    CoordSq,
    ReZ1,
    Fs,
    Z1Z2Sq,
    Const(f64),
    Scale(f64, Box<ObsSpec>),
}

impl ObsSpec {
    /// Labels: `log_dist:x1,y1,x2,y2`, `trunc:M:<inner>`, `ext:<inner>`, `loc:<inner>`,
    /// `scale:s:<inner>`, `coord_sq`, `re_z1`, `fs`, `z1z2_sq`, `const:c`.
    pub fn parse(label: &str) -> Result<ObsSpec> {
        let bad = |why: &str| Error::InvalidArgument(format!("observable '{label}': {why}"));
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad("expected a number"));
        let (head, rest) = match label.split_once(':') {
            Some((h, r)) => (h, Some(r)),
            None => (label, None),
        };
        match (head, rest) {
            ("coord_sq", None) => Ok(ObsSpec::CoordSq),
            ("re_z1", None) => Ok(ObsSpec::ReZ1),
            ("fs", None) => Ok(ObsSpec::Fs),
            ("z1z2_sq", None) => Ok(ObsSpec::Z1Z2Sq),
            ("const", Some(c)) => Ok(ObsSpec::Const(num(c)?)),
            ("log_dist", Some(a)) => {
                let v: Vec<f64> = a.split(',').map(num).collect::<Result<_>>()?;
                let a: [f64; 4] = v.try_into().map_err(|_| bad("log_dist needs four coordinates"))?;
                Ok(ObsSpec::LogDist(a))
            }
            ("trunc", Some(r)) | ("scale", Some(r)) => {
                let (m, inner) = r.split_once(':').ok_or_else(|| bad("missing inner observable"))?;
                let inner = Box::new(ObsSpec::parse(inner)?);
                if head == "trunc" {
                    Ok(ObsSpec::Trunc(num(m)?, inner))
                } else {
                    Ok(ObsSpec::Scale(num(m)?, inner))
                }
            }
            ("ext", Some(r)) => Ok(ObsSpec::Ext(Box::new(ObsSpec::parse(r)?))),
            ("loc", Some(r)) => Ok(ObsSpec::Loc(Box::new(ObsSpec::parse(r)?))),
            _ => Err(bad("unknown label")),
        }
    }

    /// Whether building needs a field and thresholds.
    pub fn needs_field(&self) -> bool {
        match self {
            ObsSpec::Ext(_) | ObsSpec::Loc(_) => true,
            ObsSpec::Trunc(_, i) | ObsSpec::Scale(_, i) => i.needs_field(),
            _ => false,
        }
    }

    pub fn build(&self, ctx: Option<(&Arc<GreenField>, &Thresholds)>) -> Result<Observable> {
        Ok(match self {
            ObsSpec::LogDist(a) => make_log_distance(Point2C::from_real(*a)),
            ObsSpec::Trunc(m, i) => truncate(&i.build(ctx)?, *m)?,
            ObsSpec::Scale(s, i) => i.build(ctx)?.scaled(*s),
            ObsSpec::CoordSq => coord_sq(),
            ObsSpec::ReZ1 => re_z1(),
            ObsSpec::Fs => fs_potential(),
            ObsSpec::Z1Z2Sq => z1z2_sq(),
            ObsSpec::Const(c) => constant(*c),
            ObsSpec::Ext(i) | ObsSpec::Loc(i) => {
                let (field, th) = ctx.ok_or_else(|| {
                    Error::InvalidArgument("ext:/loc: observables need a mollified field".into())
                })?;
                let inner = i.build(ctx)?;
                if matches!(self, ObsSpec::Ext(_)) {
                    extend_with(&inner, field.clone(), th)?.0
                } else {
                    localize(&inner, field.clone(), Cutoff::new(th.kappa2, th.boundary_min)?)
                }
            }
        })
    }
}

/// Sampling region for [`levi_check`], in real coordinates.
#[derive(Clone)]
pub enum Region {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// {G_λ < level} inside the field's box (C² only).
    Sublevel { field: Arc<GreenField>, level: f64 },
    /// D × D' ⊂ C² × C².
    Product(Box<Region>, Box<Region>),
}

impl Region {
    pub fn centered_box(radii: &[f64]) -> Region {
        Region::Box {
            lo: radii.iter().map(|r| -r).collect(),
            hi: radii.to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Region::Box { lo, .. } => lo.len(),
            Region::Sublevel { .. } => 4,
            Region::Product(a, b) => a.dim() + b.dim(),
        }
    }

    /// Largest real extent.
    pub fn diameter(&self) -> f64 {
        match self {
            Region::Box { lo, hi } => lo.iter().zip(hi).map(|(a, b)| (b - a).powi(2)).sum::<f64>().sqrt(),
            Region::Sublevel { field, .. } => 2.0 * field.geom.radii.iter().map(|r| r * r).sum::<f64>().sqrt(),
            Region::Product(a, b) => a.diameter().hypot(b.diameter()),
        }
    }

    /// Rejection sampling; `None` after many misses.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Option<Vec<f64>> {
        match self {
            Region::Box { lo, hi } => Some(lo.iter().zip(hi).map(|(a, b)| rng.random_range(*a..=*b)).collect()),
            Region::Sublevel { field, level } => {
                let r = field.geom.radii;
                for _ in 0..100_000 {
                    let x: [f64; 4] = std::array::from_fn(|a| rng.random_range(-r[a]..=r[a]));
                    if field.interp(x) < *level {
                        return Some(x.to_vec());
                    }
                }
                None
            }
            Region::Product(a, b) => {
                let mut x = a.sample(rng)?;
                x.extend(b.sample(rng)?);
                Some(x)
            }
        }
    }
}

/// Aggregate of a Levi-form check.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LeviReport {
    pub samples: usize,
    /// Samples redrawn because a stencil value was not finite.
    pub resampled: usize,
    pub min_eigenvalue: f64,
    /// Largest |eigenvalue| seen, the curvature scale of the function.
    pub max_abs_eigenvalue: f64,
    pub fraction_ok: f64,
    pub h: f64,
    pub tol: f64,
}

impl LeviReport {
    pub fn passed(&self) -> bool {
        self.fraction_ok == 1.0
    }
}

/// Complex Hessian ∂²u/∂z_j∂z̄_k of a function on C^m from central differences, with
/// real coordinates ordered (x1, y1, ..., xm, ym).
pub fn complex_hessian(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Option<Vec<Vec<Complex64>>> {
    let n = x.len();
    let mut y = x.to_vec();
    let mut at = |d: &[(usize, f64)]| {
        y.copy_from_slice(x);
        for &(a, s) in d {
            y[a] += s * h;
        }
        f(&y)
    };
    let c = at(&[]);
    let mut d = vec![vec![0.0; n]; n];
    for a in 0..n {
        d[a][a] = (at(&[(a, 1.0)]) - 2.0 * c + at(&[(a, -1.0)])) / (h * h);
        for b in a + 1..n {
            let v = (at(&[(a, 1.0), (b, 1.0)]) - at(&[(a, 1.0), (b, -1.0)]) - at(&[(a, -1.0), (b, 1.0)])
                + at(&[(a, -1.0), (b, -1.0)]))
                / (4.0 * h * h);
            d[a][b] = v;
            d[b][a] = v;
        }
    }
    if !c.is_finite() || d.iter().flatten().any(|v| !v.is_finite()) {
        return None;
    }
    let m = n / 2;
    let mut hm = vec![vec![Complex64::new(0.0, 0.0); m]; m];
    for j in 0..m {
        for k in 0..m {
            let (xj, yj, xk, yk) = (2 * j, 2 * j + 1, 2 * k, 2 * k + 1);
            hm[j][k] = Complex64::new(
                0.25 * (d[xj][xk] + d[yj][yk]),
                0.25 * (d[xj][yk] - d[yj][xk]),
            );
        }
    }
    Some(hm)
}

/// Eigenvalues of a real symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    let norm: f64 = a.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    for _sweep in 0..64 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * norm || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Eigenvalues of a Hermitian matrix: closed form for 2×2, Jacobi on the real
/// embedding [[A, −B], [B, A]] otherwise.
pub fn hermitian_eigenvalues(h: &[Vec<Complex64>]) -> Vec<f64> {
    let m = h.len();
    if m == 2 {
        let hm = Hermitian2 {
            h11: h[0][0].re,
            h22: h[1][1].re,
            h12: h[0][1],
        };
        let lo = hm.min_eigenvalue();
        return vec![lo, hm.h11 + hm.h22 - lo];
    }
    let mut e = vec![vec![0.0; 2 * m]; 2 * m];
    for j in 0..m {
        for k in 0..m {
            let (a, b) = (h[j][k].re, h[j][k].im);
            e[j][k] = a;
            e[j + m][k + m] = a;
            e[j][k + m] = -b;
            e[j + m][k] = b;
        }
    }
    // each eigenvalue appears twice in the embedding
    jacobi_eigenvalues(e).into_iter().step_by(2).collect()
}

/// Admissible negativity of the smallest Levi eigenvalue.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Tolerance {
    Absolute(f64),
    /// c·h²·scale with scale the largest |eigenvalue| seen over the samples.
    RelativeH2(f64),
}

/// Levi-form check of an arbitrary function on C² or C²×C².
pub fn levi_check_fn(
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    region: &Region,
    samples: usize,
    h: Option<f64>,
    tol: Tolerance,
    seed: u64,
) -> Result<LeviReport> {
    let dim = region.dim();
    if dim != 4 && dim != 8 {
        return Err(Error::InvalidArgument(format!("levi_check works on C^2 or C^4, got real dimension {dim}")));
    }
    if samples == 0 {
        return Err(Error::InvalidArgument("levi_check needs at least one sample".into()));
    }
    let h = h.unwrap_or(1e-3 * region.diameter());
    let per: Vec<Result<(f64, f64, usize)>> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            for redraw in 0..1000 {
                let x = region
                    .sample(&mut rng)
                    .ok_or_else(|| Error::InvalidArgument("region too small to sample".into()))?;
                if let Some(hm) = complex_hessian(f, &x, h) {
                    let ev = hermitian_eigenvalues(&hm);
                    let lo = ev[0];
                    let big = ev.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                    return Ok((lo, big, redraw));
                }
            }
            Err(Error::InvalidArgument("could not find a regular sample point".into()))
        })
        .collect();
    let per = per.into_iter().collect::<Result<Vec<_>>>()?;
    let min_eigenvalue = per.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let max_abs_eigenvalue = per.iter().map(|p| p.1).fold(0.0, f64::max);
    let resampled = per.iter().map(|p| p.2).sum();
    let tol = match tol {
        Tolerance::Absolute(t) => t,
        Tolerance::RelativeH2(c) => c * h * h * max_abs_eigenvalue,
    };
    let ok = per.iter().filter(|p| p.0 >= -tol).count();
    Ok(LeviReport {
        samples,
        resampled,
        min_eigenvalue,
        max_abs_eigenvalue,
        fraction_ok: ok as f64 / samples as f64,
        h,
        tol,
    })
}

/// Levi-form check of an observable over a region of C².
pub fn levi_check(
    obs: &Observable,
    region: &Region,
    samples: usize,
    h: Option<f64>,
    tol: Tolerance,
    seed: u64,
) -> Result<LeviReport> {
    let f = |x: &[f64]| obs.eval_real([x[0], x[1], x[2], x[3]]);
    levi_check_fn(&f, region, samples, h, tol, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::green::GreenKind;
    use crate::grid::Grid4;

    fn unit_box() -> Region {
        Region::centered_box(&[1.0; 4])
    }

    #[test]
    fn log_distance_examples() {
        let a = Point2C::from_real([0.5, -0.25, 1.0, 0.0]);
        let o = make_log_distance(a);
        assert_eq!(o.eval(a), f64::NEG_INFINITY);
        assert!(o.eval(Point2C::from_real([1.5, -0.25, 1.0, 0.0])).abs() < 1e-15);
        let e = std::f64::consts::E;
        assert!((o.eval(Point2C::from_real([0.5, -0.25, 1.0, e])) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn truncation_examples() {
        let a = Point2C::ORIGIN;
        let t = truncate(&make_log_distance(a), 5.0).unwrap();
        assert_eq!(t.eval(a), -5.0);
        assert_eq!(t.lower_bound, -5.0);
        assert!(truncate(&coord_sq(), 0.0).is_err());
        // bounded below by −M/2: pointwise identical
        let o = coord_sq().shifted(-1.0);
        let t = truncate(&o, 2.0).unwrap();
        let q = Point2C::from_real([0.1, 0.2, -0.3, 0.05]);
        assert_eq!(t.eval(q), o.eval(q));
        // idempotent
        let tt = truncate(&t, 2.0).unwrap();
        assert_eq!(tt.eval(q), t.eval(q));
    }

    #[test]
    fn soft_max_is_exact_outside_the_smoothing_band_and_c1_inside() {
        let eps = 0.3;
        assert_eq!(soft_positive_part(-0.3, eps), 0.0);
        assert_eq!(soft_positive_part(0.7, eps), 0.7);
        for &u in &[-eps, eps] {
            let d = 1e-7;
            let l = (soft_positive_part(u, eps) - soft_positive_part(u - d, eps)) / d;
            let r = (soft_positive_part(u + d, eps) - soft_positive_part(u, eps)) / d;
            assert!((l - r).abs() < 1e-5, "kink at {u}: {l} vs {r}");
        }
        // convex and above max(0, u)
        for k in 0..=100 {
            let u = -eps + 2.0 * eps * k as f64 / 100.0;
            let s = soft_positive_part(u, eps);
            assert!(s >= u.max(0.0) - 1e-15);
            let d = 1e-4;
            assert!(soft_positive_part(u + d, eps) + soft_positive_part(u - d, eps) - 2.0 * s >= -1e-15);
        }
    }

    #[test]
    fn levi_examples() {
        let r = levi_check(&coord_sq(), &unit_box(), 50, None, Tolerance::Absolute(1e-6), 1).unwrap();
        assert!((r.min_eigenvalue - 1.0).abs() < 1e-6 && r.passed());
        let r = levi_check(&coord_sq().scaled(-1.0), &unit_box(), 50, None, Tolerance::Absolute(1e-6), 1).unwrap();
        assert!((r.min_eigenvalue + 1.0).abs() < 1e-6);
        assert_eq!(r.fraction_ok, 0.0);
        let ph = Observable::new("re_z1z2", |q| (q.z1 * q.z2).re);
        let r = levi_check(&ph, &unit_box(), 50, None, Tolerance::Absolute(1e-6), 1).unwrap();
        assert!(r.min_eigenvalue.abs() < 1e-6 && r.max_abs_eigenvalue < 1e-6);
    }

    #[test]
    fn singular_samples_are_redrawn() {
        // singular on the whole half-space x1 < −0.9
        let o = Observable::new("wall", |q| if q.z1.re < -0.9 { f64::NEG_INFINITY } else { q.norm_sqr() });
        let r = levi_check(&o, &unit_box(), 200, None, Tolerance::Absolute(1e-6), 3).unwrap();
        assert!(r.resampled > 0 && r.passed());
    }

    #[test]
    fn jacobi_matches_closed_form() {
        // Hermitian 4×4 with known spectrum: diag(1,2,3,4) conjugated by a unitary
        // built from a 2×2 complex rotation on coordinates (0, 2)
        let (c, s) = (0.6, Complex64::new(0.0, 0.8));
        let d = [1.0, 2.0, 3.0, 4.0];
        let mut u = vec![vec![Complex64::new(0.0, 0.0); 4]; 4];
        for (k, row) in u.iter_mut().enumerate() {
            row[k] = Complex64::new(1.0, 0.0);
        }
        u[0][0] = Complex64::new(c, 0.0);
        u[0][2] = s;
        u[2][0] = -s.conj();
        u[2][2] = Complex64::new(c, 0.0);
        let mut h = vec![vec![Complex64::new(0.0, 0.0); 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                for k in 0..4 {
                    h[i][j] += u[i][k] * d[k] * u[j][k].conj();
                }
            }
        }
        let ev = hermitian_eigenvalues(&h);
        for (a, b) in ev.iter().zip(d) {
            assert!((a - b).abs() < 1e-12, "{ev:?}");
        }
    }

    #[test]
    fn catalog_round_trips() {
        let s = ObsSpec::parse("trunc:5:log_dist:0.1,0,-0.2,0.3").unwrap();
        assert_eq!(
            s,
            ObsSpec::Trunc(5.0, Box::new(ObsSpec::LogDist([0.1, 0.0, -0.2, 0.3])))
        );
        assert!(ObsSpec::parse("ext:coord_sq").unwrap().needs_field());
        assert!(ObsSpec::parse("ext:coord_sq").unwrap().build(None).is_err());
        assert!(ObsSpec::parse("log_dist:1,2").is_err());
        assert!(ObsSpec::parse("nope").is_err());
        let o = ObsSpec::parse("scale:2:re_z1").unwrap().build(None).unwrap();
        assert_eq!(o.eval(Point2C::from_real([0.25, 0.0, 0.0, 0.0])), 0.5);
    }

    fn radial_field() -> (Arc<GreenField>, Thresholds) {
        // ‖z‖² mollified stands in for G_λ: p.s.h., small near 0, large on the faces
        let geom = Grid4::cube(15, 1.5).unwrap();
        let values = (0..geom.len())
            .map(|i| geom.node(geom.unravel(i)).iter().map(|v| v * v).sum())
            .collect();
        let f = GreenField {
            geom,
            kind: GreenKind::Combined,
            mollification_radius: 0.2,
            tol: 1e-8,
            values,
        };
        let th = Thresholds {
            kappa1: 0.3,
            kappa2: 0.8,
            boundary_min: 1.4,
        };
        (Arc::new(f), th)
    }

    #[test]
    fn extension_of_a_constant_traces_the_construction() {
        let (field, th) = radial_field();
        let (e, ext) = extend_with(&constant(2.0), field.clone(), &th).unwrap();
        let inside = Point2C::from_real([0.2, 0.1, -0.1, 0.2]);
        assert_eq!(e.eval(inside), 2.0);
        let outside = Point2C::from_real([0.5, 0.5, 0.5, 0.3]);
        let g = field.interp_point(outside);
        assert!(g > th.kappa2 && g < th.boundary_min);
        let want = ext.cutoff.value(g) * ext.tau(g);
        assert!((e.eval(outside) - want).abs() < 1e-12);
        assert_eq!(e.eval(Point2C::from_real([1.0, 1.0, 0.0, 0.0])), 0.0);
        assert_eq!(e.eval(Point2C::from_real([3.0, 0.0, 0.0, 0.0])), 0.0);
        assert!(ext.realized_ratio >= 1.0);
    }

    #[test]
    fn extension_rejects_bad_levels_and_unbounded_inputs() {
        let (field, th) = radial_field();
        assert!(extend(&coord_sq(), field.clone(), 0.8, 0.3, Cutoff::new(0.8, 1.0).unwrap()).is_err());
        let ld = make_log_distance(Point2C::ORIGIN);
        assert!(matches!(extend_with(&ld, field, &th), Err(Error::Unbounded(_))));
    }
}
