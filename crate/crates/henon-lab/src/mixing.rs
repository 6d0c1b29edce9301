//! Correlations under the discrete measure, decay fits, tail estimates and the
//! truncation experiment for d.s.h. observables.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map::{Direction, HenonMap, Point2C};
use crate::measure::{det_sum, neumaier_sum, DiscreteMeasure};
use crate::observable::{truncate_unchecked, Observable};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    /// Σ m·φ(fⁿx)·ψ(x) − product term.
    Direct,
    /// Σ m·φ(f^{n/2}x)·ψ(f^{−n/2}x) − product term, n even.
    Symmetric,
}

/// How the product term is formed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Centering {
    /// Means of the transported values, i.e. the covariance of φ∘f^a and ψ∘f^{−b}.
    Transported,
    /// ⟨μ, φ⟩⟨μ, ψ⟩ taken at lag 0.
    Stationary,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationOptions {
    pub kind: EstimatorKind,
    pub centering: Centering,
    /// Bootstrap replicates; 0 disables the standard error.
    pub bootstrap: usize,
    /// Bootstrap block edge in cells; 1 resamples single cells.
    pub block: usize,
    /// Largest admissible escaped mass fraction per direction, enforced unless every
    /// observable has compact support.
    pub escape_limit: f64,
    /// Radius of the bidisk counted as escape; `None` uses the certified bound on K.
    pub escape_radius: Option<f64>,
    pub seed: u64,
}

impl Default for CorrelationOptions {
    fn default() -> Self {
        Self {
            kind: EstimatorKind::Symmetric,
            centering: Centering::Transported,
            bootstrap: 400,
            block: 1,
            escape_limit: 0.2,
            escape_radius: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CorrelationEstimate {
    pub lag: usize,
    pub estimate: f64,
    pub stderr: f64,
    /// Escaped mass fraction, forward and backward.
    pub escaped: [f64; 2],
    /// Mass dropped because a value was not finite or an orbit overflowed with no
    /// declared support.
    pub skipped_mass: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorrelationSeries {
    pub lags: Vec<usize>,
    pub estimates: Vec<f64>,
    pub stderr: Vec<f64>,
    pub escaped: Vec<[f64; 2]>,
    pub estimator_kind: EstimatorKind,
    pub centering: Centering,
    pub sample_count: usize,
    pub seed: u64,
}

/// Orbit of one cell center, advanced lag by lag.
#[derive(Clone, Copy)]
struct Walker {
    at: Option<Point2C>,
    escaped: bool,
}

impl Walker {
    fn start(q: Point2C) -> Self {
        Self {
            at: Some(q),
            escaped: false,
        }
    }

    fn advance(&mut self, map: &HenonMap, steps: usize, dir: Direction, radius: f64) {
        for _ in 0..steps {
            let Some(q) = self.at else { return };
            match map.step(q, dir) {
                Ok(p) => {
                    if !(p.norm_inf() <= radius) {
                        self.escaped = true;
                    }
                    self.at = Some(p);
                }
                Err(_) => {
                    self.escaped = true;
                    self.at = None;
                }
            }
        }
    }
}

fn value_at(obs: &Observable, w: &Walker) -> Option<f64> {
    match w.at {
        Some(p) => Some(obs.eval(p)).filter(|v| v.is_finite()),
        None => obs.support.map(|_| 0.0),
    }
}

/// Mean of a weighted list that is exact for constant input.
fn weighted_mean(vals: &[f64], w: &[f64]) -> f64 {
    let mut it = vals.iter().zip(w).filter(|(_, &m)| m > 0.0).map(|(v, _)| *v);
    let Some(first) = it.next() else { return 0.0 };
    if it.all(|v| v == first) {
        return first;
    }
    let tot = neumaier_sum(w.iter().copied());
    neumaier_sum(vals.iter().zip(w).map(|(v, m)| v * m)) / tot
}

/// Block sums of (m, m·a', m·b', m·a'b') over spatial blocks of cells.
struct Blocks {
    sums: Vec<[f64; 4]>,
}

impl Blocks {
    fn estimate(&self, weights: Option<&[u8]>) -> f64 {
        let mut t = [0.0f64; 4];
        let mut comp = [0.0f64; 4];
        for (k, s) in self.sums.iter().enumerate() {
            let w = weights.map_or(1.0, |w| w[k] as f64);
            if w == 0.0 {
                continue;
            }
            for j in 0..4 {
                // Neumaier, inline to keep the four running sums together
                let x = w * s[j];
                let y = t[j] + x;
                comp[j] += if t[j].abs() >= x.abs() { (t[j] - y) + x } else { (x - y) + t[j] };
                t[j] = y;
            }
        }
        let [m, a, b, ab] = std::array::from_fn(|j| t[j] + comp[j]);
        if m == 0.0 {
            return 0.0;
        }
        ab / m - (a / m) * (b / m)
    }
}

/// Pairs of observables evaluated at each lag: (φ at the forward point, ψ at the
/// backward point).
type PairsAt<'a> = dyn Fn(usize) -> Vec<(&'a Observable, &'a Observable)> + Sync + 'a;

fn correlate_core<'a>(
    measure: &DiscreteMeasure,
    map: &HenonMap,
    lags: &[usize],
    pairs: &PairsAt<'a>,
    opts: &CorrelationOptions,
) -> Result<Vec<Vec<CorrelationEstimate>>> {
    if lags.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("lags must be strictly increasing".into()));
    }
    if opts.kind == EstimatorKind::Symmetric {
        if let Some(n) = lags.iter().find(|&&n| n % 2 == 1) {
            return Err(Error::InvalidArgument(format!("symmetric estimator needs even lags, got {n}")));
        }
    }
    if opts.block == 0 {
        return Err(Error::InvalidArgument("bootstrap block must be at least one cell".into()));
    }
    let radius = opts.escape_radius.unwrap_or_else(|| map.k_bound());
    let sup = measure.support();
    let geom = measure.geom;
    let masses: Vec<f64> = sup.iter().map(|&i| measure.masses[i]).collect();
    let total = neumaier_sum(masses.iter().copied());

    let nb: [usize; 4] = std::array::from_fn(|a| geom.resolution[a].div_ceil(opts.block));
    // blocks are numbered densely in order of first occurrence, so only nonempty ones exist
    let mut dense = std::collections::HashMap::new();
    let block_of: Vec<usize> = sup
        .iter()
        .map(|&i| {
            let c = geom.unravel(i);
            let id = ((c[0] / opts.block * nb[1] + c[1] / opts.block) * nb[2] + c[2] / opts.block) * nb[3]
                + c[3] / opts.block;
            let next = dense.len();
            *dense.entry(id).or_insert(next)
        })
        .collect();
    let n_blocks = dense.len();
    // Poisson(1) block weights, shared by every lag and pair. Stored as u8: a draw
    // above 255 has probability below 1e-500.
    let poisson = Poisson::new(1.0).expect("rate 1 is valid");
    let boot_weights: Vec<Vec<u8>> = (0..opts.bootstrap)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(r as u64);
            (0..n_blocks).map(|_| {
                let k: f64 = poisson.sample(&mut rng);
                k.min(255.0) as u8
            }).collect()
        })
        .collect();

    let (fwd_per_lag, bwd_per_lag): (Vec<usize>, Vec<usize>) = lags
        .iter()
        .map(|&n| match opts.kind {
            EstimatorKind::Direct => (n, 0),
            EstimatorKind::Symmetric => (n / 2, n / 2),
        })
        .unzip();

    // lag-0 means for stationary centering
    let stationary: Vec<(f64, f64)> = if opts.centering == Centering::Stationary {
        pairs(0)
            .iter()
            .map(|(phi, psi)| {
                let f = |o: &Observable| {
                    det_sum(sup.len(), |k| {
                        let v = o.eval(measure.center(sup[k]));
                        if v.is_finite() {
                            masses[k] * v
                        } else {
                            0.0
                        }
                    }) / total
                };
                (f(phi), f(psi))
            })
            .collect()
    } else {
        Vec::new()
    };

    let mut fwd: Vec<Walker> = sup.par_iter().map(|&i| Walker::start(measure.center(i))).collect();
    let mut bwd = fwd.clone();
    let (mut done_f, mut done_b) = (0usize, 0usize);
    let mut out = Vec::with_capacity(lags.len());
    for (li, &lag) in lags.iter().enumerate() {
        let (sf, sb) = (fwd_per_lag[li] - done_f, bwd_per_lag[li] - done_b);
        fwd.par_iter_mut().for_each(|w| w.advance(map, sf, Direction::Forward, radius));
        bwd.par_iter_mut().for_each(|w| w.advance(map, sb, Direction::Backward, radius));
        done_f = fwd_per_lag[li];
        done_b = bwd_per_lag[li];
        let esc = |ws: &[Walker]| det_sum(ws.len(), |k| if ws[k].escaped { masses[k] } else { 0.0 }) / total;
        let escaped = [esc(&fwd), esc(&bwd)];
        let worst = escaped[0].max(escaped[1]);
        let at_lag = pairs(li);
        // compactly supported observables stay evaluable on escaped orbits
        let supported = at_lag.iter().all(|(a, b)| a.support.is_some() && b.support.is_some());
        if worst > opts.escape_limit && !supported {
            return Err(Error::EscapeDominated { lag, fraction: worst });
        }
        let mut row = Vec::new();
        for (pi, (phi, psi)) in at_lag.into_iter().enumerate() {
            let vals: Vec<Option<(f64, f64)>> = (0..sup.len())
                .into_par_iter()
                .map(|k| Some((value_at(phi, &fwd[k])?, value_at(psi, &bwd[k])?)))
                .collect();
            let w: Vec<f64> = (0..sup.len()).map(|k| if vals[k].is_some() { masses[k] } else { 0.0 }).collect();
            let skipped_mass = (total - neumaier_sum(w.iter().copied())).max(0.0) / total;
            let a: Vec<f64> = vals.iter().map(|v| v.map_or(0.0, |p| p.0)).collect();
            let b: Vec<f64> = vals.iter().map(|v| v.map_or(0.0, |p| p.1)).collect();
            let (abar, bbar) = (weighted_mean(&a, &w), weighted_mean(&b, &w));
            let mut blocks = Blocks {
                sums: vec![[0.0; 4]; n_blocks],
            };
            for k in 0..sup.len() {
                if w[k] == 0.0 {
                    continue;
                }
                let (da, db) = (a[k] - abar, b[k] - bbar);
                let s = &mut blocks.sums[block_of[k]];
                s[0] += w[k];
                s[1] += w[k] * da;
                s[2] += w[k] * db;
                s[3] += w[k] * da * db;
            }
            // E[ab] − μφ·μψ = cov + ā·b̄ − μφ·μψ
            let shift = match opts.centering {
                Centering::Transported => 0.0,
                Centering::Stationary => abar * bbar - stationary[pi].0 * stationary[pi].1,
            };
            let estimate = blocks.estimate(None) + shift;
            let reps: Vec<f64> = boot_weights.par_iter().map(|bw| blocks.estimate(Some(bw)) + shift).collect();
            let stderr = if reps.len() > 1 {
                let mean = neumaier_sum(reps.iter().copied()) / reps.len() as f64;
                (neumaier_sum(reps.iter().map(|r| (r - mean).powi(2))) / (reps.len() - 1) as f64).sqrt()
            } else {
                0.0
            };
            row.push(CorrelationEstimate {
                lag,
                estimate,
                stderr,
                escaped,
                skipped_mass,
            });
        }
        out.push(row);
    }
    Ok(out)
}

/// C_n(φ, ψ) and its block-bootstrap standard error.
pub fn correlation(
    measure: &DiscreteMeasure,
    map: &HenonMap,
    phi: &Observable,
    psi: &Observable,
    n: usize,
    opts: &CorrelationOptions,
) -> Result<CorrelationEstimate> {
    let pairs = |_: usize| vec![(phi, psi)];
    Ok(correlate_core(measure, map, &[n], &pairs, opts)?[0][0])
}

/// C_n over a lag list, sharing orbits and bootstrap weights across lags.
pub fn correlation_series(
    measure: &DiscreteMeasure,
    map: &HenonMap,
    phi: &Observable,
    psi: &Observable,
    lags: &[usize],
    opts: &CorrelationOptions,
) -> Result<CorrelationSeries> {
    let pairs = |_: usize| vec![(phi, psi)];
    let rows = correlate_core(measure, map, lags, &pairs, opts)?;
    Ok(CorrelationSeries {
        lags: lags.to_vec(),
        estimates: rows.iter().map(|r| r[0].estimate).collect(),
        stderr: rows.iter().map(|r| r[0].stderr).collect(),
        escaped: rows.iter().map(|r| r[0].escaped).collect(),
        estimator_kind: opts.kind,
        centering: opts.centering,
        sample_count: measure.support().len(),
        seed: opts.seed,
    })
}

/// Least-squares fit of log|C_n| against n.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecayFit {
    pub slope: f64,
    pub intercept: f64,
    /// 95% parametric-bootstrap interval for the slope.
    pub slope_ci: (f64, f64),
    /// Lags used by the fit.
    pub window: Vec<usize>,
    pub noise_floor_multiplier: f64,
    /// Per lag of the series: |C_n| ≥ multiplier·stderr and C_n ≠ 0.
    pub usable: Vec<bool>,
}

fn ols(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

pub fn usable_lags(series: &CorrelationSeries, multiplier: f64) -> Vec<bool> {
    series
        .estimates
        .iter()
        .zip(&series.stderr)
        .map(|(c, s)| c.abs() > 0.0 && c.is_finite() && c.abs() >= multiplier * s)
        .collect()
}

/// Fit over the maximal prefix of usable lags; at least three are required.
pub fn fit_decay(series: &CorrelationSeries, multiplier: f64, seed: u64) -> Result<DecayFit> {
    let usable = usable_lags(series, multiplier);
    let len = usable.iter().take_while(|&&u| u).count();
    if len == 0 {
        return Err(Error::NoUsableLags("no usable lags".into()));
    }
    if len < 3 {
        return Err(Error::NoUsableLags(format!("only {len} usable lags before the noise floor; need 3")));
    }
    let x: Vec<f64> = series.lags[..len].iter().map(|&n| n as f64).collect();
    let y: Vec<f64> = series.estimates[..len].iter().map(|c| c.abs().ln()).collect();
    let (slope, intercept) = ols(&x, &y);
    const REPS: usize = 1000;
    let mut slopes: Vec<f64> = (0..REPS)
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let yy: Vec<f64> = (0..len)
                .map(|k| {
                    let s = series.stderr[k];
                    let c = series.estimates[k];
                    let noisy = if s > 0.0 {
                        c + Normal::new(0.0, s).expect("positive sd").sample(&mut rng)
                    } else {
                        c
                    };
                    noisy.abs().max(f64::MIN_POSITIVE).ln()
                })
                .collect();
            ols(&x, &yy).0
        })
        .collect();
    slopes.sort_by(f64::total_cmp);
    let slope_ci = (slopes[REPS / 40], slopes[REPS - 1 - REPS / 40]);
    Ok(DecayFit {
        slope,
        intercept,
        slope_ci,
        window: series.lags[..len].to_vec(),
        noise_floor_multiplier: multiplier,
        usable,
    })
}

/// CSV with columns n, estimate, stderr, usable.
pub fn series_csv(series: &CorrelationSeries, usable: &[bool]) -> String {
    let mut s = String::from("n,estimate,stderr,usable\n");
    for k in 0..series.lags.len() {
        s.push_str(&format!(
            "{},{:e},{:e},{}\n",
            series.lags[k],
            series.estimates[k],
            series.stderr[k],
            usable.get(k).copied().unwrap_or(false) as u8
        ));
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailOptions {
    pub samples: usize,
    pub seed: u64,
    /// Smallest hit count for a level to enter the fit.
    pub min_hits: usize,
    /// Largest admissible RMS deviation of log tail masses from the fit.
    pub max_residual: f64,
}

impl Default for TailOptions {
    fn default() -> Self {
        Self {
            samples: 1_000_000,
            seed: 0,
            min_hits: 20,
            max_residual: 0.2,
        }
    }
}

/// μ{|obs| > M} ≈ c·e^{−αM}.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TailFit {
    pub alpha: f64,
    pub c: f64,
    /// Levels that entered the fit.
    pub m_grid: Vec<f64>,
    /// Empirical tail mass at every requested level.
    pub masses: Vec<f64>,
    pub hits: Vec<usize>,
    /// RMS deviation of log tail mass from the fitted line.
    pub residual: f64,
    pub admitted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum TailVerdict {
    /// No sample exceeds any level.
    Bounded,
    Fit(TailFit),
}

/// Monte Carlo tail masses from jittered samples of μ and a log-linear fit.
pub fn moderate_tail(measure: &DiscreteMeasure, obs: &Observable, m_grid: &[f64], opts: &TailOptions) -> Result<TailVerdict> {
    if m_grid.is_empty() || opts.samples == 0 {
        return Err(Error::InvalidArgument("moderate_tail needs levels and samples".into()));
    }
    let pts = measure.sample(opts.samples, opts.seed);
    let vals: Vec<f64> = pts.par_iter().map(|&q| obs.eval(q).abs()).collect();
    let hits: Vec<usize> = m_grid.iter().map(|&m| vals.iter().filter(|&&v| v > m).count()).collect();
    if hits.iter().all(|&h| h == 0) {
        return Ok(TailVerdict::Bounded);
    }
    let masses: Vec<f64> = hits.iter().map(|&h| h as f64 / opts.samples as f64).collect();
    let (x, y): (Vec<f64>, Vec<f64>) = m_grid
        .iter()
        .zip(&hits)
        .zip(&masses)
        .filter(|((_, &h), _)| h >= opts.min_hits)
        .map(|((&m, _), &p)| (m, p.ln()))
        .unzip();
    if x.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "only {} levels have at least {} hits; use more samples or lower levels",
            x.len(),
            opts.min_hits
        )));
    }
    let (slope, intercept) = ols(&x, &y);
    let residual = (x
        .iter()
        .zip(&y)
        .map(|(m, l)| (l - (intercept + slope * m)).powi(2))
        .sum::<f64>()
        / x.len() as f64)
        .sqrt();
    let alpha = -slope;
    Ok(TailVerdict::Fit(TailFit {
        alpha,
        c: intercept.exp(),
        m_grid: x,
        masses,
        hits,
        residual,
        admitted: alpha > 0.0 && residual <= opts.max_residual,
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DshOptions {
    pub correlation: CorrelationOptions,
    /// Stand-in for −∞ at a singular cell center in the tail norms.
    pub floor: f64,
    pub noise_floor_multiplier: f64,
}

impl Default for DshOptions {
    fn default() -> Self {
        Self {
            correlation: CorrelationOptions::default(),
            floor: -50.0,
            noise_floor_multiplier: 3.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DshRow {
    pub n: usize,
    /// Truncation level n·log d/α.
    pub m_n: f64,
    pub raw: f64,
    pub raw_stderr: f64,
    /// Correlation of the truncated pair.
    pub bounded: f64,
    pub bounded_stderr: f64,
    pub phi_tail_l1: f64,
    pub phi_tail_l2: f64,
    pub psi_tail_l1: f64,
    pub psi_tail_l2: f64,
    /// |C(φ₁,ψ₁)| + ‖φ₂‖₂‖ψ‖₂ + ‖φ₂‖₁‖ψ‖₁ + ‖ψ₂‖₂‖φ₁‖₂ + ‖ψ₂‖₁‖φ₁‖₁.
    pub assembled_bound: f64,
    pub usable: bool,
    /// C₀·n²·d^{−n/2}; NaN before C₀ is fitted.
    pub envelope: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DshReport {
    pub alpha: f64,
    pub degree: u64,
    pub rows: Vec<DshRow>,
    pub c0: f64,
    pub first_lag: usize,
    /// Raw |C_n| ≤ C₀·n²·d^{−n/2} at every usable lag n ≥ 1.
    pub envelope_holds: bool,
}

/// (‖u‖_{L¹(μ)}, ‖u‖_{L²(μ)}) of u = f(obs) at cell centers, with −∞ replaced by `floor`.
fn norms(measure: &DiscreteMeasure, obs: &Observable, floor: f64, f: impl Fn(f64) -> f64 + Sync) -> (f64, f64) {
    let sup = measure.support();
    let vals: Vec<f64> = sup.par_iter().map(|&i| f(obs.eval(measure.center(i)).max(floor))).collect();
    let l1 = det_sum(sup.len(), |k| measure.masses[sup[k]] * vals[k].abs());
    let l2 = det_sum(sup.len(), |k| measure.masses[sup[k]] * vals[k] * vals[k]).sqrt();
    (l1, l2)
}

/// Truncation experiment: per lag n, φ₁ = max(φ, −M_n) with M_n = n·log d/α, the
/// correlation of the truncated pair, the tail norms of φ₂ = φ − φ₁, and the raw
/// correlation against the fitted envelope C₀·n²·d^{−n/2}.
pub fn dsh_experiment(
    measure: &DiscreteMeasure,
    map: &HenonMap,
    phi: &Observable,
    psi: &Observable,
    alpha: f64,
    lags: &[usize],
    opts: &DshOptions,
) -> Result<DshReport> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
    }
    let d = map.degree() as f64;
    let levels: Vec<f64> = lags.iter().map(|&n| n as f64 * d.ln() / alpha).collect();
    let truncated: Vec<(Observable, Observable)> = levels
        .iter()
        .map(|&m| (truncate_unchecked(phi, m), truncate_unchecked(psi, m)))
        .collect();
    let pairs = |li: usize| vec![(phi, psi), (&truncated[li].0, &truncated[li].1)];
    let rows = correlate_core(measure, map, lags, &pairs, &opts.correlation)?;
    let (psi_l1, psi_l2) = norms(measure, psi, opts.floor, |v| v);
    let mut out = Vec::with_capacity(lags.len());
    for (li, &n) in lags.iter().enumerate() {
        let m = levels[li];
        let tail = move |v: f64| (v + m).min(0.0);
        let (p1, p2) = norms(measure, phi, opts.floor, tail);
        let (s1, s2) = norms(measure, psi, opts.floor, tail);
        let (t1, t2) = norms(measure, &truncated[li].0, opts.floor, |v| v);
        let raw = rows[li][0];
        let bounded = rows[li][1];
        out.push(DshRow {
            n,
            m_n: m,
            raw: raw.estimate,
            raw_stderr: raw.stderr,
            bounded: bounded.estimate,
            bounded_stderr: bounded.stderr,
            phi_tail_l1: p1,
            phi_tail_l2: p2,
            psi_tail_l1: s1,
            psi_tail_l2: s2,
            assembled_bound: bounded.estimate.abs() + p2 * psi_l2 + p1 * psi_l1 + s2 * t2 + s1 * t1,
            usable: raw.estimate.abs() > 0.0 && raw.estimate.abs() >= opts.noise_floor_multiplier * raw.stderr,
            envelope: f64::NAN,
        });
    }
    let first = out
        .iter()
        .find(|r| r.n >= 1 && r.usable)
        .ok_or_else(|| Error::NoUsableLags("no usable lag n >= 1 for the envelope".into()))?;
    let env = |n: usize| (n * n) as f64 * d.powf(-(n as f64) / 2.0);
    let c0 = first.raw.abs() / env(first.n);
    let first_lag = first.n;
    let mut holds = true;
    for r in &mut out {
        if r.n >= first_lag {
            r.envelope = c0 * env(r.n);
            if r.usable && r.raw.abs() > r.envelope * (1.0 + 1e-12) {
                holds = false;
            }
        }
    }
    Ok(DshReport {
        alpha,
        degree: map.degree(),
        rows: out,
        c0,
        first_lag,
        envelope_holds: holds,
    })
}

/// Synthetic series for testing fits: C_n = c·rⁿ with the given stderr.
pub fn synthetic_series(lags: &[usize], c: f64, r: f64, stderr: f64) -> CorrelationSeries {
    CorrelationSeries {
        lags: lags.to_vec(),
        estimates: lags.iter().map(|&n| c * r.powi(n as i32)).collect(),
        stderr: vec![stderr; lags.len()],
        escaped: vec![[0.0; 2]; lags.len()],
        estimator_kind: EstimatorKind::Direct,
        centering: Centering::Transported,
        sample_count: 0,
        seed: 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid4;
    use crate::map::C64;
    use crate::observable::{constant, coord_sq, re_z1};
    use rand::Rng;

    fn map() -> HenonMap {
        HenonMap::quadratic(C64::new(0.0, 0.5), C64::new(-1.0, 0.0)).unwrap()
    }

    /// Random masses on a block of cells around the origin.
    fn toy_measure() -> DiscreteMeasure {
        let g = Grid4::cube(21, 2.0).unwrap();
        let mut masses = vec![0.0; g.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..400 {
            let i: [usize; 4] = std::array::from_fn(|_| rng.random_range(7..14));
            masses[g.index(i)] += rng.random_range(0.1..1.0);
        }
        let t: f64 = masses.iter().sum();
        masses.iter_mut().for_each(|m| *m /= t);
        DiscreteMeasure::from_parts(g, masses, 0.0, 1.0).unwrap()
    }

    fn opts(kind: EstimatorKind) -> CorrelationOptions {
        CorrelationOptions {
            kind,
            bootstrap: 50,
            escape_limit: 1.0,
            ..CorrelationOptions::default()
        }
    }

    #[test]
    fn constants_have_zero_correlation() {
        let mu = toy_measure();
        let s = correlation_series(&mu, &map(), &constant(0.7), &coord_sq(), &[0, 2, 4], &opts(EstimatorKind::Symmetric)).unwrap();
        assert!(s.estimates.iter().all(|&c| c == 0.0));
        assert!(s.stderr.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn lag_zero_is_the_variance() {
        let mu = toy_measure();
        let o = coord_sq();
        let c = correlation(&mu, &map(), &o, &o, 0, &opts(EstimatorKind::Direct)).unwrap();
        let mean = mu.integrate_fn(|q| q.norm_sqr());
        let var = mu.integrate_fn(|q| (q.norm_sqr() - mean).powi(2));
        assert!(c.estimate >= 0.0);
        assert!((c.estimate - var).abs() < 1e-12 * var.max(1.0));
    }

    #[test]
    fn correlation_is_bilinear() {
        let mu = toy_measure();
        let (a, b) = (0.8, -1.7);
        let o = opts(EstimatorKind::Direct);
        let f = map();
        let (x, y, z) = (coord_sq(), re_z1(), crate::observable::fs_potential());
        let lhs = correlation(&mu, &f, &x.linear_combination(a, &y, b), &z, 1, &o).unwrap().estimate;
        let rhs = a * correlation(&mu, &f, &x, &z, 1, &o).unwrap().estimate
            + b * correlation(&mu, &f, &y, &z, 1, &o).unwrap().estimate;
        assert!((lhs - rhs).abs() < 1e-12 * (lhs.abs() + 1.0));
    }

    #[test]
    fn odd_symmetric_lags_and_bad_lag_lists_are_rejected() {
        let mu = toy_measure();
        let o = coord_sq();
        assert!(correlation(&mu, &map(), &o, &o, 3, &opts(EstimatorKind::Symmetric)).is_err());
        assert!(correlation_series(&mu, &map(), &o, &o, &[2, 2], &opts(EstimatorKind::Direct)).is_err());
    }

    #[test]
    fn escape_dominated_lags_are_rejected() {
        let mu = toy_measure();
        let o = coord_sq();
        let strict = CorrelationOptions {
            escape_limit: 0.0,
            escape_radius: Some(1e-3),
            ..opts(EstimatorKind::Direct)
        };
        assert!(matches!(
            correlation(&mu, &map(), &o, &o, 1, &strict),
            Err(Error::EscapeDominated { lag: 1, .. })
        ));
    }

    #[test]
    fn fit_recovers_exact_geometric_decay() {
        let s = synthetic_series(&[0, 1, 2, 3, 4, 5, 6], 4.0, 0.5, 0.0);
        let f = fit_decay(&s, 3.0, 1).unwrap();
        assert!((f.slope - 0.5f64.ln()).abs() < 1e-12);
        assert!((f.intercept - 4f64.ln()).abs() < 1e-12);
        assert_eq!(f.slope_ci, (f.slope, f.slope));
        let zero = synthetic_series(&[0, 1, 2], 0.0, 0.5, 0.0);
        match fit_decay(&zero, 3.0, 1) {
            Err(Error::NoUsableLags(m)) => assert_eq!(m, "no usable lags"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn fit_window_stops_at_the_noise_floor() {
        let mut s = synthetic_series(&[0, 2, 4, 6, 8], 1.0, 0.5, 0.01);
        s.estimates[4] = 0.005;
        let f = fit_decay(&s, 3.0, 2).unwrap();
        assert_eq!(f.window, vec![0, 2, 4]);
        assert!(f.slope_ci.0 <= f.slope && f.slope <= f.slope_ci.1);
        let csv = series_csv(&s, &f.usable);
        assert!(csv.starts_with("n,estimate,stderr,usable\n0,1e0,1e-2,1\n"));
    }

    #[test]
    fn bounded_observable_gives_bounded_verdict() {
        let mu = toy_measure();
        let t = TailOptions {
            samples: 10_000,
            ..TailOptions::default()
        };
        let v = moderate_tail(&mu, &constant(0.5), &[1.0, 2.0, 3.0], &t).unwrap();
        assert_eq!(v, TailVerdict::Bounded);
    }
}
