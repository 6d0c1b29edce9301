//! Pointwise Green functions G⁺, G⁻ and G = max(G⁺, G⁻) with certified error bounds.
//!
//! Inside the filtration region {|z1| ≥ max(R, |z2|)} a factor of degree d with leading
//! coefficient a sends z to a·z^d·(1 + η) with |η| ≤ η̄(|z|) < 1, and η̄ decreases in |z|.
//! Writing D_m for the product of the degrees applied so far,
//!
//! ```text
//! G⁺ = D_m⁻¹ (log|z_m| + T_lead + Σ_k log|1 + η_k| / (d ⋯ d))
//! ```
//!
//! where T_lead is the periodic geometric sum of the log|a| terms. The η-sum is bounded
//! by −log(1 − η̄(|z_m|)) because the degree products are at least 2, 4, 8, ...
//!
//! G⁻ uses f⁻¹ = σ∘f̃∘σ with f̃ the inverse-conjugate map, so G⁻(q) = G⁺_f̃(σq).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map::{Direction, HenonMap, Point2C};

/// Which Green function a value or field holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GreenKind {
    Forward,
    Backward,
    Combined,
}

impl GreenKind {
    pub fn code(self) -> u8 {
        match self {
            GreenKind::Forward => 0,
            GreenKind::Backward => 1,
            GreenKind::Combined => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(GreenKind::Forward),
            1 => Some(GreenKind::Backward),
            2 => Some(GreenKind::Combined),
            _ => None,
        }
    }
}

impl From<Direction> for GreenKind {
    fn from(d: Direction) -> Self {
        match d {
            Direction::Forward => GreenKind::Forward,
            Direction::Backward => GreenKind::Backward,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GreenValue {
    pub value: f64,
    pub error_bound: f64,
    /// Map step at which the orbit entered the filtration region; `None` if it never did.
    pub escape_step: Option<usize>,
}

/// Precomputed data for one direction.
#[derive(Clone, Debug)]
struct OneSided {
    map: HenonMap,
    radius: f64,
    /// tail[i] = Σ_{k≥0} log|a_{i+k}| / (d_i ⋯ d_{i+k}), indices mod the factor count.
    tail: Vec<f64>,
    /// max over factors of log(1 + η̄(R)), for the unescaped bound.
    log1p_eta_r: f64,
}

impl OneSided {
    fn new(map: HenonMap) -> Self {
        let radius = map.filtration_radius();
        let fs = map.factors();
        let p = fs.len();
        let total = (map.degree() as f64).ln();
        let tail = (0..p)
            .map(|i| {
                let mut s = 0.0;
                let mut logprod = 0.0;
                for k in 0..p {
                    let f = &fs[(i + k) % p];
                    logprod += (f.degree() as f64).ln();
                    s += f.leading().norm().ln() * (-logprod).exp();
                }
                s / (1.0 - (-total).exp())
            })
            .collect();
        let log1p_eta_r = fs
            .iter()
            .map(|f| f.eta_bound(radius).ln_1p())
            .fold(0.0, f64::max);
        Self {
            map,
            radius,
            tail,
            log1p_eta_r,
        }
    }

    fn max_eta(&self, r: f64) -> f64 {
        self.map
            .factors()
            .iter()
            .map(|f| f.eta_bound(r))
            .fold(0.0, f64::max)
    }

    fn in_region(&self, x: Point2C) -> bool {
        let a = x.z1.norm();
        a >= self.radius && a >= x.z2.norm()
    }

    fn green(&self, q: Point2C, tol: f64, n_max: usize) -> GreenValue {
        let fs = self.map.factors();
        let p = fs.len();
        let mut x = q;
        let mut log_d: f64 = 0.0;
        let mut m = 0usize;
        let mut entered: Option<usize> = None;
        loop {
            if self.in_region(x) {
                if entered.is_none() {
                    entered = Some(m.div_ceil(p));
                }
                let r = x.z1.norm();
                let eta = self.max_eta(r);
                let scale = (-log_d).exp();
                let bound = scale * (-(-eta).ln_1p());
                let next_overflows = r > 1e100;
                if bound <= tol || next_overflows {
                    let value = scale * (r.ln() + self.tail[m % p]);
                    return GreenValue {
                        value: value.max(0.0),
                        error_bound: bound,
                        escape_step: entered,
                    };
                }
            } else if m >= n_max * p {
                let u = self.radius.max(x.norm_inf());
                let c = u.ln() + self.tail[m % p] + self.log1p_eta_r;
                return GreenValue {
                    value: 0.0,
                    error_bound: (-log_d).exp() * c.max(0.0),
                    escape_step: None,
                };
            }
            let f = &fs[m % p];
            x = f.forward(x);
            log_d += (f.degree() as f64).ln();
            m += 1;
        }
    }

    /// d^{-n}·½·log(1 + ‖fⁿ(q)‖²), switching to log-scale tracking once the orbit is
    /// deep in the filtration region.
    fn pullback(&self, q: Point2C, n: usize) -> Result<f64> {
        const SWITCH: f64 = 1e30;
        let fs = self.map.factors();
        let mut x = q;
        let mut logs: Option<(f64, f64)> = None;
        for step in 0..n {
            for f in fs {
                match logs {
                    Some((lz, _)) => {
                        logs = Some((f.degree() as f64 * lz + f.leading().norm().ln(), lz));
                    }
                    None => {
                        if self.in_region(x) && x.z1.norm() > SWITCH {
                            let lz = x.z1.norm().ln();
                            logs = Some((f.degree() as f64 * lz + f.leading().norm().ln(), lz));
                        } else {
                            x = f.forward(x);
                            if !x.is_finite() {
                                return Err(Error::Escaped { step: step + 1 });
                            }
                        }
                    }
                }
            }
        }
        let half_log = match logs {
            None => 0.5 * x.norm_sqr().ln_1p(),
            Some((lz, lw)) => {
                // ½ log(1 + e^{2lz} + e^{2lw}) with lz ≥ lw ≫ 0
                let m = 2.0 * lz;
                0.5 * (m + ((-m).exp() + 1.0 + (2.0 * lw - m).exp()).ln())
            }
        };
        Ok(half_log * (-(n as f64) * (self.map.degree() as f64).ln()).exp())
    }
}

/// Green-function evaluator for one map, shareable across threads.
#[derive(Clone, Debug)]
pub struct GreenEngine {
    fwd: OneSided,
    bwd: OneSided,
}

impl GreenEngine {
    pub fn new(map: &HenonMap) -> Self {
        Self {
            fwd: OneSided::new(map.clone()),
            bwd: OneSided::new(map.inverse_conjugate()),
        }
    }

    pub fn map(&self) -> &HenonMap {
        &self.fwd.map
    }

    pub fn filtration_radius(&self, dir: Direction) -> f64 {
        match dir {
            Direction::Forward => self.fwd.radius,
            Direction::Backward => self.bwd.radius,
        }
    }

    pub fn green(&self, q: Point2C, kind: GreenKind, tol: f64, n_max: usize) -> Result<GreenValue> {
        if !(tol > 0.0) {
            return Err(Error::InvalidArgument(format!("tol must be positive, got {tol}")));
        }
        if n_max == 0 {
            return Err(Error::InvalidArgument("n_max must be at least 1".into()));
        }
        Ok(match kind {
            GreenKind::Forward => self.fwd.green(q, tol, n_max),
            GreenKind::Backward => self.bwd.green(q.swap(), tol, n_max),
            GreenKind::Combined => {
                let a = self.fwd.green(q, tol, n_max);
                let b = self.bwd.green(q.swap(), tol, n_max);
                let escape_step = match (a.escape_step, b.escape_step) {
                    (Some(x), Some(y)) => Some(x.min(y)),
                    (x, y) => x.or(y),
                };
                GreenValue {
                    value: a.value.max(b.value),
                    error_bound: a.error_bound.max(b.error_bound),
                    escape_step,
                }
            }
        })
    }

    pub fn pullback(&self, q: Point2C, n: usize, dir: Direction) -> Result<f64> {
        match dir {
            Direction::Forward => self.fwd.pullback(q, n),
            Direction::Backward => self.bwd.pullback(q.swap(), n),
        }
    }
}

/// G⁺, G⁻ or G at one point.
pub fn green_point(map: &HenonMap, q: Point2C, kind: GreenKind, tol: f64, n_max: usize) -> Result<GreenValue> {
    GreenEngine::new(map).green(q, kind, tol, n_max)
}

/// The potential pullback d^{-n}·½·log(1 + ‖fⁿ(q)‖²).
pub fn green_potential_pullback(map: &HenonMap, q: Point2C, n: usize) -> Result<f64> {
    GreenEngine::new(map).pullback(q, n, Direction::Forward)
}
