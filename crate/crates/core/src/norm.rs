//! Lp norms, Hölder conjugates and the closed-form minimizer of a linear
//! function over a (weighted) Lp ball.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Relative tolerance used to collect the argmax set when `p = 1`.
pub const ARGMAX_REL_TOL: f64 = 1e-9;

/// Norm order `p ∈ [1, ∞]`.
///
/// Serialized as a JSON number, or as the string `"inf"` for `p = ∞`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct NormOrder(f64);

impl NormOrder {
    pub const ONE: NormOrder = NormOrder(1.0);
    pub const TWO: NormOrder = NormOrder(2.0);
    pub const INFINITY: NormOrder = NormOrder(f64::INFINITY);

    pub fn new(p: f64) -> Result<Self> {
        if p.is_nan() || p < 1.0 {
            return Err(Error::InvalidSpec(format!("norm order p = {p} must lie in [1, ∞]")));
        }
        Ok(NormOrder(p))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_one(self) -> bool {
        self.0 == 1.0
    }

    pub fn is_infinite(self) -> bool {
        self.0.is_infinite()
    }

    /// The Hölder conjugate `q` with `1/p + 1/q = 1`.
    pub fn conjugate(self) -> NormOrder {
        NormOrder(conjugate_value(self.0))
    }

    /// `1/p`, zero for `p = ∞`.
    pub fn reciprocal(self) -> f64 {
        if self.is_infinite() {
            0.0
        } else {
            1.0 / self.0
        }
    }
}

impl fmt::Display for NormOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_infinite() {
            write!(f, "inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl std::str::FromStr for NormOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "∞" => Ok(NormOrder::INFINITY),
            other => other
                .parse::<f64>()
                .map_err(|_| Error::InvalidSpec(format!("cannot parse norm order `{s}`")))
                .and_then(NormOrder::new),
        }
    }
}

impl Serialize for NormOrder {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        if self.is_infinite() {
            serializer.serialize_str("inf")
        } else {
            serializer.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for NormOrder {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Number(p) => NormOrder::new(p),
            Raw::Text(s) => s.parse(),
        }
        .map_err(serde::de::Error::custom)
    }
}

fn conjugate_value(p: f64) -> f64 {
    if p == 1.0 {
        f64::INFINITY
    } else if p.is_infinite() {
        1.0
    } else {
        p / (p - 1.0)
    }
}

/// Hölder conjugate of `p`, with `q(1) = ∞` and `q(∞) = 1`.
pub fn holder_conjugate(p: f64) -> Result<f64> {
    NormOrder::new(p).map(|p| p.conjugate().value())
}

/// `‖x‖_p`, computed with max-scaling so large `p` does not overflow.
pub fn lp_norm(x: &[f64], p: NormOrder) -> f64 {
    let max = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if p.is_infinite() || max == 0.0 {
        return max;
    }
    let p = p.value();
    if p == 1.0 {
        return x.iter().map(|v| v.abs()).sum();
    }
    if p == 2.0 {
        return max * x.iter().map(|v| (v / max).powi(2)).sum::<f64>().sqrt();
    }
    max * x.iter().map(|v| (v.abs() / max).powf(p)).sum::<f64>().powf(1.0 / p)
}

/// Weighted norm `(Σ w_i |x_i|^p)^{1/p}`; for `p = ∞` the weights drop out.
pub fn weighted_lp_norm(x: &[f64], weights: Option<&[f64]>, p: NormOrder) -> f64 {
    match weights {
        None => lp_norm(x, p),
        Some(w) => {
            let scaled: Vec<f64> = x
                .iter()
                .zip(w)
                .map(|(v, w)| v * w.powf(p.reciprocal()))
                .collect();
            lp_norm(&scaled, p)
        }
    }
}

/// Closed-form solution of `min ⟨r, x⟩ s.t. ‖r‖_{w,p} ≤ radius` for `x ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct BallMinimizer {
    /// `-r*`, entrywise non-negative.
    pub penalty: Vec<f64>,
    /// `radius · ‖x̂‖_q` with `x̂ = x / w^{1/p}`; equals `⟨penalty, x⟩`.
    pub dual_value: f64,
}

/// Minimizes a linear function with non-negative coefficients `x` over the
/// (weighted) Lp ball of the given radius centred at zero.
///
/// With `x̂ = x / w^{1/p}` the minimizer is `r̂ = -radius (x̂ / ‖x̂‖_q)^{q-1}`
/// in scaled coordinates, mapped back by `r = r̂ / w^{1/p}`. `p = 1` spreads
/// the budget equally over the argmax set of `x̂`; `p = ∞` charges the full
/// radius everywhere.
pub fn minimize_over_ball(x: &[f64], weights: Option<&[f64]>, p: NormOrder, radius: f64) -> BallMinimizer {
    debug_assert!(x.iter().all(|&v| v >= 0.0), "coefficients must be non-negative");
    let inv_p = p.reciprocal();
    let scale: Vec<f64> = match weights {
        Some(w) if inv_p > 0.0 => w.iter().map(|w| w.powf(inv_p)).collect(),
        _ => vec![1.0; x.len()],
    };
    let x_hat: Vec<f64> = x.iter().zip(&scale).map(|(v, s)| v / s).collect();
    let q = p.conjugate();

    let mut penalty_hat = vec![0.0; x.len()];
    let dual_norm;
    if p.is_infinite() {
        // q = 1: (x̂/‖x̂‖_1)^0 is taken as 1, including at zero entries.
        penalty_hat.fill(radius);
        dual_norm = x_hat.iter().sum();
    } else if p.is_one() {
        let max = x_hat.iter().copied().fold(0.0, f64::max);
        dual_norm = max;
        if max > 0.0 {
            let cutoff = max - ARGMAX_REL_TOL * max;
            let support: Vec<usize> = (0..x.len()).filter(|&i| x_hat[i] >= cutoff).collect();
            let share = radius / support.len() as f64;
            for i in support {
                penalty_hat[i] = share;
            }
        }
    } else {
        dual_norm = lp_norm(&x_hat, q);
        if dual_norm > 0.0 {
            let exponent = q.value() - 1.0;
            for (ph, xh) in penalty_hat.iter_mut().zip(&x_hat) {
                *ph = radius * (xh / dual_norm).powf(exponent);
            }
        }
    }
    BallMinimizer {
        penalty: penalty_hat.iter().zip(&scale).map(|(ph, s)| ph / s).collect(),
        dual_value: radius * dual_norm,
    }
}
