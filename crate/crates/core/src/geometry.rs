//! L_p geometry of the exceedance region and the angular parametrization.
//!
//! Points live on the uniform scale, where small coordinates are extreme.
//! The set `C_{p,θ}` collects points below the boundary curve `y = y_p(x)`
//! and below the ray of angle `θ`; its exponent-measure mass is the angular
//! CDF at `θ`.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Exponent of an L_p norm with `p >= 1`; infinity is a separate variant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PNorm {
    Finite(f64),
    Infinity,
}

impl PNorm {
    /// Validated constructor for a finite exponent.
    pub fn finite(p: f64) -> Result<Self> {
        if !(p >= 1.0) || !p.is_finite() {
            return Err(Error::InvalidParameter(format!("p must be a finite real >= 1, got {p}")));
        }
        Ok(PNorm::Finite(p))
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, PNorm::Finite(_))
    }

    /// Finite exponent, or an unsupported-feature error for `p = inf`.
    pub fn require_finite(&self, what: &str) -> Result<f64> {
        match *self {
            PNorm::Finite(p) => Ok(p),
            PNorm::Infinity => Err(Error::Unsupported(format!("{what} requires a finite p"))),
        }
    }

    /// `ln ||(1, e^t)||_p`, stable for all real `t`.
    pub fn ln_norm_one_exp(&self, t: f64) -> f64 {
        match *self {
            PNorm::Finite(p) => softplus(p * t) / p,
            PNorm::Infinity => t.max(0.0),
        }
    }
}

impl fmt::Display for PNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PNorm::Finite(p) => write!(f, "{p}"),
            PNorm::Infinity => write!(f, "inf"),
        }
    }
}

impl FromStr for PNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s.to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "∞" => Ok(PNorm::Infinity),
            other => {
                let p: f64 = other
                    .parse()
                    .map_err(|_| Error::InvalidParameter(format!("cannot parse p from '{s}'")))?;
                if p.is_infinite() && p > 0.0 {
                    Ok(PNorm::Infinity)
                } else {
                    PNorm::finite(p)
                }
            }
        }
    }
}

impl Serialize for PNorm {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for PNorm {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Weight function of the Wasserstein-type distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    /// `q = 1`, the classical L1-Wasserstein distance.
    Constant,
    /// `q(θ) = 1/sqrt|θ - π/4|`, emphasizing the diagonal direction.
    InvSqrtPi4,
}

impl fmt::Display for WeightKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WeightKind::Constant => "const",
            WeightKind::InvSqrtPi4 => "invsqrt",
        })
    }
}

impl FromStr for WeightKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "const" | "constant" => Ok(WeightKind::Constant),
            "invsqrt" | "inv_sqrt_pi4" | "inv-sqrt" => Ok(WeightKind::InvSqrtPi4),
            other => Err(Error::InvalidParameter(format!("unknown weight kind '{other}'"))),
        }
    }
}

/// `ln(1 + e^x)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `||(x1, x2)||_p` for nonnegative components, possibly infinite.
pub fn lp_norm(p: PNorm, x1: f64, x2: f64) -> f64 {
    let hi = x1.max(x2);
    let lo = x1.min(x2);
    match p {
        PNorm::Infinity => hi,
        PNorm::Finite(p) => {
            if hi == 0.0 || hi.is_infinite() {
                return hi;
            }
            if p == 1.0 {
                return hi + lo;
            }
            hi * (1.0 + (lo / hi).powf(p)).powf(1.0 / p)
        }
    }
}

/// Smallest `y >= 1` with `||(1/x, 1/y)||_p <= 1`; infinite for `x <= 1`
/// when `p` is finite.
pub fn y_p(p: PNorm, x: f64) -> f64 {
    match p {
        PNorm::Infinity => {
            if x < 1.0 {
                f64::INFINITY
            } else {
                1.0
            }
        }
        PNorm::Finite(p) => {
            if x <= 1.0 {
                return f64::INFINITY;
            }
            if x.is_infinite() {
                return 1.0;
            }
            let d = (p * x.ln()).exp_m1();
            ((1.0 / d).ln_1p() / p).exp()
        }
    }
}

/// `|y_p'(x)| = (x^p - 1)^{-(1 + 1/p)}` for `x > 1`.
pub fn y_p_prime_abs(p: PNorm, x: f64) -> Result<f64> {
    let p = p.require_finite("the boundary slope")?;
    if !(x > 1.0) {
        return Err(Error::Domain(format!("boundary slope needs x > 1, got {x}")));
    }
    let d = (p * x.ln()).exp_m1();
    Ok((-(1.0 + 1.0 / p) * d.ln()).exp())
}

/// `x_p(θ) = ||(1, cot θ)||_p`, the abscissa where the ray of angle θ
/// meets the boundary curve.
pub fn x_p_of_theta(p: PNorm, theta: f64) -> Result<f64> {
    if !(theta > 0.0 && theta <= FRAC_PI_2) {
        return Err(Error::Domain(format!("x_p needs θ in (0, π/2], got {theta}")));
    }
    let cot = if theta == FRAC_PI_2 { 0.0 } else { theta.cos() / theta.sin() };
    Ok(lp_norm(p, 1.0, cot))
}

/// Membership of `(x, y)` in `C_{p,θ}`.
pub fn in_c_p_theta(p: PNorm, theta: f64, x: f64, y: f64) -> bool {
    if theta <= 0.0 {
        return y == 0.0 || (x.is_infinite() && y <= 1.0);
    }
    let cap = y_p(p, x);
    if theta >= FRAC_PI_2 {
        return y <= cap;
    }
    let ray = if x.is_infinite() { f64::INFINITY } else { x * theta.tan() };
    y <= ray.min(cap)
}

/// Constraint function `f(θ) = (sin θ - cos θ) / ||(sin θ, cos θ)||_p`.
pub fn constraint_f(p: PNorm, theta: f64) -> f64 {
    let (s, c) = theta.sin_cos();
    let (s, c) = (s.max(0.0), c.max(0.0));
    (s - c) / lp_norm(p, s, c)
}

/// Derivative of [`constraint_f`] in θ.
pub fn constraint_f_prime(p: PNorm, theta: f64) -> Result<f64> {
    let p = p.require_finite("the constraint derivative")?;
    let (s, c) = theta.sin_cos();
    let (s, c) = (s.max(0.0), c.max(0.0));
    let n = lp_norm(PNorm::Finite(p), s, c);
    Ok((s.powf(p - 1.0) + c.powf(p - 1.0)) / n.powf(1.0 + p))
}

/// Pointwise weight `q(θ)`.
pub fn weight_q(kind: WeightKind, theta: f64) -> f64 {
    match kind {
        WeightKind::Constant => 1.0,
        WeightKind::InvSqrtPi4 => 1.0 / (theta - FRAC_PI_4).abs().sqrt(),
    }
}

/// `∫_a^b q(θ) dθ` in closed form, for `0 <= a <= b <= π/2`.
pub fn weight_q_integral(kind: WeightKind, a: f64, b: f64) -> f64 {
    match kind {
        WeightKind::Constant => b - a,
        WeightKind::InvSqrtPi4 => {
            // Antiderivative: sign(θ - π/4) * 2 sqrt|θ - π/4|.
            let anti = |t: f64| {
                let d = t - FRAC_PI_4;
                d.signum() * 2.0 * d.abs().sqrt()
            };
            anti(b) - anti(a)
        }
    }
}
