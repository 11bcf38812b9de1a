//! Parametric extremal-dependence families and their angular measures.
//!
//! Both families are exchangeable and indexed by a single scalar `r`:
//! - logistic: `ℓ(x, y) = (x^{1/r} + y^{1/r})^r`, `r ∈ (0, 1]`;
//! - Hüsler–Reiss: `ℓ(x, y) = x Φ(r + ln(x/y)/(2r)) + y Φ(r + ln(y/x)/(2r))`, `r > 0`.
//!
//! Angular CDFs are integrated in the variable `t = ln tan θ`, where the
//! density becomes `||(1, e^t)||_p λ(1, e^t)`. This removes the endpoint
//! singularities of the θ-parametrization; tails beyond a finite `t` window
//! are handled in closed form.

use std::f64::consts::{FRAC_PI_2, LN_2};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{lp_norm, softplus, PNorm};
use crate::quad::{self, Tolerance};
use crate::special::{norm_cdf, norm_inv_cdf, norm_ln_pdf, norm_pdf};

/// Number of Chebyshev nodes in the cached CDF table.
pub const CACHE_NODES: usize = 4097;

/// Lower clamp of parameter estimates (near full dependence).
pub const R_MIN_ESTIMATE: f64 = 1e-3;
/// Upper clamp of logistic estimates (near independence).
pub const LOGISTIC_R_MAX_ESTIMATE: f64 = 1.0 - 1e-9;
/// Upper clamp of Hüsler–Reiss estimates (near independence).
pub const HR_R_MAX_ESTIMATE: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Logistic,
    HuslerReiss,
}

impl Family {
    /// Parameter-grid pitch used for critical-value tables.
    pub fn table_pitch(&self) -> f64 {
        match self {
            Family::Logistic => 0.05,
            Family::HuslerReiss => 0.1,
        }
    }

    /// Range of parameter values for which tables are built by default.
    pub fn default_table_range(&self) -> (f64, f64) {
        match self {
            Family::Logistic => (0.05, 0.95),
            Family::HuslerReiss => (0.1, 4.0),
        }
    }

    pub fn contains(&self, r: f64) -> bool {
        match self {
            Family::Logistic => r > 0.0 && r <= 1.0,
            Family::HuslerReiss => r > 0.0 && r.is_finite(),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Logistic => "logistic",
            Family::HuslerReiss => "hr",
        })
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "logistic" | "gumbel" => Ok(Family::Logistic),
            "hr" | "husler-reiss" | "husler_reiss" | "huslerreiss" => Ok(Family::HuslerReiss),
            other => Err(Error::InvalidParameter(format!("unknown model family '{other}'"))),
        }
    }
}

/// A family together with a valid parameter value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub family: Family,
    pub r: f64,
}

impl ModelParams {
    pub fn new(family: Family, r: f64) -> Result<Self> {
        if !family.contains(r) {
            return Err(Error::InvalidParameter(format!("r = {r} is outside the {family} parameter domain")));
        }
        Ok(ModelParams { family, r })
    }

    /// Stable tail dependence function.
    pub fn stdf(&self, x: f64, y: f64) -> f64 {
        let r = self.r;
        match self.family {
            Family::Logistic => {
                let m = x.max(y);
                if m == 0.0 {
                    return 0.0;
                }
                if r == 1.0 {
                    return x + y;
                }
                m * ((x / m).powf(1.0 / r) + (y / m).powf(1.0 / r)).powf(r)
            }
            Family::HuslerReiss => {
                if x == 0.0 || y == 0.0 {
                    return x + y;
                }
                let z = (x / y).ln() / (2.0 * r);
                x * norm_cdf(r + z) + y * norm_cdf(r - z)
            }
        }
    }

    /// `ln λ(x, y)` for `x, y > 0`; `-inf` when the density vanishes.
    fn ln_exponent_density(&self, x: f64, y: f64) -> f64 {
        let r = self.r;
        match self.family {
            Family::Logistic => {
                if r == 1.0 {
                    return f64::NEG_INFINITY;
                }
                let (lx, ly) = (x.ln(), y.ln());
                let a = 1.0 / r - 1.0;
                let (u, v) = (lx / r, ly / r);
                let m = u.max(v);
                let lse = m + softplus(u.min(v) - m);
                a.ln() + a * (lx + ly) - (2.0 - r) * lse
            }
            Family::HuslerReiss => {
                let z = r + (x / y).ln() / (2.0 * r);
                norm_ln_pdf(z) - (2.0 * r * y).ln()
            }
        }
    }

    /// Density `λ` of the exponent measure on the uniform scale.
    pub fn exponent_density(&self, x: f64, y: f64) -> Result<f64> {
        if !(x > 0.0 && y > 0.0) {
            return Err(Error::Domain(format!("exponent density needs x, y > 0, got ({x}, {y})")));
        }
        Ok(self.ln_exponent_density(x, y).exp())
    }

    /// Partial derivatives `(∂ℓ/∂x, ∂ℓ/∂y)`.
    pub fn stdf_partials(&self, x: f64, y: f64) -> Result<(f64, f64)> {
        if !(x >= 0.0 && y >= 0.0) || (x == 0.0 && y == 0.0) {
            return Err(Error::Domain(format!("stdf partials need a nonzero point of the quadrant, got ({x}, {y})")));
        }
        let r = self.r;
        match self.family {
            Family::Logistic => {
                if r == 1.0 {
                    return Ok((1.0, 1.0));
                }
                let l = self.stdf(x, y);
                let e = 1.0 / r - 1.0;
                Ok(((x / l).powf(e), (y / l).powf(e)))
            }
            Family::HuslerReiss => {
                if x == 0.0 {
                    return Ok((0.0, 1.0));
                }
                if y == 0.0 {
                    return Ok((1.0, 0.0));
                }
                // The density terms cancel because x φ(A) = y φ(B).
                let z = (x / y).ln() / (2.0 * r);
                Ok((norm_cdf(r + z), norm_cdf(r - z)))
            }
        }
    }

    /// `Λ([0,a] × [0,b]) = a + b - ℓ(a, b)`, clamped at zero.
    pub fn rect_mass(&self, a: f64, b: f64) -> f64 {
        let m = a + b - self.stdf(a, b);
        debug_assert!(m >= -1e-12 * (a + b).max(1.0), "negative rectangle mass {m}");
        m.max(0.0)
    }

    /// Angular density `φ_p(θ) = ||(cos θ, sin θ)||_p λ(cos θ, sin θ) / (cos θ sin θ)`.
    pub fn angular_density(&self, p: PNorm, theta: f64) -> Result<f64> {
        if !(theta > 0.0 && theta < FRAC_PI_2) {
            return Err(Error::Domain(format!("angular density needs θ in (0, π/2), got {theta}")));
        }
        let (s, c) = theta.sin_cos();
        Ok(lp_norm(p, c, s) * self.exponent_density(c, s)? / (c * s))
    }

    /// Angular density with respect to `t = ln tan θ`.
    pub fn density_in_log_tan(&self, p: PNorm, t: f64) -> f64 {
        let r = self.r;
        let ln_norm = p.ln_norm_one_exp(t);
        match self.family {
            Family::Logistic => {
                if r == 1.0 {
                    return 0.0;
                }
                let a = 1.0 / r - 1.0;
                (ln_norm + a.ln() + a * t - (2.0 - r) * softplus(t / r)).exp()
            }
            Family::HuslerReiss => (ln_norm + norm_ln_pdf(r + t / (2.0 * r))).exp() / (2.0 * r),
        }
    }

    /// Window `[-T, T]` in `t` outside of which tails are closed-form.
    fn log_tan_window(&self) -> f64 {
        let r = self.r;
        match self.family {
            Family::Logistic => {
                if r >= 1.0 {
                    35.0
                } else {
                    (41.0 * r / (1.0 - r)).min(35.0)
                }
            }
            Family::HuslerReiss => 2.0 * r * r + 40.0 * r,
        }
    }

    /// Mass of `t' < t` for `t` below the window.
    fn left_tail(&self, t: f64) -> f64 {
        if t == f64::NEG_INFINITY {
            return 0.0;
        }
        match self.family {
            Family::Logistic => ((1.0 / self.r - 1.0) * t).exp(),
            Family::HuslerReiss => 0.0,
        }
    }

    /// Points where the density in `t` changes character.
    fn log_tan_breaks(&self) -> Vec<f64> {
        let r = self.r;
        let w = self.log_tan_window();
        let mut b = vec![0.0];
        match self.family {
            Family::Logistic => {
                for k in [1.0, 3.0, 10.0, 30.0] {
                    b.push(k * r);
                    b.push(-k * r);
                }
            }
            Family::HuslerReiss => {
                let c = 2.0 * r * r;
                for k in [0.0, 1.0, 3.0, 6.0, 12.0] {
                    for s in [c - 2.0 * r * k, c + 2.0 * r * k] {
                        b.push(s);
                        b.push(-s);
                    }
                }
            }
        }
        b.retain(|x| x.abs() < w);
        b.sort_by(f64::total_cmp);
        b.dedup();
        b
    }

    /// `Φ_p(θ)` by direct adaptive quadrature (tolerance 1e-10 absolute).
    pub fn angular_cdf(&self, p: PNorm, theta: f64) -> Result<f64> {
        if !(0.0..=FRAC_PI_2).contains(&theta) {
            return Err(Error::Domain(format!("angular CDF needs θ in [0, π/2], got {theta}")));
        }
        if theta == 0.0 {
            return Ok(0.0);
        }
        let w = self.log_tan_window();
        let t = if theta == FRAC_PI_2 { f64::INFINITY } else { theta.tan().ln() };
        if t <= -w {
            return Ok(self.left_tail(t));
        }
        let upper = t.min(w);
        let tol = Tolerance { abs: 1e-11, rel: 1e-13, max_panels: 20_000 };
        let body = quad::integrate(|s| self.density_in_log_tan(p, s), -w, upper, &self.log_tan_breaks(), tol)?;
        let mut v = self.left_tail(-w) + body.value;
        if t > w {
            // Right tail mirrors the left one by exchangeability.
            v += self.left_tail(-w) - self.left_tail(-t);
        }
        Ok(v)
    }

    /// Total angular mass `Φ_p(π/2)`.
    pub fn total_mass(&self, p: PNorm) -> Result<f64> {
        self.angular_cdf(p, FRAC_PI_2)
    }
}

/// Parameter estimate from the extremal coefficient, with a clamp flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamEstimate {
    pub params: ModelParams,
    pub clamped: bool,
}

/// Invert the extremal coefficient `ℓ(1,1)` into a parameter estimate.
pub fn estimate_param(family: Family, ell_11: f64) -> Result<ParamEstimate> {
    if !ell_11.is_finite() {
        return Err(Error::Domain(format!("extremal coefficient must be finite, got {ell_11}")));
    }
    let (raw, hi) = match family {
        Family::Logistic => (ell_11.max(f64::MIN_POSITIVE).log2(), LOGISTIC_R_MAX_ESTIMATE),
        Family::HuslerReiss => (norm_inv_cdf((ell_11 / 2.0).clamp(0.0, 1.0)), HR_R_MAX_ESTIMATE),
    };
    let outside = !(ell_11 > 1.0 && ell_11 < 2.0);
    let r = if ell_11 <= 1.0 {
        R_MIN_ESTIMATE
    } else if ell_11 >= 2.0 {
        hi
    } else {
        raw.clamp(R_MIN_ESTIMATE, hi)
    };
    let clamped = outside || r != raw;
    let r = if clamped { r } else { polish_estimate(family, r, ell_11) };
    Ok(ParamEstimate { params: ModelParams::new(family, r)?, clamped })
}

/// Among the few floats next to `r`, prefer one whose extremal coefficient
/// reproduces `ell_11` exactly, taking the shortest decimal form on ties.
fn polish_estimate(family: Family, r: f64, ell_11: f64) -> f64 {
    let mut best: Option<(usize, f64)> = None;
    for d in -2i64..=2 {
        let c = f64::from_bits((r.to_bits() as i64 + d) as u64);
        if !family.contains(c) || (ModelParams { family, r: c }).stdf(1.0, 1.0) != ell_11 {
            continue;
        }
        let len = c.to_string().len();
        if best.is_none_or(|(l, _)| len < l) {
            best = Some((len, c));
        }
    }
    best.map_or(r, |(_, c)| c)
}

/// Extremal coefficient `ℓ(1,1)` as a function of the parameter.
pub fn extremal_coefficient(params: &ModelParams) -> f64 {
    params.stdf(1.0, 1.0)
}

/// Constants of the first-order expansion of the parameter estimator:
/// `r̂ - r ≈ g (ℓ̂ - ℓ)(σ)` with `σ` a point mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpansionConstants {
    pub g: f64,
    pub point: (f64, f64),
}

pub fn expansion_constants(params: &ModelParams) -> ExpansionConstants {
    let g = match params.family {
        Family::Logistic => 1.0 / (2f64.powf(params.r) * LN_2),
        Family::HuslerReiss => 1.0 / (2.0 * norm_pdf(params.r)),
    };
    ExpansionConstants { g, point: (1.0, 1.0) }
}

/// A model with its angular CDF tabulated for fast repeated evaluation.
///
/// The CDF is stored at Chebyshev nodes in `t = ln tan θ` together with the
/// density; evaluation uses cubic Hermite interpolation, clamped between the
/// neighbouring node values so the result is monotone.
#[derive(Debug, Clone)]
pub struct AngularModel {
    params: ModelParams,
    p: PNorm,
    window: f64,
    nodes: Vec<f64>,
    cum: Vec<f64>,
    dens: Vec<f64>,
    total: f64,
}

impl AngularModel {
    pub fn new(params: ModelParams, p: PNorm) -> Result<Self> {
        let w = params.log_tan_window();
        let n = CACHE_NODES;
        let nodes: Vec<f64> = (0..n)
            .map(|i| {
                if i == 0 {
                    -w
                } else if 2 * i == n - 1 {
                    0.0
                } else if i == n - 1 {
                    w
                } else {
                    -w * (std::f64::consts::PI * i as f64 / (n - 1) as f64).cos()
                }
            })
            .collect();
        let dens: Vec<f64> = nodes.iter().map(|&t| params.density_in_log_tan(p, t)).collect();
        let mut cum = Vec::with_capacity(n);
        let tail = params.left_tail(-w);
        cum.push(tail);
        let tol = Tolerance { abs: 1e-14, rel: 1e-12, max_panels: 200 };
        for k in 1..n {
            let seg = quad::integrate(|s| params.density_in_log_tan(p, s), nodes[k - 1], nodes[k], &[], tol)?;
            cum.push(cum[k - 1] + seg.value);
        }
        let total = cum[n - 1] + tail;
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::ModelEvaluation(format!("total angular mass {total} for {params:?}")));
        }
        Ok(AngularModel { params, p, window: w, nodes, cum, dens, total })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn p(&self) -> PNorm {
        self.p
    }

    /// Cached total mass `Φ_p(π/2)`.
    pub fn total_mass(&self) -> f64 {
        self.total
    }

    /// Tabulated `Φ_p(θ)`.
    pub fn angular_cdf(&self, theta: f64) -> f64 {
        if theta <= 0.0 {
            return 0.0;
        }
        if theta >= FRAC_PI_2 {
            return self.total;
        }
        let t = theta.tan().ln();
        self.cdf_in_log_tan(t)
    }

    /// Tabulated `Φ_p` as a function of `t = ln tan θ`.
    pub fn cdf_in_log_tan(&self, t: f64) -> f64 {
        let w = self.window;
        if t <= -w {
            return self.params.left_tail(t);
        }
        if t >= w {
            return self.total - self.params.left_tail(-t);
        }
        let k = self.nodes.partition_point(|&x| x <= t).clamp(1, self.nodes.len() - 1);
        let (t0, t1) = (self.nodes[k - 1], self.nodes[k]);
        let (v0, v1) = (self.cum[k - 1], self.cum[k]);
        let h = t1 - t0;
        let s = (t - t0) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let v = (2.0 * s3 - 3.0 * s2 + 1.0) * v0
            + (s3 - 2.0 * s2 + s) * h * self.dens[k - 1]
            + (-2.0 * s3 + 3.0 * s2) * v1
            + (s3 - s2) * h * self.dens[k];
        v.clamp(v0, v1)
    }

    /// Normalized CDF `Q_p(θ) = Φ_p(θ) / Φ_p(π/2)`.
    pub fn normalized_cdf(&self, theta: f64) -> f64 {
        if theta >= FRAC_PI_2 {
            return 1.0;
        }
        (self.angular_cdf(theta) / self.total).clamp(0.0, 1.0)
    }

    /// Angular density `φ_p(θ)`; zero where the density vanishes.
    pub fn angular_density(&self, theta: f64) -> Result<f64> {
        self.params.angular_density(self.p, theta)
    }

    /// Density of `Q_p` with respect to θ.
    pub fn normalized_density(&self, theta: f64) -> Result<f64> {
        Ok(self.angular_density(theta)? / self.total)
    }
}

/// Finite-difference gradient of `Q_{p,r}` in `r`.
#[derive(Debug, Clone)]
pub struct CdfGradient {
    lower: AngularModel,
    upper: AngularModel,
    span: f64,
    /// True when the stencil had to be shifted to stay inside the domain.
    pub clamped: bool,
}

impl CdfGradient {
    pub fn new(params: ModelParams, p: PNorm) -> Result<Self> {
        let r = params.r;
        let eps = 1e-4 * r.abs().max(1.0);
        let (lo_bound, hi_bound) = match params.family {
            Family::Logistic => (0.0, 1.0),
            Family::HuslerReiss => (0.0, f64::INFINITY),
        };
        let clamped = r - 2.0 * eps <= lo_bound || r + 2.0 * eps > hi_bound;
        let r_hi = (r + eps).min(hi_bound);
        let r_lo = if r - eps > lo_bound { r - eps } else { 0.5 * (r + lo_bound) };
        let lower = AngularModel::new(ModelParams::new(params.family, r_lo)?, p)?;
        let upper = AngularModel::new(ModelParams::new(params.family, r_hi)?, p)?;
        Ok(CdfGradient { lower, upper, span: r_hi - r_lo, clamped })
    }

    /// `∂Q_{p,r}(θ)/∂r`.
    pub fn eval(&self, theta: f64) -> f64 {
        (self.upper.normalized_cdf(theta) - self.lower.normalized_cdf(theta)) / self.span
    }
}

/// `∂Q_{p,r}(θ)/∂r` at a single angle, with the clamp flag.
pub fn grad_normalized_cdf(params: ModelParams, p: PNorm, theta: f64) -> Result<(f64, bool)> {
    let g = CdfGradient::new(params, p)?;
    Ok((g.eval(theta), g.clamped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_4, FRAC_PI_8, SQRT_2};

    const P1: PNorm = PNorm::Finite(1.0);
    const P2: PNorm = PNorm::Finite(2.0);

    fn logistic(r: f64) -> ModelParams {
        ModelParams::new(Family::Logistic, r).unwrap()
    }
    fn hr(r: f64) -> ModelParams {
        ModelParams::new(Family::HuslerReiss, r).unwrap()
    }

    #[test]
    fn domains() {
        assert!(ModelParams::new(Family::Logistic, 1.2).is_err());
        assert!(ModelParams::new(Family::Logistic, 0.0).is_err());
        assert!(ModelParams::new(Family::HuslerReiss, -1.0).is_err());
        assert!(ModelParams::new(Family::HuslerReiss, 5.0).is_ok());
    }

    #[test]
    fn stdf_examples() {
        assert!((logistic(0.5).stdf(1.0, 1.0) - SQRT_2).abs() < 1e-15);
        assert_eq!(logistic(1.0).stdf(0.3, 0.9), 0.3 + 0.9);
        assert!((hr(1.0).stdf(1.0, 1.0) - 1.682_689_492_137_086).abs() < 1e-14);
        for m in [logistic(0.3), hr(0.7)] {
            assert_eq!(m.stdf(0.4, 0.0), 0.4);
            assert_eq!(m.stdf(0.0, 0.4), 0.4);
            let l = m.stdf(0.4, 0.9);
            assert!((0.9..=1.3).contains(&l));
        }
    }

    #[test]
    fn exponent_density_examples() {
        let l = logistic(0.5);
        assert!((l.exponent_density(1.0, 1.0).unwrap() - 2f64.powf(-1.5)).abs() < 1e-15);
        let (a, b) = (l.exponent_density(0.6, 1.7).unwrap(), l.exponent_density(1.2, 3.4).unwrap());
        assert!((b - 0.5 * a).abs() < 1e-15);
        assert!((hr(1.0).exponent_density(1.0, 1.0).unwrap() - 0.5 * norm_pdf(1.0)).abs() < 1e-15);
        assert!(l.exponent_density(0.0, 1.0).is_err());
    }

    /// The two-term Hüsler–Reiss density display collapses to one term.
    #[test]
    fn hr_density_matches_two_term_form() {
        for &r in &[0.3, 1.0, 2.5] {
            let m = hr(r);
            for &(x, y) in &[(0.2f64, 1.3f64), (1.0, 1.0), (4.0, 0.7)] {
                let lxy: f64 = (x / y).ln();
                let two_term = norm_pdf(r + lxy / (2.0 * r)) * (0.5 - lxy / (4.0 * r * r)) / (2.0 * r * y)
                    + norm_pdf(r - lxy / (2.0 * r)) * (0.5 + lxy / (4.0 * r * r)) / (2.0 * r * x);
                let got = m.exponent_density(x, y).unwrap();
                assert!((got - two_term).abs() < 1e-14 * two_term.max(1.0), "{got} {two_term}");
            }
        }
    }

    /// λ is the mixed second derivative of -ℓ.
    #[test]
    fn exponent_density_is_mixed_partial() {
        let h = 1e-4;
        for m in [logistic(0.4), hr(1.3)] {
            for &(x, y) in &[(0.5, 0.8), (1.0, 1.0), (2.0, 0.3)] {
                let fd = -(m.stdf(x + h, y + h) - m.stdf(x + h, y - h) - m.stdf(x - h, y + h) + m.stdf(x - h, y - h))
                    / (4.0 * h * h);
                let got = m.exponent_density(x, y).unwrap();
                assert!((fd - got).abs() < 1e-6, "{fd} {got}");
            }
        }
    }

    #[test]
    fn angular_density_examples() {
        let l = logistic(0.5);
        assert!((l.angular_density(P2, FRAC_PI_4).unwrap() - 1.0).abs() < 1e-14);
        for p in [P1, P2] {
            for &theta in &[0.1f64, 0.5, FRAC_PI_4, 1.2, 1.5] {
                let (s, c): (f64, f64) = theta.sin_cos();
                let r = 0.5;
                let closed = (1.0 / r - 1.0) * lp_norm(p, s, c) * (s * c).powf(1.0 / r - 2.0)
                    / (s.powf(1.0 / r) + c.powf(1.0 / r)).powf(2.0 - r);
                let got = l.angular_density(p, theta).unwrap();
                assert!((got - closed).abs() < 1e-10, "{got} {closed}");
            }
        }
        assert!(l.angular_density(P2, 0.0).is_err());
    }

    #[test]
    fn density_in_log_tan_matches_theta_form() {
        for m in [logistic(0.3), hr(1.5)] {
            for p in [P1, P2, PNorm::Infinity] {
                for &theta in &[0.2f64, 0.7, 1.3] {
                    let t = theta.tan().ln();
                    let (s, c) = theta.sin_cos();
                    let via_t = m.density_in_log_tan(p, t) / (s * c);
                    let direct = m.angular_density(p, theta).unwrap();
                    assert!((via_t - direct).abs() < 1e-12 * direct.max(1.0));
                }
            }
        }
    }

    fn marginal_moments(m: &AngularModel) -> (f64, f64) {
        let p = m.p();
        let params = *m.params();
        let w = params.log_tan_window();
        let tol = Tolerance { abs: 1e-13, rel: 1e-13, max_panels: 20_000 };
        // In t, sin θ / ||(sin, cos)||_p = e^t / ||(1, e^t)||_p.
        let f1 = |t: f64| (t - p.ln_norm_one_exp(t)).exp() * params.density_in_log_tan(p, t);
        let f2 = |t: f64| (-p.ln_norm_one_exp(t)).exp() * params.density_in_log_tan(p, t);
        let breaks = params.log_tan_breaks();
        let mut a = quad::integrate(f1, -w, w, &breaks, tol).unwrap().value;
        let mut b = quad::integrate(f2, -w, w, &breaks, tol).unwrap().value;
        // Tail mass sits at θ = 0 (weight 0 for sin, 1 for cos) and θ = π/2.
        let tail = params.left_tail(-w);
        a += tail;
        b += tail;
        (a, b)
    }

    #[test]
    fn marginal_constraints() {
        for params in [logistic(0.3), logistic(0.5), logistic(0.8), hr(0.5), hr(1.0), hr(2.0)] {
            for p in [P1, P2] {
                let m = AngularModel::new(params, p).unwrap();
                let (a, b) = marginal_moments(&m);
                assert!((a - 1.0).abs() < 1e-5 && (b - 1.0).abs() < 1e-5, "{params:?} {p}: {a} {b}");
                let total = m.total_mass();
                assert!((1.0 - 1e-9..=2.0 + 1e-9).contains(&total), "{total}");
            }
        }
    }

    #[test]
    fn cdf_examples() {
        let m = AngularModel::new(logistic(0.5), P2).unwrap();
        let total = m.total_mass();
        assert!((m.angular_cdf(FRAC_PI_4) - total / 2.0).abs() < 1e-6);
        assert_eq!(m.angular_cdf(0.0), 0.0);
        assert_eq!(m.normalized_cdf(FRAC_PI_2), 1.0);
        assert!((m.normalized_cdf(FRAC_PI_4) - 0.5).abs() < 1e-9);
        let h = AngularModel::new(hr(1.0), P2).unwrap();
        assert!((h.normalized_cdf(FRAC_PI_4) - 0.5).abs() < 1e-9);
        assert!((logistic(0.5).angular_cdf(P2, 0.0).unwrap()).abs() == 0.0);
    }

    #[test]
    fn cache_matches_direct_quadrature() {
        for params in [logistic(0.05), logistic(0.5), logistic(0.95), hr(0.2), hr(1.0), hr(4.0)] {
            for p in [P1, P2, PNorm::Infinity] {
                let m = AngularModel::new(params, p).unwrap();
                let direct_total = params.total_mass(p).unwrap();
                assert!((m.total_mass() - direct_total).abs() < 1e-9, "{params:?}");
                for i in 1..40 {
                    let theta = FRAC_PI_2 * i as f64 / 40.0 + 0.003;
                    let theta = theta.min(FRAC_PI_2);
                    let d = params.angular_cdf(p, theta).unwrap();
                    let c = m.angular_cdf(theta);
                    assert!((d - c).abs() < 1e-8, "{params:?} p={p} θ={theta}: {d} vs {c}");
                }
            }
        }
    }

    #[test]
    fn independence_endpoint_puts_mass_on_axes() {
        let m = AngularModel::new(logistic(1.0), P2).unwrap();
        assert!((m.total_mass() - 2.0).abs() < 1e-15);
        assert!((m.normalized_cdf(0.3) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn partials_examples() {
        let (a, b) = logistic(0.5).stdf_partials(1.0, 1.0).unwrap();
        assert!((a - 0.5f64.sqrt()).abs() < 1e-15 && (b - a).abs() < 1e-15);
        let (a, b) = hr(1.0).stdf_partials(1.0, 1.0).unwrap();
        assert!((a - norm_cdf(1.0)).abs() < 1e-15 && (b - a).abs() < 1e-15);
        assert_eq!(logistic(1.0).stdf_partials(0.2, 0.7).unwrap(), (1.0, 1.0));
        assert!(hr(1.0).stdf_partials(0.0, 0.0).is_err());
        let h = 1e-6;
        for m in [logistic(0.35), hr(0.8)] {
            for &(x, y) in &[(0.4, 1.1), (2.0, 0.5)] {
                let (dx, dy) = m.stdf_partials(x, y).unwrap();
                let fx = (m.stdf(x + h, y) - m.stdf(x - h, y)) / (2.0 * h);
                let fy = (m.stdf(x, y + h) - m.stdf(x, y - h)) / (2.0 * h);
                assert!((dx - fx).abs() < 1e-6 && (dy - fy).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn estimator_examples() {
        let e = estimate_param(Family::Logistic, logistic(0.5).stdf(1.0, 1.0)).unwrap();
        assert!(e.params.r == 0.5 && !e.clamped);
        let e = estimate_param(Family::Logistic, SQRT_2).unwrap();
        assert!((e.params.r - 0.5).abs() < 1e-15);
        let e = estimate_param(Family::HuslerReiss, 2.0 * norm_cdf(1.0)).unwrap();
        assert!((e.params.r - 1.0).abs() < 1e-12);
        let e = estimate_param(Family::Logistic, 1.5).unwrap();
        assert!((e.params.r - 0.584_962_500_721_156_2).abs() < 1e-15);
        let e = estimate_param(Family::Logistic, 0.9).unwrap();
        assert!(e.clamped && e.params.r == R_MIN_ESTIMATE);
        let e = estimate_param(Family::HuslerReiss, 2.3).unwrap();
        assert!(e.clamped && e.params.r == HR_R_MAX_ESTIMATE);
    }

    #[test]
    fn estimator_inverts_extremal_coefficient() {
        for i in 1..20 {
            let r = 0.05 * i as f64;
            let l = logistic(r);
            let e = estimate_param(Family::Logistic, extremal_coefficient(&l)).unwrap();
            assert!((e.params.r - r).abs() < 1e-12);
            let h = hr(0.2 * i as f64);
            let e = estimate_param(Family::HuslerReiss, extremal_coefficient(&h)).unwrap();
            assert!((e.params.r - h.r).abs() < 1e-12 * h.r.max(1.0) * 10.0, "{} {}", e.params.r, h.r);
        }
    }

    #[test]
    fn expansion_constant_examples() {
        assert!((expansion_constants(&logistic(0.5)).g - 1.020_139_446_596_789_5).abs() < 1e-14);
        assert!((expansion_constants(&logistic(1.0)).g - 0.721_347_520_444_481_7).abs() < 1e-15);
        assert!((expansion_constants(&hr(1.0)).g - 2.066_365_677_061_246_4).abs() < 1e-14);
    }

    /// The expansion constant is the derivative of the inverse map.
    #[test]
    fn expansion_constant_is_inverse_derivative() {
        for params in [logistic(0.4), hr(1.2)] {
            let h = 1e-6;
            let chi = extremal_coefficient(&params);
            let up = estimate_param(params.family, chi + h).unwrap().params.r;
            let dn = estimate_param(params.family, chi - h).unwrap().params.r;
            let fd = (up - dn) / (2.0 * h);
            assert!((fd - expansion_constants(&params).g).abs() < 1e-6);
        }
    }

    #[test]
    fn rect_mass_examples() {
        assert_eq!(logistic(1.0).rect_mass(0.3, 2.0), 0.0);
        assert_eq!(hr(1.0).rect_mass(0.7, 0.0), 0.0);
        assert!((logistic(0.5).rect_mass(1.0, 1.0) - (2.0 - SQRT_2)).abs() < 1e-15);
    }

    #[test]
    fn gradient_examples() {
        let g = CdfGradient::new(logistic(0.5), P2).unwrap();
        assert_eq!(g.eval(0.0), 0.0);
        assert_eq!(g.eval(FRAC_PI_2), 0.0);
        assert!(g.eval(FRAC_PI_4).abs() < 1e-6);
        assert!(!g.clamped);
        let eps = 1e-4;
        let q = |r: f64| AngularModel::new(logistic(r), P2).unwrap().normalized_cdf(FRAC_PI_8);
        let five = (-q(0.5 + 2.0 * eps) + 8.0 * q(0.5 + eps) - 8.0 * q(0.5 - eps) + q(0.5 - 2.0 * eps)) / (12.0 * eps);
        assert!((g.eval(FRAC_PI_8) - five).abs() < 1e-4, "{} {}", g.eval(FRAC_PI_8), five);
        assert!(CdfGradient::new(logistic(1.0), P2).unwrap().clamped);
    }

    /// d/dθ of ∂Q/∂r equals ∂/∂r of the normalized density.
    #[test]
    fn gradient_commutes_with_theta_derivative() {
        let params = hr(1.0);
        let g = CdfGradient::new(params, P2).unwrap();
        let eps = 1e-4;
        let lo = AngularModel::new(hr(1.0 - eps), P2).unwrap();
        let hi = AngularModel::new(hr(1.0 + eps), P2).unwrap();
        for i in 1..10 {
            let theta = FRAC_PI_2 * i as f64 / 10.0;
            let d = 1e-3;
            let lhs = (g.eval(theta + d) - g.eval(theta - d)) / (2.0 * d);
            let rhs = (hi.normalized_density(theta).unwrap() - lo.normalized_density(theta).unwrap()) / (2.0 * eps);
            assert!((lhs - rhs).abs() < 1e-3, "{lhs} {rhs}");
        }
    }

    #[test]
    fn exchangeability() {
        for params in [logistic(0.3), hr(0.6), hr(2.0)] {
            assert_eq!(params.stdf(0.3, 1.7), params.stdf(1.7, 0.3));
            let m = AngularModel::new(params, P2).unwrap();
            for &theta in &[0.05, 0.4, 0.9, 1.3] {
                let s = m.normalized_cdf(theta) + m.normalized_cdf(FRAC_PI_2 - theta);
                assert!((s - 1.0).abs() < 1e-6);
            }
        }
    }
}
