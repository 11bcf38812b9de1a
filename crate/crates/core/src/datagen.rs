//! Copula samplers for simulation studies: Gumbel and Hüsler–Reiss
//! extreme-value copulas, the comonotone copula, a two-factor max-linear
//! copula and mixtures of these.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::Open01;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::empirical::BivariateSample;
use crate::error::{Error, Result};
use crate::models::{Family, ModelParams};
use crate::rng::stream_rng;

/// A bivariate copula.
#[derive(Debug, Clone, PartialEq)]
pub enum CopulaSpec {
    /// Gumbel copula with parameter `θ >= 1`; logistic stdf with `r = 1/θ`.
    Gumbel(f64),
    /// Hüsler–Reiss copula with parameter `r > 0`.
    HuslerReiss(f64),
    /// `C(u, v) = min(u, v)`.
    Comonotone,
    /// Copula of `(max(a11 Z1, a12 Z2), max(a21 Z1, a22 Z2))` with
    /// independent unit Fréchet factors; each row sums to one.
    MaxLinear([f64; 4]),
    /// `(1 - λ) C_base + λ C_alt`.
    Mixture { lambda: f64, base: Box<CopulaSpec>, alt: Box<CopulaSpec> },
}

/// Coefficients of the standard asymmetric max-linear alternative.
pub const STANDARD_MAX_LINEAR: [f64; 4] = [0.7, 0.3, 0.1, 0.9];

const BISECTION_TOL: f64 = 1e-12;

impl CopulaSpec {
    pub fn gumbel(theta: f64) -> Result<Self> {
        let s = CopulaSpec::Gumbel(theta);
        s.validate()?;
        Ok(s)
    }

    pub fn husler_reiss(r: f64) -> Result<Self> {
        let s = CopulaSpec::HuslerReiss(r);
        s.validate()?;
        Ok(s)
    }

    pub fn max_linear(a: [f64; 4]) -> Result<Self> {
        let s = CopulaSpec::MaxLinear(a);
        s.validate()?;
        Ok(s)
    }

    pub fn mixture(lambda: f64, base: CopulaSpec, alt: CopulaSpec) -> Result<Self> {
        let s = CopulaSpec::Mixture { lambda, base: Box::new(base), alt: Box::new(alt) };
        s.validate()?;
        Ok(s)
    }

    /// Gumbel(2) contaminated by the comonotone copula with weight `λ`.
    pub fn scenario_comonotone(lambda: f64) -> Result<Self> {
        Self::mixture(lambda, CopulaSpec::Gumbel(2.0), CopulaSpec::Comonotone)
    }

    /// Gumbel(2) contaminated by the standard max-linear copula with weight `λ`.
    pub fn scenario_max_linear(lambda: f64) -> Result<Self> {
        Self::mixture(lambda, CopulaSpec::Gumbel(2.0), CopulaSpec::MaxLinear(STANDARD_MAX_LINEAR))
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            CopulaSpec::Gumbel(t) => {
                if !(t.is_finite() && *t >= 1.0) {
                    return Err(Error::InvalidParameter(format!("Gumbel parameter must be >= 1, got {t}")));
                }
            }
            CopulaSpec::HuslerReiss(r) => {
                if !(r.is_finite() && *r > 0.0) {
                    return Err(Error::InvalidParameter(format!("Hüsler–Reiss parameter must be > 0, got {r}")));
                }
            }
            CopulaSpec::Comonotone => {}
            CopulaSpec::MaxLinear(a) => {
                if a.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(Error::InvalidParameter("max-linear coefficients must be nonnegative".into()));
                }
                if (a[0] + a[1] - 1.0).abs() > 1e-12 || (a[2] + a[3] - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidParameter("max-linear rows must sum to 1".into()));
                }
            }
            CopulaSpec::Mixture { lambda, base, alt } => {
                if !(0.0..=1.0).contains(lambda) {
                    return Err(Error::InvalidParameter(format!("mixture weight must be in [0, 1], got {lambda}")));
                }
                base.validate()?;
                alt.validate()?;
            }
        }
        Ok(())
    }

    /// Extreme-value model behind a Gumbel or Hüsler–Reiss copula.
    fn ev_params(&self) -> Option<ModelParams> {
        match self {
            CopulaSpec::Gumbel(t) => Some(ModelParams { family: Family::Logistic, r: 1.0 / t }),
            CopulaSpec::HuslerReiss(r) => Some(ModelParams { family: Family::HuslerReiss, r: *r }),
            _ => None,
        }
    }

    /// Copula distribution function on the closed unit square.
    pub fn cdf(&self, u: f64, v: f64) -> f64 {
        if u <= 0.0 || v <= 0.0 {
            return 0.0;
        }
        if u >= 1.0 {
            return v.min(1.0);
        }
        if v >= 1.0 {
            return u;
        }
        match self {
            CopulaSpec::Gumbel(_) | CopulaSpec::HuslerReiss(_) => {
                let m = self.ev_params().unwrap();
                (-m.stdf(-u.ln(), -v.ln())).exp()
            }
            CopulaSpec::Comonotone => u.min(v),
            CopulaSpec::MaxLinear(a) => {
                let (s, t) = (-u.ln(), -v.ln());
                (-(a[0] * s).max(a[2] * t) - (a[1] * s).max(a[3] * t)).exp()
            }
            CopulaSpec::Mixture { lambda, base, alt } => (1.0 - lambda) * base.cdf(u, v) + lambda * alt.cdf(u, v),
        }
    }

    /// `∂C/∂u (u, v)`, the conditional distribution of `V` given `U = u`.
    pub fn conditional_cdf(&self, u: f64, v: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) || !(0.0..=1.0).contains(&v) {
            return Err(Error::Domain(format!("conditional cdf needs u in (0,1), v in [0,1], got ({u}, {v})")));
        }
        match self {
            CopulaSpec::Gumbel(_) | CopulaSpec::HuslerReiss(_) => {
                if v == 0.0 {
                    return Ok(0.0);
                }
                if v == 1.0 {
                    return Ok(1.0);
                }
                let m = self.ev_params().unwrap();
                let (x, y) = (-u.ln(), -v.ln());
                let (dx, _) = m.stdf_partials(x, y)?;
                Ok(((-m.stdf(x, y)).exp() * dx / u).clamp(0.0, 1.0))
            }
            CopulaSpec::Mixture { lambda, base, alt } => {
                Ok((1.0 - lambda) * base.conditional_cdf(u, v)? + lambda * alt.conditional_cdf(u, v)?)
            }
            other => Err(Error::Unsupported(format!("{other} has no conditional distribution in closed form"))),
        }
    }

    /// Solve `∂C/∂u (u, v) = w` for `v` by bisection.
    fn invert_conditional(&self, u: f64, w: f64) -> Result<f64> {
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            if hi - lo <= BISECTION_TOL {
                return Ok(0.5 * (lo + hi));
            }
            let mid = 0.5 * (lo + hi);
            if self.conditional_cdf(u, mid)? < w {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Err(Error::RootFinding(format!("conditional inversion did not converge for u={u}, w={w}")))
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> Result<(f64, f64)> {
        match self {
            CopulaSpec::Gumbel(_) | CopulaSpec::HuslerReiss(_) => {
                let u: f64 = rng.sample(Open01);
                let w: f64 = rng.sample(Open01);
                Ok((u, self.invert_conditional(u, w)?))
            }
            CopulaSpec::Comonotone => {
                let u: f64 = rng.sample(Open01);
                Ok((u, u))
            }
            CopulaSpec::MaxLinear(a) => {
                let z1 = -1.0 / rng.sample::<f64, _>(Open01).ln();
                let z2 = -1.0 / rng.sample::<f64, _>(Open01).ln();
                let x1 = (a[0] * z1).max(a[1] * z2);
                let x2 = (a[2] * z1).max(a[3] * z2);
                Ok(((-1.0 / x1).exp(), (-1.0 / x2).exp()))
            }
            CopulaSpec::Mixture { lambda, base, alt } => {
                let pick: f64 = rng.random();
                if pick < *lambda {
                    alt.draw(rng)
                } else {
                    base.draw(rng)
                }
            }
        }
    }

    /// `n` independent pairs with uniform margins, reproducible from `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<BivariateSample> {
        self.sample_stream(n, seed, 0)
    }

    /// As [`CopulaSpec::sample`], on an explicit random stream.
    pub fn sample_stream(&self, n: usize, seed: u64, stream: u64) -> Result<BivariateSample> {
        self.validate()?;
        if n < 2 {
            return Err(Error::InvalidParameter("a sample needs at least 2 observations".into()));
        }
        let mut rng = stream_rng(seed, stream);
        let mut x = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let (u, v) = self.draw(&mut rng)?;
            x.push(u);
            y.push(v);
        }
        BivariateSample::new(x, y)
    }
}

impl fmt::Display for CopulaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CopulaSpec::Gumbel(t) => write!(f, "gumbel({t})"),
            CopulaSpec::HuslerReiss(r) => write!(f, "hr({r})"),
            CopulaSpec::Comonotone => f.write_str("comonotone"),
            CopulaSpec::MaxLinear(a) => write!(f, "maxlinear({},{},{},{})", a[0], a[1], a[2], a[3]),
            CopulaSpec::Mixture { lambda, base, alt } => write!(f, "mixture({lambda},{base},{alt})"),
        }
    }
}

/// Split on top-level commas.
fn split_args(s: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, ch) in s.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                out.push(s[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
    }
    out.push(s[start..].trim());
    out
}

impl FromStr for CopulaSpec {
    type Err = Error;

    /// Parse `gumbel(2)`, `hr(1)`, `comonotone`, `maxlinear(a11,a12,a21,a22)`
    /// (or `maxlinear` for the standard coefficients), and
    /// `mixture(λ, base, alt)`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = |m: String| Error::InvalidParameter(format!("cannot parse copula '{s}': {m}"));
        let (name, args) = match s.find('(') {
            Some(i) => {
                if !s.ends_with(')') {
                    return Err(bad("missing ')'".into()));
                }
                (s[..i].trim().to_ascii_lowercase(), split_args(&s[i + 1..s.len() - 1]))
            }
            None => (s.to_ascii_lowercase(), Vec::new()),
        };
        let num = |a: &str| a.parse::<f64>().map_err(|_| bad(format!("'{a}' is not a number")));
        let want = |n: usize| if args.len() == n { Ok(()) } else { Err(bad(format!("expected {n} arguments"))) };
        let spec = match name.as_str() {
            "gumbel" | "logistic" => {
                want(1)?;
                CopulaSpec::Gumbel(num(args[0])?)
            }
            "hr" | "huslerreiss" | "husler-reiss" => {
                want(1)?;
                CopulaSpec::HuslerReiss(num(args[0])?)
            }
            "comonotone" => {
                if !args.is_empty() {
                    return Err(bad("comonotone takes no arguments".into()));
                }
                CopulaSpec::Comonotone
            }
            "maxlinear" if args.is_empty() => CopulaSpec::MaxLinear(STANDARD_MAX_LINEAR),
            "maxlinear" => {
                want(4)?;
                CopulaSpec::MaxLinear([num(args[0])?, num(args[1])?, num(args[2])?, num(args[3])?])
            }
            "mixture" => {
                want(3)?;
                CopulaSpec::Mixture {
                    lambda: num(args[0])?,
                    base: Box::new(args[1].parse()?),
                    alt: Box::new(args[2].parse()?),
                }
            }
            other => return Err(bad(format!("unknown copula '{other}'"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl Serialize for CopulaSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for CopulaSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
