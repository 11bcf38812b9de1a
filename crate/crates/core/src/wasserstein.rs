//! Weighted L1 distance between a step CDF and an angular CDF, and the
//! test statistic built from it.
//!
//! The interval `[0, π/2]` is cut at the jumps of both CDFs and at `π/4`.
//! On each cell the step CDF is a constant `c`; if the other CDF crosses `c`
//! inside the cell, the crossing is located by bisection and the cell is
//! split, so the integrand `|c - G| q` is smooth on every piece. For the
//! weight `1/sqrt|θ - π/4|` the substitution `θ = π/4 ± u²` turns each
//! piece into a bounded integrand `2 |c - G|` in `u`.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

use serde::{Deserialize, Serialize};

use crate::empirical::{empirical_angular_cdf, AngularDataset, StepCdf};
use crate::error::{Error, Result};
use crate::geometry::{weight_q_integral, WeightKind};
use crate::models::AngularModel;
use crate::quad::gauss_legendre;

/// A nondecreasing CDF on `[0, π/2]`.
pub trait AngularCdf: Sync {
    fn eval(&self, theta: f64) -> f64;

    /// Jump locations; empty for continuous CDFs.
    fn jumps(&self) -> &[f64] {
        &[]
    }

    /// True if the CDF is piecewise constant between its jumps.
    fn is_step(&self) -> bool {
        false
    }
}

impl AngularCdf for StepCdf {
    fn eval(&self, theta: f64) -> f64 {
        StepCdf::eval(self, theta)
    }
    fn jumps(&self) -> &[f64] {
        StepCdf::jumps(self)
    }
    fn is_step(&self) -> bool {
        true
    }
}

impl AngularCdf for AngularModel {
    fn eval(&self, theta: f64) -> f64 {
        self.normalized_cdf(theta)
    }
}

/// Continuous CDF given by a closure.
pub struct FnCdf<F>(pub F);

impl<F: Fn(f64) -> f64 + Sync> AngularCdf for FnCdf<F> {
    fn eval(&self, theta: f64) -> f64 {
        (self.0)(theta)
    }
}

/// Distance value and the number of integration cells used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Distance {
    pub value: f64,
    pub cells: usize,
}

const ROOT_TOL: f64 = 1e-10;
const REL_TOL: f64 = 1e-7;
const START_PANELS: usize = 8;
const MAX_PANELS: usize = 4096;
const MONOTONE_SAMPLES: usize = 256;

fn check_monotone(g: &dyn AngularCdf) -> Result<()> {
    let mut prev = g.eval(0.0);
    for i in 1..=MONOTONE_SAMPLES {
        let v = g.eval(FRAC_PI_2 * i as f64 / MONOTONE_SAMPLES as f64);
        if !v.is_finite() || v < prev - 1e-12 {
            return Err(Error::ModelEvaluation(format!(
                "angular CDF is not nondecreasing near θ = {:.6}",
                FRAC_PI_2 * i as f64 / MONOTONE_SAMPLES as f64
            )));
        }
        prev = v;
    }
    Ok(())
}

/// `∫_a^b s (G(θ) - c) q(θ) dθ` on a piece where the sign `s` is constant,
/// by composite Gauss–Legendre with doubling until the relative change is
/// below the tolerance.
fn smooth_piece(g: &dyn AngularCdf, c: f64, sign: f64, a: f64, b: f64, q: WeightKind) -> f64 {
    if b <= a {
        return 0.0;
    }
    // Map to a variable in which the integrand is bounded and smooth.
    let (lo, hi, map): (f64, f64, Box<dyn Fn(f64) -> f64>) = match q {
        WeightKind::Constant => (a, b, Box::new(move |x| sign * (g.eval(x) - c))),
        WeightKind::InvSqrtPi4 if a >= FRAC_PI_4 => (
            (a - FRAC_PI_4).sqrt(),
            (b - FRAC_PI_4).sqrt(),
            Box::new(move |u| 2.0 * sign * (g.eval(FRAC_PI_4 + u * u) - c)),
        ),
        WeightKind::InvSqrtPi4 => (
            (FRAC_PI_4 - b).sqrt(),
            (FRAC_PI_4 - a).sqrt(),
            Box::new(move |u| 2.0 * sign * (g.eval(FRAC_PI_4 - u * u) - c)),
        ),
    };
    let f = |x: f64| map(x).max(0.0);
    let mut panels = START_PANELS;
    let mut prev = gauss_legendre(&f, lo, hi, panels);
    while panels < MAX_PANELS {
        panels *= 2;
        let next = gauss_legendre(&f, lo, hi, panels);
        if (next - prev).abs() <= REL_TOL * next.abs() || (next - prev).abs() < 1e-16 {
            return next;
        }
        prev = next;
    }
    prev
}

/// Locate `θ` in `[a, b]` with `G(θ) = c` for nondecreasing `G`.
fn crossing(g: &dyn AngularCdf, c: f64, mut a: f64, mut b: f64) -> f64 {
    while b - a > ROOT_TOL {
        let m = 0.5 * (a + b);
        if g.eval(m) < c {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// `∫_0^{π/2} |F(θ) - G(θ)| q(θ) dθ`.
pub fn weighted_l1_distance(f: &StepCdf, g: &dyn AngularCdf, q: WeightKind) -> Result<Distance> {
    check_monotone(g)?;
    let mut cuts: Vec<f64> = vec![0.0, FRAC_PI_4, FRAC_PI_2];
    cuts.extend(f.jumps().iter().copied());
    cuts.extend(g.jumps().iter().copied().filter(|t| (0.0..=FRAC_PI_2).contains(t)));
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let mut total = 0.0;
    let mut cells = 0;
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let c = f.eval(a);
        cells += 1;
        if g.is_step() {
            total += (c - g.eval(a)).abs() * weight_q_integral(q, a, b);
            continue;
        }
        let (da, db) = (g.eval(a) - c, g.eval(b) - c);
        if da < 0.0 && db > 0.0 {
            let root = crossing(g, c, a, b);
            total += smooth_piece(g, c, -1.0, a, root, q);
            total += smooth_piece(g, c, 1.0, root, b, q);
            cells += 1;
        } else {
            let sign = if da + db >= 0.0 { 1.0 } else { -1.0 };
            total += smooth_piece(g, c, sign, a, b, q);
        }
    }
    Ok(Distance { value: total, cells })
}

/// The scaled distance `T_n = sqrt(k) ∫ |Q̃ - Q_r̂| q`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestStatistic {
    pub value: f64,
    pub k: usize,
    pub weight: WeightKind,
    pub cells: usize,
}

/// Test statistic of a reweighted dataset against a fitted model.
pub fn test_statistic(dataset: &AngularDataset, model: &AngularModel, q: WeightKind) -> Result<TestStatistic> {
    let f = empirical_angular_cdf(dataset, true)?;
    let d = weighted_l1_distance(&f, model, q)?;
    Ok(TestStatistic { value: (dataset.k as f64).sqrt() * d.value, k: dataset.k, weight: q, cells: d.cells })
}
