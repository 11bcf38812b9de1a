//! Monte-Carlo simulation of the asymptotic null distribution of the test
//! statistic.
//!
//! A Wiener process with intensity `Λ_r` is discretized on a square grid of
//! step `h` with `M` points per axis, giving `(M-1)²` interior cells. Two
//! overflow strips complete the quadrant: row `i` gets the cell
//! `[x_i, x_{i+1}) × [cov, ∞]` and column `j` gets `[cov, ∞] × [y_j, y_{j+1})`,
//! where `cov = (M-1) h`. All cell masses follow exactly from the stdf, so
//! marginal variances are exact.
//!
//! A cell belongs to a set when its midpoint does; overflow cells are
//! represented by the point at distance `cov` on their open side.
//!
//! For one draw the simulator evaluates, on a midpoint grid of `N` angles,
//! - `α = W(C_θ) + Z(θ)`, where `Z` is the rank-correction process. Its two
//!   integrals are computed exactly for the piecewise-constant marginal
//!   processes of the discretized field;
//! - `β`, the normalized version of `α`;
//! - `γ`, the Euclidean-likelihood correction of `β`;
//! - `X = γ - ∂_r Q · I`, where `I` is the limit of the estimated parameter;
//!
//! and returns `L = ∫ |X| q`, with `q` integrated exactly over each angle cell.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{constraint_f_prime, weight_q_integral, x_p_of_theta, y_p, PNorm, WeightKind};
use crate::models::{expansion_constants, AngularModel, CdfGradient, Family, ModelParams};
use crate::quad::{self, Tolerance};
use crate::rng::{derive_seed, stream_rng};

/// Discretization of the field and of the angle axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldGrid {
    /// Grid step.
    pub h: f64,
    /// Grid points per axis; there are `m - 1` cells per axis.
    pub m: usize,
    /// Number of midpoint angles.
    pub n_theta: usize,
}

/// Named grid presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridPreset {
    /// Small grid for quick runs: `h = 0.05`, `M = 200`, `N = 500`.
    Desk,
    /// Production grid: `h = 0.05`, `M = 1000`, `N = 1000`.
    Full,
}

impl GridPreset {
    pub fn grid(&self) -> FieldGrid {
        match self {
            GridPreset::Desk => FieldGrid { h: 0.05, m: 200, n_theta: 500 },
            GridPreset::Full => FieldGrid { h: 0.05, m: 1000, n_theta: 1000 },
        }
    }
}

impl FromStr for GridPreset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "desk" => Ok(GridPreset::Desk),
            "full" => Ok(GridPreset::Full),
            other => Err(Error::InvalidParameter(format!("unknown grid preset '{other}'"))),
        }
    }
}

impl fmt::Display for GridPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GridPreset::Desk => "desk",
            GridPreset::Full => "full",
        })
    }
}

/// Coverage below which the far tail of the exponent measure is lumped
/// into the overflow strips rather than resolved.
pub const RECOMMENDED_COVERAGE: f64 = 40.0;

impl FieldGrid {
    pub fn new(h: f64, m: usize, n_theta: usize) -> Result<Self> {
        let g = FieldGrid { h, m, n_theta };
        g.validate()?;
        Ok(g)
    }

    /// Cells per axis.
    pub fn cells(&self) -> usize {
        self.m - 1
    }

    /// Extent `(M-1) h` of the resolved part of the grid.
    pub fn coverage(&self) -> f64 {
        self.h * (self.m - 1) as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::InvalidParameter(format!("grid step must be positive, got {}", self.h)));
        }
        if self.m < 3 {
            return Err(Error::InvalidParameter(format!("need at least 3 grid points per axis, got {}", self.m)));
        }
        if self.n_theta < 100 {
            return Err(Error::InvalidParameter(format!("need at least 100 angles, got {}", self.n_theta)));
        }
        if self.coverage() <= 1.0 {
            return Err(Error::InvalidParameter("grid must extend beyond the unit square".into()));
        }
        Ok(())
    }

    /// Non-fatal remarks about the grid.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.coverage() < RECOMMENDED_COVERAGE {
            w.push(format!(
                "grid coverage {:.2} is below {RECOMMENDED_COVERAGE}; mass beyond it is carried by overflow strips",
                self.coverage()
            ));
        }
        w
    }

    /// Midpoint of cell `i` (0-based).
    fn mid(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.h
    }

    /// Number of cells whose midpoint is `<= v`.
    fn count_le(&self, v: f64) -> usize {
        if v.is_infinite() {
            return self.cells();
        }
        let k = (v / self.h + 0.5).floor();
        if k <= 0.0 {
            0
        } else {
            (k as usize).min(self.cells())
        }
    }

    /// Midpoint angles `θ_n = (n + 1/2) π / (2N)`.
    pub fn thetas(&self) -> Vec<f64> {
        let d = FRAC_PI_2 / self.n_theta as f64;
        (0..self.n_theta).map(|n| (n as f64 + 0.5) * d).collect()
    }
}

/// Exponent-measure masses of the grid cells.
#[derive(Debug, Clone, PartialEq)]
pub struct CellMasses {
    pub cells: usize,
    /// Row-major interior masses, index `i * cells + j`.
    pub interior: Vec<f64>,
    /// Strip above the grid for each row.
    pub over_row: Vec<f64>,
    /// Strip right of the grid for each column.
    pub over_col: Vec<f64>,
}

impl CellMasses {
    /// Total mass of row `i` (interior plus overflow); equals `h`.
    pub fn row_total(&self, i: usize) -> f64 {
        self.interior[i * self.cells..(i + 1) * self.cells].iter().sum::<f64>() + self.over_row[i]
    }
}

/// Cell masses by inclusion–exclusion of `Λ([0,a] × [0,b]) = a + b - ℓ(a, b)`.
pub fn cell_masses(params: &ModelParams, grid: &FieldGrid) -> CellMasses {
    let c = grid.cells();
    let h = grid.h;
    let cov = grid.coverage();
    let corner: Vec<f64> = (0..=c)
        .flat_map(|i| (0..=c).map(move |j| (i, j)))
        .map(|(i, j)| params.rect_mass(i as f64 * h, j as f64 * h))
        .collect();
    let rm = |i: usize, j: usize| corner[i * (c + 1) + j];
    let mut interior = Vec::with_capacity(c * c);
    for i in 0..c {
        for j in 0..c {
            let v = rm(i + 1, j + 1) - rm(i, j + 1) - rm(i + 1, j) + rm(i, j);
            interior.push(v.max(0.0));
        }
    }
    let over_row = (0..c).map(|i| (h - (rm(i + 1, c) - rm(i, c))).max(0.0)).collect();
    let over_col = (0..c).map(|j| (h - (rm(c, j + 1) - rm(c, j))).max(0.0)).collect();
    let _ = cov;
    CellMasses { cells: c, interior, over_row, over_col }
}

/// One realization of the discretized Wiener process with derived sums.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianField {
    pub h: f64,
    pub cells: usize,
    pub interior: Vec<f64>,
    pub over_row: Vec<f64>,
    pub over_col: Vec<f64>,
    /// `row_prefix[i * (cells + 1) + k] = Σ_{j < k} W_ij`.
    row_prefix: Vec<f64>,
    /// Row sums including the overflow strip.
    pub row_total: Vec<f64>,
    /// Column sums including the overflow strip.
    pub col_total: Vec<f64>,
}

impl GaussianField {
    /// Build a field from explicit cell values.
    pub fn from_cells(h: f64, cells: usize, interior: Vec<f64>, over_row: Vec<f64>, over_col: Vec<f64>) -> Self {
        let mut f = GaussianField {
            h,
            cells,
            interior,
            over_row,
            over_col,
            row_prefix: vec![0.0; cells * (cells + 1)],
            row_total: vec![0.0; cells],
            col_total: vec![0.0; cells],
        };
        f.refresh();
        f
    }

    fn refresh(&mut self) {
        let c = self.cells;
        self.col_total.copy_from_slice(&self.over_col);
        for i in 0..c {
            let row = &self.interior[i * c..(i + 1) * c];
            let pre = &mut self.row_prefix[i * (c + 1)..(i + 1) * (c + 1)];
            let mut acc = 0.0;
            pre[0] = 0.0;
            for (j, &w) in row.iter().enumerate() {
                acc += w;
                pre[j + 1] = acc;
                self.col_total[j] += w;
            }
            self.row_total[i] = acc + self.over_row[i];
        }
    }

    /// Multiply every cell by `s`.
    pub fn scale(&mut self, s: f64) {
        for v in self.interior.iter_mut().chain(&mut self.over_row).chain(&mut self.over_col) {
            *v *= s;
        }
        self.refresh();
    }

    /// The same realization seen on a smaller grid with the same step:
    /// cells beyond the first `cells` rows or columns are folded into the
    /// overflow strips and the far corner is dropped. The result has the
    /// distribution of a field drawn directly on the smaller grid.
    pub fn restrict(&self, cells: usize) -> Result<GaussianField> {
        let c = self.cells;
        if cells == 0 || cells > c {
            return Err(Error::InvalidParameter(format!("cannot restrict {c} cells to {cells}")));
        }
        let mut interior = Vec::with_capacity(cells * cells);
        let mut over_row = Vec::with_capacity(cells);
        for i in 0..cells {
            let row = &self.interior[i * c..(i + 1) * c];
            interior.extend_from_slice(&row[..cells]);
            over_row.push(row[cells..].iter().sum::<f64>() + self.over_row[i]);
        }
        let over_col = (0..cells)
            .map(|j| (cells..c).map(|i| self.interior[i * c + j]).sum::<f64>() + self.over_col[j])
            .collect();
        Ok(GaussianField::from_cells(self.h, cells, interior, over_row, over_col))
    }

    /// Sum of `W_ij` for `j < k` in row `i`.
    fn row_partial(&self, i: usize, k: usize) -> f64 {
        self.row_prefix[i * (self.cells + 1) + k]
    }

    fn grid(&self) -> FieldGrid {
        FieldGrid { h: self.h, m: self.cells + 1, n_theta: 100 }
    }

    /// Marginal processes `(W̃₁(x), W̃₂(x))`.
    pub fn eval_marginals(&self, x: f64) -> (f64, f64) {
        let k = self.grid().count_le(x);
        (self.row_total[..k].iter().sum(), self.col_total[..k].iter().sum())
    }

    /// `W̃(A_(x,y))`, where `A_(x,y) = {u : u₁ <= x or u₂ <= y}`.
    pub fn eval_w_on_a(&self, x: f64, y: f64) -> f64 {
        let g = self.grid();
        let (kx, ky) = (g.count_le(x), g.count_le(y));
        let w1: f64 = self.row_total[..kx].iter().sum();
        let w2: f64 = self.col_total[..ky].iter().sum();
        let both: f64 = (0..kx).map(|i| self.row_partial(i, ky)).sum();
        w1 + w2 - both
    }

    /// `W̃(C_{p,θ})` for any angle; O(cells).
    pub fn eval_w_on_c(&self, p: PNorm, theta: f64) -> f64 {
        let g = self.grid();
        let b = SetBounds::new(&g, p, theta);
        b.apply(self)
    }
}

/// Cell counts describing a discretized `C_{p,θ}`.
#[derive(Debug, Clone)]
struct SetBounds {
    /// Included interior cells per row (a prefix).
    row_counts: Vec<u32>,
    /// Rows whose overflow strip is included: `lo..hi`.
    over_rows: (usize, usize),
    /// Included overflow columns (a prefix).
    over_cols: usize,
}

impl SetBounds {
    fn new(g: &FieldGrid, p: PNorm, theta: f64) -> Self {
        let c = g.cells();
        let cov = g.coverage();
        let tan = if theta >= FRAC_PI_2 { f64::INFINITY } else { theta.tan() };
        let cap = |x: f64| {
            let ray = if theta >= FRAC_PI_2 { f64::INFINITY } else { x * tan };
            ray.min(y_p(p, x))
        };
        let row_counts = (0..c).map(|i| g.count_le(cap(g.mid(i))) as u32).collect();
        let inc: Vec<bool> = (0..c).map(|i| cap(g.mid(i)) >= cov).collect();
        let lo = inc.iter().position(|&b| b).unwrap_or(c);
        let hi = inc.iter().rposition(|&b| b).map_or(lo, |k| k + 1);
        debug_assert!(inc[lo..hi].iter().all(|&b| b));
        let over_cols = g.count_le(cap(cov));
        SetBounds { row_counts, over_rows: (lo, hi), over_cols }
    }

    fn apply(&self, f: &GaussianField) -> f64 {
        let mut s = 0.0;
        for (i, &k) in self.row_counts.iter().enumerate() {
            s += f.row_partial(i, k as usize);
        }
        s += f.over_row[self.over_rows.0..self.over_rows.1].iter().sum::<f64>();
        s += f.over_col[..self.over_cols].iter().sum::<f64>();
        s
    }

    fn mass(&self, m: &CellMasses) -> f64 {
        let c = m.cells;
        let mut s = 0.0;
        for (i, &k) in self.row_counts.iter().enumerate() {
            s += m.interior[i * c..i * c + k as usize].iter().sum::<f64>();
        }
        s += m.over_row[self.over_rows.0..self.over_rows.1].iter().sum::<f64>();
        s += m.over_col[..self.over_cols].iter().sum::<f64>();
        s
    }
}

/// Integrals of the exponent density along the boundary curve `y = y_p(x)`:
/// `∫_1^X λ(s, y_p(s)) ds` (`along`) and `∫_1^Y λ(y_p(v), v) dv` (`across`).
#[derive(Debug, Clone)]
struct BoundaryKernel {
    params: ModelParams,
    p: f64,
    swap: bool,
    /// Nodes in `u = ln s` with cumulative integrals.
    nodes: Vec<f64>,
    cum: Vec<f64>,
    total: f64,
}

const KERNEL_LOG_MAX: f64 = 20.0;
const KERNEL_NODES: usize = 400;

impl BoundaryKernel {
    fn new(params: ModelParams, p: f64, swap: bool) -> Result<Self> {
        let mut k = BoundaryKernel { params, p, swap, nodes: Vec::new(), cum: Vec::new(), total: 0.0 };
        let nodes: Vec<f64> =
            (0..=KERNEL_NODES).map(|i| KERNEL_LOG_MAX * (i as f64 / KERNEL_NODES as f64).powi(2)).collect();
        let mut cum = vec![0.0];
        for w in nodes.windows(2) {
            let seg = k.segment(w[0], w[1])?;
            cum.push(cum.last().unwrap() + seg);
        }
        // Far tail: the curve is flat at height 1 there, so the integral of
        // λ(s, 1) (resp. λ(1, v)) over [S, ∞) is a partial derivative of ℓ.
        let s_max = KERNEL_LOG_MAX.exp();
        let (dx, dy) = params.stdf_partials(if swap { 1.0 } else { s_max }, if swap { s_max } else { 1.0 })?;
        let tail = if swap { dx } else { dy };
        k.total = cum.last().unwrap() + tail;
        k.nodes = nodes;
        k.cum = cum;
        Ok(k)
    }

    fn integrand(&self, u: f64) -> f64 {
        let s = u.exp();
        let yb = y_p(PNorm::Finite(self.p), s);
        if !yb.is_finite() || u <= 0.0 {
            return 0.0;
        }
        let (x, y) = if self.swap { (yb, s) } else { (s, yb) };
        self.params.exponent_density(x, y).map(|v| v * s).unwrap_or(0.0)
    }

    fn segment(&self, a: f64, b: f64) -> Result<f64> {
        let tol = Tolerance { abs: 1e-14, rel: 1e-12, max_panels: 2000 };
        Ok(quad::integrate(|u| self.integrand(u), a, b, &[], tol)?.value)
    }

    /// `∫_1^x`, for `x >= 1` (infinite `x` gives the total).
    fn beyond_one(&self, x: f64) -> Result<f64> {
        if x <= 1.0 {
            return Ok(0.0);
        }
        if x.is_infinite() {
            return Ok(self.total);
        }
        let u = x.ln();
        if u >= KERNEL_LOG_MAX {
            let (dx, dy) = self.params.stdf_partials(if self.swap { 1.0 } else { x }, if self.swap { x } else { 1.0 })?;
            return Ok(self.total - if self.swap { dx } else { dy });
        }
        let k = self.nodes.partition_point(|&t| t <= u).max(1) - 1;
        Ok(self.cum[k] + self.segment(self.nodes[k], u)?)
    }

    /// `∫_x^∞`.
    fn beyond(&self, x: f64) -> Result<f64> {
        Ok(self.total - self.beyond_one(x)?)
    }
}

/// Quantities the rank-correction process needs at one angle.
#[derive(Debug, Clone, Copy)]
struct ZCoefficients {
    tan: f64,
    lambda_1t: f64,
    ln_xp: f64,
    ln_ystar: f64,
    count_x: usize,
    count_y: usize,
    /// `∫_{x_p}^∞ λ(s, y_p(s)) |y_p'(s)| ds`.
    g1_xp: f64,
    /// `∫_{x_p}^∞ λ(s, y_p(s)) ds`.
    g2_xp: f64,
    /// False at θ = π/2, where the first integral vanishes.
    has_first: bool,
}

/// Per-draw prefix sums over rows and columns.
#[derive(Debug, Clone, Default)]
struct MarginalSums {
    p1: Vec<f64>,
    pl1: Vec<f64>,
    pg1: Vec<f64>,
    p2: Vec<f64>,
    pl2: Vec<f64>,
    pg2: Vec<f64>,
}

/// Intermediate processes of one draw, on the angle grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessPath {
    pub theta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub x: Vec<f64>,
    pub alpha_end: f64,
    pub estimator_term: f64,
    pub l: f64,
}

/// Simulator of the limit variable `L_r` for one model and grid.
#[derive(Debug, Clone)]
pub struct LimitLawSimulator {
    params: ModelParams,
    p: PNorm,
    grid: FieldGrid,
    q: WeightKind,
    masses: CellMasses,
    sd_interior: Vec<f64>,
    sd_over_row: Vec<f64>,
    sd_over_col: Vec<f64>,
    theta: Vec<f64>,
    bounds: Vec<SetBounds>,
    bounds_end: SetBounds,
    z: Vec<ZCoefficients>,
    z_end: ZCoefficients,
    ln_mid: Vec<f64>,
    g1_row: Vec<f64>,
    g2_col: Vec<f64>,
    total_mass: f64,
    phi: Vec<f64>,
    f_prime: Vec<f64>,
    f_cum: Vec<f64>,
    f_var: f64,
    grad: Vec<f64>,
    grad_clamped: bool,
    cell_weight: Vec<f64>,
    g: f64,
    partials: (f64, f64),
    count_one: usize,
}

impl LimitLawSimulator {
    pub fn new(params: ModelParams, p: PNorm, grid: FieldGrid, q: WeightKind) -> Result<Self> {
        grid.validate()?;
        let pf = p.require_finite("the limit-law simulator")?;
        let model = AngularModel::new(params, p)?;
        let grad = CdfGradient::new(params, p)?;
        let c = grid.cells();
        let masses = cell_masses(&params, &grid);
        let sd = |v: &Vec<f64>| v.iter().map(|m| m.sqrt()).collect::<Vec<_>>();
        let theta = grid.thetas();

        let along = BoundaryKernel::new(params, pf, false)?;
        let across = BoundaryKernel::new(params, pf, true)?;
        // G1(x) = ∫_1^{y_p(x)} λ(y_p(v), v) dv, G2(x) = ∫_x^∞ λ(s, y_p(s)) ds.
        let g1 = |x: f64| across.beyond_one(y_p(p, x));
        let g2 = |x: f64| along.beyond(x);

        let ln_mid: Vec<f64> = (0..c).map(|i| grid.mid(i).ln()).collect();
        let g1_row = (0..c).map(|i| g1(grid.mid(i).max(1.0))).collect::<Result<Vec<_>>>()?;
        let g2_col = (0..c)
            .map(|j| if grid.mid(j) <= 1.0 { Ok(0.0) } else { g2(y_p(p, grid.mid(j))) })
            .collect::<Result<Vec<_>>>()?;

        let zc = |th: f64| -> Result<ZCoefficients> {
            let xp = x_p_of_theta(p, th)?;
            if th >= FRAC_PI_2 {
                return Ok(ZCoefficients {
                    tan: f64::INFINITY,
                    lambda_1t: 0.0,
                    ln_xp: 0.0,
                    ln_ystar: f64::INFINITY,
                    count_x: grid.count_le(1.0),
                    count_y: c,
                    g1_xp: across.total,
                    g2_xp: along.total,
                    has_first: false,
                });
            }
            let tan = th.tan();
            let ystar = tan * xp;
            Ok(ZCoefficients {
                tan,
                lambda_1t: params.exponent_density(1.0, tan)?,
                ln_xp: xp.ln(),
                ln_ystar: ystar.ln(),
                count_x: grid.count_le(xp),
                count_y: grid.count_le(ystar),
                g1_xp: across.beyond_one(ystar)?,
                g2_xp: g2(xp)?,
                has_first: true,
            })
        };
        let z = theta.iter().map(|&t| zc(t)).collect::<Result<Vec<_>>>()?;
        let z_end = zc(FRAC_PI_2)?;

        let bounds = theta.iter().map(|&t| SetBounds::new(&grid, p, t)).collect();
        let bounds_end = SetBounds::new(&grid, p, FRAC_PI_2);

        let total_mass = model.total_mass();
        let phi = theta.iter().map(|&t| model.angular_cdf(t)).collect();
        let f_prime = theta.iter().map(|&t| constraint_f_prime(p, t)).collect::<Result<Vec<_>>>()?;
        let (f_cum, f_var) = constraint_moments(&model, &theta)?;
        let d = FRAC_PI_2 / grid.n_theta as f64;
        let cell_weight = (0..grid.n_theta).map(|n| weight_q_integral(q, n as f64 * d, (n + 1) as f64 * d)).collect();
        let g = expansion_constants(&params).g;
        let partials = params.stdf_partials(1.0, 1.0)?;

        Ok(LimitLawSimulator {
            params,
            p,
            grid,
            q,
            sd_interior: sd(&masses.interior),
            sd_over_row: sd(&masses.over_row),
            sd_over_col: sd(&masses.over_col),
            masses,
            grad: theta.iter().map(|&t| grad.eval(t)).collect(),
            grad_clamped: grad.clamped,
            theta,
            bounds,
            bounds_end,
            z,
            z_end,
            ln_mid,
            g1_row,
            g2_col,
            total_mass,
            phi,
            f_prime,
            f_cum,
            f_var,
            cell_weight,
            g,
            partials,
            count_one: grid.count_le(1.0),
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }
    pub fn grid(&self) -> &FieldGrid {
        &self.grid
    }
    pub fn masses(&self) -> &CellMasses {
        &self.masses
    }
    pub fn weight(&self) -> WeightKind {
        self.q
    }
    pub fn p(&self) -> PNorm {
        self.p
    }
    /// True if the parameter gradient used a shifted stencil.
    pub fn gradient_clamped(&self) -> bool {
        self.grad_clamped
    }

    /// Exponent-measure mass of the discretized `C_{p,π/2}`.
    pub fn discretized_total_mass(&self) -> f64 {
        self.bounds_end.mass(&self.masses)
    }

    /// Draw the field for replicate `stream` under `seed`.
    pub fn simulate_field(&self, seed: u64, stream: u64) -> GaussianField {
        let mut rng = stream_rng(seed, stream);
        let mut draw = |sd: &Vec<f64>| sd.iter().map(|s| s * rng.sample::<f64, _>(StandardNormal)).collect::<Vec<_>>();
        let interior = draw(&self.sd_interior);
        let over_row = draw(&self.sd_over_row);
        let over_col = draw(&self.sd_over_col);
        GaussianField::from_cells(self.grid.h, self.grid.cells(), interior, over_row, over_col)
    }

    fn marginal_sums(&self, f: &GaussianField) -> MarginalSums {
        let c = self.grid.cells();
        let mut s = MarginalSums::default();
        for v in [&mut s.p1, &mut s.pl1, &mut s.pg1, &mut s.p2, &mut s.pl2, &mut s.pg2] {
            v.reserve(c + 1);
            v.push(0.0);
        }
        for i in 0..c {
            let (r, col) = (f.row_total[i], f.col_total[i]);
            s.p1.push(s.p1[i] + r);
            s.pl1.push(s.pl1[i] + r * self.ln_mid[i]);
            s.pg1.push(s.pg1[i] + r * self.g1_row[i]);
            s.p2.push(s.p2[i] + col);
            s.pl2.push(s.pl2[i] + col * self.ln_mid[i]);
            s.pg2.push(s.pg2[i] + col * self.g2_col[i]);
        }
        s
    }

    fn z_value(&self, s: &MarginalSums, z: &ZCoefficients) -> f64 {
        let c = self.grid.cells();
        let (a, b) = (z.count_x, z.count_y);
        let first = if z.has_first {
            z.lambda_1t * (z.tan * (z.ln_xp * s.p1[a] - s.pl1[a]) - (z.ln_ystar * s.p2[b] - s.pl2[b]))
        } else {
            0.0
        };
        let second = -(z.g1_xp * s.p1[a] + s.pg1[c] - s.pg1[a]) - (z.g2_xp * s.p2[b] - s.pg2[b]);
        first + second
    }

    /// Rank-correction process `Z(θ)` at an arbitrary angle in `(0, π/2]`.
    pub fn eval_zp(&self, field: &GaussianField, theta: f64) -> Result<f64> {
        let pf = self.p.require_finite("the rank-correction process")?;
        let along = BoundaryKernel::new(self.params, pf, false)?;
        let across = BoundaryKernel::new(self.params, pf, true)?;
        let xp = x_p_of_theta(self.p, theta)?;
        let z = if theta >= FRAC_PI_2 {
            self.z_end
        } else {
            let tan = theta.tan();
            let ystar = tan * xp;
            ZCoefficients {
                tan,
                lambda_1t: self.params.exponent_density(1.0, tan)?,
                ln_xp: xp.ln(),
                ln_ystar: ystar.ln(),
                count_x: self.grid.count_le(xp),
                count_y: self.grid.count_le(ystar),
                g1_xp: across.beyond_one(ystar)?,
                g2_xp: along.beyond(xp)?,
                has_first: true,
            }
        };
        Ok(self.z_value(&self.marginal_sums(field), &z))
    }

    /// All processes of one draw.
    ///
    /// # Panics
    /// If the field was drawn on a different grid.
    pub fn process(&self, field: &GaussianField) -> ProcessPath {
        assert!(
            field.cells == self.grid.cells() && field.h == self.grid.h,
            "field does not match the simulator grid"
        );
        let n = self.grid.n_theta;
        let sums = self.marginal_sums(field);
        let m = self.total_mass;
        let alpha: Vec<f64> =
            (0..n).map(|k| self.bounds[k].apply(field) + self.z_value(&sums, &self.z[k])).collect();
        let alpha_end = self.bounds_end.apply(field) + self.z_value(&sums, &self.z_end);
        let beta: Vec<f64> = (0..n).map(|k| (alpha[k] * m - self.phi[k] * alpha_end) / (m * m)).collect();
        let d = FRAC_PI_2 / n as f64;
        let beta_fp: f64 = beta.iter().zip(&self.f_prime).map(|(b, fp)| b * fp).sum::<f64>() * d;
        let coef = beta_fp / self.f_var;
        let gamma: Vec<f64> = (0..n).map(|k| beta[k] + coef * self.f_cum[k]).collect();

        let k1 = self.count_one;
        let w1: f64 = sums.p1[k1];
        let w2: f64 = sums.p2[k1];
        let both: f64 = (0..k1).map(|i| field.row_partial(i, k1)).sum();
        let wa = w1 + w2 - both;
        let est = self.g * (wa - self.partials.0 * w1 - self.partials.1 * w2);

        let x: Vec<f64> = (0..n).map(|k| gamma[k] - self.grad[k] * est).collect();
        let l = x.iter().zip(&self.cell_weight).map(|(v, w)| v.abs() * w).sum();
        ProcessPath { theta: self.theta.clone(), alpha, beta, gamma, x, alpha_end, estimator_term: est, l }
    }

    /// One draw of `L` for replicate `stream`.
    pub fn draw(&self, seed: u64, stream: u64) -> f64 {
        self.process(&self.simulate_field(seed, stream)).l
    }

    /// `b` independent draws; replicate `i` uses stream `i`.
    pub fn simulate(&self, b: usize, seed: u64) -> LimitLawDraws {
        let values: Vec<f64> = (0..b as u64).into_par_iter().map(|i| self.draw(seed, i)).collect();
        LimitLawDraws { values, params: self.params, p: self.p, grid: self.grid, q: self.q, seed }
    }
}

/// `∫_0^{θ_n} f dQ` on the angle grid and `Var_Q(f)`, from the model.
fn constraint_moments(model: &AngularModel, theta: &[f64]) -> Result<(Vec<f64>, f64)> {
    let params = *model.params();
    let p = model.p();
    let m = model.total_mass();
    // In t = ln tan θ, f = (e^t - 1) / ||(1, e^t)||_p.
    let f_t = |t: f64| (t.exp() - 1.0) * (-p.ln_norm_one_exp(t)).exp();
    let dens = |t: f64| params.density_in_log_tan(p, t);
    let left = model.cdf_in_log_tan(-60.0).max(0.0);
    let tol = Tolerance { abs: 1e-13, rel: 1e-11, max_panels: 4000 };
    let mut cum = Vec::with_capacity(theta.len());
    let mut acc = -left;
    let mut prev_t = -60.0;
    for &th in theta {
        let t = th.tan().ln().max(prev_t);
        acc += quad::integrate(|s| f_t(s) * dens(s), prev_t, t, &[0.0], tol)?.value;
        cum.push(acc / m);
        prev_t = t;
    }
    let ff = quad::integrate(|s| f_t(s) * f_t(s) * dens(s), -60.0, 60.0, &[0.0, -1.0, 1.0], tol)?.value;
    let f1 = quad::integrate(|s| f_t(s) * dens(s), -60.0, 60.0, &[0.0, -1.0, 1.0], tol)?.value;
    let tails = 2.0 * left;
    let mean = f1 / m;
    let var = (ff + tails) / m - mean * mean;
    if !(var > 0.0) {
        return Err(Error::ModelEvaluation("constraint function has zero variance under the model".into()));
    }
    Ok((cum, var))
}

/// Simulated draws of `L` with their provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitLawDraws {
    pub values: Vec<f64>,
    pub params: ModelParams,
    pub p: PNorm,
    pub grid: FieldGrid,
    pub q: WeightKind,
    pub seed: u64,
}

impl LimitLawDraws {
    pub fn quantile(&self, level: f64) -> Result<f64> {
        quantile(&self.values, level)
    }
    pub fn p_value(&self, t: f64) -> f64 {
        p_value(&self.values, t)
    }
}

/// The `⌈level · B⌉`-th order statistic.
pub fn quantile(values: &[f64], level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!("quantile level must be in (0, 1), got {level}")));
    }
    if values.is_empty() {
        return Err(Error::InvalidParameter("no draws".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let b = v.len() as f64;
    let rank = ((level * b) - 1e-9).ceil().max(1.0) as usize;
    Ok(v[rank.min(v.len()) - 1])
}

/// Proportion of draws at or above `t`.
pub fn p_value(values: &[f64], t: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().filter(|&&v| v >= t).count() as f64 / values.len() as f64
}

/// Round to 12 significant digits, the precision of the cache format.
pub fn round12(x: f64) -> f64 {
    format!("{x:.11e}").parse().unwrap_or(x)
}

/// Seed used for the draws at parameter node `r`; depends only on the
/// node value so tables built over different ranges agree on shared nodes.
pub fn node_seed(seed: u64, r: f64) -> u64 {
    derive_seed(seed, &[(r * 1e9).round() as u64])
}

/// Parameter nodes at multiples of the family pitch covering `[lo, hi]`,
/// extended by one node on each side and kept inside the default range.
pub fn covering_nodes(family: Family, lo: f64, hi: f64) -> Vec<f64> {
    let pitch = family.table_pitch();
    let (dmin, dmax) = family.default_table_range();
    let kmin = ((dmin / pitch).round()) as i64;
    let kmax = ((dmax / pitch).round()) as i64;
    let a = (((lo / pitch).floor() as i64) - 1).clamp(kmin, kmax);
    let b = (((hi / pitch).ceil() as i64) + 1).clamp(kmin, kmax);
    (a.min(b)..=b).map(|k| round12(k as f64 * pitch)).collect()
}

/// Interpolation result with a flag for queries outside the node range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lookup {
    pub value: f64,
    pub clamped: bool,
}

/// Quantiles of `L_r` on a grid of parameter values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalValueTable {
    pub family: Family,
    pub p: PNorm,
    pub grid: FieldGrid,
    pub q: WeightKind,
    pub b: usize,
    pub seed: u64,
    pub levels: Vec<f64>,
    pub r_nodes: Vec<f64>,
    /// `quantiles[i][j]`: node `i`, level `j`.
    pub quantiles: Vec<Vec<f64>>,
}

impl CriticalValueTable {
    /// Simulate `b` draws per node and tabulate the requested quantile levels.
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        family: Family,
        p: PNorm,
        grid: FieldGrid,
        q: WeightKind,
        r_nodes: &[f64],
        levels: &[f64],
        b: usize,
        seed: u64,
    ) -> Result<Self> {
        if r_nodes.is_empty() {
            return Err(Error::InvalidParameter("empty parameter grid".into()));
        }
        if r_nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter("parameter grid must be strictly increasing".into()));
        }
        for &l in levels {
            if !(l > 0.0 && l < 1.0) {
                return Err(Error::Domain(format!("quantile level must be in (0, 1), got {l}")));
            }
        }
        let bank = DrawBank::build(family, p, grid, q, r_nodes, b, seed)?;
        let quantiles = bank
            .draws
            .iter()
            .map(|d| levels.iter().map(|&l| quantile(d, l).map(round12)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Ok(CriticalValueTable {
            family,
            p,
            grid,
            q,
            b,
            seed,
            levels: levels.to_vec(),
            r_nodes: r_nodes.to_vec(),
            quantiles,
        })
    }

    fn level_index(&self, level: f64) -> Result<usize> {
        self.levels
            .iter()
            .position(|&l| (l - level).abs() < 1e-12)
            .ok_or_else(|| Error::InvalidParameter(format!("level {level} is not in the table")))
    }

    /// Quantile at `level`, linearly interpolated in `r`; clamped outside.
    pub fn lookup(&self, r: f64, level: f64) -> Result<Lookup> {
        let j = self.level_index(level)?;
        let col: Vec<f64> = self.quantiles.iter().map(|row| row[j]).collect();
        Ok(interpolate(&self.r_nodes, &col, r))
    }

    /// True if this table was produced with the given settings.
    pub fn matches(&self, family: Family, p: PNorm, grid: &FieldGrid, q: WeightKind, b: usize, seed: u64) -> bool {
        self.family == family && self.p == p && &self.grid == grid && self.q == q && self.b == b && self.seed == seed
    }

    /// Write the table in the plain-text cache format.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# angof critical-value table")?;
        writeln!(w, "# family={}", self.family)?;
        writeln!(w, "# p={}", self.p)?;
        writeln!(w, "# h={}", self.grid.h)?;
        writeln!(w, "# M={}", self.grid.m)?;
        writeln!(w, "# N={}", self.grid.n_theta)?;
        writeln!(w, "# q={}", self.q)?;
        writeln!(w, "# B={}", self.b)?;
        writeln!(w, "# seed={}", self.seed)?;
        writeln!(w, "r,level,quantile")?;
        for (i, r) in self.r_nodes.iter().enumerate() {
            for (j, l) in self.levels.iter().enumerate() {
                writeln!(w, "{r},{l},{:.11e}", self.quantiles[i][j])?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut header = std::collections::HashMap::new();
        let mut rows: Vec<(f64, f64, f64)> = Vec::new();
        let mut seen_columns = false;
        for (idx, line) in r.lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            if let Some(rest) = t.strip_prefix('#') {
                if let Some((k, v)) = rest.trim().split_once('=') {
                    header.insert(k.trim().to_string(), v.trim().to_string());
                }
                continue;
            }
            if !seen_columns {
                if t != "r,level,quantile" {
                    return Err(Error::Parse { line: lineno, message: format!("expected column header, got '{t}'") });
                }
                seen_columns = true;
                continue;
            }
            let parts: Vec<&str> = t.split(',').collect();
            if parts.len() != 3 {
                return Err(Error::Parse { line: lineno, message: "expected 3 fields".into() });
            }
            let num = |s: &str| {
                s.trim().parse::<f64>().map_err(|_| Error::Parse { line: lineno, message: format!("bad number '{s}'") })
            };
            rows.push((num(parts[0])?, num(parts[1])?, num(parts[2])?));
        }
        let get = |k: &str| {
            header.get(k).cloned().ok_or_else(|| Error::Parse { line: 0, message: format!("missing header key '{k}'") })
        };
        let perr = |k: &str| Error::Parse { line: 0, message: format!("bad value for header key '{k}'") };
        let family: Family = get("family")?.parse()?;
        let p: PNorm = get("p")?.parse()?;
        let h: f64 = get("h")?.parse().map_err(|_| perr("h"))?;
        let m: usize = get("M")?.parse().map_err(|_| perr("M"))?;
        let n_theta: usize = get("N")?.parse().map_err(|_| perr("N"))?;
        let q: WeightKind = get("q")?.parse()?;
        let b: usize = get("B")?.parse().map_err(|_| perr("B"))?;
        let seed: u64 = get("seed")?.parse().map_err(|_| perr("seed"))?;
        let mut r_nodes: Vec<f64> = Vec::new();
        let mut levels: Vec<f64> = Vec::new();
        for &(r, l, _) in &rows {
            if !r_nodes.contains(&r) {
                r_nodes.push(r);
            }
            if !levels.contains(&l) {
                levels.push(l);
            }
        }
        if rows.len() != r_nodes.len() * levels.len() || rows.is_empty() {
            return Err(Error::Parse { line: 0, message: "table is not a full (r, level) grid".into() });
        }
        let mut quantiles = vec![vec![f64::NAN; levels.len()]; r_nodes.len()];
        for &(r, l, v) in &rows {
            let i = r_nodes.iter().position(|&x| x == r).unwrap();
            let j = levels.iter().position(|&x| x == l).unwrap();
            quantiles[i][j] = v;
        }
        if r_nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Parse { line: 0, message: "parameter nodes must be increasing".into() });
        }
        Ok(CriticalValueTable {
            family,
            p,
            grid: FieldGrid { h, m, n_theta },
            q,
            b,
            seed,
            levels,
            r_nodes,
            quantiles,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

fn interpolate(nodes: &[f64], values: &[f64], r: f64) -> Lookup {
    let n = nodes.len();
    if r <= nodes[0] {
        return Lookup { value: values[0], clamped: r < nodes[0] };
    }
    if r >= nodes[n - 1] {
        return Lookup { value: values[n - 1], clamped: r > nodes[n - 1] };
    }
    let k = nodes.partition_point(|&x| x <= r);
    let (r0, r1) = (nodes[k - 1], nodes[k]);
    if r == r0 {
        return Lookup { value: values[k - 1], clamped: false };
    }
    let w = (r - r0) / (r1 - r0);
    Lookup { value: values[k - 1] + w * (values[k] - values[k - 1]), clamped: false }
}

/// Raw draws of `L_r` on a parameter grid, for p-values at interpolated
/// parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawBank {
    pub family: Family,
    pub p: PNorm,
    pub grid: FieldGrid,
    pub q: WeightKind,
    pub r_nodes: Vec<f64>,
    pub draws: Vec<Vec<f64>>,
    pub b: usize,
    pub seed: u64,
}

impl DrawBank {
    pub fn build(
        family: Family,
        p: PNorm,
        grid: FieldGrid,
        q: WeightKind,
        r_nodes: &[f64],
        b: usize,
        seed: u64,
    ) -> Result<Self> {
        if b == 0 {
            return Err(Error::InvalidParameter("number of draws must be positive".into()));
        }
        let mut draws = Vec::with_capacity(r_nodes.len());
        for &r in r_nodes {
            let sim = LimitLawSimulator::new(ModelParams::new(family, r)?, p, grid, q)?;
            draws.push(sim.simulate(b, node_seed(seed, r)).values);
        }
        Ok(DrawBank { family, p, grid, q, r_nodes: r_nodes.to_vec(), draws, b, seed })
    }

    /// True if this bank was produced with the given settings and holds
    /// every node in `nodes`.
    #[allow(clippy::too_many_arguments)]
    pub fn covers(
        &self,
        family: Family,
        p: PNorm,
        grid: &FieldGrid,
        q: WeightKind,
        b: usize,
        seed: u64,
        nodes: &[f64],
    ) -> bool {
        self.family == family
            && self.p == p
            && &self.grid == grid
            && self.q == q
            && self.b == b
            && self.seed == seed
            && nodes.iter().all(|r| self.r_nodes.contains(r))
    }

    /// p-value of `t` with linear interpolation in `r` between nodes.
    pub fn p_value(&self, r: f64, t: f64) -> Lookup {
        let pv: Vec<f64> = self.draws.iter().map(|d| p_value(d, t)).collect();
        interpolate(&self.r_nodes, &pv, r)
    }

    /// Quantile at `level`, linearly interpolated in `r`.
    pub fn quantile(&self, r: f64, level: f64) -> Result<Lookup> {
        let qs = self.draws.iter().map(|d| quantile(d, level)).collect::<Result<Vec<_>>>()?;
        Ok(interpolate(&self.r_nodes, &qs, r))
    }
}
