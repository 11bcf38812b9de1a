//! Rank-based estimation of the angular measure and of the stable tail
//! dependence function.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{constraint_f, PNorm};

/// Bivariate observations, stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct BivariateSample {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl BivariateSample {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::InvalidParameter(format!("column lengths differ: {} vs {}", x.len(), y.len())));
        }
        if x.len() < 2 {
            return Err(Error::Degenerate(format!("need at least 2 observations, got {}", x.len())));
        }
        if x.iter().chain(&y).any(|v| v.is_nan()) {
            return Err(Error::InvalidParameter("sample contains NaN".into()));
        }
        Ok(BivariateSample { x, y })
    }

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        let (x, y) = pairs.iter().copied().unzip();
        Self::new(x, y)
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }
}

/// Marginal ranks in `1..=n` and the number of tied values per margin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ranks {
    pub first: Vec<u32>,
    pub second: Vec<u32>,
    pub ties: (usize, usize),
}

impl Ranks {
    pub fn n(&self) -> usize {
        self.first.len()
    }

    /// Total number of tied observations across both margins.
    pub fn tie_count(&self) -> usize {
        self.ties.0 + self.ties.1
    }
}

/// Ranks of one column; ties are broken by order of appearance.
pub fn column_ranks(col: &[f64]) -> (Vec<u32>, usize) {
    let mut idx: Vec<usize> = (0..col.len()).collect();
    idx.sort_by(|&a, &b| col[a].total_cmp(&col[b]));
    let mut ranks = vec![0u32; col.len()];
    let mut ties = 0;
    for (pos, &i) in idx.iter().enumerate() {
        ranks[i] = pos as u32 + 1;
        if pos > 0 && col[idx[pos - 1]] == col[i] {
            ties += 1;
        }
    }
    (ranks, ties)
}

pub fn compute_ranks(sample: &BivariateSample) -> Ranks {
    let (first, t1) = column_ranks(&sample.x);
    let (second, t2) = column_ranks(&sample.y);
    Ranks { first, second, ties: (t1, t2) }
}

/// Default effective sample size `k = round(sqrt(n))`, halves rounded up,
/// kept inside `1..n`.
pub fn k_rule_sqrt(n: usize) -> usize {
    let k = ((n as f64).sqrt() + 0.5).floor() as usize;
    k.clamp(1, n.saturating_sub(1).max(1))
}

/// Exceedance test `a^{-p} + b^{-p} >= k^{-p}` with `a = n+1-R1`,
/// `b = n+1-R2`. Integer exponents use exact integer arithmetic.
pub fn exceeds(p: PNorm, a: u64, b: u64, k: u64) -> bool {
    match p {
        PNorm::Infinity => a.min(b) <= k,
        PNorm::Finite(p) => {
            if p.fract() == 0.0 && p <= 8.0 {
                let e = p as u32;
                let (a, b, k) = (a as u128, b as u128, k as u128);
                let lhs = (b * k).checked_pow(e).zip((a * k).checked_pow(e)).and_then(|(x, y)| x.checked_add(y));
                let rhs = (a * b).checked_pow(e);
                if let (Some(l), Some(r)) = (lhs, rhs) {
                    return l >= r;
                }
            }
            let m = a.min(b) as f64;
            (m / a as f64).powf(p) + (m / b as f64).powf(p) >= (m / k as f64).powf(p)
        }
    }
}

/// Exceedance angles with their weights; the estimator of the angular
/// probability measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngularDataset {
    pub n: usize,
    pub k: usize,
    pub p: PNorm,
    /// Sorted exceedance angles.
    pub angles: Vec<f64>,
    pub weights: Vec<f64>,
    pub negative_weights: bool,
    pub ties: usize,
}

impl AngularDataset {
    /// Number of exceedances `K`.
    pub fn count(&self) -> usize {
        self.angles.len()
    }

    pub fn is_degenerate(&self) -> bool {
        self.angles.is_empty()
    }

    /// Replace the uniform weights with Euclidean-likelihood weights.
    pub fn reweight(&mut self) -> Result<()> {
        let w = euclidean_weights(&self.angles, self.p)?;
        self.negative_weights = w.iter().any(|&v| v < 0.0);
        self.weights = w;
        Ok(())
    }

    /// Estimated angular mass `Φ̂(π/2) = K / k`.
    pub fn total_mass(&self) -> f64 {
        self.angles.len() as f64 / self.k as f64
    }
}

/// Select the observations whose rank vector exceeds the level `n/k` on the
/// Pareto scale, and compute their angles. Weights start uniform.
pub fn select_exceedances(sample: &BivariateSample, k: usize, p: PNorm) -> Result<AngularDataset> {
    let ranks = compute_ranks(sample);
    select_from_ranks(&ranks, k, p)
}

pub fn select_from_ranks(ranks: &Ranks, k: usize, p: PNorm) -> Result<AngularDataset> {
    let n = ranks.n();
    if k < 1 || k >= n {
        return Err(Error::InvalidParameter(format!("k must satisfy 1 <= k < n = {n}, got {k}")));
    }
    let mut angles = Vec::new();
    for (&r1, &r2) in ranks.first.iter().zip(&ranks.second) {
        let a = (n as u64 + 1) - r1 as u64;
        let b = (n as u64 + 1) - r2 as u64;
        if exceeds(p, a, b, k as u64) {
            angles.push((b as f64).atan2(a as f64));
        }
    }
    angles.sort_by(f64::total_cmp);
    let kk = angles.len();
    let weights = vec![if kk > 0 { 1.0 / kk as f64 } else { 0.0 }; kk];
    Ok(AngularDataset { n, k, p, angles, weights, negative_weights: false, ties: ranks.tie_count() })
}

/// Maximum Euclidean likelihood weights: the minimizer of
/// `Σ (K p_j - 1)^2` subject to `Σ p_j = 1` and `Σ p_j f(θ_j) = 0`.
pub fn euclidean_weights(angles: &[f64], p: PNorm) -> Result<Vec<f64>> {
    let kk = angles.len();
    if kk < 2 {
        return Err(Error::Degenerate(format!("need at least 2 exceedances, got {kk}")));
    }
    let kf = kk as f64;
    let f: Vec<f64> = angles.iter().map(|&t| constraint_f(p, t)).collect();
    let mean = f.iter().sum::<f64>() / kf;
    let var = f.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / kf;
    if !(var > 1e-20) {
        return Err(Error::Degenerate("constraint values have zero variance (all angles equal)".into()));
    }
    let mut w: Vec<f64> = f.iter().map(|v| (1.0 - mean / var * (v - mean)) / kf).collect();

    // One Newton step on the two constraints removes rounding residue.
    let s1: f64 = f.iter().sum();
    let s2: f64 = f.iter().map(|v| v * v).sum();
    for _ in 0..2 {
        let e1 = 1.0 - w.iter().sum::<f64>();
        let e2 = -w.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>();
        let det = kf * s2 - s1 * s1;
        let c1 = (s2 * e1 - s1 * e2) / det;
        let c2 = (kf * e2 - s1 * e1) / det;
        for (wj, fj) in w.iter_mut().zip(&f) {
            *wj += c1 + c2 * fj;
        }
    }
    Ok(w)
}

/// Right-continuous step CDF on `[0, π/2]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepCdf {
    jumps: Vec<f64>,
    cum: Vec<f64>,
}

impl StepCdf {
    /// Build from jump locations and masses; equal locations are merged.
    pub fn new(locations: &[f64], masses: &[f64]) -> Result<Self> {
        if locations.len() != masses.len() {
            return Err(Error::InvalidParameter("locations and masses differ in length".into()));
        }
        if locations.iter().any(|&t| !(0.0..=FRAC_PI_2).contains(&t)) {
            return Err(Error::Domain("jump locations must lie in [0, π/2]".into()));
        }
        let mut order: Vec<usize> = (0..locations.len()).collect();
        order.sort_by(|&a, &b| locations[a].total_cmp(&locations[b]));
        let mut jumps: Vec<f64> = Vec::with_capacity(order.len());
        let mut cum: Vec<f64> = Vec::with_capacity(order.len());
        let mut acc = 0.0;
        for i in order {
            acc += masses[i];
            if jumps.last() == Some(&locations[i]) {
                *cum.last_mut().unwrap() = acc;
            } else {
                jumps.push(locations[i]);
                cum.push(acc);
            }
        }
        Ok(StepCdf { jumps, cum })
    }

    pub fn eval(&self, theta: f64) -> f64 {
        let i = self.jumps.partition_point(|&x| x <= theta);
        if i == 0 {
            0.0
        } else {
            self.cum[i - 1]
        }
    }

    pub fn jumps(&self) -> &[f64] {
        &self.jumps
    }

    /// Total mass (value right of the last jump).
    pub fn total(&self) -> f64 {
        self.cum.last().copied().unwrap_or(0.0)
    }
}

/// Step CDF of the dataset: uniform masses `1/K`, or the stored
/// Euclidean-likelihood weights when `reweighted` is set.
pub fn empirical_angular_cdf(dataset: &AngularDataset, reweighted: bool) -> Result<StepCdf> {
    if dataset.is_degenerate() {
        return Err(Error::Degenerate("no exceedances".into()));
    }
    let kk = dataset.count();
    let masses: Vec<f64> = if reweighted { dataset.weights.clone() } else { vec![1.0 / kk as f64; kk] };
    StepCdf::new(&dataset.angles, &masses)
}

/// Rank-based estimate `(1/k) #{R1 > n + 1/2 - k x1 or R2 > n + 1/2 - k x2}`.
pub fn empirical_stdf(ranks: &Ranks, k: usize, x1: f64, x2: f64) -> f64 {
    let n = ranks.n() as f64;
    let kf = k as f64;
    let c1 = n + 0.5 - kf * x1;
    let c2 = n + 0.5 - kf * x2;
    let count = ranks
        .first
        .iter()
        .zip(&ranks.second)
        .filter(|(&a, &b)| a as f64 > c1 || b as f64 > c2)
        .count();
    count as f64 / kf
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_4;

    const P1: PNorm = PNorm::Finite(1.0);
    const P2: PNorm = PNorm::Finite(2.0);

    #[test]
    fn rank_examples() {
        assert_eq!(column_ranks(&[3.2, 1.1, 7.5]).0, vec![2, 1, 3]);
        assert_eq!(column_ranks(&[1.0, 2.0, 3.0, 4.0]).0, vec![1, 2, 3, 4]);
        let (r, t) = column_ranks(&[5.0, 5.0, 1.0]);
        assert_eq!(r, vec![2, 3, 1]);
        assert_eq!(t, 1);
    }

    #[test]
    fn k_rule() {
        assert_eq!(k_rule_sqrt(428), 21);
        assert_eq!(k_rule_sqrt(3000), 55);
        assert_eq!(k_rule_sqrt(10000), 100);
        assert_eq!(k_rule_sqrt(2), 1);
    }

    #[test]
    fn all_points_exceed_when_k_is_large() {
        let s = BivariateSample::from_pairs(&[(0.1, 0.5), (0.7, 0.2), (0.4, 0.9)]).unwrap();
        // k must be below n; with k = n - 1 = 2 and p = 1, the point with
        // ranks (1,2) gives a = 3, b = 2: 1/3 + 1/2 >= 1/2.
        let d = select_exceedances(&s, 2, P1).unwrap();
        assert_eq!(d.count(), 3);
        // Direct indicator count oracle for the k = n boundary case.
        let ranks = compute_ranks(&s);
        let count = ranks
            .first
            .iter()
            .zip(&ranks.second)
            .filter(|(&r1, &r2)| exceeds(P1, 4 - r1 as u64, 4 - r2 as u64, 3))
            .count();
        assert_eq!(count, 3);
    }

    #[test]
    fn top_point_has_diagonal_angle() {
        let s = BivariateSample::from_pairs(&[(1.0, 1.0), (2.0, 3.0), (9.0, 9.0), (0.0, 2.0)]).unwrap();
        let d = select_exceedances(&s, 1, P2).unwrap();
        assert_eq!(d.angles, vec![FRAC_PI_4]);
    }

    #[test]
    fn sup_norm_indicator_matches_limit_of_large_p() {
        let xs: Vec<f64> = (0..20).map(|i| ((i * 7919) % 20) as f64).collect();
        let ys: Vec<f64> = (0..20).map(|i| ((i * 104_729 + 3) % 20) as f64).collect();
        let s = BivariateSample::new(xs, ys).unwrap();
        let ranks = compute_ranks(&s);
        for k in 1..20u64 {
            for (&r1, &r2) in ranks.first.iter().zip(&ranks.second) {
                let (a, b) = (21 - r1 as u64, 21 - r2 as u64);
                let direct = (1.0 / a as f64).max(1.0 / b as f64) >= 1.0 / k as f64;
                assert_eq!(exceeds(PNorm::Infinity, a, b, k), direct);
            }
        }
    }

    #[test]
    fn integer_and_float_exceedance_paths_agree() {
        for a in 1..40u64 {
            for b in 1..40u64 {
                for k in [1u64, 5, 13, 30] {
                    let float = (a as f64).powi(-2) + (b as f64).powi(-2) >= (k as f64).powi(-2);
                    let m = a.min(b) as f64;
                    let scaled = (m / a as f64).powf(2.0) + (m / b as f64).powf(2.0) >= (m / k as f64).powf(2.0);
                    let exact = exceeds(P2, a, b, k);
                    // Floating forms may disagree only on exact ties.
                    if float == scaled {
                        assert_eq!(exact, float, "{a} {b} {k}");
                    }
                }
            }
        }
        // An exact tie: 1/5^2 + ... choose a = b = k*sqrt2 impossible; use p = 1: 1/4 + 1/4 = 1/2.
        assert!(exceeds(P1, 4, 4, 2));
    }

    #[test]
    fn two_angle_displays_agree() {
        let xs: Vec<f64> = (0..50).map(|i| ((i * 37) % 50) as f64 + 0.5).collect();
        let ys: Vec<f64> = (0..50).map(|i| ((i * 11 + 7) % 50) as f64 * 1.1).collect();
        let s = BivariateSample::new(xs.clone(), ys.clone()).unwrap();
        let n = 50.0;
        let ranks = compute_ranks(&s);
        let d = select_exceedances(&s, 8, P2).unwrap();
        let mut via_survival: Vec<f64> = Vec::new();
        for i in 0..50 {
            let sf1 = (n + 1.0 - ranks.first[i] as f64) / n;
            let sf2 = (n + 1.0 - ranks.second[i] as f64) / n;
            if (1.0 / sf1).powi(2) + (1.0 / sf2).powi(2) >= (n / 8.0) * (n / 8.0) - 1e-9 {
                via_survival.push((sf2 / sf1).atan());
            }
        }
        via_survival.sort_by(f64::total_cmp);
        assert_eq!(via_survival.len(), d.count());
        for (a, b) in via_survival.iter().zip(&d.angles) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn symmetric_angles_keep_uniform_weights() {
        let angles = [0.3, FRAC_PI_4, FRAC_PI_2 - 0.3];
        let w = euclidean_weights(&angles, P2).unwrap();
        for v in w {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    /// Direct solve of the KKT system of the constrained quadratic program.
    fn kkt_weights(angles: &[f64], p: PNorm) -> Vec<f64> {
        let k = angles.len();
        let kf = k as f64;
        let f: Vec<f64> = angles.iter().map(|&t| constraint_f(p, t)).collect();
        // Unknowns: p_1..p_K, mu, nu. Stationarity: K^2 p_j - K + mu + nu f_j = 0.
        let dim = k + 2;
        let mut a = vec![vec![0.0; dim + 1]; dim];
        for j in 0..k {
            a[j][j] = kf * kf;
            a[j][k] = 1.0;
            a[j][k + 1] = f[j];
            a[j][dim] = kf;
            a[k][j] = 1.0;
            a[k + 1][j] = f[j];
        }
        a[k][dim] = 1.0;
        a[k + 1][dim] = 0.0;
        // Gaussian elimination with partial pivoting.
        for c in 0..dim {
            let piv = (c..dim).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs())).unwrap();
            a.swap(c, piv);
            let pivot = a[c].clone();
            for (r, row) in a.iter_mut().enumerate() {
                if r != c {
                    let m = row[c] / pivot[c];
                    for (x, y) in row[c..].iter_mut().zip(&pivot[c..]) {
                        *x -= m * y;
                    }
                }
            }
        }
        (0..k).map(|j| a[j][dim] / a[j][j]).collect()
    }

    #[test]
    fn weights_match_kkt_solution() {
        let angles = [0.3, 0.8, 1.2];
        let w = euclidean_weights(&angles, P2).unwrap();
        let oracle = kkt_weights(&angles, P2);
        for (a, b) in w.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-8);
        }
        let two = euclidean_weights(&[0.2, 1.0], P1).unwrap();
        let f: Vec<f64> = [0.2, 1.0].iter().map(|&t| constraint_f(P1, t)).collect();
        assert!((two[0] + two[1] - 1.0).abs() < 1e-15);
        assert!((two[0] * f[0] + two[1] * f[1]).abs() < 1e-15);
    }

    #[test]
    fn equal_angles_are_degenerate() {
        assert!(matches!(euclidean_weights(&[FRAC_PI_4; 5], P2), Err(Error::Degenerate(_))));
        assert!(matches!(euclidean_weights(&[0.3], P2), Err(Error::Degenerate(_))));
    }

    #[test]
    fn step_cdf_examples() {
        let f = StepCdf::new(&[FRAC_PI_4], &[1.0]).unwrap();
        assert_eq!(f.eval(FRAC_PI_4 - 1e-12), 0.0);
        assert_eq!(f.eval(FRAC_PI_4), 1.0);
        let angles = [0.3, 0.8, 1.2];
        let w = euclidean_weights(&angles, P2).unwrap();
        let g = StepCdf::new(&angles, &w).unwrap();
        assert!((g.eval(0.8) - (w[0] + w[1])).abs() < 1e-15);
        let ds = AngularDataset {
            n: 10,
            k: 3,
            p: P2,
            angles: angles.to_vec(),
            weights: w,
            negative_weights: false,
            ties: 0,
        };
        let u = empirical_angular_cdf(&ds, false).unwrap();
        assert!((u.eval(1.2) - 1.0).abs() < 1e-15);
        let merged = StepCdf::new(&[0.5, 0.5, 0.1], &[0.25, 0.25, 0.5]).unwrap();
        assert_eq!(merged.jumps(), &[0.1, 0.5]);
        assert_eq!(merged.eval(0.5), 1.0);
    }

    fn fixed_sample() -> BivariateSample {
        let x = vec![0.3, 1.2, -0.5, 2.2, 0.9, 1.7, -1.1, 0.1, 3.0, 0.6];
        let y = vec![1.0, 0.2, -0.3, 2.5, 1.4, -0.8, 0.4, 0.0, 1.9, 2.8];
        BivariateSample::new(x, y).unwrap()
    }

    #[test]
    fn empirical_stdf_examples() {
        let s = fixed_sample();
        let r = compute_ranks(&s);
        for k in 1..10 {
            for &x1 in &[0.0, 0.5, 1.0, 2.0] {
                let threshold = 10.0 + 0.5 - k as f64 * x1;
                let count = r.first.iter().filter(|&&a| a as f64 > threshold).count();
                assert_eq!(empirical_stdf(&r, k, x1, 0.0), count as f64 / k as f64);
            }
            assert_eq!(empirical_stdf(&r, k, 0.0, 0.0), 0.0);
        }
        let z: Vec<f64> = (0..20).map(|i| (i as f64 * 1.7).sin()).collect();
        let c = BivariateSample::new(z.clone(), z).unwrap();
        let rc = compute_ranks(&c);
        assert_eq!(empirical_stdf(&rc, 5, 1.0, 1.0), empirical_stdf(&rc, 5, 1.0, 0.0));
    }

    #[test]
    fn degenerate_k_rejected() {
        let s = fixed_sample();
        assert!(select_exceedances(&s, 0, P2).is_err());
        assert!(select_exceedances(&s, 10, P2).is_err());
    }
}
