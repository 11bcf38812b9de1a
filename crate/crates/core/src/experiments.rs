//! Orchestration: single tests, power studies with shared critical values,
//! multi-pair analyses and multiple-testing corrections.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::CopulaSpec;
use crate::empirical::{compute_ranks, empirical_stdf, k_rule_sqrt, select_from_ranks, BivariateSample};
use crate::error::{Error, Result};
use crate::geometry::{PNorm, WeightKind};
use crate::limitlaw::{covering_nodes, CriticalValueTable, DrawBank, FieldGrid, LimitLawSimulator};
use crate::models::{estimate_param, AngularModel, Family};
use crate::rng::derive_seed;
use crate::wasserstein::test_statistic;

/// Levels at which single-test reports list critical values.
pub const REPORT_LEVELS: [f64; 3] = [0.90, 0.95, 0.99];

const DATA_LABEL: u64 = 0xDA7A;
const PAIR_LABEL: u64 = 0x9A1;

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("alpha must be in (0, 1), got {alpha}")))
    }
}

/// Rule for the number of tail observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KRule {
    Fixed(usize),
    /// `round(√n)`.
    Sqrt,
}

impl KRule {
    pub fn resolve(&self, n: usize) -> usize {
        match self {
            KRule::Fixed(k) => *k,
            KRule::Sqrt => k_rule_sqrt(n),
        }
    }
}

impl fmt::Display for KRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KRule::Fixed(k) => write!(f, "{k}"),
            KRule::Sqrt => f.write_str("sqrt"),
        }
    }
}

impl FromStr for KRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("sqrt") {
            return Ok(KRule::Sqrt);
        }
        t.parse::<usize>()
            .map(KRule::Fixed)
            .map_err(|_| Error::InvalidParameter(format!("k must be a positive integer or 'sqrt', got '{s}'")))
    }
}

/// Settings of a single goodness-of-fit test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestConfig {
    pub family: Family,
    pub k: KRule,
    pub p: PNorm,
    pub q: WeightKind,
    /// Number of limit-law draws.
    pub b: usize,
    pub seed: u64,
    pub grid: FieldGrid,
}

impl TestConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.b == 0 {
            return Err(Error::InvalidParameter("number of limit-law draws must be positive".into()));
        }
        if let KRule::Fixed(0) = self.k {
            return Err(Error::InvalidParameter("k must be at least 1".into()));
        }
        if let PNorm::Finite(p) = self.p {
            if !(p >= 1.0) {
                return Err(Error::InvalidParameter(format!("p must be >= 1, got {p}")));
            }
        }
        Ok(())
    }
}

/// Outcome class of a test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestStatus {
    Ok,
    /// Too few exceedances or a constant constraint function.
    Degenerate,
    Failed,
}

/// Parameter fit and test statistic of one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    pub n: usize,
    pub k: usize,
    pub exceedances: usize,
    pub ties: usize,
    pub ell_hat: f64,
    pub r_hat: f64,
    pub r_clamped: bool,
    pub negative_weights: bool,
    pub statistic: f64,
}

/// Ranks, exceedances, weights, parameter estimate and test statistic.
pub fn fit_statistic(sample: &BivariateSample, family: Family, k: usize, p: PNorm, q: WeightKind) -> Result<Fit> {
    let ranks = compute_ranks(sample);
    let mut ds = select_from_ranks(&ranks, k, p)?;
    if ds.count() < 2 {
        return Err(Error::Degenerate(format!("only {} exceedances", ds.count())));
    }
    ds.reweight()?;
    let ell_hat = empirical_stdf(&ranks, k, 1.0, 1.0);
    let est = estimate_param(family, ell_hat)?;
    let model = AngularModel::new(est.params, p)?;
    let stat = test_statistic(&ds, &model, q)?;
    Ok(Fit {
        n: ranks.n(),
        k,
        exceedances: ds.count(),
        ties: ds.ties,
        ell_hat,
        r_hat: est.params.r,
        r_clamped: est.clamped,
        negative_weights: ds.negative_weights,
        statistic: stat.value,
    })
}

/// A critical value at one level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalValue {
    pub level: f64,
    pub value: f64,
}

/// Result of a single goodness-of-fit test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub status: TestStatus,
    pub message: Option<String>,
    pub error_class: Option<String>,
    pub config: TestConfig,
    pub fit: Option<Fit>,
    pub p_value: Option<f64>,
    pub critical_values: Vec<CriticalValue>,
    pub gradient_clamped: bool,
}

impl TestReport {
    fn failure(config: &TestConfig, fit: Option<Fit>, e: Error) -> Self {
        let status = if matches!(e, Error::Degenerate(_)) { TestStatus::Degenerate } else { TestStatus::Failed };
        TestReport {
            status,
            message: Some(e.to_string()),
            error_class: Some(e.class().to_string()),
            config: config.clone(),
            fit,
            p_value: None,
            critical_values: Vec::new(),
            gradient_clamped: false,
        }
    }

    /// Critical value at `level`, if reported.
    pub fn critical_value(&self, level: f64) -> Option<f64> {
        self.critical_values.iter().find(|c| (c.level - level).abs() < 1e-12).map(|c| c.value)
    }
}

/// Full test: fit, then `B` fresh draws of the limit law at the fitted
/// parameter for the p-value and critical values. Configuration errors are
/// returned; data problems yield a report with a non-ok status.
pub fn run_single_test(sample: &BivariateSample, config: &TestConfig) -> Result<TestReport> {
    config.validate()?;
    let k = config.k.resolve(sample.len());
    if k < 1 || k >= sample.len() {
        return Err(Error::InvalidParameter(format!("k must satisfy 1 <= k < n = {}, got {k}", sample.len())));
    }
    let fit = match fit_statistic(sample, config.family, k, config.p, config.q) {
        Ok(f) => f,
        Err(e) => return Ok(TestReport::failure(config, None, e)),
    };
    let sim = match crate::models::ModelParams::new(config.family, fit.r_hat)
        .and_then(|m| LimitLawSimulator::new(m, config.p, config.grid, config.q))
    {
        Ok(s) => s,
        Err(e) => return Ok(TestReport::failure(config, Some(fit), e)),
    };
    let draws = sim.simulate(config.b, config.seed);
    let critical_values = REPORT_LEVELS
        .iter()
        .map(|&level| draws.quantile(level).map(|value| CriticalValue { level, value }))
        .collect::<Result<Vec<_>>>()?;
    Ok(TestReport {
        status: TestStatus::Ok,
        message: None,
        error_class: None,
        config: config.clone(),
        fit: Some(fit),
        p_value: Some(draws.p_value(fit.statistic)),
        critical_values,
        gradient_clamped: sim.gradient_clamped(),
    })
}

/// A simulation study over mixture weights: data follow
/// `(1 - λ) base + λ alt`, and the null model is `family`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub family: Family,
    pub base: CopulaSpec,
    pub alt: CopulaSpec,
    pub lambdas: Vec<f64>,
    pub n: usize,
    pub k: usize,
    pub p: PNorm,
    pub q: WeightKind,
    /// Limit-law draws per parameter node of the critical-value table.
    pub b: usize,
    pub replications: usize,
    pub alpha: f64,
    pub seed: u64,
    pub grid: FieldGrid,
}

impl ScenarioConfig {
    /// Every validation failure, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Err(e) = self.grid.validate() {
            out.push(e.to_string());
        }
        if !(self.k >= 1 && self.k < self.n) {
            out.push(format!("k must satisfy 1 <= k < n, got k={} n={}", self.k, self.n));
        }
        if let Err(e) = check_alpha(self.alpha) {
            out.push(e.to_string());
        }
        if self.b == 0 {
            out.push("number of limit-law draws must be positive".into());
        }
        if self.replications == 0 {
            out.push("number of replications must be positive".into());
        }
        if self.lambdas.is_empty() {
            out.push("no mixture weights given".into());
        }
        for &l in &self.lambdas {
            if !(0.0..=1.0).contains(&l) {
                out.push(format!("mixture weight {l} is outside [0, 1]"));
            }
        }
        if let Err(e) = self.base.validate().and(self.alt.validate()) {
            out.push(e.to_string());
        }
        if !self.p.is_finite() {
            out.push("the limit-law simulator needs a finite p".into());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(p.join("; ")))
        }
    }

    /// Data-generating copula at mixture weight `λ`.
    pub fn spec_at(&self, lambda: f64) -> Result<CopulaSpec> {
        if lambda == 0.0 {
            return Ok(self.base.clone());
        }
        CopulaSpec::mixture(lambda, self.base.clone(), self.alt.clone())
    }

    /// Seed of the sample for weight index `i` and replicate `rep`.
    pub fn data_seed(&self, i: usize, rep: usize) -> u64 {
        derive_seed(self.seed, &[DATA_LABEL, i as u64, rep as u64])
    }
}

/// One replicate of a power study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub lambda: f64,
    pub replicate: usize,
    pub statistic: Option<f64>,
    pub r_hat: Option<f64>,
    pub critical_value: Option<f64>,
    pub reject: Option<bool>,
    pub error: Option<String>,
}

/// Rejection rates over mixture weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerCurve {
    pub config: ScenarioConfig,
    pub lambdas: Vec<f64>,
    pub rates: Vec<f64>,
    /// Successful replicates per weight.
    pub reps: Vec<usize>,
    pub failures: Vec<usize>,
    /// `√(rate (1 - rate) / reps)`.
    pub se: Vec<f64>,
    pub r_nodes: Vec<f64>,
    pub clamped_lookups: usize,
    pub warnings: Vec<String>,
    pub replicates: Vec<ReplicateRecord>,
}

/// Simulated data for every (weight, replicate), tested against one shared
/// critical-value table on parameter nodes covering all estimates. A
/// supplied table is used when it was built with the same settings and
/// holds every needed node; results are then identical to building it.
pub fn run_power_study(config: &ScenarioConfig, cached: Option<&CriticalValueTable>) -> Result<PowerCurve> {
    config.validate()?;
    let jobs: Vec<(usize, usize)> =
        (0..config.lambdas.len()).flat_map(|i| (0..config.replications).map(move |r| (i, r))).collect();
    let fits: Vec<Result<Fit>> = jobs
        .par_iter()
        .map(|&(i, rep)| {
            let spec = config.spec_at(config.lambdas[i])?;
            let sample = spec.sample(config.n, config.data_seed(i, rep))?;
            fit_statistic(&sample, config.family, config.k, config.p, config.q)
        })
        .collect();

    let rs: Vec<f64> = fits.iter().filter_map(|f| f.as_ref().ok().map(|f| f.r_hat)).collect();
    let mut warnings = Vec::new();
    let level = 1.0 - config.alpha;
    let (r_nodes, table) = if rs.is_empty() {
        warnings.push("every replicate failed".into());
        (Vec::new(), None)
    } else {
        let lo = rs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = rs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let nodes = covering_nodes(config.family, lo, hi);
        let usable = cached.filter(|t| {
            t.matches(config.family, config.p, &config.grid, config.q, config.b, config.seed)
                && t.levels.iter().any(|&l| (l - level).abs() < 1e-12)
                && nodes.iter().all(|r| t.r_nodes.contains(r))
        });
        if cached.is_some() && usable.is_none() {
            warnings.push("cached critical values do not match this study; recomputed".into());
        }
        let table = match usable {
            Some(t) => t.clone(),
            None => CriticalValueTable::build(
                config.family,
                config.p,
                config.grid,
                config.q,
                &nodes,
                &[level],
                config.b,
                config.seed,
            )?,
        };
        (nodes, Some(table))
    };

    let mut replicates = Vec::with_capacity(jobs.len());
    let nl = config.lambdas.len();
    let (mut rejects, mut reps, mut failures) = (vec![0usize; nl], vec![0usize; nl], vec![0usize; nl]);
    let mut clamped_lookups = 0;
    for (&(i, rep), fit) in jobs.iter().zip(&fits) {
        let lambda = config.lambdas[i];
        match (fit, &table) {
            (Ok(f), Some(t)) => {
                let c = t.lookup(f.r_hat, level)?;
                if c.clamped {
                    clamped_lookups += 1;
                }
                let reject = f.statistic > c.value;
                reps[i] += 1;
                rejects[i] += reject as usize;
                replicates.push(ReplicateRecord {
                    lambda,
                    replicate: rep,
                    statistic: Some(f.statistic),
                    r_hat: Some(f.r_hat),
                    critical_value: Some(c.value),
                    reject: Some(reject),
                    error: None,
                });
            }
            (Err(e), _) => {
                failures[i] += 1;
                replicates.push(ReplicateRecord {
                    lambda,
                    replicate: rep,
                    statistic: None,
                    r_hat: None,
                    critical_value: None,
                    reject: None,
                    error: Some(e.to_string()),
                });
            }
            (Ok(_), None) => unreachable!("a table exists whenever a fit succeeded"),
        }
    }
    for (i, &f) in failures.iter().enumerate() {
        if f > 0 {
            warnings.push(format!("{f} replicates failed at lambda = {} and were excluded", config.lambdas[i]));
        }
    }
    if clamped_lookups > 0 {
        warnings.push(format!("{clamped_lookups} estimates fell outside the tabulated parameter range"));
    }
    let rates: Vec<f64> =
        (0..nl).map(|i| if reps[i] > 0 { rejects[i] as f64 / reps[i] as f64 } else { f64::NAN }).collect();
    let se = (0..nl).map(|i| (rates[i] * (1.0 - rates[i]) / reps[i] as f64).sqrt()).collect();
    Ok(PowerCurve {
        config: config.clone(),
        lambdas: config.lambdas.clone(),
        rates,
        reps,
        failures,
        se,
        r_nodes,
        clamped_lookups,
        warnings,
        replicates,
    })
}

/// Reject hypothesis `j` when `p_j <= α / m`.
pub fn bonferroni(pvalues: &[f64], alpha: f64) -> Vec<bool> {
    let m = pvalues.len() as f64;
    pvalues.iter().map(|&p| p <= alpha / m).collect()
}

/// Benjamini–Hochberg step-up procedure. The dependent variant divides
/// `α` by the harmonic number `Σ_{i<=m} 1/i`.
pub fn benjamini_hochberg(pvalues: &[f64], alpha: f64, dependent: bool) -> Vec<bool> {
    let m = pvalues.len();
    if m == 0 {
        return Vec::new();
    }
    let a = if dependent { alpha / (1..=m).map(|i| 1.0 / i as f64).sum::<f64>() } else { alpha };
    let mut sorted: Vec<f64> = pvalues.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cut = (1..=m).rev().find(|&i| sorted[i - 1] <= i as f64 * a / m as f64).map(|i| sorted[i - 1]);
    match cut {
        Some(c) => pvalues.iter().map(|&p| p <= c).collect(),
        None => vec![false; m],
    }
}

/// Columns of a data table; `NaN` marks a missing value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataTable {
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl DataTable {
    pub fn new(names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::InvalidParameter("one name per column required".into()));
        }
        if columns.len() < 2 {
            return Err(Error::InvalidParameter("need at least 2 columns".into()));
        }
        let n = columns[0].len();
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::InvalidParameter("columns have different lengths".into()));
        }
        Ok(DataTable { names, columns })
    }

    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, |c| c.len())
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Number of missing cells.
    pub fn missing(&self) -> usize {
        self.columns.iter().map(|c| c.iter().filter(|v| v.is_nan()).count()).sum()
    }

    /// Rows where both columns are present.
    pub fn complete_pair(&self, i: usize, j: usize) -> Result<BivariateSample> {
        let (a, b) = (&self.columns[i], &self.columns[j]);
        let (x, y): (Vec<f64>, Vec<f64>) =
            a.iter().zip(b).filter(|(u, v)| !u.is_nan() && !v.is_nan()).map(|(u, v)| (*u, *v)).unzip();
        BivariateSample::new(x, y)
    }
}

/// How pair p-values are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueSource {
    /// `B` fresh draws at each fitted parameter.
    Fresh,
    /// One bank of `B` draws per parameter node covering all fits; p-values
    /// are interpolated linearly in the parameter.
    Bank,
}

/// Settings of a multi-pair analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseConfig {
    pub family: Family,
    pub k: KRule,
    pub p: PNorm,
    pub q: WeightKind,
    pub b: usize,
    pub alpha: f64,
    pub seed: u64,
    pub grid: FieldGrid,
    pub source: PValueSource,
}

impl PairwiseConfig {
    fn test_config(&self, pair: usize) -> TestConfig {
        TestConfig {
            family: self.family,
            k: self.k,
            p: self.p,
            q: self.q,
            b: self.b,
            seed: derive_seed(self.seed, &[PAIR_LABEL, pair as u64]),
            grid: self.grid,
        }
    }
}

/// One analyzed pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    pub id: String,
    pub first: String,
    pub second: String,
    pub n: usize,
    pub k: usize,
    pub exceedances: Option<usize>,
    pub r_hat: Option<f64>,
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
    pub status: TestStatus,
    pub message: Option<String>,
}

/// Per-pair results with corrected decisions. Corrections run over the
/// pairs that produced a p-value; the others are never rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiTestReport {
    pub config: PairwiseConfig,
    pub pairs: Vec<PairResult>,
    pub tested: usize,
    pub bonferroni: Vec<bool>,
    pub bh_independent: Vec<bool>,
    pub bh_dependent: Vec<bool>,
}

impl MultiTestReport {
    /// Ids of the pairs rejected by the Bonferroni correction.
    pub fn bonferroni_rejections(&self) -> Vec<&str> {
        self.pairs.iter().zip(&self.bonferroni).filter(|(_, r)| **r).map(|(p, _)| p.id.as_str()).collect()
    }
}

fn corrected(pairs: &[PairResult], f: impl Fn(&[f64]) -> Vec<bool>) -> Vec<bool> {
    let idx: Vec<usize> = (0..pairs.len()).filter(|&i| pairs[i].p_value.is_some()).collect();
    let pv: Vec<f64> = idx.iter().map(|&i| pairs[i].p_value.unwrap()).collect();
    let dec = f(&pv);
    let mut out = vec![false; pairs.len()];
    for (d, &i) in dec.into_iter().zip(&idx) {
        out[i] = d;
    }
    out
}

/// Test every listed column pair on its complete cases. With
/// [`PValueSource::Bank`], a supplied bank is reused when it matches the
/// settings and holds every needed node; results equal those of a fresh bank.
pub fn run_pairwise_analysis(
    table: &DataTable,
    pairs: &[(usize, usize)],
    config: &PairwiseConfig,
    bank: Option<&DrawBank>,
) -> Result<MultiTestReport> {
    check_alpha(config.alpha)?;
    config.test_config(0).validate()?;
    for &(i, j) in pairs {
        if i >= table.columns.len() || j >= table.columns.len() {
            return Err(Error::InvalidParameter(format!("pair ({i}, {j}) references a missing column")));
        }
    }
    let results: Vec<PairResult> = match config.source {
        PValueSource::Fresh => pairs
            .par_iter()
            .enumerate()
            .map(|(idx, &(i, j))| {
                let id = format!("{}-{}", table.names[i], table.names[j]);
                let base = PairResult {
                    id,
                    first: table.names[i].clone(),
                    second: table.names[j].clone(),
                    n: 0,
                    k: 0,
                    exceedances: None,
                    r_hat: None,
                    statistic: None,
                    p_value: None,
                    status: TestStatus::Failed,
                    message: None,
                };
                let out = table.complete_pair(i, j).and_then(|s| {
                    let n = s.len();
                    run_single_test(&s, &config.test_config(idx)).map(|r| (n, r))
                });
                match out {
                    Ok((n, r)) => PairResult {
                        n,
                        k: config.k.resolve(n),
                        exceedances: r.fit.map(|f| f.exceedances),
                        r_hat: r.fit.map(|f| f.r_hat),
                        statistic: r.fit.map(|f| f.statistic),
                        p_value: r.p_value,
                        status: r.status,
                        message: r.message,
                        ..base
                    },
                    Err(e) => PairResult { message: Some(e.to_string()), ..base },
                }
            })
            .collect(),
        PValueSource::Bank => {
            let fits: Vec<(usize, usize, Result<Fit>)> = pairs
                .par_iter()
                .map(|&(i, j)| match table.complete_pair(i, j) {
                    Ok(s) => {
                        let n = s.len();
                        let k = config.k.resolve(n);
                        (n, k, fit_statistic(&s, config.family, k, config.p, config.q))
                    }
                    Err(e) => (0, 0, Err(e)),
                })
                .collect();
            let rs: Vec<f64> = fits.iter().filter_map(|(_, _, f)| f.as_ref().ok().map(|f| f.r_hat)).collect();
            let supplied = bank;
            let bank = if rs.is_empty() {
                None
            } else {
                let lo = rs.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = rs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let nodes = covering_nodes(config.family, lo, hi);
                match supplied.filter(|b| {
                    b.covers(config.family, config.p, &config.grid, config.q, config.b, config.seed, &nodes)
                }) {
                    Some(b) => Some(b.clone()),
                    None => Some(DrawBank::build(
                        config.family,
                        config.p,
                        config.grid,
                        config.q,
                        &nodes,
                        config.b,
                        config.seed,
                    )?),
                }
            };
            pairs
                .iter()
                .zip(fits)
                .map(|(&(i, j), (n, k, fit))| {
                    let base = PairResult {
                        id: format!("{}-{}", table.names[i], table.names[j]),
                        first: table.names[i].clone(),
                        second: table.names[j].clone(),
                        n,
                        k,
                        exceedances: None,
                        r_hat: None,
                        statistic: None,
                        p_value: None,
                        status: TestStatus::Failed,
                        message: None,
                    };
                    match fit {
                        Ok(f) => PairResult {
                            exceedances: Some(f.exceedances),
                            r_hat: Some(f.r_hat),
                            statistic: Some(f.statistic),
                            p_value: bank.as_ref().map(|b| b.p_value(f.r_hat, f.statistic).value),
                            status: TestStatus::Ok,
                            ..base
                        },
                        Err(e) => PairResult {
                            status: if matches!(e, Error::Degenerate(_)) {
                                TestStatus::Degenerate
                            } else {
                                TestStatus::Failed
                            },
                            message: Some(e.to_string()),
                            ..base
                        },
                    }
                })
                .collect()
        }
    };
    let alpha = config.alpha;
    Ok(MultiTestReport {
        config: config.clone(),
        tested: results.iter().filter(|r| r.p_value.is_some()).count(),
        bonferroni: corrected(&results, |p| bonferroni(p, alpha)),
        bh_independent: corrected(&results, |p| benjamini_hochberg(p, alpha, false)),
        bh_dependent: corrected(&results, |p| benjamini_hochberg(p, alpha, true)),
        pairs: results,
    })
}
