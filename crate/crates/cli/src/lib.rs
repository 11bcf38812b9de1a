//! Command-line front end: data ingestion, the subcommands and their
//! artifacts.

// Negated float comparisons are used on purpose so that NaN fails checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use angof::experiments::{
    run_pairwise_analysis, run_power_study, run_single_test, DataTable, KRule, MultiTestReport, PValueSource,
    PairwiseConfig, PowerCurve, ScenarioConfig, TestConfig, TestReport, TestStatus,
};
use angof::limitlaw::{round12, CriticalValueTable, GridPreset};
use angof::{CopulaSpec, Family, PNorm, WeightKind};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors of the command-line layer.
#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] angof::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
}

impl CliError {
    /// Machine-readable error class.
    pub fn class(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.class(),
            CliError::Csv(_) => "parse",
            CliError::Json(_) => "parse",
            CliError::Config(_) => "invalid_config",
            CliError::File { .. } => "io",
        }
    }

    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self.class() {
            "invalid_config" | "invalid_parameter" | "domain" => 2,
            "parse" | "degenerate_data" => 3,
            "quadrature" | "root_finding" | "model_evaluation" | "unsupported" => 4,
            "io" => 5,
            _ => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Exit status of a test whose report was written but is not ok.
pub const EXIT_REPORT_NOT_OK: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "angof", version, about = "Goodness-of-fit tests for bivariate extremal dependence models")]
pub struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Test one pair of columns against a parametric model.
    Test(TestArgs),
    /// Rejection rates over mixture weights on simulated data.
    Power(PowerArgs),
    /// Tabulate limit-law quantiles into a cache file.
    Quantiles(QuantilesArgs),
    /// Test many column pairs with multiple-testing corrections.
    Pairs(PairsArgs),
    /// Write a simulated sample from a copula as CSV.
    Generate(GenerateArgs),
}

#[derive(Debug, Args, Clone)]
pub struct ModelArgs {
    /// Null model family: logistic or hr.
    #[arg(long, default_value = "logistic")]
    pub family: Family,
    /// Norm index (real >= 1 or inf).
    #[arg(long = "p", default_value = "2")]
    pub p: PNorm,
    /// Weight function: const or invsqrt.
    #[arg(long = "q", default_value = "invsqrt")]
    pub q: WeightKind,
    /// Limit-law draws.
    #[arg(long = "B", default_value_t = 2000)]
    pub b: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Grid preset: desk or full.
    #[arg(long, default_value = "desk")]
    pub grid: GridPreset,
}

#[derive(Debug, Args)]
pub struct TestArgs {
    /// CSV file with a header row.
    #[arg(long)]
    pub input: PathBuf,
    /// Two column names separated by a comma; defaults to the first two.
    #[arg(long)]
    pub columns: Option<String>,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Number of tail observations.
    #[arg(long = "k", conflicts_with = "k_rule")]
    pub k: Option<usize>,
    /// Rule for k when --k is absent.
    #[arg(long = "k-rule", default_value = "sqrt")]
    pub k_rule: String,
    /// Output JSON path; standard output if absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PowerArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Copula under the null, e.g. gumbel(2) or hr(1).
    #[arg(long, default_value = "gumbel(2)")]
    pub base: String,
    /// Contaminating copula, e.g. comonotone or maxlinear.
    #[arg(long, default_value = "comonotone")]
    pub alt: String,
    /// Comma-separated mixture weights.
    #[arg(long, default_value = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8")]
    pub lambdas: String,
    #[arg(long, default_value_t = 3000)]
    pub n: usize,
    #[arg(long = "k", default_value_t = 50)]
    pub k: usize,
    #[arg(long, default_value_t = 200)]
    pub reps: usize,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Critical-value cache written by the quantiles command.
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// Output CSV path; metadata goes next to it with a .json extension.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct QuantilesArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Smallest parameter node; defaults to the family range.
    #[arg(long = "r-min")]
    pub r_min: Option<f64>,
    /// Largest parameter node; defaults to the family range.
    #[arg(long = "r-max")]
    pub r_max: Option<f64>,
    /// Comma-separated quantile levels.
    #[arg(long, default_value = "0.9,0.95,0.99")]
    pub levels: String,
    /// Cache file to write.
    #[arg(long, alias = "cache")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PairsArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Pairs as comma-separated `first:second` column names (`first-second`
    /// also works when names contain no '-').
    #[arg(long, conflicts_with = "pairs_file")]
    pub pairs: Option<String>,
    /// CSV file listing pairs in two columns.
    #[arg(long = "pairs-file")]
    pub pairs_file: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long = "k", conflicts_with = "k_rule")]
    pub k: Option<usize>,
    #[arg(long = "k-rule", default_value = "sqrt")]
    pub k_rule: String,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// p-values from fresh draws per pair or from a shared bank.
    #[arg(long, default_value = "fresh")]
    pub pvalues: String,
    /// Output CSV path; a JSON summary goes next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Copula, e.g. gumbel(2), hr(1), mixture(0.5,gumbel(2),maxlinear).
    #[arg(long)]
    pub copula: String,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parsed CSV table with missing-cell bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub table: DataTable,
    pub missing: usize,
}

fn is_missing(cell: &str) -> bool {
    let t = cell.trim();
    t.is_empty() || t.eq_ignore_ascii_case("nan") || t.eq_ignore_ascii_case("na")
}

/// Read a comma-separated file with a header row. Blank, `NA` and `NaN`
/// cells are missing values.
pub fn ingest_csv(path: &Path) -> CliResult<Ingested> {
    let text = fs::read_to_string(path).map_err(|source| CliError::File { path: path.to_path_buf(), source })?;
    ingest_str(&text)
}

/// As [`ingest_csv`], from text.
pub fn ingest_str(text: &str) -> CliResult<Ingested> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(text.as_bytes());
    let names: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if names.len() < 2 {
        return Err(angof::Error::Parse { line: 1, message: "need at least 2 columns".into() }.into());
    }
    let mut columns = vec![Vec::new(); names.len()];
    let mut missing = 0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(i + 2, |p| p.line() as usize);
        if rec.len() != names.len() {
            return Err(angof::Error::Parse {
                line,
                message: format!("expected {} fields, found {}", names.len(), rec.len()),
            }
            .into());
        }
        for (j, cell) in rec.iter().enumerate() {
            let v = if is_missing(cell) {
                missing += 1;
                f64::NAN
            } else {
                cell.trim()
                    .parse::<f64>()
                    .map_err(|_| angof::Error::Parse { line, message: format!("'{cell}' is not a number") })?
            };
            columns[j].push(v);
        }
    }
    Ok(Ingested { table: DataTable::new(names, columns)?, missing })
}

fn column(table: &DataTable, name: &str) -> CliResult<usize> {
    table
        .column_index(name)
        .ok_or_else(|| CliError::Config(vec![format!("no column named '{name}'")]))
}

/// Parse `a:b,c:d` (or `a-b,c-d`) into column index pairs.
pub fn parse_pairs(table: &DataTable, spec: &str) -> CliResult<Vec<(usize, usize)>> {
    spec.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|tok| {
            let tok = tok.trim();
            let (a, b) = tok
                .split_once(':')
                .or_else(|| tok.split_once('-'))
                .ok_or_else(|| CliError::Config(vec![format!("pair '{tok}' needs the form first:second")]))?;
            Ok((column(table, a.trim())?, column(table, b.trim())?))
        })
        .collect()
}

fn parse_reals(s: &str, what: &str) -> CliResult<Vec<f64>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse::<f64>().map_err(|_| CliError::Config(vec![format!("bad {what} '{t}'")])))
        .collect()
}

fn k_rule(k: Option<usize>, rule: &str) -> CliResult<KRule> {
    match k {
        Some(k) => Ok(KRule::Fixed(k)),
        None => rule.parse::<KRule>().map_err(|e| CliError::Config(vec![e.to_string()])),
    }
}

fn model_problems(m: &ModelArgs) -> Vec<String> {
    let mut out = Vec::new();
    if m.b == 0 {
        out.push("--B must be positive".into());
    }
    if let PNorm::Finite(p) = m.p {
        if !(p >= 1.0) {
            out.push(format!("--p must be >= 1, got {p}"));
        }
    }
    if !m.p.is_finite() {
        out.push("the limit-law simulation needs a finite --p".into());
    }
    out
}

fn fail_if(problems: Vec<String>) -> CliResult<()> {
    if problems.is_empty() {
        Ok(())
    } else {
        Err(CliError::Config(problems))
    }
}

/// Reals in CSV outputs: fixed point with 12 decimals.
pub fn fmt_real(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x:.12}")
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or(String::new(), fmt_real)
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|source| CliError::File { path: path.to_path_buf(), source })
}

fn json_bytes<T: Serialize>(v: &T) -> CliResult<Vec<u8>> {
    let mut s = serde_json::to_vec_pretty(v)?;
    s.push(b'\n');
    Ok(s)
}

/// Path of the JSON companion of a CSV artifact.
pub fn companion_json(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Artifact of the test command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestArtifact {
    pub input: String,
    pub columns: [String; 2],
    pub rows: usize,
    pub missing_cells: usize,
    pub complete_cases: usize,
    pub report: TestReport,
}

pub fn cmd_test(a: &TestArgs) -> CliResult<i32> {
    let mut problems = model_problems(&a.model);
    let rule = k_rule(a.k, &a.k_rule);
    if let Err(CliError::Config(p)) = &rule {
        problems.extend(p.clone());
    }
    fail_if(problems)?;
    let ing = ingest_csv(&a.input)?;
    let t = &ing.table;
    let (i, j) = match &a.columns {
        Some(c) => {
            let (x, y) = c
                .split_once(',')
                .ok_or_else(|| CliError::Config(vec!["--columns needs two names separated by ','".into()]))?;
            (column(t, x.trim())?, column(t, y.trim())?)
        }
        None => (0, 1),
    };
    let sample = t.complete_pair(i, j)?;
    let config = TestConfig {
        family: a.model.family,
        k: rule?,
        p: a.model.p,
        q: a.model.q,
        b: a.model.b,
        seed: a.model.seed,
        grid: a.model.grid.grid(),
    };
    let report = run_single_test(&sample, &config)?;
    let status = report.status;
    let art = TestArtifact {
        input: a.input.display().to_string(),
        columns: [t.names[i].clone(), t.names[j].clone()],
        rows: t.rows(),
        missing_cells: ing.missing,
        complete_cases: sample.len(),
        report,
    };
    let bytes = json_bytes(&art)?;
    match &a.out {
        Some(p) => write_file(p, &bytes)?,
        None => std::io::stdout().write_all(&bytes).map_err(angof::Error::from)?,
    }
    Ok(if status == TestStatus::Ok { 0 } else { EXIT_REPORT_NOT_OK })
}

/// Metadata artifact of the power command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerArtifact {
    pub cache: Option<String>,
    pub curve: PowerCurve,
}

/// CSV rendering of a power curve.
pub fn power_csv(c: &PowerCurve) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["lambda", "rate", "se", "reps", "failures"])?;
    for i in 0..c.lambdas.len() {
        w.write_record([
            fmt_real(c.lambdas[i]),
            fmt_real(c.rates[i]),
            fmt_real(c.se[i]),
            c.reps[i].to_string(),
            c.failures[i].to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| angof::Error::from(e.into_error()).into())
}

pub fn cmd_power(a: &PowerArgs) -> CliResult<i32> {
    let mut problems = model_problems(&a.model);
    let base = a.base.parse::<CopulaSpec>().map_err(|e| e.to_string());
    let alt = a.alt.parse::<CopulaSpec>().map_err(|e| e.to_string());
    let lambdas = parse_reals(&a.lambdas, "mixture weight");
    for r in [&base, &alt] {
        if let Err(e) = r {
            problems.push(e.clone());
        }
    }
    if let Err(CliError::Config(p)) = &lambdas {
        problems.extend(p.clone());
    }
    fail_if(problems)?;
    let config = ScenarioConfig {
        family: a.model.family,
        base: base.unwrap(),
        alt: alt.unwrap(),
        lambdas: lambdas?,
        n: a.n,
        k: a.k,
        p: a.model.p,
        q: a.model.q,
        b: a.model.b,
        replications: a.reps,
        alpha: a.alpha,
        seed: a.model.seed,
        grid: a.model.grid.grid(),
    };
    fail_if(config.problems())?;
    let cached = match &a.cache {
        Some(p) if p.exists() => Some(CriticalValueTable::load(p)?),
        _ => None,
    };
    let curve = run_power_study(&config, cached.as_ref())?;
    for w in &curve.warnings {
        eprintln!("warning: {w}");
    }
    write_file(&a.out, &power_csv(&curve)?)?;
    let art = PowerArtifact { cache: a.cache.as_ref().map(|p| p.display().to_string()), curve };
    write_file(&companion_json(&a.out), &json_bytes(&art)?)?;
    Ok(0)
}

/// Parameter nodes at multiples of the family pitch within `[lo, hi]`.
pub fn pitch_nodes(family: Family, lo: f64, hi: f64) -> Vec<f64> {
    let pitch = family.table_pitch();
    let a = (lo / pitch - 1e-9).ceil() as i64;
    let b = (hi / pitch + 1e-9).floor() as i64;
    (a..=b).map(|k| round12(k as f64 * pitch)).filter(|&r| family.contains(r)).collect()
}

pub fn cmd_quantiles(a: &QuantilesArgs) -> CliResult<i32> {
    let mut problems = model_problems(&a.model);
    let (dlo, dhi) = a.model.family.default_table_range();
    let (lo, hi) = (a.r_min.unwrap_or(dlo), a.r_max.unwrap_or(dhi));
    let nodes = pitch_nodes(a.model.family, lo, hi);
    if nodes.is_empty() {
        problems.push(format!("no parameter nodes in [{lo}, {hi}]"));
    }
    let levels = parse_reals(&a.levels, "level");
    if let Err(CliError::Config(p)) = &levels {
        problems.extend(p.clone());
    }
    fail_if(problems)?;
    let table = CriticalValueTable::build(
        a.model.family,
        a.model.p,
        a.model.grid.grid(),
        a.model.q,
        &nodes,
        &levels?,
        a.model.b,
        a.model.seed,
    )?;
    let mut buf = Vec::new();
    table.write_to(&mut buf)?;
    write_file(&a.out, &buf)?;
    Ok(0)
}

/// CSV rendering of a multi-pair report.
pub fn pairs_csv(r: &MultiTestReport) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "id",
        "first",
        "second",
        "n",
        "k",
        "exceedances",
        "r_hat",
        "statistic",
        "p_value",
        "status",
        "bonferroni",
        "bh_independent",
        "bh_dependent",
    ])?;
    for (i, p) in r.pairs.iter().enumerate() {
        let status = match p.status {
            TestStatus::Ok => "ok",
            TestStatus::Degenerate => "degenerate",
            TestStatus::Failed => "failed",
        };
        w.write_record([
            p.id.clone(),
            p.first.clone(),
            p.second.clone(),
            p.n.to_string(),
            p.k.to_string(),
            p.exceedances.map_or(String::new(), |v| v.to_string()),
            fmt_opt(p.r_hat),
            fmt_opt(p.statistic),
            fmt_opt(p.p_value),
            status.to_string(),
            r.bonferroni[i].to_string(),
            r.bh_independent[i].to_string(),
            r.bh_dependent[i].to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| angof::Error::from(e.into_error()).into())
}

/// Summary artifact of the pairs command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairsArtifact {
    pub input: String,
    pub rows: usize,
    pub missing_cells: usize,
    pub bonferroni_rejections: Vec<String>,
    pub report: MultiTestReport,
}

pub fn cmd_pairs(a: &PairsArgs) -> CliResult<i32> {
    let mut problems = model_problems(&a.model);
    let rule = k_rule(a.k, &a.k_rule);
    if let Err(CliError::Config(p)) = &rule {
        problems.extend(p.clone());
    }
    let source = match a.pvalues.as_str() {
        "fresh" => Some(PValueSource::Fresh),
        "bank" => Some(PValueSource::Bank),
        other => {
            problems.push(format!("--pvalues must be fresh or bank, got '{other}'"));
            None
        }
    };
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        problems.push(format!("--alpha must be in (0, 1), got {}", a.alpha));
    }
    if a.pairs.is_none() && a.pairs_file.is_none() {
        problems.push("give --pairs or --pairs-file".into());
    }
    fail_if(problems)?;
    let ing = ingest_csv(&a.input)?;
    let pairs = match (&a.pairs, &a.pairs_file) {
        (Some(s), _) => parse_pairs(&ing.table, s)?,
        (None, Some(path)) => {
            let text = fs::read_to_string(path).map_err(|source| CliError::File { path: path.clone(), source })?;
            let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
            let mut out = Vec::new();
            for rec in rdr.records() {
                let rec = rec?;
                if rec.len() < 2 {
                    return Err(CliError::Config(vec!["pairs file needs two columns".into()]));
                }
                out.push((column(&ing.table, rec[0].trim())?, column(&ing.table, rec[1].trim())?));
            }
            out
        }
        (None, None) => unreachable!("checked above"),
    };
    let config = PairwiseConfig {
        family: a.model.family,
        k: rule?,
        p: a.model.p,
        q: a.model.q,
        b: a.model.b,
        alpha: a.alpha,
        seed: a.model.seed,
        grid: a.model.grid.grid(),
        source: source.unwrap(),
    };
    let report = run_pairwise_analysis(&ing.table, &pairs, &config, None)?;
    write_file(&a.out, &pairs_csv(&report)?)?;
    let art = PairsArtifact {
        input: a.input.display().to_string(),
        rows: ing.table.rows(),
        missing_cells: ing.missing,
        bonferroni_rejections: report.bonferroni_rejections().iter().map(|s| s.to_string()).collect(),
        report,
    };
    write_file(&companion_json(&a.out), &json_bytes(&art)?)?;
    Ok(0)
}

pub fn cmd_generate(a: &GenerateArgs) -> CliResult<i32> {
    let spec: CopulaSpec = a.copula.parse()?;
    let s = spec.sample(a.n, a.seed)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["u", "v"])?;
    for (u, v) in s.x().iter().zip(s.y()) {
        w.write_record([format!("{u:.17e}"), format!("{v:.17e}")])?;
    }
    let bytes = w.into_inner().map_err(|e| angof::Error::from(e.into_error()))?;
    write_file(&a.out, &bytes)?;
    Ok(0)
}

/// Run a parsed command line and return the exit status.
pub fn run(cli: &Cli) -> CliResult<i32> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Config(vec!["--threads must be positive".into()]));
        }
        // A pool may already exist when called repeatedly in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    match &cli.command {
        Command::Test(a) => cmd_test(a),
        Command::Power(a) => cmd_power(a),
        Command::Quantiles(a) => cmd_quantiles(a),
        Command::Pairs(a) => cmd_pairs(a),
        Command::Generate(a) => cmd_generate(a),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_class() {
        assert_eq!(CliError::Config(vec!["x".into()]).exit_code(), 2);
        assert_eq!(CliError::Core(angof::Error::Degenerate("x".into())).exit_code(), 3);
        assert_eq!(CliError::Core(angof::Error::RootFinding("x".into())).exit_code(), 4);
    }

    #[test]
    fn pitch_nodes_cover_range() {
        assert_eq!(pitch_nodes(Family::Logistic, 0.3, 0.45), vec![0.3, 0.35, 0.4, 0.45]);
        assert_eq!(pitch_nodes(Family::HuslerReiss, 0.95, 1.2), vec![1.0, 1.1, 1.2]);
    }

    #[test]
    fn real_formatting() {
        assert_eq!(fmt_real(0.0015), "0.001500000000");
        assert_eq!(fmt_real(f64::NAN), "");
    }
}
