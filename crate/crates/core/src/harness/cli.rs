use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use super::{emit_tables, read_summaries_csv, run_cell, tables::design_table, write_summaries_csv, McSummary, TableFormat};
use crate::dgp::{generate, read_sample_csv, write_sample_csv, Design, DesignSpec, Sample};
use crate::error::{Error, Result};
use crate::estimators::{ate_ckt, ate_ckt_weighted, ate_vy_infeasible, rc_dte, write_report_csv, EstimatorKind, RC_EVALUATION_Y};
use crate::nonparametrics::EstimatorConfig;
use crate::oracle::suite::{identification_suite, truth_checks};

const DEFAULT_REPS: usize = 401;
const DEFAULT_DRAWS: usize = 10_000_000;
const TRUTH_Z_LIMIT: f64 = 3.0;

#[derive(Parser, Debug)]
#[command(name = "wsmatch", version, about = "Distribution-matching treatment-effect estimators and Monte Carlo tables")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw one sample and write it as CSV.
    Simulate(Flags),
    /// Estimate on one sample (drawn, or read with --input).
    Estimate(Flags),
    /// Run Monte Carlo cells and write summaries.csv and table_k.md.
    Mc(Flags),
    /// Run the population identification checks and the truth checks.
    OracleCheck(Flags),
    /// Render a stored summaries CSV (--input).
    Tables(Flags),
}

/// Flags shared by every subcommand. Each one may also be given as a
/// `key = value` line in the --config file; flags win.
#[derive(Args, Debug, Default)]
struct Flags {
    /// Design name (D1, D2, D3, RC, MULTINOMIAL, ROY); comma list for `mc`.
    #[arg(long)]
    design: Option<String>,
    /// Correlation between the selection and outcome disturbances; comma list for `mc`.
    #[arg(long)]
    rho: Option<String>,
    /// Sample size; comma list for `mc`.
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    reps: Option<String>,
    /// ckt, ckt_w, vy or rc; comma list for `mc`.
    #[arg(long)]
    estimator: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file, or output directory for `mc`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// csv or markdown.
    #[arg(long)]
    format: Option<String>,
    /// Sample CSV for `estimate`, summaries CSV for `tables`.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Monte Carlo draws per truth check in `oracle-check`.
    #[arg(long)]
    draws: Option<String>,
    /// Covariate cell of the weighted estimator.
    #[arg(long, allow_hyphen_values = true)]
    a_low: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    a_high: Option<String>,
}

const KEYS: [&str; 12] = [
    "design", "rho", "n", "seed", "reps", "estimator", "out", "format", "input", "draws", "a_low", "a_high",
];

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("config line {}: expected `key = value`", k + 1)))?;
        let key = key.trim().replace('-', "_");
        let value = value.trim();
        if key.is_empty() || value.is_empty() {
            return Err(Error::Parse(format!("config line {}: empty key or value", k + 1)));
        }
        if map.insert(key.clone(), value.to_string()).is_some() {
            return Err(Error::Parse(format!("config line {}: duplicate key `{key}`", k + 1)));
        }
    }
    Ok(map)
}

enum Failure {
    Usage(String),
    Runtime(Error),
    ChecksFailed,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

/// Merged settings: flags over the config file.
struct Settings(BTreeMap<String, String>);

impl Settings {
    fn resolve(flags: Flags) -> std::result::Result<Self, Failure> {
        let mut map = match &flags.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
                parse_config_text(&text).map_err(|e| Failure::Usage(e.to_string()))?
            }
            None => BTreeMap::new(),
        };
        if let Some(bad) = map.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(Failure::Usage(format!("unknown config key `{bad}`")));
        }
        let path = |p: Option<PathBuf>| p.map(|p| p.to_string_lossy().into_owned());
        let given = [
            ("design", flags.design),
            ("rho", flags.rho),
            ("n", flags.n),
            ("seed", flags.seed),
            ("reps", flags.reps),
            ("estimator", flags.estimator),
            ("out", path(flags.out)),
            ("format", flags.format),
            ("input", path(flags.input)),
            ("draws", flags.draws),
            ("a_low", flags.a_low),
            ("a_high", flags.a_high),
        ];
        for (k, v) in given {
            if let Some(v) = v {
                map.insert(k.to_string(), v);
            }
        }
        Ok(Settings(map))
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    fn one<T: FromStr>(&self, key: &str, default: Option<T>) -> std::result::Result<T, Failure> {
        match self.raw(key) {
            Some(v) => v
                .trim()
                .parse()
                .map_err(|_| Failure::Usage(format!("invalid value `{v}` for `{key}`"))),
            None => default.ok_or_else(|| Failure::Usage(format!("missing required setting `{key}`"))),
        }
    }

    fn list<T: FromStr>(&self, key: &str, default: Vec<T>) -> std::result::Result<Vec<T>, Failure> {
        match self.raw(key) {
            Some(v) => v
                .split(',')
                .map(|s| s.trim().parse().map_err(|_| Failure::Usage(format!("invalid value `{s}` for `{key}`"))))
                .collect(),
            None => Ok(default),
        }
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.raw(key).map(PathBuf::from)
    }
}

/// Runs the command line `argv` (program name first) and returns the exit
/// code: 0 success, 1 usage error, 2 runtime failure, 3 failed checks.
pub fn cli_main<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nRun `wsmatch --help` for usage.");
            1
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            2
        }
        Err(Failure::ChecksFailed) => 3,
    }
}

fn run(cli: Cli) -> std::result::Result<(), Failure> {
    match cli.command {
        Command::Simulate(f) => simulate(&Settings::resolve(f)?),
        Command::Estimate(f) => estimate(&Settings::resolve(f)?),
        Command::Mc(f) => mc(&Settings::resolve(f)?),
        Command::OracleCheck(f) => oracle_check(&Settings::resolve(f)?),
        Command::Tables(f) => tables(&Settings::resolve(f)?),
    }
}

fn sink(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn single_spec(s: &Settings, n_default: Option<usize>) -> std::result::Result<DesignSpec, Failure> {
    let spec = DesignSpec::new(
        s.one::<Design>("design", None)?,
        s.one("rho", Some(0.0))?,
        s.one("n", n_default)?,
        s.one("seed", Some(1))?,
    );
    spec.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(spec)
}

fn simulate(s: &Settings) -> std::result::Result<(), Failure> {
    let spec = single_spec(s, Some(400))?;
    let sample = generate(&spec)?;
    let mut out = sink(s.path("out").as_deref())?;
    write_sample_csv(&sample, &mut out)?;
    out.flush().map_err(Error::from)?;
    Ok(())
}

fn estimate(s: &Settings) -> std::result::Result<(), Failure> {
    let estimator: EstimatorKind = s.one("estimator", Some(EstimatorKind::CktAte))?;
    let sample = match s.path("input") {
        Some(path) => {
            let obs = read_sample_csv(File::open(&path).map_err(Error::from)?)?;
            let mut spec = single_spec(s, Some(obs.len()))?;
            spec.n = obs.len();
            Sample::from_observations(spec, obs)
        }
        None => generate(&single_spec(s, Some(400))?)?,
    };
    let config = EstimatorConfig::default();
    let spec = sample.spec;
    let report = match estimator {
        EstimatorKind::CktAte => ate_ckt(&sample, &config)?,
        EstimatorKind::CktAteWeighted => {
            ate_ckt_weighted(&sample, &config, s.one("a_low", Some(-1.0))?, s.one("a_high", Some(1.0))?)?
        }
        EstimatorKind::VyInfeasible => ate_vy_infeasible(&sample, spec.design, spec.rho, &config)?,
        EstimatorKind::RcDte => rc_dte(&sample, &config, RC_EVALUATION_Y)?,
    };
    let mut out = sink(s.path("out").as_deref())?;
    write_report_csv(&[(spec, report)], &mut out)?;
    out.flush().map_err(Error::from)?;
    Ok(())
}

fn default_estimators(design: Design) -> Vec<EstimatorKind> {
    if design == Design::Rc {
        vec![EstimatorKind::RcDte]
    } else {
        vec![EstimatorKind::CktAte, EstimatorKind::VyInfeasible]
    }
}

fn mc(s: &Settings) -> std::result::Result<(), Failure> {
    let designs: Vec<Design> = s.list("design", vec![Design::D1])?;
    let rhos: Vec<f64> = s.list("rho", vec![0.0, 0.25, 0.5])?;
    let ns: Vec<usize> = s.list("n", vec![100, 200, 400])?;
    let chosen: Option<Vec<EstimatorKind>> = match s.raw("estimator") {
        Some(_) => Some(s.list("estimator", Vec::new())?),
        None => None,
    };
    let reps: usize = s.one("reps", Some(DEFAULT_REPS))?;
    let seed: u64 = s.one("seed", Some(1))?;
    let dir = s.path("out").unwrap_or_else(|| PathBuf::from("."));

    let mut summaries: Vec<McSummary> = Vec::new();
    for &design in &designs {
        let estimators = chosen.clone().unwrap_or_else(|| default_estimators(design));
        for &estimator in &estimators {
            for &n in &ns {
                for &rho in &rhos {
                    summaries.push(run_cell(design, rho, n, estimator, reps, seed)?);
                }
            }
        }
    }
    std::fs::create_dir_all(&dir).map_err(Error::from)?;
    write_summaries_csv(&summaries, File::create(dir.join("summaries.csv")).map_err(Error::from)?)?;
    for &design in &designs {
        let name = match design.table_number() {
            Some(k) => format!("table_{k}.md"),
            None => format!("table_{}.md", design.name().to_ascii_lowercase()),
        };
        std::fs::write(dir.join(name), design_table(&summaries, design)).map_err(Error::from)?;
    }
    Ok(())
}

fn oracle_check(s: &Settings) -> std::result::Result<(), Failure> {
    let rhos: Vec<f64> = s.list("rho", vec![0.0, 0.25, 0.5])?;
    let draws: usize = s.one("draws", Some(DEFAULT_DRAWS))?;
    let seed: u64 = s.one("seed", Some(1))?;
    let mut checks = identification_suite()?;
    checks.extend(truth_checks(&rhos, draws, seed, TRUTH_Z_LIMIT)?);
    let mut out = sink(s.path("out").as_deref())?;
    for c in &checks {
        writeln!(out, "{c}").map_err(Error::from)?;
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    writeln!(out, "{} checks, {failed} failed", checks.len()).map_err(Error::from)?;
    out.flush().map_err(Error::from)?;
    if failed > 0 {
        Err(Failure::ChecksFailed)
    } else {
        Ok(())
    }
}

fn tables(s: &Settings) -> std::result::Result<(), Failure> {
    let input = s
        .path("input")
        .ok_or_else(|| Failure::Usage("`tables` needs --input <summaries.csv>".into()))?;
    let format: TableFormat = s.one("format", Some(TableFormat::Markdown))?;
    let summaries = read_summaries_csv(File::open(&input).map_err(Error::from)?)?;
    let text = emit_tables(&summaries, format)?;
    let mut out = sink(s.path("out").as_deref())?;
    out.write_all(text.as_bytes()).map_err(Error::from)?;
    out.flush().map_err(Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_text_parses() {
        let m = parse_config_text("# cells\ndesign = D1, D2\n\nrho=0.5 # trailing\n  n =  100 \n").unwrap();
        assert_eq!(m["design"], "D1, D2");
        assert_eq!(m["rho"], "0.5");
        assert_eq!(m["n"], "100");
        assert_eq!(m.len(), 3);
    }

    #[test]
    fn config_text_errors() {
        assert!(parse_config_text("design D1").is_err());
        assert!(parse_config_text("design =").is_err());
        assert!(parse_config_text("n = 1\nn = 2").is_err());
    }

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.txt");
        std::fs::write(&path, "n = 100\nrho = 0.25\n").unwrap();
        let flags = Flags {
            config: Some(path),
            n: Some("200".into()),
            ..Default::default()
        };
        let s = Settings::resolve(flags).unwrap_or_else(|_| panic!("resolve failed"));
        assert_eq!(s.one::<usize>("n", None).ok(), Some(200));
        assert_eq!(s.one::<f64>("rho", None).ok(), Some(0.25));
    }

    #[test]
    fn unknown_config_key_is_a_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.txt");
        std::fs::write(&path, "bandwidth = 3\n").unwrap();
        let flags = Flags {
            config: Some(path),
            ..Default::default()
        };
        assert!(matches!(Settings::resolve(flags), Err(Failure::Usage(_))));
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(cli_main(["wsmatch", "frobnicate"]), 1);
        assert_eq!(cli_main(["wsmatch", "simulate", "--bogus", "1"]), 1);
        assert_eq!(cli_main(["wsmatch", "simulate", "--design", "D9"]), 1);
        assert_eq!(cli_main(["wsmatch", "tables"]), 1);
        assert_eq!(cli_main(["wsmatch", "--help"]), 0);
    }

    #[test]
    fn runtime_errors_exit_two() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("none.csv");
        let m = missing.to_str().unwrap();
        assert_eq!(cli_main(["wsmatch", "tables", "--input", m]), 2);
        assert_eq!(cli_main(["wsmatch", "estimate", "--design", "D1", "--input", m]), 2);
    }
}
