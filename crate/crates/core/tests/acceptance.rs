//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::HashMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use toml::Table;
use wsmatch::dgp::Design;
use wsmatch::estimators::{theorem1_variance, EstimatorKind};
use wsmatch::harness::{run_cell, run_cell_with, McSummary};
use wsmatch::nonparametrics::EstimatorConfig;
use wsmatch::oracle::suite::{identification_suite, truth_checks};

const FIXTURE: &str = include_str!("fixtures/acceptance.toml");

struct Fixture(Table);

impl Fixture {
    fn section(&self, name: &str) -> &Table {
        self.0[name].as_table().unwrap_or_else(|| panic!("fixture section `{name}` missing"))
    }

    fn float(t: &Table, key: &str) -> f64 {
        match &t[key] {
            toml::Value::Float(v) => *v,
            toml::Value::Integer(v) => *v as f64,
            other => panic!("`{key}` is not a number: {other}"),
        }
    }

    fn int(t: &Table, key: &str) -> usize {
        t[key].as_integer().unwrap_or_else(|| panic!("`{key}` is not an integer")) as usize
    }

    fn floats(t: &Table, key: &str) -> Vec<f64> {
        Self::numbers(&t[key])
    }

    fn numbers(value: &toml::Value) -> Vec<f64> {
        let arr = value.as_array().unwrap_or_else(|| panic!("`{value}` is not an array"));
        arr.iter()
            .map(|v| v.as_float().or_else(|| v.as_integer().map(|i| i as f64)).expect("number"))
            .collect()
    }

    fn ints(t: &Table, key: &str) -> Vec<usize> {
        Self::floats(t, key).into_iter().map(|v| v as usize).collect()
    }
}

/// Monte Carlo cells computed once and shared between criteria.
struct Cells {
    reps: usize,
    seed: u64,
    cache: HashMap<(Design, u64, usize, EstimatorKind), McSummary>,
}

impl Cells {
    fn get(&mut self, design: Design, rho: f64, n: usize, est: EstimatorKind) -> &McSummary {
        let (reps, seed) = (self.reps, self.seed);
        self.cache
            .entry((design, rho.to_bits(), n, est))
            .or_insert_with(|| {
                let s = run_cell(design, rho, n, est, reps, seed).expect("monte carlo cell");
                eprintln!(
                    "  cell {design} {est} rho={rho} n={n}: bias {:+.4} rmse {:.4} failures {}",
                    s.mean_bias, s.rmse, s.failures
                );
                s
            })
    }
}

struct Verdict {
    passed: bool,
    notes: Vec<String>,
}

impl Verdict {
    fn new() -> Self {
        Self {
            passed: true,
            notes: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, note: impl Into<String>) {
        let note = note.into();
        if !ok {
            self.passed = false;
            self.notes.push(format!("FAIL {note}"));
        } else {
            self.notes.push(note);
        }
    }
}

fn d1_table(f: &Fixture, cells: &mut Cells) -> Verdict {
    let t = f.section("d1");
    let rhos = Fixture::floats(t, "rhos");
    let ns = Fixture::ints(t, "ns");
    let max_bias = Fixture::float(t, "ckt_max_abs_bias");
    let tol = Fixture::float(t, "rmse_rel_tol");
    let reference = t["reference_rmse"].as_array().expect("reference_rmse");
    let mut v = Verdict::new();
    for (i, &n) in ns.iter().enumerate() {
        let row = Fixture::numbers(&reference[i]);
        for (j, &rho) in rhos.iter().enumerate() {
            let s = cells.get(Design::D1, rho, n, EstimatorKind::CktAte).clone();
            let (lo, hi) = (row[j] * (1.0 - tol), row[j] * (1.0 + tol));
            v.check(
                s.mean_bias.abs() <= max_bias,
                format!("CKT n={n} rho={rho} bias {:+.4} (|.| <= {max_bias})", s.mean_bias),
            );
            v.check(
                (lo..=hi).contains(&s.rmse),
                format!("CKT n={n} rho={rho} rmse {:.4} in [{lo:.4}, {hi:.4}]", s.rmse),
            );
        }
    }
    let n = *ns.last().unwrap();
    let vy: Vec<f64> = rhos
        .iter()
        .map(|&rho| cells.get(Design::D1, rho, n, EstimatorKind::VyInfeasible).mean_bias)
        .collect();
    v.check(
        vy.iter().all(|&b| b < 0.0),
        format!("VY n={n} biases {vy:+.4?} all negative"),
    );
    v.check(
        vy.windows(2).all(|w| w[1].abs() > w[0].abs()),
        format!("VY n={n} |bias| increasing in rho"),
    );
    v
}

fn d2_table(f: &Fixture, cells: &mut Cells) -> Verdict {
    let t = f.section("d2");
    let rho = Fixture::float(t, "rho");
    let (n, n_before) = (Fixture::int(t, "n"), Fixture::int(t, "n_before"));
    let mut v = Verdict::new();
    let ckt = cells.get(Design::D2, rho, n, EstimatorKind::CktAte).mean_bias;
    let max = Fixture::float(t, "ckt_max_abs_bias");
    v.check(ckt.abs() <= max, format!("CKT n={n} rho={rho} bias {ckt:+.4} (|.| <= {max})"));
    let vy = cells.get(Design::D2, rho, n, EstimatorKind::VyInfeasible).mean_bias;
    let vy_max = Fixture::float(t, "vy_max_bias");
    v.check(vy <= vy_max, format!("VY n={n} bias {vy:+.4} (<= {vy_max})"));
    let before = cells.get(Design::D2, rho, n_before, EstimatorKind::VyInfeasible).mean_bias;
    let noise = Fixture::float(t, "vy_noise");
    v.check(
        vy.abs() >= before.abs() - noise,
        format!("VY |bias| n={n_before} {:.4} -> n={n} {:.4} non-decreasing within {noise}", before.abs(), vy.abs()),
    );
    v
}

fn d3_table(f: &Fixture, cells: &mut Cells) -> Verdict {
    let t = f.section("d3");
    let (lo, hi) = (Fixture::float(t, "ratio_low"), Fixture::float(t, "ratio_high"));
    let min_vy = Fixture::float(t, "vy_min_abs_bias");
    let mut v = Verdict::new();
    for rho in Fixture::floats(t, "rhos") {
        let small = cells.get(Design::D3, rho, 100, EstimatorKind::CktAte).rmse;
        let large = cells.get(Design::D3, rho, 400, EstimatorKind::CktAte).rmse;
        let ratio = small / large;
        v.check(
            (lo..=hi).contains(&ratio),
            format!("CKT rho={rho} rmse {small:.4} / {large:.4} = {ratio:.3} in [{lo}, {hi}]"),
        );
        let vy = cells.get(Design::D3, rho, 400, EstimatorKind::VyInfeasible).mean_bias;
        v.check(vy.abs() >= min_vy, format!("VY rho={rho} n=400 bias {vy:+.4} (|.| >= {min_vy})"));
    }
    v
}

fn rc_table(f: &Fixture, cells: &mut Cells) -> Verdict {
    let t = f.section("rc");
    let (rlo, rhi) = (Fixture::float(t, "rmse_low"), Fixture::float(t, "rmse_high"));
    let (lo, hi) = (Fixture::float(t, "ratio_low"), Fixture::float(t, "ratio_high"));
    let mut v = Verdict::new();
    for rho in Fixture::floats(t, "rhos") {
        let small = cells.get(Design::Rc, rho, 100, EstimatorKind::RcDte).rmse;
        let large = cells.get(Design::Rc, rho, 400, EstimatorKind::RcDte).rmse;
        v.check(
            (rlo..=rhi).contains(&large),
            format!("rho={rho} n=400 rmse {large:.4} in [{rlo}, {rhi}]"),
        );
        let ratio = small / large;
        v.check(
            (lo..=hi).contains(&ratio),
            format!("rho={rho} rmse ratio {ratio:.3} in [{lo}, {hi}]"),
        );
    }
    v
}

fn oracle_suite(f: &Fixture) -> Verdict {
    let limit = Fixture::float(f.section("oracle"), "max_seconds");
    let start = Instant::now();
    let checks = identification_suite().expect("identification suite");
    let secs = start.elapsed().as_secs_f64();
    let mut v = Verdict::new();
    for c in checks {
        v.check(c.passed, c.name);
    }
    v.check(secs < limit, format!("runtime {secs:.1}s < {limit}s"));
    v
}

fn truth(f: &Fixture) -> Verdict {
    let t = f.section("truth");
    let checks = truth_checks(
        &Fixture::floats(t, "rhos"),
        Fixture::int(t, "draws"),
        Fixture::int(t, "seed") as u64,
        Fixture::float(t, "z_limit"),
    )
    .expect("truth checks");
    let mut v = Verdict::new();
    for c in checks {
        v.check(c.passed, format!("{} {}", c.name, c.detail.split(" over ").next().unwrap_or("")));
    }
    v
}

fn variance(f: &Fixture, cells: &mut Cells) -> Verdict {
    let tol = Fixture::float(f.section("variance"), "rel_tol");
    let theory = theorem1_variance(Design::D1, 0.0).expect("asymptotic variance").v;
    let s = cells.get(Design::D1, 0.0, 400, EstimatorKind::CktAte).clone();
    let nvar = s.scaled_variance().expect("scaled variance");
    let mut v = Verdict::new();
    let (lo, hi) = (theory * (1.0 - tol), theory * (1.0 + tol));
    v.check(
        (lo..=hi).contains(&nvar),
        format!("n Var = {nvar:.3} vs V = {theory:.3}, band [{lo:.3}, {hi:.3}]"),
    );
    v
}

fn run_cli(args: &[&str], dir: &Path) -> (i32, Vec<u8>) {
    let out = Command::new(env!("CARGO_BIN_EXE_wsmatch"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("run wsmatch");
    (out.status.code().unwrap_or(-1), out.stdout)
}

fn determinism(f: &Fixture) -> Verdict {
    let t = f.section("determinism");
    let reps = Fixture::int(t, "reps");
    let mut v = Verdict::new();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let reps_s = reps.to_string();
    let commands: Vec<(&str, Vec<&str>, Vec<&str>)> = vec![
        ("simulate", vec!["simulate", "--design", "D2", "--rho", "0.5", "--n", "200", "--seed", "7"], vec![]),
        ("simulate roy", vec!["simulate", "--design", "ROY", "--n", "50", "--seed", "7"], vec![]),
        ("estimate", vec!["estimate", "--design", "D2", "--rho", "0.5", "--n", "400", "--estimator", "vy", "--seed", "3"], vec![]),
        ("estimate rc", vec!["estimate", "--design", "RC", "--n", "100", "--estimator", "rc", "--seed", "3"], vec![]),
        (
            "mc",
            vec!["mc", "--design", "D1", "--rho", "0", "--n", "100", "--reps", &reps_s, "--seed", "1", "--out", "mc"],
            vec!["mc/summaries.csv", "mc/table_1.md"],
        ),
        ("tables", vec!["tables", "--input", "mc/summaries.csv", "--format", "csv"], vec![]),
        ("tables md", vec!["tables", "--input", "mc/summaries.csv", "--out", "t.md"], vec!["t.md"]),
        ("oracle-check", vec!["oracle-check", "--draws", "20000"], vec![]),
    ];
    for (name, args, files) in &commands {
        let a = run_cli(args, dirs[0].path());
        let b = run_cli(args, dirs[1].path());
        let mut same = a == b && a.0 == 0;
        for file in files {
            let fa = std::fs::read(dirs[0].path().join(file)).unwrap_or_default();
            let fb = std::fs::read(dirs[1].path().join(file)).unwrap_or_default();
            same &= !fa.is_empty() && fa == fb;
        }
        v.check(same, format!("`{name}` byte-identical"));
    }
    let threads = Fixture::ints(t, "thread_counts");
    let config = EstimatorConfig::default();
    for (design, est, n) in [
        (Design::D1, EstimatorKind::CktAte, 200),
        (Design::D3, EstimatorKind::VyInfeasible, 200),
        (Design::Rc, EstimatorKind::RcDte, 100),
    ] {
        let runs: Vec<McSummary> = threads
            .iter()
            .map(|&k| run_cell_with(design, 0.25, n, est, reps, 5, &config, Some(k)).expect("cell"))
            .collect();
        v.check(
            runs.windows(2).all(|w| w[0] == w[1]),
            format!("{design} {est} summary equal for threads {threads:?}"),
        );
    }
    v
}

type Criterion = Box<dyn Fn(&Fixture, &mut Cells) -> Verdict>;

fn main() {
    let fixture = Fixture(FIXTURE.parse::<Table>().expect("fixture parses"));
    let mut cells = Cells {
        reps: Fixture::int(&fixture.0, "reps"),
        seed: Fixture::int(&fixture.0, "seed") as u64,
        cache: HashMap::new(),
    };
    eprintln!(
        "acceptance fixture v{}: {} replications, seed {}",
        Fixture::int(&fixture.0, "version"),
        cells.reps,
        cells.seed
    );
    let criteria: Vec<(&str, Criterion)> = vec![
        ("1 D1 table", Box::new(d1_table)),
        ("2 D2 separation", Box::new(d2_table)),
        ("3 D3 rates", Box::new(d3_table)),
        ("4 RC distribution", Box::new(rc_table)),
        ("5 oracle identification suite", Box::new(|f, _| oracle_suite(f))),
        ("6 truth oracles", Box::new(|f, _| truth(f))),
        ("7 asymptotic variance", Box::new(variance)),
        ("8 determinism", Box::new(|f, _| determinism(f))),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let verdict = run(&fixture, &mut cells);
        if !verdict.passed {
            failed += 1;
        }
        println!(
            "criterion {name}: {} ({:.0}s) {}",
            if verdict.passed { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            verdict.notes.join("; ")
        );
    }
    println!("acceptance: {} of 8 criteria passed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
