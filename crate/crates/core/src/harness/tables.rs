use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::str::FromStr;

use super::McSummary;
use crate::dgp::Design;
use crate::error::{Error, Result};
use crate::estimators::EstimatorKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Markdown,
}

impl FromStr for TableFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(TableFormat::Csv),
            "markdown" | "md" => Ok(TableFormat::Markdown),
            other => Err(Error::Config(format!("unknown format `{other}`"))),
        }
    }
}

const HEADER: [&str; 12] = [
    "design",
    "rho",
    "n",
    "estimator",
    "reps",
    "failures",
    "mean_bias",
    "median_bias",
    "rmse",
    "mad",
    "sd",
    "unreliable",
];

const STATISTICS: [&str; 4] = ["MEAN BIAS", "MEDIAN BIAS", "RMSE", "MAD"];

fn stats(s: &McSummary) -> [f64; 4] {
    [s.mean_bias, s.median_bias, s.rmse, s.mad]
}

/// Long-format CSV, one row per cell. Reals carry 17 significant digits so a
/// read-back reproduces them exactly.
pub fn write_summaries_csv<W: Write>(summaries: &[McSummary], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(HEADER)?;
    let real = |v: f64| format!("{v:.16e}");
    for s in summaries {
        wtr.write_record([
            s.design.name().to_string(),
            format!("{}", s.rho),
            s.n.to_string(),
            s.estimator.name().to_string(),
            s.reps.to_string(),
            s.failures.to_string(),
            real(s.mean_bias),
            real(s.median_bias),
            real(s.rmse),
            real(s.mad),
            real(s.sd),
            s.unreliable().to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_summaries_csv<R: Read>(input: R) -> Result<Vec<McSummary>> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(HEADER.iter().copied()) {
        return Err(Error::Parse(format!("unexpected summary header `{}`", headers.iter().collect::<Vec<_>>().join(","))));
    }
    let mut out = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        let field = |k: usize| record.get(k).unwrap_or("");
        let real = |k: usize| {
            field(k)
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("row {}: bad `{}` value `{}`", line + 1, HEADER[k], field(k))))
        };
        let int = |k: usize| {
            field(k)
                .parse::<usize>()
                .map_err(|_| Error::Parse(format!("row {}: bad `{}` value `{}`", line + 1, HEADER[k], field(k))))
        };
        let summary = McSummary {
            design: field(0).parse()?,
            rho: real(1)?,
            n: int(2)?,
            estimator: field(3).parse()?,
            reps: int(4)?,
            failures: int(5)?,
            mean_bias: real(6)?,
            median_bias: real(7)?,
            rmse: real(8)?,
            mad: real(9)?,
            sd: real(10)?,
        };
        if summary.failures > summary.reps {
            return Err(Error::Parse(format!("row {}: more failures than replications", line + 1)));
        }
        out.push(summary);
    }
    Ok(out)
}

/// Renders summaries as long-format CSV or as one markdown table per design:
/// column blocks per estimator with one column per rho, and for every sample
/// size the rows MEAN BIAS, MEDIAN BIAS, RMSE, MAD. Missing cells are left
/// empty.
pub fn emit_tables(summaries: &[McSummary], format: TableFormat) -> Result<String> {
    match format {
        TableFormat::Csv => {
            let mut buf = Vec::new();
            write_summaries_csv(summaries, &mut buf)?;
            String::from_utf8(buf).map_err(|e| Error::Parse(e.to_string()))
        }
        TableFormat::Markdown => {
            let designs: BTreeSet<Design> = summaries.iter().map(|s| s.design).collect();
            let mut out = String::new();
            for (k, &d) in designs.iter().enumerate() {
                if k > 0 {
                    out.push('\n');
                }
                out.push_str(&design_table(summaries, d));
            }
            Ok(out)
        }
    }
}

/// Markdown table for one design.
pub fn design_table(summaries: &[McSummary], design: Design) -> String {
    let cells: Vec<&McSummary> = summaries.iter().filter(|s| s.design == design).collect();
    let estimators: BTreeSet<EstimatorKind> = cells.iter().map(|s| s.estimator).collect();
    let mut rhos: Vec<f64> = cells.iter().map(|s| s.rho).collect();
    rhos.sort_by(f64::total_cmp);
    rhos.dedup();
    let ns: BTreeSet<usize> = cells.iter().map(|s| s.n).collect();
    let columns: Vec<(EstimatorKind, f64)> = estimators.iter().flat_map(|&e| rhos.iter().map(move |&r| (e, r))).collect();
    let find = |n: usize, (e, r): (EstimatorKind, f64)| {
        cells.iter().find(|s| s.n == n && s.estimator == e && s.rho.to_bits() == r.to_bits())
    };

    let mut out = String::new();
    match design.table_number() {
        Some(k) => writeln!(out, "### Table {k}: design {design}").unwrap(),
        None => writeln!(out, "### Design {design}").unwrap(),
    }
    out.push('\n');
    out.push_str("| n | statistic |");
    for (e, r) in &columns {
        write!(out, " {} rho={} |", e.label(), r).unwrap();
    }
    out.push_str("\n|---|---|");
    out.push_str(&"---:|".repeat(columns.len()));
    out.push('\n');
    let mut flagged = Vec::new();
    for &n in &ns {
        for (k, label) in STATISTICS.iter().enumerate() {
            if k == 0 {
                write!(out, "| {n} | {label} |").unwrap();
            } else {
                write!(out, "| | {label} |").unwrap();
            }
            for &col in &columns {
                match find(n, col) {
                    Some(s) => write!(out, " {:.4} |", stats(s)[k]).unwrap(),
                    None => out.push_str(" |"),
                }
            }
            out.push('\n');
        }
        for &col in &columns {
            if let Some(s) = find(n, col).filter(|s| s.unreliable()) {
                flagged.push(format!(
                    "{} rho={} n={n}: {} of {} replications failed",
                    s.estimator.label(),
                    s.rho,
                    s.failures,
                    s.reps
                ));
            }
        }
    }
    if !flagged.is_empty() {
        out.push_str("\nUnreliable cells:\n");
        for f in flagged {
            writeln!(out, "- {f}").unwrap();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::summarize;

    fn cell(design: Design, rho: f64, n: usize, e: EstimatorKind, shift: f64) -> McSummary {
        summarize(design, rho, n, e, &[shift - 0.1, shift, shift + 0.3], 0)
    }

    fn table_one_grid() -> Vec<McSummary> {
        let mut v = Vec::new();
        for (i, &n) in [100, 200, 400].iter().enumerate() {
            for (j, &rho) in [0.0, 0.25, 0.5].iter().enumerate() {
                for e in [EstimatorKind::CktAte, EstimatorKind::VyInfeasible] {
                    v.push(cell(Design::D1, rho, n, e, 0.01 * (i * 3 + j) as f64));
                }
            }
        }
        v
    }

    fn value_rows(md: &str) -> Vec<&str> {
        md.lines().filter(|l| l.starts_with("| ") && !l.starts_with("| n |")).collect()
    }

    #[test]
    fn single_cell_gives_one_column() {
        let md = emit_tables(&[cell(Design::D2, 0.5, 400, EstimatorKind::CktAte, 0.0)], TableFormat::Markdown).unwrap();
        let rows = value_rows(&md);
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| r.matches('|').count() == 4));
        assert!(md.contains("Table 2"));
    }

    #[test]
    fn full_grid_shape() {
        let md = emit_tables(&table_one_grid(), TableFormat::Markdown).unwrap();
        let rows = value_rows(&md);
        assert_eq!(rows.len(), 12);
        for r in rows {
            assert_eq!(r.matches('|').count(), 2 + 6 + 1);
            assert!(!r.contains("|  |"));
        }
        let header = md.lines().find(|l| l.starts_with("| n |")).unwrap();
        assert!(header.contains("CKT rho=0 |") && header.contains("VY rho=0.5 |"));
    }

    #[test]
    fn ragged_grid_leaves_blanks() {
        let mut grid = table_one_grid();
        grid.retain(|s| !(s.n == 200 && s.rho == 0.25 && s.estimator == EstimatorKind::VyInfeasible));
        let md = emit_tables(&grid, TableFormat::Markdown).unwrap();
        let blanks = value_rows(&md).iter().filter(|r| r.contains("| |") && r.matches(" |").count() > 2).count();
        assert!(blanks >= 4);
        assert_eq!(value_rows(&md).len(), 12);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut grid = table_one_grid();
        grid[0].mean_bias = 1.0 / 3.0;
        grid[1].failures = 2;
        grid[1].reps = 5;
        let text = emit_tables(&grid, TableFormat::Csv).unwrap();
        let back = read_summaries_csv(text.as_bytes()).unwrap();
        assert_eq!(back, grid);
        assert_eq!(emit_tables(&back, TableFormat::Csv).unwrap(), text);
    }

    #[test]
    fn csv_and_markdown_agree_at_four_places() {
        let grid = table_one_grid();
        let md = emit_tables(&grid, TableFormat::Markdown).unwrap();
        let back = read_summaries_csv(emit_tables(&grid, TableFormat::Csv).unwrap().as_bytes()).unwrap();
        for s in back {
            for v in stats(&s) {
                assert!(md.contains(&format!(" {v:.4} |")));
            }
        }
    }

    #[test]
    fn unreliable_cells_are_listed() {
        let mut s = cell(Design::D3, 0.0, 100, EstimatorKind::CktAte, 0.0);
        s.failures = 2;
        s.reps = 5;
        let md = emit_tables(&[s], TableFormat::Markdown).unwrap();
        assert!(md.contains("Unreliable cells") && md.contains("2 of 5"));
    }

    #[test]
    fn bad_csv_is_rejected() {
        assert!(read_summaries_csv("a,b\n1,2\n".as_bytes()).is_err());
        let grid = table_one_grid();
        let text = emit_tables(&grid[..1], TableFormat::Csv).unwrap().replace(",100,", ",x,");
        assert!(read_summaries_csv(text.as_bytes()).is_err());
    }
}
