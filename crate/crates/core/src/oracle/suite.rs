//! Deterministic population checks of the identification results used by the
//! estimators, and Monte Carlo checks of the target parameters.

use std::fmt;

use super::{
    brute_force_truth, oracle_h0_star, oracle_h1, oracle_phi0_rc, population_grid, prints_over, sup_gap,
    PopulationModel, MATCH_TOLERANCE,
};
use crate::dgp::{true_parameter, Design, ExampleIndices, LinearIndex, ROY_INDICES};
use crate::error::Result;
use crate::estimators::rc_t_hat;
use crate::matching::{Event, EventFamily};
use crate::nonparametrics::linspace;
use crate::normal;

/// Result of one named check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: impl Into<String>, passed: bool, detail: String) -> Self {
        Self {
            name: name.into(),
            passed,
            detail,
        }
    }
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

/// Roy indices under which both sector indices can be matched at once:
/// `v_a = x + d/2`, `v_b = x/2 + d/4`.
pub const ROY_MATCHABLE_INDICES: ExampleIndices = [LinearIndex::new(1.0, 0.5), LinearIndex::new(0.5, 0.25)];

fn unit_points(m: usize) -> Vec<f64> {
    (0..=m).map(|k| k as f64 / m as f64).collect()
}

/// Summary of an all-pairs scan over `(x, x~)`: the population distance is
/// zero exactly on the predicted locus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeparationScan {
    pub pairs: usize,
    pub locus_pairs: usize,
    pub zero_pairs: usize,
    pub mismatches: usize,
    /// Smallest gap off the locus.
    pub min_gap_off: f64,
    /// Largest gap on the locus.
    pub max_gap_on: f64,
}

/// Scans `xs x xs`, comparing the treated print at `x` with the untreated one
/// at `x~`. `locus` predicts distance zero; `skip` removes pairs from the scan.
pub fn separation_scan(
    model: &PopulationModel,
    xs: &[f64],
    family: &EventFamily,
    p_points: &[f64],
    locus: impl Fn(f64, f64) -> bool,
    skip: impl Fn(f64, f64) -> bool,
) -> Result<SeparationScan> {
    let (treated, untreated) = prints_over(model, xs, family, p_points)?;
    let mut scan = SeparationScan {
        pairs: 0,
        locus_pairs: 0,
        zero_pairs: 0,
        mismatches: 0,
        min_gap_off: f64::INFINITY,
        max_gap_on: 0.0,
    };
    for (i, &x) in xs.iter().enumerate() {
        for (j, &xt) in xs.iter().enumerate() {
            if skip(x, xt) {
                continue;
            }
            scan.pairs += 1;
            let gap = sup_gap(&treated[i], &untreated[j]);
            let zero = gap < MATCH_TOLERANCE;
            let on = locus(x, xt);
            scan.locus_pairs += usize::from(on);
            scan.zero_pairs += usize::from(zero);
            scan.mismatches += usize::from(zero != on);
            if on {
                scan.max_gap_on = scan.max_gap_on.max(gap);
            } else {
                scan.min_gap_off = scan.min_gap_off.min(gap);
            }
        }
    }
    Ok(scan)
}

impl SeparationScan {
    fn passed(&self) -> bool {
        self.mismatches == 0
    }

    fn detail(&self) -> String {
        format!(
            "{} pairs, {} on locus, {} at distance zero, {} mismatches, max gap on locus {:.2e}, min gap off locus {:.2e}",
            self.pairs, self.locus_pairs, self.zero_pairs, self.mismatches, self.max_gap_on, self.min_gap_off
        )
    }
}

fn same_index(model: &PopulationModel, x: f64, xt: f64) -> bool {
    let a = model.index_map(x, true);
    let b = model.index_map(xt, false);
    (a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9
}

/// 101-point covariate grid `(k - 50) / 20`.
fn scalar_grid() -> Vec<f64> {
    (0..=100).map(|k| (k as f64 - 50.0) / 20.0).collect()
}

fn scalar_separation(design: Design, rho: f64) -> Result<CheckOutcome> {
    let model = PopulationModel::new(design, rho)?;
    let family = EventFamily::Cdf {
        y_points: linspace(-3.0, 3.0, 13),
    };
    // scale index x + d vanishes: the law degenerates to a point mass
    let singular = |x: f64, xt: f64| design == Design::D2 && ((x + 1.0).abs() < 1e-6 || xt.abs() < 1e-6);
    let scan = separation_scan(
        &model,
        &scalar_grid(),
        &family,
        &unit_points(10),
        |x, xt| same_index(&model, x, xt),
        singular,
    )?;
    Ok(CheckOutcome::new(
        format!("separation {design} rho={rho}"),
        scan.passed(),
        scan.detail(),
    ))
}

fn roy_separation() -> Result<Vec<CheckOutcome>> {
    let xs: Vec<f64> = (0..=40).map(|k| (k as f64 - 20.0) / 10.0).collect();
    let p = unit_points(10);
    let joint = EventFamily::RoyJoint {
        y_points: vec![-1.0, 0.0, 1.0, 2.0],
    };
    let sector_only = EventFamily::RoyJoint { y_points: Vec::new() };
    let near = |a: f64, b: f64| (a - b).abs() < 1e-9;
    let never = |_: f64, _: f64| false;
    let mut out = Vec::new();

    // default indices: the sector event pins the index difference
    // (x~ = x - 1) while no x~ matches both indices
    let default = PopulationModel::with_indices(Design::Roy, 0.5, ROY_INDICES)?;
    let scan = separation_scan(&default, &xs, &sector_only, &p, |x, xt| near(xt, x - 1.0), never)?;
    out.push(CheckOutcome::new("separation ROY default, sector event", scan.passed(), scan.detail()));
    let scan = separation_scan(&default, &xs, &joint, &p, |x, xt| same_index(&default, x, xt), never)?;
    let none = scan.locus_pairs == 0;
    out.push(CheckOutcome::new(
        "separation ROY default, joint events",
        scan.passed() && none,
        scan.detail(),
    ));

    let matchable = PopulationModel::with_indices(Design::Roy, 0.5, ROY_MATCHABLE_INDICES)?;
    let scan = separation_scan(&matchable, &xs, &joint, &p, |x, xt| same_index(&matchable, x, xt), never)?;
    let some = scan.locus_pairs > 0;
    out.push(CheckOutcome::new(
        "separation ROY matchable, joint events",
        scan.passed() && some,
        scan.detail(),
    ));
    Ok(out)
}

/// Central differences of `h1*` in `p` reproduce the conditional law.
fn derivative_identity() -> Result<CheckOutcome> {
    let step = 1e-4;
    let mut worst = 0.0_f64;
    let mut count = 0;
    for design in Design::TABLE_DESIGNS {
        let model = PopulationModel::new(design, 0.5)?;
        for x in [-0.5, 0.0, 0.7] {
            let v = model.index_map(x, true);
            for y in [-0.5, 0.5, 1.5] {
                for p in [0.2, 0.5, 0.8] {
                    let diff = oracle_h1(&model, x, Event::Le(y), p + step, p - step)? / (2.0 * step);
                    let f = model.conditional_cdf(y, v, normal::quantile(p))?;
                    worst = worst.max((diff - f).abs());
                    count += 1;
                }
            }
        }
    }
    Ok(CheckOutcome::new(
        "derivative identity",
        worst < 1e-6,
        format!("{count} points, max error {worst:.2e}"),
    ))
}

/// `rc_t_hat` on population grids recovers `t(x, y) = y - 1 - x` when the
/// answer lies on the outcome grid.
fn rc_closed_form() -> Result<CheckOutcome> {
    let xs = [-1.0, -0.5, 0.0, 0.5, 1.0];
    let ys = [0.0, 0.5, 1.0, 1.5];
    let p_points = [0.1, 0.3, 0.5, 0.7, 0.9];
    let family = EventFamily::Cdf {
        y_points: (0..=28).map(|k| -3.0 + 0.25 * k as f64).collect(),
    };
    let mut worst = 0.0_f64;
    let mut count = 0;
    for rho in [0.0, 0.5] {
        let model = PopulationModel::new(Design::Rc, rho)?;
        let grid = population_grid(&model, &xs, &family, &p_points)?;
        for &x in &xs {
            for &y in &ys {
                for a in 1..p_points.len() {
                    for b in 0..a {
                        let t = rc_t_hat(&grid, x, y, p_points[a], p_points[b])?.unwrap_or(f64::NAN);
                        let err = (t - (y - 1.0 - x)).abs();
                        worst = if err.is_nan() { f64::INFINITY } else { worst.max(err) };
                        count += 1;
                    }
                }
            }
        }
    }
    Ok(CheckOutcome::new(
        "random coefficient t(x, y)",
        worst < 1e-6,
        format!("{count} pairs, max error {worst:.2e}"),
    ))
}

/// The untreated counterfactual term equals `h0*` at the shifted outcome.
fn phi0_identity() -> Result<CheckOutcome> {
    let mut worst = 0.0_f64;
    for rho in [0.0, 0.5] {
        let model = PopulationModel::new(Design::Rc, rho)?;
        for x in [-1.0, -0.5, 0.0, 0.5, 1.0] {
            for y in [-1.0, 0.0, 1.0, 2.0, 3.0] {
                for p in [0.25, 0.5, 0.75] {
                    let phi = oracle_phi0_rc(x, y, p, rho)?;
                    let h0 = oracle_h0_star(&model, x, Event::Le(y - 1.0 - x), p)?;
                    worst = worst.max((phi - h0).abs());
                }
            }
        }
    }
    Ok(CheckOutcome::new(
        "phi0 identity",
        worst < 1e-9,
        format!("5x5x3 grid at two correlations, max error {worst:.2e}"),
    ))
}

/// Distinct multinomial index vectors give distinct choice probabilities.
fn multinomial_injectivity() -> Result<CheckOutcome> {
    let model = PopulationModel::new(Design::Multinomial, 0.5)?;
    let axis = linspace(-1.5, 1.5, 7);
    let mut probs = Vec::new();
    let mut worst_sum = 0.0_f64;
    for &a in &axis {
        for &b in &axis {
            let v = [a, b];
            let p: Vec<f64> = (0..3)
                .map(|j| model.integrate_event(Event::Category(j), v, 0.0, 1.0))
                .collect::<Result<_>>()?;
            worst_sum = worst_sum.max((p.iter().sum::<f64>() - 1.0).abs());
            probs.push(p);
        }
    }
    let mut closest = f64::INFINITY;
    for i in 0..probs.len() {
        for j in 0..i {
            closest = closest.min(sup_gap(&probs[i], &probs[j]));
        }
    }
    Ok(CheckOutcome::new(
        "multinomial injectivity",
        closest > 1e-6 && worst_sum < 1e-8,
        format!("49 index vectors, min separation {closest:.2e}, max |sum - 1| {worst_sum:.2e}"),
    ))
}

/// Conditional laws are distribution functions in `y`.
fn cdf_sanity() -> Result<CheckOutcome> {
    let ys = linspace(-6.0, 6.0, 121);
    let mut failures = 0;
    let mut cases = 0;
    for design in [Design::D1, Design::D2, Design::D3, Design::Rc, Design::Roy] {
        let model = PopulationModel::new(design, 0.5)?;
        for x in [-1.5, -0.5, 0.25, 1.0] {
            for d in [false, true] {
                let v = model.index_map(x, d);
                for u in [-2.0, 0.0, 1.5] {
                    cases += 1;
                    let lo = model.conditional_cdf(-1e6, v, u)?;
                    let hi = model.conditional_cdf(1e6, v, u)?;
                    let mut prev = lo;
                    let mut ok = lo.abs() < 1e-12 && (1.0 - hi).abs() < 1e-12;
                    for &y in &ys {
                        let f = model.conditional_cdf(y, v, u)?;
                        ok &= f >= prev && (0.0..=1.0).contains(&f);
                        prev = f;
                    }
                    ok &= hi >= prev;
                    failures += usize::from(!ok);
                }
            }
        }
    }
    Ok(CheckOutcome::new(
        "distribution function sanity",
        failures == 0,
        format!("{cases} (design, v, u) cases, {failures} failures"),
    ))
}

/// Spot checks of the matching condition at named covariate pairs.
fn named_pairs() -> Result<CheckOutcome> {
    let family = EventFamily::Cdf {
        y_points: linspace(-3.0, 3.0, 13),
    };
    let p = unit_points(10);
    let d1 = super::check_matching_conditions(&PopulationModel::new(Design::D1, 0.0)?, 0.5, 1.0, &family, &p)?;
    let d2 = super::check_matching_conditions(&PopulationModel::new(Design::D2, 0.0)?, 0.0, 0.5, &family, &p)?;
    Ok(CheckOutcome::new(
        "named pairs",
        d1.holds && !d2.holds && d2.max_gap > 0.01,
        format!(
            "D1 (0.5, 1.0) gap {:.2e}; D2 (0, 0.5) gap {:.3}",
            d1.max_gap, d2.max_gap
        ),
    ))
}

/// Every deterministic population check.
pub fn identification_suite() -> Result<Vec<CheckOutcome>> {
    let mut out = vec![
        scalar_separation(Design::D1, 0.0)?,
        scalar_separation(Design::D1, 0.5)?,
        scalar_separation(Design::D2, 0.25)?,
        scalar_separation(Design::D2, 0.5)?,
    ];
    out.extend(roy_separation()?);
    out.push(named_pairs()?);
    out.push(derivative_identity()?);
    out.push(rc_closed_form()?);
    out.push(phi0_identity()?);
    out.push(multinomial_injectivity()?);
    out.push(cdf_sanity()?);
    Ok(out)
}

/// Brute-force means of the four table designs at each correlation against
/// their closed forms, within `z_limit` standard errors.
pub fn truth_checks(rhos: &[f64], draws: usize, seed: u64, z_limit: f64) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    for design in Design::TABLE_DESIGNS {
        for &rho in rhos {
            let est = brute_force_truth(design, rho, draws, seed)?;
            let truth = true_parameter(design, rho)?;
            let z = (est.mean - truth) / est.std_error;
            out.push(CheckOutcome::new(
                format!("truth {design} rho={rho}"),
                z.abs() <= z_limit,
                format!(
                    "mean {:.6} vs {truth} (se {:.2e}, z {z:+.2}) over {draws} draws",
                    est.mean, est.std_error
                ),
            ));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn d2_sign_flip_at_zero_correlation() {
        // (x, x~) = (-0.75, -0.25): Y1 = -0.25 + 0.25 e and Y0 = -0.25 - 0.25 e
        // share a law when e is symmetric and independent of U
        let family = EventFamily::Cdf {
            y_points: linspace(-3.0, 3.0, 13),
        };
        let p = unit_points(10);
        let at0 = super::super::check_matching_conditions(&PopulationModel::new(Design::D2, 0.0).unwrap(), -0.75, -0.25, &family, &p).unwrap();
        assert!(at0.holds, "{at0:?}");
        let at_half = super::super::check_matching_conditions(&PopulationModel::new(Design::D2, 0.5).unwrap(), -0.75, -0.25, &family, &p).unwrap();
        assert!(!at_half.holds);
    }

    #[test]
    fn scan_counts_locus() {
        let model = PopulationModel::new(Design::D1, 0.25).unwrap();
        let xs = [-0.5, 0.0, 0.5, 1.0];
        let family = EventFamily::Cdf { y_points: vec![0.0, 1.0] };
        let scan = separation_scan(&model, &xs, &family, &[0.0, 0.5, 1.0], |x, xt| (xt - x - 0.5).abs() < 1e-9, |_, _| false).unwrap();
        assert_eq!(scan.pairs, 16);
        assert_eq!(scan.locus_pairs, 3);
        assert_eq!(scan.zero_pairs, 3);
        assert!(scan.passed());
    }

    #[test]
    fn outcome_display() {
        let c = CheckOutcome::new("x", false, "y".into());
        assert_eq!(c.to_string(), "FAIL x: y");
    }
}
