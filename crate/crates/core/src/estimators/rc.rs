use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{canonical_order, EstimateReport, EstimatorKind};
use crate::dgp::{Design, Sample};
use crate::error::{Error, Result};
use crate::matching::EventFamily;
use crate::nonparametrics::{linspace, outcome_range, EstimatorConfig, GridSmoother, HGrid};
use crate::rng::mix_seed;

/// Outcome level at which the distribution function is estimated in the tables.
pub const RC_EVALUATION_Y: f64 = 1.0;

/// Minimiser over `t` of `(target - f(t))^2` where `f` interpolates `values`
/// linearly between `t_points`.
///
/// Returns the smallest exact root of the interpolant when one exists, and
/// otherwise the grid point with the smallest gap (ties to the smallest `t`).
/// `None` flags a flat `f`, for which the objective carries no information.
pub fn solve_crossing(t_points: &[f64], values: &[f64], target: f64) -> Option<f64> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if t_points.is_empty() || !(hi - lo > 1e-15) {
        return None;
    }
    for k in 0..t_points.len() - 1 {
        let (a, b) = (values[k] - target, values[k + 1] - target);
        if a == 0.0 {
            return Some(t_points[k]);
        }
        if a * b < 0.0 {
            return Some(t_points[k] + a / (a - b) * (t_points[k + 1] - t_points[k]));
        }
    }
    let mut best = (f64::INFINITY, 0usize);
    for (k, v) in values.iter().enumerate() {
        let gap = (v - target).abs();
        if gap < best.0 {
            best = (gap, k);
        }
    }
    Some(t_points[best.1])
}

fn interpolate(points: &[f64], values: &[f64], y: f64) -> f64 {
    let k = points.partition_point(|&q| q < y);
    if k == 0 {
        values[0]
    } else if k == points.len() {
        values[k - 1]
    } else if points[k] == y {
        values[k]
    } else {
        let w = (y - points[k - 1]) / (points[k] - points[k - 1]);
        values[k - 1] + w * (values[k] - values[k - 1])
    }
}

fn cdf_points(grid: &HGrid) -> Result<&[f64]> {
    match &grid.family {
        EventFamily::Cdf { y_points } => Ok(y_points),
        _ => Err(Error::Config("outcome matching needs a CDF event grid".into())),
    }
}

/// Solves `h1(x, y, p_a, p_b) = h0(x, t, p_a, p_b)` for one propensity pair,
/// reading `h1*` at `y` by linear interpolation along the outcome grid.
fn t_hat_at(grid: &HGrid, ix: usize, y: f64, ia: usize, ib: usize) -> Option<f64> {
    let ys = cdf_points(grid).ok()?;
    let ne = ys.len();
    let row = |ip: usize| grid.offset(ix, 0, ip)..grid.offset(ix, 0, ip) + ne;
    let (row1a, row1b) = (&grid.values_h1star[row(ia)], &grid.values_h1star[row(ib)]);
    if row1a[0].is_nan() || row1b[0].is_nan() {
        return None;
    }
    let target = interpolate(ys, row1a, y) - interpolate(ys, row1b, y);
    let (row0a, row0b) = (&grid.values_h0star[row(ia)], &grid.values_h0star[row(ib)]);
    crossing_of_difference(ys, row0b, row0a, target, &mut Vec::with_capacity(ne))
}

/// [`solve_crossing`] applied to `plus - minus`, using `scratch` for the
/// difference.
fn crossing_of_difference(ts: &[f64], plus: &[f64], minus: &[f64], target: f64, scratch: &mut Vec<f64>) -> Option<f64> {
    scratch.clear();
    scratch.extend(plus.iter().zip(minus).map(|(a, b)| a - b));
    let mut prev = scratch[0] - target;
    let mut root = (prev == 0.0).then_some((ts[0], 0));
    if root.is_none() {
        for k in 1..ts.len() {
            let cur = scratch[k] - target;
            if cur == 0.0 {
                root = Some((ts[k], k));
                break;
            }
            if prev * cur < 0.0 {
                root = Some((ts[k - 1] + prev / (prev - cur) * (ts[k] - ts[k - 1]), k));
                break;
            }
            prev = cur;
        }
    }
    if let Some((t, k)) = root {
        let first = scratch[0];
        if scratch[..=k].iter().any(|&v| (v - first).abs() > 1e-15) {
            return Some(t);
        }
    }
    solve_crossing(ts, scratch, target)
}

/// `t^(x, y, p1, p2)`: the outcome level at which untreated units reproduce
/// the treated probability mass below `y` between the two propensity points.
/// `x`, `p1` and `p2` must be grid points. `None` flags a flat objective or
/// missing local data.
pub fn rc_t_hat(grid: &HGrid, x: f64, y: f64, p1: f64, p2: f64) -> Result<Option<f64>> {
    cdf_points(grid)?;
    if !(p1 > p2) {
        return Err(Error::Domain(format!("need p1 > p2, got {p1} and {p2}")));
    }
    let ix = grid
        .x_index(x)
        .ok_or_else(|| Error::Domain(format!("x = {x} is not a query point")))?;
    let lookup = |p: f64| {
        grid.p_index(p)
            .ok_or_else(|| Error::Domain(format!("p = {p} is not a grid propensity point")))
    };
    let (ia, ib) = (lookup(p1)?, lookup(p2)?);
    Ok(t_hat_at(grid, ix, y, ia, ib))
}

/// `tau^(x, y)`: average of `t^` over every ordered propensity pair of the
/// grid, divided by the number of pairs that produced a value.
pub fn rc_tau(grid: &HGrid, x: f64, y: f64) -> Result<f64> {
    cdf_points(grid)?;
    let ix = grid
        .x_index(x)
        .ok_or_else(|| Error::Domain(format!("x = {x} is not a query point")))?;
    tau_at(grid, ix, y).ok_or_else(|| Error::Estimation {
        reason: format!("no propensity pair produced t^ at x = {x}"),
        n_used: 0,
        n_dropped: 1,
    })
}

fn tau_at(grid: &HGrid, ix: usize, y: f64) -> Option<f64> {
    let ys = cdf_points(grid).ok()?;
    let ne = ys.len();
    let m = grid.p_points.len();
    let h1_at_y: Vec<f64> = (0..m)
        .map(|ip| {
            let base = grid.offset(ix, 0, ip);
            interpolate(ys, &grid.values_h1star[base..base + ne], y)
        })
        .collect();
    let row0 = |ip: usize| &grid.values_h0star[grid.offset(ix, 0, ip)..grid.offset(ix, 0, ip) + ne];
    let mut scratch = Vec::with_capacity(ne);
    let mut sum = 0.0;
    let mut count = 0usize;
    for a in 1..m {
        if h1_at_y[a].is_nan() {
            continue;
        }
        for b in 0..a {
            if h1_at_y[b].is_nan() {
                continue;
            }
            if let Some(t) = crossing_of_difference(ys, row0(b), row0(a), h1_at_y[a] - h1_at_y[b], &mut scratch) {
                sum += t;
                count += 1;
            }
        }
    }
    (count > 0).then(|| sum / count as f64)
}

fn rc_target(sample: &Sample, y: f64) -> Option<f64> {
    (sample.spec.design == Design::Rc && y == RC_EVALUATION_Y).then_some(0.5)
}

/// Plug-in estimate of `P(Y_1 <= y)`: treated units contribute `1{Y_i <= y}`
/// and untreated ones `1{Y_i <= tau^(X_i, y)}`. Units whose `tau^` cannot be
/// formed are dropped.
pub fn rc_dte(sample: &Sample, config: &EstimatorConfig, y: f64) -> Result<EstimateReport> {
    config.validate()?;
    if !y.is_finite() {
        return Err(Error::Domain(format!("evaluation point must be finite, got {y}")));
    }
    let obs = canonical_order(&sample.observations);
    let n = obs.len();
    if n == 0 {
        return Err(Error::Config("empty sample".into()));
    }
    let (lo, hi) = outcome_range(&obs);
    let mut y_points = linspace(lo, hi, config.rc_y_grid_size);
    if !y_points.contains(&y) {
        let at = y_points.partition_point(|&q| q < y);
        y_points.insert(at, y);
    }
    let mut p_points: Vec<f64> = obs.iter().map(|o| o.p).filter(|&p| config.in_band(p)).collect();
    p_points.sort_by(f64::total_cmp);
    p_points.dedup();
    if p_points.len() > config.rc_pair_limit {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[config.rc_subsample_seed, n as u64]));
        let mut keep = sample_indices(&mut rng, p_points.len(), config.rc_pair_limit).into_vec();
        keep.sort_unstable();
        p_points = keep.into_iter().map(|k| p_points[k]).collect();
    }
    if p_points.len() < 2 {
        return Err(Error::Estimation {
            reason: "fewer than two distinct trimmed-in propensity values".into(),
            n_used: 0,
            n_dropped: n,
        });
    }
    let smoother = GridSmoother::new(&obs, config, EventFamily::Cdf { y_points }, p_points)?;

    let mut untreated_xs: Vec<f64> = obs.iter().filter(|o| !o.d).map(|o| o.x).collect();
    untreated_xs.sort_by(f64::total_cmp);
    untreated_xs.dedup();
    let taus: Vec<Option<f64>> = untreated_xs
        .par_iter()
        .map(|&x| tau_at(&smoother.grid(&[x]), 0, y))
        .collect();
    let mut hits = 0usize;
    let mut used = 0usize;
    for o in &obs {
        let threshold = if o.d {
            Some(y)
        } else {
            taus[untreated_xs.partition_point(|&q| q.total_cmp(&o.x).is_lt())]
        };
        if let Some(t) = threshold {
            used += 1;
            if o.y <= t {
                hits += 1;
            }
        }
    }
    if used == 0 {
        return Err(Error::Estimation {
            reason: "no usable observations".into(),
            n_used: 0,
            n_dropped: n,
        });
    }
    Ok(EstimateReport {
        estimator: EstimatorKind::RcDte,
        value: hits as f64 / used as f64,
        n_used: used,
        n_dropped: n - used,
        target: rc_target(sample, y),
    })
}

/// The same plug-in with the population map `t(x, y) = y - 1 - x` of the
/// random coefficient design.
pub fn rc_dte_infeasible(sample: &Sample, y: f64) -> Result<EstimateReport> {
    let n = sample.observations.len();
    if n == 0 {
        return Err(Error::Config("empty sample".into()));
    }
    let hits = sample
        .observations
        .iter()
        .filter(|o| if o.d { o.y <= y } else { o.y <= y - 1.0 - o.x })
        .count();
    Ok(EstimateReport {
        estimator: EstimatorKind::RcDte,
        value: hits as f64 / n as f64,
        n_used: n,
        n_dropped: 0,
        target: rc_target(sample, y),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{generate, DesignSpec, Observation};
    use crate::normal;
    use proptest::prelude::*;

    /// Grid with `h0*(x, t, p) = (1 - p) L(t)` and `h1*(x, y, p) = p L(tau)`
    /// at every `y`, so that every pair solves to `t = tau`.
    fn linear_grid(tau: f64) -> HGrid {
        let ys = linspace(-5.0, 5.0, 11);
        let l = |t: f64| (t + 5.0) / 10.0;
        let mut g = HGrid::new(vec![0.0], EventFamily::Cdf { y_points: ys.clone() }, vec![0.1, 0.4, 0.6, 0.9]);
        for ip in 0..4 {
            let p = g.p_points[ip];
            for (ie, &t) in ys.iter().enumerate() {
                let k = g.offset(0, ie, ip);
                g.values_h0star[k] = (1.0 - p) * l(t);
                g.values_h1star[k] = p * l(tau);
            }
        }
        g
    }

    #[test]
    fn crossing_cases() {
        let t = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(solve_crossing(&t, &[0.0, 0.2, 0.5, 0.9], 0.0), Some(0.0));
        assert!((solve_crossing(&t, &[0.0, 0.2, 0.5, 0.9], 0.35).unwrap() - 1.5).abs() < 1e-15);
        assert_eq!(solve_crossing(&t, &[0.3, 0.3, 0.3, 0.3], 0.3), None);
        assert_eq!(solve_crossing(&t, &[0.1, 0.2, 0.5, 0.9], 2.0), Some(3.0));
        assert_eq!(solve_crossing(&t, &[0.1, 0.2, 0.5, 0.9], -1.0), Some(0.0));
        // non-monotone: smallest root wins
        assert_eq!(solve_crossing(&t, &[0.0, 0.5, 0.0, 0.5], 0.25), Some(0.5));
    }

    #[test]
    fn constant_pairs_average_to_the_constant() {
        let g = linear_grid(0.3);
        for (a, b) in g.p_pairs() {
            let t = rc_t_hat(&g, 0.0, 1.0, g.p_points[a], g.p_points[b]).unwrap().unwrap();
            assert!((t - 0.3).abs() < 1e-12);
        }
        assert!((rc_tau(&g, 0.0, 1.0).unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn argument_checks() {
        let g = linear_grid(0.0);
        assert!(rc_t_hat(&g, 0.0, 1.0, 0.4, 0.6).is_err());
        assert!(rc_t_hat(&g, 0.0, 1.0, 0.6, 0.5).is_err());
        assert!(rc_t_hat(&g, 2.0, 1.0, 0.6, 0.4).is_err());
    }

    #[test]
    fn all_treated_gives_empirical_cdf() {
        let obs: Vec<Observation> = (0..30)
            .map(|k| {
                let p = 0.06 + 0.03 * k as f64;
                Observation { y: (k as f64 - 15.0) / 5.0, w: None, d: true, x: 0.0, z: normal::quantile(p), p }
            })
            .collect();
        let expected = obs.iter().filter(|o| o.y <= 1.0).count() as f64 / 30.0;
        let s = Sample::from_observations(DesignSpec::new(Design::Rc, 0.0, 30, 0), obs);
        let r = rc_dte(&s, &EstimatorConfig::default(), 1.0).unwrap();
        assert_eq!(r.value, expected);
        assert_eq!(r.target, Some(0.5));
    }

    #[test]
    fn estimate_in_unit_interval_and_deterministic() {
        let s = generate(&DesignSpec::new(Design::Rc, 0.25, 120, 5)).unwrap();
        let c = EstimatorConfig::default();
        let a = rc_dte(&s, &c, 1.0).unwrap();
        assert!((0.0..=1.0).contains(&a.value));
        assert_eq!(a.n_used + a.n_dropped, 120);
        let mut shuffled = s.clone();
        shuffled.observations.reverse();
        assert_eq!(a, rc_dte(&shuffled, &c, 1.0).unwrap());
        let inf = rc_dte_infeasible(&s, 1.0).unwrap();
        assert!((0.0..=1.0).contains(&inf.value));
    }

    #[test]
    fn subsampled_pair_grid_is_seeded() {
        let s = generate(&DesignSpec::new(Design::Rc, 0.0, 80, 2)).unwrap();
        let c = EstimatorConfig { rc_pair_limit: 20, ..Default::default() };
        assert_eq!(rc_dte(&s, &c, 1.0).unwrap(), rc_dte(&s, &c, 1.0).unwrap());
    }

    proptest! {
        #[test]
        fn tau_is_the_mean_of_pairwise_solutions(seed in 0u64..1000, y in -1.0f64..2.0) {
            let s = generate(&DesignSpec::new(Design::Rc, 0.25, 60, seed)).unwrap();
            let c = EstimatorConfig::default();
            let fam = EventFamily::Cdf { y_points: linspace(-4.0, 5.0, 10) };
            let g = crate::nonparametrics::build_event_grid(&s.observations, &c, &[0.2], fam, vec![0.1, 0.3, 0.5, 0.8]).unwrap();
            let mut vals = Vec::new();
            for (a, b) in g.p_pairs() {
                if let Some(t) = rc_t_hat(&g, 0.2, y, g.p_points[a], g.p_points[b]).unwrap() {
                    vals.push(t);
                }
            }
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            prop_assert!((rc_tau(&g, 0.2, y).unwrap() - mean).abs() < 1e-12);
        }

        #[test]
        fn fast_crossing_agrees_with_reference(
            plus in prop::collection::vec(prop_oneof![Just(0.25), 0.0f64..1.0], 2..12),
            shift in prop_oneof![Just(0.0), -0.5f64..0.5],
            target in prop_oneof![Just(0.0), -1.0f64..1.0],
        ) {
            let ts = linspace(-1.0, 1.0, plus.len());
            let minus: Vec<f64> = plus.iter().map(|v| v * 0.5 + shift).collect();
            let diff: Vec<f64> = plus.iter().zip(&minus).map(|(a, b)| a - b).collect();
            let fast = crossing_of_difference(&ts, &plus, &minus, target, &mut Vec::new());
            prop_assert_eq!(fast, solve_crossing(&ts, &diff, target));
        }
    }
}
