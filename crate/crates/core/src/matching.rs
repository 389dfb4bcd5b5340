//! Event families, fingerprint distances and counterfactual imputation by
//! kernel weighting in (distance, propensity) space.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::ops::Range;

use crate::dgp::{Observation, Sector};
use crate::error::{Error, Result};
use crate::nonparametrics::{DistanceBandwidth, EstimatorConfig, HGrid, NW_FLOOR};
use crate::normal;

/// A single indicator event on an observed outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Event {
    /// `1{Y <= y}`
    Le(f64),
    /// `1{Y = j}`
    Category(usize),
    /// `1{W = a}`
    SectorA,
    /// `1{Y <= y, W = a}`
    LeSectorA(f64),
}

impl Event {
    pub fn indicator(&self, o: &Observation) -> bool {
        match *self {
            Event::Le(y) => o.y <= y,
            Event::Category(j) => o.y == j as f64,
            Event::SectorA => o.w == Some(Sector::A),
            Event::LeSectorA(y) => o.w == Some(Sector::A) && o.y <= y,
        }
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Event::Le(y) => write!(f, "le:{y}"),
            Event::Category(j) => write!(f, "cat:{j}"),
            Event::SectorA => f.write_str("w=a"),
            Event::LeSectorA(y) => write!(f, "le_w=a:{y}"),
        }
    }
}

/// A fixed, finite set of events used to fingerprint conditional laws.
#[derive(Debug, Clone, PartialEq)]
pub enum EventFamily {
    /// `1{Y <= y_k}` for each grid point.
    Cdf { y_points: Vec<f64> },
    /// `1{Y = j}` for `j = 0..categories`.
    Category { categories: usize },
    /// `1{Y <= y_k, W = a}` for each grid point, then `1{W = a}`.
    RoyJoint { y_points: Vec<f64> },
}

impl EventFamily {
    pub fn len(&self) -> usize {
        match self {
            EventFamily::Cdf { y_points } => y_points.len(),
            EventFamily::Category { categories } => *categories,
            EventFamily::RoyJoint { y_points } => y_points.len() + 1,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn event(&self, k: usize) -> Event {
        match self {
            EventFamily::Cdf { y_points } => Event::Le(y_points[k]),
            EventFamily::Category { .. } => Event::Category(k),
            EventFamily::RoyJoint { y_points } => match y_points.get(k) {
                Some(&y) => Event::LeSectorA(y),
                None => Event::SectorA,
            },
        }
    }

    pub fn events(&self) -> Vec<Event> {
        (0..self.len()).map(|k| self.event(k)).collect()
    }

    /// Numeric coordinate of event `k` for tabular export. The sector-only
    /// Roy event is `Y <= +inf`.
    pub fn coordinate(&self, k: usize) -> f64 {
        match self.event(k) {
            Event::Le(y) | Event::LeSectorA(y) => y,
            Event::Category(j) => j as f64,
            Event::SectorA => f64::INFINITY,
        }
    }

    pub(crate) fn bucket_count(&self) -> usize {
        match self {
            EventFamily::Cdf { y_points } => y_points.len() + 1,
            EventFamily::Category { categories } => categories + 1,
            EventFamily::RoyJoint { y_points } => y_points.len() + 2,
        }
    }

    /// Bucket of an observation; events are unions of buckets.
    pub(crate) fn bucket(&self, o: &Observation) -> usize {
        match self {
            EventFamily::Cdf { y_points } => y_points.partition_point(|&yk| yk < o.y),
            EventFamily::Category { categories } => {
                let j = o.y as usize;
                if o.y >= 0.0 && j as f64 == o.y && j < *categories {
                    j
                } else {
                    *categories
                }
            }
            EventFamily::RoyJoint { y_points } => {
                if o.w == Some(Sector::A) {
                    y_points.partition_point(|&yk| yk < o.y)
                } else {
                    y_points.len() + 1
                }
            }
        }
    }

    /// Event probabilities from bucket masses.
    pub(crate) fn fold_buckets(&self, buckets: &[f64], total: f64, out: &mut [f64]) {
        match self {
            EventFamily::Category { categories } => {
                for k in 0..*categories {
                    out[k] = buckets[k] / total;
                }
            }
            EventFamily::Cdf { y_points } | EventFamily::RoyJoint { y_points } => {
                let mut acc = 0.0;
                for k in 0..y_points.len() {
                    acc += buckets[k];
                    out[k] = acc / total;
                }
                if let EventFamily::RoyJoint { .. } = self {
                    out[y_points.len()] = (acc + buckets[y_points.len()]) / total;
                }
            }
        }
    }

    /// Index ranges along which event probabilities are nondecreasing.
    pub(crate) fn monotone_runs(&self) -> Vec<Range<usize>> {
        match self {
            EventFamily::Category { .. } => Vec::new(),
            _ => vec![0..self.len()],
        }
    }
}

/// Per-covariate vectors of `h1` and `h0` differences over (p-pair, event)
/// cells. NaN marks a cell without local data.
#[derive(Debug, Clone)]
pub struct Fingerprints {
    pub cells: usize,
    pub treated: Vec<f64>,
    pub untreated: Vec<f64>,
}

impl Fingerprints {
    pub fn from_grid(grid: &HGrid) -> Self {
        let pairs = grid.p_pairs();
        let ne = grid.n_events();
        let cells = pairs.len() * ne;
        let nx = grid.query_xs.len();
        let mut treated = vec![f64::NAN; nx * cells];
        let mut untreated = vec![f64::NAN; nx * cells];
        for ix in 0..nx {
            for (k, &(a, b)) in pairs.iter().enumerate() {
                for ie in 0..ne {
                    let at = ix * cells + k * ne + ie;
                    treated[at] = grid.h1(ix, ie, a, b).unwrap_or(f64::NAN);
                    untreated[at] = grid.h0(ix, ie, a, b).unwrap_or(f64::NAN);
                }
            }
        }
        Self {
            cells,
            treated,
            untreated,
        }
    }

    pub fn treated(&self, ix: usize) -> &[f64] {
        &self.treated[ix * self.cells..(ix + 1) * self.cells]
    }

    pub fn untreated(&self, ix: usize) -> &[f64] {
        &self.untreated[ix * self.cells..(ix + 1) * self.cells]
    }

    /// Root mean squared gap between the treated print at `ix1` and the
    /// untreated print at `ix0`; `None` if no cell is usable on both sides.
    pub fn distance(&self, ix1: usize, ix0: usize) -> Option<f64> {
        rms_gap(self.treated(ix1), self.untreated(ix0))
    }
}

fn rms_gap(a: &[f64], b: &[f64]) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (u, v) in a.iter().zip(b) {
        let d = u - v;
        if d.is_nan() {
            continue;
        }
        sum += d * d;
        count += 1;
    }
    (count > 0).then(|| (sum / count as f64).sqrt())
}

/// `|| h1(x1, .) - h0(x0, .) ||` with uniform weights over events and
/// propensity pairs. Both covariates must be query points of `grid`.
pub fn distance(grid: &HGrid, x1: f64, x0: f64) -> Result<Option<f64>> {
    let lookup = |x: f64| {
        grid.x_index(x)
            .ok_or_else(|| Error::Domain(format!("x = {x} is not a query point of the grid")))
    };
    let (i1, i0) = (lookup(x1)?, lookup(x0)?);
    let pairs = grid.p_pairs();
    let ne = grid.n_events();
    let a: Vec<f64> = pairs
        .iter()
        .flat_map(|&(pa, pb)| (0..ne).map(move |ie| grid.h1(i1, ie, pa, pb).unwrap_or(f64::NAN)))
        .collect();
    let b: Vec<f64> = pairs
        .iter()
        .flat_map(|&(pa, pb)| (0..ne).map(move |ie| grid.h0(i0, ie, pa, pb).unwrap_or(f64::NAN)))
        .collect();
    Ok(rms_gap(&a, &b))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchResult {
    pub target_index: usize,
    /// Smallest fingerprint distance among comparable donors.
    pub matched_distance: f64,
    pub imputed_y: f64,
    pub usable: bool,
}

impl MatchResult {
    fn unusable(target_index: usize) -> Self {
        Self {
            target_index,
            matched_distance: f64::NAN,
            imputed_y: f64::NAN,
            usable: false,
        }
    }
}

/// Imputation context: fingerprints of every grid covariate plus a fixed
/// donor pool.
pub struct Matcher<'a> {
    obs: &'a [Observation],
    prints: Fingerprints,
    grid_index: Vec<Option<usize>>,
    donors: Vec<usize>,
    bandwidth: f64,
    rule: DistanceBandwidth,
    scale: f64,
    config: &'a EstimatorConfig,
}

impl<'a> Matcher<'a> {
    /// `donors` must be untreated observations whose covariates are grid
    /// query points; others are ignored.
    pub fn new(obs: &'a [Observation], grid: &HGrid, config: &'a EstimatorConfig, donors: &[usize]) -> Result<Self> {
        config.validate()?;
        let mut lookup: HashMap<u64, usize> = HashMap::with_capacity(grid.query_xs.len());
        for (k, x) in grid.query_xs.iter().enumerate() {
            lookup.entry(x.to_bits()).or_insert(k);
        }
        let grid_index: Vec<Option<usize>> = obs.iter().map(|o| lookup.get(&o.x.to_bits()).copied()).collect();
        let donors: Vec<usize> = donors
            .iter()
            .copied()
            .filter(|&j| j < obs.len() && !obs[j].d && grid_index[j].is_some())
            .collect();
        Ok(Self {
            obs,
            prints: Fingerprints::from_grid(grid),
            grid_index,
            donors,
            bandwidth: config.bandwidth(obs.len()),
            rule: config.distance_bandwidth,
            scale: config.distance_bandwidth_scale,
            config,
        })
    }

    pub fn donors(&self) -> &[usize] {
        &self.donors
    }

    /// `(donor, distance)` for every comparable donor other than `i`.
    pub fn donor_distances(&self, i: usize) -> Vec<(usize, f64)> {
        let Some(ix) = self.grid_index.get(i).copied().flatten() else {
            return Vec::new();
        };
        let target = self.prints.treated(ix);
        self.donors
            .iter()
            .filter(|&&j| j != i)
            .filter_map(|&j| {
                let jx = self.grid_index[j]?;
                rms_gap(target, self.prints.untreated(jx)).map(|d| (j, d))
            })
            .collect()
    }

    /// Distance bandwidth for a target given its donor distances.
    pub fn distance_bandwidth(&self, distances: &[(usize, f64)]) -> f64 {
        let base = self.bandwidth * self.scale;
        match self.rule {
            DistanceBandwidth::Fixed => base,
            DistanceBandwidth::DonorScaled => {
                let m = distances.len() as f64;
                let mean = distances.iter().map(|d| d.1).sum::<f64>() / m;
                let var = distances.iter().map(|d| (d.1 - mean).powi(2)).sum::<f64>() / m;
                let sd = var.sqrt();
                // spreads at rounding level carry no information
                if sd > 1e-12 && sd.is_finite() {
                    base * sd
                } else {
                    base
                }
            }
        }
    }

    /// Kernel-weighted donor average for untreated target `i`.
    pub fn impute(&self, i: usize) -> MatchResult {
        let o = &self.obs[i];
        if o.d || !self.config.in_band(o.p) {
            return MatchResult::unusable(i);
        }
        let distances = self.donor_distances(i);
        if distances.is_empty() {
            return MatchResult::unusable(i);
        }
        let b_delta = self.distance_bandwidth(&distances);
        let nearest = distances.iter().map(|d| d.1).fold(f64::INFINITY, f64::min);
        let weights: Vec<f64> = distances
            .iter()
            .map(|&(j, d)| normal::kernel(d / b_delta) * normal::kernel((self.obs[j].p - o.p) / self.bandwidth))
            .collect();
        let den: f64 = weights.iter().sum();
        if den < NW_FLOOR {
            return MatchResult {
                matched_distance: nearest,
                ..MatchResult::unusable(i)
            };
        }
        let imputed_y = distances
            .iter()
            .zip(&weights)
            .map(|(&(j, _), w)| w * self.obs[j].y)
            .sum::<f64>()
            / den;
        MatchResult {
            target_index: i,
            matched_distance: nearest,
            imputed_y,
            usable: true,
        }
    }
}

/// Imputes `E[Y_1 | D = 0, X = X_i, P = P_i]` for untreated observation `i`
/// from trimmed-in untreated donors `j != i` whose covariates are grid points.
pub fn impute_counterfactual(obs: &[Observation], grid: &HGrid, config: &EstimatorConfig, i: usize) -> Result<MatchResult> {
    let target = obs
        .get(i)
        .ok_or_else(|| Error::Domain(format!("target index {i} out of range")))?;
    if target.d {
        return Err(Error::Domain(format!("target {i} is treated")));
    }
    let donors: Vec<usize> = (0..obs.len())
        .filter(|&j| j != i && !obs[j].d && config.in_band(obs[j].p))
        .collect();
    let matcher = Matcher::new(obs, grid, config, &donors)?;
    if matcher.donors().is_empty() {
        return Err(Error::Estimation {
            reason: "no comparable untreated donors".into(),
            n_used: 0,
            n_dropped: 1,
        });
    }
    Ok(matcher.impute(i))
}

/// Writes `i,x,p,matched_distance,imputed_y,usable`.
pub fn write_match_csv<W: Write>(obs: &[Observation], results: &[MatchResult], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["i", "x", "p", "matched_distance", "imputed_y", "usable"])?;
    let fmt = |v: f64| if v.is_nan() { String::new() } else { format!("{v:.16e}") };
    for r in results {
        let o = &obs[r.target_index];
        wtr.write_record([
            r.target_index.to_string(),
            fmt(o.x),
            fmt(o.p),
            fmt(r.matched_distance),
            fmt(r.imputed_y),
            r.usable.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{generate, Design, DesignSpec};
    use crate::nonparametrics::build_h_grid;

    fn untreated(y: f64, x: f64, p: f64) -> Observation {
        Observation { y, w: None, d: false, x, z: normal::quantile(p), p }
    }

    #[test]
    fn family_buckets_fold_to_indicators() {
        let fams = [
            EventFamily::Cdf { y_points: vec![-1.0, 0.0, 2.0] },
            EventFamily::Category { categories: 3 },
            EventFamily::RoyJoint { y_points: vec![-1.0, 0.0, 2.0] },
        ];
        let sample = [
            (0.0, Some(Sector::A)),
            (1.0, Some(Sector::B)),
            (2.0, None),
            (-3.0, Some(Sector::A)),
            (0.5, Some(Sector::A)),
        ];
        for fam in &fams {
            let obs: Vec<Observation> = sample
                .iter()
                .map(|&(y, w)| Observation { y, w, d: false, x: 0.0, z: 0.0, p: 0.5 })
                .collect();
            let mut buckets = vec![0.0; fam.bucket_count()];
            for o in &obs {
                buckets[fam.bucket(o)] += 1.0;
            }
            let mut out = vec![0.0; fam.len()];
            fam.fold_buckets(&buckets, obs.len() as f64, &mut out);
            for (k, e) in fam.events().iter().enumerate() {
                let direct = obs.iter().filter(|o| e.indicator(o)).count() as f64 / obs.len() as f64;
                assert_eq!(out[k], direct, "{e}");
            }
        }
    }

    #[test]
    fn identical_fingerprints_have_zero_distance() {
        let s = generate(&DesignSpec::new(Design::D1, 0.0, 200, 3)).unwrap();
        let mut g = build_h_grid(&s.observations, &EstimatorConfig::default(), &[0.0, 0.4]).unwrap();
        // make h0 at x = 0.4 mirror h1 at x = 0 cell by cell: h0*(p) = 1 - h1*(p)
        for ie in 0..g.n_events() {
            for ip in 0..g.p_points.len() {
                let a = g.offset(0, ie, ip);
                let b = g.offset(1, ie, ip);
                g.values_h0star[b] = 1.0 - g.values_h1star[a];
            }
        }
        assert!(distance(&g, 0.0, 0.4).unwrap().unwrap() < 1e-15);
        assert!(distance(&g, 0.0, 0.3).is_err());
    }

    #[test]
    fn constant_donors_impute_their_value() {
        let mut obs = vec![untreated(7.0, 0.5, 0.4)];
        for _ in 0..5 {
            obs.push(untreated(2.0, 0.5, 0.4));
        }
        let c = EstimatorConfig::default();
        let g = build_h_grid(&obs, &c, &[0.5]).unwrap();
        let r = impute_counterfactual(&obs, &g, &c, 0).unwrap();
        assert!(r.usable);
        assert_eq!(r.imputed_y, 2.0);
        assert!(r.matched_distance < 1e-12);
    }

    #[test]
    fn target_is_never_its_own_donor() {
        let s = generate(&DesignSpec::new(Design::D1, 0.25, 150, 8)).unwrap();
        let o = &s.observations;
        let c = EstimatorConfig::default();
        let xs: Vec<f64> = o.iter().map(|o| o.x).collect();
        let g = build_h_grid(o, &c, &xs).unwrap();
        let i = (0..o.len()).find(|&i| !o[i].d && c.in_band(o[i].p)).unwrap();
        let all: Vec<usize> = (0..o.len()).filter(|&j| !o[j].d && c.in_band(o[j].p)).collect();
        let without: Vec<usize> = all.iter().copied().filter(|&j| j != i).collect();
        let a = Matcher::new(o, &g, &c, &all).unwrap().impute(i);
        let b = Matcher::new(o, &g, &c, &without).unwrap().impute(i);
        assert_eq!(a, b);
        assert_eq!(a, impute_counterfactual(o, &g, &c, i).unwrap());
    }

    #[test]
    fn out_of_band_and_treated_targets() {
        let s = generate(&DesignSpec::new(Design::D1, 0.0, 300, 2)).unwrap();
        let o = &s.observations;
        let c = EstimatorConfig::default();
        let xs: Vec<f64> = o.iter().map(|o| o.x).collect();
        let g = build_h_grid(o, &c, &xs).unwrap();
        let t = (0..o.len()).find(|&i| o[i].d).unwrap();
        assert!(impute_counterfactual(o, &g, &c, t).is_err());
        if let Some(i) = (0..o.len()).find(|&i| !o[i].d && !c.in_band(o[i].p)) {
            assert!(!impute_counterfactual(o, &g, &c, i).unwrap().usable);
        }
    }

    #[test]
    fn match_csv_header() {
        let obs = vec![untreated(1.0, 0.0, 0.5)];
        let r = [MatchResult { target_index: 0, matched_distance: 0.1, imputed_y: 1.5, usable: true }];
        let mut buf = Vec::new();
        write_match_csv(&obs, &r, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("i,x,p,matched_distance,imputed_y,usable\n0,"));
        assert!(text.trim_end().ends_with(",true"));
    }
}
