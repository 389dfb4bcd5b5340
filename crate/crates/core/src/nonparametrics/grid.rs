use std::io::Write;

use super::{EstimatorConfig, NW_FLOOR};
use crate::dgp::Observation;
use crate::error::{Error, Result};
use crate::isotonic::pava_in_place;
use crate::matching::EventFamily;
use crate::normal;

/// Estimated (or population) `h1*` and `h0*` over query covariates, events
/// and propensity points.
///
/// Values are stored with the event index varying fastest, then the
/// propensity index, then the covariate index. Cells without local data hold
/// NaN and are reported as `None` by the accessors.
#[derive(Debug, Clone, PartialEq)]
pub struct HGrid {
    pub query_xs: Vec<f64>,
    pub family: EventFamily,
    pub p_points: Vec<f64>,
    pub values_h1star: Vec<f64>,
    pub values_h0star: Vec<f64>,
}

impl HGrid {
    /// Empty grid for the given axes, every cell flagged.
    pub fn new(query_xs: Vec<f64>, family: EventFamily, p_points: Vec<f64>) -> Self {
        let size = query_xs.len() * p_points.len() * family.len();
        Self {
            query_xs,
            family,
            p_points,
            values_h1star: vec![f64::NAN; size],
            values_h0star: vec![f64::NAN; size],
        }
    }

    pub fn n_events(&self) -> usize {
        self.family.len()
    }

    /// Outcome points of a CDF family, empty otherwise.
    pub fn y_points(&self) -> &[f64] {
        match &self.family {
            EventFamily::Cdf { y_points } | EventFamily::RoyJoint { y_points } => y_points,
            EventFamily::Category { .. } => &[],
        }
    }

    #[inline]
    pub fn offset(&self, ix: usize, ie: usize, ip: usize) -> usize {
        (ix * self.p_points.len() + ip) * self.family.len() + ie
    }

    /// Index of `x` among the query points (exact match).
    pub fn x_index(&self, x: f64) -> Option<usize> {
        self.query_xs.iter().position(|&q| q == x)
    }

    pub fn p_index(&self, p: f64) -> Option<usize> {
        self.p_points.iter().position(|&q| q == p)
    }

    pub fn h1star(&self, ix: usize, ie: usize, ip: usize) -> Option<f64> {
        let v = self.values_h1star[self.offset(ix, ie, ip)];
        (!v.is_nan()).then_some(v)
    }

    pub fn h0star(&self, ix: usize, ie: usize, ip: usize) -> Option<f64> {
        let v = self.values_h0star[self.offset(ix, ie, ip)];
        (!v.is_nan()).then_some(v)
    }

    /// `h1(x, e, p_a, p_b) = h1*(x, e, p_a) - h1*(x, e, p_b)`.
    pub fn h1(&self, ix: usize, ie: usize, ia: usize, ib: usize) -> Option<f64> {
        Some(self.h1star(ix, ie, ia)? - self.h1star(ix, ie, ib)?)
    }

    /// `h0(x, e, p_a, p_b) = h0*(x, e, p_b) - h0*(x, e, p_a)`.
    pub fn h0(&self, ix: usize, ie: usize, ia: usize, ib: usize) -> Option<f64> {
        Some(self.h0star(ix, ie, ib)? - self.h0star(ix, ie, ia)?)
    }

    /// Ordered propensity index pairs `(a, b)` with `p_a > p_b`.
    pub fn p_pairs(&self) -> Vec<(usize, usize)> {
        let m = self.p_points.len();
        let mut pairs = Vec::with_capacity(m * m.saturating_sub(1) / 2);
        for a in 1..m {
            for b in 0..a {
                pairs.push((a, b));
            }
        }
        pairs
    }

    /// Writes `x,y,p,h1star,h0star`; the `y` column holds the event coordinate.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["x", "y", "p", "h1star", "h0star"])?;
        let fmt = |v: f64| if v.is_nan() { String::new() } else { format!("{v:.16e}") };
        for (ix, &x) in self.query_xs.iter().enumerate() {
            for ie in 0..self.family.len() {
                for (ip, &p) in self.p_points.iter().enumerate() {
                    let k = self.offset(ix, ie, ip);
                    wtr.write_record([
                        fmt(x),
                        fmt(self.family.coordinate(ie)),
                        fmt(p),
                        fmt(self.values_h1star[k]),
                        fmt(self.values_h0star[k]),
                    ])?;
                }
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Precomputed kernel state for filling [`HGrid`]s of one sample, family and
/// propensity axis at arbitrary query covariates.
pub struct GridSmoother<'a> {
    obs: &'a [Observation],
    family: EventFamily,
    p_points: Vec<f64>,
    bandwidth: f64,
    codes: Vec<usize>,
    n_buckets: usize,
    kp: Vec<Vec<f64>>,
}

impl<'a> GridSmoother<'a> {
    pub fn new(obs: &'a [Observation], config: &EstimatorConfig, family: EventFamily, p_points: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if obs.is_empty() {
            return Err(Error::Config("empty sample".into()));
        }
        if p_points.len() < 2 {
            return Err(Error::Config(format!("need at least 2 propensity points, got {}", p_points.len())));
        }
        if p_points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("propensity points must be strictly increasing".into()));
        }
        let bandwidth = config.bandwidth(obs.len());
        let n_buckets = family.bucket_count();
        let codes = obs
            .iter()
            .map(|o| family.bucket(o) + if o.d { n_buckets } else { 0 })
            .collect();
        let kp = p_points
            .iter()
            .map(|&p| obs.iter().map(|o| normal::kernel((o.p - p) / bandwidth)).collect())
            .collect();
        Ok(Self {
            obs,
            family,
            p_points,
            bandwidth,
            codes,
            n_buckets,
            kp,
        })
    }

    /// Grid over `query_xs`.
    pub fn grid(&self, query_xs: &[f64]) -> HGrid {
        let n = self.obs.len();
        let n_events = self.family.len();
        let nb = self.n_buckets;
        let runs = self.family.monotone_runs();
        let mut grid = HGrid::new(query_xs.to_vec(), self.family.clone(), self.p_points.clone());
        let mut kx = vec![0.0; n];
        let mut buckets = vec![0.0; 2 * nb];
        let mut out1 = vec![0.0; n_events];
        let mut out0 = vec![0.0; n_events];
        for (ix, &x) in query_xs.iter().enumerate() {
            for (k, o) in kx.iter_mut().zip(self.obs) {
                *k = normal::kernel((o.x - x) / self.bandwidth);
            }
            for (ip, kpi) in self.kp.iter().enumerate() {
                buckets.iter_mut().for_each(|v| *v = 0.0);
                let mut total = 0.0;
                for i in 0..n {
                    let w = kx[i] * kpi[i];
                    buckets[self.codes[i]] += w;
                    total += w;
                }
                if total < NW_FLOOR {
                    continue;
                }
                self.family.fold_buckets(&buckets[nb..], total, &mut out1);
                self.family.fold_buckets(&buckets[..nb], total, &mut out0);
                for r in &runs {
                    pava_in_place(&mut out1[r.clone()]);
                    pava_in_place(&mut out0[r.clone()]);
                }
                let base = grid.offset(ix, 0, ip);
                for ie in 0..n_events {
                    grid.values_h1star[base + ie] = out1[ie].clamp(0.0, 1.0);
                    grid.values_h0star[base + ie] = out0[ie].clamp(0.0, 1.0);
                }
            }
        }
        grid
    }
}

/// Kernel estimates of `h1*` and `h0*` for every event of `family`, query
/// covariate and propensity point. All observations enter the smoother.
///
/// Along each nested run of events the values are passed through an
/// isotonic fit and clipped to `[0, 1]`.
pub fn build_event_grid(
    obs: &[Observation],
    config: &EstimatorConfig,
    query_xs: &[f64],
    family: EventFamily,
    p_points: Vec<f64>,
) -> Result<HGrid> {
    Ok(GridSmoother::new(obs, config, family, p_points)?.grid(query_xs))
}

/// [`build_event_grid`] for CDF events on the configured outcome grid and
/// the configured propensity points.
pub fn build_h_grid(obs: &[Observation], config: &EstimatorConfig, query_xs: &[f64]) -> Result<HGrid> {
    config.validate()?;
    if obs.is_empty() {
        return Err(Error::Config("empty sample".into()));
    }
    let family = EventFamily::Cdf {
        y_points: config.y_points(obs),
    };
    build_event_grid(obs, config, query_xs, family, config.p_points())
}
