//! Kernel smoothing and finite-sample estimates of the identified functions
//! `h1*(x, y, p) = E[D 1{Y <= y} | X = x, P = p]` and
//! `h0*(x, y, p) = E[(1 - D) 1{Y <= y} | X = x, P = p]`.

mod grid;

pub use grid::{build_event_grid, build_h_grid, GridSmoother, HGrid};

use crate::dgp::Observation;
use crate::error::{Error, Result};
use crate::normal;

/// Smallest kernel mass treated as local data.
pub const NW_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kernel {
    Gaussian,
}

/// Weight function over events in the distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weight {
    Uniform,
}

/// Placement of the `G` evenly spaced outcome grid points on `[min y, max y]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridPlacement {
    /// `min + k (max - min) / (G + 1)` for `k = 1..=G`.
    Interior,
    /// `G` points including both endpoints.
    Endpoints,
}

/// Bandwidth applied to fingerprint distances when weighting donors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceBandwidth {
    /// `n^e` times the standard deviation of the target's donor distances.
    DonorScaled,
    /// `n^e` on the raw distance scale.
    Fixed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    pub bandwidth_exponent: f64,
    pub kernel: Kernel,
    pub trim_c0: f64,
    pub y_grid_divisor: usize,
    pub y_grid_placement: GridPlacement,
    pub p_grid_size: usize,
    pub weight: Weight,
    pub distance_bandwidth: DistanceBandwidth,
    /// Multiplies the distance bandwidth.
    pub distance_bandwidth_scale: f64,
    /// Outcome grid size for the random coefficient estimator.
    pub rc_y_grid_size: usize,
    /// Above this many trimmed-in propensity values the pair grid is subsampled.
    pub rc_pair_limit: usize,
    pub rc_subsample_seed: u64,
    /// Grid size of the infeasible mean-matching search over `x~`.
    pub vy_grid_points: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            bandwidth_exponent: -0.2,
            kernel: Kernel::Gaussian,
            trim_c0: 0.05,
            y_grid_divisor: 50,
            y_grid_placement: GridPlacement::Interior,
            p_grid_size: 10,
            weight: Weight::Uniform,
            distance_bandwidth: DistanceBandwidth::DonorScaled,
            distance_bandwidth_scale: 1.0,
            rc_y_grid_size: 41,
            rc_pair_limit: 1000,
            rc_subsample_seed: 0x5eed,
            vy_grid_points: 2001,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth_exponent.is_finite() && self.bandwidth_exponent < 0.0) {
            return Err(Error::Config(format!(
                "bandwidth exponent must be negative, got {}",
                self.bandwidth_exponent
            )));
        }
        if !(self.trim_c0 > 0.0 && self.trim_c0 < 0.5) {
            return Err(Error::Config(format!("trim_c0 must lie in (0, 0.5), got {}", self.trim_c0)));
        }
        if self.y_grid_divisor == 0 {
            return Err(Error::Config("y_grid_divisor must be positive".into()));
        }
        if self.p_grid_size < 2 {
            return Err(Error::Config("p_grid_size must be at least 2".into()));
        }
        if !(self.distance_bandwidth_scale > 0.0 && self.distance_bandwidth_scale.is_finite()) {
            return Err(Error::Config("distance_bandwidth_scale must be positive".into()));
        }
        if self.rc_y_grid_size < 2 || self.rc_pair_limit < 2 || self.vy_grid_points < 3 {
            return Err(Error::Config("grid sizes too small".into()));
        }
        Ok(())
    }

    /// Smoothing bandwidth `n^e`.
    pub fn bandwidth(&self, n: usize) -> f64 {
        (n as f64).powf(self.bandwidth_exponent)
    }

    pub fn band(&self) -> (f64, f64) {
        (self.trim_c0, 1.0 - self.trim_c0)
    }

    #[inline]
    pub fn in_band(&self, p: f64) -> bool {
        p >= self.trim_c0 && p <= 1.0 - self.trim_c0
    }

    /// `ceil(n / divisor)`, at least 2.
    pub fn y_grid_len(&self, n: usize) -> usize {
        n.div_ceil(self.y_grid_divisor).max(2)
    }

    /// Evenly spaced propensity points spanning the trimmed band.
    pub fn p_points(&self) -> Vec<f64> {
        let (lo, hi) = self.band();
        linspace(lo, hi, self.p_grid_size)
    }

    /// Outcome grid over the sample range.
    pub fn y_points(&self, obs: &[Observation]) -> Vec<f64> {
        let (lo, hi) = outcome_range(obs);
        let g = self.y_grid_len(obs.len());
        match self.y_grid_placement {
            GridPlacement::Endpoints => linspace(lo, hi, g),
            GridPlacement::Interior => (1..=g)
                .map(|k| lo + (hi - lo) * k as f64 / (g + 1) as f64)
                .collect(),
        }
    }
}

/// `count` evenly spaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / (count - 1) as f64;
            (0..count)
                .map(|k| if k + 1 == count { hi } else { lo + step * k as f64 })
                .collect()
        }
    }
}

pub(crate) fn outcome_range(obs: &[Observation]) -> (f64, f64) {
    obs.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), o| (lo.min(o.y), hi.max(o.y)))
}

/// Nadaraya-Watson regression with a product Gaussian kernel.
///
/// Returns `Ok(None)` when the kernel mass at `query` is below [`NW_FLOOR`].
pub fn nw_regress(
    responses: &[f64],
    regressors: &[[f64; 2]],
    query: [f64; 2],
    bandwidths: [f64; 2],
) -> Result<Option<f64>> {
    if responses.len() != regressors.len() {
        return Err(Error::Config(format!(
            "{} responses but {} regressor rows",
            responses.len(),
            regressors.len()
        )));
    }
    if !(bandwidths[0] > 0.0 && bandwidths[1] > 0.0) {
        return Err(Error::Config("bandwidths must be positive".into()));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (r, xs) in responses.iter().zip(regressors) {
        let w = normal::kernel((xs[0] - query[0]) / bandwidths[0]) * normal::kernel((xs[1] - query[1]) / bandwidths[1]);
        num += w * r;
        den += w;
    }
    Ok(if den < NW_FLOOR { None } else { Some(num / den) })
}

fn estimate_h_star(obs: &[Observation], config: &EstimatorConfig, treated: bool, x: f64, y: f64, p: f64) -> Result<Option<f64>> {
    config.validate()?;
    if !config.in_band(p) {
        return Err(Error::Domain(format!("p = {p} is outside the trimmed band")));
    }
    let b = config.bandwidth(obs.len());
    let responses: Vec<f64> = obs
        .iter()
        .map(|o| if o.d == treated && o.y <= y { 1.0 } else { 0.0 })
        .collect();
    let regressors: Vec<[f64; 2]> = obs.iter().map(|o| [o.x, o.p]).collect();
    Ok(nw_regress(&responses, &regressors, [x, p], [b, b])?.map(|v| v.clamp(0.0, 1.0)))
}

/// Kernel estimate of `h1*(x, y, p)`; `None` flags a cell without local data.
pub fn estimate_h1_star(obs: &[Observation], config: &EstimatorConfig, x: f64, y: f64, p: f64) -> Result<Option<f64>> {
    estimate_h_star(obs, config, true, x, y, p)
}

/// Kernel estimate of `h0*(x, y, p)`.
pub fn estimate_h0_star(obs: &[Observation], config: &EstimatorConfig, x: f64, y: f64, p: f64) -> Result<Option<f64>> {
    estimate_h_star(obs, config, false, x, y, p)
}
