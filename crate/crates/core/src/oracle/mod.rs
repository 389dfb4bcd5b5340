//! Population quantities computed by quadrature: conditional event
//! probabilities given the selection unobservable, the `h` functions built
//! from them, and brute-force checks of the target parameters.
//!
//! The selection unobservable enters in the uniform scale: `t` in `[0, 1]`
//! maps to `u = Phi^{-1}(t)`, and the outcome disturbance given `u` is
//! `N(rho u, 1 - rho^2)`.

pub mod suite;

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::dgp::{scalar_outcome, Design, ExampleIndices, MULTINOMIAL_INDICES, RC_INTERCEPTS, RC_SLOPES, ROY_INDICES};
use crate::error::{Error, Result};
use crate::matching::{Event, EventFamily};
use crate::nonparametrics::HGrid;
use crate::normal;
use crate::quadrature::{integrate, integrate_default};
use crate::rng::mix_seed;

/// Standardised bound beyond which a normal tail is treated as empty.
const TAIL: f64 = 10.0;
/// Inner integrals run well below the outer tolerance so that their error
/// does not read as roughness to the outer rule.
const INNER_TOL: f64 = 1e-14;

/// Population law of one design.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PopulationModel {
    pub design: Design,
    pub rho: f64,
    /// Index functions of the example designs; unused by the scalar ones.
    pub indices: Option<ExampleIndices>,
}

impl PopulationModel {
    /// Model with the default index functions of `design`.
    pub fn new(design: Design, rho: f64) -> Result<Self> {
        let indices = match design {
            Design::Multinomial => Some(MULTINOMIAL_INDICES),
            Design::Roy => Some(ROY_INDICES),
            _ => None,
        };
        Self::build(design, rho, indices)
    }

    /// Example design with custom index functions.
    pub fn with_indices(design: Design, rho: f64, indices: ExampleIndices) -> Result<Self> {
        if design.is_scalar() {
            return Err(Error::Config(format!("{design} takes no index functions")));
        }
        Self::build(design, rho, Some(indices))
    }

    fn build(design: Design, rho: f64, indices: Option<ExampleIndices>) -> Result<Self> {
        if !(rho.is_finite() && rho.abs() < 1.0) {
            return Err(Error::Config(format!("rho must lie in (-1, 1), got {rho}")));
        }
        Ok(Self { design, rho, indices })
    }

    fn scale(&self) -> f64 {
        (1.0 - self.rho * self.rho).sqrt()
    }

    /// Index vector `v(x, d)`. Scalar designs: `D1`/`D3` `(x + d/2, 0)`,
    /// `D2` `(x + d/2, x + d)`, `RC` `(a_d + x b_d, x)`.
    pub fn index_map(&self, x: f64, d: bool) -> [f64; 2] {
        let df = if d { 1.0 } else { 0.0 };
        match (self.design, self.indices) {
            (Design::D1 | Design::D3, _) => [x + 0.5 * df, 0.0],
            (Design::D2, _) => [x + 0.5 * df, x + df],
            (Design::Rc, _) => {
                let k = usize::from(d);
                [RC_INTERCEPTS[k] + x * RC_SLOPES[k], x]
            }
            (_, Some([a, b])) => [a.eval(x, d), b.eval(x, d)],
            (_, None) => [f64::NAN; 2],
        }
    }

    /// `P(Y <= y | v, U = u)`.
    pub fn conditional_cdf(&self, y: f64, v: [f64; 2], u: f64) -> Result<f64> {
        self.conditional_prob(Event::Le(y), v, u)
    }

    /// Probability of `event` given index vector `v` and standard-normal
    /// selection unobservable `u`.
    pub fn conditional_prob(&self, event: Event, v: [f64; 2], u: f64) -> Result<f64> {
        let s = self.scale();
        let m = self.rho * u;
        let unsupported = || Err(Error::Config(format!("event {event} is not defined for {}", self.design)));
        match (self.design, event) {
            (Design::D1, Event::Le(y)) => Ok(normal::cdf((y - v[0] - m) / s)),
            (Design::D2, Event::Le(y)) => {
                let [v1, v2] = v;
                if v2 == 0.0 {
                    return Ok(if v1 <= y { 1.0 } else { 0.0 });
                }
                let arg = ((y - v1) / v2 - m) / s;
                Ok(if v2 > 0.0 { normal::cdf(arg) } else { normal::sf(arg) })
            }
            (Design::D3, Event::Le(y)) => {
                if y < 0.0 {
                    return Ok(0.0);
                }
                let r = y.sqrt();
                let hi = (r - v[0] - m) / s;
                let lo = (-r - v[0] - m) / s;
                // difference of upper tails keeps precision when both are near 1
                Ok((normal::sf(lo) - normal::sf(hi)).max(0.0))
            }
            (Design::Rc, Event::Le(y)) => {
                let sd = (s * s + v[1] * v[1]).sqrt();
                Ok(normal::cdf((y - v[0] - m) / sd))
            }
            (Design::Multinomial, Event::Category(j)) => {
                let lo = [-(v[0] + m) / s, -(v[1] + m) / s];
                match j {
                    0 => Ok(normal::cdf(lo[0]) * normal::cdf(lo[1])),
                    1 => upper_race(lo[0], (v[0] - v[1]) / s),
                    2 => upper_race(lo[1], (v[1] - v[0]) / s),
                    _ => unsupported(),
                }
            }
            (Design::Roy, Event::SectorA) => Ok(normal::cdf((v[0] - v[1]) / (s * std::f64::consts::SQRT_2))),
            (Design::Roy, Event::LeSectorA(y)) => lower_race((y - v[0] - m) / s, (v[0] - v[1]) / s),
            (Design::Roy, Event::Le(y)) => Ok(normal::cdf((y - v[0] - m) / s) * normal::cdf((y - v[1] - m) / s)),
            _ => unsupported(),
        }
    }

    fn integrate_event(&self, event: Event, v: [f64; 2], lo: f64, hi: f64) -> Result<f64> {
        check_interval(lo, hi)?;
        if lo == hi {
            return Ok(0.0);
        }
        // surface unsupported events before quadrature swallows them
        self.conditional_prob(event, v, 0.0)?;
        integrate_quantiles(
            |u| self.conditional_prob(event, v, u).unwrap_or(f64::NAN),
            lo,
            hi,
        )
    }
}

/// `int_lo^hi f(Phi^{-1}(t)) dt`, evaluated as `int f(u) phi(u) du` between
/// the quantiles, where the integrand is smooth up to the endpoints.
fn integrate_quantiles<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64) -> Result<f64> {
    let a = if lo == 0.0 { -TAIL } else { normal::quantile(lo).max(-TAIL) };
    let b = if hi == 1.0 { TAIL } else { normal::quantile(hi).min(TAIL) };
    if a >= b {
        return Ok(0.0);
    }
    integrate_default(|u| f(u) * normal::pdf(u), a, b)
}

fn check_interval(lo: f64, hi: f64) -> Result<()> {
    if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
        return Err(Error::Domain(format!("need 0 <= p2 <= p1 <= 1, got p1 = {hi}, p2 = {lo}")));
    }
    Ok(())
}

/// `int_{-inf}^{hi} phi(a) Phi(a + c) da`
fn lower_race(hi: f64, c: f64) -> Result<f64> {
    if hi <= -TAIL {
        return Ok(0.0);
    }
    integrate(|a| normal::pdf(a) * normal::cdf(a + c), -TAIL, hi.min(TAIL), INNER_TOL, 30)
}

/// `int_{lo}^{inf} phi(a) Phi(a + c) da`
fn upper_race(lo: f64, c: f64) -> Result<f64> {
    if lo >= TAIL {
        return Ok(0.0);
    }
    integrate(|a| normal::pdf(a) * normal::cdf(a + c), lo.max(-TAIL), TAIL, INNER_TOL, 30)
}

/// `h1(x, e, p1, p2)`: integral of the treated event probability over
/// selection quantiles in `[p2, p1]`.
pub fn oracle_h1(model: &PopulationModel, x: f64, event: Event, p1: f64, p2: f64) -> Result<f64> {
    model.integrate_event(event, model.index_map(x, true), p2, p1)
}

/// `h0(x, e, p1, p2)`: as [`oracle_h1`] with the untreated index.
pub fn oracle_h0(model: &PopulationModel, x: f64, event: Event, p1: f64, p2: f64) -> Result<f64> {
    model.integrate_event(event, model.index_map(x, false), p2, p1)
}

/// `h1*(x, e, p) = h1(x, e, p, 0)`.
pub fn oracle_h1_star(model: &PopulationModel, x: f64, event: Event, p: f64) -> Result<f64> {
    oracle_h1(model, x, event, p, 0.0)
}

/// `h0*(x, e, p) = h0(x, e, 1, p)`.
pub fn oracle_h0_star(model: &PopulationModel, x: f64, event: Event, p: f64) -> Result<f64> {
    oracle_h0(model, x, event, 1.0, p)
}

/// `int_0^{p_k}` of the event probabilities of index `v` at each propensity
/// point, laid out `[point][event]`, followed by the integral over `[0, 1]`.
fn cumulative(model: &PopulationModel, v: [f64; 2], events: &[Event], p_points: &[f64]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let mut acc = vec![0.0; events.len()];
    let mut at_points = Vec::with_capacity(p_points.len());
    let mut last = 0.0;
    for &p in p_points {
        for (a, &e) in acc.iter_mut().zip(events) {
            *a += model.integrate_event(e, v, last, p)?;
        }
        at_points.push(acc.clone());
        last = p;
    }
    for (a, &e) in acc.iter_mut().zip(events) {
        *a += model.integrate_event(e, v, last, 1.0)?;
    }
    Ok((at_points, acc))
}

fn check_points(p_points: &[f64]) -> Result<()> {
    if p_points.iter().any(|p| !(0.0..=1.0).contains(p)) || p_points.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("propensity points must be strictly increasing within [0, 1]".into()));
    }
    Ok(())
}

/// Treated print at `x1` and untreated print at `x0`: `h` over every ordered
/// pair `p_a > p_b` of `p_points` and every event.
fn population_print(model: &PopulationModel, x1: f64, x0: f64, events: &[Event], p_points: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let ne = events.len();
    let (c1, _) = cumulative(model, model.index_map(x1, true), events, p_points)?;
    let (c0, _) = cumulative(model, model.index_map(x0, false), events, p_points)?;
    let mut treated = Vec::new();
    let mut untreated = Vec::new();
    for a in 1..p_points.len() {
        for b in 0..a {
            for ie in 0..ne {
                treated.push(c1[a][ie] - c1[b][ie]);
                untreated.push(c0[a][ie] - c0[b][ie]);
            }
        }
    }
    Ok((treated, untreated))
}

/// Outcome of comparing the treated fingerprint at `x1` with the untreated
/// one at `x0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchCheck {
    pub holds: bool,
    pub max_gap: f64,
}

/// Gap threshold below which two population fingerprints count as equal.
pub const MATCH_TOLERANCE: f64 = 1e-8;

/// Whether `h1(x1, e, p, p') = h0(x0, e, p, p')` for every event of `family`
/// and every ordered pair `p > p'` of `p_points`.
pub fn check_matching_conditions(model: &PopulationModel, x1: f64, x0: f64, family: &EventFamily, p_points: &[f64]) -> Result<MatchCheck> {
    check_points(p_points)?;
    let (treated, untreated) = population_print(model, x1, x0, &family.events(), p_points)?;
    let max_gap = max_gap(&treated, &untreated);
    Ok(MatchCheck {
        holds: max_gap < MATCH_TOLERANCE,
        max_gap,
    })
}

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max)
}

/// Treated and untreated prints, one row per covariate value.
pub(crate) type PrintPair = (Vec<Vec<f64>>, Vec<Vec<f64>>);

/// Per-covariate population prints for all-pairs separation scans; entry
/// `[i]` of each side belongs to `xs[i]`.
pub(crate) fn prints_over(model: &PopulationModel, xs: &[f64], family: &EventFamily, p_points: &[f64]) -> Result<PrintPair> {
    check_points(p_points)?;
    let events = family.events();
    let rows: Vec<(Vec<f64>, Vec<f64>)> = xs
        .par_iter()
        .map(|&x| population_print(model, x, x, &events, p_points))
        .collect::<Result<_>>()?;
    Ok(rows.into_iter().unzip())
}

pub(crate) fn sup_gap(a: &[f64], b: &[f64]) -> f64 {
    max_gap(a, b)
}

/// `phi0(x, y, p)` of the random coefficient design: mass of untreated
/// selection quantiles in `[p, 1]` whose treated-law counterpart lies below
/// `y`, computed from the law of `eta + x e_slope` given `U`.
pub fn oracle_phi0_rc(x: f64, y: f64, p: f64, rho: f64) -> Result<f64> {
    if !(rho.is_finite() && rho.abs() < 1.0) {
        return Err(Error::Config(format!("rho must lie in (-1, 1), got {rho}")));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("p = {p} is outside [0, 1]")));
    }
    let threshold = y - RC_INTERCEPTS[1] - x * RC_SLOPES[1];
    let sd = (1.0 - rho * rho + x * x).sqrt();
    integrate_quantiles(|u| normal::cdf((threshold - rho * u) / sd), p, 1.0)
}

/// Population analogue of a smoothed grid: `h1*` and `h0*` at every query
/// covariate, event and propensity point.
pub fn population_grid(model: &PopulationModel, xs: &[f64], family: &EventFamily, p_points: &[f64]) -> Result<HGrid> {
    check_points(p_points)?;
    let events = family.events();
    let ne = events.len();
    let mut grid = HGrid::new(xs.to_vec(), family.clone(), p_points.to_vec());
    type Rows = (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>);
    let rows: Vec<Rows> = xs
        .par_iter()
        .map(|&x| {
            let (c1, _) = cumulative(model, model.index_map(x, true), &events, p_points)?;
            let (c0, total0) = cumulative(model, model.index_map(x, false), &events, p_points)?;
            Ok((c1, c0, total0))
        })
        .collect::<Result<_>>()?;
    for (ix, (c1, c0, total0)) in rows.iter().enumerate() {
        for ip in 0..p_points.len() {
            for ie in 0..ne {
                let k = grid.offset(ix, ie, ip);
                grid.values_h1star[k] = c1[ip][ie];
                grid.values_h0star[k] = total0[ie] - c0[ip][ie];
            }
        }
    }
    Ok(grid)
}

/// Writes `design,rho,x,event,p1,p2,h1,h0` for every query covariate, event
/// and ordered pair `p1 > p2` of `p_points`.
pub fn write_oracle_csv<W: Write>(model: &PopulationModel, xs: &[f64], family: &EventFamily, p_points: &[f64], out: W) -> Result<()> {
    let grid = population_grid(model, xs, family, p_points)?;
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["design", "rho", "x", "event", "p1", "p2", "h1", "h0"])?;
    let design = model.design.to_string();
    let rho = model.rho.to_string();
    for (ix, &x) in xs.iter().enumerate() {
        for ie in 0..family.len() {
            let event = family.event(ie).to_string();
            for (a, b) in grid.p_pairs() {
                let h1 = grid.h1(ix, ie, a, b).unwrap_or(f64::NAN);
                let h0 = grid.h0(ix, ie, a, b).unwrap_or(f64::NAN);
                wtr.write_record([
                    design.clone(),
                    rho.clone(),
                    format!("{x}"),
                    event.clone(),
                    format!("{}", p_points[a]),
                    format!("{}", p_points[b]),
                    format!("{h1:.16e}"),
                    format!("{h0:.16e}"),
                ])?;
            }
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthEstimate {
    pub mean: f64,
    pub std_error: f64,
}

const TRUTH_CHUNK: usize = 1 << 16;

/// Plain Monte Carlo average of `Y_1` (of `1{Y_1 <= 1}` for `RC`) with the
/// treatment forced on. Chunks draw from independent seeded streams, so the
/// result does not depend on the thread count.
pub fn brute_force_truth(design: Design, rho: f64, draws: usize, seed: u64) -> Result<TruthEstimate> {
    if !design.is_scalar() {
        return Err(Error::Config(format!("no scalar target parameter for design {design}")));
    }
    if !(rho.is_finite() && rho.abs() < 1.0) {
        return Err(Error::Config(format!("rho must lie in (-1, 1), got {rho}")));
    }
    if draws < 2 {
        return Err(Error::Config(format!("need at least 2 draws, got {draws}")));
    }
    let s = (1.0 - rho * rho).sqrt();
    let chunks = draws.div_ceil(TRUTH_CHUNK);
    let sums: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let len = TRUTH_CHUNK.min(draws - c * TRUTH_CHUNK);
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, design.code(), rho.to_bits(), c as u64]));
            let (mut sum, mut sq) = (0.0, 0.0);
            for _ in 0..len {
                let x: f64 = rng.sample(StandardNormal);
                let u: f64 = rng.sample(StandardNormal);
                let xi: f64 = rng.sample(StandardNormal);
                let slope: f64 = if design == Design::Rc { rng.sample(StandardNormal) } else { 0.0 };
                let y1 = scalar_outcome(design, x, true, [rho * u + s * xi, slope]);
                let v = if design == Design::Rc { f64::from(u8::from(y1 <= 1.0)) } else { y1 };
                sum += v;
                sq += v * v;
            }
            (sum, sq)
        })
        .collect();
    let (sum, sq) = sums.iter().fold((0.0, 0.0), |(a, b), &(s1, s2)| (a + s1, b + s2));
    let n = draws as f64;
    let mean = sum / n;
    let var = (sq / n - mean * mean).max(0.0) * n / (n - 1.0);
    Ok(TruthEstimate {
        mean,
        std_error: (var / n).sqrt(),
    })
}
