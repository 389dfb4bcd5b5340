//! Synthetic samples from the simulation designs and the worked example models.
//!
//! Every design shares the selection rule `D = 1{Z - U > 0}` with `Z` and `U`
//! independent standard normal, so the propensity score is `P(z) = Phi(z)`.
//! Outcome disturbances are jointly normal with `U` at correlation `rho`.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::normal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Design {
    /// `Y = X + 0.5 D + e`
    D1,
    /// `Y = X + 0.5 D + (X + D) e`
    D2,
    /// `Y = (X + 0.5 D + e)^2`
    D3,
    /// Random coefficients: `Y_d = a_d + eta + X (b_d + e_slope)`.
    Rc,
    /// Three-way choice among a zero-utility base and two latent utilities.
    Multinomial,
    /// Two-sector Roy model: `Y = max(y_a, y_b)`, `W = argmax`.
    Roy,
}

impl Design {
    pub const TABLE_DESIGNS: [Design; 4] = [Design::D1, Design::D2, Design::D3, Design::Rc];

    pub fn name(self) -> &'static str {
        match self {
            Design::D1 => "D1",
            Design::D2 => "D2",
            Design::D3 => "D3",
            Design::Rc => "RC",
            Design::Multinomial => "MULTINOMIAL",
            Design::Roy => "ROY",
        }
    }

    pub(crate) fn code(self) -> u64 {
        match self {
            Design::D1 => 1,
            Design::D2 => 2,
            Design::D3 => 3,
            Design::Rc => 4,
            Design::Multinomial => 5,
            Design::Roy => 6,
        }
    }

    /// Designs with a real-valued outcome and no sector label.
    pub fn is_scalar(self) -> bool {
        matches!(self, Design::D1 | Design::D2 | Design::D3 | Design::Rc)
    }

    /// Table number used for rendered output (`table_k.md`).
    pub fn table_number(self) -> Option<u32> {
        match self {
            Design::D1 => Some(1),
            Design::D2 => Some(2),
            Design::D3 => Some(3),
            Design::Rc => Some(4),
            _ => None,
        }
    }
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Design {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "D1" | "1" => Ok(Design::D1),
            "D2" | "2" => Ok(Design::D2),
            "D3" | "3" => Ok(Design::D3),
            "RC" => Ok(Design::Rc),
            "MULTINOMIAL" => Ok(Design::Multinomial),
            "ROY" => Ok(Design::Roy),
            other => Err(Error::Config(format!("unknown design `{other}`"))),
        }
    }
}

/// Sector label of a Roy observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sector {
    A,
    B,
}

impl Sector {
    pub fn label(self) -> &'static str {
        match self {
            Sector::A => "a",
            Sector::B => "b",
        }
    }
}

/// A fully parameterised draw request.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignSpec {
    pub design: Design,
    pub rho: f64,
    pub n: usize,
    pub seed: u64,
}

impl DesignSpec {
    pub fn new(design: Design, rho: f64, n: usize, seed: u64) -> Self {
        Self { design, rho, n, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho.is_finite() && self.rho.abs() < 1.0) {
            return Err(Error::Config(format!("rho must lie in (-1, 1), got {}", self.rho)));
        }
        if self.n == 0 {
            return Err(Error::Config("sample size must be positive".into()));
        }
        Ok(())
    }
}

/// One observed unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    /// Outcome; the category index for multinomial samples.
    pub y: f64,
    /// Sector label, Roy samples only.
    pub w: Option<Sector>,
    pub d: bool,
    pub x: f64,
    pub z: f64,
    /// Known propensity score `Phi(z)`.
    pub p: f64,
}

impl Observation {
    #[inline]
    pub fn d_f64(&self) -> f64 {
        if self.d {
            1.0
        } else {
            0.0
        }
    }
}

/// Unobservables behind one observation. Kept for invariant checks only;
/// no estimator reads them.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LatentDraws {
    pub u: f64,
    /// `e` for D1-D3; `(eta, e_slope)` for RC; the two utility or sector
    /// errors for the multinomial and Roy examples.
    pub errors: [f64; 2],
    /// Roy only: latent sector outcomes under the realised treatment.
    pub sectors: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub spec: DesignSpec,
    pub observations: Vec<Observation>,
    pub latent: Vec<LatentDraws>,
}

impl Sample {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Builds a sample from observations alone (latent channel left empty).
    pub fn from_observations(spec: DesignSpec, observations: Vec<Observation>) -> Self {
        Self {
            spec,
            observations,
            latent: Vec::new(),
        }
    }
}

/// Linear index `v(x, d) = slope * x + shift * d` used by the example models.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearIndex {
    pub slope: f64,
    pub shift: f64,
}

impl LinearIndex {
    pub const fn new(slope: f64, shift: f64) -> Self {
        Self { slope, shift }
    }

    #[inline]
    pub fn eval(&self, x: f64, d: bool) -> f64 {
        self.slope * x + if d { self.shift } else { 0.0 }
    }
}

/// Index functions of the two-index example models.
pub type ExampleIndices = [LinearIndex; 2];

/// Utilities of categories 1 and 2; category 0 has utility zero.
pub const MULTINOMIAL_INDICES: ExampleIndices = [LinearIndex::new(1.0, 0.5), LinearIndex::new(-0.5, 1.0)];

/// Sector indices `v_a(x, d) = x + 0.5 d` and `v_b(x, d) = 0.5 x + d`.
pub const ROY_INDICES: ExampleIndices = [LinearIndex::new(1.0, 0.5), LinearIndex::new(0.5, 1.0)];

/// Mean intercepts and slopes `(a_0, a_1)`, `(b_0, b_1)` of the random coefficient design.
pub const RC_INTERCEPTS: [f64; 2] = [0.0, 1.0];
pub const RC_SLOPES: [f64; 2] = [1.0, 2.0];

/// Known propensity score of the simulation designs.
pub fn propensity(z: f64) -> Result<f64> {
    if !z.is_finite() {
        return Err(Error::Domain(format!("propensity needs a finite instrument, got {z}")));
    }
    Ok(normal::cdf(z))
}

/// Population value of the target parameter: `E[Y_1]` for D1-D3 and
/// `P(Y_1 <= 1)` for the random coefficient design.
pub fn true_parameter(design: Design, rho: f64) -> Result<f64> {
    if !(rho.is_finite() && rho.abs() < 1.0) {
        return Err(Error::Config(format!("rho must lie in (-1, 1), got {rho}")));
    }
    match design {
        // E[X] = E[e] = 0
        Design::D1 | Design::D2 => Ok(0.5),
        // Var(X) + Var(e) + 0.5^2
        Design::D3 => Ok(2.25),
        // eta + X (2 + e_slope) is symmetric about zero
        Design::Rc => Ok(0.5),
        other => Err(Error::Config(format!("no scalar target parameter for design {other}"))),
    }
}

/// Potential outcome of the scalar designs given covariate, treatment and
/// disturbances `(e, e_slope)`.
#[inline]
pub fn scalar_outcome(design: Design, x: f64, d: bool, errors: [f64; 2]) -> f64 {
    let df = if d { 1.0 } else { 0.0 };
    let e = errors[0];
    match design {
        Design::D1 => x + 0.5 * df + e,
        Design::D2 => x + 0.5 * df + (x + df) * e,
        Design::D3 => {
            let v = x + 0.5 * df + e;
            v * v
        }
        Design::Rc => {
            let k = usize::from(d);
            RC_INTERCEPTS[k] + e + x * (RC_SLOPES[k] + errors[1])
        }
        _ => f64::NAN,
    }
}

/// Draws `spec.n` observations. Example designs use their default indices.
pub fn generate(spec: &DesignSpec) -> Result<Sample> {
    match spec.design {
        Design::Multinomial => generate_example_with(spec, &MULTINOMIAL_INDICES),
        Design::Roy => generate_example_with(spec, &ROY_INDICES),
        _ => generate_scalar(spec),
    }
}

fn generate_scalar(spec: &DesignSpec) -> Result<Sample> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let rho = spec.rho;
    let s = (1.0 - rho * rho).sqrt();
    let mut observations = Vec::with_capacity(spec.n);
    let mut latent = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let x: f64 = rng.sample(StandardNormal);
        let z: f64 = rng.sample(StandardNormal);
        let u: f64 = rng.sample(StandardNormal);
        let xi: f64 = rng.sample(StandardNormal);
        // outcome disturbance (e, or eta for RC) correlated with U
        let e = rho * u + s * xi;
        let slope = if spec.design == Design::Rc {
            rng.sample(StandardNormal)
        } else {
            0.0
        };
        let d = z - u > 0.0;
        let errors = [e, slope];
        observations.push(Observation {
            y: scalar_outcome(spec.design, x, d, errors),
            w: None,
            d,
            x,
            z,
            p: normal::cdf(z),
        });
        latent.push(LatentDraws {
            u,
            errors,
            sectors: [0.0; 2],
        });
    }
    Ok(Sample {
        spec: *spec,
        observations,
        latent,
    })
}

/// Draws from the multinomial or Roy example with the default indices.
pub fn generate_example(spec: &DesignSpec) -> Result<Sample> {
    match spec.design {
        Design::Multinomial => generate_example_with(spec, &MULTINOMIAL_INDICES),
        Design::Roy => generate_example_with(spec, &ROY_INDICES),
        other => Err(Error::Config(format!("{other} is not an example design"))),
    }
}

/// Draws from the multinomial or Roy example with the given index functions.
///
/// Errors are `e_j = rho U + sqrt(1 - rho^2) xi_j` with independent standard
/// normal `xi_j`, so the pair is exchangeable. Roy ties go to sector `a`,
/// multinomial ties to the lowest category.
pub fn generate_example_with(spec: &DesignSpec, indices: &ExampleIndices) -> Result<Sample> {
    spec.validate()?;
    if !matches!(spec.design, Design::Multinomial | Design::Roy) {
        return Err(Error::Config(format!("{} is not an example design", spec.design)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let rho = spec.rho;
    let s = (1.0 - rho * rho).sqrt();
    let mut observations = Vec::with_capacity(spec.n);
    let mut latent = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let x: f64 = rng.sample(StandardNormal);
        let z: f64 = rng.sample(StandardNormal);
        let u: f64 = rng.sample(StandardNormal);
        let xi_a: f64 = rng.sample(StandardNormal);
        let xi_b: f64 = rng.sample(StandardNormal);
        let errors = [rho * u + s * xi_a, rho * u + s * xi_b];
        let d = z - u > 0.0;
        let first = indices[0].eval(x, d) + errors[0];
        let second = indices[1].eval(x, d) + errors[1];
        let (y, w) = match spec.design {
            Design::Multinomial => {
                let mut best = (0.0, 0u8);
                for (j, util) in [(1u8, first), (2u8, second)] {
                    if util > best.0 {
                        best = (util, j);
                    }
                }
                (f64::from(best.1), None)
            }
            _ => {
                if first >= second {
                    (first, Some(Sector::A))
                } else {
                    (second, Some(Sector::B))
                }
            }
        };
        observations.push(Observation {
            y,
            w,
            d,
            x,
            z,
            p: normal::cdf(z),
        });
        latent.push(LatentDraws {
            u,
            errors,
            sectors: [first, second],
        });
    }
    Ok(Sample {
        spec: *spec,
        observations,
        latent,
    })
}

/// Writes `y,w,d,x,z,p` rows with 17 significant digits.
pub fn write_sample_csv<W: Write>(sample: &Sample, out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["y", "w", "d", "x", "z", "p"])?;
    for o in &sample.observations {
        wtr.write_record([
            format!("{:.16e}", o.y),
            o.w.map(|s| s.label().to_string()).unwrap_or_default(),
            if o.d { "1".into() } else { "0".into() },
            format!("{:.16e}", o.x),
            format!("{:.16e}", o.z),
            format!("{:.16e}", o.p),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads observations written by [`write_sample_csv`].
pub fn read_sample_csv<R: Read>(input: R) -> Result<Vec<Observation>> {
    let mut rdr = csv::Reader::from_reader(input);
    let parse = |s: &str| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .map_err(|e| Error::Parse(format!("bad number `{s}`: {e}")))
    };
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != 6 {
            return Err(Error::Parse(format!("expected 6 fields, found {}", rec.len())));
        }
        let w = match rec[1].trim() {
            "" => None,
            "a" => Some(Sector::A),
            "b" => Some(Sector::B),
            other => return Err(Error::Parse(format!("bad sector `{other}`"))),
        };
        let d = match rec[2].trim() {
            "0" => false,
            "1" => true,
            other => return Err(Error::Parse(format!("bad treatment flag `{other}`"))),
        };
        out.push(Observation {
            y: parse(&rec[0])?,
            w,
            d,
            x: parse(&rec[3])?,
            z: parse(&rec[4])?,
            p: parse(&rec[5])?,
        });
    }
    Ok(out)
}
