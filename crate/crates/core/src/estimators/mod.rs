//! Point estimators of `E[Y_1]` and of the distribution function `P(Y_1 <= y)`.

mod ckt;
mod rc;
mod theorem1;
mod vy;

pub use ckt::{ate_ckt, ate_ckt_weighted, ckt_fit, CktFit};
pub use rc::{rc_dte, rc_dte_infeasible, rc_tau, rc_t_hat, solve_crossing, RC_EVALUATION_Y};
pub use theorem1::{theorem1_variance, theorem1_variance_with, TheoremOneVariance};
pub use vy::{ate_vy_infeasible, vy_mean_integral};

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::dgp::{DesignSpec, Observation};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EstimatorKind {
    CktAte,
    CktAteWeighted,
    VyInfeasible,
    RcDte,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::CktAte => "CKT_ATE",
            EstimatorKind::CktAteWeighted => "CKT_ATE_WEIGHTED",
            EstimatorKind::VyInfeasible => "VY_INFEASIBLE",
            EstimatorKind::RcDte => "RC_DTE",
        }
    }

    /// Short column label used in rendered tables.
    pub fn label(self) -> &'static str {
        match self {
            EstimatorKind::CktAte => "CKT",
            EstimatorKind::CktAteWeighted => "CKT-W",
            EstimatorKind::VyInfeasible => "VY",
            EstimatorKind::RcDte => "RC",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ckt" | "ckt_ate" => Ok(EstimatorKind::CktAte),
            "ckt_w" | "ckt-w" | "ckt_ate_weighted" => Ok(EstimatorKind::CktAteWeighted),
            "vy" | "vy_infeasible" => Ok(EstimatorKind::VyInfeasible),
            "rc" | "rc_dte" => Ok(EstimatorKind::RcDte),
            other => Err(Error::Config(format!("unknown estimator `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateReport {
    pub estimator: EstimatorKind,
    pub value: f64,
    pub n_used: usize,
    pub n_dropped: usize,
    /// True parameter when known.
    pub target: Option<f64>,
}

/// Writes `estimator,design,rho,n,seed,value,target,n_used,n_dropped`.
pub fn write_report_csv<W: Write>(rows: &[(DesignSpec, EstimateReport)], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["estimator", "design", "rho", "n", "seed", "value", "target", "n_used", "n_dropped"])?;
    for (spec, r) in rows {
        wtr.write_record([
            r.estimator.name().to_string(),
            spec.design.name().to_string(),
            format!("{}", spec.rho),
            spec.n.to_string(),
            spec.seed.to_string(),
            format!("{:.16e}", r.value),
            r.target.map(|t| format!("{t:.16e}")).unwrap_or_default(),
            r.n_used.to_string(),
            r.n_dropped.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Sorts observations into a fixed order so estimates do not depend on how
/// the sample was labelled.
pub(crate) fn canonical_order(obs: &[Observation]) -> Vec<Observation> {
    let mut sorted = obs.to_vec();
    sorted.sort_by(|a, b| {
        a.y.total_cmp(&b.y)
            .then(a.x.total_cmp(&b.x))
            .then(a.z.total_cmp(&b.z))
            .then(a.p.total_cmp(&b.p))
            .then(a.d.cmp(&b.d))
    });
    sorted
}
