use super::{canonical_order, EstimateReport, EstimatorKind};
use crate::dgp::{true_parameter, Design, Sample};
use crate::error::{Error, Result};
use crate::nonparametrics::{linspace, EstimatorConfig, NW_FLOOR};
use crate::normal;
use crate::optim::golden_section_min;

/// `z phi(z)`, zero at the infinities.
fn z_phi(z: f64) -> f64 {
    if z.is_finite() {
        z * normal::pdf(z)
    } else {
        0.0
    }
}

/// Integrals over `t in [p_b, p_a]` of `1`, `u` and `u^2` with `u = Phi^-1(t)`.
#[derive(Debug, Clone, Copy)]
struct PairMoments {
    width: f64,
    first: f64,
    second: f64,
}

impl PairMoments {
    fn new(pa: f64, pb: f64) -> Self {
        let (za, zb) = (normal::quantile(pa), normal::quantile(pb));
        Self {
            width: pa - pb,
            first: normal::pdf(zb) - normal::pdf(za),
            second: (pa - z_phi(za)) - (pb - z_phi(zb)),
        }
    }

    fn mean_integral(&self, design: Design, rho: f64, x: f64, d: bool) -> f64 {
        let df = if d { 1.0 } else { 0.0 };
        let v = x + 0.5 * df;
        match design {
            Design::D1 => self.width * v + rho * self.first,
            Design::D2 => self.width * v + (x + df) * rho * self.first,
            _ => self.width * (v * v + 1.0 - rho * rho) + 2.0 * v * rho * self.first + rho * rho * self.second,
        }
    }
}

fn check_design(design: Design) -> Result<()> {
    match design {
        Design::D1 | Design::D2 | Design::D3 => Ok(()),
        other => Err(Error::Config(format!("mean matching is defined for D1-D3, not {other}"))),
    }
}

/// `m_d(x, p_a, p_b) = int_{p_b}^{p_a} E[Y_d | X = x, U = Phi^-1(t)] dt` in closed form.
pub fn vy_mean_integral(design: Design, rho: f64, x: f64, d: bool, pa: f64, pb: f64) -> Result<f64> {
    check_design(design)?;
    Ok(PairMoments::new(pa, pb).mean_integral(design, rho, x, d))
}

struct MeanMatcher {
    design: Design,
    rho: f64,
    pairs: Vec<PairMoments>,
    grid: Vec<f64>,
}

impl MeanMatcher {
    fn new(design: Design, rho: f64, p_points: &[f64], lo: f64, hi: f64, points: usize) -> Self {
        let mut pairs = Vec::new();
        for a in 1..p_points.len() {
            for b in 0..a {
                pairs.push(PairMoments::new(p_points[a], p_points[b]));
            }
        }
        Self {
            design,
            rho,
            pairs,
            grid: linspace(lo, hi, points),
        }
    }

    fn objective(&self, treated: &[f64], x0: f64) -> f64 {
        let sum: f64 = self
            .pairs
            .iter()
            .zip(treated)
            .map(|(m, t)| (t - m.mean_integral(self.design, self.rho, x0, false)).powi(2))
            .sum();
        sum / self.pairs.len() as f64
    }

    /// Minimiser over the grid, refined by golden-section search between the
    /// neighbouring grid points. Ties go to the smallest candidate.
    fn matched(&self, x: f64) -> f64 {
        let treated: Vec<f64> = self
            .pairs
            .iter()
            .map(|m| m.mean_integral(self.design, self.rho, x, true))
            .collect();
        let mut best = (f64::INFINITY, 0usize);
        for (k, &g) in self.grid.iter().enumerate() {
            let f = self.objective(&treated, g);
            if f < best.0 {
                best = (f, k);
            }
        }
        let k = best.1;
        let lo = self.grid[k.saturating_sub(1)];
        let hi = self.grid[(k + 1).min(self.grid.len() - 1)];
        let refined = golden_section_min(|v| self.objective(&treated, v), lo, hi, 1e-8);
        if self.objective(&treated, refined) <= best.0 {
            refined
        } else {
            self.grid[k]
        }
    }
}

/// Infeasible mean-matching baseline.
///
/// For each trimmed-in untreated unit, `x~` minimises the mean squared gap
/// between the closed-form treated mean integrals at `X_i` and untreated ones
/// at `x~` over the propensity pair grid; `Y^_i` is the kernel regression of
/// `Y` on `(X, P)` among trimmed-in untreated donors at `(x~, P_i)`.
pub fn ate_vy_infeasible(sample: &Sample, design: Design, rho: f64, config: &EstimatorConfig) -> Result<EstimateReport> {
    check_design(design)?;
    config.validate()?;
    let obs = canonical_order(&sample.observations);
    let n = obs.len();
    if n == 0 {
        return Err(Error::Config("empty sample".into()));
    }
    let b = config.bandwidth(n);
    let mean_x = obs.iter().map(|o| o.x).sum::<f64>() / n as f64;
    let sd_x = (obs.iter().map(|o| (o.x - mean_x).powi(2)).sum::<f64>() / n as f64).sqrt();
    let spread = if sd_x > 0.0 { 4.0 * sd_x } else { 4.0 };
    let matcher = MeanMatcher::new(
        design,
        rho,
        &config.p_points(),
        mean_x - spread,
        mean_x + spread,
        config.vy_grid_points,
    );
    let donors: Vec<usize> = (0..n).filter(|&j| !obs[j].d && config.in_band(obs[j].p)).collect();

    let mut sum = 0.0;
    let mut used = 0usize;
    for (i, o) in obs.iter().enumerate() {
        if !config.in_band(o.p) {
            continue;
        }
        if o.d {
            sum += o.y;
            used += 1;
            continue;
        }
        let x_match = matcher.matched(o.x);
        let (mut num, mut den) = (0.0, 0.0);
        for &j in &donors {
            if j == i {
                continue;
            }
            let dj = &obs[j];
            let w = normal::kernel((dj.x - x_match) / b) * normal::kernel((dj.p - o.p) / b);
            num += w * dj.y;
            den += w;
        }
        if den >= NW_FLOOR {
            sum += num / den;
            used += 1;
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
        estimator: EstimatorKind::VyInfeasible,
        value: sum / used as f64,
        n_used: used,
        n_dropped: n - used,
        target: true_parameter(design, rho).ok(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{generate, DesignSpec};
    use crate::quadrature::integrate_default;

    fn conditional_mean(design: Design, rho: f64, x: f64, d: bool, u: f64) -> f64 {
        let df = if d { 1.0 } else { 0.0 };
        let v = x + 0.5 * df;
        match design {
            Design::D1 => v + rho * u,
            Design::D2 => v + (x + df) * rho * u,
            _ => (v + rho * u).powi(2) + 1.0 - rho * rho,
        }
    }

    #[test]
    fn closed_forms_match_quadrature() {
        for design in [Design::D1, Design::D2, Design::D3] {
            for &(x, d, pa, pb) in &[(0.3, true, 0.9, 0.2), (-1.2, false, 0.95, 0.05), (0.7, true, 0.99, 0.5)] {
                let rho = 0.4;
                let q = integrate_default(|t| conditional_mean(design, rho, x, d, normal::quantile(t)), pb, pa).unwrap();
                let c = vy_mean_integral(design, rho, x, d, pa, pb).unwrap();
                assert!((q - c).abs() < 1e-8, "{design} {x} {d}: {q} vs {c}");
            }
        }
        // full unit interval: E[u] = 0, E[u^2] = 1
        let full = vy_mean_integral(Design::D3, 0.5, 0.2, false, 1.0, 0.0).unwrap();
        assert!((full - (0.04 + 1.0)).abs() < 1e-15);
        assert!(vy_mean_integral(Design::Rc, 0.0, 0.0, true, 0.6, 0.4).is_err());
    }

    #[test]
    fn design_one_matches_shifted_covariate() {
        let c = EstimatorConfig::default();
        let m = MeanMatcher::new(Design::D1, 0.0, &c.p_points(), -4.0, 4.0, 2001);
        for &x in &[-1.3, 0.0, 0.3, 1.7] {
            assert!((m.matched(x) - (x + 0.5)).abs() < 1e-6);
        }
    }

    #[test]
    fn reports_finite_values() {
        let s = generate(&DesignSpec::new(Design::D2, 0.5, 200, 3)).unwrap();
        let r = ate_vy_infeasible(&s, Design::D2, 0.5, &EstimatorConfig::default()).unwrap();
        assert!(r.value.is_finite());
        assert_eq!(r.estimator, EstimatorKind::VyInfeasible);
        assert_eq!(r.n_used + r.n_dropped, 200);
        assert_eq!(r.target, Some(0.5));
    }
}
