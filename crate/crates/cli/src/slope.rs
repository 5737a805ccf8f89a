//! Log-log slope fitting for convergence-order claims.

use serde::{Deserialize, Serialize};

/// Below this r² a fit is reported as inconclusive rather than pass/fail.
pub const R2_CONCLUSIVE: f64 = 0.98;

/// Least-squares fit of `log residual` against `log ε`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// The fitted `(log ε, log residual)` points.
    pub points: Vec<(f64, f64)>,
}

impl SlopeFit {
    /// Fit over `(ε, residual)` pairs; residuals at or below `floor` are
    /// clamped (they sit in numerical noise).
    pub fn fit(epsilons: &[f64], residuals: &[f64], floor: f64) -> Self {
        assert_eq!(epsilons.len(), residuals.len());
        let points: Vec<(f64, f64)> = epsilons
            .iter()
            .zip(residuals.iter())
            .map(|(&e, &r)| (e.ln(), r.max(floor).ln()))
            .collect();
        let n = points.len() as f64;
        let sx: f64 = points.iter().map(|p| p.0).sum();
        let sy: f64 = points.iter().map(|p| p.1).sum();
        let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
        let denom = n * sxx - sx * sx;
        let (slope, intercept) = if denom.abs() < 1e-300 {
            (0.0, sy / n)
        } else {
            let slope = (n * sxy - sx * sy) / denom;
            (slope, (sy - slope * sx) / n)
        };
        let mean_y = sy / n;
        let ss_tot: f64 = points.iter().map(|p| (p.1 - mean_y).powi(2)).sum();
        let ss_res: f64 = points
            .iter()
            .map(|p| (p.1 - (intercept + slope * p.0)).powi(2))
            .sum();
        // zero variation means every residual sat at the clamp floor; such
        // a fit asserts nothing
        let r_squared = if ss_tot > 0.0 {
            1.0 - ss_res / ss_tot
        } else {
            0.0
        };
        Self {
            slope,
            intercept,
            r_squared,
            points,
        }
    }

    pub fn is_conclusive(&self) -> bool {
        self.r_squared >= R2_CONCLUSIVE
    }

    /// Pass iff conclusive and the slope is within `tol` of `center`.
    pub fn passes(&self, center: f64, tol: f64, r2_min: f64) -> SlopeVerdict {
        if self.r_squared < R2_CONCLUSIVE {
            return SlopeVerdict::Inconclusive;
        }
        if (self.slope - center).abs() <= tol && self.r_squared >= r2_min {
            SlopeVerdict::Pass
        } else {
            SlopeVerdict::Fail
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlopeVerdict {
    Pass,
    Fail,
    /// The fit quality is too poor to assert anything (residuals at the
    /// noise floor, for instance); never counted as a failure.
    Inconclusive,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_laws_are_recovered() {
        let eps = [0.125, 0.0625, 0.03125, 0.015625];
        let r1: Vec<f64> = eps.iter().map(|e| 0.7 * e).collect();
        let fit = SlopeFit::fit(&eps, &r1, 1e-300);
        assert!((fit.slope - 1.0).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert!((fit.intercept - 0.7f64.ln()).abs() < 1e-12);

        let r2: Vec<f64> = eps.iter().map(|e| 3.0 * e * e).collect();
        let fit = SlopeFit::fit(&eps, &r2, 1e-300);
        assert!((fit.slope - 2.0).abs() < 1e-12);
        assert_eq!(fit.passes(2.0, 0.2, 0.99), SlopeVerdict::Pass);
        assert_eq!(fit.passes(1.0, 0.2, 0.99), SlopeVerdict::Fail);
    }

    #[test]
    fn noise_floor_data_is_inconclusive() {
        let eps = [0.125, 0.0625, 0.03125, 0.015625];
        let r: Vec<f64> = vec![1.1e-15, 0.9e-15, 1.05e-15, 0.95e-15];
        let fit = SlopeFit::fit(&eps, &r, 1e-300);
        assert_eq!(fit.passes(1.0, 0.15, 0.99), SlopeVerdict::Inconclusive);
    }
}
