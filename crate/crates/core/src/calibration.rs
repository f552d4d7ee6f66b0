//! NURBS weight calibration by coordinate descent on the least-squares misfit
//! between the Greville interpolant of a payoff and the payoff itself.

use crate::assembly::{GrevilleProjector, PhysicalMap};
use crate::basis::{KnotVector, NurbsBasis};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationConfig {
    pub lower: f64,
    pub upper: f64,
    /// Sample points per element for the misfit.
    pub samples_per_element: usize,
    /// Initial and largest multiplicative trial step (> 1).
    pub initial_step: f64,
    /// A coordinate is frozen once its step falls below `1 + min_step`.
    pub min_step: f64,
    pub max_sweeps: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            lower: 0.1,
            upper: 50.0,
            samples_per_element: 16,
            initial_step: 2.0,
            min_step: 1e-6,
            max_sweeps: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub weights: Vec<f64>,
    pub misfit: f64,
    pub initial_misfit: f64,
    pub sweeps: usize,
}

struct Objective<'a> {
    knots: &'a KnotVector,
    samples_xi: Vec<f64>,
    samples_f: Vec<f64>,
    greville_f: Vec<f64>,
}

impl Objective<'_> {
    fn misfit(&self, weights: &[f64]) -> Result<f64> {
        let basis = NurbsBasis::new(self.knots.clone(), weights.to_vec())?;
        let coeffs = GrevilleProjector::new(&basis)?.project(&self.greville_f)?;
        Ok(self
            .samples_xi
            .iter()
            .zip(&self.samples_f)
            .map(|(&xi, &f)| {
                let d = basis.eval_expansion(&coeffs, xi, 0) - f;
                d * d
            })
            .sum())
    }
}

/// Weights in `[lower, upper]` minimizing `Σ (I_w f - f)²` over a dense
/// uniform sample of `[x_min, x_max]`, starting from all ones.
pub fn calibrate_weights<F: Fn(f64) -> f64>(
    knots: &KnotVector,
    x_min: f64,
    x_max: f64,
    payoff: F,
    cfg: &CalibrationConfig,
) -> Result<Calibration> {
    if !(cfg.lower > 0.0 && cfg.lower <= 1.0 && cfg.upper >= 1.0) {
        return Err(Error::InvalidParameter("weight bounds must bracket 1 and be positive".into()));
    }
    if !(cfg.initial_step > 1.0) || cfg.samples_per_element == 0 {
        return Err(Error::InvalidParameter("calibration step must exceed 1".into()));
    }
    let unit = NurbsBasis::unweighted(knots.clone());
    let map = PhysicalMap::new(x_min, x_max, &unit)?;
    let (lo, hi) = knots.domain();
    let n_samples = cfg.samples_per_element * knots.n_elements() + 1;
    let samples_xi: Vec<f64> = (0..n_samples)
        .map(|i| lo + (hi - lo) * i as f64 / (n_samples - 1) as f64)
        .collect();
    let samples_f = samples_xi.iter().map(|&xi| payoff(map.to_physical(xi))).collect();
    let greville_f = GrevilleProjector::new(&unit)?
        .points()
        .iter()
        .map(|&g| payoff(map.to_physical(g)))
        .collect();
    let obj = Objective {
        knots,
        samples_xi,
        samples_f,
        greville_f,
    };

    let mut w = vec![1.0; knots.n_basis()];
    let initial_misfit = obj.misfit(&w)?;
    let mut best = initial_misfit;
    // Each coordinate keeps its own multiplicative step: squared after a
    // successful move, square-rooted after a failed one.
    let mut steps = vec![cfg.initial_step; w.len()];
    let mut sweeps = 0;
    while sweeps < cfg.max_sweeps && steps.iter().any(|&s| s > 1.0 + cfg.min_step) {
        sweeps += 1;
        for i in 0..w.len() {
            if steps[i] <= 1.0 + cfg.min_step {
                continue;
            }
            let current = w[i];
            let mut moved = false;
            for trial in [current * steps[i], current / steps[i]] {
                let trial = trial.clamp(cfg.lower, cfg.upper);
                if trial == current {
                    continue;
                }
                w[i] = trial;
                let m = obj.misfit(&w)?;
                if m < best {
                    best = m;
                    moved = true;
                    break;
                }
                w[i] = current;
            }
            steps[i] = if moved {
                (steps[i] * steps[i]).min(cfg.initial_step)
            } else {
                steps[i].sqrt()
            };
        }
    }
    Ok(Calibration {
        weights: w,
        misfit: best,
        initial_misfit,
        sweeps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproduced_function_keeps_unit_weights() {
        // Cubic polynomials are reproduced exactly by the unweighted basis.
        let kv = KnotVector::uniform(6, 3).unwrap();
        let c = calibrate_weights(&kv, 0.0, 1.0, |x| x * x * x - x, &CalibrationConfig::default()).unwrap();
        assert!(c.initial_misfit < 1e-20);
        assert!(c.weights.iter().all(|w| *w == 1.0));
    }

    #[test]
    fn misfit_never_increases_and_bounds_hold() {
        let kv = KnotVector::uniform(8, 3).unwrap();
        let cfg = CalibrationConfig {
            max_sweeps: 20,
            ..Default::default()
        };
        let c = calibrate_weights(&kv, -2.0, 2.0, |x| (x.exp() - 1.0).max(0.0), &cfg).unwrap();
        assert!(c.misfit <= c.initial_misfit);
        assert!(c.weights.iter().all(|w| (cfg.lower..=cfg.upper).contains(w)));
    }

    #[test]
    fn rejects_bad_bounds() {
        let kv = KnotVector::uniform(4, 3).unwrap();
        let cfg = CalibrationConfig {
            lower: 2.0,
            ..Default::default()
        };
        assert!(calibrate_weights(&kv, 0.0, 1.0, |x| x, &cfg).is_err());
    }
}
