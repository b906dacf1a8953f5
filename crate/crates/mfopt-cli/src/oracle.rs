//! Brute-force check of the weighted-quantile selection rule against
//! the pointwise potential it is supposed to minimize, exposed for CI.

use serde::Deserialize;

use mfopt::filter::pointwise_potential;
use mfopt::weighted_quantile_value;

use crate::error::{CliError, Result};

/// One oracle case: a neighborhood, its kernel weights, and the local
/// threshold level `t = 1/2 + (F1 - F2) / (2 lambda_tilde)`.
#[derive(Debug, Clone, Deserialize)]
pub struct QuantileSample {
    pub neighbors: Vec<f64>,
    pub weights: Vec<f64>,
    pub t: f64,
    /// Effective fidelity weight; defaults to 1.
    #[serde(default = "default_lambda")]
    pub lambda_tilde: f64,
}

fn default_lambda() -> f64 {
    1.0
}

#[derive(Debug, Clone)]
pub struct QuantileVerdict {
    pub selected: f64,
    pub best_grid: f64,
    /// `J(selected) - min_grid J`, before slack.
    pub excess: f64,
    pub ok: bool,
}

/// Scan the potential over a uniform grid of the given step across the
/// neighbor hull and compare against the filter's selection. The filter
/// is exact, so the selection may beat the grid but must never trail it
/// by more than one Lipschitz step.
pub fn check_sample(s: &QuantileSample, step: f64) -> Result<QuantileVerdict> {
    if s.neighbors.is_empty() || s.neighbors.len() != s.weights.len() {
        return Err(CliError::Config(
            "sample needs equally many neighbors and weights".into(),
        ));
    }
    if s.weights.iter().any(|&w| w < 0.0) || s.lambda_tilde <= 0.0 {
        return Err(CliError::Config(
            "weights must be nonnegative and lambda_tilde positive".into(),
        ));
    }
    if s.neighbors.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(CliError::Config(
            "neighbors must be level-set values in [0, 1]".into(),
        ));
    }
    let selected = weighted_quantile_value(&s.neighbors, &s.weights, s.t);

    // Recover forces consistent with the threshold level: the potential
    // only depends on T through (F1 - F2), so set F2 = 0.
    let f1 = (s.t - 0.5) * 2.0 * s.lambda_tilde;
    let f2 = 0.0;
    let total_w: f64 = s.weights.iter().sum();

    // Scan the full admissible level-set range: the filter minimizes
    // the potential over [0, 1], snapping to a boundary value when the
    // threshold level leaves (0, 1].
    let j = |xi: f64| pointwise_potential(xi, &s.neighbors, &s.weights, f1, f2, s.lambda_tilde);
    let j_sel = j(selected);
    let mut best_grid = 0.0;
    let mut j_best = j(0.0);
    let steps = ((1.0 / step).ceil() as usize).max(1);
    for k in 0..=steps {
        let xi = k as f64 / steps as f64;
        let jx = j(xi);
        if jx < j_best {
            j_best = jx;
            best_grid = xi;
        }
    }
    // |J'| <= total weight + |F1 - F2| / lambda_tilde.
    let lipschitz = total_w + (f1 - f2).abs() / s.lambda_tilde;
    let excess = j_sel - j_best;
    Ok(QuantileVerdict {
        selected,
        best_grid,
        excess,
        ok: excess <= lipschitz * step + 1e-12,
    })
}

/// Run the oracle over a JSON array of samples; returns per-sample
/// verdicts. Errors on unparseable input.
pub fn check_samples_json(text: &str, step: f64) -> Result<Vec<QuantileVerdict>> {
    let samples: Vec<QuantileSample> = serde_json::from_str(text)
        .map_err(|e| CliError::Config(format!("samples JSON: {e}")))?;
    samples.iter().map(|s| check_sample(s, step)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_symmetric_pair_passes() {
        let s = QuantileSample {
            neighbors: vec![0.0, 1.0, 0.4],
            weights: vec![0.25, 0.25, 0.5],
            t: 0.5,
            lambda_tilde: 1.0,
        };
        let v = check_sample(&s, 1e-3).unwrap();
        assert!(v.ok, "excess = {}", v.excess);
        assert_eq!(v.selected, 0.4);
    }

    #[test]
    fn out_of_range_levels_take_extremes() {
        let s = QuantileSample {
            neighbors: vec![0.2, 0.8],
            weights: vec![0.5, 0.5],
            t: -0.1,
            lambda_tilde: 1.0,
        };
        assert_eq!(check_sample(&s, 1e-3).unwrap().selected, 1.0);
        let s2 = QuantileSample { t: 1.2, ..s };
        assert_eq!(check_sample(&s2, 1e-3).unwrap().selected, 0.0);
    }

    #[test]
    fn json_front_end_parses() {
        let text = r#"[{"neighbors":[0.1,0.9],"weights":[0.5,0.5],"t":0.5}]"#;
        let v = check_samples_json(text, 1e-3).unwrap();
        assert_eq!(v.len(), 1);
        assert!(v[0].ok);
    }
}
