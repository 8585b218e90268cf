use std::collections::HashSet;

use rand::Rng;

use super::sampling::sample_into;
use super::{Calibration, ComplexModel, KgeError};
use crate::kg::IndexedTriple;

const MAX_ITERATIONS: usize = 200;
const TOLERANCE: f64 = 1e-8;
const MIN_SLOPE: f64 = 1e-9;

/// Result of a Platt fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlattFit {
    pub calibration: Calibration,
    pub iterations: usize,
    /// Set when the scores carry no information and the fit fell back to
    /// `(1, 0)`.
    pub degenerate: bool,
}

/// Fits `sigmoid(a * score + b)` to label positives 1 and negatives 0 by
/// minimizing binary cross-entropy with a damped Newton method, `a > 0`.
pub fn fit_platt(positive_scores: &[f64], negative_scores: &[f64]) -> Result<PlattFit, KgeError> {
    if positive_scores.is_empty() || negative_scores.is_empty() {
        return Err(KgeError::EmptyCalibrationSet);
    }
    let data: Vec<(f64, f64)> = positive_scores
        .iter()
        .map(|&s| (s, 1.0))
        .chain(negative_scores.iter().map(|&s| (s, 0.0)))
        .collect();
    if data.iter().any(|(s, _)| !s.is_finite()) {
        return Err(KgeError::InvalidConfig("non-finite score in calibration data".into()));
    }
    let first = data[0].0;
    if data.iter().all(|&(s, _)| s == first) {
        return Ok(PlattFit { calibration: Calibration::default(), iterations: 0, degenerate: true });
    }

    let objective = |a: f64, b: f64| -> f64 {
        data.iter()
            .map(|&(s, y)| {
                let z = a * s + b;
                // y=1: softplus(-z); y=0: softplus(z)
                super::loss::softplus(if y > 0.5 { -z } else { z })
            })
            .sum()
    };

    let n_pos = positive_scores.len() as f64;
    let n_neg = negative_scores.len() as f64;
    let (mut a, mut b) = (1.0f64, (n_pos / n_neg).ln());
    let mut f = objective(a, b);
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let (mut ga, mut gb, mut haa, mut hab, mut hbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &(s, y) in &data {
            let p = super::sigmoid(a * s + b);
            let r = p - y;
            let w = (p * (1.0 - p)).max(1e-300);
            ga += r * s;
            gb += r;
            haa += w * s * s;
            hab += w * s;
            hbb += w;
        }
        // small ridge keeps the system solvable on separable data
        haa += 1e-12;
        hbb += 1e-12;
        let det = haa * hbb - hab * hab;
        let (mut da, mut db) = if det.abs() > 1e-300 {
            (-(hbb * ga - hab * gb) / det, -(haa * gb - hab * ga) / det)
        } else {
            (-ga, -gb)
        };
        if !(da.is_finite() && db.is_finite()) {
            da = -ga;
            db = -gb;
        }
        let mut step = 1.0;
        let mut improved = false;
        while step > 1e-12 {
            let na = (a + step * da).max(MIN_SLOPE);
            let nb = b + step * db;
            let nf = objective(na, nb);
            if nf.is_finite() && nf <= f {
                let decrease = f - nf;
                a = na;
                b = nb;
                f = nf;
                improved = true;
                if decrease < TOLERANCE {
                    return Ok(PlattFit { calibration: Calibration { a, b }, iterations, degenerate: false });
                }
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    Ok(PlattFit { calibration: Calibration { a, b }, iterations, degenerate: false })
}

/// Platt-fits `model`'s calibration on the scores of `positives` versus
/// `negatives` and stores the result in the model.
pub fn calibrate(
    model: &mut ComplexModel,
    positives: &[IndexedTriple],
    negatives: &[IndexedTriple],
) -> Result<PlattFit, KgeError> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(KgeError::EmptyCalibrationSet);
    }
    let pos = positives.iter().map(|&t| model.score_triple(t)).collect::<Result<Vec<_>, _>>()?;
    let neg = negatives.iter().map(|&t| model.score_triple(t)).collect::<Result<Vec<_>, _>>()?;
    let fit = fit_platt(&pos, &neg)?;
    model.calibration = fit.calibration;
    Ok(fit)
}

/// `eta` corruptions per positive, dropping any that are known to be true.
pub fn calibration_negatives<R: Rng + ?Sized>(
    positives: &[IndexedTriple],
    known: &HashSet<IndexedTriple>,
    n_entities: usize,
    eta: usize,
    rng: &mut R,
) -> Result<Vec<IndexedTriple>, KgeError> {
    let mut out = Vec::with_capacity(positives.len() * eta);
    let mut buf = Vec::with_capacity(eta);
    for &p in positives {
        sample_into(p, n_entities, eta, rng, &mut buf)?;
        out.extend(buf.iter().filter(|t| !known.contains(t)));
    }
    Ok(out)
}
