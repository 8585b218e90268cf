use super::KgeError;

/// Loss value and its partial derivatives with respect to the scores.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTerms {
    pub loss: f64,
    pub d_positive: f64,
    pub d_negatives: Vec<f64>,
    /// Softmax weights of the negatives, held constant in the derivatives.
    pub weights: Vec<f64>,
}

/// `ln(1 + e^x)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Self-adversarial negative sampling loss
/// `-ln sigmoid(f_pos) - sum_i w_i ln sigmoid(-f_neg_i)` with
/// `w = softmax(temperature * f_neg)`. The weights are treated as constants
/// when differentiating.
pub fn self_adversarial_loss(positive: f64, negatives: &[f64], temperature: f64) -> Result<LossTerms, KgeError> {
    if negatives.is_empty() {
        return Err(KgeError::NoNegatives);
    }
    if !(temperature > 0.0) {
        return Err(KgeError::InvalidConfig(format!("adversarial temperature must be positive, got {temperature}")));
    }
    let mut weights = vec![0.0; negatives.len()];
    let mut d_negatives = vec![0.0; negatives.len()];
    let loss = loss_into(positive, negatives, temperature, &mut weights, &mut d_negatives);
    let d_positive = super::sigmoid(positive) - 1.0;
    Ok(LossTerms { loss, d_positive, d_negatives, weights })
}

/// Allocation-free core used by the training loop. Returns the loss and
/// writes weights and negative partials; the positive partial is
/// `sigmoid(f_pos) - 1`.
pub(crate) fn loss_into(positive: f64, negatives: &[f64], temperature: f64, weights: &mut [f64], d_neg: &mut [f64]) -> f64 {
    let max = negatives.iter().fold(f64::NEG_INFINITY, |m, &f| m.max(temperature * f));
    let mut z = 0.0;
    for (w, &f) in weights.iter_mut().zip(negatives) {
        *w = (temperature * f - max).exp();
        z += *w;
    }
    let mut loss = softplus(-positive);
    for ((w, d), &f) in weights.iter_mut().zip(d_neg.iter_mut()).zip(negatives) {
        *w /= z;
        loss += *w * softplus(f);
        *d = *w * super::sigmoid(f);
    }
    loss
}
