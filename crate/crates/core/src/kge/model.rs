use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::KgeError;
use crate::kg::{IndexedTriple, KnowledgeGraph};

/// Platt scaling parameters: `p = sigmoid(a * score + b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub a: f64,
    pub b: f64,
}

impl Default for Calibration {
    fn default() -> Self {
        Self { a: 1.0, b: 0.0 }
    }
}

/// ComplEx embeddings for `n_entities` entities and `n_relations` relations.
///
/// All parameters live in one flat vector, laid out as entity real parts,
/// entity imaginary parts, relation real parts, relation imaginary parts;
/// each table is row-major with `k` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexModel {
    k: usize,
    n_entities: usize,
    n_relations: usize,
    params: Vec<f64>,
    pub calibration: Calibration,
}

/// Gradient of one triple score with respect to the three embedding rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreGradient {
    pub subject_re: Vec<f64>,
    pub subject_im: Vec<f64>,
    pub relation_re: Vec<f64>,
    pub relation_im: Vec<f64>,
    pub object_re: Vec<f64>,
    pub object_im: Vec<f64>,
}

/// `Re(sum_j a_j * w_j * conj(b_j))` over split real/imaginary slices.
#[inline]
pub(crate) fn trilinear(a_re: &[f64], a_im: &[f64], w_re: &[f64], w_im: &[f64], b_re: &[f64], b_im: &[f64]) -> f64 {
    let mut acc = 0.0;
    for j in 0..a_re.len() {
        acc += w_re[j] * (a_re[j] * b_re[j] + a_im[j] * b_im[j]) + w_im[j] * (a_re[j] * b_im[j] - a_im[j] * b_re[j]);
    }
    acc
}

impl ComplexModel {
    /// Zero-initialized model.
    pub fn zeros(n_entities: usize, n_relations: usize, k: usize) -> Self {
        Self {
            k,
            n_entities,
            n_relations,
            params: vec![0.0; 2 * k * (n_entities + n_relations)],
            calibration: Calibration::default(),
        }
    }

    /// Model with a caller-supplied parameter vector in the flat layout.
    pub fn from_params(
        n_entities: usize,
        n_relations: usize,
        k: usize,
        params: Vec<f64>,
        calibration: Calibration,
    ) -> Result<Self, KgeError> {
        let expected = 2 * k * (n_entities + n_relations);
        if params.len() != expected {
            return Err(KgeError::ShapeMismatch { expected, got: params.len() });
        }
        Ok(Self { k, n_entities, n_relations, params, calibration })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_entities(&self) -> usize {
        self.n_entities
    }

    pub fn n_relations(&self) -> usize {
        self.n_relations
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub(crate) fn entity_re_offset(&self, e: usize) -> usize {
        e * self.k
    }

    pub(crate) fn entity_im_offset(&self, e: usize) -> usize {
        (self.n_entities + e) * self.k
    }

    pub(crate) fn relation_re_offset(&self, r: usize) -> usize {
        (2 * self.n_entities + r) * self.k
    }

    pub(crate) fn relation_im_offset(&self, r: usize) -> usize {
        (2 * self.n_entities + self.n_relations + r) * self.k
    }

    pub fn entity_re(&self, e: usize) -> &[f64] {
        let o = self.entity_re_offset(e);
        &self.params[o..o + self.k]
    }

    pub fn entity_im(&self, e: usize) -> &[f64] {
        let o = self.entity_im_offset(e);
        &self.params[o..o + self.k]
    }

    pub fn relation_re(&self, r: usize) -> &[f64] {
        let o = self.relation_re_offset(r);
        &self.params[o..o + self.k]
    }

    pub fn relation_im(&self, r: usize) -> &[f64] {
        let o = self.relation_im_offset(r);
        &self.params[o..o + self.k]
    }

    /// Mutable (real, imaginary) rows of one entity.
    pub fn entity_mut(&mut self, e: usize) -> (&mut [f64], &mut [f64]) {
        let (k, re, im) = (self.k, self.entity_re_offset(e), self.entity_im_offset(e));
        let (head, tail) = self.params.split_at_mut(im);
        (&mut head[re..re + k], &mut tail[..k])
    }

    /// Mutable (real, imaginary) rows of one relation.
    pub fn relation_mut(&mut self, r: usize) -> (&mut [f64], &mut [f64]) {
        let (k, re, im) = (self.k, self.relation_re_offset(r), self.relation_im_offset(r));
        let (head, tail) = self.params.split_at_mut(im);
        (&mut head[re..re + k], &mut tail[..k])
    }

    pub fn check(&self, t: IndexedTriple) -> Result<(), KgeError> {
        let (s, r, o) = (t.subject as usize, t.relation as usize, t.object as usize);
        if s >= self.n_entities || o >= self.n_entities || r >= self.n_relations {
            return Err(KgeError::IndexOutOfRange { triple: t, n_entities: self.n_entities, n_relations: self.n_relations });
        }
        Ok(())
    }

    #[inline]
    pub(crate) fn score_unchecked(&self, t: IndexedTriple) -> f64 {
        let (s, r, o) = (t.subject as usize, t.relation as usize, t.object as usize);
        trilinear(
            self.entity_re(s),
            self.entity_im(s),
            self.relation_re(r),
            self.relation_im(r),
            self.entity_re(o),
            self.entity_im(o),
        )
    }

    /// ComplEx score `Re(<e_s, w_r, conj(e_o)>)`.
    pub fn score_triple(&self, t: IndexedTriple) -> Result<f64, KgeError> {
        self.check(t)?;
        Ok(self.score_unchecked(t))
    }

    /// Partial derivatives of the score with respect to every real and
    /// imaginary component of the subject, relation and object rows.
    pub fn score_gradient(&self, t: IndexedTriple) -> Result<ScoreGradient, KgeError> {
        self.check(t)?;
        let (s, r, o) = (t.subject as usize, t.relation as usize, t.object as usize);
        let (a_re, a_im) = (self.entity_re(s), self.entity_im(s));
        let (w_re, w_im) = (self.relation_re(r), self.relation_im(r));
        let (b_re, b_im) = (self.entity_re(o), self.entity_im(o));
        let k = self.k;
        let mut g = ScoreGradient {
            subject_re: vec![0.0; k],
            subject_im: vec![0.0; k],
            relation_re: vec![0.0; k],
            relation_im: vec![0.0; k],
            object_re: vec![0.0; k],
            object_im: vec![0.0; k],
        };
        for j in 0..k {
            g.subject_re[j] = w_re[j] * b_re[j] + w_im[j] * b_im[j];
            g.subject_im[j] = w_re[j] * b_im[j] - w_im[j] * b_re[j];
            g.relation_re[j] = a_re[j] * b_re[j] + a_im[j] * b_im[j];
            g.relation_im[j] = a_re[j] * b_im[j] - a_im[j] * b_re[j];
            g.object_re[j] = w_re[j] * a_re[j] - w_im[j] * a_im[j];
            g.object_im[j] = w_re[j] * a_im[j] + w_im[j] * a_re[j];
        }
        Ok(g)
    }

    /// Adds `scale * d score / d params` into a flat gradient buffer laid out
    /// like [`ComplexModel::params`]. A self-loop receives both slot terms.
    pub(crate) fn accumulate_score_gradient(&self, grads: &mut [f64], t: IndexedTriple, scale: f64) {
        let (s, r, o) = (t.subject as usize, t.relation as usize, t.object as usize);
        let k = self.k;
        let (sr, si) = (self.entity_re_offset(s), self.entity_im_offset(s));
        let (rr, ri) = (self.relation_re_offset(r), self.relation_im_offset(r));
        let (or, oi) = (self.entity_re_offset(o), self.entity_im_offset(o));
        let p = &self.params;
        for j in 0..k {
            let (a_re, a_im) = (p[sr + j], p[si + j]);
            let (w_re, w_im) = (p[rr + j], p[ri + j]);
            let (b_re, b_im) = (p[or + j], p[oi + j]);
            grads[sr + j] += scale * (w_re * b_re + w_im * b_im);
            grads[si + j] += scale * (w_re * b_im - w_im * b_re);
            grads[rr + j] += scale * (a_re * b_re + a_im * b_im);
            grads[ri + j] += scale * (a_re * b_im - a_im * b_re);
            grads[or + j] += scale * (w_re * a_re - w_im * a_im);
            grads[oi + j] += scale * (w_re * a_im + w_im * a_re);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|v| v.is_finite()) && self.calibration.a.is_finite() && self.calibration.b.is_finite()
    }

    /// `sigmoid(a * score + b)` clamped to `[1e-6, 1 - 1e-6]`.
    pub fn triple_probability(&self, t: IndexedTriple) -> Result<f64, KgeError> {
        let score = self.score_triple(t)?;
        Ok(calibrated_probability(score, self.calibration))
    }
}

pub const PROBABILITY_FLOOR: f64 = 1e-6;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn calibrated_probability(score: f64, calibration: Calibration) -> f64 {
    sigmoid(calibration.a * score + calibration.b).clamp(PROBABILITY_FLOOR, 1.0 - PROBABILITY_FLOOR)
}

/// Uniform initialization in `[-sqrt(6 / 2k), sqrt(6 / 2k)]`, calibration
/// `(1, 0)`. Deterministic under `seed`.
pub fn init_embeddings(kg: &KnowledgeGraph, k: usize, seed: u64) -> Result<ComplexModel, KgeError> {
    init_with_shape(kg.entities().len(), kg.relations().len(), k, seed)
}

pub fn init_with_shape(n_entities: usize, n_relations: usize, k: usize, seed: u64) -> Result<ComplexModel, KgeError> {
    if n_entities == 0 {
        return Err(KgeError::EmptyGraph);
    }
    if k == 0 {
        return Err(KgeError::InvalidConfig("embedding dimension k must be at least 1".into()));
    }
    let bound = init_bound(k);
    let dist = Uniform::new_inclusive(-bound, bound);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = ComplexModel::zeros(n_entities, n_relations, k);
    for p in model.params.iter_mut() {
        *p = dist.sample(&mut rng);
    }
    Ok(model)
}

pub fn init_bound(k: usize) -> f64 {
    (6.0 / (2.0 * k as f64)).sqrt()
}
