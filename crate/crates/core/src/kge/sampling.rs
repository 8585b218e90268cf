use rand::Rng;

use super::KgeError;
use crate::kg::IndexedTriple;

/// Draws before giving up on finding a non-original entity by rejection.
pub const MAX_CORRUPTION_RETRIES: usize = 32;

/// `eta` negatives for `triple`, each replacing the subject or the object
/// (fair coin) with a uniformly drawn different entity.
pub fn sample_corruptions<R: Rng + ?Sized>(
    triple: IndexedTriple,
    n_entities: usize,
    eta: usize,
    rng: &mut R,
) -> Result<Vec<IndexedTriple>, KgeError> {
    let mut out = Vec::with_capacity(eta);
    sample_into(triple, n_entities, eta, rng, &mut out)?;
    Ok(out)
}

pub(crate) fn sample_into<R: Rng + ?Sized>(
    triple: IndexedTriple,
    n_entities: usize,
    eta: usize,
    rng: &mut R,
    out: &mut Vec<IndexedTriple>,
) -> Result<(), KgeError> {
    if n_entities < 2 {
        return Err(KgeError::TooFewEntities(n_entities));
    }
    let n = n_entities as u32;
    out.clear();
    for _ in 0..eta {
        let corrupt_subject = rng.gen_bool(0.5);
        let original = if corrupt_subject { triple.subject } else { triple.object };
        let mut replacement = original;
        for _ in 0..MAX_CORRUPTION_RETRIES {
            replacement = rng.gen_range(0..n);
            if replacement != original {
                break;
            }
        }
        if replacement == original {
            replacement = (original + 1) % n;
        }
        let mut neg = triple;
        if corrupt_subject {
            neg.subject = replacement;
        } else {
            neg.object = replacement;
        }
        out.push(neg);
    }
    Ok(())
}
