//! Binary model checkpoints with a text vocabulary sidecar.
//!
//! Layout (little-endian): magic `OCKG`, `u32` version, `u64` k, `u64` entity
//! count, `u64` relation count, `f64` calibration a and b, then the parameter
//! tables as `f64`: entity real, entity imaginary, relation real, relation
//! imaginary, each row-major.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{Calibration, ComplexModel, KgeError, TrainedModel};
use crate::kg::Vocab;

pub const MAGIC: &[u8; 4] = b"OCKG";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 * 3 + 8 * 2;

pub fn encode(model: &ComplexModel) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * model.params().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for n in [model.k(), model.n_entities(), model.n_relations()] {
        out.extend_from_slice(&(n as u64).to_le_bytes());
    }
    out.extend_from_slice(&model.calibration.a.to_le_bytes());
    out.extend_from_slice(&model.calibration.b.to_le_bytes());
    for p in model.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<ComplexModel, KgeError> {
    let fail = |m: String| KgeError::Format(m);
    if bytes.len() < HEADER_LEN {
        return Err(fail(format!("file is {} bytes, shorter than the header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(fail("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(fail(format!("unsupported version {version}")));
    }
    let u = |i: usize| u64::from_le_bytes(bytes[8 + 8 * i..16 + 8 * i].try_into().unwrap());
    let f = |off: usize| f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
    let (k, ne, nr) = (u(0), u(1), u(2));
    let calibration = Calibration { a: f(32), b: f(40) };
    let n_params = k
        .checked_mul(ne.checked_add(nr).ok_or_else(|| fail("size overflow".into()))?)
        .and_then(|x| x.checked_mul(2))
        .ok_or_else(|| fail("size overflow".into()))?;
    let body = &bytes[HEADER_LEN..];
    if body.len() as u64 != n_params.saturating_mul(8) {
        return Err(fail(format!("expected {n_params} parameters, found {} bytes", body.len())));
    }
    let params = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let model = ComplexModel::from_params(ne as usize, nr as usize, k as usize, params, calibration)?;
    if !model.is_finite() {
        return Err(fail("non-finite parameter".into()));
    }
    Ok(model)
}

/// Sidecar path next to a checkpoint: `<path>.vocab.tsv`.
pub fn vocab_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".vocab.tsv");
    PathBuf::from(s)
}

/// `entity<TAB>index<TAB>id` and `relation<TAB>index<TAB>id` lines.
pub fn encode_vocab(entities: &Vocab, relations: &Vocab) -> String {
    let mut out = String::new();
    for (kind, vocab) in [("entity", entities), ("relation", relations)] {
        for (i, name) in vocab.names().iter().enumerate() {
            out.push_str(&format!("{kind}\t{i}\t{name}\n"));
        }
    }
    out
}

pub fn decode_vocab(text: &str) -> Result<(Vocab, Vocab), KgeError> {
    let mut entities = Vec::new();
    let mut relations = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.splitn(3, '\t').collect();
        let [kind, idx, name] = fields.as_slice() else {
            return Err(KgeError::Format(format!("vocab line {}: expected 3 fields", n + 1)));
        };
        let target = match *kind {
            "entity" => &mut entities,
            "relation" => &mut relations,
            other => return Err(KgeError::Format(format!("vocab line {}: unknown kind {other:?}", n + 1))),
        };
        if idx.parse::<usize>().ok() != Some(target.len()) {
            return Err(KgeError::Format(format!("vocab line {}: index {idx} out of sequence", n + 1)));
        }
        target.push(name.to_string());
    }
    Ok((Vocab::from_sorted(entities), Vocab::from_sorted(relations)))
}

pub fn save(trained: &TrainedModel, path: &Path) -> Result<(), KgeError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(&encode(&trained.model))?;
    w.flush()?;
    fs::write(vocab_path(path), encode_vocab(&trained.entities, &trained.relations))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<TrainedModel, KgeError> {
    let model = decode(&fs::read(path)?)?;
    let (entities, relations) = decode_vocab(&fs::read_to_string(vocab_path(path))?)?;
    if entities.len() != model.n_entities() || relations.len() != model.n_relations() {
        return Err(KgeError::Format(format!(
            "vocabulary has {}/{} entries, model expects {}/{}",
            entities.len(),
            relations.len(),
            model.n_entities(),
            model.n_relations()
        )));
    }
    Ok(TrainedModel { model, entities, relations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kge::init_with_shape;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut m = init_with_shape(7, 3, 5, 42).unwrap();
        m.calibration = Calibration { a: 0.731, b: -1.25e-3 };
        let back = decode(&encode(&m)).unwrap();
        assert_eq!(back, m);
        assert_eq!(encode(&back), encode(&m));
    }

    #[test]
    fn header_layout() {
        let m = ComplexModel::zeros(2, 1, 3);
        let bytes = encode(&m);
        assert_eq!(&bytes[..4], b"OCKG");
        assert_eq!(bytes.len(), HEADER_LEN + 8 * 2 * 3 * 3);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 3);
        assert_eq!(f64::from_le_bytes(bytes[32..40].try_into().unwrap()), 1.0);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = encode(&ComplexModel::zeros(2, 1, 3));
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut bad = bytes;
        bad[4] = 9;
        assert!(decode(&bad).is_err());
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ockg");
        let trained = TrainedModel {
            model: init_with_shape(2, 1, 4, 1).unwrap(),
            entities: Vocab::from_sorted(vec!["a".into(), "b c".into()]),
            relations: Vocab::from_sorted(vec!["r".into()]),
        };
        save(&trained, &path).unwrap();
        assert!(vocab_path(&path).exists());
        assert_eq!(load(&path).unwrap(), trained);
    }
}
