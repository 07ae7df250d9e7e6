//! WPNN weight files: magic `WPNN`, version u16, u32-prefixed JSON
//! [`ModelSpec`], then each parameterized layer's weights and bias as
//! little-endian `f32` in declaration order.

use std::fs;
use std::path::Path;

use super::model::{Model, ModelSpec, Params};
use super::{CnnError, Tensor};

pub const MAGIC: &[u8; 4] = b"WPNN";
pub const VERSION: u16 = 1;

pub fn weights_to_bytes(model: &Model<f32>) -> Result<Vec<u8>, CnnError> {
    let header = serde_json::to_vec(model.spec())?;
    let mut out = Vec::with_capacity(10 + header.len() + model.total_params() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for p in model.params().iter().flatten() {
        for v in p.weights.data().iter().chain(p.bias.data()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CnnError> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(CnnError::Truncated {
                needed: end,
                have: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f32>, CnnError> {
        Ok(self
            .take(n * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

pub fn weights_from_bytes(bytes: &[u8]) -> Result<Model<f32>, CnnError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(CnnError::BadMagic);
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes"));
    if version != VERSION {
        return Err(CnnError::UnsupportedVersion(version));
    }
    let len = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes")) as usize;
    let spec: ModelSpec = serde_json::from_slice(r.take(len)?)?;
    let template = Model::<f32>::new(spec.clone(), 0)?;
    let mut params = Vec::with_capacity(template.params().len());
    for p in template.params() {
        params.push(match p {
            None => None,
            Some(p) => {
                let w = r.floats(p.weights.len())?;
                let b = r.floats(p.bias.len())?;
                Some(Params {
                    weights: Tensor::new(p.weights.shape().to_vec(), w)?,
                    bias: Tensor::new(p.bias.shape().to_vec(), b)?,
                })
            }
        });
    }
    if r.pos != bytes.len() {
        return Err(CnnError::ArchitectureMismatch(format!(
            "{} bytes of parameters beyond the declared layers",
            bytes.len() - r.pos
        )));
    }
    Model::from_parts(spec, params)
}

pub fn save_weights(model: &Model<f32>, path: impl AsRef<Path>) -> Result<(), CnnError> {
    let path = path.as_ref();
    let tmp = path.with_extension("wpnn.tmp");
    fs::write(&tmp, weights_to_bytes(model)?)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<Model<f32>, CnnError> {
    weights_from_bytes(&fs::read(path)?)
}

/// Loads weights and rejects files whose architecture differs from
/// `expected` (dropout rates aside).
pub fn load_weights_for(path: impl AsRef<Path>, expected: &ModelSpec) -> Result<Model<f32>, CnnError> {
    let model = load_weights(path)?;
    if !model.spec().same_topology(expected) {
        return Err(CnnError::ArchitectureMismatch(format!(
            "file has {} layers {:?}, expected {} layers",
            model.spec().layers.len(),
            model.spec().layers.iter().map(|l| l.name()).collect::<Vec<_>>(),
            expected.layers.len()
        )));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnn::{build_reference_model, Activation, LayerSpec};
    use rand::{Rng, SeedableRng};

    #[test]
    fn round_trip_identical_logits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.wpnn");
        let m = build_reference_model(42);
        save_weights(&m, &path).unwrap();
        let back = load_weights_for(&path, &ModelSpec::reference(0.2)).unwrap();
        assert_eq!(back, m);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let x = Tensor::new(vec![600, 7, 1], (0..4200).map(|_| rng.random_range(-3.0..3.0f32)).collect()).unwrap();
            let a = m.forward(&x).unwrap();
            let b = back.forward(&x).unwrap();
            assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn small_model_rejected_for_reference() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("small.wpnn");
        let spec = ModelSpec {
            input_shape: vec![600, 7, 1],
            layers: vec![
                LayerSpec::Flatten,
                LayerSpec::Dense { units: 4, activation: Activation::Relu },
                LayerSpec::Dense { units: 2, activation: Activation::Linear },
            ],
        };
        save_weights(&Model::new(spec, 0).unwrap(), &path).unwrap();
        assert!(load_weights(&path).is_ok());
        assert!(matches!(
            load_weights_for(&path, &ModelSpec::reference(0.2)),
            Err(CnnError::ArchitectureMismatch(_))
        ));
    }

    #[test]
    fn corrupt_files() {
        let bytes = weights_to_bytes(&build_reference_model(1)).unwrap();
        let mut bad = bytes.clone();
        bad[1] = b'X';
        assert!(matches!(weights_from_bytes(&bad), Err(CnnError::BadMagic)));
        let mut bad = bytes.clone();
        bad[4] = 7;
        assert!(matches!(weights_from_bytes(&bad), Err(CnnError::UnsupportedVersion(7))));
        for cut in [3, 8, 40, bytes.len() - 1] {
            assert!(matches!(weights_from_bytes(&bytes[..cut]), Err(CnnError::Truncated { .. })), "{cut}");
        }
        let mut bad = bytes.clone();
        bad.extend_from_slice(&[0; 4]);
        assert!(matches!(weights_from_bytes(&bad), Err(CnnError::ArchitectureMismatch(_))));
    }
}
