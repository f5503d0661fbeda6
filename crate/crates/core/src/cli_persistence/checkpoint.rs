//! Versioned array container used for checkpoints and sample files.
//!
//! Layout: the 8-byte magic `DMVAECKP`, a little-endian `u32` format
//! version, a little-endian `u64` manifest length, the JSON manifest, then
//! one payload of little-endian `f32` values for all arrays back to back.
//! The manifest records every array's name, shape and offset, and the
//! SHA-256 of the payload.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use diffmvae_nn::{Adam, ParamStore};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::noise_schedule::ScheduleParams;

pub const MAGIC: &[u8; 8] = b"DMVAECKP";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 8;

/// One stored array with its shape.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedArray {
    /// Stores `a` rounded to `f32`, with an explicit shape.
    pub fn from_array(name: impl Into<String>, a: &Array2<f64>, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != a.len() {
            return Err(Error::InvalidInput(format!("shape {shape:?} does not hold {} values", a.len())));
        }
        Ok(Self { name: name.into(), shape, data: a.iter().map(|&v| v as f32).collect() })
    }

    pub fn from_matrix(name: impl Into<String>, a: &Array2<f64>) -> Self {
        Self { name: name.into(), shape: vec![a.nrows(), a.ncols()], data: a.iter().map(|&v| v as f32).collect() }
    }

    /// The values as a `rows x cols` matrix, where `cols` is the product of
    /// all but the first dimension (or the only dimension as one row).
    pub fn to_matrix(&self) -> Array2<f64> {
        let (rows, cols) = match self.shape.as_slice() {
            [] => (1, 1),
            [n] => (1, *n),
            [r, rest @ ..] => (*r, rest.iter().product()),
        };
        Array2::from_shape_vec((rows, cols), self.data.iter().map(|&v| v as f64).collect())
            .expect("shape validated on load")
    }
}

/// Serialized ChaCha8 position: seed, stream and word position.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    /// Decimal string, because JSON numbers cannot hold a `u128`.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self { seed: hex::encode(rng.get_seed()), stream: rng.get_stream(), word_pos: rng.get_word_pos().to_string() }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let bytes = hex::decode(&self.seed).map_err(|e| Error::Integrity(format!("rng seed: {e}")))?;
        let seed: [u8; 32] =
            bytes.try_into().map_err(|_| Error::Integrity("rng seed must be 32 bytes".into()))?;
        let pos: u128 = self.word_pos.parse().map_err(|e| Error::Integrity(format!("rng position: {e}")))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset into the payload, in values.
    offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    config_hash: String,
    step: u64,
    schedule: Option<ScheduleParams>,
    rng: Option<RngState>,
    metadata: BTreeMap<String, serde_json::Value>,
    arrays: Vec<ArrayEntry>,
    payload_values: usize,
    payload_sha256: String,
}

/// Everything stored in one container file.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_hash: String,
    pub step: u64,
    pub schedule: Option<ScheduleParams>,
    pub rng: Option<RngState>,
    /// Free-form JSON values, e.g. the resolved config and modality specs.
    pub metadata: BTreeMap<String, serde_json::Value>,
    pub arrays: Vec<NamedArray>,
}

impl Checkpoint {
    pub fn new(config_hash: impl Into<String>) -> Self {
        Self {
            config_hash: config_hash.into(),
            step: 0,
            schedule: None,
            rng: None,
            metadata: BTreeMap::new(),
            arrays: Vec::new(),
        }
    }

    pub fn array(&self, name: &str) -> Option<&NamedArray> {
        self.arrays.iter().find(|a| a.name == name)
    }

    /// Adds every parameter of `store` under its own name.
    pub fn push_params(&mut self, prefix: &str, store: &ParamStore) {
        for (_, name, a) in store.iter() {
            self.arrays.push(NamedArray::from_matrix(format!("{prefix}{name}"), a));
        }
    }

    /// Overwrites every parameter of `store` with the stored array of the
    /// same (prefixed) name. Every parameter must be present with its shape.
    pub fn load_params(&self, prefix: &str, store: &mut ParamStore) -> Result<()> {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let key = format!("{prefix}{}", store.name(id));
            let stored = self.array(&key).ok_or_else(|| Error::Integrity(format!("checkpoint lacks parameter '{key}'")))?;
            let target = store.get_mut(id);
            if stored.shape != [target.nrows(), target.ncols()] {
                return Err(Error::Integrity(format!(
                    "parameter '{key}' has shape {:?}, model expects {:?}",
                    stored.shape,
                    target.dim()
                )));
            }
            target.assign(&stored.to_matrix());
        }
        Ok(())
    }

    /// Adds Adam's moment estimates as `adam.m.<name>` / `adam.v.<name>` and
    /// its step count as metadata.
    pub fn push_optimizer(&mut self, adam: &Adam, store: &ParamStore) {
        let (m, v) = adam.moments();
        for ((_, name, _), (m, v)) in store.iter().zip(m.iter().zip(v)) {
            self.arrays.push(NamedArray::from_matrix(format!("adam.m.{name}"), m));
            self.arrays.push(NamedArray::from_matrix(format!("adam.v.{name}"), v));
        }
        self.metadata.insert("adam_steps".into(), adam.steps_taken().into());
        self.metadata.insert("adam_lr".into(), adam.lr.into());
    }

    /// Rebuilds the optimizer saved by [`Checkpoint::push_optimizer`].
    pub fn load_optimizer(&self, store: &ParamStore) -> Result<Adam> {
        let lr = self.metadata.get("adam_lr").and_then(|v| v.as_f64()).ok_or_else(|| Error::Integrity("missing adam_lr".into()))?;
        let steps =
            self.metadata.get("adam_steps").and_then(|v| v.as_u64()).ok_or_else(|| Error::Integrity("missing adam_steps".into()))?;
        let mut m = Vec::new();
        let mut v = Vec::new();
        for (_, name, _) in store.iter() {
            let get = |k: String| {
                self.array(&k).map(NamedArray::to_matrix).ok_or_else(|| Error::Integrity(format!("checkpoint lacks '{k}'")))
            };
            m.push(get(format!("adam.m.{name}"))?);
            v.push(get(format!("adam.v.{name}"))?);
        }
        let mut adam = Adam::new(store, lr).with_clip_norm(crate::multimodal_model::Trainer::DEFAULT_CLIP_NORM);
        adam.restore(steps, m, v).map_err(Error::Integrity)?;
        Ok(adam)
    }

    /// Serializes to bytes.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::with_capacity(self.arrays.len());
        let mut payload = Vec::new();
        let mut offset = 0;
        for a in &self.arrays {
            if a.shape.iter().product::<usize>() != a.data.len() {
                return Err(Error::InvalidInput(format!("array '{}' does not match its shape", a.name)));
            }
            if self.arrays.iter().filter(|b| b.name == a.name).count() > 1 {
                return Err(Error::InvalidInput(format!("duplicate array name '{}'", a.name)));
            }
            entries.push(ArrayEntry { name: a.name.clone(), shape: a.shape.clone(), offset });
            offset += a.data.len();
            for v in &a.data {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            config_hash: self.config_hash.clone(),
            step: self.step,
            schedule: self.schedule,
            rng: self.rng.clone(),
            metadata: self.metadata.clone(),
            arrays: entries,
            payload_values: offset,
            payload_sha256: hex::encode(Sha256::digest(&payload)),
        };
        let json = serde_json::to_vec(&manifest).map_err(|e| Error::InvalidInput(format!("manifest: {e}")))?;
        let mut out = Vec::with_capacity(HEADER_LEN + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    /// Parses bytes written by [`Checkpoint::to_bytes`], validating the
    /// version, the manifest and the payload checksum.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
            return Err(Error::Integrity("not a checkpoint file (bad magic or truncated header)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version > FORMAT_VERSION {
            return Err(Error::Version { found: version, supported: FORMAT_VERSION });
        }
        let manifest_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
        let manifest_end = usize::try_from(manifest_len)
            .ok()
            .and_then(|n| HEADER_LEN.checked_add(n))
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| Error::Integrity("manifest extends past the end of the file".into()))?;
        let manifest: Manifest = serde_json::from_slice(&bytes[HEADER_LEN..manifest_end])
            .map_err(|e| Error::Integrity(format!("manifest: {e}")))?;
        if manifest.format_version != version {
            return Err(Error::Integrity("header and manifest disagree on the format version".into()));
        }
        let payload = &bytes[manifest_end..];
        if payload.len() != manifest.payload_values * 4 {
            return Err(Error::Integrity(format!(
                "payload holds {} bytes, manifest declares {} values",
                payload.len(),
                manifest.payload_values
            )));
        }
        if hex::encode(Sha256::digest(payload)) != manifest.payload_sha256 {
            return Err(Error::Integrity("payload checksum mismatch".into()));
        }
        let values: Vec<f32> =
            payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        let mut arrays = Vec::with_capacity(manifest.arrays.len());
        let mut expected_offset = 0;
        for e in manifest.arrays {
            let len: usize = e.shape.iter().product();
            if e.offset != expected_offset || e.offset + len > values.len() {
                return Err(Error::Integrity(format!("array '{}' lies outside the payload", e.name)));
            }
            arrays.push(NamedArray { name: e.name, shape: e.shape, data: values[e.offset..e.offset + len].to_vec() });
            expected_offset += len;
        }
        if expected_offset != values.len() {
            return Err(Error::Integrity("payload has values not claimed by any array".into()));
        }
        Ok(Self {
            config_hash: manifest.config_hash,
            step: manifest.step,
            schedule: manifest.schedule,
            rng: manifest.rng,
            metadata: manifest.metadata,
            arrays,
        })
    }
}

/// Writes `ckpt` to `path` through a temporary file, so readers never see a
/// partial file.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let bytes = ckpt.to_bytes()?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads a container. With `expected_hash` set, a different stored config
/// hash is rejected unless `force` is true.
pub fn load_checkpoint(path: &Path, expected_hash: Option<&str>, force: bool) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    let ckpt = Checkpoint::from_bytes(&bytes)?;
    if let Some(current) = expected_hash {
        if ckpt.config_hash != current && !force {
            return Err(Error::ConfigMismatch { stored: ckpt.config_hash.clone(), current: current.to_string() });
        }
    }
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, RngCore};

    fn sample() -> Checkpoint {
        let mut c = Checkpoint::new("abc123");
        c.step = 42;
        c.schedule = Some(ScheduleParams::default_discrete());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        rng.next_u64();
        c.rng = Some(RngState::capture(&rng));
        c.metadata.insert("note".into(), "x".into());
        c.arrays.push(NamedArray { name: "a".into(), shape: vec![2, 3], data: vec![1.0, -2.5, 3.25, f32::MIN_POSITIVE, 0.0, -0.0] });
        c.arrays.push(NamedArray { name: "b".into(), shape: vec![4], data: vec![7.0; 4] });
        c
    }

    #[test]
    fn round_trip_is_bitwise() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        for (a, b) in back.arrays.iter().zip(&c.arrays) {
            assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn rng_state_resumes_the_stream() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        rng.set_stream(4);
        for _ in 0..37 {
            rng.next_u32();
        }
        let mut restored = RngState::capture(&rng).restore().unwrap();
        let a: Vec<u64> = (0..10).map(|_| rng.random()).collect();
        let b: Vec<u64> = (0..10).map(|_| restored.random()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn truncation_and_corruption_are_integrity_errors() {
        let bytes = sample().to_bytes().unwrap();
        for cut in [0, 5, HEADER_LEN, HEADER_LEN + 10, bytes.len() - 1] {
            assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::Integrity(_))), "cut at {cut}");
        }
        let mut flipped = bytes.clone();
        *flipped.last_mut().unwrap() ^= 1;
        assert!(matches!(Checkpoint::from_bytes(&flipped), Err(Error::Integrity(_))));
    }

    #[test]
    fn newer_versions_are_rejected() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[8..12].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Version { found: 2, supported: 1 })));
    }

    #[test]
    fn config_mismatch_needs_force() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        save_checkpoint(&path, &sample()).unwrap();
        assert!(load_checkpoint(&path, Some("abc123"), false).is_ok());
        assert!(matches!(load_checkpoint(&path, Some("other"), false), Err(Error::ConfigMismatch { .. })));
        assert!(load_checkpoint(&path, Some("other"), true).is_ok());
        assert!(!path.with_extension("tmp").exists());
    }

    #[test]
    fn params_and_optimizer_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        store.add("w", Array2::from_shape_fn((3, 2), |_| rng.random_range(-1.0..1.0)));
        store.add("b", Array2::from_shape_fn((1, 2), |_| rng.random_range(-1.0..1.0)));
        let mut adam = Adam::new(&store, 0.01);
        let mut grads = diffmvae_nn::ParamGrads::zeros_like(&store);
        for id in store.ids().collect::<Vec<_>>() {
            grads.set(id, store.get(id).mapv(|v| v * 0.3));
        }
        adam.step(&mut store, &grads);

        let mut c = Checkpoint::new("h");
        c.push_params("", &store);
        c.push_optimizer(&adam, &store);
        let back = Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap();
        let mut other = store.clone();
        for id in other.ids().collect::<Vec<_>>() {
            other.get_mut(id).fill(0.0);
        }
        back.load_params("", &mut other).unwrap();
        for ((_, _, a), (_, _, b)) in store.iter().zip(other.iter()) {
            assert!(a.iter().zip(b).all(|(x, y)| (*x as f32) as f64 == *y));
        }
        let restored = back.load_optimizer(&other).unwrap();
        assert_eq!(restored.steps_taken(), 1);
        assert_eq!(restored.lr, 0.01);

        let mut wrong = ParamStore::new();
        wrong.add("w", Array2::zeros((2, 2)));
        assert!(matches!(back.load_params("", &mut wrong), Err(Error::Integrity(_))));
    }

    proptest! {
        #[test]
        fn arbitrary_arrays_round_trip(values in proptest::collection::vec(any::<f32>(), 0..64), rows in 1usize..4) {
            let cols = values.len() / rows;
            let data = values[..rows * cols].to_vec();
            let mut c = Checkpoint::new("p");
            c.arrays.push(NamedArray { name: "x".into(), shape: vec![rows, cols], data: data.clone() });
            let back = Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap();
            let got = &back.arrays[0].data;
            prop_assert!(got.iter().zip(&data).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
