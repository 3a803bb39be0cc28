//! Checkpoint directory: `manifest.json` plus `params.bin`, a little-endian
//! `f32` blob holding every parameter tensor back to back.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BackboneConfig, Model, Paradigm};
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::schedules::ScheduleParams;
use crate::tensor::TensorBuf;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "params.bin";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub steps: usize,
    pub final_loss: Option<f64>,
    pub seed: u64,
    /// Present for diffusion checkpoints.
    pub schedule: Option<ScheduleParams>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub bytes: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    config: BackboneConfig,
    paradigm: Paradigm,
    train_meta: TrainMeta,
    blob_bytes: usize,
    entries: Vec<ManifestEntry>,
}

/// A loaded checkpoint. Parameters have already passed the integrity checks.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: BackboneConfig,
    pub paradigm: Paradigm,
    pub train_meta: TrainMeta,
    pub manifest: Vec<ManifestEntry>,
    pub params: ParamStore<f32>,
}

impl Checkpoint {
    pub fn model(&self) -> Result<Model<f32>> {
        let mut m = Model::build(&self.config)?;
        m.set_params(self.params.clone())?;
        Ok(m)
    }
}

fn manifest_for(params: &ParamStore<f32>) -> Vec<ManifestEntry> {
    let mut offset = 0;
    params
        .iter()
        .map(|(name, t)| {
            let bytes = 4 * t.len();
            let e = ManifestEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                offset,
                bytes,
            };
            offset += bytes;
            e
        })
        .collect()
}

pub fn save(model: &Model<f32>, paradigm: Paradigm, meta: &TrainMeta, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let entries = manifest_for(model.params());
    let mut blob = Vec::with_capacity(4 * model.param_count());
    for t in model.params().tensors() {
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        config: model.config().clone(),
        paradigm,
        train_meta: meta.clone(),
        blob_bytes: blob.len(),
        entries,
    };
    let blob_path = dir.join(BLOB_FILE);
    fs::write(&blob_path, &blob).map_err(|e| Error::io(&blob_path, e))?;
    let man_path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&man_path, text + "\n").map_err(|e| Error::io(&man_path, e))?;
    Ok(())
}

fn integrity(entry: &str, reason: impl Into<String>) -> Error {
    Error::Integrity {
        entry: entry.to_string(),
        reason: reason.into(),
    }
}

/// Spans must have consistent sizes, sit inside the blob, not overlap and
/// leave no gap.
pub fn check_spans(entries: &[ManifestEntry], blob_len: usize) -> Result<()> {
    let mut order: Vec<&ManifestEntry> = entries.iter().collect();
    order.sort_by_key(|e| e.offset);
    let mut cursor = 0;
    for e in order {
        let numel: usize = e.shape.iter().product();
        if e.bytes != 4 * numel {
            return Err(integrity(&e.name, format!("{} bytes for shape {:?}", e.bytes, e.shape)));
        }
        let end = e.offset.checked_add(e.bytes).ok_or_else(|| integrity(&e.name, "span overflows"))?;
        if end > blob_len {
            return Err(integrity(
                &e.name,
                format!("span {}..{end} exceeds blob of {blob_len} bytes", e.offset),
            ));
        }
        if e.offset < cursor {
            return Err(integrity(&e.name, format!("span starting at {} overlaps the previous entry", e.offset)));
        }
        if e.offset > cursor {
            return Err(integrity(&e.name, format!("gap of {} bytes before entry", e.offset - cursor)));
        }
        cursor = end;
    }
    if cursor != blob_len {
        return Err(integrity(BLOB_FILE, format!("{} trailing bytes not covered by the manifest", blob_len - cursor)));
    }
    Ok(())
}

pub fn load(dir: impl AsRef<Path>) -> Result<Checkpoint> {
    let dir = dir.as_ref();
    let man_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&man_path).map_err(|e| Error::io(&man_path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| integrity(MANIFEST_FILE, e.to_string()))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(integrity(
            MANIFEST_FILE,
            format!("unsupported format version {}", manifest.format_version),
        ));
    }
    let blob_path = dir.join(BLOB_FILE);
    let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    if blob.len() != manifest.blob_bytes {
        let first_cut = manifest
            .entries
            .iter()
            .find(|e| e.offset + e.bytes > blob.len())
            .map_or(BLOB_FILE, |e| e.name.as_str());
        return Err(integrity(
            first_cut,
            format!("blob has {} bytes, manifest expects {}", blob.len(), manifest.blob_bytes),
        ));
    }
    check_spans(&manifest.entries, blob.len())?;

    // The entries must describe exactly the layout this config builds.
    let reference = Model::<f32>::build(&manifest.config)?;
    if reference.params().len() != manifest.entries.len() {
        return Err(integrity(
            MANIFEST_FILE,
            format!(
                "{} entries, architecture has {} tensors",
                manifest.entries.len(),
                reference.params().len()
            ),
        ));
    }
    let mut params = ParamStore::new();
    for (e, (name, t)) in manifest.entries.iter().zip(reference.params().iter()) {
        if e.name != name || e.shape != t.shape() {
            return Err(integrity(&e.name, format!("expected `{name}` with shape {:?}", t.shape())));
        }
        let data = blob[e.offset..e.offset + e.bytes]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        params.push(e.name.clone(), TensorBuf::new(e.shape.clone(), data)?);
    }
    Ok(Checkpoint {
        config: manifest.config,
        paradigm: manifest.paradigm,
        train_meta: manifest.train_meta,
        manifest: manifest.entries,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::normal_per_item;

    fn meta() -> TrainMeta {
        TrainMeta {
            steps: 3,
            final_loss: Some(0.5),
            seed: 1,
            schedule: None,
        }
    }

    fn perturbed_toy() -> Model<f32> {
        let mut m = Model::<f32>::build(&BackboneConfig::toy_mlp()).unwrap();
        for id in 0..m.params().len() {
            let shape = m.params().tensor(id).shape().to_vec();
            let noise = normal_per_item::<f32>(7, id as u64, &shape);
            let t = m.params_mut().tensor_mut(id);
            *t = t.add(&noise.scale(0.01)).unwrap();
        }
        m
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let m = perturbed_toy();
        save(&m, Paradigm::Flow, &meta(), dir.path()).unwrap();
        let ck = load(dir.path()).unwrap();
        assert_eq!(ck.paradigm, Paradigm::Flow);
        assert_eq!(ck.train_meta, meta());
        let back = ck.model().unwrap();
        let bits = |m: &Model<f32>| m.params().flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&m), bits(&back));
        let x = normal_per_item::<f32>(3, 0, &[6, 2]);
        let (a, b) = (m.forward(&x, &[0.4]).unwrap(), back.forward(&x, &[0.4]).unwrap());
        assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn blob_size_is_four_bytes_per_parameter() {
        let dir = tempfile::tempdir().unwrap();
        let m = perturbed_toy();
        save(&m, Paradigm::Diffusion, &meta(), dir.path()).unwrap();
        let len = fs::metadata(dir.path().join(BLOB_FILE)).unwrap().len() as usize;
        assert_eq!(len, 4 * BackboneConfig::toy_mlp().param_count().unwrap());
    }

    #[test]
    fn truncated_blob_is_an_integrity_error() {
        let dir = tempfile::tempdir().unwrap();
        save(&perturbed_toy(), Paradigm::Flow, &meta(), dir.path()).unwrap();
        let p = dir.path().join(BLOB_FILE);
        let blob = fs::read(&p).unwrap();
        fs::write(&p, &blob[..blob.len() - 10]).unwrap();
        match load(dir.path()) {
            Err(Error::Integrity { entry, .. }) => assert_eq!(entry, "output.weight"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn overlapping_spans_name_the_entry() {
        let mut entries = vec![
            ManifestEntry {
                name: "a".into(),
                shape: vec![2],
                offset: 0,
                bytes: 8,
            },
            ManifestEntry {
                name: "b".into(),
                shape: vec![2],
                offset: 4,
                bytes: 8,
            },
        ];
        match check_spans(&entries, 12) {
            Err(Error::Integrity { entry, .. }) => assert_eq!(entry, "b"),
            other => panic!("{other:?}"),
        }
        entries[1].offset = 8;
        check_spans(&entries, 16).unwrap();
        assert!(check_spans(&entries, 20).is_err());
        entries[0].bytes = 12;
        assert!(matches!(check_spans(&entries, 16), Err(Error::Integrity { entry, .. }) if entry == "a"));
    }
}
