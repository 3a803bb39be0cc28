//! MNIST IDX ingestion, analytic 2D toy distributions, and seeded batching.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, purpose};
use crate::tensor::TensorBuf;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Side length every image is padded to.
pub const IMAGE_SIDE: usize = 32;
/// Normalized value of a zero (background) byte.
pub const BACKGROUND: f32 = -1.0;

/// Anything that yields a `[count, ...]` sample tensor.
pub trait Dataset {
    fn samples(&self) -> &TensorBuf<f32>;

    fn count(&self) -> usize {
        self.samples().batch()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageDataset {
    /// `[count, 1, H, W]` with values in `[-1, 1]`.
    pub images: TensorBuf<f32>,
    pub labels: Option<Vec<u8>>,
}

impl Dataset for ImageDataset {
    fn samples(&self) -> &TensorBuf<f32> {
        &self.images
    }
}

impl ImageDataset {
    pub fn side(&self) -> usize {
        self.images.shape()[3]
    }

    /// The first `n` images (and labels).
    pub fn subset(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.count() {
            return Err(Error::config(format!(
                "subset {n} out of range 1..={}",
                self.count()
            )));
        }
        Ok(Self {
            images: self.images.slice_batch(0, n),
            labels: self.labels.as_ref().map(|l| l[..n].to_vec()),
        })
    }
}

pub fn byte_to_unit(v: u8) -> f32 {
    v as f32 / 127.5 - 1.0
}

pub fn unit_to_byte(v: f32) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(Error::LengthMismatch {
            expected: at + 4,
            found: bytes.len(),
        })
}

/// Parses an IDX image file into `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let magic = read_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "bad IDX image magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}"
        )));
    }
    let count = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let expected = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .and_then(|v| v.checked_add(16))
        .ok_or_else(|| Error::Format("IDX dimensions overflow".into()))?;
    if bytes.len() != expected {
        return Err(Error::LengthMismatch {
            expected,
            found: bytes.len(),
        });
    }
    Ok((count, rows, cols, &bytes[16..]))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = read_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "bad IDX label magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}"
        )));
    }
    let count = read_u32(bytes, 4)? as usize;
    if bytes.len() != 8 + count {
        return Err(Error::LengthMismatch {
            expected: 8 + count,
            found: bytes.len(),
        });
    }
    Ok(&bytes[8..])
}

/// Decodes IDX images at their native size, mapping bytes to `[-1, 1]`.
pub fn decode_idx_images(bytes: &[u8]) -> Result<TensorBuf<f32>> {
    let (count, rows, cols, px) = parse_idx_images(bytes)?;
    TensorBuf::new(vec![count, 1, rows, cols], px.iter().map(|&b| byte_to_unit(b)).collect())
}

/// Pads `[n, 1, h, w]` images symmetrically to `side × side` with the
/// background value.
pub fn pad_to(images: &TensorBuf<f32>, side: usize) -> Result<TensorBuf<f32>> {
    let s = images.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    if h > side || w > side {
        return Err(Error::config(format!(
            "image {h}x{w} larger than target {side}x{side}"
        )));
    }
    let (top, left) = ((side - h) / 2, (side - w) / 2);
    let mut out = TensorBuf::full(vec![n, c, side, side], BACKGROUND);
    for i in 0..n * c {
        let src = &images.data()[i * h * w..(i + 1) * h * w];
        let dst = &mut out.data_mut()[i * side * side..(i + 1) * side * side];
        for y in 0..h {
            dst[(y + top) * side + left..(y + top) * side + left + w]
                .copy_from_slice(&src[y * w..(y + 1) * w]);
        }
    }
    Ok(out)
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads IDX images (and optional labels), normalized and padded to 32×32.
pub fn load_mnist_idx(image_path: &Path, label_path: Option<&Path>) -> Result<ImageDataset> {
    let raw = decode_idx_images(&read_file(image_path)?)?;
    let images = pad_to(&raw, IMAGE_SIDE)?;
    let labels = match label_path {
        Some(p) => {
            let bytes = read_file(p)?;
            let labels = parse_idx_labels(&bytes)?.to_vec();
            if labels.len() != images.batch() {
                return Err(Error::Consistency(format!(
                    "{} images but {} labels",
                    images.batch(),
                    labels.len()
                )));
            }
            Some(labels)
        }
        None => None,
    };
    Ok(ImageDataset { images, labels })
}

/// Standard MNIST file names inside a data directory.
pub fn load_mnist_dir(dir: &Path, train: bool) -> Result<ImageDataset> {
    let prefix = if train { "train" } else { "t10k" };
    let images = dir.join(format!("{prefix}-images-idx3-ubyte"));
    let labels = dir.join(format!("{prefix}-labels-idx1-ubyte"));
    let labels = labels.exists().then_some(labels);
    load_mnist_idx(&images, labels.as_deref())
}

/// Serializes images (at their stored size) back to IDX bytes.
pub fn encode_idx_images(images: &TensorBuf<f32>) -> Vec<u8> {
    let s = images.shape();
    let mut out = Vec::with_capacity(16 + images.len());
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    for d in [s[0], s[2], s[3]] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend(images.data().iter().map(|&v| unit_to_byte(v)));
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyGenerator {
    SingleGaussian,
    TwoGaussians,
    GaussianRing,
}

impl ToyGenerator {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "single_gaussian" => Ok(Self::SingleGaussian),
            "two_gaussians" => Ok(Self::TwoGaussians),
            "gaussian_ring" => Ok(Self::GaussianRing),
            other => Err(Error::config(format!(
                "unknown toy generator `{other}` (expected single_gaussian, two_gaussians, gaussian_ring)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::SingleGaussian => "single_gaussian",
            Self::TwoGaussians => "two_gaussians",
            Self::GaussianRing => "gaussian_ring",
        }
    }

    fn defaults(self) -> BTreeMap<String, f64> {
        let pairs: &[(&str, f64)] = match self {
            Self::SingleGaussian => &[("mean_x", 0.0), ("mean_y", 0.0), ("var", 1.0)],
            Self::TwoGaussians => &[("offset", 3.0), ("var", 1.0)],
            Self::GaussianRing => &[("modes", 8.0), ("radius", 4.0), ("var", 0.09)],
        };
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyDataset {
    /// `[count, 2]`
    pub points: TensorBuf<f32>,
    pub generator: ToyGenerator,
    /// Fully resolved parameters, defaults included.
    pub params: BTreeMap<String, f64>,
}

impl Dataset for ToyDataset {
    fn samples(&self) -> &TensorBuf<f32> {
        &self.points
    }
}

/// Samples `count` points from a named 2D distribution; point `i` is drawn from
/// its own stream so any prefix of a larger draw is identical.
///
/// * `single_gaussian`: `mean_x`, `mean_y`, `var`
/// * `two_gaussians`: equal mixture at `(±offset, 0)` with isotropic `var`
/// * `gaussian_ring`: `modes` equal components on a circle of `radius`
pub fn make_toy(
    generator_name: &str,
    count: usize,
    seed: u64,
    params: &BTreeMap<String, f64>,
) -> Result<ToyDataset> {
    let generator = ToyGenerator::parse(generator_name)?;
    if count == 0 {
        return Err(Error::config("toy count must be positive"));
    }
    let mut resolved = generator.defaults();
    for (k, v) in params {
        if !resolved.contains_key(k) {
            return Err(Error::config(format!(
                "unknown parameter `{k}` for toy generator {generator_name}"
            )));
        }
        if !v.is_finite() {
            return Err(Error::config(format!("parameter `{k}` must be finite")));
        }
        resolved.insert(k.clone(), *v);
    }
    let var = resolved["var"];
    if var < 0.0 {
        return Err(Error::config("toy variance must be non-negative"));
    }
    let std = var.sqrt();
    let mut data = Vec::with_capacity(count * 2);
    for i in 0..count {
        let mut r = rng::stream(seed, purpose::TOY + i as u64);
        let (cx, cy) = match generator {
            ToyGenerator::SingleGaussian => (resolved["mean_x"], resolved["mean_y"]),
            ToyGenerator::TwoGaussians => {
                let sign = if rand::Rng::random_bool(&mut r, 0.5) { 1.0 } else { -1.0 };
                (sign * resolved["offset"], 0.0)
            }
            ToyGenerator::GaussianRing => {
                let modes = resolved["modes"].max(1.0) as u32;
                let k = rand::Rng::random_range(&mut r, 0..modes);
                let angle = 2.0 * std::f64::consts::PI * k as f64 / modes as f64;
                (resolved["radius"] * angle.cos(), resolved["radius"] * angle.sin())
            }
        };
        let zx: f64 = rng::normal(&mut r);
        let zy: f64 = rng::normal(&mut r);
        data.push((cx + std * zx) as f32);
        data.push((cy + std * zy) as f32);
    }
    Ok(ToyDataset {
        points: TensorBuf::new(vec![count, 2], data)?,
        generator,
        params: resolved,
    })
}

/// One epoch of shuffled, fixed-size batches; the trailing partial batch is dropped.
pub struct BatchIter<'a> {
    samples: &'a TensorBuf<f32>,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl<'a> BatchIter<'a> {
    pub fn indices(&self) -> impl Iterator<Item = &[usize]> {
        self.order.chunks_exact(self.batch_size)
    }
}

impl Iterator for BatchIter<'_> {
    type Item = TensorBuf<f32>;

    fn next(&mut self) -> Option<Self::Item> {
        let end = self.pos + self.batch_size;
        if end > self.order.len() {
            return None;
        }
        let batch = self.samples.gather_batch(&self.order[self.pos..end]);
        self.pos = end;
        Some(batch)
    }
}

/// Seeded permutation of `0..count` for one epoch.
pub fn epoch_permutation(count: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..count).collect();
    let mut r = rng::stream(seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15), purpose::BATCH);
    order.shuffle(&mut r);
    order
}

pub fn batch_iter<D: Dataset + ?Sized>(dataset: &D, batch_size: usize, seed: u64) -> Result<BatchIter<'_>> {
    batch_iter_epoch(dataset, batch_size, seed, 0)
}

pub fn batch_iter_epoch<D: Dataset + ?Sized>(
    dataset: &D,
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<BatchIter<'_>> {
    if batch_size == 0 {
        return Err(Error::config("batch size must be positive"));
    }
    if batch_size > dataset.count() {
        return Err(Error::config(format!(
            "batch size {batch_size} exceeds dataset size {}",
            dataset.count()
        )));
    }
    Ok(BatchIter {
        samples: dataset.samples(),
        order: epoch_permutation(dataset.count(), seed, epoch),
        batch_size,
        pos: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_bytes(magic: u32, dims: &[u32], payload: &[u8]) -> Vec<u8> {
        let mut out = magic.to_be_bytes().to_vec();
        for d in dims {
            out.extend_from_slice(&d.to_be_bytes());
        }
        out.extend_from_slice(payload);
        out
    }

    #[test]
    fn decodes_crafted_file_endpoints() {
        let bytes = idx_bytes(IDX_IMAGES_MAGIC, &[1, 2, 2], &[0, 255, 0, 255]);
        let t = decode_idx_images(&bytes).unwrap();
        assert_eq!(t.shape(), &[1, 1, 2, 2]);
        assert_eq!(t.data(), &[-1.0, 1.0, -1.0, 1.0]);
    }

    #[test]
    fn label_magic_in_image_slot_is_a_format_error() {
        let bytes = idx_bytes(IDX_LABELS_MAGIC, &[1], &[3]);
        match decode_idx_images(&bytes) {
            Err(Error::Format(msg)) => assert!(msg.contains("0x00000801"), "{msg}"),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_is_a_length_mismatch() {
        let bytes = idx_bytes(IDX_IMAGES_MAGIC, &[2, 2, 2], &[0; 7]);
        assert!(matches!(
            decode_idx_images(&bytes),
            Err(Error::LengthMismatch { expected: 24, found: 23 })
        ));
    }

    #[test]
    fn count_mismatch_is_a_consistency_error() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        let lab = dir.path().join("lab");
        std::fs::write(&img, idx_bytes(IDX_IMAGES_MAGIC, &[2, 1, 1], &[0, 1])).unwrap();
        std::fs::write(&lab, encode_idx_labels(&[1, 2, 3])).unwrap();
        assert!(matches!(
            load_mnist_idx(&img, Some(&lab)),
            Err(Error::Consistency(_))
        ));
    }

    #[test]
    fn padding_centres_28_in_32() {
        let raw = TensorBuf::full(vec![1, 1, 28, 28], 1.0f32);
        let p = pad_to(&raw, 32).unwrap();
        assert_eq!(p.shape(), &[1, 1, 32, 32]);
        let at = |y: usize, x: usize| p.data()[y * 32 + x];
        assert_eq!(at(1, 1), -1.0);
        assert_eq!(at(2, 2), 1.0);
        assert_eq!(at(29, 29), 1.0);
        assert_eq!(at(30, 30), -1.0);
        assert_eq!(p.data().iter().filter(|&&v| v == 1.0).count(), 28 * 28);
    }

    #[test]
    fn byte_map_inverts_exactly() {
        for b in 0..=255u8 {
            assert_eq!(unit_to_byte(byte_to_unit(b)), b);
        }
    }

    #[test]
    fn degenerate_single_gaussian_is_a_point_mass() {
        let params = BTreeMap::from([
            ("mean_x".to_string(), 3.0),
            ("var".to_string(), 0.0),
        ]);
        let d = make_toy("single_gaussian", 50, 1, &params).unwrap();
        assert!(d.points.data().chunks(2).all(|p| p == [3.0, 0.0]));
    }

    #[test]
    fn unknown_generator_and_param_rejected() {
        assert!(make_toy("spiral", 5, 0, &BTreeMap::new()).unwrap_err().is_config());
        let bad = BTreeMap::from([("radius".to_string(), 1.0)]);
        assert!(make_toy("two_gaussians", 5, 0, &bad).unwrap_err().is_config());
    }

    #[test]
    fn toy_prefix_is_stable() {
        let a = make_toy("gaussian_ring", 100, 9, &BTreeMap::new()).unwrap();
        let b = make_toy("gaussian_ring", 40, 9, &BTreeMap::new()).unwrap();
        assert_eq!(a.points.slice_batch(0, 40), b.points);
    }

    #[test]
    fn ten_items_batch_three() {
        let d = make_toy("single_gaussian", 10, 0, &BTreeMap::new()).unwrap();
        let it = batch_iter(&d, 3, 5).unwrap();
        let idx: Vec<Vec<usize>> = it.indices().map(|c| c.to_vec()).collect();
        assert_eq!(idx.len(), 3);
        let batches: Vec<_> = batch_iter(&d, 3, 5).unwrap().collect();
        assert_eq!(batches.len(), 3);
        let perm = epoch_permutation(10, 5, 0);
        // union of one epoch's batches is the first 9 permuted items
        let mut seen: Vec<usize> = idx.concat();
        let mut first9 = perm[..9].to_vec();
        seen.sort_unstable();
        first9.sort_unstable();
        assert_eq!(seen, first9);
        assert_eq!(batch_iter(&d, 3, 5).unwrap().collect::<Vec<_>>(), batches);
    }

    #[test]
    fn zero_batch_is_config_error() {
        let d = make_toy("single_gaussian", 10, 0, &BTreeMap::new()).unwrap();
        assert!(batch_iter(&d, 0, 0).err().unwrap().is_config());
    }
}
