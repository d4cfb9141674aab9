//! Labeled image datasets: MNIST-style IDX ingestion and a synthetic
//! two-class generator.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, IdxError, Result};
use crate::tensor::{Scalar, Tensor};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
    Synthetic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    /// `[n, 1, H, W]`, pixels in `[0, 1]`.
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: Split,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(images: Tensor<T>, labels: Vec<usize>, num_classes: usize, split: Split) -> Result<Self> {
        if images.shape().len() != 4 || images.batch() != labels.len() {
            return Err(Error::ShapeMismatch {
                op: "dataset",
                left: images.shape().to_vec(),
                right: vec![labels.len()],
            });
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange {
                label: l,
                num_classes,
            });
        }
        if images.data().iter().any(|&p| !(p >= T::zero() && p <= T::one())) {
            return Err(Error::invalid("dataset pixels must lie in [0, 1]"));
        }
        Ok(Dataset {
            images,
            labels,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[C, H, W]` of a single image.
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Dataset {
            images: self.images.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            split: self.split,
        }
    }

    /// First `n` entries of a seeded shuffle of the indices.
    pub fn shuffled_indices(&self, n: usize, seed: u64) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        idx.truncate(n.min(self.len()));
        idx
    }

    /// Seeded shuffle, then prefix of length `n`.
    pub fn sample(&self, n: usize, seed: u64) -> Self {
        self.subset(&self.shuffled_indices(n, seed))
    }

    pub fn cast<U: Scalar>(&self) -> Dataset<U> {
        Dataset {
            images: self.images.cast(),
            labels: self.labels.clone(),
            num_classes: self.num_classes,
            split: self.split,
        }
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    let s = bytes.get(at..at + 4).ok_or(IdxError::Truncated {
        expected: at + 4,
        found: bytes.len(),
    })?;
    Ok(u32::from_be_bytes(s.try_into().unwrap()))
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let found = be_u32(bytes, 0)?;
    if found != expected {
        return Err(IdxError::BadMagic { found, expected }.into());
    }
    Ok(())
}

/// Parses an IDX3 image file into `[n, 1, rows, cols]`, pixels scaled by 1/255.
pub fn parse_idx_images<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    check_magic(bytes, IDX_IMAGES_MAGIC)?;
    let n = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let expected = 16 + n * rows * cols;
    if bytes.len() < expected {
        return Err(IdxError::Truncated {
            expected,
            found: bytes.len(),
        }
        .into());
    }
    let data = bytes[16..expected]
        .iter()
        .map(|&p| T::from_f64_lossy(p as f64 / 255.0))
        .collect();
    Tensor::new(vec![n, 1, rows, cols], data)
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    check_magic(bytes, IDX_LABELS_MAGIC)?;
    let n = be_u32(bytes, 4)? as usize;
    let expected = 8 + n;
    if bytes.len() < expected {
        return Err(IdxError::Truncated {
            expected,
            found: bytes.len(),
        }
        .into());
    }
    Ok(bytes[8..expected].iter().map(|&l| l as usize).collect())
}

/// Loads an IDX image/label pair (10 classes).
pub fn load_idx<T: Scalar>(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>, split: Split) -> Result<Dataset<T>> {
    let read = |p: &Path| std::fs::read(p).map_err(|e| Error::io(p, e));
    let images = parse_idx_images::<T>(&read(images_path.as_ref())?)?;
    let labels = parse_idx_labels(&read(labels_path.as_ref())?)?;
    if images.batch() != labels.len() {
        return Err(IdxError::CountMismatch {
            images: images.batch(),
            labels: labels.len(),
        }
        .into());
    }
    Dataset::new(images, labels, 10, split)
}

/// Serializes images and labels back to IDX bytes (pixels rounded to u8).
pub fn to_idx_bytes<T: Scalar>(ds: &Dataset<T>) -> (Vec<u8>, Vec<u8>) {
    let [_, rows, cols] = ds.image_shape();
    let mut img = Vec::with_capacity(16 + ds.images.len());
    img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    img.extend_from_slice(&(ds.len() as u32).to_be_bytes());
    img.extend_from_slice(&(rows as u32).to_be_bytes());
    img.extend_from_slice(&(cols as u32).to_be_bytes());
    img.extend(ds.images.data().iter().map(|p| (p.as_f64() * 255.0).round() as u8));
    let mut lab = Vec::with_capacity(8 + ds.len());
    lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(ds.len() as u32).to_be_bytes());
    lab.extend(ds.labels.iter().map(|&l| l as u8));
    (img, lab)
}

/// Two linearly separable classes: class 0 has bright patterns in the top
/// half, class 1 in the bottom half, both over low-level noise. Labels
/// alternate 0, 1, 0, ... so each class has exactly `n / 2` images.
pub fn synth_two_class<T: Scalar>(n: usize, size: usize, seed: u64) -> Result<Dataset<T>> {
    if n == 0 || !n.is_multiple_of(2) {
        return Err(Error::invalid(format!("synthetic dataset size must be even and positive, got {n}")));
    }
    if size < 2 {
        return Err(Error::invalid("synthetic images need at least 2x2 pixels"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = size / 2;
    let mut data = Vec::with_capacity(n * size * size);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        for r in 0..size {
            let bright = if label == 0 { r < half } else { r >= size - half };
            for _ in 0..size {
                let v: f64 = if bright && rng.gen_bool(0.7) {
                    rng.gen_range(0.6..=1.0)
                } else {
                    rng.gen_range(0.0..0.2)
                };
                data.push(T::from_f64_lossy(v));
            }
        }
        labels.push(label);
    }
    Dataset::new(Tensor::new(vec![n, 1, size, size], data)?, labels, 2, Split::Synthetic)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn idx_round_trip_and_scaling() {
        let ds = synth_two_class::<f32>(6, 4, 1).unwrap();
        let (img, lab) = to_idx_bytes(&ds);
        let images = parse_idx_images::<f32>(&img).unwrap();
        assert_eq!(images.shape(), &[6, 1, 4, 4]);
        assert_eq!(parse_idx_labels(&lab).unwrap(), ds.labels);

        let mut raw = img.clone();
        raw[16] = 255;
        raw[17] = 0;
        let t = parse_idx_images::<f32>(&raw).unwrap();
        assert_eq!(t.data()[0], 1.0);
        assert_eq!(t.data()[1], 0.0);
    }

    #[test]
    fn labels_fed_as_images() {
        let ds = synth_two_class::<f32>(2, 4, 1).unwrap();
        let (_, lab) = to_idx_bytes(&ds);
        assert!(matches!(
            parse_idx_images::<f32>(&lab),
            Err(Error::Idx(IdxError::BadMagic { found: 0x801, expected: 0x803 }))
        ));
    }

    #[test]
    fn truncated_images() {
        let ds = synth_two_class::<f32>(2, 4, 1).unwrap();
        let (img, _) = to_idx_bytes(&ds);
        assert!(matches!(
            parse_idx_images::<f32>(&img[..img.len() - 1]),
            Err(Error::Idx(IdxError::Truncated { .. }))
        ));
        assert!(matches!(
            parse_idx_images::<f32>(&img[..3]),
            Err(Error::Idx(IdxError::Truncated { .. }))
        ));
    }

    #[test]
    fn count_mismatch_between_files() {
        let dir = tempfile::tempdir().unwrap();
        let (img, _) = to_idx_bytes(&synth_two_class::<f32>(4, 4, 1).unwrap());
        let (_, lab) = to_idx_bytes(&synth_two_class::<f32>(2, 4, 1).unwrap());
        std::fs::write(dir.path().join("i"), img).unwrap();
        std::fs::write(dir.path().join("l"), lab).unwrap();
        assert!(matches!(
            load_idx::<f32>(dir.path().join("i"), dir.path().join("l"), Split::Train),
            Err(Error::Idx(IdxError::CountMismatch { images: 4, labels: 2 }))
        ));
    }

    #[test]
    fn synth_is_seeded_and_balanced() {
        let a = synth_two_class::<f32>(10, 8, 3).unwrap();
        let b = synth_two_class::<f32>(10, 8, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.labels.iter().filter(|&&l| l == 0).count(), 5);
        assert!(synth_two_class::<f32>(5, 8, 3).is_err());
    }

    #[test]
    fn sample_is_a_seeded_prefix() {
        let ds = synth_two_class::<f32>(20, 4, 0).unwrap();
        let a = ds.shuffled_indices(5, 9);
        assert_eq!(a, ds.shuffled_indices(20, 9)[..5]);
        assert_eq!(ds.sample(5, 9).labels, a.iter().map(|&i| ds.labels[i]).collect::<Vec<_>>());
    }
}
