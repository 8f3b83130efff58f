//! Image classification datasets: IDX and CSV files or seeded synthetic
//! generators, normalized per channel and cut into four disjoint splits.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use twophase_tensor::Tensor;

use crate::error::{data, CoreError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    SearchTrain,
    SearchVal,
    EvalTrain,
    Test,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::SearchTrain, Split::SearchVal, Split::EvalTrain, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::SearchTrain => "search-train",
            Split::SearchVal => "search-val",
            Split::EvalTrain => "eval-train",
            Split::Test => "test",
        }
    }
}

/// Fractions of the shuffled dataset assigned to each split, in [`Split::ALL`] order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions(pub [f64; 4]);

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions([0.25, 0.25, 0.3, 0.2])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pattern {
    /// Per-class channel offsets plus a Gaussian bump at a class-specific location.
    Blobs,
    /// Per-class stripe orientation and frequency with a random phase.
    Stripes,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Source {
    Idx {
        images: PathBuf,
        labels: PathBuf,
    },
    /// One row per image: label, then `channels·height·width` pixel values.
    Csv {
        path: PathBuf,
        channels: usize,
        height: usize,
        width: usize,
    },
    Synthetic {
        pattern: Pattern,
        classes: usize,
        samples: usize,
        channels: usize,
        size: usize,
        /// Signal amplitude relative to unit pixel noise.
        separation: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub source: Source,
    pub fractions: SplitFractions,
    /// Seeds both synthetic generation and the split shuffle.
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `[N, C, H, W]`, zero mean and unit variance per channel.
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
    splits: [Vec<usize>; 4],
}

impl Dataset {
    /// Normalizes `images` and draws the splits.
    pub fn new(images: Tensor, labels: Vec<usize>, fractions: SplitFractions, seed: u64) -> Result<Dataset> {
        let Some((n, c, h, w)) = images.dims4() else {
            return data(format!("images must be [N, C, H, W], got {:?}", images.shape()));
        };
        if labels.len() != n {
            return data(format!("{n} images but {} labels", labels.len()));
        }
        let classes = labels.iter().max().map_or(0, |m| m + 1);
        if classes < 2 {
            return data(format!("need at least 2 classes, found {classes}"));
        }
        let f = fractions.0;
        if f.iter().any(|v| !(0.0..=1.0).contains(v)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return data(format!("split fractions {f:?} must be in [0, 1] and sum to 1"));
        }
        let mut images = images;
        normalize(&mut images, n, c, h * w);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5311_7000));
        let mut splits: [Vec<usize>; 4] = Default::default();
        let mut start = 0;
        let mut acc = 0.0;
        for (i, frac) in f.iter().enumerate() {
            acc += frac;
            let end = if i == 3 { n } else { ((acc * n as f64).round() as usize).min(n) };
            splits[i] = order[start..end].to_vec();
            start = end;
        }
        Ok(Dataset {
            images,
            labels,
            classes,
            splits,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `(C, H, W)`.
    pub fn image_shape(&self) -> (usize, usize, usize) {
        let (_, c, h, w) = self.images.dims4().expect("rank-4 images");
        (c, h, w)
    }

    pub fn split(&self, s: Split) -> &[usize] {
        &self.splits[s as usize]
    }

    /// Stacks the given images into one `[B, C, H, W]` tensor.
    pub fn batch(&self, idx: &[usize]) -> Batch {
        let (c, h, w) = self.image_shape();
        let per = c * h * w;
        let src = self.images.data();
        let mut x = Vec::with_capacity(idx.len() * per);
        for &i in idx {
            x.extend_from_slice(&src[i * per..(i + 1) * per]);
        }
        Batch {
            x: Tensor::new(vec![idx.len(), c, h, w], x).expect("non-empty batch"),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub x: Tensor,
    pub labels: Vec<usize>,
}

/// Mini-batches of `split` for one epoch, reshuffled per `(seed, epoch)`.
/// A trailing batch of a single image is dropped (batch norm needs two).
pub fn epoch_batches(indices: &[usize], batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order = indices.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add((epoch as u64).wrapping_mul(0xA24B_AED4_963E_E407)));
    order.shuffle(&mut rng);
    order
        .chunks(batch_size.max(1))
        .filter(|c| c.len() >= 2 || indices.len() == 1)
        .map(<[usize]>::to_vec)
        .collect()
}

fn normalize(images: &mut Tensor, n: usize, c: usize, hw: usize) {
    let d = images.data_mut();
    for ch in 0..c {
        let mut sum = 0.0;
        let mut sq = 0.0;
        for i in 0..n {
            for v in &d[(i * c + ch) * hw..][..hw] {
                sum += v;
                sq += v * v;
            }
        }
        let m = (n * hw) as f64;
        let mean = sum / m;
        let std = (sq / m - mean * mean).max(0.0).sqrt();
        let inv = if std > 1e-12 { 1.0 / std } else { 1.0 };
        for i in 0..n {
            for v in &mut d[(i * c + ch) * hw..][..hw] {
                *v = (*v - mean) * inv;
            }
        }
    }
}

pub fn load_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    let (images, labels) = match &spec.source {
        Source::Idx { images, labels } => read_idx_pair(images, labels)?,
        Source::Csv {
            path,
            channels,
            height,
            width,
        } => read_csv(path, *channels, *height, *width)?,
        Source::Synthetic {
            pattern,
            classes,
            samples,
            channels,
            size,
            separation,
        } => synthetic(*pattern, *classes, *samples, *channels, *size, *separation, spec.seed)?,
    };
    Dataset::new(images, labels, spec.fractions, spec.seed)
}

/// Raw synthetic images (before normalization); labels cycle through classes.
pub fn synthetic(pattern: Pattern, classes: usize, samples: usize, channels: usize, size: usize, separation: f64, seed: u64) -> Result<(Tensor, Vec<usize>)> {
    if classes < 2 {
        return data(format!("need at least 2 classes, got {classes}"));
    }
    if samples < classes || channels == 0 || size < 2 {
        return data("synthetic data needs samples ≥ classes, channels ≥ 1 and size ≥ 2");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hw = size * size;
    let per = channels * hw;
    let protos: Vec<Vec<f64>> = (0..classes)
        .map(|k| match pattern {
            Pattern::Blobs => {
                let offsets: Vec<f64> = (0..channels).map(|_| StandardNormal.sample(&mut rng)).collect();
                let cy = rng.random_range(0.0..size as f64);
                let cx = rng.random_range(0.0..size as f64);
                let width = size as f64 / 4.0;
                let mut p = vec![0.0; per];
                for ch in 0..channels {
                    for y in 0..size {
                        for x in 0..size {
                            let r2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                            p[ch * hw + y * size + x] = offsets[ch] + (-r2 / (2.0 * width * width)).exp();
                        }
                    }
                }
                p
            }
            Pattern::Stripes => {
                let theta = std::f64::consts::PI * k as f64 / classes as f64;
                vec![theta]
            }
        })
        .collect();
    let mut x = Vec::with_capacity(samples * per);
    let mut labels = Vec::with_capacity(samples);
    for i in 0..samples {
        let k = i % classes;
        labels.push(k);
        match pattern {
            Pattern::Blobs => {
                for v in &protos[k] {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    x.push(separation * v + noise);
                }
            }
            Pattern::Stripes => {
                let theta = protos[k][0];
                let freq = 1.0 + (k % 3) as f64;
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                for _ in 0..channels {
                    for y in 0..size {
                        for xx in 0..size {
                            let t = (xx as f64 * theta.cos() + y as f64 * theta.sin()) / size as f64;
                            let noise: f64 = StandardNormal.sample(&mut rng);
                            x.push(separation * (std::f64::consts::TAU * freq * t + phase).sin() + noise);
                        }
                    }
                }
            }
        }
    }
    Ok((Tensor::new(vec![samples, channels, size, size], x)?, labels))
}

fn read_idx(path: &Path) -> Result<(Vec<usize>, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| CoreError::Data(format!("{}: {e}", path.display())))?;
    let name = path.display();
    if bytes.len() < 4 || bytes[0] != 0 || bytes[1] != 0 || bytes[2] != 0x08 {
        return data(format!("{name}: bad IDX magic number (expected unsigned-byte data)"));
    }
    let ndim = bytes[3] as usize;
    let header = 4 + 4 * ndim;
    if ndim == 0 || bytes.len() < header {
        return data(format!("{name}: truncated IDX header"));
    }
    let dims: Vec<usize> = (0..ndim)
        .map(|i| u32::from_be_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize)
        .collect();
    let count: usize = dims.iter().product();
    if bytes.len() != header + count {
        return data(format!("{name}: header promises {count} values, file holds {}", bytes.len() - header));
    }
    Ok((dims, bytes[header..].to_vec()))
}

pub fn read_idx_pair(images: &Path, labels: &Path) -> Result<(Tensor, Vec<usize>)> {
    let (idims, ibytes) = read_idx(images)?;
    let (ldims, lbytes) = read_idx(labels)?;
    let shape = match idims.as_slice() {
        [n, h, w] => vec![*n, 1, *h, *w],
        [n, c, h, w] => vec![*n, *c, *h, *w],
        other => return data(format!("{}: expected 3 or 4 image dimensions, got {other:?}", images.display())),
    };
    if ldims.len() != 1 || ldims[0] != shape[0] {
        return data(format!("{} images but labels have shape {ldims:?}", shape[0]));
    }
    if shape.contains(&0) {
        return data(format!("{}: empty image array", images.display()));
    }
    let x = ibytes.iter().map(|&b| b as f64 / 255.0).collect();
    Ok((Tensor::new(shape, x)?, lbytes.into_iter().map(usize::from).collect()))
}

/// Writes an unsigned-byte IDX file.
pub fn write_idx(path: &Path, dims: &[usize], values: &[u8]) -> Result<()> {
    let mut out = vec![0, 0, 0x08, dims.len() as u8];
    for d in dims {
        out.extend_from_slice(&(*d as u32).to_be_bytes());
    }
    out.extend_from_slice(values);
    fs::write(path, out)?;
    Ok(())
}

pub fn read_csv(path: &Path, channels: usize, height: usize, width: usize) -> Result<(Tensor, Vec<usize>)> {
    let text = fs::read_to_string(path).map_err(|e| CoreError::Data(format!("{}: {e}", path.display())))?;
    let per = channels * height * width;
    let mut x = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let row = i + 1;
        if line.trim().is_empty() || (row == 1 && line.starts_with("label")) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != per + 1 {
            return data(format!("row {row}: {} fields, expected label plus {per} pixels", fields.len()));
        }
        let label: usize = fields[0]
            .parse()
            .map_err(|_| CoreError::Data(format!("row {row}, column 1: label {:?} is not a class index", fields[0])))?;
        labels.push(label);
        for (col, f) in fields[1..].iter().enumerate() {
            let v: f64 = f
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| CoreError::Data(format!("row {row}, column {}: {f:?} is not a number", col + 2)))?;
            x.push(v);
        }
    }
    if labels.is_empty() {
        return data(format!("{}: no rows", path.display()));
    }
    Ok((Tensor::new(vec![labels.len(), channels, height, width], x)?, labels))
}
