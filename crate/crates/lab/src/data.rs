//! Image datasets: the IDX format used by MNIST and a synthetic stand-in
//! made of Gaussian blobs on a 28×28 grid.

use std::fs;
use std::path::{Path, PathBuf};

use dam_core::{Rng, Tensor};

use crate::error::{LabError, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const SIDE: usize = 28;
pub const PIXELS: usize = SIDE * SIDE;
pub const CLASSES: usize = 10;

/// Train and test splits of a labelled image set, pixels in `[0, 1]`.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub train_x: Tensor,
    pub train_y: Vec<usize>,
    pub test_x: Tensor,
    pub test_y: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    /// Keeps the first `n` training samples (all of them if `n` is larger).
    pub fn truncate_train(mut self, n: usize) -> Self {
        if n < self.train_y.len() {
            let idx: Vec<usize> = (0..n).collect();
            self.train_x = self.train_x.select_rows(&idx);
            self.train_y.truncate(n);
        }
        self
    }

    pub fn truncate_test(mut self, n: usize) -> Self {
        if n < self.test_y.len() {
            let idx: Vec<usize> = (0..n).collect();
            self.test_x = self.test_x.select_rows(&idx);
            self.test_y.truncate(n);
        }
        self
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| LabError::io(path, e))
}

fn header(bytes: &[u8], path: &Path, words: usize) -> Result<Vec<u32>> {
    if bytes.len() < 4 * words {
        return Err(LabError::format(path, format!("truncated header: {} bytes", bytes.len())));
    }
    Ok((0..words)
        .map(|i| u32::from_be_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap()))
        .collect())
}

/// Reads an IDX image file (magic `0x803`) as an `N × rows·cols` tensor
/// scaled by 1/255.
pub fn read_idx_images(path: &Path) -> Result<Tensor> {
    let bytes = read(path)?;
    let h = header(&bytes, path, 4)?;
    if h[0] != IMAGE_MAGIC {
        return Err(LabError::format(path, format!("bad magic {:#010x}, expected {IMAGE_MAGIC:#010x}", h[0])));
    }
    let (n, rows, cols) = (h[1] as usize, h[2] as usize, h[3] as usize);
    let expected = n * rows * cols;
    let body = &bytes[16..];
    if body.len() < expected {
        return Err(LabError::format(
            path,
            format!("truncated: {n} images of {rows}x{cols} need {expected} bytes, found {}", body.len()),
        ));
    }
    let data = body[..expected].iter().map(|&b| b as f64 / 255.0).collect();
    Ok(Tensor::from_vec(n, rows * cols, data)?)
}

/// Reads an IDX label file (magic `0x801`).
pub fn read_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let bytes = read(path)?;
    let h = header(&bytes, path, 2)?;
    if h[0] != LABEL_MAGIC {
        return Err(LabError::format(path, format!("bad magic {:#010x}, expected {LABEL_MAGIC:#010x}", h[0])));
    }
    let n = h[1] as usize;
    let body = &bytes[8..];
    if body.len() < n {
        return Err(LabError::format(path, format!("truncated: {n} labels, found {} bytes", body.len())));
    }
    Ok(body[..n].iter().map(|&b| b as usize).collect())
}

pub fn load_mnist_idx(images: &Path, labels: &Path) -> Result<(Tensor, Vec<usize>)> {
    let x = read_idx_images(images)?;
    let y = read_idx_labels(labels)?;
    if x.rows() != y.len() {
        return Err(LabError::format(
            labels,
            format!("count mismatch: {} images in {} but {} labels", x.rows(), images.display(), y.len()),
        ));
    }
    Ok((x, y))
}

/// Standard MNIST file names inside `dir`.
pub fn mnist_paths(dir: &Path) -> [PathBuf; 4] {
    [
        dir.join("train-images-idx3-ubyte"),
        dir.join("train-labels-idx1-ubyte"),
        dir.join("t10k-images-idx3-ubyte"),
        dir.join("t10k-labels-idx1-ubyte"),
    ]
}

pub fn load_mnist_dir(dir: &Path) -> Result<Dataset> {
    let [ti, tl, vi, vl] = mnist_paths(dir);
    for p in [&ti, &tl, &vi, &vl] {
        if !p.exists() {
            return Err(LabError::io(
                p,
                std::io::Error::new(std::io::ErrorKind::NotFound, "MNIST file not found"),
            ));
        }
    }
    let (train_x, train_y) = load_mnist_idx(&ti, &tl)?;
    let (test_x, test_y) = load_mnist_idx(&vi, &vl)?;
    Ok(Dataset {
        train_x,
        train_y,
        test_x,
        test_y,
        classes: CLASSES,
    })
}

/// Encodes images (values in `[0, 1]`) as an IDX file.
pub fn write_idx_images(path: &Path, x: &Tensor, rows: usize, cols: usize) -> Result<()> {
    assert_eq!(x.cols(), rows * cols, "image shape");
    let mut out = Vec::with_capacity(16 + x.len());
    for w in [IMAGE_MAGIC, x.rows() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&w.to_be_bytes());
    }
    out.extend(x.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    fs::write(path, out).map_err(|e| LabError::io(path, e))
}

pub fn write_idx_labels(path: &Path, y: &[usize]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + y.len());
    for w in [LABEL_MAGIC, y.len() as u32] {
        out.extend_from_slice(&w.to_be_bytes());
    }
    out.extend(y.iter().map(|&v| v as u8));
    fs::write(path, out).map_err(|e| LabError::io(path, e))
}

/// Class templates for the synthetic digits: a few blobs per class.
#[derive(Clone, Debug)]
struct Template {
    blobs: Vec<(f64, f64, f64)>,
}

fn templates(rng: &mut Rng) -> Vec<Template> {
    (0..CLASSES)
        .map(|_| {
            let count = 3 + rng.below(3);
            let blobs = (0..count)
                .map(|_| (rng.uniform(6.0, 22.0), rng.uniform(6.0, 22.0), rng.uniform(1.8, 3.2)))
                .collect();
            Template { blobs }
        })
        .collect()
}

/// Gaussian-blob images with `CLASSES` classes. Each class has a fixed set
/// of blobs; every sample jitters their positions, widths and brightness
/// and adds pixel noise. The class templates depend only on `seed`.
pub fn synthetic_digits(n: usize, seed: u64, sample_stream: u64) -> (Tensor, Vec<usize>) {
    let root = Rng::new(seed);
    let temps = templates(&mut root.split_named("templates"));
    let mut rng = root.split(sample_stream);
    let mut data = Vec::with_capacity(n * PIXELS);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let class = rng.below(CLASSES);
        let (dx, dy) = (rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0));
        let blobs: Vec<(f64, f64, f64, f64)> = temps[class]
            .blobs
            .iter()
            .map(|&(cx, cy, s)| {
                (
                    cx + dx + rng.uniform(-1.0, 1.0),
                    cy + dy + rng.uniform(-1.0, 1.0),
                    s * rng.uniform(0.8, 1.25),
                    rng.uniform(0.6, 1.0),
                )
            })
            .collect();
        for py in 0..SIDE {
            for px in 0..SIDE {
                let mut v = 0.0;
                for &(cx, cy, s, a) in &blobs {
                    let d2 = (px as f64 - cx).powi(2) + (py as f64 - cy).powi(2);
                    v += a * (-d2 / (2.0 * s * s)).exp();
                }
                v += 0.05 * rng.normal();
                data.push(v.clamp(0.0, 1.0));
            }
        }
        labels.push(class);
    }
    (Tensor::from_vec(n, PIXELS, data).expect("pixel count"), labels)
}

/// Synthetic train and test splits sharing class templates.
pub fn synthetic_dataset(train: usize, test: usize, seed: u64) -> Dataset {
    let (train_x, train_y) = synthetic_digits(train, seed, 1);
    let (test_x, test_y) = synthetic_digits(test, seed, 2);
    Dataset {
        train_x,
        train_y,
        test_x,
        test_y,
        classes: CLASSES,
    }
}
