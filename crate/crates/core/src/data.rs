//! Benchmark ingestion and class-incremental task construction.
//!
//! Two on-disk formats are understood:
//!
//! * IDX (the MNIST convention), optionally gzip-compressed. Images are
//!   `0x00000803` files of `u8` pixels, labels are `0x00000801` files of `u8`
//!   class ids. Pixels are scaled to `[0, 1]` and each image is flattened
//!   row-major.
//! * Pre-extracted feature files. The features file starts with two
//!   little-endian `u64` values `N` and `D`, followed by `N * D` little-endian
//!   `f32` values in row-major order. The labels file holds `N` little-endian
//!   `u64` class ids and nothing else. Values are passed through unscaled.

use std::io::Read;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Class count assumed for IDX label files (MNIST and FashionMNIST).
pub const IDX_DEFAULT_CLASSES: usize = 10;

/// A labelled pool of samples, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Array2<f64>,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl Dataset {
    pub fn new(inputs: Array2<f64>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if inputs.nrows() != labels.len() {
            return Err(Error::Consistency(format!(
                "{} input rows but {} labels",
                inputs.nrows(),
                labels.len()
            )));
        }
        if class_count == 0 {
            return Err(Error::Argument("class_count must be positive".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Consistency(format!(
                "label {bad} outside [0, {class_count})"
            )));
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite input value".into()));
        }
        Ok(Self {
            inputs,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    /// Rows at the given indices, in that order.
    pub fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            inputs: self.inputs.select(Axis(0), rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            class_count: self.class_count,
        }
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> u32 {
    u32::from_be_bytes(bytes[offset..offset + 4].try_into().unwrap())
}

/// Decodes an in-memory IDX image/label pair.
pub fn parse_idx(images: &[u8], labels: &[u8], class_count: usize) -> Result<Dataset> {
    if images.len() < 16 {
        return Err(Error::Format(format!(
            "IDX image header needs 16 bytes, got {}",
            images.len()
        )));
    }
    let magic = be_u32(images, 0);
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "bad IDX image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"
        )));
    }
    let n = be_u32(images, 4) as usize;
    let rows = be_u32(images, 8) as usize;
    let cols = be_u32(images, 12) as usize;
    let pixels = rows * cols;
    let body = &images[16..];
    if body.len() != n * pixels {
        return Err(Error::Format(format!(
            "IDX image body holds {} bytes, header promises {n} x {rows} x {cols}",
            body.len()
        )));
    }

    if labels.len() < 8 {
        return Err(Error::Format(format!(
            "IDX label header needs 8 bytes, got {}",
            labels.len()
        )));
    }
    let magic = be_u32(labels, 0);
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "bad IDX label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"
        )));
    }
    let n_labels = be_u32(labels, 4) as usize;
    if n_labels != n {
        return Err(Error::Consistency(format!(
            "{n} images but {n_labels} labels"
        )));
    }
    let label_body = &labels[8..];
    if label_body.len() != n {
        return Err(Error::Format(format!(
            "IDX label body holds {} bytes, header promises {n}",
            label_body.len()
        )));
    }

    let inputs = Array2::from_shape_fn((n, pixels), |(i, j)| body[i * pixels + j] as f64 / 255.0);
    let labels = label_body.iter().map(|&b| b as usize).collect();
    Dataset::new(inputs, labels, class_count)
}

/// Loads an IDX image/label file pair, gzip-compressed or not.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    load_idx_with_classes(images_path, labels_path, IDX_DEFAULT_CLASSES)
}

pub fn load_idx_with_classes(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    class_count: usize,
) -> Result<Dataset> {
    let images = read_maybe_gz(images_path.as_ref())?;
    let labels = read_maybe_gz(labels_path.as_ref())?;
    parse_idx(&images, &labels, class_count).map_err(|e| {
        e.context(format!(
            "loading {} / {}",
            images_path.as_ref().display(),
            labels_path.as_ref().display()
        ))
    })
}

/// Decodes an in-memory feature/label pair. `class_count` defaults to the
/// largest label plus one.
pub fn parse_features(features: &[u8], labels: &[u8], class_count: Option<usize>) -> Result<Dataset> {
    if features.len() < 16 {
        return Err(Error::Format(format!(
            "feature header needs 16 bytes, got {}",
            features.len()
        )));
    }
    let n = u64::from_le_bytes(features[0..8].try_into().unwrap()) as usize;
    let d = u64::from_le_bytes(features[8..16].try_into().unwrap()) as usize;
    let expected = n
        .checked_mul(d)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::Format(format!("feature header N={n}, D={d} overflows")))?;
    let body = &features[16..];
    if body.len() != expected {
        return Err(Error::Format(format!(
            "feature body holds {} bytes, header N={n}, D={d} needs {expected}",
            body.len()
        )));
    }
    let mut inputs = Array2::<f64>::zeros((n, d));
    for (dst, chunk) in inputs.iter_mut().zip(body.chunks_exact(4)) {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::Data(format!("non-finite feature value {v}")));
        }
        *dst = v as f64;
    }

    if labels.len() != n * 8 {
        return Err(Error::Format(format!(
            "label file holds {} bytes, expected {} for {n} rows",
            labels.len(),
            n * 8
        )));
    }
    let labels: Vec<usize> = labels
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let class_count = class_count.unwrap_or_else(|| labels.iter().max().map_or(1, |m| m + 1));
    Dataset::new(inputs, labels, class_count)
}

pub fn load_features(features_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let fp = features_path.as_ref();
    let lp = labels_path.as_ref();
    let features = std::fs::read(fp).map_err(|e| Error::io(fp, e))?;
    let labels = std::fs::read(lp).map_err(|e| Error::io(lp, e))?;
    parse_features(&features, &labels, None)
        .map_err(|e| e.context(format!("loading {} / {}", fp.display(), lp.display())))
}

/// Encodes a dataset in the feature-file layout. Values are narrowed to `f32`.
pub fn encode_features(data: &Dataset) -> (Vec<u8>, Vec<u8>) {
    let mut features = Vec::with_capacity(16 + data.inputs.len() * 4);
    features.extend_from_slice(&(data.len() as u64).to_le_bytes());
    features.extend_from_slice(&(data.dim() as u64).to_le_bytes());
    for &v in data.inputs.iter() {
        features.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let labels = data
        .labels
        .iter()
        .flat_map(|&l| (l as u64).to_le_bytes())
        .collect();
    (features, labels)
}

pub fn write_features(
    data: &Dataset,
    features_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    let (features, labels) = encode_features(data);
    let fp = features_path.as_ref();
    let lp = labels_path.as_ref();
    std::fs::write(fp, features).map_err(|e| Error::io(fp, e))?;
    std::fs::write(lp, labels).map_err(|e| Error::io(lp, e))?;
    Ok(())
}

/// One task of a class-incremental sequence. Label matrices are one-hot over
/// the global class count of the whole sequence.
#[derive(Debug, Clone)]
pub struct Task {
    pub x_train: Array2<f64>,
    pub y_train: Array2<f64>,
    pub labels_train: Vec<usize>,
    pub x_test: Array2<f64>,
    pub y_test: Array2<f64>,
    pub labels_test: Vec<usize>,
    pub class_ids: Vec<usize>,
}

impl Task {
    pub fn n_train(&self) -> usize {
        self.labels_train.len()
    }

    pub fn n_test(&self) -> usize {
        self.labels_test.len()
    }

    pub fn num_classes(&self) -> usize {
        self.y_train.ncols()
    }
}

#[derive(Debug, Clone)]
pub struct TaskSequence {
    pub tasks: Vec<Task>,
    pub ordering_seed: u64,
    /// Shuffled class order; task `t` owns a contiguous slice of it.
    pub class_order: Vec<usize>,
}

impl TaskSequence {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_order.len()
    }
}

/// Where the held-out samples of each task come from.
#[derive(Debug, Clone, Copy)]
pub enum TestSplit<'a> {
    /// Hold out this fraction of every task's samples.
    Fraction(f64),
    /// Use the matching classes of a separate test pool.
    Dataset(&'a Dataset),
}

pub fn one_hot(labels: &[usize], width: usize) -> Array2<f64> {
    let mut y = Array2::zeros((labels.len(), width));
    for (i, &l) in labels.iter().enumerate() {
        y[[i, l]] = 1.0;
    }
    y
}

/// Splits a labelled pool into `num_tasks` tasks of disjoint, equally sized
/// class groups. Classes are shuffled with `ordering_seed`; samples keep their
/// pool order within a task.
pub fn split_cil(
    data: &Dataset,
    num_tasks: usize,
    ordering_seed: u64,
    test: TestSplit<'_>,
) -> Result<TaskSequence> {
    let classes = data.class_count;
    if num_tasks == 0 || !classes.is_multiple_of(num_tasks) {
        return Err(Error::Argument(format!(
            "{classes} classes cannot be divided evenly into {num_tasks} tasks"
        )));
    }
    match test {
        TestSplit::Fraction(f) if !(f > 0.0 && f < 1.0) => {
            return Err(Error::Argument(format!("test fraction {f} not in (0, 1)")));
        }
        TestSplit::Dataset(t) if t.class_count != classes || t.dim() != data.dim() => {
            return Err(Error::Consistency(format!(
                "test pool has {} classes x {} dims, train pool {classes} x {}",
                t.class_count,
                t.dim(),
                data.dim()
            )));
        }
        _ => {}
    }

    let mut class_order: Vec<usize> = (0..classes).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(ordering_seed);
    class_order.shuffle(&mut rng);
    // held-out sampling uses its own stream so the class order does not
    // depend on the split mode
    let mut split_rng = ChaCha8Rng::seed_from_u64(ordering_seed);
    split_rng.set_stream(1);

    let per_task = classes / num_tasks;
    let mut tasks = Vec::with_capacity(num_tasks);
    for group in class_order.chunks(per_task) {
        let in_group = |l: usize| group.contains(&l);
        let rows: Vec<usize> = (0..data.len()).filter(|&i| in_group(data.labels[i])).collect();
        let (train, held_out) = match test {
            TestSplit::Fraction(f) => {
                let mut shuffled = rows.clone();
                shuffled.shuffle(&mut split_rng);
                let n_test = ((rows.len() as f64) * f).round() as usize;
                let (te, tr) = shuffled.split_at(n_test);
                let (mut tr, mut te) = (tr.to_vec(), te.to_vec());
                tr.sort_unstable();
                te.sort_unstable();
                (data.select(&tr), data.select(&te))
            }
            TestSplit::Dataset(pool) => {
                let te: Vec<usize> = (0..pool.len()).filter(|&i| in_group(pool.labels[i])).collect();
                (data.select(&rows), pool.select(&te))
            }
        };
        tasks.push(Task {
            y_train: one_hot(&train.labels, classes),
            y_test: one_hot(&held_out.labels, classes),
            x_train: train.inputs,
            labels_train: train.labels,
            x_test: held_out.inputs,
            labels_test: held_out.labels,
            class_ids: group.to_vec(),
        });
    }
    Ok(TaskSequence {
        tasks,
        ordering_seed,
        class_order,
    })
}
