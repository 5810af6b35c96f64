//! In-memory datasets, MNIST IDX ingestion, synthetic data and the
//! per-vehicle partition.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::VehicleProfile;
use crate::rng::{self, Domain};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { path: PathBuf, expected: u32, found: u32 },
    #[error("{path}: truncated payload, header promises {expected} bytes but {found} follow")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("{images} has {n_images} images but {labels} has {n_labels} labels")]
    CountMismatch {
        images: PathBuf,
        n_images: usize,
        labels: PathBuf,
        n_labels: usize,
    },
    #[error("{path}: label {label} out of range")]
    BadLabel { path: PathBuf, label: u8 },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("vehicle {vehicle} needs {needed} samples but the pool holds only {available}")]
    ShardTooLarge {
        vehicle: usize,
        needed: usize,
        available: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Row-per-sample feature matrix with class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    num_classes: usize,
    pub split: Split,
    /// Nonzero entries per row, kept when most features are zero.
    sparse: Option<SparseRows>,
}

#[derive(Clone, Debug, PartialEq)]
struct SparseRows {
    starts: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl SparseRows {
    /// `None` unless fewer than half of the entries are nonzero.
    fn index(features: &Array2<f64>) -> Option<Self> {
        let nonzero = features.iter().filter(|v| **v != 0.0).count();
        if features.is_empty() || 2 * nonzero >= features.len() || features.ncols() > u32::MAX as usize {
            return None;
        }
        let mut rows = SparseRows {
            starts: Vec::with_capacity(features.nrows() + 1),
            cols: Vec::with_capacity(nonzero),
            vals: Vec::with_capacity(nonzero),
        };
        rows.starts.push(0);
        for row in features.rows() {
            for (j, &v) in row.iter().enumerate().filter(|(_, v)| **v != 0.0) {
                rows.cols.push(j as u32);
                rows.vals.push(v);
            }
            rows.starts.push(rows.cols.len());
        }
        Some(rows)
    }
}

/// One feature row, dense or as (column, value) pairs of its nonzeros.
#[derive(Clone, Copy, Debug)]
pub enum RowRef<'a> {
    Dense(&'a [f64]),
    Sparse { cols: &'a [u32], vals: &'a [f64] },
}

impl RowRef<'_> {
    /// Calls `f(column, value)` for every entry that may be nonzero.
    #[inline]
    pub fn for_each(self, mut f: impl FnMut(usize, f64)) {
        match self {
            RowRef::Dense(x) => x.iter().enumerate().for_each(|(j, &v)| f(j, v)),
            RowRef::Sparse { cols, vals } => cols.iter().zip(vals).for_each(|(&j, &v)| f(j as usize, v)),
        }
    }
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, num_classes: usize, split: Split) -> Result<Self, DataError> {
        if features.nrows() != labels.len() {
            return Err(DataError::Invalid(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(DataError::Invalid(format!("label {bad} outside 0..{num_classes}")));
        }
        if features.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(DataError::Invalid("features must lie in [0, 1]".into()));
        }
        Ok(Self::assemble(features, labels, num_classes, split))
    }

    fn assemble(features: Array2<f64>, labels: Vec<usize>, num_classes: usize, split: Split) -> Self {
        // row slices are handed to the training kernels
        let features = if features.is_standard_layout() {
            features
        } else {
            features.as_standard_layout().into_owned()
        };
        let sparse = SparseRows::index(&features);
        Self {
            features,
            labels,
            num_classes,
            split,
            sparse,
        }
    }

    /// Feature row `i`.
    pub fn row(&self, i: usize) -> RowRef<'_> {
        match &self.sparse {
            Some(sp) => {
                let (a, b) = (sp.starts[i], sp.starts[i + 1]);
                RowRef::Sparse {
                    cols: &sp.cols[a..b],
                    vals: &sp.vals[a..b],
                }
            }
            None => {
                let dim = self.dim();
                RowRef::Dense(&self.features.as_slice().expect("standard layout")[i * dim..(i + 1) * dim])
            }
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Copies the given rows, in order, into a new dataset.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset::assemble(
            self.features.select(Axis(0), indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.num_classes,
            self.split,
        )
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_all(path: &Path) -> Result<Vec<u8>, DataError> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(io_err(path))?;
    Ok(bytes)
}

fn header(path: &Path, cursor: &mut io::Cursor<&[u8]>, words: usize) -> Result<Vec<u32>, DataError> {
    (0..words)
        .map(|_| {
            cursor.read_u32::<BigEndian>().map_err(|_| DataError::Truncated {
                path: path.to_path_buf(),
                expected: words * 4,
                found: cursor.get_ref().len(),
            })
        })
        .collect()
}

/// Reads an IDX3 image file; returns the pixel matrix scaled to `[0, 1]`.
pub fn read_idx_images(path: &Path) -> Result<Array2<f64>, DataError> {
    let bytes = read_all(path)?;
    let mut cursor = io::Cursor::new(bytes.as_slice());
    let head = header(path, &mut cursor, 1)?;
    if head[0] != IMAGE_MAGIC {
        return Err(DataError::BadMagic {
            path: path.into(),
            expected: IMAGE_MAGIC,
            found: head[0],
        });
    }
    let dims = header(path, &mut cursor, 3)?;
    let (count, rows, cols) = (dims[0] as usize, dims[1] as usize, dims[2] as usize);
    let payload = &bytes[16..];
    let expected = count * rows * cols;
    if payload.len() < expected {
        return Err(DataError::Truncated {
            path: path.into(),
            expected,
            found: payload.len(),
        });
    }
    let pixels = payload[..expected].iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok(Array2::from_shape_vec((count, rows * cols), pixels).expect("length checked above"))
}

/// Reads an IDX1 label file.
pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>, DataError> {
    let bytes = read_all(path)?;
    let mut cursor = io::Cursor::new(bytes.as_slice());
    let head = header(path, &mut cursor, 1)?;
    if head[0] != LABEL_MAGIC {
        return Err(DataError::BadMagic {
            path: path.into(),
            expected: LABEL_MAGIC,
            found: head[0],
        });
    }
    let count = header(path, &mut cursor, 1)?[0] as usize;
    let payload = &bytes[8..];
    if payload.len() < count {
        return Err(DataError::Truncated {
            path: path.into(),
            expected: count,
            found: payload.len(),
        });
    }
    Ok(payload[..count].to_vec())
}

fn load_pair(dir: &Path, images: &str, labels: &str, split: Split) -> Result<Dataset, DataError> {
    let image_path = dir.join(images);
    let label_path = dir.join(labels);
    let features = read_idx_images(&image_path)?;
    let raw = read_idx_labels(&label_path)?;
    if raw.len() != features.nrows() {
        return Err(DataError::CountMismatch {
            images: image_path,
            n_images: features.nrows(),
            labels: label_path,
            n_labels: raw.len(),
        });
    }
    if let Some(&label) = raw.iter().find(|&&l| l >= 10) {
        return Err(DataError::BadLabel {
            path: label_path,
            label,
        });
    }
    let labels = raw.into_iter().map(usize::from).collect();
    Ok(Dataset::assemble(features, labels, 10, split))
}

/// Loads the four standard MNIST IDX files from `dir`.
pub fn load_mnist(dir: impl AsRef<Path>) -> Result<(Dataset, Dataset), DataError> {
    let dir = dir.as_ref();
    let train = load_pair(dir, TRAIN_IMAGES, TRAIN_LABELS, Split::Train)?;
    let test = load_pair(dir, TEST_IMAGES, TEST_LABELS, Split::Test)?;
    Ok((train, test))
}

/// Writes `data` as an IDX image/label pair. Features are quantized to bytes;
/// the image is declared as `1 x dim`.
pub fn write_idx(data: &Dataset, images: &Path, labels: &Path) -> Result<(), DataError> {
    let mut img = Vec::with_capacity(16 + data.features.len());
    img.write_u32::<BigEndian>(IMAGE_MAGIC).unwrap();
    img.write_u32::<BigEndian>(data.len() as u32).unwrap();
    let (rows, cols) = if data.dim() == 784 {
        (28, 28)
    } else {
        (1, data.dim() as u32)
    };
    img.write_u32::<BigEndian>(rows).unwrap();
    img.write_u32::<BigEndian>(cols).unwrap();
    img.extend(data.features.iter().map(|v| (v * 255.0).round() as u8));
    let mut lab = Vec::with_capacity(8 + data.len());
    lab.write_u32::<BigEndian>(LABEL_MAGIC).unwrap();
    lab.write_u32::<BigEndian>(data.len() as u32).unwrap();
    lab.extend(data.labels.iter().map(|&l| l as u8));
    fs::File::create(images)
        .and_then(|mut f| f.write_all(&img))
        .map_err(io_err(images))?;
    fs::File::create(labels)
        .and_then(|mut f| f.write_all(&lab))
        .map_err(io_err(labels))?;
    Ok(())
}

/// Shape of a synthetic Gaussian-blob classification problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub n_classes: usize,
    pub dim: usize,
    /// Per-coordinate noise standard deviation.
    pub noise: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n_train: 40_000,
            n_test: 2_000,
            n_classes: 10,
            dim: 64,
            noise: 0.1,
        }
    }
}

/// Class means shared by every sample drawn for a given spec seed.
fn class_means(spec: &SynthSpec) -> Array2<f64> {
    let mut rng = rng::stream(spec.seed, Domain::Synthetic, 0);
    Array2::from_shape_fn((spec.n_classes, spec.dim), |_| rng.gen_range(0.25..0.75))
}

fn draw_blobs(spec: &SynthSpec, means: &Array2<f64>, n: usize, stream: u64, split: Split) -> Dataset {
    let mut rng = rng::stream(spec.seed, Domain::Synthetic, stream);
    // round-robin labels so every class appears once n >= n_classes
    let labels: Vec<usize> = (0..n).map(|i| i % spec.n_classes).collect();
    let features = Array2::from_shape_fn((n, spec.dim), |(row, col)| {
        let z: f64 = rng.sample(StandardNormal);
        (means[[labels[row], col]] + spec.noise * z).clamp(0.0, 1.0)
    });
    Dataset::assemble(features, labels, spec.n_classes, split)
}

/// Deterministic Gaussian-blob data with `n_samples` rows and every class present.
pub fn synth_dataset(seed: u64, n_samples: usize, n_classes: usize) -> Dataset {
    let spec = SynthSpec {
        seed,
        n_train: n_samples,
        n_classes,
        ..SynthSpec::default()
    };
    synth_split(&spec).0
}

/// Train and test sets drawn around the same class means.
pub fn synth_split(spec: &SynthSpec) -> (Dataset, Dataset) {
    assert!(
        spec.n_classes >= 2 && spec.n_train >= spec.n_classes,
        "need n_train >= n_classes >= 2"
    );
    let means = class_means(spec);
    let train = draw_blobs(spec, &means, spec.n_train, 1, Split::Train);
    let test = draw_blobs(spec, &means, spec.n_test, 2, Split::Test);
    (train, test)
}

/// Row indices of one vehicle's training data.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shard {
    pub vehicle_id: usize,
    pub indices: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    pub shards: Vec<Shard>,
    /// Set when total demand exceeded the pool and shards may overlap.
    pub overlap_warning: Option<String>,
}

/// Assigns each vehicle exactly `data_count` distinct rows of `train`.
///
/// When the total fits, shards are disjoint slices of one shuffle. Otherwise
/// each vehicle samples independently without replacement, so shards may
/// overlap one another.
pub fn partition(train: &Dataset, profiles: &[VehicleProfile], seed: u64) -> Result<Partition, DataError> {
    let pool = train.len();
    if let Some(p) = profiles.iter().find(|p| p.data_count > pool) {
        return Err(DataError::ShardTooLarge {
            vehicle: p.id,
            needed: p.data_count,
            available: pool,
        });
    }
    let demand: usize = profiles.iter().map(|p| p.data_count).sum();
    if demand <= pool {
        let mut rng = rng::stream(seed, Domain::Partition, 0);
        let mut order: Vec<usize> = (0..pool).collect();
        order.shuffle(&mut rng);
        let mut rest = order.as_slice();
        let shards = profiles
            .iter()
            .map(|p| {
                let (head, tail) = rest.split_at(p.data_count);
                rest = tail;
                Shard {
                    vehicle_id: p.id,
                    indices: head.to_vec(),
                }
            })
            .collect();
        return Ok(Partition {
            shards,
            overlap_warning: None,
        });
    }
    let warning = format!("{demand} samples requested from a pool of {pool}; vehicle shards overlap");
    log::warn!("{warning}");
    let shards = profiles
        .iter()
        .map(|p| {
            let mut rng = rng::stream(seed, Domain::Partition, p.id as u64);
            let indices = rand::seq::index::sample(&mut rng, pool, p.data_count).into_vec();
            Shard {
                vehicle_id: p.id,
                indices,
            }
        })
        .collect();
    Ok(Partition {
        shards,
        overlap_warning: Some(warning),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{default_profiles, SimConfig};
    use std::collections::HashSet;

    fn write_bytes(dir: &Path, name: &str, bytes: &[u8]) -> PathBuf {
        let path = dir.join(name);
        fs::write(&path, bytes).unwrap();
        path
    }

    fn tiny_idx(dir: &Path) {
        let mut img = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0, 2];
        img.extend([0u8, 255, 128, 7]);
        let lab = [0u8, 0, 8, 1, 0, 0, 0, 2, 3, 9];
        for (i, l) in [(TRAIN_IMAGES, TRAIN_LABELS), (TEST_IMAGES, TEST_LABELS)] {
            write_bytes(dir, i, &img);
            write_bytes(dir, l, &lab);
        }
    }

    #[test]
    fn parses_idx_and_scales_pixels() {
        let dir = tempfile::tempdir().unwrap();
        tiny_idx(dir.path());
        let (train, test) = load_mnist(dir.path()).unwrap();
        assert_eq!(train.len(), 2);
        assert_eq!(test.split, Split::Test);
        assert_eq!(train.features()[[0, 1]], 1.0);
        assert_eq!(train.features()[[0, 0]], 0.0);
        assert_eq!(train.labels(), &[3, 9]);
    }

    #[test]
    fn wrong_magic_is_reported_with_expected_value() {
        let dir = tempfile::tempdir().unwrap();
        tiny_idx(dir.path());
        write_bytes(dir.path(), TRAIN_IMAGES, &[0, 0, 8, 1, 0, 0, 0, 0]);
        let err = load_mnist(dir.path()).unwrap_err();
        assert!(matches!(
            err,
            DataError::BadMagic {
                expected: IMAGE_MAGIC,
                found: 0x801,
                ..
            }
        ));
        let msg = err.to_string();
        assert!(msg.contains("0x00000803") && msg.contains(TRAIN_IMAGES), "{msg}");

        tiny_idx(dir.path());
        write_bytes(dir.path(), TEST_LABELS, &[0, 0, 8, 3, 0, 0, 0, 0]);
        let err = load_mnist(dir.path()).unwrap_err();
        assert!(err.to_string().contains("0x00000801"));
    }

    #[test]
    fn truncated_and_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        tiny_idx(dir.path());
        write_bytes(
            dir.path(),
            TRAIN_IMAGES,
            &[0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0, 2, 1],
        );
        assert!(matches!(load_mnist(dir.path()), Err(DataError::Truncated { .. })));
        fs::remove_file(dir.path().join(TEST_LABELS)).unwrap();
        tiny_idx(dir.path());
        fs::remove_file(dir.path().join(TEST_LABELS)).unwrap();
        let err = load_mnist(dir.path()).unwrap_err();
        assert!(matches!(err, DataError::Io { .. }));
        assert!(err.to_string().contains(TEST_LABELS));
    }

    #[test]
    fn idx_writer_round_trips_through_loader() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            n_train: 30,
            n_test: 10,
            dim: 12,
            ..SynthSpec::default()
        };
        let (train, test) = synth_split(&spec);
        let p = dir.path();
        write_idx(&train, &p.join(TRAIN_IMAGES), &p.join(TRAIN_LABELS)).unwrap();
        write_idx(&test, &p.join(TEST_IMAGES), &p.join(TEST_LABELS)).unwrap();
        let (back, _) = load_mnist(p).unwrap();
        assert_eq!(back.labels(), train.labels());
        let max_err = (back.features() - train.features())
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max_err <= 0.5 / 255.0 + 1e-12);
    }

    #[test]
    fn synthetic_data_is_deterministic_and_covers_classes() {
        let a = synth_dataset(1, 100, 10);
        assert_eq!(a.len(), 100);
        assert_eq!(a.labels().iter().collect::<HashSet<_>>().len(), 10);
        assert_eq!(a, synth_dataset(1, 100, 10));
        assert_ne!(a, synth_dataset(2, 100, 10));
        assert!(a.features().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn synthetic_class_means_are_well_separated() {
        let spec = SynthSpec::default();
        let means = class_means(&spec);
        for a in 0..spec.n_classes {
            for b in a + 1..spec.n_classes {
                let d = (&means.row(a) - &means.row(b)).mapv(|v| v * v).sum().sqrt();
                assert!(d >= 6.0 * spec.noise, "classes {a},{b} only {d} apart");
            }
        }
    }

    #[test]
    fn default_schedule_partition_overlaps_but_each_shard_is_distinct() {
        let spec = SynthSpec {
            n_train: 60_000,
            n_test: 10,
            dim: 1,
            ..SynthSpec::default()
        };
        let (train, _) = synth_split(&spec);
        let profiles = default_profiles(&SimConfig::default());
        let part = partition(&train, &profiles, 3).unwrap();
        let sizes: Vec<usize> = part.shards.iter().map(|s| s.indices.len()).collect();
        assert_eq!(sizes, (1..=10).map(|i| 2250 + 3750 * i).collect::<Vec<_>>());
        assert_eq!(sizes.iter().sum::<usize>(), 228_750);
        assert!(part.overlap_warning.is_some());
        for shard in &part.shards {
            assert_eq!(shard.indices.iter().collect::<HashSet<_>>().len(), shard.indices.len());
        }
        assert_eq!(part, partition(&train, &profiles, 3).unwrap());
    }

    #[test]
    fn single_vehicle_partition_is_disjoint_and_exact() {
        let spec = SynthSpec {
            n_train: 10_000,
            n_test: 10,
            dim: 1,
            ..SynthSpec::default()
        };
        let (train, _) = synth_split(&spec);
        let profile = VehicleProfile {
            id: 1,
            data_count: 6000,
            cpu_freq: 9e8,
            initial_x: 0.0,
        };
        let part = partition(&train, std::slice::from_ref(&profile), 9).unwrap();
        assert!(part.overlap_warning.is_none());
        assert_eq!(part.shards[0].indices.iter().collect::<HashSet<_>>().len(), 6000);

        let huge = VehicleProfile {
            data_count: 10_001,
            ..profile
        };
        assert!(matches!(
            partition(&train, &[huge], 9),
            Err(DataError::ShardTooLarge { .. })
        ));
    }
}
