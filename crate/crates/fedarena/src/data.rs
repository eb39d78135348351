//! Dataset ingestion and partitioning.
//!
//! Two sources: the MNIST IDX files read from a local directory, and a
//! synthetic Gaussian-blob generator used as a fast fixture. Three partition
//! schemes (`uniform`, `powerlaw`, `classimbalance`) deal a training set out
//! to participants. All randomness is seeded; splits are pure functions of
//! (dataset, plan).

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Environment variable naming the MNIST directory.
pub const DATA_DIR_ENV: &str = "FEDARENA_DATA_DIR";

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: bad IDX magic, expected {expected:#010x} got {found:#010x}")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },
    #[error("{path}: file shorter than its header claims")]
    TruncatedFile { path: PathBuf },
    #[error("feature rows ({rows}) and label count ({labels}) disagree")]
    DimensionMismatch { rows: usize, labels: usize },
    #[error("not enough data{}: need {needed}, have {available}", class.map(|c| format!(" for class {c}")).unwrap_or_default())]
    InsufficientData {
        needed: usize,
        available: usize,
        class: Option<u8>,
    },
    #[error("degenerate split plan: {0}")]
    DegeneratePlan(String),
}

/// A dataset slice: features in [0,1], one class ID per row.
#[derive(Debug, Clone, PartialEq)]
pub struct DataShard {
    features: Array2<f64>,
    labels: Vec<u8>,
}

impl DataShard {
    pub fn new(features: Array2<f64>, labels: Vec<u8>) -> Result<Self, DataError> {
        if features.nrows() != labels.len() {
            return Err(DataError::DimensionMismatch {
                rows: features.nrows(),
                labels: labels.len(),
            });
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Number of distinct classes, assuming dense IDs starting at 0.
    pub fn num_classes(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |m| m as usize + 1)
    }

    /// Copies the given rows into a new shard.
    pub fn select(&self, indices: &[usize]) -> Self {
        let features = self.features.select(Axis(0), indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Self { features, labels }
    }

    /// Replaces the labels wholesale; used by label poisoning.
    pub fn with_labels(&self, labels: Vec<u8>) -> Result<Self, DataError> {
        Self::new(self.features.clone(), labels)
    }
}

/// How a training set is dealt out to participants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitScheme {
    Uniform,
    Powerlaw,
    Classimbalance,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitPlan {
    pub scheme: SplitScheme,
    pub num_participants: usize,
    pub total_examples: usize,
    pub seed: u64,
    /// Smallest admissible shard; a plan that cannot honor it is rejected.
    pub min_shard_size: usize,
}

impl SplitPlan {
    fn validate(&self, available: usize) -> Result<(), DataError> {
        if self.num_participants < 2 {
            return Err(DataError::DegeneratePlan(format!(
                "need at least 2 participants, got {}",
                self.num_participants
            )));
        }
        if self.total_examples < self.num_participants {
            return Err(DataError::DegeneratePlan(format!(
                "{} examples cannot cover {} participants",
                self.total_examples, self.num_participants
            )));
        }
        if self.total_examples > available {
            return Err(DataError::InsufficientData {
                needed: self.total_examples,
                available,
                class: None,
            });
        }
        Ok(())
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    Ok(buf)
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32, DataError> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(DataError::TruncatedFile {
            path: path.to_path_buf(),
        });
    }
    Ok(u32::from_be_bytes(bytes[offset..end].try_into().unwrap()))
}

fn read_idx_images(path: &Path) -> Result<Array2<f64>, DataError> {
    let bytes = read_file(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != IMAGE_MAGIC {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            expected: IMAGE_MAGIC,
            found: magic,
        });
    }
    let count = be_u32(&bytes, 4, path)? as usize;
    let rows = be_u32(&bytes, 8, path)? as usize;
    let cols = be_u32(&bytes, 12, path)? as usize;
    let dim = rows * cols;
    let body = &bytes[16..];
    if body.len() < count * dim {
        return Err(DataError::TruncatedFile {
            path: path.to_path_buf(),
        });
    }
    let data: Vec<f64> = body[..count * dim]
        .iter()
        .map(|&b| f64::from(b) / 255.0)
        .collect();
    Ok(Array2::from_shape_vec((count, dim), data).expect("shape checked above"))
}

fn read_idx_labels(path: &Path) -> Result<Vec<u8>, DataError> {
    let bytes = read_file(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != LABEL_MAGIC {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            expected: LABEL_MAGIC,
            found: magic,
        });
    }
    let count = be_u32(&bytes, 4, path)? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(DataError::TruncatedFile {
            path: path.to_path_buf(),
        });
    }
    Ok(body[..count].to_vec())
}

/// MNIST directory resolution: explicit argument, else `FEDARENA_DATA_DIR`,
/// else `data/mnist` under the working directory.
pub fn default_data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data/mnist"))
}

/// Reads the four standard IDX files. Pixels are scaled to [0,1].
pub fn load_mnist(dir: &Path) -> Result<(DataShard, DataShard), DataError> {
    let train = DataShard::new(
        read_idx_images(&dir.join("train-images-idx3-ubyte"))?,
        read_idx_labels(&dir.join("train-labels-idx1-ubyte"))?,
    )?;
    let test = DataShard::new(
        read_idx_images(&dir.join("t10k-images-idx3-ubyte"))?,
        read_idx_labels(&dir.join("t10k-labels-idx1-ubyte"))?,
    )?;
    Ok((train, test))
}

/// Gaussian blobs: one mean per class on a sphere of radius 3, unit
/// covariance, labels dealt round-robin. Returns (train, test) split 80/20.
pub fn synth_classification(
    num_classes: usize,
    input_dim: usize,
    n: usize,
    seed: u64,
) -> (DataShard, DataShard) {
    assert!(num_classes >= 2 && num_classes <= 256, "class count out of range");
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut draw = move || -> f64 { StandardNormal.sample(&mut rng) };
    let mut means = Vec::with_capacity(num_classes);
    for _ in 0..num_classes {
        let mut m: Vec<f64> = (0..input_dim).map(|_| draw()).collect();
        let norm = m.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        for v in &mut m {
            *v *= 3.0 / norm;
        }
        means.push(m);
    }
    let mut data = Vec::with_capacity(n * input_dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % num_classes;
        for &mu in &means[class] {
            data.push(mu + draw());
        }
        labels.push(class as u8);
    }
    let features = Array2::from_shape_vec((n, input_dim), data).expect("shape by construction");
    let shard = DataShard { features, labels };
    let train_n = n * 8 / 10;
    let train = shard.select(&(0..train_n).collect::<Vec<_>>());
    let test = shard.select(&(train_n..n).collect::<Vec<_>>());
    (train, test)
}

/// Writes a shard as {u32 n, u32 dim, u32 classes, f32 rows, u8 labels},
/// little-endian throughout. Features are narrowed to f32.
pub fn write_fixture(shard: &DataShard, path: &Path) -> Result<(), DataError> {
    let mut bytes = Vec::with_capacity(12 + shard.len() * (shard.input_dim() * 4 + 1));
    bytes.extend_from_slice(&(shard.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&(shard.input_dim() as u32).to_le_bytes());
    bytes.extend_from_slice(&(shard.num_classes() as u32).to_le_bytes());
    for &v in shard.features.iter() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    bytes.extend_from_slice(&shard.labels);
    fs::write(path, bytes).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_fixture(path: &Path) -> Result<DataShard, DataError> {
    let bytes = read_file(path)?;
    let truncated = || DataError::TruncatedFile {
        path: path.to_path_buf(),
    };
    if bytes.len() < 12 {
        return Err(truncated());
    }
    let le = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let (n, dim) = (le(0), le(4));
    let body = &bytes[12..];
    if body.len() < n * dim * 4 + n {
        return Err(truncated());
    }
    let mut data = Vec::with_capacity(n * dim);
    for chunk in body[..n * dim * 4].chunks_exact(4) {
        data.push(f64::from(f32::from_le_bytes(chunk.try_into().unwrap())));
    }
    let labels = body[n * dim * 4..n * dim * 4 + n].to_vec();
    let features = Array2::from_shape_vec((n, dim), data).expect("length checked above");
    DataShard::new(features, labels)
}

/// IID split: a seeded shuffle picks `total_examples` rows, dealt round-robin
/// so shard sizes differ by at most one.
pub fn split_uniform(train: &DataShard, plan: &SplitPlan) -> Result<Vec<DataShard>, DataError> {
    assert_eq!(plan.scheme, SplitScheme::Uniform);
    plan.validate(train.len())?;
    let n = plan.num_participants;
    let pool = shuffled_indices(train.len(), plan.seed, plan.total_examples);
    let mut per: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, idx) in pool.iter().enumerate() {
        per[i % n].push(*idx);
    }
    check_min_size(&per, plan)?;
    Ok(per.iter().map(|ids| train.select(ids)).collect())
}

/// Power-law split: shard sizes follow round(c * i^a) with the exponent set
/// so the largest shard is about five times the smallest, repaired to sum to
/// the exact total. Sizes are strictly increasing with participant index.
pub fn split_powerlaw(train: &DataShard, plan: &SplitPlan) -> Result<Vec<DataShard>, DataError> {
    assert_eq!(plan.scheme, SplitScheme::Powerlaw);
    plan.validate(train.len())?;
    let n = plan.num_participants;
    let a = 5.0f64.ln() / (n as f64).ln();
    let weights: Vec<f64> = (1..=n).map(|i| (i as f64).powf(a)).collect();
    let c = plan.total_examples as f64 / weights.iter().sum::<f64>();
    let mut sizes: Vec<usize> = weights.iter().map(|w| (c * w).round().max(1.0) as usize).collect();
    for i in 1..n {
        if sizes[i] <= sizes[i - 1] {
            sizes[i] = sizes[i - 1] + 1;
        }
    }
    let assigned: usize = sizes.iter().sum();
    let total = plan.total_examples as i64;
    let diff = total - assigned as i64;
    let top = sizes[n - 1] as i64 + diff;
    if top <= sizes[n - 2] as i64 {
        return Err(DataError::DegeneratePlan(format!(
            "{} examples over {} participants leave no room for strictly increasing sizes",
            plan.total_examples, n
        )));
    }
    sizes[n - 1] = top as usize;
    let per = deal_contiguous(train.len(), plan, &sizes);
    check_min_size(&per, plan)?;
    Ok(per.iter().map(|ids| train.select(ids)).collect())
}

/// Label-skew split: participant i owns the lowest
/// floor(linspace(1, C, n))_i class IDs; every shard has the same size, with
/// each participant's examples balanced across its classes.
pub fn split_classimbalance(
    train: &DataShard,
    plan: &SplitPlan,
) -> Result<Vec<DataShard>, DataError> {
    assert_eq!(plan.scheme, SplitScheme::Classimbalance);
    plan.validate(train.len())?;
    let n = plan.num_participants;
    if plan.total_examples % n != 0 {
        return Err(DataError::DegeneratePlan(format!(
            "{} examples do not divide evenly among {} participants",
            plan.total_examples, n
        )));
    }
    let shard_size = plan.total_examples / n;
    let classes = train.num_classes();
    // Exact integer linspace: count_i = 1 + floor((C-1)*i / (n-1)).
    let class_counts: Vec<usize> = (0..n).map(|i| 1 + (classes - 1) * i / (n - 1)).collect();

    // One shuffled pool per class, consumed in participant order.
    let mut rng = ChaCha20Rng::seed_from_u64(plan.seed);
    let mut pools: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    for (idx, &label) in train.labels().iter().enumerate() {
        pools.entry(label).or_default().push(idx);
    }
    for pool in pools.values_mut() {
        pool.shuffle(&mut rng);
    }

    let mut shards = Vec::with_capacity(n);
    for &k in &class_counts {
        let mut ids = Vec::with_capacity(shard_size);
        for c in 0..k {
            let want = shard_size / k + usize::from(c < shard_size % k);
            let pool = pools.get_mut(&(c as u8)).ok_or(DataError::InsufficientData {
                needed: want,
                available: 0,
                class: Some(c as u8),
            })?;
            if pool.len() < want {
                return Err(DataError::InsufficientData {
                    needed: want,
                    available: pool.len(),
                    class: Some(c as u8),
                });
            }
            ids.extend(pool.drain(pool.len() - want..));
        }
        shards.push(train.select(&ids));
    }
    Ok(shards)
}

pub fn split(train: &DataShard, plan: &SplitPlan) -> Result<Vec<DataShard>, DataError> {
    match plan.scheme {
        SplitScheme::Uniform => split_uniform(train, plan),
        SplitScheme::Powerlaw => split_powerlaw(train, plan),
        SplitScheme::Classimbalance => split_classimbalance(train, plan),
    }
}

fn shuffled_indices(available: usize, seed: u64, take: usize) -> Vec<usize> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut all: Vec<usize> = (0..available).collect();
    all.shuffle(&mut rng);
    all.truncate(take);
    all
}

fn deal_contiguous(available: usize, plan: &SplitPlan, sizes: &[usize]) -> Vec<Vec<usize>> {
    let pool = shuffled_indices(available, plan.seed, plan.total_examples);
    let mut out = Vec::with_capacity(sizes.len());
    let mut cursor = 0;
    for &s in sizes {
        out.push(pool[cursor..cursor + s].to_vec());
        cursor += s;
    }
    out
}

fn check_min_size(per: &[Vec<usize>], plan: &SplitPlan) -> Result<(), DataError> {
    for (i, ids) in per.iter().enumerate() {
        if ids.len() < plan.min_shard_size {
            return Err(DataError::DegeneratePlan(format!(
                "participant {i} would hold {} examples, below the minimum {}",
                ids.len(),
                plan.min_shard_size
            )));
        }
    }
    Ok(())
}
