//! Non-IID dataset construction: synthetic rotated Gaussian cluster tasks,
//! the class-subset split scheme, mini-batch sampling, and an IDX-format
//! loader.
//!
//! All generation is a pure function of its spec and RNG; the harness
//! derives the RNG from the master seed so datasets are reproducible.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::Batch;

/// Fraction of each device's data carved off as its test split,
/// stratified by class.
pub const TEST_FRACTION: f64 = 0.2;

/// Features with integer class labels.
#[derive(Debug, Clone)]
pub struct LabeledSet {
    pub features: Matrix,
    pub labels: Vec<usize>,
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// One device's private train/test data and its ground-truth cluster.
#[derive(Debug, Clone)]
pub struct DeviceDataset {
    pub train: LabeledSet,
    pub test: LabeledSet,
    pub ground_truth_cluster: usize,
}

/// Spec for the synthetic rotated-Gaussian cluster tasks.
///
/// Cluster `k`'s class means live on a circle in the first two feature
/// dimensions, rotated by `2*pi*k / num_clusters`; remaining dimensions are
/// pure noise. Adjacent clusters therefore need different decision
/// boundaries while sharing the same feature support.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GaussianTaskSpec {
    pub num_clusters: usize,
    pub devices_per_cluster: usize,
    pub samples_per_device: usize,
    pub input_dim: usize,
    pub num_classes: usize,
    /// Distance between the two opposite class means, in feature units.
    pub separation: f64,
    pub noise_std: f64,
}

impl GaussianTaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_clusters == 0 || self.devices_per_cluster == 0 {
            return Err(Error::InvalidConfig(
                "synthetic task needs at least one cluster and one device per cluster".into(),
            ));
        }
        if self.input_dim < 2 {
            return Err(Error::InvalidConfig(
                "synthetic task needs input_dim >= 2 for the rotation plane".into(),
            ));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidConfig(
                "synthetic task needs at least two classes".into(),
            ));
        }
        if self.samples_per_device < 5 {
            return Err(Error::InvalidConfig(
                "samples_per_device must be at least 5 to leave a test split".into(),
            ));
        }
        if !(self.separation.is_finite() && self.separation > 0.0)
            || !(self.noise_std.is_finite() && self.noise_std > 0.0)
        {
            return Err(Error::InvalidConfig(
                "separation and noise_std must be positive and finite".into(),
            ));
        }
        Ok(())
    }

    pub fn num_devices(&self) -> usize {
        self.num_clusters * self.devices_per_cluster
    }
}

/// Standard normal draw via Box-Muller; two uniforms per call keeps the
/// stream layout simple and reproducible.
fn sample_standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Generate the M device datasets for the rotated-Gaussian tasks.
pub fn synth_gaussian_tasks<R: Rng>(spec: &GaussianTaskSpec, rng: &mut R) -> Result<Vec<DeviceDataset>> {
    spec.validate()?;
    let radius = spec.separation / 2.0;
    let mut out = Vec::with_capacity(spec.num_devices());
    for cluster in 0..spec.num_clusters {
        let rotation = std::f64::consts::TAU * cluster as f64 / spec.num_clusters as f64;
        for _ in 0..spec.devices_per_cluster {
            let mut features = Matrix::zeros(spec.samples_per_device, spec.input_dim);
            let mut labels = Vec::with_capacity(spec.samples_per_device);
            for s in 0..spec.samples_per_device {
                let class = rng.gen_range(0..spec.num_classes);
                let angle = rotation + std::f64::consts::TAU * class as f64 / spec.num_classes as f64;
                let row = features.row_mut(s);
                row[0] = radius * angle.cos();
                row[1] = radius * angle.sin();
                for v in row.iter_mut() {
                    *v += spec.noise_std * sample_standard_normal(rng);
                }
                labels.push(class);
            }
            let (train, test) = split_train_test(&features, &labels, spec.num_classes, rng)?;
            out.push(DeviceDataset {
                train,
                test,
                ground_truth_cluster: cluster,
            });
        }
    }
    Ok(out)
}

/// Stratified train/test split; [`TEST_FRACTION`] of each class goes to test.
fn split_train_test<R: Rng>(
    features: &Matrix,
    labels: &[usize],
    num_classes: usize,
    rng: &mut R,
) -> Result<(LabeledSet, LabeledSet)> {
    let mut test_idx: Vec<usize> = Vec::new();
    let mut train_idx: Vec<usize> = Vec::new();
    for class in 0..num_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        members.shuffle(rng);
        let n_test = ((members.len() as f64) * TEST_FRACTION).round() as usize;
        test_idx.extend(&members[..n_test]);
        train_idx.extend(&members[n_test..]);
    }
    // Guarantee both splits are nonempty for any usable device.
    if test_idx.is_empty() && train_idx.len() >= 2 {
        test_idx.push(train_idx.pop().expect("nonempty"));
    }
    if train_idx.is_empty() {
        return Err(Error::InfeasibleSplit(
            "device has too few samples to form a train split".into(),
        ));
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok((gather(features, labels, &train_idx), gather(features, labels, &test_idx)))
}

fn gather(features: &Matrix, labels: &[usize], idx: &[usize]) -> LabeledSet {
    let mut f = Matrix::zeros(idx.len(), features.cols());
    let mut l = Vec::with_capacity(idx.len());
    for (r, &i) in idx.iter().enumerate() {
        f.row_mut(r).copy_from_slice(features.row(i));
        l.push(labels[i]);
    }
    LabeledSet {
        features: f,
        labels: l,
    }
}

/// Spec for the class-subset split over a labeled corpus.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ClusterTaskSpec {
    pub num_clusters: usize,
    pub devices_per_cluster: usize,
    pub classes_per_cluster: usize,
    pub total_classes: usize,
    /// Minimum number of classes any two clusters must share.
    pub min_overlap: usize,
}

impl ClusterTaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_clusters == 0 || self.devices_per_cluster == 0 {
            return Err(Error::InvalidConfig(
                "split needs at least one cluster and one device per cluster".into(),
            ));
        }
        if self.classes_per_cluster == 0 || self.classes_per_cluster > self.total_classes {
            return Err(Error::InvalidConfig(format!(
                "classes_per_cluster must lie in [1, {}], got {}",
                self.total_classes, self.classes_per_cluster
            )));
        }
        if self.min_overlap > self.classes_per_cluster {
            return Err(Error::InvalidConfig(format!(
                "min_overlap {} cannot exceed classes_per_cluster {}",
                self.min_overlap, self.classes_per_cluster
            )));
        }
        Ok(())
    }
}

/// Overlap of two windows of width `w` on a circle of `n` positions whose
/// starts are `d` apart.
fn window_overlap(n: usize, w: usize, d: usize) -> usize {
    let d = d % n;
    let direct = w.saturating_sub(d);
    let wrapped = (d + w).saturating_sub(n);
    direct + wrapped
}

/// Pick the generator stride: the largest spread whose windows stay distinct
/// and pairwise share at least `min_overlap` classes.
fn choose_stride(spec: &ClusterTaskSpec) -> Result<usize> {
    let n = spec.total_classes;
    let k = spec.num_clusters;
    if k == 1 {
        return Ok(0);
    }
    let max_stride = (n / k).max(1);
    for stride in (1..=max_stride).rev() {
        let starts_distinct = (1..k).all(|d| (d * stride) % n != 0);
        let overlap_ok = (1..k).all(|d| {
            window_overlap(n, spec.classes_per_cluster, (d * stride) % n) >= spec.min_overlap
        });
        if starts_distinct && overlap_ok {
            return Ok(stride);
        }
    }
    Err(Error::InfeasibleSplit(format!(
        "no stride gives {} clusters with {} classes each out of {} and pairwise overlap >= {}; \
         any two such class sets can share as few as {} classes",
        k,
        spec.classes_per_cluster,
        n,
        spec.min_overlap,
        (2 * spec.classes_per_cluster).saturating_sub(n)
    )))
}

/// Generate cluster class-sets by sliding a window over the seed-shuffled
/// class list, then partition the labeled samples onto devices.
///
/// Returns one sample-index list per device (device `k * devices_per_cluster
/// + j` belongs to cluster `k`) and the class-set of each cluster.
pub fn class_subset_split<R: Rng>(
    labels: &[usize],
    spec: &ClusterTaskSpec,
    rng: &mut R,
) -> Result<(Vec<Vec<usize>>, Vec<Vec<usize>>)> {
    spec.validate()?;
    let mut present = vec![false; spec.total_classes];
    for &l in labels {
        if l >= spec.total_classes {
            return Err(Error::IndexOutOfRange {
                context: "corpus label",
                index: l,
                limit: spec.total_classes,
            });
        }
        present[l] = true;
    }
    if present.iter().any(|p| !p) {
        return Err(Error::InfeasibleSplit(format!(
            "corpus must contain all {} classes",
            spec.total_classes
        )));
    }

    let stride = choose_stride(spec)?;
    let mut class_order: Vec<usize> = (0..spec.total_classes).collect();
    class_order.shuffle(rng);

    let mut class_sets: Vec<Vec<usize>> = Vec::with_capacity(spec.num_clusters);
    for k in 0..spec.num_clusters {
        let mut set: Vec<usize> = (0..spec.classes_per_cluster)
            .map(|j| class_order[(k * stride + j) % spec.total_classes])
            .collect();
        set.sort_unstable();
        class_sets.push(set);
    }

    let device_lists = partition_by_class_sets(labels, &class_sets, spec.devices_per_cluster, rng)?;
    Ok((device_lists, class_sets))
}

/// Partition samples onto devices given explicit cluster class-sets.
///
/// Samples of a class shared by several clusters are divided equally and
/// randomly between those clusters, then each cluster's pool is divided
/// equally and randomly among its devices, dropping the leftover samples
/// that cannot be spread evenly.
pub fn partition_by_class_sets<R: Rng>(
    labels: &[usize],
    class_sets: &[Vec<usize>],
    devices_per_cluster: usize,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    let num_clusters = class_sets.len();
    if num_clusters == 0 || devices_per_cluster == 0 {
        return Err(Error::InvalidConfig(
            "partition needs at least one cluster and one device per cluster".into(),
        ));
    }
    let max_class = labels.iter().copied().max().unwrap_or(0);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); max_class + 1];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }

    let mut cluster_pools: Vec<Vec<usize>> = vec![Vec::new(); num_clusters];
    for (class, members) in by_class.iter().enumerate() {
        let takers: Vec<usize> = (0..num_clusters)
            .filter(|&k| class_sets[k].contains(&class))
            .collect();
        if takers.is_empty() || members.is_empty() {
            continue;
        }
        let mut shuffled = members.clone();
        shuffled.shuffle(rng);
        // Round-robin chunks; shares differ by at most one sample.
        let q = shuffled.len() / takers.len();
        let r = shuffled.len() % takers.len();
        let mut cursor = 0;
        for (slot, &k) in takers.iter().enumerate() {
            let share = q + usize::from(slot < r);
            cluster_pools[k].extend(&shuffled[cursor..cursor + share]);
            cursor += share;
        }
    }

    let mut device_lists: Vec<Vec<usize>> = Vec::with_capacity(num_clusters * devices_per_cluster);
    for pool in cluster_pools.iter_mut() {
        pool.shuffle(rng);
        let per_device = pool.len() / devices_per_cluster;
        for d in 0..devices_per_cluster {
            let mut list = pool[d * per_device..(d + 1) * per_device].to_vec();
            list.sort_unstable();
            device_lists.push(list);
        }
    }
    Ok(device_lists)
}

/// Materialize device datasets from a corpus plus per-device index lists.
pub fn build_device_datasets<R: Rng>(
    features: &Matrix,
    labels: &[usize],
    device_indices: &[Vec<usize>],
    devices_per_cluster: usize,
    num_classes: usize,
    rng: &mut R,
) -> Result<Vec<DeviceDataset>> {
    let mut out = Vec::with_capacity(device_indices.len());
    for (device, indices) in device_indices.iter().enumerate() {
        if indices.is_empty() {
            return Err(Error::InfeasibleSplit(format!(
                "device {device} received no samples; corpus too small for the split"
            )));
        }
        let set = gather(features, labels, indices);
        let (train, test) = split_train_test(&set.features, &set.labels, num_classes, rng)?;
        out.push(DeviceDataset {
            train,
            test,
            ground_truth_cluster: device / devices_per_cluster,
        });
    }
    Ok(out)
}

/// Uniform without-replacement mini-batch from the device's train split.
pub fn sample_minibatch<R: Rng>(ds: &DeviceDataset, batch_size: usize, rng: &mut R) -> Result<Batch> {
    let n = ds.train.len();
    if batch_size == 0 || batch_size > n {
        return Err(Error::InvalidConfig(format!(
            "batch_size {batch_size} must lie in [1, {n}] for this device"
        )));
    }
    let picks = rand::seq::index::sample(rng, n, batch_size);
    let mut features = Matrix::zeros(batch_size, ds.train.features.cols());
    let mut labels = Vec::with_capacity(batch_size);
    for (r, i) in picks.iter().enumerate() {
        features.row_mut(r).copy_from_slice(ds.train.features.row(i));
        labels.push(ds.train.labels[i]);
    }
    Batch::new(features, labels)
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_be_u32(bytes: &[u8], offset: usize, path: &Path, what: &str) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::IdxFormat {
            path: path.to_path_buf(),
            offset: bytes.len() as u64,
            reason: format!("file truncated while reading {what}"),
        });
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

/// Load an IDX image/label file pair.
///
/// Validates the big-endian magic numbers (`0x00000803` images,
/// `0x00000801` labels), cross-checks the sample counts, and scales pixel
/// bytes by 1/255 into a `[count × rows*cols]` feature matrix.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<(Matrix, Vec<usize>)> {
    let images = read_file(images_path)?;
    let labels = read_file(labels_path)?;

    let magic = read_be_u32(&images, 0, images_path, "image magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::IdxFormat {
            path: images_path.to_path_buf(),
            offset: 0,
            reason: format!("bad image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        });
    }
    let count = read_be_u32(&images, 4, images_path, "image count")? as usize;
    let rows = read_be_u32(&images, 8, images_path, "image rows")? as usize;
    let cols = read_be_u32(&images, 12, images_path, "image cols")? as usize;
    let pixels = rows * cols;
    let expected = 16 + count * pixels;
    if images.len() != expected {
        return Err(Error::IdxFormat {
            path: images_path.to_path_buf(),
            offset: images.len().min(expected) as u64,
            reason: format!(
                "image payload is {} bytes, header implies {}",
                images.len() - 16.min(images.len()),
                count * pixels
            ),
        });
    }

    let lmagic = read_be_u32(&labels, 0, labels_path, "label magic")?;
    if lmagic != IDX_LABELS_MAGIC {
        return Err(Error::IdxFormat {
            path: labels_path.to_path_buf(),
            offset: 0,
            reason: format!("bad label magic {lmagic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        });
    }
    let lcount = read_be_u32(&labels, 4, labels_path, "label count")? as usize;
    if labels.len() != 8 + lcount {
        return Err(Error::IdxFormat {
            path: labels_path.to_path_buf(),
            offset: labels.len().min(8 + lcount) as u64,
            reason: format!(
                "label payload is {} bytes, header implies {}",
                labels.len() - 8.min(labels.len()),
                lcount
            ),
        });
    }
    if lcount != count {
        return Err(Error::IdxFormat {
            path: labels_path.to_path_buf(),
            offset: 4,
            reason: format!("label count {lcount} does not match image count {count}"),
        });
    }

    let mut features = Matrix::zeros(count, pixels);
    for i in 0..count {
        let src = &images[16 + i * pixels..16 + (i + 1) * pixels];
        for (v, &b) in features.row_mut(i).iter_mut().zip(src) {
            *v = f64::from(b) / 255.0;
        }
    }
    let labels = labels[8..].iter().map(|&b| b as usize).collect();
    Ok((features, labels))
}

/// Paths of an IDX image/label pair, as configured.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct IdxPaths {
    pub images: PathBuf,
    pub labels: PathBuf,
}
