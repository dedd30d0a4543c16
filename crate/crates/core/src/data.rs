//! Domain datasets, synthetic partial-DA tasks, IDX digit loading and batching.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DomainDataset {
    samples: Tensor,
    labels: Option<Vec<usize>>,
    label_space: Vec<usize>,
    domain: Domain,
}

impl DomainDataset {
    pub fn new(
        samples: Tensor,
        labels: Option<Vec<usize>>,
        label_space: BTreeSet<usize>,
        domain: Domain,
    ) -> Result<Self> {
        let (n, _) = samples.dims2("DomainDataset")?;
        if n == 0 {
            return Err(Error::contract("a domain dataset needs at least one sample"));
        }
        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(Error::Dimension {
                    op: "DomainDataset",
                    lhs: samples.shape().to_vec(),
                    rhs: vec![labels.len()],
                });
            }
            if let Some(bad) = labels.iter().find(|y| !label_space.contains(y)) {
                return Err(Error::contract(format!(
                    "label {bad} outside label space {label_space:?}"
                )));
            }
        }
        Ok(DomainDataset {
            samples,
            labels,
            label_space: label_space.into_iter().collect(),
            domain,
        })
    }

    pub fn samples(&self) -> &Tensor {
        &self.samples
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Sorted class indices.
    pub fn label_space(&self) -> &[usize] {
        &self.label_space
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    /// Keeps only rows whose label is in `classes`; the label space shrinks to match.
    pub fn filter_classes(&self, classes: &BTreeSet<usize>) -> Result<Self> {
        let labels = self
            .labels
            .as_ref()
            .ok_or_else(|| Error::contract("cannot filter an unlabeled dataset by class"))?;
        let keep: Vec<usize> = (0..labels.len()).filter(|&i| classes.contains(&labels[i])).collect();
        let space: BTreeSet<usize> = self
            .label_space
            .iter()
            .copied()
            .filter(|c| classes.contains(c))
            .collect();
        DomainDataset::new(
            self.samples.select_rows(&keep)?,
            Some(keep.iter().map(|&i| labels[i]).collect()),
            space,
            self.domain,
        )
    }
}

/// A labeled source domain and an unlabeled target domain whose label space
/// is a strict subset of the source's. Target labels are held out and only
/// reachable through [`PdaTask::held_out_labels`].
#[derive(Clone, Debug, PartialEq)]
pub struct PdaTask {
    source: DomainDataset,
    target: DomainDataset,
    target_labels: Vec<usize>,
    target_label_space: Vec<usize>,
}

/// Everything training may see: source data with labels, target inputs only.
#[derive(Clone, Copy, Debug)]
pub struct TrainView<'a> {
    pub source_x: &'a Tensor,
    pub source_y: &'a [usize],
    pub target_x: &'a Tensor,
    pub num_classes: usize,
}

impl PdaTask {
    /// Both datasets must be labeled; the target labels are moved out of the
    /// target dataset.
    pub fn new(source: DomainDataset, target: DomainDataset) -> Result<Self> {
        let source_labels = source
            .labels()
            .ok_or_else(|| Error::contract("source domain must be labeled"))?;
        if source_labels.is_empty() {
            return Err(Error::contract("empty source domain"));
        }
        let target_labels = target
            .labels
            .clone()
            .ok_or_else(|| Error::contract("target labels are needed for evaluation"))?;
        if source.dim() != target.dim() {
            return Err(Error::Dimension {
                op: "PdaTask",
                lhs: source.samples.shape().to_vec(),
                rhs: target.samples.shape().to_vec(),
            });
        }
        let src: BTreeSet<usize> = source.label_space.iter().copied().collect();
        let tgt: BTreeSet<usize> = target.label_space.iter().copied().collect();
        if !(tgt.is_subset(&src) && tgt.len() < src.len()) {
            return Err(Error::contract(format!(
                "target label space {tgt:?} is not a strict subset of source label space {src:?}"
            )));
        }
        let target_label_space = target.label_space.clone();
        let target = DomainDataset {
            labels: None,
            ..target
        };
        Ok(PdaTask {
            source,
            target,
            target_labels,
            target_label_space,
        })
    }

    pub fn view(&self) -> TrainView<'_> {
        TrainView {
            source_x: &self.source.samples,
            source_y: self.source.labels().expect("checked at construction"),
            target_x: &self.target.samples,
            num_classes: self.num_classes(),
        }
    }

    pub fn source(&self) -> &DomainDataset {
        &self.source
    }

    /// Unlabeled target domain.
    pub fn target(&self) -> &DomainDataset {
        &self.target
    }

    /// Class-index extent of the source label space.
    pub fn num_classes(&self) -> usize {
        self.source.label_space.last().map_or(0, |&c| c + 1)
    }

    pub fn shared_classes(&self) -> &[usize] {
        &self.target_label_space
    }

    pub fn outlier_classes(&self) -> Vec<usize> {
        self.source
            .label_space
            .iter()
            .copied()
            .filter(|c| !self.target_label_space.contains(c))
            .collect()
    }

    /// Ground-truth target labels. Only evaluation code should call this.
    pub fn held_out_labels(&self) -> &[usize] {
        &self.target_labels
    }

    /// Same task with target labels replaced, for label-isolation checks.
    pub fn with_held_out_labels(&self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.target_labels.len() {
            return Err(Error::contract("replacement label count differs"));
        }
        let mut task = self.clone();
        task.target_labels = labels;
        Ok(task)
    }

    /// Per-dimension zero mean and unit variance using source statistics,
    /// applied to both domains.
    pub fn standardized(mut self) -> Self {
        let x = &self.source.samples;
        let (n, d) = (x.rows(), x.cols());
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(x.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for i in 0..n {
            for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std: Vec<f64> = var
            .iter()
            .map(|s| {
                let sd = (s / n as f64).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        for t in [&mut self.source.samples, &mut self.target.samples] {
            for row in t.data_mut().chunks_mut(d) {
                for ((v, m), s) in row.iter_mut().zip(&mean).zip(&std) {
                    *v = (*v - m) / s;
                }
            }
        }
        self
    }
}

/// Synthetic task: one isotropic Gaussian blob per source class; the target
/// keeps the first `num_target_classes` classes, translated by `shift` along
/// [`GaussianPdaSpec::shift_direction`], with per-dimension spread perturbed
/// in proportion to `shift`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianPdaSpec {
    pub num_source_classes: usize,
    pub num_target_classes: usize,
    pub dim: usize,
    pub shift: f64,
    pub n_per_class: usize,
    /// Distance of each class center from the origin.
    pub separation: f64,
    /// Per-dimension standard deviation of the source blobs.
    pub noise: f64,
    /// Share of the shift along a nuisance axis orthogonal to every class
    /// center, in [0, 1]; the rest points towards the outlier classes.
    pub nuisance: f64,
    /// Target per-dimension std is `noise·exp(spread_jitter·shift·z)`, z ~ N(0,1).
    pub spread_jitter: f64,
}

impl Default for GaussianPdaSpec {
    fn default() -> Self {
        GaussianPdaSpec {
            num_source_classes: 5,
            num_target_classes: 2,
            dim: 8,
            shift: 3.25,
            n_per_class: 200,
            separation: 4.0,
            noise: 1.0,
            nuisance: 0.6,
            spread_jitter: 0.05,
        }
    }
}

impl GaussianPdaSpec {
    pub fn validate(&self) -> Result<()> {
        if !(1 <= self.num_target_classes && self.num_target_classes < self.num_source_classes) {
            return Err(Error::contract(format!(
                "need 1 <= target classes ({}) < source classes ({})",
                self.num_target_classes, self.num_source_classes
            )));
        }
        if self.dim < 2 {
            return Err(Error::contract(format!("dim {} must be at least 2", self.dim)));
        }
        if self.n_per_class == 0 {
            return Err(Error::contract("n_per_class must be positive"));
        }
        if !(self.noise > 0.0 && self.separation >= 0.0 && self.shift.is_finite()) {
            return Err(Error::contract("noise must be positive, separation and shift finite"));
        }
        if !((0.0..=1.0).contains(&self.nuisance) && self.spread_jitter.is_finite()) {
            return Err(Error::contract("nuisance must lie in [0,1] and spread_jitter be finite"));
        }
        Ok(())
    }

    /// Centers `separation·e_c` while classes fit the axes; further classes
    /// sit at seeded random points on the same sphere.
    pub fn class_centers(&self, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = stream(seed, 0);
        (0..self.num_source_classes)
            .map(|c| {
                if c < self.dim {
                    let mut v = vec![0.0; self.dim];
                    v[c] = self.separation;
                    v
                } else {
                    let g: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                    let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                    g.iter().map(|x| x * self.separation / norm).collect()
                }
            })
            .collect()
    }

    /// Unit shift direction: `(1 − nuisance)·u + nuisance·v`, normalized,
    /// where `u` points from the shared-class centroid to the outlier
    /// centroid and `v` is the last axis with the span of the centers
    /// projected out. Without such an axis the nuisance part is dropped.
    pub fn shift_direction(&self, centers: &[Vec<f64>]) -> Vec<f64> {
        let centroid = |range: std::ops::Range<usize>| {
            let k = range.len() as f64;
            let mut m = vec![0.0; self.dim];
            for c in range {
                for (a, v) in m.iter_mut().zip(&centers[c]) {
                    *a += v / k;
                }
            }
            m
        };
        let shared = centroid(0..self.num_target_classes);
        let outlier = centroid(self.num_target_classes..self.num_source_classes);
        let towards: Vec<f64> = outlier.iter().zip(&shared).map(|(o, s)| o - s).collect();
        let towards = unit(&towards).unwrap_or_else(|| axis(self.dim, 0));
        let nuisance = unit(&nuisance_axis(centers, self.dim));
        let mixed: Vec<f64> = match nuisance {
            Some(v) => towards
                .iter()
                .zip(&v)
                .map(|(u, v)| (1.0 - self.nuisance) * u + self.nuisance * v)
                .collect(),
            None => towards.clone(),
        };
        unit(&mixed).unwrap_or(towards)
    }

    /// Per-dimension standard deviations of the target blobs.
    pub fn target_noise(&self, seed: u64) -> Vec<f64> {
        let mut rng = stream(seed, 3);
        (0..self.dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                self.noise * (self.spread_jitter * self.shift * z).exp()
            })
            .collect()
    }
}

fn unit(v: &[f64]) -> Option<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (norm > 1e-9).then(|| v.iter().map(|x| x / norm).collect())
}

fn axis(dim: usize, k: usize) -> Vec<f64> {
    let mut e = vec![0.0; dim];
    e[k] = 1.0;
    e
}

/// Last axis minus its projection on the span of `centers` (Gram-Schmidt).
fn nuisance_axis(centers: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for c in centers {
        let mut r = c.clone();
        for b in &basis {
            let dot: f64 = r.iter().zip(b).map(|(x, y)| x * y).sum();
            r.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        if let Some(b) = unit(&r) {
            basis.push(b);
        }
    }
    let mut v = axis(dim, dim - 1);
    for b in &basis {
        let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
        v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
    }
    v
}

fn stream(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

pub fn make_gaussian_pda(spec: &GaussianPdaSpec, seed: u64) -> Result<PdaTask> {
    spec.validate()?;
    let centers = spec.class_centers(seed);
    let dir = spec.shift_direction(&centers);
    let target_noise = spec.target_noise(seed);
    let d = spec.dim;

    let draw = |rng: &mut ChaCha8Rng, classes: usize, offset: &[f64], noise: &[f64]| {
        let mut data = Vec::with_capacity(classes * spec.n_per_class * d);
        let mut labels = Vec::with_capacity(classes * spec.n_per_class);
        for (c, center) in centers.iter().enumerate().take(classes) {
            for _ in 0..spec.n_per_class {
                for k in 0..d {
                    let z: f64 = StandardNormal.sample(rng);
                    data.push(center[k] + offset[k] + noise[k] * z);
                }
                labels.push(c);
            }
        }
        (data, labels)
    };

    let (xs, ys) = draw(
        &mut stream(seed, 1),
        spec.num_source_classes,
        &vec![0.0; d],
        &vec![spec.noise; d],
    );
    let offset: Vec<f64> = dir.iter().map(|u| u * spec.shift).collect();
    let (xt, yt) = draw(&mut stream(seed, 2), spec.num_target_classes, &offset, &target_noise);

    let source = DomainDataset::new(
        Tensor::new(vec![ys.len(), d], xs)?,
        Some(ys),
        (0..spec.num_source_classes).collect(),
        Domain::Source,
    )?;
    let target = DomainDataset::new(
        Tensor::new(vec![yt.len(), d], xt)?,
        Some(yt),
        (0..spec.num_target_classes).collect(),
        Domain::Target,
    )?;
    PdaTask::new(source, target)
}

fn read_u32_be(reader: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    reader.read_exact(&mut buf)?;
    Ok(u32::from_be_bytes(buf))
}

/// Loads an IDX image/label pair (`idx3-ubyte` images, `idx1-ubyte` labels).
/// Pixels are scaled to [0, 1] and flattened; with `class_filter` only the
/// listed classes are kept.
pub fn load_idx_digits(
    images_path: &Path,
    labels_path: &Path,
    class_filter: Option<&BTreeSet<usize>>,
    domain: Domain,
) -> Result<DomainDataset> {
    let mut images = BufReader::new(File::open(images_path)?);
    let magic = read_u32_be(&mut images)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad image magic {magic:#010x}",
            images_path.display()
        )));
    }
    let count = read_u32_be(&mut images)? as usize;
    let rows = read_u32_be(&mut images)? as usize;
    let cols = read_u32_be(&mut images)? as usize;
    let pixels = rows * cols;
    let mut raw = vec![0u8; count * pixels];
    images.read_exact(&mut raw)?;

    let mut labels_file = BufReader::new(File::open(labels_path)?);
    let magic = read_u32_be(&mut labels_file)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad label magic {magic:#010x}",
            labels_path.display()
        )));
    }
    let label_count = read_u32_be(&mut labels_file)? as usize;
    if label_count != count {
        return Err(Error::Format(format!(
            "{count} images but {label_count} labels"
        )));
    }
    let mut raw_labels = vec![0u8; count];
    labels_file.read_exact(&mut raw_labels)?;

    let labels: Vec<usize> = raw_labels.iter().map(|&b| b as usize).collect();
    let space: BTreeSet<usize> = labels.iter().copied().collect();
    let data = raw.iter().map(|&b| b as f64 / 255.0).collect();
    let ds = DomainDataset::new(Tensor::new(vec![count, pixels], data)?, Some(labels), space, domain)?;
    match class_filter {
        Some(filter) => ds.filter_classes(filter),
        None => Ok(ds),
    }
}

/// Seeded per-epoch permutation of `0..n`, cut into batches; the final short
/// batch is kept.
pub fn batches(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::contract("batch size must be at least 1"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    order.shuffle(&mut rng);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}
