//! Gaussian-kernel MMD estimators and the soft class-weight vector.
//!
//! All estimators share one biased (V-statistic) form over per-sample source
//! weights `a_i` with normalizer `z = Σ a_i`:
//!
//! ```text
//! D = 1/n_t² ΣΣ k(t_j, t_j') − 2/(n_t z) ΣΣ a_i k(t_j, s_i) + 1/z² ΣΣ a_i a_i' k(s_i, s_i')
//! ```
//!
//! Soft-weighted MMD takes `a_i = w[y_i]` from [`SoftWeightVector`], plain
//! MMD takes `a_i = 1`, and the prior-ratio WMMD takes `a_i = α[y_i]` from
//! hard pseudo-labels. Weights are constants on the tape.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tensor, Var};

/// Normalizers at or below this are treated as degenerate.
pub const MIN_WEIGHT_MASS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    bandwidth: f64,
}

impl KernelParams {
    pub fn new(bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::contract(format!("kernel bandwidth {bandwidth} must be positive")));
        }
        Ok(KernelParams { bandwidth })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }
}

impl Default for KernelParams {
    fn default() -> Self {
        KernelParams { bandwidth: 1.0 }
    }
}

/// Per-source-class weights on the probability simplex.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftWeightVector {
    weights: Vec<f64>,
}

impl SoftWeightVector {
    pub fn uniform(num_classes: usize) -> Self {
        SoftWeightVector {
            weights: vec![1.0 / num_classes as f64; num_classes],
        }
    }

    /// Column mean of the source classifier's target-domain probabilities.
    pub fn from_probs(probs_t: &Tensor) -> Result<Self> {
        let (rows, _) = probs_t.dims2("update_soft_weights")?;
        if rows == 0 {
            return Err(Error::contract("soft weights from an empty target set"));
        }
        Ok(SoftWeightVector {
            weights: probs_t.column_means()?,
        })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn on_simplex(&self, tol: f64) -> bool {
        self.weights.iter().all(|&w| w >= 0.0)
            && (self.weights.iter().sum::<f64>() - 1.0).abs() <= tol
    }

    pub fn l1_distance(&self, other: &SoftWeightVector) -> f64 {
        self.weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (a - b).abs())
            .sum()
    }
}

pub fn update_soft_weights(probs_t: &Tensor) -> Result<SoftWeightVector> {
    SoftWeightVector::from_probs(probs_t)
}

/// `k(a_i, b_j) = exp(−‖a_i − b_j‖² / (2σ²))`, shaped `m×n`.
pub fn gaussian_gram<'t>(a: Var<'t>, b: Var<'t>, params: KernelParams) -> Result<Var<'t>> {
    let inv = -1.0 / (2.0 * params.bandwidth * params.bandwidth);
    Ok(a.sq_dist(b)?.scale(inv).exp())
}

/// Biased weighted MMD² with one weight per source sample.
pub fn weighted_mmd<'t>(
    feat_s: Var<'t>,
    sample_weights: &[f64],
    feat_t: Var<'t>,
    params: KernelParams,
) -> Result<Var<'t>> {
    let tape = feat_s.tape();
    let n_s = feat_s.shape().first().copied().unwrap_or(0);
    let n_t = feat_t.shape().first().copied().unwrap_or(0);
    if n_s == 0 || n_t == 0 {
        return Err(Error::contract(format!(
            "MMD needs non-empty sample sets, got n_s={n_s}, n_t={n_t}"
        )));
    }
    if sample_weights.len() != n_s {
        return Err(Error::Dimension {
            op: "weighted_mmd",
            lhs: feat_s.shape(),
            rhs: vec![sample_weights.len()],
        });
    }
    let z: f64 = sample_weights.iter().sum();
    if z <= MIN_WEIGHT_MASS {
        return Err(Error::DegenerateWeights(z));
    }
    let a = tape.constant(Tensor::new(vec![n_s, 1], sample_weights.to_vec())?);
    let a_row = tape.constant(Tensor::new(vec![1, n_s], sample_weights.to_vec())?);

    let tt = gaussian_gram(feat_t, feat_t, params)?
        .sum()
        .scale(1.0 / (n_t * n_t) as f64);
    let ts = gaussian_gram(feat_t, feat_s, params)?
        .matmul(a)?
        .sum()
        .scale(2.0 / (n_t as f64 * z));
    let ss = a_row
        .matmul(gaussian_gram(feat_s, feat_s, params)?)?
        .matmul(a)?
        .scale(1.0 / (z * z));
    tt.sub(ts)?.add(ss)
}

fn per_sample_weights(labels_s: &[usize], class_weights: &[f64]) -> Result<Vec<f64>> {
    labels_s
        .iter()
        .map(|&y| {
            class_weights.get(y).copied().ok_or(Error::Index {
                op: "class_weights",
                index: y,
                extent: class_weights.len(),
            })
        })
        .collect()
}

/// Soft-weighted MMD: source sample `i` weighs `class_weights[labels_s[i]]`.
/// Any positive rescaling of the class weights gives the same value.
pub fn swmmd<'t>(
    feat_s: Var<'t>,
    labels_s: &[usize],
    feat_t: Var<'t>,
    class_weights: &[f64],
    params: KernelParams,
) -> Result<Var<'t>> {
    let weights = per_sample_weights(labels_s, class_weights)?;
    weighted_mmd(feat_s, &weights, feat_t, params)
}

/// Unweighted biased MMD².
pub fn mmd<'t>(feat_s: Var<'t>, feat_t: Var<'t>, params: KernelParams) -> Result<Var<'t>> {
    let n_s = feat_s.shape().first().copied().unwrap_or(0);
    weighted_mmd(feat_s, &vec![1.0; n_s], feat_t, params)
}

/// Prior-ratio class weights: target pseudo-label frequency over source
/// label frequency, zero for classes missing from either side.
pub fn prior_ratio_weights(labels_s: &[usize], pseudo_t: &[usize], num_classes: usize) -> Result<Vec<f64>> {
    let histogram = |labels: &[usize]| -> Result<Vec<f64>> {
        let mut h = vec![0.0; num_classes];
        for &y in labels {
            *h.get_mut(y).ok_or(Error::Index {
                op: "prior_ratio_weights",
                index: y,
                extent: num_classes,
            })? += 1.0;
        }
        Ok(h)
    };
    let src = histogram(labels_s)?;
    let tgt = histogram(pseudo_t)?;
    let (n_s, n_t) = (labels_s.len() as f64, pseudo_t.len() as f64);
    Ok(src
        .iter()
        .zip(&tgt)
        .map(|(&s, &t)| if s > 0.0 && t > 0.0 { (t / n_t) / (s / n_s) } else { 0.0 })
        .collect())
}

/// Class-weighted MMD with prior-ratio weights from hard target pseudo-labels.
pub fn wmmd<'t>(
    feat_s: Var<'t>,
    labels_s: &[usize],
    feat_t: Var<'t>,
    pseudo_t: &[usize],
    num_classes: usize,
    params: KernelParams,
) -> Result<Var<'t>> {
    let alpha = prior_ratio_weights(labels_s, pseudo_t, num_classes)?;
    swmmd(feat_s, labels_s, feat_t, &alpha, params)
}
