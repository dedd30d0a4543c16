//! Classification and regularization losses as differentiable scalars.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tensor, Var};

/// Probabilities are clamped here before taking logs.
pub const LOG_FLOOR: f64 = 1e-12;

pub const DEFAULT_BETA: f64 = 0.1;
pub const DEFAULT_GAMMA: f64 = 0.4;

fn check_labels(probs: &Var<'_>, labels: &[usize], op: &'static str) -> Result<(usize, usize)> {
    let shape = probs.shape();
    let (n, c) = match shape.as_slice() {
        &[n, c] => (n, c),
        _ => {
            return Err(Error::Rank {
                op,
                expected: 2,
                shape,
            })
        }
    };
    if labels.len() != n {
        return Err(Error::Dimension {
            op,
            lhs: shape,
            rhs: vec![labels.len()],
        });
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::Index {
            op,
            index: bad,
            extent: c,
        });
    }
    Ok((n, c))
}

/// `−(1/n) Σ_i w[y_i] · ln p[i, y_i]`, normalized by the batch size.
pub fn weighted_source_ce<'t>(probs: Var<'t>, labels: &[usize], w: &[f64]) -> Result<Var<'t>> {
    let (n, c) = check_labels(&probs, labels, "weighted_source_ce")?;
    if w.len() != c {
        return Err(Error::Dimension {
            op: "weighted_source_ce",
            lhs: probs.shape(),
            rhs: vec![w.len()],
        });
    }
    if n == 0 {
        return Err(Error::contract("weighted source loss on an empty batch"));
    }
    let sample_w = Tensor::new(vec![n, 1], labels.iter().map(|&y| w[y]).collect())?;
    let picked = probs.pick_per_row(labels)?.log_clamped(LOG_FLOOR);
    Ok(picked
        .mul(probs.tape().constant(sample_w))?
        .sum()
        .scale(-1.0 / n as f64))
}

/// Mean cross-entropy against pseudo-labels. An empty batch yields an exact
/// zero constant that contributes no gradient.
pub fn target_ce<'t>(probs: Var<'t>, pseudo_labels: &[usize]) -> Result<Var<'t>> {
    let (n, _) = check_labels(&probs, pseudo_labels, "target_ce")?;
    if n == 0 {
        return Ok(probs.tape().constant(Tensor::scalar(0.0)));
    }
    Ok(probs
        .pick_per_row(pseudo_labels)?
        .log_clamped(LOG_FLOOR)
        .sum()
        .scale(-1.0 / n as f64))
}

/// `(1/n) Σ_j ‖p_a(·|x_j) − p_b(·|x_j)‖²`; both operands receive gradients.
pub fn consistency<'t>(probs_a: Var<'t>, probs_b: Var<'t>) -> Result<Var<'t>> {
    let (sa, sb) = (probs_a.shape(), probs_b.shape());
    if sa != sb || sa.len() != 2 {
        return Err(Error::Dimension {
            op: "consistency",
            lhs: sa,
            rhs: sb,
        });
    }
    if sa[0] == 0 {
        return Err(Error::contract("consistency loss on an empty batch"));
    }
    Ok(probs_a.sub(probs_b)?.sq_l2_norm().scale(1.0 / sa[0] as f64))
}

/// Consistency summed over ordered pairs `m1 ≠ m2`, so each unordered pair
/// counts twice.
pub fn multi_consistency<'t>(probs: &[Var<'t>]) -> Result<Var<'t>> {
    if probs.len() < 2 {
        return Err(Error::contract(format!(
            "multi-classifier consistency needs at least 2 heads, got {}",
            probs.len()
        )));
    }
    let mut total: Option<Var<'t>> = None;
    for (m1, &a) in probs.iter().enumerate() {
        for (m2, &b) in probs.iter().enumerate() {
            if m1 == m2 {
                continue;
            }
            let term = consistency(a, b)?;
            total = Some(match total {
                Some(t) => t.add(term)?,
                None => term,
            });
        }
    }
    Ok(total.expect("at least one pair"))
}

/// Per-term values of the overall objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_wce_s: f64,
    pub l_ce_t: f64,
    pub l_con: f64,
    pub l_swd: f64,
    pub total: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl LossBreakdown {
    pub fn from_parts(l_wce_s: f64, l_ce_t: f64, l_con: f64, l_swd: f64, beta: f64, gamma: f64) -> Self {
        LossBreakdown {
            l_wce_s,
            l_ce_t,
            l_con,
            l_swd,
            total: l_wce_s + l_ce_t + beta * l_con + gamma * l_swd,
            beta,
            gamma,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LossComponents<'t> {
    pub l_wce_s: Var<'t>,
    pub l_ce_t: Var<'t>,
    pub l_con: Var<'t>,
    pub l_swd: Var<'t>,
}

/// `L = (L_wce + L_ce_t) + β·L_con + γ·L_swd`.
pub fn total_loss<'t>(c: LossComponents<'t>, beta: f64, gamma: f64) -> Result<(Var<'t>, LossBreakdown)> {
    if !(beta >= 0.0 && gamma >= 0.0) {
        return Err(Error::contract(format!(
            "trade-off weights must be non-negative, got beta={beta}, gamma={gamma}"
        )));
    }
    let total = c
        .l_wce_s
        .add(c.l_ce_t)?
        .add(c.l_con.scale(beta))?
        .add(c.l_swd.scale(gamma))?;
    let breakdown = LossBreakdown::from_parts(
        c.l_wce_s.item()?,
        c.l_ce_t.item()?,
        c.l_con.item()?,
        c.l_swd.item()?,
        beta,
        gamma,
    );
    Ok((total, breakdown))
}
