//! Confidence-thresholded pseudo-labels from the source classifier.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{argmax, Tensor};

pub const DEFAULT_NU: f64 = 0.9;

/// Partition of a target batch into confidently labeled and remaining rows.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelSplit {
    pub labeled: Vec<usize>,
    /// Aligned with `labeled`.
    pub pseudo_labels: Vec<usize>,
    pub unlabeled: Vec<usize>,
}

impl PseudoLabelSplit {
    pub fn num_labeled(&self) -> usize {
        self.labeled.len()
    }

    /// Per-class counts of the assigned pseudo-labels.
    pub fn label_distribution(&self, num_classes: usize) -> Vec<usize> {
        let mut hist = vec![0; num_classes];
        for &y in &self.pseudo_labels {
            hist[y] += 1;
        }
        hist
    }
}

/// Row `i` is labeled iff `max_c probs[i, c] ≥ nu`; the label is the argmax.
pub fn assign(probs: &Tensor, nu: f64) -> Result<PseudoLabelSplit> {
    if !(0.0..=1.0).contains(&nu) {
        return Err(Error::contract(format!("threshold nu={nu} not in [0,1]")));
    }
    let (rows, _) = probs.dims2("assign")?;
    let mut split = PseudoLabelSplit::default();
    for i in 0..rows {
        let row = probs.row(i);
        let best = argmax(row);
        if row[best] >= nu {
            split.labeled.push(i);
            split.pseudo_labels.push(best);
        } else {
            split.unlabeled.push(i);
        }
    }
    Ok(split)
}

pub fn label_distribution(split: &PseudoLabelSplit, num_classes: usize) -> Vec<usize> {
    split.label_distribution(num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::random_tensor;
    use crate::tensor::Tape;
    use proptest::prelude::*;

    fn rows(r: &[&[f64]]) -> Tensor {
        Tensor::from_rows(r).unwrap()
    }

    #[test]
    fn threshold_examples() {
        let p = rows(&[&[0.02, 0.95, 0.03], &[0.5, 0.3, 0.2]]);
        let s = assign(&p, 0.9).unwrap();
        assert_eq!(s.labeled, vec![0]);
        assert_eq!(s.pseudo_labels, vec![1]);
        assert_eq!(s.unlabeled, vec![1]);

        let all = assign(&p, 0.0).unwrap();
        assert_eq!(all.labeled, vec![0, 1]);
        assert_eq!(all.pseudo_labels, vec![1, 0]);
    }

    #[test]
    fn threshold_is_inclusive() {
        let p = rows(&[&[0.9, 0.1]]);
        assert_eq!(assign(&p, 0.9).unwrap().labeled, vec![0]);
    }

    #[test]
    fn ties_go_low() {
        let p = rows(&[&[0.5, 0.5]]);
        assert_eq!(assign(&p, 0.5).unwrap().pseudo_labels, vec![0]);
    }

    #[test]
    fn nu_out_of_range() {
        let p = rows(&[&[0.5, 0.5]]);
        assert!(assign(&p, 1.5).is_err());
        assert!(assign(&p, -0.1).is_err());
    }

    #[test]
    fn distribution_examples() {
        assert_eq!(PseudoLabelSplit::default().label_distribution(3), vec![0, 0, 0]);
        let s = PseudoLabelSplit {
            labeled: vec![0, 3, 4],
            pseudo_labels: vec![2, 2, 2],
            unlabeled: vec![1, 2],
        };
        assert_eq!(label_distribution(&s, 5), vec![0, 0, 3, 0, 0]);
    }

    proptest! {
        #[test]
        fn partition_and_monotone_in_nu(seed in 0u64..1000, n in 0usize..30, lo in 0.0f64..1.0, gap in 0.0f64..0.5) {
            let tape = Tape::new();
            let logits = random_tensor(&[n, 4], seed);
            let logits = Tensor::new(vec![n, 4], logits.data().iter().map(|x| 4.0 * x).collect()).unwrap();
            let p = tape.constant(logits).softmax().unwrap().value();
            let hi = (lo + gap).min(1.0);
            let a = assign(&p, lo).unwrap();
            let b = assign(&p, hi).unwrap();

            let mut all: Vec<usize> = a.labeled.iter().chain(&a.unlabeled).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            prop_assert!(b.labeled.iter().all(|i| a.labeled.contains(i)));
            for (&i, &y) in a.labeled.iter().zip(&a.pseudo_labels) {
                prop_assert!(p.get(i, y) >= lo);
            }
            prop_assert_eq!(a.label_distribution(4).iter().sum::<usize>(), a.num_labeled());
            prop_assert_eq!(assign(&p, lo).unwrap(), a);
        }
    }
}
