//! Feature extractor and classifier heads.
//!
//! A [`ClassifierBank`] holds the shared feature extractor `F` and the heads
//! `C1` (source), `C2` (target-specific) and `C3..Cn` (auxiliary). All heads
//! share one architecture but are drawn independently.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{argmax_rows, Tape, Tensor, Var};

/// Standard deviation of the Gaussian weight initialization.
pub const INIT_STD: f64 = 0.05;

/// Negative-side slope of every LeakyReLU.
pub const LEAKY_SLOPE: f64 = 0.2;

const CHECKPOINT_FORMAT: &str = "pda-kit-checkpoint/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// Input width, hidden widths, output width.
    pub widths: Vec<usize>,
    pub slope: f64,
    /// Apply the activation after the last layer too (feature extractors do,
    /// classifier heads emit raw logits).
    pub activate_output: bool,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, slope: f64, activate_output: bool) -> Result<Self> {
        let spec = MlpSpec {
            widths,
            slope,
            activate_output,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::contract(format!(
                "an MLP needs at least input and output widths, got {:?}",
                self.widths
            )));
        }
        if self.widths.contains(&0) {
            return Err(Error::contract(format!("zero layer width in {:?}", self.widths)));
        }
        if !(self.slope > 0.0 && self.slope < 1.0) {
            return Err(Error::contract(format!("LeakyReLU slope {} not in (0,1)", self.slope)));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("validated")
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    spec: MlpSpec,
    params: Vec<Param>,
}

impl Mlp {
    /// Weights i.i.d. `N(0, INIT_STD²)`, biases zero.
    pub fn init(spec: MlpSpec, seed: u64) -> Result<Self> {
        Mlp::init_with(spec, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn init_with(spec: MlpSpec, rng: &mut ChaCha8Rng) -> Result<Self> {
        spec.validate()?;
        let normal = Normal::new(0.0, INIT_STD).expect("positive std");
        let mut params = Vec::with_capacity(2 * spec.num_layers());
        for (layer, pair) in spec.widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let weights = (0..fan_in * fan_out).map(|_| normal.sample(rng)).collect();
            params.push(Param {
                name: format!("layer{layer}.weight"),
                value: Tensor::new(vec![fan_in, fan_out], weights)?,
            });
            params.push(Param {
                name: format!("layer{layer}.bias"),
                value: Tensor::zeros(vec![1, fan_out]),
            });
        }
        Ok(Mlp { spec, params })
    }

    /// Builds a network from explicit parameters (weight, bias per layer).
    pub fn from_params(spec: MlpSpec, params: Vec<Param>) -> Result<Self> {
        spec.validate()?;
        if params.len() != 2 * spec.num_layers() {
            return Err(Error::contract(format!(
                "expected {} parameter tensors, got {}",
                2 * spec.num_layers(),
                params.len()
            )));
        }
        for (layer, pair) in spec.widths.windows(2).enumerate() {
            let w = &params[2 * layer].value;
            let b = &params[2 * layer + 1].value;
            if w.shape() != [pair[0], pair[1]] || b.shape() != [1, pair[1]] {
                return Err(Error::Dimension {
                    op: "from_params",
                    lhs: vec![pair[0], pair[1]],
                    rhs: w.shape().to_vec(),
                });
            }
        }
        Ok(Mlp { spec, params })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn num_weights(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Registers the parameters as differentiable leaves.
    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundMlp<'t> {
        BoundMlp {
            spec: self.spec.clone(),
            vars: self.params.iter().map(|p| tape.leaf(p.value.clone())).collect(),
        }
    }

    /// Registers the parameters as constants.
    pub fn freeze<'t>(&self, tape: &'t Tape) -> BoundMlp<'t> {
        BoundMlp {
            spec: self.spec.clone(),
            vars: self
                .params
                .iter()
                .map(|p| tape.constant(p.value.clone()))
                .collect(),
        }
    }

    /// Forward pass without gradient tracking.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let out = self.freeze(&tape).forward(tape.constant(x.clone()))?;
        Ok(out.value())
    }
}

/// An [`Mlp`] whose parameters live on a tape.
#[derive(Clone, Debug)]
pub struct BoundMlp<'t> {
    spec: MlpSpec,
    vars: Vec<Var<'t>>,
}

impl<'t> BoundMlp<'t> {
    pub fn from_vars(spec: MlpSpec, vars: Vec<Var<'t>>) -> Result<Self> {
        spec.validate()?;
        if vars.len() != 2 * spec.num_layers() {
            return Err(Error::contract(format!(
                "expected {} parameter variables, got {}",
                2 * spec.num_layers(),
                vars.len()
            )));
        }
        Ok(BoundMlp { spec, vars })
    }

    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }

    pub fn forward(&self, x: Var<'t>) -> Result<Var<'t>> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.spec.input_width() {
            return Err(Error::Dimension {
                op: "mlp_forward",
                lhs: shape,
                rhs: vec![self.spec.input_width()],
            });
        }
        let mut h = x;
        let last = self.spec.num_layers() - 1;
        for layer in 0..=last {
            h = h
                .matmul(self.vars[2 * layer])?
                .add_row(self.vars[2 * layer + 1])?;
            if layer < last || self.spec.activate_output {
                h = h.leaky_relu(self.spec.slope);
            }
        }
        Ok(h)
    }

    /// Gradients of the tape's backward root, aligned with the parameters.
    pub fn grads(&self) -> Result<Vec<Tensor>> {
        self.vars
            .iter()
            .map(|v| {
                v.grad()
                    .ok_or_else(|| Error::contract("no gradient recorded for a bound parameter"))
            })
            .collect()
    }
}

/// Logits and softmax probabilities of a head.
pub fn forward_head<'t>(head: &BoundMlp<'t>, features: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
    let logits = head.forward(features)?;
    let probs = logits.softmax()?;
    Ok((logits, probs))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BankSpec {
    pub input_dim: usize,
    /// Widths after the input layer, ending in the feature width.
    pub feature_widths: Vec<usize>,
    /// Hidden widths of every head between features and logits.
    pub head_hidden: Vec<usize>,
    pub num_classes: usize,
    /// Total number of heads, at least 3 (`C1`, `C2`, one auxiliary).
    pub num_heads: usize,
    pub slope: f64,
}

impl BankSpec {
    pub fn feature_spec(&self) -> MlpSpec {
        let mut widths = vec![self.input_dim];
        widths.extend(&self.feature_widths);
        MlpSpec {
            widths,
            slope: self.slope,
            activate_output: true,
        }
    }

    pub fn head_spec(&self) -> MlpSpec {
        let mut widths = vec![self.feature_dim()];
        widths.extend(&self.head_hidden);
        widths.push(self.num_classes);
        MlpSpec {
            widths,
            slope: self.slope,
            activate_output: false,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_widths.last().copied().unwrap_or(self.input_dim)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierBank {
    spec: BankSpec,
    seed: u64,
    pub features: Mlp,
    pub heads: Vec<Mlp>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    bank: ClassifierBank,
}

impl ClassifierBank {
    /// Network `k` (0 = F, then heads in order) draws from ChaCha stream `k`
    /// of `seed`, so every head gets an independent initialization.
    pub fn new(spec: BankSpec, seed: u64) -> Result<Self> {
        if spec.num_heads < 3 {
            return Err(Error::contract(format!(
                "a bank needs at least 3 heads, got {}",
                spec.num_heads
            )));
        }
        if spec.num_classes == 0 {
            return Err(Error::contract("a bank needs at least one class"));
        }
        let stream_rng = |k: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k);
            rng
        };
        let features = Mlp::init_with(spec.feature_spec(), &mut stream_rng(0))?;
        let heads = (0..spec.num_heads)
            .map(|h| Mlp::init_with(spec.head_spec(), &mut stream_rng(h as u64 + 1)))
            .collect::<Result<_>>()?;
        Ok(ClassifierBank {
            spec,
            seed,
            features,
            heads,
        })
    }

    pub fn spec(&self) -> &BankSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn source_head(&self) -> &Mlp {
        &self.heads[0]
    }

    pub fn target_head(&self) -> &Mlp {
        &self.heads[1]
    }

    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    pub fn forward_features(&self, x: &Tensor) -> Result<Tensor> {
        self.features.infer(x)
    }

    /// Softmax outputs of head `h` on precomputed features.
    pub fn head_probs(&self, h: usize, features: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let head = self.heads[h].freeze(&tape);
        let (_, probs) = forward_head(&head, tape.constant(features.clone()))?;
        Ok(probs.value())
    }

    /// Test-time rule: argmax of `C2(F(x))` per row, ties to the lowest class.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let feats = self.forward_features(x)?;
        Ok(argmax_rows(&self.head_probs(1, &feats)?))
    }

    pub fn heads_share_architecture(&self) -> bool {
        self.heads.windows(2).all(|p| p[0].spec() == p[1].spec())
            && self.heads.iter().all(|h| {
                h.params()
                    .iter()
                    .zip(self.heads[0].params())
                    .all(|(a, b)| a.value.shape() == b.value.shape())
            })
    }

    /// JSON checkpoint; `f64` values round-trip exactly.
    pub fn save(&self, path: &Path) -> Result<()> {
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            bank: self.clone(),
        };
        fs::write(path, serde_json::to_vec(&ckpt)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_slice(&fs::read(path)?)?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!(
                "unknown checkpoint format {:?}",
                ckpt.format
            )));
        }
        let bank = ckpt.bank;
        let features = Mlp::from_params(bank.spec.feature_spec(), bank.features.params)?;
        let heads = bank
            .heads
            .into_iter()
            .map(|h| Mlp::from_params(bank.spec.head_spec(), h.params))
            .collect::<Result<_>>()?;
        Ok(ClassifierBank {
            spec: bank.spec,
            seed: bank.seed,
            features,
            heads,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_gradients, random_tensor};

    fn small_bank() -> ClassifierBank {
        ClassifierBank::new(
            BankSpec {
                input_dim: 4,
                feature_widths: vec![6, 5],
                head_hidden: vec![3],
                num_classes: 3,
                num_heads: 3,
                slope: LEAKY_SLOPE,
            },
            11,
        )
        .unwrap()
    }

    #[test]
    fn init_is_deterministic() {
        let spec = MlpSpec::new(vec![5, 7, 3], LEAKY_SLOPE, false).unwrap();
        let a = Mlp::init(spec.clone(), 42).unwrap();
        let b = Mlp::init(spec.clone(), 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, Mlp::init(spec, 43).unwrap());
    }

    #[test]
    fn init_matches_stated_distribution() {
        let spec = MlpSpec::new(vec![400, 250], LEAKY_SLOPE, false).unwrap();
        let net = Mlp::init(spec, 7).unwrap();
        let w = net.params()[0].value.data();
        assert_eq!(w.len(), 100_000);
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        let std = (w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 3.0 * INIT_STD / n.sqrt(), "mean {mean}");
        assert!((std - INIT_STD).abs() < 0.02 * INIT_STD, "std {std}");
        assert!(net.params()[1].value.data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn spec_validation() {
        assert!(MlpSpec::new(vec![3], 0.2, false).is_err());
        assert!(MlpSpec::new(vec![3, 0, 2], 0.2, false).is_err());
        assert!(MlpSpec::new(vec![3, 2], 1.5, false).is_err());
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_features() {
        let bank = small_bank();
        let feats = bank.forward_features(&Tensor::zeros(vec![3, 4])).unwrap();
        assert!(feats.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_layer_passes_positive_inputs() {
        let spec = MlpSpec::new(vec![3, 3], LEAKY_SLOPE, true).unwrap();
        let net = Mlp::from_params(
            spec,
            vec![
                Param {
                    name: "w".into(),
                    value: Tensor::identity(3),
                },
                Param {
                    name: "b".into(),
                    value: Tensor::zeros(vec![1, 3]),
                },
            ],
        )
        .unwrap();
        let x = Tensor::from_rows(&[[0.5, 2.0, 3.0]]).unwrap();
        assert_eq!(net.infer(&x).unwrap(), x);
    }

    #[test]
    fn width_mismatch_is_a_dimension_error() {
        let bank = small_bank();
        assert!(matches!(
            bank.forward_features(&Tensor::zeros(vec![2, 5])),
            Err(Error::Dimension { .. })
        ));
        assert!(matches!(
            bank.head_probs(0, &Tensor::zeros(vec![2, 4])),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn zero_head_gives_uniform_probs() {
        let mut bank = small_bank();
        for p in bank.heads[0].params_mut() {
            p.value.data_mut().fill(0.0);
        }
        let probs = bank.head_probs(0, &random_tensor(&[4, 5], 3)).unwrap();
        assert!(probs.data().iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn probs_on_simplex_and_argmax_agrees_with_logits() {
        let bank = small_bank();
        let feats = random_tensor(&[20, 5], 9);
        let probs = bank.head_probs(2, &feats).unwrap();
        for i in 0..probs.rows() {
            let s: f64 = probs.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        let logits = bank.heads[2].infer(&feats).unwrap();
        assert_eq!(argmax_rows(&probs), argmax_rows(&logits));
    }

    #[test]
    fn heads_are_independent_but_alike() {
        let bank = small_bank();
        assert!(bank.heads_share_architecture());
        assert_ne!(bank.heads[0].params(), bank.heads[1].params());
        assert_ne!(bank.heads[1].params(), bank.heads[2].params());
    }

    #[test]
    fn forward_is_bit_reproducible() {
        let x = random_tensor(&[7, 4], 5);
        assert_eq!(small_bank().predict(&x).unwrap(), small_bank().predict(&x).unwrap());
        let a = small_bank().forward_features(&x).unwrap();
        let b = small_bank().forward_features(&x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mean_feature_gradient_matches_finite_differences() {
        let bank = small_bank();
        let x = random_tensor(&[6, 4], 8);
        let spec = bank.features.spec().clone();
        let inputs: Vec<Tensor> = bank.features.params().iter().map(|p| p.value.clone()).collect();
        let err = check_gradients(&inputs, |tape, vars| {
            let net = BoundMlp::from_vars(spec.clone(), vars.to_vec())?;
            net.forward(tape.constant(x.clone()))?.mean()
        })
        .unwrap();
        assert!(err < 1e-6, "rel err {err}");
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bank.json");
        let bank = small_bank();
        bank.save(&path).unwrap();
        let loaded = ClassifierBank::load(&path).unwrap();
        assert_eq!(loaded, bank);
        for (a, b) in loaded.features.params().iter().zip(bank.features.params()) {
            for (x, y) in a.value.data().iter().zip(b.value.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn checkpoint_rejects_foreign_format() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, r#"{"format":"other","bank":null}"#).unwrap();
        assert!(ClassifierBank::load(&path).is_err());
    }
}
