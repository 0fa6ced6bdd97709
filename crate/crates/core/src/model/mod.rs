//! The assembled model: configuration, named parameters, featurization of
//! raw inputs, batched forward passes and gradient checking.

mod config;
mod params;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::chem::{parse_smiles, SmilesError};
use crate::drug_encoder::{encode_drug, DrugEncoding};
use crate::fusion_head::{fuse_with_mode, head, update_running_stats, HeadStats};
use crate::graph::{build_graph, random_sign_flip, GraphError, MolecularGraph};
use crate::protein_encoder::{encode_protein, encode_sequence, ProteinSequenceEncoding, SequenceError};
use crate::tensor::{GradCheckReport, Real, Tape, Tensor, TensorError, Var};

pub use config::ModelConfig;
pub use params::{Bound, Params};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing parameter '{0}'")]
    MissingParam(String),
    #[error("{what}: expected shape {expected:?}, got {got:?}")]
    DimensionMismatch {
        what: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("incompatible featurization: {0}")]
    VersionMismatch(String),
    #[error("graph has no virtual node but the model reads out from one")]
    MissingVirtualNode,
    #[error("empty batch")]
    EmptyBatch,
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Smiles(#[from] SmilesError),
    #[error(transparent)]
    Sequence(#[from] SequenceError),
}

/// Training mode draws dropout masks and positional-encoding sign flips
/// from `rng`; evaluation mode is deterministic.
pub enum Mode<'a> {
    Eval,
    Train { rng: &'a mut dyn RngCore },
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train { .. })
    }
}

/// Parses and featurizes a SMILES string as `cfg` expects: virtual node if
/// enabled, positional encoding columns if enabled.
pub fn featurize_smiles(smiles: &str, cfg: &ModelConfig) -> Result<MolecularGraph, ModelError> {
    let mol = parse_smiles(smiles)?;
    let graph = build_graph(&mol, cfg.virtual_node)?;
    let k = cfg.effective_pe_dim();
    Ok(if k > 0 {
        graph.with_positional_encoding(k)?
    } else {
        graph
    })
}

pub fn featurize_protein(sequence: &str, cfg: &ModelConfig) -> Result<ProteinSequenceEncoding, ModelError> {
    Ok(encode_sequence(sequence, cfg.protein_len)?)
}

/// One featurized drug–target pair.
#[derive(Clone, Copy, Debug)]
pub struct Sample<'a> {
    pub drug: &'a MolecularGraph,
    pub protein: &'a ProteinSequenceEncoding,
}

/// Tape handles produced by [`Vidta::forward`].
#[derive(Debug)]
pub struct ForwardPass<T> {
    /// `[batch × 1]`.
    pub predictions: Var,
    pub drugs: Vec<DrugEncoding>,
    /// `[batch × d_model]` drug and protein embeddings.
    pub drug_embeddings: Var,
    pub protein_embeddings: Var,
    pub fused: Var,
    pub head_stats: HeadStats<T>,
}

/// Loss, per-parameter gradients (aligned with `params.trainable`; `None`
/// when a parameter did not influence the loss) and batch-norm statistics.
#[derive(Debug)]
pub struct StepOutput<T> {
    pub loss: T,
    pub grads: Vec<Option<Tensor<T>>>,
    pub head_stats: HeadStats<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vidta<T> {
    pub config: ModelConfig,
    pub params: Params<T>,
}

impl<T: Real> Vidta<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let params = Params::init(&config, seed);
        Ok(Vidta { config, params })
    }

    pub fn from_params(config: ModelConfig, params: Params<T>) -> Result<Self, ModelError> {
        config.validate()?;
        params.check_layout(&config)?;
        Ok(Vidta { config, params })
    }

    pub fn cast<U: Real>(&self) -> Vidta<U> {
        Vidta {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    /// Records a forward pass over `samples` on `tape`.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        samples: &[Sample<'_>],
        mode: &mut Mode<'_>,
    ) -> Result<ForwardPass<T>, ModelError> {
        if samples.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let cfg = &self.config;
        let mut drugs = Vec::with_capacity(samples.len());
        let mut proteins = Vec::with_capacity(samples.len());
        for s in samples {
            let pe = match mode {
                Mode::Train { rng } if cfg.effective_pe_dim() > 0 => {
                    random_sign_flip(&s.drug.positional_encoding, &mut **rng)
                }
                _ => s.drug.positional_encoding.clone(),
            };
            drugs.push(encode_drug(tape, bound, cfg, s.drug, &pe, mode)?);
            proteins.push(encode_protein(tape, bound, cfg, s.protein)?);
        }
        let ed_rows: Vec<Var> = drugs.iter().map(|d| d.embedding).collect();
        let drug_embeddings = tape.stack_rows(&ed_rows)?;
        let protein_embeddings = tape.stack_rows(&proteins)?;
        let fused = fuse_with_mode(tape, bound, cfg.fusion, drug_embeddings, protein_embeddings)?;
        let (predictions, head_stats) = head(tape, bound, &self.params, cfg, fused, mode.is_train())?;
        Ok(ForwardPass {
            predictions,
            drugs,
            drug_embeddings,
            protein_embeddings,
            fused,
            head_stats,
        })
    }

    /// Deterministic predictions, one per sample.
    pub fn predict(&self, samples: &[Sample<'_>]) -> Result<Vec<T>, ModelError> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let fp = self.forward(&mut tape, &bound, samples, &mut Mode::Eval)?;
        Ok(tape.value(fp.predictions).data().to_vec())
    }

    /// Mean squared error over the batch and its gradient.
    pub fn loss_and_grads(
        &self,
        samples: &[Sample<'_>],
        targets: &[T],
        mode: &mut Mode<'_>,
    ) -> Result<StepOutput<T>, ModelError> {
        if samples.len() != targets.len() {
            return Err(ModelError::DimensionMismatch {
                what: "targets".into(),
                expected: vec![samples.len()],
                got: vec![targets.len()],
            });
        }
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, true);
        let fp = self.forward(&mut tape, &bound, samples, mode)?;
        let target = tape.constant(Tensor::new(vec![targets.len(), 1], targets.to_vec())?);
        let loss = tape.mse_loss(fp.predictions, target)?;
        let mut grads = tape.backward(loss)?;
        let per_param = self
            .params
            .trainable
            .keys()
            .map(|name| bound.var(name).map(|v| grads.take(v)))
            .collect::<Result<_, _>>()?;
        Ok(StepOutput {
            loss: tape.value(loss).data()[0],
            grads: per_param,
            head_stats: fp.head_stats,
        })
    }

    /// Loss only, without gradient bookkeeping. In training mode the masks
    /// come from a fresh generator seeded with `seed`.
    pub fn loss(&self, samples: &[Sample<'_>], targets: &[T], train_seed: Option<u64>) -> Result<T, ModelError> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let mut rng;
        let mut mode = match train_seed {
            Some(seed) => {
                rng = ChaCha8Rng::seed_from_u64(seed);
                Mode::Train { rng: &mut rng }
            }
            None => Mode::Eval,
        };
        let fp = self.forward(&mut tape, &bound, samples, &mut mode)?;
        let target = tape.constant(Tensor::new(vec![targets.len(), 1], targets.to_vec())?);
        let loss = tape.mse_loss(fp.predictions, target)?;
        Ok(tape.value(loss).data()[0])
    }

    /// Folds training-mode batch statistics into the running estimates.
    pub fn update_running_stats(&mut self, stats: &HeadStats<T>) -> Result<(), ModelError> {
        update_running_stats(&mut self.params, stats, self.config.batch_norm_momentum)
    }
}

/// Settings for [`check_gradients`].
#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Lower bound on the relative-error denominator.
    pub floor: f64,
    /// Entries checked per parameter array, evenly spaced; `None` checks all.
    pub max_per_param: Option<usize>,
    /// Seed for dropout and sign flips; `None` checks evaluation mode.
    pub train_seed: Option<u64>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            floor: 1e-6,
            max_per_param: None,
            train_seed: None,
        }
    }
}

fn probe_indices(len: usize, max: Option<usize>) -> Vec<usize> {
    match max {
        Some(m) if m < len => {
            let m = m.max(1);
            (0..m).map(|i| i * len / m).collect()
        }
        _ => (0..len).collect(),
    }
}

/// Compares backpropagated gradients of the batch loss against central
/// differences, parameter by parameter.
pub fn check_gradients(
    model: &Vidta<f64>,
    samples: &[Sample<'_>],
    targets: &[f64],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, ModelError> {
    let analytic = {
        let mut rng;
        let mut mode = match opts.train_seed {
            Some(seed) => {
                rng = ChaCha8Rng::seed_from_u64(seed);
                Mode::Train { rng: &mut rng }
            }
            None => Mode::Eval,
        };
        model.loss_and_grads(samples, targets, &mut mode)?.grads
    };
    let mut probe = model.clone();
    let mut report = GradCheckReport::default();
    let names: Vec<String> = model.params.trainable.keys().cloned().collect();
    for (pi, name) in names.iter().enumerate() {
        let len = model.params.trainable[pi].len();
        for idx in probe_indices(len, opts.max_per_param) {
            let orig = model.params.trainable[pi].data()[idx];
            probe.params.trainable[pi].data_mut()[idx] = orig + opts.eps;
            let plus = probe.loss(samples, targets, opts.train_seed)?;
            probe.params.trainable[pi].data_mut()[idx] = orig - opts.eps;
            let minus = probe.loss(samples, targets, opts.train_seed)?;
            probe.params.trainable[pi].data_mut()[idx] = orig;
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let a = analytic[pi].as_ref().map_or(0.0, |g| g.data()[idx]);
            report.record(name, idx, a, numeric, opts.floor);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_samples(cfg: &ModelConfig) -> (Vec<MolecularGraph>, Vec<ProteinSequenceEncoding>) {
        let drugs = ["CCO", "c1ccccc1O", "CC(=O)N"]
            .iter()
            .map(|s| featurize_smiles(s, cfg).unwrap())
            .collect();
        let prots = ["MKVLAG", "GGSWY", "MKT"]
            .iter()
            .map(|s| featurize_protein(s, cfg).unwrap())
            .collect();
        (drugs, prots)
    }

    #[test]
    fn predict_is_deterministic_and_batch_independent() {
        let cfg = ModelConfig::toy();
        let model = Vidta::<f64>::new(cfg.clone(), 7).unwrap();
        let (d, p) = toy_samples(&cfg);
        let samples: Vec<Sample> = d.iter().zip(&p).map(|(d, p)| Sample { drug: d, protein: p }).collect();
        let all = model.predict(&samples).unwrap();
        assert_eq!(all, model.predict(&samples).unwrap());
        for (i, s) in samples.iter().enumerate() {
            let one = model.predict(std::slice::from_ref(s)).unwrap();
            assert!((one[0] - all[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn train_mode_is_stochastic_but_seeded() {
        let cfg = ModelConfig::toy();
        let model = Vidta::<f64>::new(cfg.clone(), 7).unwrap();
        let (d, p) = toy_samples(&cfg);
        let samples: Vec<Sample> = d.iter().zip(&p).map(|(d, p)| Sample { drug: d, protein: p }).collect();
        let t = [1.0, 2.0, 3.0];
        let a = model.loss(&samples, &t, Some(1)).unwrap();
        assert_eq!(a, model.loss(&samples, &t, Some(1)).unwrap());
        assert_ne!(a, model.loss(&samples, &t, Some(2)).unwrap());
    }

    #[test]
    fn empty_batch_is_rejected() {
        let model = Vidta::<f32>::new(ModelConfig::toy(), 0).unwrap();
        assert!(matches!(model.predict(&[]), Err(ModelError::EmptyBatch)));
    }

    #[test]
    fn small_gradient_check() {
        let cfg = ModelConfig::toy();
        let mut model = Vidta::<f64>::new(cfg.clone(), 3).unwrap();
        model.params.jitter(1, 0.05);
        let (d, p) = toy_samples(&cfg);
        let samples: Vec<Sample> = d.iter().zip(&p).map(|(d, p)| Sample { drug: d, protein: p }).collect();
        let opts = GradCheckOptions {
            max_per_param: Some(3),
            ..Default::default()
        };
        let r = check_gradients(&model, &samples, &[0.5, -0.2, 1.0], &opts).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn small_gradient_check_in_training_mode() {
        let cfg = ModelConfig::toy();
        let mut model = Vidta::<f64>::new(cfg.clone(), 3).unwrap();
        model.params.jitter(1, 0.05);
        let (d, p) = toy_samples(&cfg);
        let samples: Vec<Sample> = d.iter().zip(&p).map(|(d, p)| Sample { drug: d, protein: p }).collect();
        // batch statistics over three samples curve the loss sharply: a
        // smaller step keeps truncation error down, and biases feeding a
        // batch norm have exactly zero gradient, so compare those absolutely
        let opts = GradCheckOptions {
            eps: 1e-6,
            floor: 1e-4,
            max_per_param: Some(3),
            train_seed: Some(5),
        };
        let r = check_gradients(&model, &samples, &[0.5, -0.2, 1.0], &opts).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }
}
