use std::collections::HashMap;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, ModelError};
use crate::chem::{ATOM_FEATURE_DIM, BOND_FEATURE_DIM};
use crate::protein_encoder::PROTEIN_VOCAB;
use crate::tensor::{Real, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug)]
enum Init {
    /// Uniform in ±√(6 / (fan_in + fan_out)).
    Glorot {
        fan_in: usize,
        fan_out: usize,
    },
    Zeros,
    Ones,
}

struct Spec {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

fn linear(specs: &mut Vec<Spec>, name: &str, fan_in: usize, fan_out: usize, bias: bool) {
    specs.push(Spec {
        name: format!("{name}.w"),
        shape: vec![fan_in, fan_out],
        init: Init::Glorot { fan_in, fan_out },
    });
    if bias {
        specs.push(Spec {
            name: format!("{name}.b"),
            shape: vec![fan_out],
            init: Init::Zeros,
        });
    }
}

fn norm(specs: &mut Vec<Spec>, name: &str, width: usize) {
    specs.push(Spec {
        name: format!("{name}.gain"),
        shape: vec![width],
        init: Init::Ones,
    });
    specs.push(Spec {
        name: format!("{name}.bias"),
        shape: vec![width],
        init: Init::Zeros,
    });
}

/// Trainable arrays in creation order, which is also checkpoint order.
fn trainable_specs(cfg: &ModelConfig) -> Vec<Spec> {
    let mut s = Vec::new();
    let d = cfg.d_model;
    let hd = cfg.heads * cfg.d_head;

    linear(&mut s, "drug.atom_in", ATOM_FEATURE_DIM, d, true);
    linear(&mut s, "drug.bond_in", BOND_FEATURE_DIM, d, true);
    if cfg.effective_pe_dim() > 0 {
        linear(&mut s, "drug.pe_in", cfg.pe_dim, d, true);
    }
    for l in 0..cfg.layers {
        let p = format!("drug.layer{l}");
        for m in ["w_q", "w_k", "w_v", "w_e"] {
            linear(&mut s, &format!("{p}.{m}"), d, hd, false);
        }
        linear(&mut s, &format!("{p}.o_h"), hd, d, true);
        linear(&mut s, &format!("{p}.o_e"), hd, d, true);
        for m in ["ffn_h1", "ffn_h2", "ffn_e1", "ffn_e2"] {
            linear(&mut s, &format!("{p}.{m}"), d, d, true);
        }
        for m in ["norm_h_in", "norm_h_out", "norm_e_in", "norm_e_out"] {
            norm(&mut s, &format!("{p}.{m}"), d);
        }
    }

    s.push(Spec {
        name: "protein.embedding".into(),
        shape: vec![PROTEIN_VOCAB, cfg.protein_embed],
        init: Init::Glorot {
            fan_in: PROTEIN_VOCAB,
            fan_out: cfg.protein_embed,
        },
    });
    let mut cin = cfg.protein_embed;
    for (i, (&cout, &(k, _))) in cfg.conv_channels.iter().zip(&cfg.conv_kernels).enumerate() {
        s.push(Spec {
            name: format!("protein.conv{}.w", i + 1),
            shape: vec![cout, cin, k],
            init: Init::Glorot {
                fan_in: cin * k,
                fan_out: cout * k,
            },
        });
        s.push(Spec {
            name: format!("protein.conv{}.b", i + 1),
            shape: vec![cout],
            init: Init::Zeros,
        });
        cin = cout;
    }

    if cfg.fusion == crate::fusion_head::FusionMode::Attention {
        for block in 1..=2 {
            for lin in 1..=2 {
                linear(&mut s, &format!("fusion.block{block}.lin{lin}"), d, d, true);
            }
        }
    }

    let widths = [
        cfg.fused_dim(),
        cfg.head_hidden[0],
        cfg.head_hidden[1],
        cfg.head_hidden[2],
        1,
    ];
    for i in 0..4 {
        linear(&mut s, &format!("head.fc{}", i + 1), widths[i], widths[i + 1], true);
        if i < 3 {
            norm(&mut s, &format!("head.bn{}", i + 1), widths[i + 1]);
        }
    }
    s
}

fn buffer_specs(cfg: &ModelConfig) -> Vec<Spec> {
    let mut s = Vec::new();
    for (i, &w) in cfg.head_hidden.iter().enumerate() {
        s.push(Spec {
            name: format!("head.bn{}.running_mean", i + 1),
            shape: vec![w],
            init: Init::Zeros,
        });
        s.push(Spec {
            name: format!("head.bn{}.running_var", i + 1),
            shape: vec![w],
            init: Init::Ones,
        });
    }
    s
}

fn materialize(spec: &Spec, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = spec.shape.iter().product();
    let data = match spec.init {
        Init::Zeros => vec![0.0; n],
        Init::Ones => vec![1.0; n],
        Init::Glorot { fan_in, fan_out } => {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..n).map(|_| rng.gen_range(-limit..limit)).collect()
        }
    };
    Tensor::new(spec.shape.clone(), data).expect("spec shape")
}

/// Named model arrays. `trainable` receives gradients; `buffers` holds the
/// batch-norm running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<T> {
    pub trainable: IndexMap<String, Tensor<T>>,
    pub buffers: IndexMap<String, Tensor<T>>,
}

impl<T: Real> Params<T> {
    /// Glorot-uniform weights, zero biases, unit gains; seeded.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trainable = trainable_specs(cfg)
            .iter()
            .map(|s| (s.name.clone(), materialize(s, &mut rng).cast()))
            .collect();
        let buffers = buffer_specs(cfg)
            .iter()
            .map(|s| (s.name.clone(), materialize(s, &mut rng).cast()))
            .collect();
        Params { trainable, buffers }
    }

    /// Checks that names and shapes match what `cfg` expects.
    pub fn check_layout(&self, cfg: &ModelConfig) -> Result<(), ModelError> {
        let check = |specs: Vec<Spec>, have: &IndexMap<String, Tensor<T>>| {
            if specs.len() != have.len() {
                return Err(ModelError::Config(format!(
                    "expected {} arrays, found {}",
                    specs.len(),
                    have.len()
                )));
            }
            for s in specs {
                let t = have
                    .get(&s.name)
                    .ok_or_else(|| ModelError::MissingParam(s.name.clone()))?;
                if t.shape() != s.shape.as_slice() {
                    return Err(ModelError::DimensionMismatch {
                        what: s.name,
                        expected: s.shape,
                        got: t.shape().to_vec(),
                    });
                }
            }
            Ok(())
        };
        check(trainable_specs(cfg), &self.trainable)?;
        check(buffer_specs(cfg), &self.buffers)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>, ModelError> {
        self.trainable
            .get(name)
            .ok_or_else(|| ModelError::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>, ModelError> {
        self.trainable
            .get_mut(name)
            .ok_or_else(|| ModelError::MissingParam(name.to_string()))
    }

    pub fn buffer(&self, name: &str) -> Result<&Tensor<T>, ModelError> {
        self.buffers
            .get(name)
            .ok_or_else(|| ModelError::MissingParam(name.to_string()))
    }

    pub fn buffer_mut(&mut self, name: &str) -> Result<&mut Tensor<T>, ModelError> {
        self.buffers
            .get_mut(name)
            .ok_or_else(|| ModelError::MissingParam(name.to_string()))
    }

    /// Adds seeded uniform noise in `±scale` to every trainable entry. Used
    /// before finite-difference checks so that no pre-activation sits exactly
    /// on a ReLU kink, as zero biases over zero-padded inputs otherwise do.
    pub fn jitter(&mut self, seed: u64, scale: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in self.trainable.values_mut() {
            for v in t.data_mut() {
                *v = *v + T::lit(rng.gen_range(-scale..scale));
            }
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.trainable.values().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> Params<U> {
        Params {
            trainable: self.trainable.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            buffers: self.buffers.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Places every trainable array on `tape`. With `track = false` they are
    /// recorded as constants, which skips all gradient bookkeeping.
    pub fn bind(&self, tape: &mut Tape<T>, track: bool) -> Bound {
        let vars = self
            .trainable
            .iter()
            .map(|(k, v)| {
                let var = if track {
                    tape.param(v.clone())
                } else {
                    tape.constant(v.clone())
                };
                (k.clone(), var)
            })
            .collect();
        Bound { vars }
    }
}

/// Tape handles of the trainable arrays for one forward pass.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: HashMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Result<Var, ModelError> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| ModelError::MissingParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }
}
