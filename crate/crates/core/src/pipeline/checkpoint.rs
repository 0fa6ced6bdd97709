//! Checkpoint files: a plain-text manifest followed by raw little-endian
//! `f32` arrays.
//!
//! ```text
//! VIDTA-CHECKPOINT
//! format_version=1
//! config.d_model=128
//! ...
//! epoch=57
//! best_valid_mse=0.2143
//! rng.seed=<64 hex digits>
//! rng.stream=0
//! rng.word_pos=123456
//! adam.step=912
//! adam.beta1=0.9
//! ...
//! array=param/drug.atom_in.w 44,128 0 22528
//! array=buffer/head.bn1.running_mean 1024 22528 4096
//! ...
//! end_header
//! <payload: arrays in manifest order; offsets are relative to the payload>
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::{ModelConfig, ModelError, Params, Vidta};
use crate::tensor::{Adam, AdamConfig, AdamState, Tensor};

use super::PipelineError;

pub const CHECKPOINT_MAGIC: &str = "VIDTA-CHECKPOINT";
pub const FORMAT_VERSION: u32 = 1;
const END_HEADER: &[u8] = b"end_header\n";

/// Exact position of a ChaCha generator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: Params<f32>,
    pub optimizer: Option<Adam<f32>>,
    pub epoch: usize,
    pub best_valid_mse: f64,
    pub rng: Option<RngState>,
}

fn bad(msg: impl Into<String>) -> PipelineError {
    PipelineError::Checkpoint(msg.into())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Option<Vec<u8>> {
    if !s.len().is_multiple_of(2) || !s.is_ascii() {
        return None;
    }
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&s[i..i + 2], 16).ok())
        .collect()
}

impl Checkpoint {
    /// Checkpoint of a model without optimizer or generator state.
    pub fn from_model(model: &Vidta<f32>) -> Self {
        Checkpoint {
            config: model.config.clone(),
            params: model.params.clone(),
            optimizer: None,
            epoch: 0,
            best_valid_mse: f64::INFINITY,
            rng: None,
        }
    }

    pub fn model(&self) -> Result<Vidta<f32>, PipelineError> {
        Ok(Vidta::from_params(self.config.clone(), self.params.clone())?)
    }

    fn arrays(&self) -> Vec<(String, &Tensor<f32>)> {
        let mut out: Vec<(String, &Tensor<f32>)> = Vec::new();
        for (k, v) in &self.params.trainable {
            out.push((format!("param/{k}"), v));
        }
        for (k, v) in &self.params.buffers {
            out.push((format!("buffer/{k}"), v));
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = String::new();
        let mut line = |s: String| {
            header.push_str(&s);
            header.push('\n');
        };
        line(CHECKPOINT_MAGIC.to_string());
        line(format!("format_version={FORMAT_VERSION}"));
        for (k, v) in self.config.to_kv() {
            line(format!("config.{k}={v}"));
        }
        line(format!("epoch={}", self.epoch));
        line(format!("best_valid_mse={}", self.best_valid_mse));
        if let Some(r) = &self.rng {
            line(format!("rng.seed={}", hex(&r.seed)));
            line(format!("rng.stream={}", r.stream));
            line(format!("rng.word_pos={}", r.word_pos));
        }

        // Moments are flattened to 1-D arrays aligned with the parameters.
        let moment_tensors: Vec<(String, Tensor<f32>)> = match &self.optimizer {
            Some(adam) => {
                line(format!("adam.step={}", adam.step));
                line(format!("adam.beta1={}", adam.config.beta1));
                line(format!("adam.beta2={}", adam.config.beta2));
                line(format!("adam.eps={}", adam.config.eps));
                let names: Vec<&String> = self.params.trainable.keys().collect();
                let mut out = Vec::new();
                for (which, pick) in [("m", 0), ("v", 1)] {
                    for (name, st) in names.iter().zip(&adam.states) {
                        let data = if pick == 0 { st.m.clone() } else { st.v.clone() };
                        let t = Tensor::new(vec![data.len()], data).expect("1-d");
                        out.push((format!("adam.{which}/{name}"), t));
                    }
                }
                out
            }
            None => Vec::new(),
        };

        let mut all = self.arrays();
        all.extend(moment_tensors.iter().map(|(k, t)| (k.clone(), t)));
        let mut offset = 0usize;
        for (name, t) in &all {
            let dims = t.shape().iter().map(usize::to_string).collect::<Vec<_>>().join(",");
            let bytes = t.len() * 4;
            line(format!("array={name} {dims} {offset} {bytes}"));
            offset += bytes;
        }
        let mut out = header.into_bytes();
        out.extend_from_slice(END_HEADER);
        out.reserve(offset);
        for (_, t) in &all {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PipelineError> {
        let split = bytes
            .windows(END_HEADER.len() + 1)
            .position(|w| w[0] == b'\n' && &w[1..] == END_HEADER)
            .ok_or_else(|| bad("missing end_header line"))?;
        let header = std::str::from_utf8(&bytes[..split]).map_err(|_| bad("manifest is not UTF-8"))?;
        let payload = &bytes[split + 1 + END_HEADER.len()..];

        let mut lines = header.lines();
        if lines.next() != Some(CHECKPOINT_MAGIC) {
            return Err(bad("not a checkpoint file"));
        }
        let mut kv = BTreeMap::new();
        let mut config_kv = BTreeMap::new();
        let mut arrays: IndexMap<String, Tensor<f32>> = IndexMap::new();
        for l in lines {
            let (k, v) = l
                .split_once('=')
                .ok_or_else(|| bad(format!("bad manifest line '{l}'")))?;
            if let Some(ck) = k.strip_prefix("config.") {
                config_kv.insert(ck.to_string(), v.to_string());
            } else if k == "array" {
                let (name, t) = read_array(v, payload)?;
                arrays.insert(name, t);
            } else {
                kv.insert(k.to_string(), v.to_string());
            }
        }
        let get = |k: &str| kv.get(k).ok_or_else(|| bad(format!("missing '{k}'")));
        fn num<V: std::str::FromStr>(s: &str, k: &str) -> Result<V, PipelineError> {
            s.parse().map_err(|_| bad(format!("bad value '{s}' for '{k}'")))
        }

        let version: u32 = num(get("format_version")?, "format_version")?;
        if version != FORMAT_VERSION {
            return Err(ModelError::VersionMismatch(format!(
                "checkpoint format {version}, this build reads {FORMAT_VERSION}"
            ))
            .into());
        }
        let config = ModelConfig::from_kv(&config_kv)?;

        let mut take = |kind: &str, names: &[String]| -> Result<IndexMap<String, Tensor<f32>>, PipelineError> {
            names
                .iter()
                .map(|n| {
                    arrays
                        .shift_remove(&format!("{kind}/{n}"))
                        .map(|t| (n.clone(), t))
                        .ok_or_else(|| bad(format!("missing array {kind}/{n}")))
                })
                .collect()
        };
        let template = Params::<f32>::init(&config, 0);
        let names: Vec<String> = template.trainable.keys().cloned().collect();
        let buf_names: Vec<String> = template.buffers.keys().cloned().collect();
        let params = Params {
            trainable: take("param", &names)?,
            buffers: take("buffer", &buf_names)?,
        };
        params.check_layout(&config)?;

        let optimizer = match kv.get("adam.step") {
            Some(step) => {
                let m = take("adam.m", &names)?;
                let v = take("adam.v", &names)?;
                let states = m
                    .into_values()
                    .zip(v.into_values())
                    .map(|(m, v)| AdamState {
                        m: m.into_data(),
                        v: v.into_data(),
                    })
                    .collect();
                Some(Adam {
                    config: AdamConfig {
                        beta1: num(get("adam.beta1")?, "adam.beta1")?,
                        beta2: num(get("adam.beta2")?, "adam.beta2")?,
                        eps: num(get("adam.eps")?, "adam.eps")?,
                    },
                    step: num(step, "adam.step")?,
                    states,
                })
            }
            None => None,
        };
        if let Some((extra, _)) = arrays.first() {
            return Err(bad(format!("unexpected array {extra}")));
        }

        let rng = match kv.get("rng.seed") {
            Some(seed) => {
                let seed: [u8; 32] = unhex(seed)
                    .and_then(|v| v.try_into().ok())
                    .ok_or_else(|| bad("bad rng.seed"))?;
                Some(RngState {
                    seed,
                    stream: num(get("rng.stream")?, "rng.stream")?,
                    word_pos: num(get("rng.word_pos")?, "rng.word_pos")?,
                })
            }
            None => None,
        };

        Ok(Checkpoint {
            config,
            params,
            optimizer,
            epoch: num(get("epoch")?, "epoch")?,
            best_valid_mse: num(get("best_valid_mse")?, "best_valid_mse")?,
            rng,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        std::fs::write(path, self.to_bytes()).map_err(|e| PipelineError::Io(format!("writing {}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let bytes = std::fs::read(path).map_err(|e| PipelineError::FileUnreadable {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::from_bytes(&bytes)
    }
}

fn read_array(spec: &str, payload: &[u8]) -> Result<(String, Tensor<f32>), PipelineError> {
    let parts: Vec<&str> = spec.split(' ').collect();
    let [name, dims, offset, len] = parts[..] else {
        return Err(bad(format!("bad array entry '{spec}'")));
    };
    let shape: Vec<usize> = if dims.is_empty() {
        Vec::new()
    } else {
        dims.split(',')
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|_| bad(format!("bad shape in '{spec}'")))?
    };
    let offset: usize = offset.parse().map_err(|_| bad(format!("bad offset in '{spec}'")))?;
    let len: usize = len.parse().map_err(|_| bad(format!("bad length in '{spec}'")))?;
    let count: usize = shape.iter().product();
    if count * 4 != len {
        return Err(bad(format!("array {name}: shape {shape:?} does not match {len} bytes")));
    }
    let bytes = offset
        .checked_add(len)
        .and_then(|end| payload.get(offset..end))
        .ok_or_else(|| bad(format!("array {name} extends past end of file")))?;
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let t = Tensor::new(shape, data).map_err(|e| bad(e.to_string()))?;
    Ok((name.to_string(), t))
}

#[cfg(test)]
mod tests {
    use rand::RngCore;

    use super::*;

    fn sample() -> Checkpoint {
        let cfg = ModelConfig::toy();
        let model = Vidta::<f32>::new(cfg, 4).unwrap();
        let mut ck = Checkpoint::from_model(&model);
        let sizes = ck.params.trainable.values().map(Tensor::len);
        let mut adam = Adam::new(AdamConfig::default(), sizes);
        adam.step = 17;
        adam.states[0].m[0] = 0.25;
        adam.states[3].v[1] = 1e-7;
        ck.optimizer = Some(adam);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        rng.next_u64();
        ck.rng = Some(RngState::capture(&rng));
        ck.epoch = 12;
        ck.best_valid_mse = 0.1 + 0.2;
        ck
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        let plain = Checkpoint::from_model(&ck.model().unwrap());
        assert_eq!(Checkpoint::from_bytes(&plain.to_bytes()).unwrap(), plain);
    }

    #[test]
    fn rng_state_resumes_stream() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        rng.next_u32();
        let st = RngState::capture(&rng);
        let mut again = st.restore();
        assert_eq!(rng.next_u64(), again.next_u64());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(Checkpoint::from_bytes(b"hello").is_err());
        let cut = bytes.windows(END_HEADER.len()).position(|w| w == END_HEADER).unwrap();
        let header = std::str::from_utf8(&bytes[..cut]).unwrap();
        let mut edited = header.replace("atom44-bond10-v1", "atom40-bond10-v0").into_bytes();
        edited.extend_from_slice(&bytes[cut..]);
        let err = Checkpoint::from_bytes(&edited).unwrap_err();
        assert!(
            matches!(err, PipelineError::Model(ModelError::VersionMismatch(_))),
            "{err}"
        );
    }
}
