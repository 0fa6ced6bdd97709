use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use super::ModelError;
use crate::chem::FEATURE_LAYOUT_VERSION;
use crate::fusion_head::FusionMode;
use crate::protein_encoder::{residue_table_hash, PROTEIN_VOCAB};

/// Every architectural hyperparameter. Serialized into checkpoints as
/// `key=value` lines.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Drug encoder width: input projection `d_k` and layer output `d_o` are equal.
    pub d_model: usize,
    /// Per-head width `d_h`.
    pub d_head: usize,
    pub heads: usize,
    pub layers: usize,
    pub dropout: f64,
    /// Number of Laplacian eigenvectors fed to the positional projection.
    pub pe_dim: usize,
    pub use_positional_encoding: bool,
    pub virtual_node: bool,

    pub protein_len: usize,
    pub protein_embed: usize,
    pub conv_channels: [usize; 3],
    /// `(kernel, padding)` per convolution block.
    pub conv_kernels: [(usize, usize); 3],

    pub fusion: FusionMode,
    pub head_hidden: [usize; 3],

    pub layer_norm_eps: f64,
    pub batch_norm_eps: f64,
    pub batch_norm_momentum: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl ModelConfig {
    /// Full-size settings.
    pub fn paper() -> Self {
        ModelConfig {
            d_model: 128,
            d_head: 16,
            heads: 8,
            layers: 10,
            dropout: 0.2,
            pe_dim: crate::graph::DEFAULT_PE_DIM,
            use_positional_encoding: true,
            virtual_node: true,
            protein_len: 1000,
            protein_embed: 128,
            conv_channels: [256, 256, 128],
            conv_kernels: [(2, 5), (3, 7), (5, 11)],
            fusion: FusionMode::Attention,
            head_hidden: [1024, 512, 128],
            layer_norm_eps: 1e-5,
            batch_norm_eps: 1e-5,
            batch_norm_momentum: 0.1,
        }
    }

    /// Tiny dimensions for gradient checks and smoke training.
    pub fn toy() -> Self {
        ModelConfig {
            d_model: 8,
            d_head: 2,
            heads: 2,
            layers: 2,
            protein_len: 12,
            protein_embed: 4,
            conv_channels: [8, 8, 8],
            head_hidden: [16, 8, 4],
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::Config(msg));
        if self.d_model == 0 || self.d_head == 0 || self.heads == 0 || self.layers == 0 {
            return bad("drug encoder dimensions must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.protein_len == 0 || self.protein_embed == 0 || self.conv_channels.contains(&0) {
            return bad("protein encoder dimensions must be positive".into());
        }
        if self.conv_channels[2] != self.d_model {
            return bad(format!(
                "protein output width {} must equal drug embedding width {}",
                self.conv_channels[2], self.d_model
            ));
        }
        let mut len = self.protein_len;
        for &(k, p) in &self.conv_kernels {
            if k == 0 || len + 2 * p < k {
                return bad(format!("kernel {k} with padding {p} does not fit length {len}"));
            }
            len = len + 2 * p - k + 1;
        }
        if self.head_hidden.contains(&0) {
            return bad("head widths must be positive".into());
        }
        Ok(())
    }

    /// Width of the fused vector entering the head.
    pub fn fused_dim(&self) -> usize {
        match self.fusion {
            FusionMode::Concat => 2 * self.d_model,
            FusionMode::Add | FusionMode::Attention => self.d_model,
        }
    }

    pub fn effective_pe_dim(&self) -> usize {
        if self.use_positional_encoding {
            self.pe_dim
        } else {
            0
        }
    }

    /// Ordered `key=value` representation, including the featurization
    /// fingerprints that must match at load time.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let kernels = self
            .conv_kernels
            .iter()
            .map(|(k, p)| format!("{k}:{p}"))
            .collect::<Vec<_>>()
            .join(",");
        vec![
            ("d_model".into(), self.d_model.to_string()),
            ("d_head".into(), self.d_head.to_string()),
            ("heads".into(), self.heads.to_string()),
            ("layers".into(), self.layers.to_string()),
            ("dropout".into(), self.dropout.to_string()),
            ("pe_dim".into(), self.pe_dim.to_string()),
            (
                "use_positional_encoding".into(),
                self.use_positional_encoding.to_string(),
            ),
            ("virtual_node".into(), self.virtual_node.to_string()),
            ("protein_len".into(), self.protein_len.to_string()),
            ("protein_embed".into(), self.protein_embed.to_string()),
            ("protein_vocab".into(), PROTEIN_VOCAB.to_string()),
            ("conv_channels".into(), join(&self.conv_channels)),
            ("conv_kernels".into(), kernels),
            ("fusion".into(), self.fusion.to_string()),
            ("head_hidden".into(), join(&self.head_hidden)),
            ("layer_norm_eps".into(), self.layer_norm_eps.to_string()),
            ("batch_norm_eps".into(), self.batch_norm_eps.to_string()),
            ("batch_norm_momentum".into(), self.batch_norm_momentum.to_string()),
            ("feature_layout".into(), FEATURE_LAYOUT_VERSION.into()),
            ("residue_table".into(), residue_table_hash()),
        ]
    }

    /// Inverse of [`to_kv`](Self::to_kv). Fails with
    /// [`ModelError::VersionMismatch`] when the featurization fingerprints
    /// differ from this build.
    pub fn from_kv(kv: &BTreeMap<String, String>) -> Result<Self, ModelError> {
        fn get<'a>(kv: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str, ModelError> {
            kv.get(key)
                .map(String::as_str)
                .ok_or_else(|| ModelError::Config(format!("missing config key '{key}'")))
        }
        fn num<V: FromStr>(kv: &BTreeMap<String, String>, key: &str) -> Result<V, ModelError> {
            let s = get(kv, key)?;
            s.parse()
                .map_err(|_| ModelError::Config(format!("bad value '{s}' for '{key}'")))
        }
        fn triple(kv: &BTreeMap<String, String>, key: &str) -> Result<[usize; 3], ModelError> {
            let s = get(kv, key)?;
            let v: Vec<usize> = s
                .split(',')
                .map(|p| p.trim().parse())
                .collect::<Result<_, _>>()
                .map_err(|_| ModelError::Config(format!("bad value '{s}' for '{key}'")))?;
            v.try_into()
                .map_err(|_| ModelError::Config(format!("'{key}' needs three entries")))
        }

        let layout = get(kv, "feature_layout")?;
        if layout != FEATURE_LAYOUT_VERSION {
            return Err(ModelError::VersionMismatch(format!(
                "feature layout '{layout}', this build uses '{FEATURE_LAYOUT_VERSION}'"
            )));
        }
        let table = get(kv, "residue_table")?;
        if table != residue_table_hash() {
            return Err(ModelError::VersionMismatch(format!(
                "residue table {table} differs from this build"
            )));
        }
        let vocab: usize = num(kv, "protein_vocab")?;
        if vocab != PROTEIN_VOCAB {
            return Err(ModelError::VersionMismatch(format!("protein vocabulary {vocab}")));
        }

        let kernels_s = get(kv, "conv_kernels")?;
        let kernels: Vec<(usize, usize)> = kernels_s
            .split(',')
            .map(|kp| {
                let (k, p) = kp.split_once(':')?;
                Some((k.trim().parse().ok()?, p.trim().parse().ok()?))
            })
            .collect::<Option<_>>()
            .ok_or_else(|| ModelError::Config(format!("bad conv_kernels '{kernels_s}'")))?;
        let conv_kernels: [(usize, usize); 3] = kernels
            .try_into()
            .map_err(|_| ModelError::Config("conv_kernels needs three entries".into()))?;

        let cfg = ModelConfig {
            d_model: num(kv, "d_model")?,
            d_head: num(kv, "d_head")?,
            heads: num(kv, "heads")?,
            layers: num(kv, "layers")?,
            dropout: num(kv, "dropout")?,
            pe_dim: num(kv, "pe_dim")?,
            use_positional_encoding: num(kv, "use_positional_encoding")?,
            virtual_node: num(kv, "virtual_node")?,
            protein_len: num(kv, "protein_len")?,
            protein_embed: num(kv, "protein_embed")?,
            conv_channels: triple(kv, "conv_channels")?,
            conv_kernels,
            fusion: num(kv, "fusion")?,
            head_hidden: triple(kv, "head_hidden")?,
            layer_norm_eps: num(kv, "layer_norm_eps")?,
            batch_norm_eps: num(kv, "batch_norm_eps")?,
            batch_norm_momentum: num(kv, "batch_norm_momentum")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.to_kv() {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn as_map(cfg: &ModelConfig) -> BTreeMap<String, String> {
        cfg.to_kv().into_iter().collect()
    }

    #[test]
    fn presets_validate() {
        ModelConfig::paper().validate().unwrap();
        ModelConfig::toy().validate().unwrap();
        let mut bad = ModelConfig::toy();
        bad.conv_channels[2] = 5;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn kv_round_trip() {
        let mut cfg = ModelConfig::toy();
        cfg.fusion = FusionMode::Concat;
        cfg.virtual_node = false;
        cfg.dropout = 0.125;
        assert_eq!(ModelConfig::from_kv(&as_map(&cfg)).unwrap(), cfg);
    }

    #[test]
    fn layout_drift_is_rejected() {
        let mut kv = as_map(&ModelConfig::toy());
        kv.insert("feature_layout".into(), "atom40-bond10-v0".into());
        assert!(matches!(ModelConfig::from_kv(&kv), Err(ModelError::VersionMismatch(_))));
        let mut kv = as_map(&ModelConfig::toy());
        kv.insert("residue_table".into(), "deadbeef".into());
        assert!(matches!(ModelConfig::from_kv(&kv), Err(ModelError::VersionMismatch(_))));
    }
}
