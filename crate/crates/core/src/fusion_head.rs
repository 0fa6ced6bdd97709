//! Attention-gated fusion of drug and protein embeddings, and the
//! regression head.
//!
//! The gated mixes are written as `b + W ⊙ (a − b)`, which equals
//! `W ⊙ a + (1 − W) ⊙ b` and is exact when `a = b`.

use std::fmt;
use std::str::FromStr;

use crate::model::{Bound, ModelConfig, ModelError, Params};
use crate::tensor::{BatchStats, Real, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum FusionMode {
    /// Two gated blocks followed by a final gate against the plain sum.
    #[default]
    Attention,
    /// Plain elementwise sum.
    Add,
    /// Concatenation `[e_d, e_t]`; doubles the head input width.
    Concat,
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionMode::Attention => "attention",
            FusionMode::Add => "add",
            FusionMode::Concat => "concat",
        })
    }
}

impl FromStr for FusionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "attention" => Ok(FusionMode::Attention),
            "add" => Ok(FusionMode::Add),
            "concat" => Ok(FusionMode::Concat),
            other => Err(format!("unknown fusion mode '{other}' (attention|add|concat)")),
        }
    }
}

/// Intermediate values of attention fusion, kept for inspection and tests.
#[derive(Clone, Copy, Debug)]
pub struct FusionTrace {
    pub w1: Var,
    pub e1: Var,
    pub w2: Var,
    pub e2: Var,
    pub w3: Var,
    pub fused: Var,
}

fn block<T: Real>(tape: &mut Tape<T>, bound: &Bound, idx: usize, x: Var) -> Result<Var, ModelError> {
    let p = format!("fusion.block{idx}");
    let y = tape.linear(
        x,
        bound.var(&format!("{p}.lin1.w"))?,
        Some(bound.var(&format!("{p}.lin1.b"))?),
    )?;
    Ok(tape.linear(
        y,
        bound.var(&format!("{p}.lin2.w"))?,
        Some(bound.var(&format!("{p}.lin2.b"))?),
    )?)
}

/// `b + w ⊙ (a − b)`.
fn gate<T: Real>(tape: &mut Tape<T>, w: Var, a: Var, b: Var) -> Result<Var, ModelError> {
    let diff = tape.sub(a, b)?;
    let scaled = tape.mul(w, diff)?;
    Ok(tape.add(b, scaled)?)
}

/// Attention fusion of `ed` and `et` (both `[batch × d]`):
///
/// * `W1 = σ(block1(ed + et))`, `e1 = W1 ⊙ ed + (1 − W1) ⊙ et`
/// * `W2 = σ(block2(e1))`, `e2 = W2 ⊙ ed + (1 − W2) ⊙ et`
/// * `W3 = σ(e2)`, `fused = W3 ⊙ e2 + (1 − W3) ⊙ (ed + et)`
pub fn fuse<T: Real>(tape: &mut Tape<T>, bound: &Bound, ed: Var, et: Var) -> Result<FusionTrace, ModelError> {
    let s = tape.add(ed, et)?;
    let b1 = block(tape, bound, 1, s)?;
    let w1 = tape.sigmoid(b1);
    let e1 = gate(tape, w1, ed, et)?;
    let b2 = block(tape, bound, 2, e1)?;
    let w2 = tape.sigmoid(b2);
    let e2 = gate(tape, w2, ed, et)?;
    let w3 = tape.sigmoid(e2);
    let fused = gate(tape, w3, e2, s)?;
    Ok(FusionTrace {
        w1,
        e1,
        w2,
        e2,
        w3,
        fused,
    })
}

/// Fusion according to `mode`; returns `[batch × fused_dim]`.
pub fn fuse_with_mode<T: Real>(
    tape: &mut Tape<T>,
    bound: &Bound,
    mode: FusionMode,
    ed: Var,
    et: Var,
) -> Result<Var, ModelError> {
    match mode {
        FusionMode::Attention => Ok(fuse(tape, bound, ed, et)?.fused),
        FusionMode::Add => Ok(tape.add(ed, et)?),
        FusionMode::Concat => Ok(tape.concat_cols(&[ed, et])?),
    }
}

/// Batch-norm statistics produced by a training-mode head pass, keyed by
/// layer (`1..=3`), for updating the running estimates.
pub type HeadStats<T> = Vec<(usize, BatchStats<T>)>;

/// `fc1 → bn1 → ReLU → fc2 → bn2 → ReLU → fc3 → bn3 → ReLU → fc4`,
/// producing `[batch × 1]`.
///
/// With `train` set and more than one row, batch normalization uses batch
/// statistics; otherwise it uses the running estimates in `params`.
pub fn head<T: Real>(
    tape: &mut Tape<T>,
    bound: &Bound,
    params: &Params<T>,
    cfg: &ModelConfig,
    x: Var,
    train: bool,
) -> Result<(Var, HeadStats<T>), ModelError> {
    let batch_stats = train && tape.value(x).rows() > 1;
    let eps = T::lit(cfg.batch_norm_eps);
    let mut stats = Vec::new();
    let mut h = x;
    for i in 1..=4 {
        let fc = format!("head.fc{i}");
        h = tape.linear(h, bound.var(&format!("{fc}.w"))?, Some(bound.var(&format!("{fc}.b"))?))?;
        if i == 4 {
            break;
        }
        let bn = format!("head.bn{i}");
        let gain = bound.var(&format!("{bn}.gain"))?;
        let bias = bound.var(&format!("{bn}.bias"))?;
        h = if batch_stats {
            let (y, s) = tape.batch_norm_train(h, gain, bias, eps)?;
            stats.push((i, s));
            y
        } else {
            let rm = params.buffer(&format!("{bn}.running_mean"))?;
            let rv = params.buffer(&format!("{bn}.running_var"))?;
            tape.batch_norm_eval(h, gain, bias, rm.data(), rv.data(), eps)?
        };
        h = tape.relu(h);
    }
    Ok((h, stats))
}

/// Exponential running-statistic update with momentum `m`:
/// `running ← (1 − m)·running + m·batch`.
pub fn update_running_stats<T: Real>(
    params: &mut Params<T>,
    stats: &HeadStats<T>,
    momentum: f64,
) -> Result<(), ModelError> {
    let m = T::lit(momentum);
    let keep = T::one() - m;
    for (i, s) in stats {
        for (name, batch) in [("running_mean", &s.mean), ("running_var", &s.var)] {
            let buf = params.buffer_mut(&format!("head.bn{i}.{name}"))?;
            for (r, &b) in buf.data_mut().iter_mut().zip(batch) {
                *r = keep * *r + m * b;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn setup() -> (ModelConfig, Params<f64>) {
        let cfg = ModelConfig::toy();
        let params = Params::init(&cfg, 21);
        (cfg, params)
    }

    fn row(tape: &mut Tape<f64>, v: &[f64]) -> Var {
        tape.constant(Tensor::from_f64(vec![1, v.len()], v).unwrap())
    }

    #[test]
    fn mode_round_trip() {
        for m in [FusionMode::Attention, FusionMode::Add, FusionMode::Concat] {
            assert_eq!(m.to_string().parse::<FusionMode>().unwrap(), m);
        }
        assert!("sum".parse::<FusionMode>().is_err());
    }

    #[test]
    fn equal_inputs_give_sum_plus_sigmoid_mix() {
        let (_, params) = setup();
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, false);
        let v = [0.3, -1.2, 0.0, 2.5, -0.4, 0.9, 1.1, -2.0];
        let ed = row(&mut tape, &v);
        let et = row(&mut tape, &v);
        let tr = fuse(&mut tape, &bound, ed, et).unwrap();
        assert_eq!(tape.value(tr.e1).data(), &v);
        assert_eq!(tape.value(tr.e2).data(), &v);
        for (i, &x) in v.iter().enumerate() {
            let w3 = 1.0 / (1.0 + (-x).exp());
            let want = w3 * x + (1.0 - w3) * 2.0 * x;
            assert!((tape.value(tr.fused).data()[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_inputs_fuse_to_zero() {
        let (_, params) = setup();
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, false);
        let z = row(&mut tape, &[0.0; 8]);
        let tr = fuse(&mut tape, &bound, z, z).unwrap();
        assert!(tape.value(tr.fused).data().iter().all(|&v| v == 0.0));
        assert!(tape.value(tr.w3).data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn gates_are_probabilities_and_mixes_stay_between_inputs() {
        let (_, params) = setup();
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, false);
        let a = [1.0, -3.0, 0.5, 4.0, 0.0, -1.0, 2.0, 7.0];
        let b = [-2.0, 1.0, 0.5, 0.0, 3.0, -1.5, -2.0, 1.0];
        let ed = row(&mut tape, &a);
        let et = row(&mut tape, &b);
        let tr = fuse(&mut tape, &bound, ed, et).unwrap();
        for w in [tr.w1, tr.w2, tr.w3] {
            assert!(tape.value(w).data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
        for e in [tr.e1, tr.e2] {
            for (i, &v) in tape.value(e).data().iter().enumerate() {
                let (lo, hi) = (a[i].min(b[i]), a[i].max(b[i]));
                assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn ablation_widths() {
        let (_, params) = setup();
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, false);
        let ed = row(&mut tape, &[1.0; 8]);
        let et = row(&mut tape, &[2.0; 8]);
        let add = fuse_with_mode(&mut tape, &bound, FusionMode::Add, ed, et).unwrap();
        assert_eq!(tape.value(add).data(), &[3.0; 8]);
        let cat = fuse_with_mode(&mut tape, &bound, FusionMode::Concat, ed, et).unwrap();
        assert_eq!(tape.value(cat).shape(), &[1, 16]);
    }

    #[test]
    fn head_shapes_and_running_stats() {
        let (cfg, mut params) = setup();
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, false);
        let x = tape.constant(Tensor::from_f64(vec![3, 8], &(0..24).map(f64::from).collect::<Vec<_>>()).unwrap());
        let (y, stats) = head(&mut tape, &bound, &params, &cfg, x, true).unwrap();
        assert_eq!(tape.value(y).shape(), &[3, 1]);
        assert_eq!(stats.len(), 3);
        let before = params.buffer("head.bn1.running_mean").unwrap().clone();
        update_running_stats(&mut params, &stats, 0.1).unwrap();
        let after = params.buffer("head.bn1.running_mean").unwrap();
        for ((b, a), m) in before.data().iter().zip(after.data()).zip(&stats[0].1.mean) {
            assert!((a - (0.9 * b + 0.1 * m)).abs() < 1e-12);
        }

        // a single row in training mode falls back to running statistics
        let x1 = tape.constant(Tensor::filled(vec![1, 8], 0.5));
        let (_, stats) = head(&mut tape, &bound, &params, &cfg, x1, true).unwrap();
        assert!(stats.is_empty());
    }
}
