//! Synthetic drug–target pairs labelled by a randomly initialized model.
//! Any model of the same architecture can fit such labels exactly, which
//! makes them a clean target for overfitting checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{featurize_protein, featurize_smiles, ModelConfig, Sample, Vidta};

use super::data::{AffinitySpace, DatasetRecord};
use super::PipelineError;

const CHAIN_ATOMS: [&str; 8] = ["C", "C", "C", "C", "N", "O", "S", "N"];
const BRANCHES: [&str; 6] = ["(C)", "(=O)", "(O)", "(N)", "(F)", "(Cl)"];
const AMINO_ACIDS: &[u8] = b"ACDEFGHIKLMNPQRSTVWY";

/// A random acyclic or monocyclic heavy-atom chain with small branches and
/// an optional phenyl substituent. Always valid SMILES.
pub fn random_smiles<R: Rng + ?Sized>(rng: &mut R) -> String {
    let n = rng.gen_range(3..=9);
    let ring = (n >= 5 && rng.gen_bool(0.4)).then(|| {
        let start = rng.gen_range(0..n - 3);
        (start, rng.gen_range(start + 2..n))
    });
    let mut s = String::new();
    for i in 0..n {
        if i > 0 && rng.gen_bool(0.12) {
            s.push('=');
        }
        s.push_str(CHAIN_ATOMS[rng.gen_range(0..CHAIN_ATOMS.len())]);
        if let Some((a, b)) = ring {
            if i == a || i == b {
                s.push('1');
            }
        }
        if i + 1 < n && rng.gen_bool(0.25) {
            s.push_str(BRANCHES[rng.gen_range(0..BRANCHES.len())]);
        }
    }
    if rng.gen_bool(0.3) {
        s.push_str("c2ccccc2");
    }
    s
}

/// Random sequence over the 20 standard amino acids.
pub fn random_protein<R: Rng + ?Sized>(rng: &mut R, min_len: usize, max_len: usize) -> String {
    let len = rng.gen_range(min_len..=max_len);
    (0..len)
        .map(|_| AMINO_ACIDS[rng.gen_range(0..AMINO_ACIDS.len())] as char)
        .collect()
}

/// `n` random pairs with targets from a teacher model of architecture
/// `cfg`, standardized to zero mean and unit variance.
pub fn synthetic_teacher_set(n: usize, seed: u64, cfg: &ModelConfig) -> Result<Vec<DatasetRecord>, PipelineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs: Vec<(String, String)> = (0..n)
        .map(|_| (random_smiles(&mut rng), random_protein(&mut rng, 6, 20)))
        .collect();
    let mut teacher = Vidta::<f64>::new(cfg.clone(), rng.gen())?;
    // spread the untrained teacher's outputs
    teacher.params.jitter(rng.gen(), 0.1);
    let graphs = pairs
        .iter()
        .map(|(s, _)| featurize_smiles(s, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let prots = pairs
        .iter()
        .map(|(_, p)| featurize_protein(p, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let samples: Vec<Sample> = graphs
        .iter()
        .zip(&prots)
        .map(|(drug, protein)| Sample { drug, protein })
        .collect();
    let y = if samples.is_empty() {
        Vec::new()
    } else {
        teacher.predict(&samples)?
    };
    let mean = y.iter().sum::<f64>() / y.len().max(1) as f64;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / y.len().max(1) as f64;
    let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
    Ok(pairs
        .into_iter()
        .zip(y)
        .map(|((smiles, protein_seq), v)| DatasetRecord {
            smiles,
            protein_seq,
            affinity: Some((v - mean) / sd),
            affinity_space: AffinitySpace::PKd,
        })
        .collect())
}
