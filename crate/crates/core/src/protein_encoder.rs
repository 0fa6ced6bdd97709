//! Protein sequences: integer encoding and the convolutional encoder.
//!
//! Residue codes (0 is padding):
//!
//! | A | C | B | D | E | F | G | H | I | K  | L  | M  | N  | O  | P  | Q  | R  | S  | T  | U  | V  | W  | X  | Y  | Z  |
//! |---|---|---|---|---|---|---|---|---|----|----|----|----|----|----|----|----|----|----|----|----|----|----|----|----|
//! | 1 | 2 | 3 | 4 | 5 | 6 | 7 | 8 | 9 | 10 | 11 | 12 | 13 | 14 | 15 | 16 | 17 | 18 | 19 | 20 | 21 | 22 | 23 | 24 | 25 |

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{Bound, ModelConfig, ModelError};
use crate::tensor::{Real, Tape, Var};

/// 25 residue letters plus the pad symbol.
pub const PROTEIN_VOCAB: usize = 26;

/// Residue letters in code order; `RESIDUES[i]` has code `i + 1`.
pub const RESIDUES: [u8; 25] = *b"ACBDEFGHIKLMNOPQRSTUVWXYZ";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SequenceError {
    #[error("unknown residue '{letter}' at position {position}")]
    UnknownResidue { letter: char, position: usize },
    #[error("empty protein sequence")]
    EmptySequence,
}

/// Code of a residue letter (case-insensitive), or `None` for letters outside the table.
pub fn residue_code(letter: u8) -> Option<u8> {
    let up = letter.to_ascii_uppercase();
    RESIDUES.iter().position(|&r| r == up).map(|i| i as u8 + 1)
}

/// SHA-256 of the residue table, hex encoded; stored in checkpoints.
pub fn residue_table_hash() -> String {
    let digest = Sha256::digest(RESIDUES);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ProteinSequenceEncoding {
    /// Exactly `max_len` codes, zero-padded.
    pub codes: Vec<u8>,
    /// Residue count before truncation.
    pub original_length: usize,
}

impl ProteinSequenceEncoding {
    pub fn codes_usize(&self) -> Vec<usize> {
        self.codes.iter().map(|&c| usize::from(c)).collect()
    }
}

/// Encodes raw sequence text or a single FASTA record (lines starting with
/// `>` are dropped, whitespace ignored), truncating or zero-padding to
/// `max_len`. Positions in errors are 1-based residue indices.
pub fn encode_sequence(text: &str, max_len: usize) -> Result<ProteinSequenceEncoding, SequenceError> {
    let mut codes = Vec::with_capacity(max_len);
    let mut count = 0usize;
    for line in text.lines() {
        let line = line.trim();
        if line.starts_with('>') || line.starts_with(';') {
            continue;
        }
        for ch in line.chars().filter(|c| !c.is_whitespace()) {
            count += 1;
            let code = u8::try_from(ch)
                .ok()
                .filter(u8::is_ascii_alphabetic)
                .and_then(residue_code)
                .ok_or(SequenceError::UnknownResidue {
                    letter: ch,
                    position: count,
                })?;
            if codes.len() < max_len {
                codes.push(code);
            }
        }
    }
    if count == 0 {
        return Err(SequenceError::EmptySequence);
    }
    codes.resize(max_len, 0);
    Ok(ProteinSequenceEncoding {
        codes,
        original_length: count,
    })
}

/// Embedding lookup, three convolution + ReLU blocks and a global max pool
/// over the sequence axis. Returns `[1 × conv_channels[2]]`.
pub fn encode_protein<T: Real>(
    tape: &mut Tape<T>,
    bound: &Bound,
    cfg: &ModelConfig,
    enc: &ProteinSequenceEncoding,
) -> Result<Var, ModelError> {
    if enc.codes.len() != cfg.protein_len {
        return Err(ModelError::DimensionMismatch {
            what: "protein codes".into(),
            expected: vec![cfg.protein_len],
            got: vec![enc.codes.len()],
        });
    }
    let table = bound.var("protein.embedding")?;
    let emb = tape.embedding_lookup(table, &enc.codes_usize())?;
    // [L × d_p] -> [d_p × L]: channels first for the convolutions
    let mut x = tape.transpose(emb)?;
    for (i, &(_, pad)) in cfg.conv_kernels.iter().enumerate() {
        let w = bound.var(&format!("protein.conv{}.w", i + 1))?;
        let b = bound.var(&format!("protein.conv{}.b", i + 1))?;
        let y = tape.conv1d(x, w, b, pad)?;
        x = tape.relu(y);
    }
    Ok(tape.maxpool_global(x)?)
}

/// Length of the feature map after each convolution block.
pub fn block_lengths(cfg: &ModelConfig) -> [usize; 3] {
    let mut len = cfg.protein_len;
    let mut out = [0; 3];
    for (o, &(k, p)) in out.iter_mut().zip(&cfg.conv_kernels) {
        len = len + 2 * p - k + 1;
        *o = len;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Params;

    #[test]
    fn published_anchor_codes() {
        let e = encode_sequence("ACB", 5).unwrap();
        assert_eq!(e.codes, vec![1, 2, 3, 0, 0]);
        assert_eq!(residue_code(b'a'), Some(1));
        assert_eq!(residue_code(b'J'), None);
        let all: Vec<u8> = RESIDUES.iter().map(|&r| residue_code(r).unwrap()).collect();
        assert_eq!(all, (1..=25).collect::<Vec<u8>>());
    }

    #[test]
    fn single_residue_and_truncation() {
        let e = encode_sequence("A", 1000).unwrap();
        assert_eq!(e.original_length, 1);
        assert_eq!(e.codes[0], 1);
        assert!(e.codes[1..].iter().all(|&c| c == 0));
        assert_eq!(e.codes.len(), 1000);

        let long: String = "MKV".repeat(500);
        let e = encode_sequence(&long, 1000).unwrap();
        assert_eq!(e.original_length, 1500);
        let want = encode_sequence(&long[..1000], 1000).unwrap();
        assert_eq!(e.codes, want.codes);
    }

    #[test]
    fn fasta_and_errors() {
        let e = encode_sequence(">sp|P00519|ABL1\nMLEI\ncdkw\n", 8).unwrap();
        assert_eq!(e.original_length, 8);
        assert_eq!(
            encode_sequence("MKJ", 8),
            Err(SequenceError::UnknownResidue {
                letter: 'J',
                position: 3
            })
        );
        assert_eq!(
            encode_sequence("MK1", 8),
            Err(SequenceError::UnknownResidue {
                letter: '1',
                position: 3
            })
        );
        assert_eq!(encode_sequence(">header only\n", 8), Err(SequenceError::EmptySequence));
        assert_eq!(encode_sequence("", 8), Err(SequenceError::EmptySequence));
    }

    #[test]
    fn paper_block_lengths() {
        assert_eq!(block_lengths(&ModelConfig::paper()), [1009, 1021, 1039]);
    }

    #[test]
    fn output_width_and_pad_invariance() {
        let cfg = ModelConfig::toy();
        let params = Params::<f64>::init(&cfg, 3);
        let run = |enc: &ProteinSequenceEncoding| {
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape, false);
            let v = encode_protein(&mut tape, &bound, &cfg, enc).unwrap();
            tape.value(v).clone()
        };
        let a = run(&encode_sequence("MKVLA", 12).unwrap());
        assert_eq!(a.shape(), &[1, 8]);
        assert!(a.all_finite());
        // residues past the length limit never matter
        let b = run(&encode_sequence("MKVLAGGGGGGGWWWW", 12).unwrap());
        let c = run(&encode_sequence("MKVLAGGGGGGGYYYYYYYY", 12).unwrap());
        assert_eq!(b, c);
        // any two all-pad inputs agree
        let pad = ProteinSequenceEncoding {
            codes: vec![0; 12],
            original_length: 0,
        };
        assert_eq!(run(&pad), run(&pad.clone()));
    }
}
