use rand::Rng;
use sha2::{Digest, Sha256};

use super::SpectralBasis;
use crate::tensor::Tensor;

/// Entries whose magnitudes differ by less than this count as tied when
/// picking the sign-defining entry.
const SIGN_TIE_TOLERANCE: f64 = 1e-9;

/// Flips `v` so that its largest-magnitude entry is positive. Ties (within
/// `1e-9`) resolve to the lowest index.
pub fn canonicalize_sign(v: &mut [f64]) {
    canonicalize_sign_keyed(v, None);
}

/// Like [`canonicalize_sign`], but when the largest-magnitude entries are
/// tied with opposite signs (typical for eigenvectors that are antisymmetric
/// over two topologically equivalent atoms), the sign is chosen to make
/// `Σ v_i · keys_i` positive. Lowest-index resolution is the last resort,
/// used only when that sum vanishes as well.
///
/// Unlike the index rule, the key rule does not depend on node numbering, so
/// relabeling atoms permutes the result's rows without flipping its sign.
pub fn canonicalize_sign_keyed(v: &mut [f64], keys: Option<&[f64]>) {
    let negative = match order_free_sign(v, keys) {
        Some(negative) => negative,
        None => lowest_index_sign(v),
    };
    flip_if(v, negative);
}

/// Whether `v` must be negated, decided without reference to node order;
/// `None` when neither the peak entry nor the keys can decide.
fn order_free_sign(v: &[f64], keys: Option<&[f64]>) -> Option<bool> {
    let peak = v.iter().map(|x| x.abs()).reduce(f64::max)?;
    let tied = |x: &&f64| x.abs() > peak - SIGN_TIE_TOLERANCE;
    let first = *v.iter().find(tied)?;
    if v.iter().filter(tied).all(|&x| (x < 0.0) == (first < 0.0)) {
        return Some(first < 0.0);
    }
    let s: f64 = v.iter().zip(keys?).map(|(a, b)| a * b).sum();
    (s.abs() > SIGN_TIE_TOLERANCE).then_some(s < 0.0)
}

fn lowest_index_sign(v: &[f64]) -> bool {
    let peak = v.iter().map(|x| x.abs()).fold(0.0, f64::max);
    v.iter()
        .find(|x| x.abs() > peak - SIGN_TIE_TOLERANCE)
        .is_some_and(|&x| x < 0.0)
}

/// Relabeling-free statement about the relative orientation of `v` and `a`:
/// sums of `v_i a_i w_i`, odd in both vectors, for node weights `w` that
/// permute with the nodes. The first sum clearly away from zero wins.
fn relative_orientation(v: &[f64], a: &[f64], weights: &[f64]) -> Option<f64> {
    let weighted: f64 = v.iter().zip(a).zip(weights).map(|((x, y), w)| x * y * w).sum();
    let cubic: f64 = v.iter().zip(a).map(|(x, y)| x * y * (x * x + y * y)).sum();
    [weighted, cubic].into_iter().find(|s| s.abs() > SIGN_TIE_TOLERANCE)
}

/// Scalar fingerprint per node row, used to break sign ties in
/// [`positional_encoding_keyed`]. Equal rows get equal keys; distinct rows
/// get unrelated keys in `[1, 2)` (from a SHA-256 digest of the row), so
/// sums over keys of distinct atoms do not cancel by accident. Rows that are
/// entirely zero (the virtual node) get key 0.
pub fn node_keys(node_features: &Tensor<f64>) -> Vec<f64> {
    (0..node_features.rows())
        .map(|r| {
            let row = node_features.row(r);
            if row.iter().all(|&f| f == 0.0) {
                return 0.0;
            }
            let mut h = Sha256::new();
            for f in row {
                h.update(f.to_le_bytes());
            }
            let digest = h.finalize();
            let bits = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
            1.0 + (bits >> 11) as f64 / (1u64 << 53) as f64
        })
        .collect()
}

/// `[n × k_pe]` matrix whose columns are eigenvectors 2..=k_pe+1 (the lowest
/// eigenpair is skipped), zero-padded when the graph is too small. Columns
/// follow the canonical sign convention.
pub fn positional_encoding(basis: &SpectralBasis, k_pe: usize) -> Tensor<f64> {
    positional_encoding_keyed(basis, k_pe, None)
}

/// [`positional_encoding`] with sign ties broken without reference to node
/// numbering wherever the graph allows it.
///
/// Each non-trivial eigenvector is first oriented by its peak entry or, for
/// peaks tied with opposite signs, by the per-node `keys` (see
/// [`canonicalize_sign_keyed`]). Vectors still undecided are oriented
/// relative to an already oriented one (see [`relative_orientation`]), and
/// only if every such comparison vanishes, by the lowest-index rule. The
/// vectors left to that rule are those negated by a symmetry of the labelled
/// graph, for which either sign yields an isomorphic input.
pub fn positional_encoding_keyed(basis: &SpectralBasis, k_pe: usize, keys: Option<&[f64]>) -> Tensor<f64> {
    let n = basis.n();
    let mut cols: Vec<Vec<f64>> = (1..n).map(|i| basis.vector(i)).collect();
    let decided: Vec<Option<bool>> = cols.iter().map(|c| order_free_sign(c, keys)).collect();
    let mut oriented: Vec<usize> = Vec::new();
    for (i, d) in decided.iter().enumerate() {
        if let Some(negative) = *d {
            flip_if(&mut cols[i], negative);
            oriented.push(i);
        }
    }
    // node weights: feature keys plus the diagonal of L³, which separates
    // nodes the features alone cannot (e.g. ortho from meta ring atoms)
    let weights: Vec<f64> = (0..n)
        .map(|r| {
            let diag: f64 = (0..n)
                .map(|k| basis.eigenvalues[k].powi(3) * basis.eigenvectors.get2(r, k).powi(2))
                .sum();
            diag + keys.map_or(0.0, |k| k[r])
        })
        .collect();
    for i in 0..cols.len() {
        if decided[i].is_some() {
            continue;
        }
        let negative = match oriented
            .iter()
            .find_map(|&j| relative_orientation(&cols[i], &cols[j], &weights))
        {
            Some(s) => s < 0.0,
            None => lowest_index_sign(&cols[i]),
        };
        flip_if(&mut cols[i], negative);
        oriented.push(i);
    }
    let mut out = vec![0.0; n * k_pe];
    for (c, col) in cols.iter().take(k_pe).enumerate() {
        for r in 0..n {
            out[r * k_pe + c] = col[r];
        }
    }
    Tensor::new(vec![n, k_pe], out).expect("pe shape")
}

fn flip_if(v: &mut [f64], negative: bool) {
    if negative {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Training-time augmentation: negates each column independently with
/// probability 1/2.
pub fn random_sign_flip<R: Rng + ?Sized>(pe: &Tensor<f64>, rng: &mut R) -> Tensor<f64> {
    let k = pe.cols();
    let flips: Vec<bool> = (0..k).map(|_| rng.gen_bool(0.5)).collect();
    let data = pe
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| if flips[i % k] { -v } else { v })
        .collect();
    Tensor::new(pe.shape().to_vec(), data).expect("same shape")
}
