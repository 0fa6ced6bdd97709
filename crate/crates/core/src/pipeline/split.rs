use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::PipelineError;

/// Train and validation indices of one cross-validation fold.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
}

/// Shuffles `0..n` with `seed` and cuts it into `folds` validation blocks
/// whose sizes differ by at most one. Index lists are sorted.
pub fn kfold_split(n: usize, folds: usize, seed: u64) -> Result<Vec<Fold>, PipelineError> {
    if folds < 2 || folds > n {
        return Err(PipelineError::TooFewRecords { records: n, folds });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / folds, n % folds);
    let mut out = Vec::with_capacity(folds);
    let mut start = 0;
    for f in 0..folds {
        let size = base + usize::from(f < extra);
        let mut valid = order[start..start + size].to_vec();
        let mut train: Vec<usize> = order[..start].iter().chain(&order[start + size..]).copied().collect();
        valid.sort_unstable();
        train.sort_unstable();
        out.push(Fold { train, valid });
        start += size;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_records_five_folds() {
        let folds = kfold_split(10, 5, 1).unwrap();
        assert!(folds.iter().all(|f| f.valid.len() == 2 && f.train.len() == 8));
        assert_eq!(folds, kfold_split(10, 5, 1).unwrap());
        assert_ne!(folds, kfold_split(10, 5, 2).unwrap());
    }

    #[test]
    fn too_few() {
        assert!(matches!(kfold_split(3, 5, 0), Err(PipelineError::TooFewRecords { .. })));
        assert!(kfold_split(3, 1, 0).is_err());
    }
}
