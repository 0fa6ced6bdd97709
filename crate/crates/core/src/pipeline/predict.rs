use crate::metrics::{MetricsError, MetricsReport};

use super::checkpoint::Checkpoint;
use super::data::DatasetRecord;
use super::train::{predict_samples, FeatureCache};
use super::PipelineError;

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionOutput {
    pub predictions: Vec<f64>,
    /// Present when every record carries an affinity.
    pub metrics: Option<Result<MetricsReport, MetricsError>>,
}

/// Evaluation-mode predictions for `records`, plus metrics against their
/// transformed affinities when all are known.
pub fn predict_batch(
    checkpoint: &Checkpoint,
    records: &[DatasetRecord],
    workers: usize,
) -> Result<PredictionOutput, PipelineError> {
    if records.is_empty() {
        return Ok(PredictionOutput {
            predictions: Vec::new(),
            metrics: None,
        });
    }
    let model = checkpoint.model()?;
    let cache = FeatureCache::build(records, &model.config, workers)?;
    let predictions = predict_samples(&model, &cache.samples(records), workers)?;
    let truth: Option<Vec<f64>> = records.iter().map(|r| r.target().and_then(Result::ok)).collect();
    let metrics = truth.map(|t| MetricsReport::compute(&predictions, &t));
    Ok(PredictionOutput { predictions, metrics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, Vidta};
    use crate::pipeline::AffinitySpace;

    #[test]
    fn empty_input_gives_empty_output() {
        let ck = Checkpoint::from_model(&Vidta::new(ModelConfig::toy(), 0).unwrap());
        let out = predict_batch(&ck, &[], 1).unwrap();
        assert!(out.predictions.is_empty() && out.metrics.is_none());
    }

    #[test]
    fn metrics_only_with_full_truth() {
        let ck = Checkpoint::from_model(&Vidta::new(ModelConfig::toy(), 0).unwrap());
        let mut recs: Vec<DatasetRecord> = [("CCO", 5.0), ("c1ccccc1N", 6.0), ("CC#N", 7.0)]
            .iter()
            .map(|&(s, a)| DatasetRecord {
                smiles: s.into(),
                protein_seq: "MKVLA".into(),
                affinity: Some(a),
                affinity_space: AffinitySpace::PKd,
            })
            .collect();
        let out = predict_batch(&ck, &recs, 1).unwrap();
        assert_eq!(out.predictions.len(), 3);
        assert!(out.metrics.is_some());
        recs[1].affinity = None;
        assert!(predict_batch(&ck, &recs, 1).unwrap().metrics.is_none());
    }
}
