use std::collections::HashMap;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::graph::MolecularGraph;
use crate::model::{featurize_protein, featurize_smiles, Mode, ModelConfig, Sample, Vidta};
use crate::protein_encoder::ProteinSequenceEncoding;
use crate::tensor::{Adam, AdamConfig, Tensor};

use super::checkpoint::{Checkpoint, RngState};
use super::data::DatasetRecord;
use super::PipelineError;

/// Optimization settings. Architectural switches (virtual node, fusion
/// mode, sizes) live in `model`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr_initial: f64,
    pub lr_after_100_epochs: f64,
    /// Epochs run at `lr_initial` before switching.
    pub lr_drop_epoch: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Training stops once this many consecutive epochs fail to improve
    /// the best validation MSE, plus one.
    pub early_stop_patience: usize,
    pub folds: usize,
    pub seed: u64,
    /// Threads for featurization and evaluation; the optimizer step is
    /// always sequential.
    pub workers: usize,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_initial: 3e-4,
            lr_after_100_epochs: 1e-4,
            lr_drop_epoch: 100,
            batch_size: 128,
            max_epochs: 1000,
            early_stop_patience: 200,
            folds: 5,
            seed: 0,
            workers: 1,
            model: ModelConfig::paper(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        if !(self.lr_initial > 0.0 && self.lr_after_100_epochs > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.workers == 0 {
            return bad("batch_size, max_epochs and workers must be positive");
        }
        if self.folds < 2 {
            return bad("folds must be at least 2");
        }
        self.model.validate()?;
        Ok(())
    }

    /// Learning rate for 1-based `epoch`.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        if epoch <= self.lr_drop_epoch {
            self.lr_initial
        } else {
            self.lr_after_100_epochs
        }
    }
}

/// One line of the epoch log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Evaluation-mode MSE over the whole training set after the epoch.
    pub train_mse: f64,
    /// Validation MSE, or the training MSE when no validation set is given.
    pub valid_mse: f64,
    pub lr: f64,
    pub seconds: f64,
}

impl EpochLog {
    pub const CSV_HEADER: &'static str = "epoch,train_mse,valid_mse,lr,seconds";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.3}",
            self.epoch, self.train_mse, self.valid_mse, self.lr, self.seconds
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// State at the best validation epoch.
    pub best: Checkpoint,
    pub log: Vec<EpochLog>,
    pub stopped_early: bool,
}

/// Featurized inputs keyed by their source text, so each distinct drug and
/// protein is processed once.
#[derive(Clone, Debug, Default)]
pub struct FeatureCache {
    pub drugs: HashMap<String, Arc<MolecularGraph>>,
    pub proteins: HashMap<String, Arc<ProteinSequenceEncoding>>,
}

impl FeatureCache {
    /// Featurizes every distinct SMILES and sequence in `records` on
    /// `workers` threads. The first failing record (by index) is reported.
    pub fn build(records: &[DatasetRecord], cfg: &ModelConfig, workers: usize) -> Result<Self, PipelineError> {
        let mut cache = FeatureCache::default();
        cache.extend(records, cfg, workers)?;
        Ok(cache)
    }

    pub fn extend(
        &mut self,
        records: &[DatasetRecord],
        cfg: &ModelConfig,
        workers: usize,
    ) -> Result<(), PipelineError> {
        let mut smiles: Vec<(usize, &str)> = Vec::new();
        let mut seqs: Vec<(usize, &str)> = Vec::new();
        let mut seen_s = std::collections::HashSet::new();
        let mut seen_p = std::collections::HashSet::new();
        for (i, r) in records.iter().enumerate() {
            if !self.drugs.contains_key(&r.smiles) && seen_s.insert(r.smiles.as_str()) {
                smiles.push((i, &r.smiles));
            }
            if !self.proteins.contains_key(&r.protein_seq) && seen_p.insert(r.protein_seq.as_str()) {
                seqs.push((i, &r.protein_seq));
            }
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        let fail = |i: usize, e: crate::model::ModelError| PipelineError::Featurize {
            record: i,
            reason: e.to_string(),
        };
        let (drugs, prots) = pool.install(|| {
            let d: Vec<_> = smiles
                .par_iter()
                .map(|&(i, s)| featurize_smiles(s, cfg).map_err(|e| fail(i, e)))
                .collect();
            let p: Vec<_> = seqs
                .par_iter()
                .map(|&(i, s)| featurize_protein(s, cfg).map_err(|e| fail(i, e)))
                .collect();
            (d, p)
        });
        // Collect in record order so the reported failure is deterministic.
        let mut first_err: Option<PipelineError> = None;
        let mut note = |e: PipelineError| {
            let earlier = match (&first_err, &e) {
                (None, _) => true,
                (Some(PipelineError::Featurize { record: a, .. }), PipelineError::Featurize { record: b, .. }) => b < a,
                _ => false,
            };
            if earlier {
                first_err = Some(e);
            }
        };
        for ((_, s), g) in smiles.iter().zip(drugs) {
            match g {
                Ok(g) => {
                    self.drugs.insert(s.to_string(), Arc::new(g));
                }
                Err(e) => note(e),
            }
        }
        for ((_, s), p) in seqs.iter().zip(prots) {
            match p {
                Ok(p) => {
                    self.proteins.insert(s.to_string(), Arc::new(p));
                }
                Err(e) => note(e),
            }
        }
        match first_err {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    pub fn sample(&self, record: &DatasetRecord) -> Option<Sample<'_>> {
        Some(Sample {
            drug: self.drugs.get(&record.smiles)?,
            protein: self.proteins.get(&record.protein_seq)?,
        })
    }

    pub fn samples<'a>(&'a self, records: &[DatasetRecord]) -> Vec<Sample<'a>> {
        records
            .iter()
            .map(|r| self.sample(r).expect("record featurized"))
            .collect()
    }
}

fn targets(records: &[DatasetRecord]) -> Result<Vec<f64>, PipelineError> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| match r.target() {
            Some(t) => t,
            None => Err(PipelineError::MissingAffinity { record: i }),
        })
        .collect()
}

/// Eval-mode predictions, computed in chunks on `workers` threads. Each
/// prediction depends only on its own sample, so the result is identical
/// for any worker count.
pub fn predict_samples(model: &Vidta<f32>, samples: &[Sample<'_>], workers: usize) -> Result<Vec<f64>, PipelineError> {
    const CHUNK: usize = 64;
    if samples.is_empty() {
        return Ok(Vec::new());
    }
    let run = || -> Result<Vec<f64>, PipelineError> {
        let chunks: Vec<Result<Vec<f32>, _>> = samples.par_chunks(CHUNK).map(|c| model.predict(c)).collect();
        let mut out = Vec::with_capacity(samples.len());
        for c in chunks {
            out.extend(c?.into_iter().map(f64::from));
        }
        Ok(out)
    };
    if workers <= 1 {
        let mut out = Vec::with_capacity(samples.len());
        for c in samples.chunks(CHUNK) {
            out.extend(model.predict(c)?.into_iter().map(f64::from));
        }
        return Ok(out);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| PipelineError::Config(e.to_string()))?
        .install(run)
}

fn mse(pred: &[f64], truth: &[f64]) -> f64 {
    pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64
}

/// Mini-batch Adam on the MSE loss with a step learning-rate schedule and
/// early stopping on validation MSE. Without a validation set, the training
/// MSE drives model selection. `on_epoch` sees each log line as it is made.
pub fn train(
    train_set: &[DatasetRecord],
    valid_set: Option<&[DatasetRecord]>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome, PipelineError> {
    cfg.validate()?;
    if train_set.len() < 2 {
        return Err(PipelineError::TooFewRecords {
            records: train_set.len(),
            folds: 1,
        });
    }
    let train_y = targets(train_set)?;
    let valid_y = valid_set.map(targets).transpose()?;

    let mut cache = FeatureCache::build(train_set, &cfg.model, cfg.workers)?;
    if let Some(v) = valid_set {
        cache.extend(v, &cfg.model, cfg.workers)?;
    }
    let train_samples = cache.samples(train_set);
    let valid_samples = valid_set.map(|v| cache.samples(v));

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init_seed = rand::Rng::gen(&mut rng);
    let mut model = Vidta::<f32>::new(cfg.model.clone(), init_seed)?;
    let mut adam = Adam::new(AdamConfig::default(), model.params.trainable.values().map(Tensor::len));

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::new();
    let mut best: Option<Checkpoint> = None;
    let mut best_mse = f64::INFINITY;
    let mut stale = 0usize;
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        let lr = cfg.learning_rate(epoch);
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let samples: Vec<Sample> = batch.iter().map(|&i| train_samples[i]).collect();
            let ys: Vec<f32> = batch.iter().map(|&i| train_y[i] as f32).collect();
            let step = model.loss_and_grads(&samples, &ys, &mut Mode::Train { rng: &mut rng })?;
            {
                let mut params: Vec<&mut [f32]> = model.params.trainable.values_mut().map(Tensor::data_mut).collect();
                let grads: Vec<Option<&[f32]>> = step.grads.iter().map(|g| g.as_ref().map(Tensor::data)).collect();
                adam.step(&mut params, &grads, lr);
            }
            model.update_running_stats(&step.head_stats)?;
        }

        let train_mse = mse(&predict_samples(&model, &train_samples, cfg.workers)?, &train_y);
        let valid_mse = match (&valid_samples, &valid_y) {
            (Some(s), Some(y)) => mse(&predict_samples(&model, s, cfg.workers)?, y),
            _ => train_mse,
        };
        let entry = EpochLog {
            epoch,
            train_mse,
            valid_mse,
            lr,
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&entry);
        log.push(entry);

        if valid_mse < best_mse {
            best_mse = valid_mse;
            stale = 0;
            best = Some(Checkpoint {
                config: model.config.clone(),
                params: model.params.clone(),
                optimizer: Some(adam.clone()),
                epoch,
                best_valid_mse: valid_mse,
                rng: Some(RngState::capture(&rng)),
            });
        } else {
            stale += 1;
            if stale > cfg.early_stop_patience {
                stopped_early = true;
                break;
            }
        }
    }

    let best = match best {
        Some(b) => b,
        // every epoch produced a non-finite loss
        None => Checkpoint {
            optimizer: Some(adam),
            epoch: log.len(),
            rng: Some(RngState::capture(&rng)),
            ..Checkpoint::from_model(&model)
        },
    };
    Ok(TrainOutcome {
        best,
        log,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::data::AffinitySpace;

    fn records() -> Vec<DatasetRecord> {
        [
            ("CCO", "MKVL", 5.0),
            ("c1ccccc1", "GGSA", 6.0),
            ("CC(=O)O", "MKT", 7.5),
            ("CN", "WYY", 4.0),
        ]
        .iter()
        .map(|&(s, p, a)| DatasetRecord {
            smiles: s.into(),
            protein_seq: p.into(),
            affinity: Some(a),
            affinity_space: AffinitySpace::PKd,
        })
        .collect()
    }

    fn toy_config() -> TrainConfig {
        TrainConfig {
            model: ModelConfig::toy(),
            max_epochs: 5,
            batch_size: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn learning_rate_schedule() {
        let c = TrainConfig::default();
        assert_eq!(c.learning_rate(1), 3e-4);
        assert_eq!(c.learning_rate(100), 3e-4);
        assert_eq!(c.learning_rate(101), 1e-4);
    }

    #[test]
    fn logs_are_reproducible() {
        let recs = records();
        let a = train(&recs, None, &toy_config(), |_| {}).unwrap();
        let b = train(&recs, None, &toy_config(), |_| {}).unwrap();
        let strip = |l: &[EpochLog]| {
            l.iter()
                .map(|e| (e.epoch, e.train_mse, e.valid_mse, e.lr))
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(&a.log), strip(&b.log));
        assert_eq!(a.best, b.best);
        assert_eq!(a.log.len(), 5);
    }

    #[test]
    fn patience_zero_stops_at_first_non_improving_epoch() {
        let recs = records();
        let cfg = TrainConfig {
            early_stop_patience: 0,
            max_epochs: 200,
            ..toy_config()
        };
        let out = train(&recs, Some(&recs[..2]), &cfg, |_| {}).unwrap();
        let n = out.log.len();
        if out.stopped_early {
            assert!(
                out.log[n - 1].valid_mse
                    >= out.log[..n - 1]
                        .iter()
                        .map(|e| e.valid_mse)
                        .fold(f64::INFINITY, f64::min)
            );
            for w in out.log[..n - 1].windows(2) {
                assert!(w[1].valid_mse < w[0].valid_mse);
            }
        } else {
            assert_eq!(n, 200);
        }
    }

    #[test]
    fn best_checkpoint_matches_logged_best() {
        let recs = records();
        let out = train(&recs, None, &toy_config(), |_| {}).unwrap();
        let best = out.log.iter().map(|e| e.valid_mse).fold(f64::INFINITY, f64::min);
        assert_eq!(out.best.best_valid_mse, best);
        let model = out.best.model().unwrap();
        let cache = FeatureCache::build(&recs, &model.config, 1).unwrap();
        let pred = predict_samples(&model, &cache.samples(&recs), 1).unwrap();
        let y = targets(&recs).unwrap();
        assert!(mse(&pred, &y) <= best + 1e-6);
    }

    #[test]
    fn featurization_errors_name_the_record() {
        let mut recs = records();
        recs[2].smiles = "C1CC".into();
        match train(&recs, None, &toy_config(), |_| {}) {
            Err(PipelineError::Featurize { record, .. }) => assert_eq!(record, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn parallel_prediction_matches_sequential() {
        let recs = records();
        let model = Vidta::<f32>::new(ModelConfig::toy(), 1).unwrap();
        let cache = FeatureCache::build(&recs, &model.config, 2).unwrap();
        let s = cache.samples(&recs);
        assert_eq!(
            predict_samples(&model, &s, 1).unwrap(),
            predict_samples(&model, &s, 3).unwrap()
        );
    }
}
