use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DatasetSplit, Granularity, MetricsReport, TrainError};
use crate::nn::{softmax, softmax_xent_batch, AdamConfig, AdamState, Context, Network, Tensor};
use crate::signal_io::ArrhythmiaClass;

/// One model input: an image `[h, w, 3]` or a wrapped vector, flattened.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub record_id: String,
    pub segment_index: usize,
    pub label: ArrhythmiaClass,
    pub input: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            patience: 10,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub history: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
}

fn check_inputs(net: &Network<f32>, samples: &[Sample]) -> Result<(), TrainError> {
    let len: usize = net.input_dims().iter().product();
    for s in samples {
        if s.input.len() != len {
            return Err(TrainError::BadSample {
                record_id: s.record_id.clone(),
                segment: s.segment_index,
                msg: format!("{} values, model expects {len}", s.input.len()),
            });
        }
    }
    Ok(())
}

fn batch_tensor(net: &Network<f32>, samples: &[&Sample]) -> Result<Tensor<f32>, TrainError> {
    let mut dims = vec![samples.len()];
    dims.extend_from_slice(net.input_dims());
    let data = samples.iter().flat_map(|s| s.input.iter().copied()).collect();
    Ok(Tensor::from_vec(&dims, data)?)
}

fn argmax(p: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Mini-batch Adam on softmax cross-entropy. Each epoch reshuffles the
/// training set, then scores image-level validation accuracy. The
/// parameters of the best epoch (earliest on ties) are restored before
/// returning; training stops after `patience` epochs without improvement.
pub fn train(
    net: &mut Network<f32>,
    train_set: &[Sample],
    val_set: &[Sample],
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome, TrainError> {
    if train_set.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if val_set.is_empty() {
        return Err(TrainError::EmptySplit("val"));
    }
    if config.batch_size == 0 {
        return Err(TrainError::Nn(crate::nn::NnError::InvalidHyperparameter(
            "batch_size must be positive".into(),
        )));
    }
    check_inputs(net, train_set)?;
    check_inputs(net, val_set)?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed);
    shuffle_rng.set_stream(101);
    let mut ctx = Context::new(true, seed);
    ctx.rng.set_stream(102);
    let mut adam = AdamState::new(config.adam);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(usize, f64, Vec<(String, Tensor<f32>)>)> = None;
    let mut stale = 0;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let x = batch_tensor(net, &batch)?;
            let labels: Vec<usize> = batch.iter().map(|s| s.label.index()).collect();
            net.zero_grad();
            let logits = net.forward(&x, &mut ctx)?;
            let (loss, _, grad) = softmax_xent_batch(&logits, &labels)?;
            if !loss.is_finite() {
                return Err(TrainError::DivergedLoss { epoch, batch: b, loss: loss as f64 });
            }
            loss_sum += loss as f64 * batch.len() as f64;
            net.backward(&grad)?;
            adam.step(&mut net.params_mut())?;
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let probs = predict(net, val_set, config.batch_size)?;
        let correct = probs
            .iter()
            .zip(val_set)
            .filter(|(p, s)| argmax(p) == s.label.index())
            .count();
        let val_acc = correct as f64 / val_set.len() as f64;
        log::info!("epoch {epoch}: train_loss {train_loss:.5} val_acc {val_acc:.4}");
        history.push(EpochLog { epoch, train_loss, val_acc });
        if best.as_ref().is_none_or(|(_, acc, _)| val_acc > *acc) {
            let snapshot = net
                .named_params()
                .into_iter()
                .map(|(n, t)| (n, t.clone_values()))
                .collect();
            best = Some((epoch, val_acc, snapshot));
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    let (best_epoch, best_val_acc) = match best {
        Some((epoch, acc, params)) => {
            net.load_params(&params)?;
            (epoch, acc)
        }
        None => (0, 0.0),
    };
    Ok(TrainOutcome { history, best_epoch, best_val_acc })
}

/// Class probabilities per sample, in eval mode.
pub fn predict(net: &mut Network<f32>, samples: &[Sample], batch_size: usize) -> Result<Vec<Vec<f32>>, TrainError> {
    check_inputs(net, samples)?;
    let mut ctx = Context::new(false, 0);
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let logits = net.forward(&batch_tensor(net, &refs)?, &mut ctx)?;
        let c = logits.dims()[1];
        out.extend(logits.data().chunks_exact(c).map(softmax));
    }
    Ok(out)
}

/// Most frequent prediction; ties go to the larger summed probability,
/// then to the lowest class index.
pub fn majority_vote(predictions: &[usize], probs: &[Vec<f32>], n_classes: usize) -> usize {
    let mut votes = vec![0usize; n_classes];
    let mut mass = vec![0.0f64; n_classes];
    for &p in predictions {
        votes[p] += 1;
    }
    for row in probs {
        for (m, &v) in mass.iter_mut().zip(row) {
            *m += v as f64;
        }
    }
    let mut best = 0;
    for c in 1..n_classes {
        if votes[c] > votes[best] || (votes[c] == votes[best] && mass[c] > mass[best]) {
            best = c;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub image: MetricsReport,
    pub record: MetricsReport,
    /// `(record_id, label, predicted)` sorted by record id.
    pub record_predictions: Vec<(String, ArrhythmiaClass, ArrhythmiaClass)>,
}

impl Evaluation {
    /// Scores precomputed probabilities. Every record must contribute exactly
    /// the segments `0..segments_per_record`.
    pub fn from_probabilities(
        samples: &[Sample],
        probs: &[Vec<f32>],
        segments_per_record: usize,
    ) -> Result<Self, TrainError> {
        assert_eq!(samples.len(), probs.len(), "one probability row per sample");
        let n = ArrhythmiaClass::COUNT;
        let preds: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
        let labels: Vec<usize> = samples.iter().map(|s| s.label.index()).collect();
        let image = MetricsReport::from_pairs(n, &labels, &preds, Granularity::Image);

        let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, s) in samples.iter().enumerate() {
            groups.entry(&s.record_id).or_default().push(i);
        }
        let mut record_predictions = Vec::with_capacity(groups.len());
        for (id, idx) in &groups {
            let segs: HashSet<usize> = idx.iter().map(|&i| samples[i].segment_index).collect();
            let complete = idx.len() == segments_per_record
                && segs.len() == segments_per_record
                && segs.iter().all(|&s| s < segments_per_record);
            if !complete {
                return Err(TrainError::IncompleteRecord {
                    record_id: id.to_string(),
                    found: segs.len(),
                    expected: segments_per_record,
                });
            }
            let label = samples[idx[0]].label;
            if let Some(&j) = idx.iter().find(|&&j| samples[j].label != label) {
                return Err(TrainError::BadSample {
                    record_id: id.to_string(),
                    segment: samples[j].segment_index,
                    msg: "label differs from the rest of its record".into(),
                });
            }
            let p: Vec<usize> = idx.iter().map(|&i| preds[i]).collect();
            let pr: Vec<Vec<f32>> = idx.iter().map(|&i| probs[i].clone()).collect();
            let vote = majority_vote(&p, &pr, n);
            let vote = ArrhythmiaClass::from_index(vote).expect("class index");
            record_predictions.push((id.to_string(), label, vote));
        }
        let rl: Vec<usize> = record_predictions.iter().map(|r| r.1.index()).collect();
        let rp: Vec<usize> = record_predictions.iter().map(|r| r.2.index()).collect();
        let record = MetricsReport::from_pairs(n, &rl, &rp, Granularity::Record);
        Ok(Self { image, record, record_predictions })
    }
}

/// Predicts `test_set` and reports both granularities. The split must be
/// disjoint and contain every evaluated record in its test list.
pub fn evaluate(
    net: &mut Network<f32>,
    test_set: &[Sample],
    split: &DatasetSplit,
    segments_per_record: usize,
    batch_size: usize,
) -> Result<Evaluation, TrainError> {
    if test_set.is_empty() {
        return Err(TrainError::EmptySplit("test"));
    }
    split.check_disjoint()?;
    let test_ids: HashSet<&str> = split.test.iter().map(String::as_str).collect();
    if let Some(s) = test_set.iter().find(|s| !test_ids.contains(s.record_id.as_str())) {
        return Err(TrainError::Leakage(s.record_id.clone()));
    }
    let probs = predict(net, test_set, batch_size)?;
    Evaluation::from_probabilities(test_set, &probs, segments_per_record)
}
