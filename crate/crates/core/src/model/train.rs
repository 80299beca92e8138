use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{adam_step, AdamConfig, AdamState, Tape};
use crate::error::{GpnetError, Result};
use crate::graph::FeatureMapSequence;
use crate::retrieval::{evaluate_leave_one_out, EvalOptions, GalleryItem, RetrievalIndex};

use super::{identity_loss, triplet_loss, Gpnet, GpnetConfig, PreparedSequence};

/// Offset mixed into the seed of the batch sampler so it does not replay the
/// parameter initialization stream.
const SAMPLER_STREAM: u64 = 0x5eed_ba7c;

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    pub lr: f64,
    pub triplet_loss: f64,
    pub identity_loss: f64,
    pub total_loss: f64,
    pub train_rank1: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Gpnet,
    pub history: Vec<HistoryRow>,
    /// Identity for each classifier output.
    pub classes: Vec<u64>,
}

pub fn history_csv(rows: &[HistoryRow]) -> String {
    let mut s = String::from("epoch,lr,triplet_loss,identity_loss,total_loss,train_rank1\n");
    for r in rows {
        let rank1 = r.train_rank1.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.epoch, r.lr, r.triplet_loss, r.identity_loss, r.total_loss, rank1
        );
    }
    s
}

/// Draws batches of `P` identities with `K` sequences each.
#[derive(Debug)]
pub struct PkSampler {
    by_identity: Vec<Vec<usize>>,
    p: usize,
    k: usize,
    rng: ChaCha8Rng,
}

impl PkSampler {
    /// `labels[i]` is the class of sequence `i`.
    pub fn new(labels: &[usize], p: usize, k: usize, seed: u64) -> Result<Self> {
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &l) in labels.iter().enumerate() {
            groups.entry(l).or_default().push(i);
        }
        if groups.len() < p {
            return Err(GpnetError::Config(format!(
                "dataset has {} identities, PK sampling needs at least {p}",
                groups.len()
            )));
        }
        Ok(Self {
            by_identity: groups.into_values().collect(),
            p,
            k,
            rng: ChaCha8Rng::seed_from_u64(seed ^ SAMPLER_STREAM),
        })
    }

    /// One epoch of batches; identities cycle through a fresh shuffle.
    pub fn epoch(&mut self, batches: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.by_identity.len()).collect();
        order.shuffle(&mut self.rng);
        let mut cursor = 0;
        let mut out = Vec::with_capacity(batches);
        for _ in 0..batches {
            if cursor + self.p > order.len() {
                order.shuffle(&mut self.rng);
                cursor = 0;
            }
            let mut batch = Vec::with_capacity(self.p * self.k);
            for &id in &order[cursor..cursor + self.p] {
                let mut members = self.by_identity[id].clone();
                members.shuffle(&mut self.rng);
                batch.extend((0..self.k).map(|j| members[j % members.len()]));
            }
            cursor += self.p;
            out.push(batch);
        }
        out
    }
}

fn training_rank1(model: &Gpnet, prepared: &[PreparedSequence], chunk: usize) -> Result<f64> {
    let refs: Vec<&PreparedSequence> = prepared.iter().collect();
    let feats = model.embed(&refs, chunk)?;
    let items = feats
        .into_iter()
        .zip(prepared)
        .map(|(feature, s)| GalleryItem {
            feature,
            identity: s.identity,
            camera: s.camera,
        })
        .collect();
    let report = evaluate_leave_one_out(&RetrievalIndex::new(items)?, EvalOptions::default())?;
    Ok(report.rank(1))
}

/// Trains a fresh network on `sequences` with batch-hard triplet plus identity loss.
pub fn train(sequences: &[FeatureMapSequence], config: GpnetConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let first = sequences
        .first()
        .ok_or_else(|| GpnetError::Config("training set is empty".into()))?;
    let channels = first.channels();
    let classes: Vec<u64> = {
        let mut ids: Vec<u64> = sequences.iter().map(|s| s.identity).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    };
    let num_identities = config.num_identities.unwrap_or(classes.len());
    if num_identities < classes.len() {
        return Err(GpnetError::Config(format!(
            "num_identities = {num_identities} but the training set has {} identities",
            classes.len()
        )));
    }
    let labels: Vec<usize> = sequences
        .iter()
        .map(|s| {
            classes
                .binary_search(&s.identity)
                .expect("identity collected above")
        })
        .collect();
    let mut sampler = PkSampler::new(
        &labels,
        config.batch_identities,
        config.batch_instances,
        config.seed,
    )?;

    let mut model = Gpnet::new(config.clone(), channels, num_identities)?;
    let prepared: Vec<PreparedSequence> = sequences
        .iter()
        .map(|s| model.prepare(s))
        .collect::<Result<_>>()?;
    let batch_size = config.batch_size();
    let batches_per_epoch = (sequences.len() / batch_size).max(1);
    let mut state = AdamState::new(model.params().values());
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        let adam = AdamConfig {
            lr,
            weight_decay: config.weight_decay,
            ..AdamConfig::default()
        };
        let (mut trip_sum, mut id_sum) = (0.0, 0.0);
        let batches = sampler.epoch(batches_per_epoch);
        for batch in &batches {
            let members: Vec<&PreparedSequence> = batch.iter().map(|&i| &prepared[i]).collect();
            let batch_labels: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let mut tape = Tape::new();
            let bound = model.params().bind(&mut tape);
            let fw = model.forward(&mut tape, &bound, &members)?;
            let trip = triplet_loss(&mut tape, fw.representation, &batch_labels, config.margin)?;
            let ident = identity_loss(&mut tape, fw.logits, &batch_labels)?;
            let total = tape.add(trip, ident)?;
            tape.backward(total)?;
            trip_sum += tape.value(trip)[[0, 0]];
            id_sum += tape.value(ident)[[0, 0]];
            let grads = model.params().gradients(&tape, &bound);
            adam_step(model.params_mut().values_mut(), &grads, &mut state, &adam)?;
        }
        let nb = batches.len() as f64;
        let last = epoch + 1 == config.epochs;
        let train_rank1 =
            if config.rank1_every > 0 && ((epoch + 1) % config.rank1_every == 0 || last) {
                Some(training_rank1(&model, &prepared, batch_size)?)
            } else {
                None
            };
        let row = HistoryRow {
            epoch,
            lr,
            triplet_loss: trip_sum / nb,
            identity_loss: id_sum / nb,
            total_loss: (trip_sum + id_sum) / nb,
            train_rank1,
        };
        log::info!(
            "epoch {epoch}: lr {lr:.2e} triplet {:.4} identity {:.4} rank1 {:?}",
            row.triplet_loss,
            row.identity_loss,
            row.train_rank1
        );
        history.push(row);
    }
    Ok(TrainOutcome {
        model,
        history,
        classes,
    })
}
