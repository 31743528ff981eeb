//! End-to-end runs on synthetic data: generate, train, evaluate on held-out
//! identities.

use crate::config::Config;
use crate::error::Result;
use crate::eval::{self, EmbeddedSets, Fusion};
use crate::fusion::FusionModel;
use crate::synthdata::{generate, truncate_samples, verification_pairs, Dataset};
use crate::trainer::{train, OptimizerState, TrainLog, TrainSpec};

/// A trained model and its log.
pub struct Trained {
    pub model: FusionModel,
    pub state: OptimizerState,
    pub log: TrainLog,
}

pub fn train_on(config: &Config, data: &Dataset) -> Result<Trained> {
    let mut model = FusionModel::new(config.model_shape(), config.model.clone(), config.seed)?;
    let mut state = OptimizerState::new(&model.store, config.trainer.momentum, config.trainer.weight_decay);
    let mut log = TrainLog::default();
    let spec = TrainSpec {
        hp: &config.loss,
        dropout: &config.dropout,
        trainer: &config.trainer,
        seed: config.seed,
    };
    train(&mut model, &mut state, &data.train_sets(), &spec, &mut log, &mut |_, _| Ok(()))?;
    Ok(Trained { model, state, log })
}

/// Held-out verification results behind the trend checks.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub auc_quality: f64,
    pub auc_avg: f64,
    pub auc_sum: f64,
    /// Quality fusion with one sample per modality.
    pub auc_single: f64,
    pub p_b: Vec<f64>,
    pub spearman: Option<f64>,
    /// Per-modality Spearman of weights against `1 − γ`.
    pub spearman_per_modality: Vec<Option<f64>>,
    pub final_loss: f64,
    pub first_loss: f64,
}

pub fn evaluate_heldout(config: &Config, data: &Dataset, model: &FusionModel, pairs: usize) -> Result<Outcome> {
    let sets = data.heldout_sets();
    let pairs = verification_pairs(&sets, pairs, 0.5, config.eval.seed)?;
    let auc = |emb: &EmbeddedSets, f: Fusion| -> Result<f64> {
        Ok(eval::roc_metrics(&eval::verification_scores(emb, &pairs, f)?)?.auc)
    };
    let emb = EmbeddedSets::new(model, &sets)?;
    let single = EmbeddedSets::new(model, &truncate_samples(&sets, 1)?)?;

    let rows = eval::quality_rows(&sets, &emb.quality);
    let defined = |r: Result<f64>| r.ok();
    let spearman_per_modality = (0..emb.modalities())
        .map(|k| {
            let sub: Vec<_> = rows.iter().filter(|r| r.modality == k).cloned().collect();
            defined(eval::quality_correlation(&sub))
        })
        .collect();
    let weights: Vec<Vec<f64>> = emb.quality.iter().map(|e| e.inter.clone()).collect();
    Ok(Outcome {
        auc_quality: auc(&emb, Fusion::Quality)?,
        auc_avg: auc(&emb, Fusion::Avg)?,
        auc_sum: auc(&emb, Fusion::Sum)?,
        auc_single: auc(&single, Fusion::Quality)?,
        p_b: eval::quality_expectation(&weights)?,
        spearman: defined(eval::quality_correlation(&rows)),
        spearman_per_modality,
        final_loss: 0.0,
        first_loss: 0.0,
    })
}

/// Generate with the config's seeds, train, and evaluate on held-out data.
pub fn run(config: &Config, pairs: usize) -> Result<Outcome> {
    config.validate()?;
    let data = generate(&config.generator)?;
    let t = train_on(config, &data)?;
    let mut o = evaluate_heldout(config, &data, &t.model, pairs)?;
    o.first_loss = t.log.rows.first().map_or(f64::NAN, |r| r.total);
    o.final_loss = t.log.rows.last().map_or(f64::NAN, |r| r.total);
    Ok(o)
}

/// The default config with every seed derived from `seed`.
pub fn seeded(base: &Config, seed: u64) -> Config {
    let mut c = base.clone();
    c.seed = seed;
    c.generator.seed = seed;
    c.eval.seed = seed;
    c
}
