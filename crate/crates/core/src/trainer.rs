//! Mini-batch SGD over whole sample sets.
//!
//! Every random draw is keyed by `(seed, epoch)` for the batch order and by
//! `(seed, step)` for dropout, so a run resumed from a checkpoint at step
//! `s` replays exactly the steps a straight run would take after `s`.

use std::fmt::Write as _;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Array, Graph, ParamId, ParamStore};
use crate::error::{invalid, Error, Result};
use crate::fusion::{DropoutSpec, ForwardOutput, FusionMode, FusionModel, MultimodalSampleSet, TrainNoise};
use crate::losses::{total_loss, update_centers, CenterBank, CenterBatch, HyperParams, Margins};

/// Step learning-rate decay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Schedule {
    pub lr0: f64,
    pub decay: f64,
    /// First step at the decayed rate.
    pub s0: u64,
    /// Steps between further decays.
    pub s1: u64,
    pub lr_min: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            lr0: 0.05,
            decay: 0.1,
            s0: 600,
            s1: 300,
            lr_min: 1e-6,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr_min > 0.0 && self.lr_min <= self.lr0) {
            return Err(Error::Config("schedule needs 0 < lr_min <= lr0".into()));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Config("schedule decay must lie in (0, 1]".into()));
        }
        if self.s1 == 0 {
            return Err(Error::Config("schedule interval s1 must be positive".into()));
        }
        Ok(())
    }
}

/// Margins at `step` under a linear warm-up of `warmup` steps.
pub fn margins_at(target: Margins, warmup: u64, step: u64) -> Margins {
    if step >= warmup {
        return target;
    }
    let b = step as f64 / warmup as f64;
    Margins {
        m1: 1.0 + b * (target.m1 - 1.0),
        m2: b * target.m2,
        m3: b * target.m3,
    }
}

pub fn lr_at(schedule: &Schedule, step: u64) -> f64 {
    if step < schedule.s0 {
        return schedule.lr0;
    }
    let decays = 1 + (step - schedule.s0) / schedule.s1;
    let lr = schedule.lr0 * schedule.decay.powf(decays as f64);
    lr.max(schedule.lr_min)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub epochs: usize,
    /// Sample sets per batch.
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Save every this many steps (0: only at the end).
    pub checkpoint_every: u64,
    /// Steps over which the angular margins grow linearly from none to
    /// their configured values. With the feature norm as logit scale, full
    /// margins from the first step make every target logit lose, and the
    /// cheapest descent direction is shrinking all embeddings to zero.
    pub margin_warmup: u64,
    pub schedule: Schedule,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            epochs: 20,
            batch_size: 16,
            momentum: 0.9,
            weight_decay: 5e-4,
            checkpoint_every: 0,
            margin_warmup: 300,
            schedule: Schedule::default(),
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("need momentum in [0, 1) and weight_decay >= 0".into()));
        }
        self.schedule.validate()
    }
}

/// Heavy-ball momentum buffers plus the global step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub momentum: f64,
    pub weight_decay: f64,
    pub step: u64,
    /// One buffer per parameter, indexed like the store.
    pub velocity: Vec<Array>,
}

impl OptimizerState {
    pub fn new(store: &ParamStore, momentum: f64, weight_decay: f64) -> Self {
        OptimizerState {
            momentum,
            weight_decay,
            step: 0,
            velocity: store.iter().map(|(_, p)| Array::zeros(p.value.shape())).collect(),
        }
    }
}

/// `g' = g + wd·w; v ← μ v + g'; w ← w − lr v`, then unit-row
/// renormalization. Weight decay only touches layer weights and biases.
/// Parameters without a gradient this step are left alone. Nothing is
/// modified if any gradient is non-finite.
pub fn sgd_step(store: &mut ParamStore, grads: &[(ParamId, Array)], state: &mut OptimizerState, lr: f64) -> Result<()> {
    if state.velocity.len() != store.len() {
        return Err(invalid("optimizer state does not match the parameter store"));
    }
    for (id, g) in grads {
        let p = store.get(*id);
        if !g.same_shape(&p.value) {
            return Err(Error::ShapeMismatch {
                op: "sgd_step",
                shapes: vec![p.value.shape().to_vec(), g.shape().to_vec()],
            });
        }
        if !g.all_finite() {
            return Err(Error::NonFinite { op: "sgd_step" });
        }
    }
    for (id, g) in grads {
        let kind = store.get(*id).kind;
        if !kind.trainable() {
            continue;
        }
        let wd = if kind.decays() { state.weight_decay } else { 0.0 };
        let v = state.velocity[id.index()].data_mut();
        let w = store.value_mut(*id).data_mut();
        for ((w, v), &g) in w.iter_mut().zip(v.iter_mut()).zip(g.data()) {
            *v = state.momentum * *v + g + wd * *w;
            *w -= lr * *v;
        }
    }
    store.renormalize_rows();
    state.step += 1;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    /// Weighted loss components, in objective order.
    pub terms: Vec<(String, f64)>,
    pub total: f64,
    /// Batch mean of the modality weights.
    pub p_b: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let Some(first) = self.rows.first() else {
            writeln!(out, "step,epoch,lr,total")?;
            return Ok(());
        };
        let mut header = String::from("step,epoch,lr");
        for (name, _) in &first.terms {
            write!(header, ",{name}").unwrap();
        }
        header.push_str(",total");
        for k in 0..first.p_b.len() {
            write!(header, ",p_b_{k}").unwrap();
        }
        writeln!(out, "{header}")?;
        for r in &self.rows {
            let mut line = format!("{},{},{}", r.step, r.epoch, r.lr);
            for (_, v) in &r.terms {
                write!(line, ",{v}").unwrap();
            }
            write!(line, ",{}", r.total).unwrap();
            for p in &r.p_b {
                write!(line, ",{p}").unwrap();
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

/// Everything a training run needs besides the model and data.
#[derive(Clone, Debug)]
pub struct TrainSpec<'a> {
    pub hp: &'a HyperParams,
    pub dropout: &'a DropoutSpec,
    pub trainer: &'a TrainerConfig,
    pub seed: u64,
}

fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((1 << 63) | epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

fn vec_of(g: &Graph, n: crate::autodiff::NodeId) -> Vec<f64> {
    g.value(n).data().to_vec()
}

/// Train from `state.step` to the end of `trainer.epochs` epochs.
///
/// Rows are appended to `log` as steps complete, so the caller keeps the
/// log of an aborted run. `checkpoint` runs every `checkpoint_every` steps
/// and after the last one; on a non-finite loss the run stops before
/// touching the parameters and returns [`Error::TrainingAborted`].
pub fn train(
    model: &mut FusionModel,
    state: &mut OptimizerState,
    sets: &[MultimodalSampleSet],
    spec: &TrainSpec<'_>,
    log: &mut TrainLog,
    checkpoint: &mut dyn FnMut(&FusionModel, &OptimizerState) -> Result<()>,
) -> Result<()> {
    let tc = spec.trainer;
    tc.validate()?;
    spec.hp.validate()?;
    spec.dropout.validate()?;
    if tc.epochs == 0 {
        return Ok(());
    }
    if sets.is_empty() {
        return Err(invalid("training needs at least one sample set"));
    }
    let m = model.layout.shape.num_classes;
    if let Some(s) = sets.iter().find(|s| s.label as usize >= m) {
        return Err(invalid(format!("label {} outside the {m} training classes", s.label)));
    }
    let per_epoch = sets.len().div_ceil(tc.batch_size) as u64;
    let total_steps = per_epoch * tc.epochs as u64;
    let bank = CenterBank::of(&model.layout, spec.hp.alpha_c);

    let mut order_epoch = usize::MAX;
    let mut order = Vec::new();
    while state.step < total_steps {
        let step = state.step;
        let epoch = (step / per_epoch) as usize;
        if epoch != order_epoch {
            order = epoch_order(spec.seed, epoch, sets.len());
            order_epoch = epoch;
        }
        let start = (step % per_epoch) as usize * tc.batch_size;
        let batch: Vec<&MultimodalSampleSet> =
            order[start..(start + tc.batch_size).min(sets.len())].iter().map(|&i| &sets[i]).collect();
        let lr = lr_at(&tc.schedule, step);
        let hp = HyperParams {
            margins: margins_at(spec.hp.margins, tc.margin_warmup, step),
            unimodal_margins: margins_at(spec.hp.unimodal_margins, tc.margin_warmup, step),
            ..spec.hp.clone()
        };

        let aborted = |e: Error| match e {
            Error::NonFinite { op } => Error::TrainingAborted {
                step,
                reason: format!("non-finite value in {op}"),
            },
            other => other,
        };
        let mut rng = step_rng(spec.seed, step);
        let mut noise = TrainNoise {
            dropout: spec.dropout,
            fc_dropout: model.layout.config.fc_dropout,
            rng: &mut rng,
        };
        let mut g = Graph::new();
        let outs: Vec<ForwardOutput> = batch
            .iter()
            .map(|s| model.forward(&mut g, s, FusionMode::Quality, Some(&mut noise)))
            .collect::<Result<_>>()
            .map_err(aborted)?;
        let obj = total_loss(&mut g, &model.layout, &model.store, &outs, &hp).map_err(aborted)?;
        if !obj.breakdown.total.is_finite() {
            return Err(aborted(Error::NonFinite { op: "total_loss" }));
        }
        g.backward(obj.root).map_err(aborted)?;
        let grads = g.param_grads();
        sgd_step(&mut model.store, &grads, state, lr).map_err(aborted)?;

        let k_count = model.layout.modalities();
        let cb = CenterBatch {
            labels: outs.iter().map(|o| o.label as usize).collect(),
            z: outs.iter().map(|o| vec_of(&g, o.z)).collect(),
            zk: (0..k_count).map(|k| outs.iter().map(|o| vec_of(&g, o.zk[k])).collect()).collect(),
            y: (0..k_count).map(|k| outs.iter().map(|o| vec_of(&g, o.y[k])).collect()).collect(),
        };
        update_centers(&mut model.store, &bank, &cb)?;

        let mut p_b = vec![0.0; k_count];
        for o in &outs {
            for (acc, w) in p_b.iter_mut().zip(g.value(o.inter_weights).data()) {
                *acc += w / outs.len() as f64;
            }
        }
        log.rows.push(LogRow {
            step,
            epoch,
            lr,
            terms: obj.breakdown.terms.iter().map(|t| (t.name.clone(), t.value)).collect(),
            total: obj.breakdown.total,
            p_b,
        });

        let done = state.step == total_steps;
        if done || (tc.checkpoint_every > 0 && state.step.is_multiple_of(tc.checkpoint_every)) {
            checkpoint(model, state)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ParamKind;

    fn one_param(w: f64) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("w", ParamKind::Weight, Array::vector(vec![w]));
        (s, id)
    }

    #[test]
    fn zero_rate_leaves_parameters() {
        let (mut s, id) = one_param(1.5);
        let mut st = OptimizerState::new(&s, 0.9, 0.0);
        sgd_step(&mut s, &[(id, Array::vector(vec![3.0]))], &mut st, 0.0).unwrap();
        assert_eq!(s.value(id).data(), &[1.5]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn momentum_accumulates() {
        let (mut s, id) = one_param(1.0);
        let mut st = OptimizerState::new(&s, 0.9, 0.0);
        let g = [(id, Array::vector(vec![1.0]))];
        sgd_step(&mut s, &g, &mut st, 0.1).unwrap();
        assert_eq!(st.velocity[0].data(), &[1.0]);
        assert!((s.value(id).data()[0] - 0.9).abs() < 1e-15);
        sgd_step(&mut s, &g, &mut st, 0.1).unwrap();
        assert!((st.velocity[0].data()[0] - 1.9).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_adds_to_gradient() {
        let (mut s, id) = one_param(2.0);
        let mut st = OptimizerState::new(&s, 0.0, 0.5);
        sgd_step(&mut s, &[(id, Array::vector(vec![0.0]))], &mut st, 0.1).unwrap();
        assert!((s.value(id).data()[0] - 1.9).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_changes_nothing() {
        let (mut s, id) = one_param(1.0);
        let mut st = OptimizerState::new(&s, 0.9, 0.0);
        let e = sgd_step(&mut s, &[(id, Array::vector(vec![f64::NAN]))], &mut st, 0.1);
        assert!(e.is_err());
        assert_eq!(s.value(id).data(), &[1.0]);
        assert_eq!(st.step, 0);
    }

    #[test]
    fn unit_rows_are_renormalized() {
        let mut s = ParamStore::new();
        let id = s.add("h", ParamKind::UnitRows, Array::matrix(1, 2, vec![1.0, 0.0]).unwrap());
        let mut st = OptimizerState::new(&s, 0.9, 0.0);
        sgd_step(&mut s, &[(id, Array::matrix(1, 2, vec![-3.0, -4.0]).unwrap())], &mut st, 1.0).unwrap();
        assert!((s.value(id).norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn schedule_examples() {
        let s = Schedule {
            lr0: 0.1,
            decay: 0.1,
            s0: 100,
            s1: 50,
            lr_min: 1e-6,
        };
        assert_eq!(lr_at(&s, 0), 0.1);
        assert_eq!(lr_at(&s, 99), 0.1);
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-15 * b;
        assert!(close(lr_at(&s, 100), 0.01));
        assert!(close(lr_at(&s, 149), 0.01));
        assert!(close(lr_at(&s, 150), 0.001));
        assert_eq!(lr_at(&s, 1_000_000), 1e-6);
    }

    #[test]
    fn margins_ramp_to_target() {
        let t = Margins {
            m1: 1.2,
            m2: 0.4,
            m3: 0.2,
        };
        assert_eq!(margins_at(t, 10, 0), Margins::NONE);
        let half = margins_at(t, 10, 5);
        assert!((half.m1 - 1.1).abs() < 1e-15 && (half.m2 - 0.2).abs() < 1e-15);
        assert_eq!(margins_at(t, 10, 10), t);
        assert_eq!(margins_at(t, 0, 0), t);
    }

    #[test]
    fn epoch_orders_are_permutations() {
        let mut o = epoch_order(3, 2, 10);
        assert_ne!(o, epoch_order(3, 3, 10));
        o.sort();
        assert_eq!(o, (0..10).collect::<Vec<_>>());
    }
}
