//! The two quality-aware fusion blocks.
//!
//! Block A turns the `p_k` samples of modality `k` into one unimodal
//! representation `Y_k`: every sample goes through its modality encoder,
//! which also emits a scalar quality score, and the features are averaged
//! with softmax-normalized scores as weights.
//!
//! Block B maps each `Y_k` to `Z_k` plus a quality vector `Q_k`; the quality
//! vectors of all modalities are concatenated and scored jointly, and the
//! normalized scores weight the sum `Z = Σ_k w_k Z_k`.
//!
//! Score dropout multiplies the raw score inside the exponent, so a dropped
//! score contributes `exp(0)` before normalization: the sample or modality
//! keeps a neutral weight instead of disappearing.

mod model;
mod nets;

pub use model::{FusionModel, ModelConfig, ModelLayout, ModelShape};
pub use nets::{FNetB, QNetA, QNetB};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Array, Graph, NodeId, ParamStore};
use crate::error::{invalid, Result};

/// One observation of one modality.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub values: Vec<f64>,
    /// Ground-truth corruption level in `[0, 1]`. Metadata only: the model
    /// never reads it.
    pub gamma: f64,
}

/// One identity's bundle of samples, `modalities[k]` holding the `p_k`
/// samples of modality `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct MultimodalSampleSet {
    pub label: u32,
    pub modalities: Vec<Vec<Sample>>,
}

impl MultimodalSampleSet {
    pub fn num_modalities(&self) -> usize {
        self.modalities.len()
    }

    pub fn validate(&self, input_dims: &[usize]) -> Result<()> {
        if self.modalities.is_empty() {
            return Err(invalid("sample set has no modalities"));
        }
        if self.modalities.len() != input_dims.len() {
            return Err(invalid(format!(
                "sample set has {} modalities, model expects {}",
                self.modalities.len(),
                input_dims.len()
            )));
        }
        for (k, (samples, &dim)) in self.modalities.iter().zip(input_dims).enumerate() {
            if samples.is_empty() {
                return Err(invalid(format!("modality {k} has no samples")));
            }
            for s in samples {
                if s.values.len() != dim {
                    return Err(invalid(format!(
                        "modality {k} sample has dimension {}, expected {dim}",
                        s.values.len()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn num_samples(&self) -> usize {
        self.modalities.iter().map(Vec::len).sum()
    }
}

/// Score-dropout probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DropoutSpec {
    /// Per-modality intra-modality probability `μ_k`; a single entry applies
    /// to every modality.
    pub intra: Vec<f64>,
    /// Inter-modality probability `μ`.
    pub inter: f64,
}

impl Default for DropoutSpec {
    fn default() -> Self {
        DropoutSpec {
            intra: vec![0.1],
            inter: 0.2,
        }
    }
}

impl DropoutSpec {
    pub fn intra_for(&self, k: usize) -> f64 {
        match self.intra.len() {
            0 => 0.0,
            1 => self.intra[0],
            _ => self.intra.get(k).copied().unwrap_or(0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |p: f64| (0.0..1.0).contains(&p);
        if !self.intra.iter().all(|&p| ok(p)) || !ok(self.inter) {
            return Err(crate::Error::Config(
                "dropout probabilities must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// How sample and modality weights are formed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    /// Learned quality scores.
    Quality,
    /// Equal weights at both blocks.
    Average,
}

/// Training-time randomness; `None` means evaluation (every bit is 1 and no
/// unit dropout).
pub struct TrainNoise<'a> {
    pub dropout: &'a DropoutSpec,
    pub fc_dropout: f64,
    pub rng: &'a mut ChaCha8Rng,
}

impl TrainNoise<'_> {
    fn bits(&mut self, n: usize, p: f64) -> Vec<f64> {
        (0..n)
            .map(|_| if p > 0.0 && self.rng.gen_bool(p) { 0.0 } else { 1.0 })
            .collect()
    }
}

/// Every intermediate the losses and the quality analysis need.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub label: u32,
    pub z: NodeId,
    pub y: Vec<NodeId>,
    pub zk: Vec<NodeId>,
    /// Normalized intra-modality weights, one `p_k`-vector per modality.
    pub intra_weights: Vec<NodeId>,
    /// Raw sigmoid scores `q_ki`, one `p_k`-vector per modality.
    pub intra_raw: Vec<NodeId>,
    /// Normalized inter-modality weights, a `K`-vector.
    pub inter_weights: NodeId,
    /// Raw sigmoid scores `q_k^b`.
    pub inter_raw: NodeId,
}

impl ForwardOutput {
    pub fn inter_weights_value(&self, g: &Graph) -> Vec<f64> {
        g.value(self.inter_weights).data().to_vec()
    }

    pub fn intra_weights_value(&self, g: &Graph) -> Vec<Vec<f64>> {
        self.intra_weights.iter().map(|&w| g.value(w).data().to_vec()).collect()
    }
}

/// Encoder pass for one sample: representation `Y_ki` and score `q_ki`.
pub fn qnet_a_forward(
    net: &QNetA,
    g: &mut Graph,
    store: &ParamStore,
    sample: &[f64],
    noise: Option<&mut TrainNoise<'_>>,
) -> Result<(NodeId, NodeId)> {
    if sample.len() != net.input_dim() {
        return Err(invalid(format!(
            "sample dimension {} does not match encoder input {}",
            sample.len(),
            net.input_dim()
        )));
    }
    let x = g.constant(Array::vector(sample.to_vec()))?;
    net.forward(g, store, x, noise)
}

/// Softmax-weighted sum of one modality's sample features.
///
/// Returns `(Y_k, weights)`. `mask` holds the dropout bits `d_ki`.
pub fn intra_fuse(
    g: &mut Graph,
    outputs: &[(NodeId, NodeId)],
    mask: &[f64],
) -> Result<(NodeId, NodeId)> {
    if outputs.is_empty() {
        return Err(invalid("intra_fuse needs at least one sample"));
    }
    if mask.len() != outputs.len() {
        return Err(invalid(format!(
            "mask length {} does not match {} samples",
            mask.len(),
            outputs.len()
        )));
    }
    let scores: Vec<NodeId> = outputs.iter().map(|&(_, q)| q).collect();
    let raw = g.concat(&scores)?;
    let weights = masked_softmax(g, raw, mask)?;
    let feats: Vec<NodeId> = outputs.iter().map(|&(y, _)| y).collect();
    let fused = weighted_sum(g, &feats, weights)?;
    Ok((fused, weights))
}

/// Block-B transform of one unimodal representation: `(Z_k, Q_k)`.
pub fn qnet_b_forward(
    net: &QNetB,
    g: &mut Graph,
    store: &ParamStore,
    y: NodeId,
) -> Result<(NodeId, NodeId)> {
    let d = g.value(y).len();
    if d != net.input_dim() {
        return Err(invalid(format!(
            "qnet_b input dimension {d} does not match {}",
            net.input_dim()
        )));
    }
    net.forward(g, store, y)
}

/// Joint scoring of the modality quality vectors.
///
/// Returns `(raw sigmoid scores, normalized weights)`.
pub fn inter_quality(
    net: &FNetB,
    g: &mut Graph,
    store: &ParamStore,
    quality: &[NodeId],
    mask: &[f64],
) -> Result<(NodeId, NodeId)> {
    if quality.is_empty() {
        return Err(invalid("inter_quality needs at least one modality"));
    }
    if mask.len() != quality.len() {
        return Err(invalid("inter-modality mask length mismatch"));
    }
    let raw = net.forward(g, store, quality)?;
    let weights = masked_softmax(g, raw, mask)?;
    Ok((raw, weights))
}

/// `Z = Σ_k w_k Z_k`.
pub fn inter_fuse(g: &mut Graph, zs: &[NodeId], weights: NodeId) -> Result<NodeId> {
    if zs.is_empty() {
        return Err(invalid("inter_fuse needs at least one modality"));
    }
    if g.value(weights).len() != zs.len() {
        return Err(invalid("inter_fuse weight count mismatch"));
    }
    weighted_sum(g, zs, weights)
}

/// `softmax(raw ⊙ mask)`.
pub fn masked_softmax(g: &mut Graph, raw: NodeId, mask: &[f64]) -> Result<NodeId> {
    let scores = if mask.iter().all(|&d| d == 1.0) {
        raw
    } else {
        let m = g.constant(Array::vector(mask.to_vec()))?;
        g.mul(raw, m)?
    };
    g.softmax(scores)
}

fn weighted_sum(g: &mut Graph, xs: &[NodeId], weights: NodeId) -> Result<NodeId> {
    let dim = g.value(xs[0]).shape().to_vec();
    let mut acc: Option<NodeId> = None;
    for (i, &x) in xs.iter().enumerate() {
        if g.value(x).shape() != dim.as_slice() {
            return Err(crate::Error::ShapeMismatch {
                op: "weighted_sum",
                shapes: vec![dim.clone(), g.value(x).shape().to_vec()],
            });
        }
        let w = g.pick(weights, i)?;
        let term = g.scale_by(x, w)?;
        acc = Some(match acc {
            None => term,
            Some(a) => g.add(a, term)?,
        });
    }
    Ok(acc.expect("non-empty"))
}

/// Full two-block forward pass over one sample set.
pub fn model_forward(
    layout: &ModelLayout,
    g: &mut Graph,
    store: &ParamStore,
    set: &MultimodalSampleSet,
    fusion: FusionMode,
    mut noise: Option<&mut TrainNoise<'_>>,
) -> Result<ForwardOutput> {
    set.validate(&layout.shape.input_dims)?;
    let k_count = set.num_modalities();
    let mut y = Vec::with_capacity(k_count);
    let mut intra_weights = Vec::with_capacity(k_count);
    let mut intra_raw = Vec::with_capacity(k_count);
    let mut zk = Vec::with_capacity(k_count);
    let mut qb = Vec::with_capacity(k_count);

    for (k, samples) in set.modalities.iter().enumerate() {
        let net = &layout.qnet_a[k];
        let mut outs = Vec::with_capacity(samples.len());
        for s in samples {
            outs.push(qnet_a_forward(net, g, store, &s.values, noise.as_deref_mut())?);
        }
        let mask = match (fusion, noise.as_deref_mut()) {
            (FusionMode::Average, _) => vec![0.0; samples.len()],
            (FusionMode::Quality, Some(n)) => {
                let p = n.dropout.intra_for(k);
                n.bits(samples.len(), p)
            }
            (FusionMode::Quality, None) => vec![1.0; samples.len()],
        };
        let (yk, w) = intra_fuse(g, &outs, &mask)?;
        let raw_scores: Vec<NodeId> = outs.iter().map(|&(_, q)| q).collect();
        intra_raw.push(g.concat(&raw_scores)?);
        let (z, q) = qnet_b_forward(&layout.qnet_b[k], g, store, yk)?;
        y.push(yk);
        intra_weights.push(w);
        zk.push(z);
        qb.push(q);
    }

    let mask = match (fusion, noise) {
        (FusionMode::Average, _) => vec![0.0; k_count],
        (FusionMode::Quality, Some(n)) => {
            let p = n.dropout.inter;
            n.bits(k_count, p)
        }
        (FusionMode::Quality, None) => vec![1.0; k_count],
    };
    let (inter_raw, inter_weights) = inter_quality(&layout.fnet_b, g, store, &qb, &mask)?;
    let z = inter_fuse(g, &zk, inter_weights)?;
    Ok(ForwardOutput {
        label: set.label,
        z,
        y,
        zk,
        intra_weights,
        intra_raw,
        inter_weights,
        inter_raw,
    })
}
