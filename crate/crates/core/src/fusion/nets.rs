use rand::Rng;

use super::TrainNoise;
use crate::autodiff::{Array, Graph, NodeId, ParamStore};
use crate::error::{invalid, Result};
use crate::nn::{Init, Linear};

/// Per-modality encoder with a quality branch.
///
/// The main branch is a ReLU MLP ending in a linear representation layer of
/// width `D`. The quality branch taps the activation of hidden layer
/// `tap` and maps it through one ReLU layer to a sigmoid scalar.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QNetA {
    pub hidden: Vec<Linear>,
    pub out: Linear,
    pub tap: usize,
    pub quality_hidden: Linear,
    pub quality_out: Linear,
}

impl QNetA {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: &[usize],
        tap: usize,
        embed: usize,
        quality_hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if hidden.is_empty() || tap >= hidden.len() {
            return Err(crate::Error::Config(format!(
                "quality tap {tap} must index one of {} hidden layers",
                hidden.len()
            )));
        }
        let mut layers = Vec::with_capacity(hidden.len());
        let mut width = input;
        for (i, &h) in hidden.iter().enumerate() {
            layers.push(Linear::new(store, &format!("{prefix}.enc{i}"), width, h, Init::KaimingRelu, rng));
            width = h;
        }
        let out = Linear::new(store, &format!("{prefix}.out"), width, embed, Init::FanIn, rng);
        let tap_width = hidden[tap];
        let quality_hidden = Linear::new(
            store,
            &format!("{prefix}.qual0"),
            tap_width,
            quality_hidden,
            Init::KaimingRelu,
            rng,
        );
        let quality_out = Linear::new(
            store,
            &format!("{prefix}.qual1"),
            quality_hidden.output,
            1,
            Init::FanIn,
            rng,
        );
        Ok(QNetA {
            hidden: layers,
            out,
            tap,
            quality_hidden,
            quality_out,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.hidden[0].input
    }

    pub fn embed_dim(&self) -> usize {
        self.out.output
    }

    pub fn layers(&self) -> Vec<&Linear> {
        let mut v: Vec<&Linear> = self.hidden.iter().collect();
        v.push(&self.out);
        v.push(&self.quality_hidden);
        v.push(&self.quality_out);
        v
    }

    pub(crate) fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: NodeId,
        mut noise: Option<&mut TrainNoise<'_>>,
    ) -> Result<(NodeId, NodeId)> {
        let mut h = x;
        let mut tap = None;
        for (i, layer) in self.hidden.iter().enumerate() {
            let a = layer.forward(g, store, h)?;
            h = g.relu(a)?;
            if i == self.tap {
                tap = Some(h);
            }
            if let Some(n) = noise.as_deref_mut() {
                h = unit_dropout(g, h, n)?;
            }
        }
        let y = self.out.forward(g, store, h)?;
        let qh = self.quality_hidden.forward(g, store, tap.expect("tap within hidden layers"))?;
        let qh = g.relu(qh)?;
        let q = self.quality_out.forward(g, store, qh)?;
        let q = g.sigmoid(q)?;
        Ok((y, q))
    }
}

/// Inverted dropout on a hidden activation.
fn unit_dropout(g: &mut Graph, h: NodeId, noise: &mut TrainNoise<'_>) -> Result<NodeId> {
    let p = noise.fc_dropout;
    if p <= 0.0 {
        return Ok(h);
    }
    let n = g.value(h).len();
    let keep = 1.0 / (1.0 - p);
    let mask: Vec<f64> = (0..n)
        .map(|_| if noise.rng.gen_bool(p) { 0.0 } else { keep })
        .collect();
    let m = g.constant(Array::vector(mask))?;
    g.mul(h, m)
}

/// Block-B per-modality network: two affine layers `D → D → D` with a ReLU
/// between them, and a quality branch from the first activation to a
/// `v`-dimensional ReLU vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QNetB {
    pub fc1: Linear,
    pub fc2: Linear,
    pub quality: Linear,
}

impl QNetB {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        quality_dim: usize,
        rng: &mut R,
    ) -> Self {
        QNetB {
            fc1: Linear::new(store, &format!("{prefix}.fc1"), dim, dim, Init::KaimingRelu, rng),
            fc2: Linear::new(store, &format!("{prefix}.fc2"), dim, dim, Init::FanIn, rng),
            quality: Linear::new(store, &format!("{prefix}.qual"), dim, quality_dim, Init::KaimingRelu, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.fc1.input
    }

    pub fn layers(&self) -> Vec<&Linear> {
        vec![&self.fc1, &self.fc2, &self.quality]
    }

    pub(crate) fn forward(&self, g: &mut Graph, store: &ParamStore, y: NodeId) -> Result<(NodeId, NodeId)> {
        let h = self.fc1.forward(g, store, y)?;
        let h = g.relu(h)?;
        let z = self.fc2.forward(g, store, h)?;
        let q = self.quality.forward(g, store, h)?;
        let q = g.relu(q)?;
        Ok((z, q))
    }
}

/// Joint inter-modality scorer: `(v K) → h → h → K`, sigmoid output.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FNetB {
    pub fc1: Linear,
    pub fc2: Linear,
    pub fc3: Linear,
}

impl FNetB {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        quality_dim: usize,
        modalities: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let input = quality_dim * modalities;
        FNetB {
            fc1: Linear::new(store, &format!("{prefix}.fc1"), input, hidden, Init::KaimingRelu, rng),
            fc2: Linear::new(store, &format!("{prefix}.fc2"), hidden, hidden, Init::KaimingRelu, rng),
            fc3: Linear::new(store, &format!("{prefix}.fc3"), hidden, modalities, Init::FanIn, rng),
        }
    }

    pub fn modalities(&self) -> usize {
        self.fc3.output
    }

    pub fn layers(&self) -> Vec<&Linear> {
        vec![&self.fc1, &self.fc2, &self.fc3]
    }

    pub(crate) fn forward(&self, g: &mut Graph, store: &ParamStore, quality: &[NodeId]) -> Result<NodeId> {
        if quality.len() != self.modalities() {
            return Err(invalid(format!(
                "fnet expects {} quality vectors, got {}",
                self.modalities(),
                quality.len()
            )));
        }
        let q = g.concat(quality)?;
        if g.value(q).len() != self.fc1.input {
            return Err(crate::Error::ShapeMismatch {
                op: "fnet_b",
                shapes: vec![vec![self.fc1.input], g.value(q).shape().to_vec()],
            });
        }
        let h = self.fc1.forward(g, store, q)?;
        let h = g.relu(h)?;
        let h = self.fc2.forward(g, store, h)?;
        let h = g.relu(h)?;
        let o = self.fc3.forward(g, store, h)?;
        g.sigmoid(o)
    }
}
