use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::nets::{FNetB, QNetA, QNetB};
use super::{model_forward, FusionMode, ForwardOutput, MultimodalSampleSet, TrainNoise};
use crate::autodiff::{Graph, ParamId, ParamKind, ParamStore};
use crate::error::{Error, Result};
use crate::nn::{self, Linear};

/// Data-dependent dimensions of a model.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelShape {
    /// Observation dimension of each modality; its length is `K`.
    pub input_dims: Vec<usize>,
    /// Number of training classes `M`.
    pub num_classes: usize,
}

impl ModelShape {
    pub fn modalities(&self) -> usize {
        self.input_dims.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Encoder hidden widths.
    pub hidden: Vec<usize>,
    /// Hidden layer whose activation feeds the sample-quality branch.
    pub quality_tap: usize,
    /// Representation width `D`.
    pub embed_dim: usize,
    pub quality_hidden: usize,
    /// Width `v` of each modality quality vector.
    pub quality_dim: usize,
    pub fnet_hidden: usize,
    /// Inverted dropout rate on encoder hidden activations while training.
    pub fc_dropout: f64,
    /// Target dimension of the compressive projection; layers whose input
    /// width does not exceed it are not projected.
    pub projected_dim: usize,
    /// Learn the projections (otherwise they stay fixed random).
    pub learn_projection: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: vec![64, 64],
            quality_tap: 0,
            embed_dim: 32,
            quality_hidden: 16,
            quality_dim: 16,
            fnet_hidden: 16,
            fc_dropout: 0.2,
            projected_dim: 30,
            learn_projection: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.embed_dim > 0
            && self.quality_hidden > 0
            && self.quality_dim > 0
            && self.fnet_hidden > 0
            && self.projected_dim > 0
            && !self.hidden.is_empty()
            && self.hidden.iter().all(|&h| h > 0);
        if !positive {
            return Err(Error::Config("model widths must be positive".into()));
        }
        if self.quality_tap >= self.hidden.len() {
            return Err(Error::Config("quality_tap out of range".into()));
        }
        if !(0.0..1.0).contains(&self.fc_dropout) {
            return Err(Error::Config("fc_dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Parameter handles for every network, head, center bank and projection.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelLayout {
    pub shape: ModelShape,
    pub config: ModelConfig,
    pub qnet_a: Vec<QNetA>,
    pub qnet_b: Vec<QNetB>,
    pub fnet_b: FNetB,
    /// Classifier vectors for `Z`, `M × D`, unit rows.
    pub head: ParamId,
    /// Classifier vectors for each `Y_k`.
    pub unimodal_heads: Vec<ParamId>,
    /// Class centers of `Z`.
    pub centers: ParamId,
    /// Class centers of each `Z_k`, compared in direction with `centers`.
    pub modality_centers: Vec<ParamId>,
    /// Class centers of each `Y_k`, spread by the unimodal uniform loss.
    pub unimodal_centers: Vec<ParamId>,
    /// Projection per input width, shared across modalities.
    pub projections: BTreeMap<usize, ParamId>,
}

impl ModelLayout {
    pub fn modalities(&self) -> usize {
        self.shape.modalities()
    }

    /// Every fully-connected layer, in construction order.
    pub fn layers(&self) -> Vec<&Linear> {
        let mut v = Vec::new();
        for a in &self.qnet_a {
            v.extend(a.layers());
        }
        for b in &self.qnet_b {
            v.extend(b.layers());
        }
        v.extend(self.fnet_b.layers());
        v
    }

    pub fn projection_for(&self, width: usize) -> Option<ParamId> {
        self.projections.get(&width).copied()
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        set: &MultimodalSampleSet,
        fusion: FusionMode,
        noise: Option<&mut TrainNoise<'_>>,
    ) -> Result<ForwardOutput> {
        model_forward(self, g, store, set, fusion, noise)
    }
}

#[derive(Clone, Debug)]
pub struct FusionModel {
    pub layout: ModelLayout,
    pub store: ParamStore,
}

impl FusionModel {
    pub fn new(shape: ModelShape, config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if shape.input_dims.is_empty() || shape.input_dims.contains(&0) {
            return Err(Error::Config("every modality needs a positive input dimension".into()));
        }
        if shape.num_classes < 2 {
            return Err(Error::Config("at least two classes are required".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let k_count = shape.modalities();
        let d = config.embed_dim;
        let m = shape.num_classes;

        let mut qnet_a = Vec::with_capacity(k_count);
        let mut qnet_b = Vec::with_capacity(k_count);
        for (k, &input) in shape.input_dims.iter().enumerate() {
            qnet_a.push(QNetA::new(
                &mut store,
                &format!("a{k}"),
                input,
                &config.hidden,
                config.quality_tap,
                d,
                config.quality_hidden,
                &mut rng,
            )?);
        }
        for k in 0..k_count {
            qnet_b.push(QNetB::new(&mut store, &format!("b{k}"), d, config.quality_dim, &mut rng));
        }
        let fnet_b = FNetB::new(&mut store, "f", config.quality_dim, k_count, config.fnet_hidden, &mut rng);

        let head = store.add("head.z", ParamKind::UnitRows, nn::unit_rows(m, d, &mut rng));
        let unimodal_heads = (0..k_count)
            .map(|k| store.add(format!("head.y{k}"), ParamKind::UnitRows, nn::unit_rows(m, d, &mut rng)))
            .collect();
        let centers = store.add("center.z", ParamKind::Center, center_init(m, d, &mut rng));
        let modality_centers = (0..k_count)
            .map(|k| store.add(format!("center.z{k}"), ParamKind::Center, center_init(m, d, &mut rng)))
            .collect();
        let unimodal_centers = (0..k_count)
            .map(|k| store.add(format!("center.y{k}"), ParamKind::Center, center_init(m, d, &mut rng)))
            .collect();

        let mut layout = ModelLayout {
            shape,
            config,
            qnet_a,
            qnet_b,
            fnet_b,
            head,
            unimodal_heads,
            centers,
            modality_centers,
            unimodal_centers,
            projections: BTreeMap::new(),
        };

        let r = layout.config.projected_dim;
        let mut widths: Vec<usize> = layout
            .layers()
            .iter()
            .filter(|l| l.output >= 2)
            .map(|l| l.input)
            .collect();
        widths.push(d);
        widths.sort_unstable();
        widths.dedup();
        let kind = if layout.config.learn_projection {
            ParamKind::Projection
        } else {
            ParamKind::Fixed
        };
        for w in widths.into_iter().filter(|&w| w > r) {
            let id = store.add(format!("proj.{w}"), kind, nn::unit_rows(r, w, &mut rng));
            layout.projections.insert(w, id);
        }
        Ok(FusionModel { layout, store })
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        set: &MultimodalSampleSet,
        fusion: FusionMode,
        noise: Option<&mut TrainNoise<'_>>,
    ) -> Result<ForwardOutput> {
        self.layout.forward(g, &self.store, set, fusion, noise)
    }
}

fn center_init(m: usize, d: usize, rng: &mut ChaCha8Rng) -> crate::autodiff::Array {
    let mut c = nn::unit_rows(m, d, rng);
    c.data_mut().iter_mut().for_each(|v| *v *= 0.1);
    c
}
