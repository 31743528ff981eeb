use super::{angular_loss, center_alignment_loss, compactness_terms, representation_loss, uniform_loss, HyperParams};
use crate::autodiff::{Array, Graph, NodeId, ParamStore};
use crate::error::{invalid, Result};
use crate::fusion::{ForwardOutput, ModelLayout};

#[derive(Clone, Debug, PartialEq)]
pub struct LossTerm {
    pub name: String,
    /// Unweighted value.
    pub raw: f64,
    pub weight: f64,
    /// `weight * raw`, the contribution to the total.
    pub value: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub terms: Vec<LossTerm>,
    pub total: f64,
}

impl LossBreakdown {
    pub fn get(&self, name: &str) -> Option<&LossTerm> {
        self.terms.iter().find(|t| t.name == name)
    }

    pub fn sum_of_terms(&self) -> f64 {
        self.terms.iter().map(|t| t.value).sum()
    }
}

/// A built objective: its scalar root, the vector of terms it sums, and a
/// readable breakdown.
#[derive(Clone, Debug)]
pub struct Objective {
    pub root: NodeId,
    /// Every weighted term, with compactness split per layer.
    pub terms: NodeId,
    pub breakdown: LossBreakdown,
}

struct Accumulator {
    nodes: Vec<NodeId>,
    breakdown: LossBreakdown,
}

impl Accumulator {
    fn new() -> Self {
        Accumulator {
            nodes: Vec::new(),
            breakdown: LossBreakdown::default(),
        }
    }

    fn push(&mut self, g: &mut Graph, name: impl Into<String>, raw: NodeId, weight: f64) -> Result<()> {
        let r = g.scalar(raw);
        let node = if weight == 1.0 { raw } else { g.scale(raw, weight)? };
        let value = g.scalar(node);
        self.nodes.push(node);
        self.breakdown.terms.push(LossTerm {
            name: name.into(),
            raw: r,
            weight,
            value,
        });
        Ok(())
    }

    /// One breakdown entry backed by several graph terms.
    fn push_split(&mut self, g: &mut Graph, name: impl Into<String>, parts: &[NodeId]) -> Result<()> {
        let raw: f64 = parts.iter().map(|&n| g.scalar(n)).sum();
        self.nodes.extend_from_slice(parts);
        self.breakdown.terms.push(LossTerm {
            name: name.into(),
            raw,
            weight: 1.0,
            value: raw,
        });
        Ok(())
    }

    fn finish(mut self, g: &mut Graph) -> Result<Objective> {
        if self.nodes.is_empty() {
            self.nodes.push(g.constant(Array::scalar(0.0))?);
        }
        let terms = g.concat(&self.nodes)?;
        let root = g.sum(terms)?;
        self.breakdown.total = g.scalar(root);
        Ok(Objective {
            root,
            terms,
            breakdown: self.breakdown,
        })
    }
}

fn separability_terms(
    g: &mut Graph,
    acc: &mut Accumulator,
    layout: &ModelLayout,
    store: &ParamStore,
    batch: &[ForwardOutput],
    hp: &HyperParams,
) -> Result<()> {
    if batch.is_empty() {
        return Err(invalid("loss over an empty batch"));
    }
    let k_count = layout.modalities();

    let head = g.param(store, layout.head)?;
    let feats: Vec<(NodeId, usize)> = batch.iter().map(|o| (o.z, o.label as usize)).collect();
    let la = angular_loss(g, &feats, head, hp.margins, hp.fixed_scale)?;
    acc.push(g, "angular", la, 1.0)?;

    if hp.lambda_u > 0.0 {
        let c = g.param(store, layout.centers)?;
        let lu = uniform_loss(g, c)?;
        acc.push(g, "uniform", lu, hp.lambda_u)?;
    }

    let lambda_c = hp.effective_lambda_c();
    if lambda_c > 0.0 {
        let c = g.param(store, layout.centers)?;
        let mcs: Vec<NodeId> = layout
            .modality_centers
            .iter()
            .map(|&id| g.param(store, id))
            .collect::<Result<_>>()?;
        let lc = center_alignment_loss(g, c, &mcs)?;
        acc.push(g, "center", lc, lambda_c)?;
    }

    if hp.lambda_r > 0.0 && k_count >= 2 {
        let sets: Vec<Vec<NodeId>> = batch.iter().map(|o| o.zk.clone()).collect();
        let lr = representation_loss(g, &sets)?;
        acc.push(g, "representation", lr, hp.lambda_r)?;
    }

    let kf = k_count as f64;
    for k in 0..k_count {
        if hp.lambda_ak > 0.0 {
            let h = g.param(store, layout.unimodal_heads[k])?;
            let feats: Vec<(NodeId, usize)> = batch.iter().map(|o| (o.y[k], o.label as usize)).collect();
            let l = angular_loss(g, &feats, h, hp.unimodal_margins, hp.fixed_scale)?;
            acc.push(g, format!("unimodal_angular_{k}"), l, hp.lambda_ak / kf)?;
        }
        if hp.lambda_uk > 0.0 {
            let c = g.param(store, layout.unimodal_centers[k])?;
            let l = uniform_loss(g, c)?;
            acc.push(g, format!("unimodal_uniform_{k}"), l, hp.lambda_uk / kf)?;
        }
    }
    Ok(())
}

/// Multimodal separability loss and its weighted components.
pub fn separability_loss(
    g: &mut Graph,
    layout: &ModelLayout,
    store: &ParamStore,
    batch: &[ForwardOutput],
    hp: &HyperParams,
) -> Result<Objective> {
    let mut acc = Accumulator::new();
    separability_terms(g, &mut acc, layout, store, batch, hp)?;
    acc.finish(g)
}

/// Separability plus compactness.
pub fn total_loss(
    g: &mut Graph,
    layout: &ModelLayout,
    store: &ParamStore,
    batch: &[ForwardOutput],
    hp: &HyperParams,
) -> Result<Objective> {
    let mut acc = Accumulator::new();
    separability_terms(g, &mut acc, layout, store, batch, hp)?;
    if hp.lambda_h > 0.0 || hp.lambda_h0 > 0.0 {
        let parts = compactness_terms(g, layout, store, hp.lambda_h, hp.lambda_h0, hp.half_space)?;
        acc.push_split(g, "compactness", &parts)?;
    }
    acc.finish(g)
}
