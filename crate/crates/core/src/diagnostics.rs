//! Finite-difference verification of every loss through a tiny model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{grad_check_params_with, GradCheckReport, Graph, NodeId, ParamKind, ParamStore, Stencil};
use crate::error::Result;
use crate::fusion::{ForwardOutput, FusionMode, FusionModel, ModelConfig, ModelShape, MultimodalSampleSet, Sample};
use crate::losses::{
    angular_loss, center_alignment_loss, compactness_terms, hyperspherical_energy, representation_loss,
    separability_loss, total_loss, uniform_loss, HyperParams,
};

/// A model with `D = 4` and three classes, small enough to perturb every
/// parameter one at a time.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        hidden: vec![6, 6],
        quality_tap: 1,
        embed_dim: 4,
        quality_hidden: 3,
        quality_dim: 3,
        fnet_hidden: 4,
        fc_dropout: 0.0,
        // below the first input width, so the projection path is exercised
        projected_dim: 6,
        learn_projection: true,
    }
}

pub fn tiny_model(modalities: usize, seed: u64) -> Result<FusionModel> {
    let dims = [8, 6, 7];
    let shape = ModelShape {
        input_dims: dims[..modalities.min(3)].to_vec(),
        num_classes: 3,
    };
    let mut model = FusionModel::new(shape, tiny_config(), seed)?;
    // zero biases put idle ReLU units exactly on their kink; a random point
    // should not
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let biases: Vec<_> = model.store.iter().filter(|(_, p)| p.kind == ParamKind::Bias).map(|(id, _)| id).collect();
    for id in biases {
        for v in model.store.value_mut(id).data_mut() {
            *v = rng.gen_range(-0.1..0.1);
        }
    }
    Ok(model)
}

/// A set with `counts[k]` random samples in modality `k`.
pub fn random_set<R: Rng>(rng: &mut R, input_dims: &[usize], counts: &[usize], label: u32) -> MultimodalSampleSet {
    MultimodalSampleSet {
        label,
        modalities: input_dims
            .iter()
            .zip(counts)
            .map(|(&d, &p)| {
                (0..p)
                    .map(|_| Sample {
                        values: (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                        gamma: rng.gen_range(0.0..1.0),
                    })
                    .collect()
            })
            .collect(),
    }
}

/// Three sets, one per class, with one to three samples per modality.
pub fn tiny_batch(model: &FusionModel, seed: u64) -> Vec<MultimodalSampleSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = &model.layout.shape.input_dims;
    (0..3u32)
        .map(|label| {
            let counts: Vec<usize> = dims.iter().map(|_| rng.gen_range(1..=3)).collect();
            random_set(&mut rng, dims, &counts, label)
        })
        .collect()
}

/// One named check in the suite.
#[derive(Clone, Debug)]
pub struct SuiteEntry {
    pub name: &'static str,
    pub modalities: usize,
    pub report: GradCheckReport,
}

fn forward_all(
    model: &FusionModel,
    g: &mut Graph,
    store: &ParamStore,
    sets: &[MultimodalSampleSet],
) -> Result<Vec<ForwardOutput>> {
    sets.iter()
        .map(|s| model.layout.forward(g, store, s, FusionMode::Quality, None))
        .collect()
}

/// Checks each loss, its building blocks and the total objective against
/// central differences over all parameters of a tiny model.
pub fn gradient_suite(modalities: usize, seed: u64, h: f64, tol: f64, stencil: Stencil) -> Result<Vec<SuiteEntry>> {
    let model = tiny_model(modalities, seed)?;
    let sets = tiny_batch(&model, seed ^ 0x5eed);
    let layout = &model.layout;
    // every term on, including center alignment
    let hp = HyperParams {
        verification: false,
        ..HyperParams::default()
    };
    let all = |_| true;
    let mut out = Vec::new();
    let mut push = |name: &'static str, report: GradCheckReport| {
        out.push(SuiteEntry {
            name,
            modalities,
            report,
        })
    };

    let r = grad_check_params_with(
        &model.store,
        |g, s| {
            let outs = forward_all(&model, g, s, &sets)?;
            let head = g.param(s, layout.head)?;
            let feats: Vec<(NodeId, usize)> = outs.iter().map(|o| (o.z, o.label as usize)).collect();
            angular_loss(g, &feats, head, hp.margins, hp.fixed_scale)
        },
        all,
        h,
        tol,
        stencil,
    )?;
    push("angular", r);

    let r = grad_check_params_with(
        &model.store,
        |g, s| {
            let c = g.param(s, layout.centers)?;
            uniform_loss(g, c)
        },
        all,
        h,
        tol,
        stencil,
    )?;
    push("uniform", r);

    let r = grad_check_params_with(
        &model.store,
        |g, s| {
            let outs = forward_all(&model, g, s, &sets)?;
            let zk: Vec<Vec<NodeId>> = outs.iter().map(|o| o.zk.clone()).collect();
            representation_loss(g, &zk)
        },
        all,
        h,
        tol,
        stencil,
    )?;
    push("representation", r);

    let r = grad_check_params_with(
        &model.store,
        |g, s| {
            let c = g.param(s, layout.centers)?;
            let mcs = layout
                .modality_centers
                .iter()
                .map(|&id| g.param(s, id))
                .collect::<Result<Vec<_>>>()?;
            center_alignment_loss(g, c, &mcs)
        },
        all,
        h,
        tol,
        stencil,
    )?;
    push("center_alignment", r);

    let r = grad_check_params_with(
        &model.store,
        |g, s| {
            let outs = forward_all(&model, g, s, &sets)?;
            separability_loss(g, layout, s, &outs, &hp).map(|o| o.terms)
        },
        all,
        h,
        tol,
        stencil,
    )?;
    push("separability", r);

    let first = &layout.qnet_a[0].hidden[0];
    let proj = layout.projection_for(first.input);
    let r = grad_check_params_with(
        &model.store,
        |g, s| {
            let w = g.param(s, first.weight)?;
            let p = match proj {
                Some(id) => Some(g.param(s, id)?),
                None => None,
            };
            hyperspherical_energy(g, w, p, hp.half_space)
        },
        all,
        h,
        tol,
        stencil,
    )?;
    push("energy", r);

    let r = grad_check_params_with(
        &model.store,
        |g, s| {
            let parts = compactness_terms(g, layout, s, hp.lambda_h, hp.lambda_h0, hp.half_space)?;
            g.concat(&parts)
        },
        all,
        h,
        tol,
        stencil,
    )?;
    push("compactness", r);

    let r = grad_check_params_with(
        &model.store,
        |g, s| {
            let outs = forward_all(&model, g, s, &sets)?;
            total_loss(g, layout, s, &outs, &hp).map(|o| o.terms)
        },
        all,
        h,
        tol,
        stencil,
    )?;
    push("total", r);

    Ok(out)
}
