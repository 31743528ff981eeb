use serde::{Deserialize, Serialize};

use crate::autodiff::{Array, Graph, NodeId};
use crate::error::{invalid, Error, Result};

/// Target-logit margins: `cos(m1 θ + m2) - m3`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Margins {
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
}

impl Margins {
    pub const NONE: Margins = Margins {
        m1: 1.0,
        m2: 0.0,
        m3: 0.0,
    };
}

/// Angular-margin softmax over `(feature, label)` pairs.
///
/// `head` is an `M × D` matrix of class vectors, normalized inside the graph
/// so the loss depends only on their directions. For sample `i` with scale
/// `s = ||x_i||` (or `fixed_scale`), the target logit is
/// `s (cos(clamp(m1 θ + m2, 0, π)) - m3)` and every other logit is `s cos θ_j`.
/// Returns the mean negative log-probability of the target class.
pub fn angular_loss(
    g: &mut Graph,
    features: &[(NodeId, usize)],
    head: NodeId,
    margins: Margins,
    fixed_scale: Option<f64>,
) -> Result<NodeId> {
    let hv = g.value(head);
    if !hv.is_matrix() || hv.rows() < 2 {
        return Err(invalid("angular loss needs at least two class vectors"));
    }
    if features.is_empty() {
        return Err(invalid("angular loss over an empty batch"));
    }
    let m = hv.rows();
    let head_n = g.normalize_rows(head)?;
    let mut per_sample = Vec::with_capacity(features.len());
    for &(x, label) in features {
        if label >= m {
            return Err(invalid(format!("label {label} outside {m} classes")));
        }
        if g.value(x).norm() == 0.0 {
            return Err(Error::ZeroNorm { op: "angular_loss" });
        }
        let xn = g.normalize(x)?;
        let cos = g.matvec(head_n, xn)?;
        let scale = match fixed_scale {
            Some(s) => g.constant(Array::scalar(s))?,
            None => g.norm(x)?,
        };

        let cos_y = g.pick(cos, label)?;
        let theta = g.acos(cos_y)?;
        let arg = g.scale(theta, margins.m1)?;
        let arg = g.add_const(arg, margins.m2)?;
        let arg = clamp(g, arg, 0.0, std::f64::consts::PI)?;
        let target = g.cos(arg)?;
        let target = g.add_const(target, -margins.m3)?;

        // logits = s * cos, then swap the target entry for the margin version
        let mut onehot = vec![0.0; m];
        onehot[label] = 1.0;
        let onehot = g.constant(Array::vector(onehot))?;
        let delta = g.sub(target, cos_y)?;
        let bump = g.scale_by(onehot, delta)?;
        let cos_m = g.add(cos, bump)?;
        let logits = g.scale_by(cos_m, scale)?;

        // -log softmax(logits)[y] = logsumexp(logits) - logits[y]
        let shift = g.value(logits).data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let shifted = g.add_const(logits, -shift)?;
        let e = g.exp(shifted)?;
        let total = g.sum(e)?;
        let lse = g.log(total)?;
        let ly = g.pick(shifted, label)?;
        per_sample.push(g.sub(lse, ly)?);
    }
    let stacked = g.concat(&per_sample)?;
    g.mean(stacked)
}

/// `clamp(x, lo, hi)` with zero gradient outside the interval.
fn clamp(g: &mut Graph, x: NodeId, lo: f64, hi: f64) -> Result<NodeId> {
    let x = g.clamp_min(x, lo)?;
    let n = g.neg(x)?;
    let n = g.clamp_min(n, -hi)?;
    g.neg(n)
}
