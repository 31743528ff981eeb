use crate::autodiff::{Array, Graph, NodeId, ParamStore};
use crate::error::{invalid, Result};
use crate::fusion::ModelLayout;

/// Floor on squared distances inside the energy.
pub const ENERGY_EPS: f64 = 1e-12;

/// Hyperspherical energy of the rows of `w`.
///
/// Rows are normalized, optionally projected by `proj` (`r × d`) and
/// renormalized, then `Σ_{i≠l} 1 / max(ε, ||u_i - u_l||²)` is taken over
/// ordered pairs. In half-space mode the set is `{u_i} ∪ {-u_i}`.
pub fn hyperspherical_energy(g: &mut Graph, w: NodeId, proj: Option<NodeId>, half_space: bool) -> Result<NodeId> {
    let wv = g.value(w);
    if !wv.is_matrix() || wv.rows() < 2 {
        return Err(invalid("hyperspherical energy needs at least two rows"));
    }
    let mut u = g.normalize_rows(w)?;
    if let Some(p) = proj {
        let projected = g.matmul_nt(u, p)?;
        u = g.normalize_rows(projected)?;
    }
    let v = if half_space {
        let neg = g.neg(u)?;
        g.concat(&[u, neg])?
    } else {
        u
    };
    let n = g.value(v).rows();
    // rows are unit vectors: ||a - b||² = 2 - 2 a·b
    let gram = g.matmul_nt(v, v)?;
    let d2 = g.scale(gram, -2.0)?;
    let d2 = g.add_const(d2, 2.0)?;
    let d2 = g.clamp_min(d2, ENERGY_EPS)?;
    let inv = g.recip(d2)?;
    let mut mask = vec![1.0; n * n];
    for i in 0..n {
        mask[i * n + i] = 0.0;
    }
    let mask = g.constant(Array::matrix(n, n, mask)?)?;
    let off = g.mul(inv, mask)?;
    g.sum(off)
}

/// Network compactness: normalized energy of every layer's neuron weights
/// (weighted by `lambda_h`) plus that of the multimodal classifier vectors
/// (weighted by `lambda_h0`). Layers with fewer than two neurons are skipped.
pub fn compactness_loss(
    g: &mut Graph,
    layout: &ModelLayout,
    store: &ParamStore,
    lambda_h: f64,
    lambda_h0: f64,
    half_space: bool,
) -> Result<NodeId> {
    let terms = compactness_terms(g, layout, store, lambda_h, lambda_h0, half_space)?;
    if terms.is_empty() {
        return g.constant(Array::scalar(0.0));
    }
    let all = g.concat(&terms)?;
    g.sum(all)
}

/// The weighted per-layer terms of [`compactness_loss`], head last.
pub fn compactness_terms(
    g: &mut Graph,
    layout: &ModelLayout,
    store: &ParamStore,
    lambda_h: f64,
    lambda_h0: f64,
    half_space: bool,
) -> Result<Vec<NodeId>> {
    let mut terms = Vec::new();
    if lambda_h > 0.0 {
        for layer in layout.layers() {
            let n = layer.output;
            if n < 2 {
                continue;
            }
            let w = g.param(store, layer.weight)?;
            let p = match layout.projection_for(layer.input) {
                Some(pid) => Some(g.param(store, pid)?),
                None => None,
            };
            let e = hyperspherical_energy(g, w, p, half_space)?;
            terms.push(g.scale(e, lambda_h / (n * (n - 1)) as f64)?);
        }
    }
    if lambda_h0 > 0.0 {
        let head = g.param(store, layout.head)?;
        let m = layout.shape.num_classes;
        let d = layout.config.embed_dim;
        let p = match layout.projection_for(d) {
            Some(pid) => Some(g.param(store, pid)?),
            None => None,
        };
        let e = hyperspherical_energy(g, head, p, half_space)?;
        terms.push(g.scale(e, lambda_h0 / (m * (m - 1)) as f64)?);
    }
    Ok(terms)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn energy(rows: usize, cols: usize, data: Vec<f64>, half: bool) -> f64 {
        let mut g = Graph::new();
        let w = g.constant(Array::matrix(rows, cols, data).unwrap()).unwrap();
        let e = hyperspherical_energy(&mut g, w, None, half).unwrap();
        g.scalar(e)
    }

    #[test]
    fn orthogonal_pair() {
        assert!((energy(2, 2, vec![1., 0., 0., 1.], false) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn antipodal_pair() {
        assert!((energy(2, 2, vec![1., 0., -1., 0.], false) - 0.5).abs() < 1e-12);
        // u_1 coincides with -u_2 in half-space mode
        let e = energy(2, 2, vec![1., 0., -1., 0.], true);
        assert!(e >= 1.0 / ENERGY_EPS);
    }

    #[test]
    fn scale_invariant_rows() {
        let a = energy(3, 2, vec![1., 0.2, -0.4, 1., 0.3, -0.9], true);
        let b = energy(3, 2, vec![5., 1.0, -0.04, 0.1, 0.6, -1.8], true);
        assert!((a - b).abs() < 1e-12 * a.abs());
    }

    #[test]
    fn identity_projection_changes_nothing() {
        let data = vec![0.3, -1.0, 0.5, 0.8, 0.1, 0.2];
        let mut g = Graph::new();
        let w = g.constant(Array::matrix(2, 3, data.clone()).unwrap()).unwrap();
        let p = g
            .constant(Array::matrix(3, 3, vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap())
            .unwrap();
        let e = hyperspherical_energy(&mut g, w, Some(p), false).unwrap();
        let plain = energy(2, 3, data, false);
        assert!((g.scalar(e) - plain).abs() < 1e-12);
    }

    #[test]
    fn zero_row_is_an_error() {
        let mut g = Graph::new();
        let w = g.constant(Array::matrix(2, 2, vec![0., 0., 1., 0.]).unwrap()).unwrap();
        assert!(hyperspherical_energy(&mut g, w, None, false).is_err());
    }
}
