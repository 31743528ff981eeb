use std::collections::BTreeMap;

use crate::autodiff::{Array, Graph, NodeId, ParamId, ParamStore};
use crate::error::{invalid, Error, Result};
use crate::fusion::ModelLayout;

/// Inverse-distance spread of `M` class centers (rows of `centers`):
/// `1/(M(M-1)) Σ_{j1 ≠ j2} 1 / (||c_j1 - c_j2|| + 1)` over ordered pairs.
pub fn uniform_loss(g: &mut Graph, centers: NodeId) -> Result<NodeId> {
    let cv = g.value(centers);
    if !cv.is_matrix() || cv.rows() < 2 {
        return Err(invalid("uniform loss needs at least two centers"));
    }
    let m = cv.rows();
    let d = cv.cols();
    // each unordered pair appears once as a +1/-1 row of the selector
    let pairs = m * (m - 1) / 2;
    let mut sel = vec![0.0; pairs * m];
    let mut row = 0;
    for a in 0..m {
        for b in a + 1..m {
            sel[row * m + a] = 1.0;
            sel[row * m + b] = -1.0;
            row += 1;
        }
    }
    let sel = g.constant(Array::matrix(pairs, m, sel)?)?;
    let diffs = g.matmul(sel, centers)?;
    let sq = g.square(diffs)?;
    let ones = g.constant(Array::filled(&[d], 1.0))?;
    let d2 = g.matvec(sq, ones)?;
    let dist = g.sqrt(d2)?;
    let denom = g.add_const(dist, 1.0)?;
    let inv = g.recip(denom)?;
    let total = g.sum(inv)?;
    g.scale(total, 2.0 / (m * (m - 1)) as f64)
}

/// Norm-equality penalty on the per-modality representations of each set:
/// `1/(N K(K-1)) Σ_sets Σ_{k1≠k2} (||Z_k1|| - ||Z_k2||)² / Σ_k ||Z_k||`.
/// A single modality contributes zero.
pub fn representation_loss(g: &mut Graph, sets: &[Vec<NodeId>]) -> Result<NodeId> {
    if sets.is_empty() {
        return Err(invalid("representation loss over an empty batch"));
    }
    let k = sets[0].len();
    if sets.iter().any(|s| s.len() != k) {
        return Err(invalid("every set needs the same number of modalities"));
    }
    if k < 2 {
        return g.constant(Array::scalar(0.0));
    }
    let mut per_set = Vec::with_capacity(sets.len());
    for zs in sets {
        let norms: Vec<NodeId> = zs.iter().map(|&z| g.norm(z)).collect::<Result<_>>()?;
        let n = g.concat(&norms)?;
        let denom = g.sum(n)?;
        if g.scalar(denom) == 0.0 {
            return Err(Error::ZeroNorm { op: "representation_loss" });
        }
        let mut terms = Vec::with_capacity(k * (k - 1) / 2);
        for a in 0..k {
            for b in a + 1..k {
                let diff = g.sub(norms[a], norms[b])?;
                terms.push(g.square(diff)?);
            }
        }
        let t = g.concat(&terms)?;
        let num = g.sum(t)?;
        // ordered pairs: each unordered pair counts twice
        let num = g.scale(num, 2.0)?;
        per_set.push(g.div(num, denom)?);
    }
    let all = g.concat(&per_set)?;
    let total = g.sum(all)?;
    g.scale(total, 1.0 / (sets.len() * k * (k - 1)) as f64)
}

/// Direction mismatch between multimodal and per-modality class centers:
/// `1/(K M) Σ_k Σ_j || ĉ_j - ĉ_j^(k) ||²`.
pub fn center_alignment_loss(g: &mut Graph, centers: NodeId, modality_centers: &[NodeId]) -> Result<NodeId> {
    if modality_centers.is_empty() {
        return Err(invalid("center alignment needs at least one modality"));
    }
    let m = g.value(centers).rows();
    let c = g.normalize_rows(centers)?;
    let mut terms = Vec::with_capacity(modality_centers.len());
    for &mc in modality_centers {
        if g.value(mc).shape() != g.value(centers).shape() {
            return Err(Error::ShapeMismatch {
                op: "center_alignment_loss",
                shapes: vec![g.value(centers).shape().to_vec(), g.value(mc).shape().to_vec()],
            });
        }
        let ck = g.normalize_rows(mc)?;
        let diff = g.sub(c, ck)?;
        let sq = g.square(diff)?;
        terms.push(g.sum(sq)?);
    }
    let t = g.concat(&terms)?;
    let total = g.sum(t)?;
    g.scale(total, 1.0 / (modality_centers.len() * m) as f64)
}

/// Handles of every center matrix plus the EMA rate.
#[derive(Clone, Debug, PartialEq)]
pub struct CenterBank {
    pub multimodal: ParamId,
    pub modality: Vec<ParamId>,
    pub unimodal: Vec<ParamId>,
    pub alpha: f64,
}

impl CenterBank {
    pub fn of(layout: &ModelLayout, alpha: f64) -> Self {
        CenterBank {
            multimodal: layout.centers,
            modality: layout.modality_centers.clone(),
            unimodal: layout.unimodal_centers.clone(),
            alpha,
        }
    }
}

/// Embedding values of one batch, grouped by space.
#[derive(Clone, Debug, Default)]
pub struct CenterBatch {
    pub labels: Vec<usize>,
    pub z: Vec<Vec<f64>>,
    /// `zk[k][i]`: modality `k` of set `i`.
    pub zk: Vec<Vec<Vec<f64>>>,
    pub y: Vec<Vec<Vec<f64>>>,
}

/// Pull each present class's centers toward the batch class mean:
/// `c ← (1 - α) c + α mean`. Absent classes are left untouched.
pub fn update_centers(store: &mut ParamStore, bank: &CenterBank, batch: &CenterBatch) -> Result<()> {
    let a = bank.alpha;
    ema(store, bank.multimodal, &batch.labels, &batch.z, a)?;
    for (k, &id) in bank.modality.iter().enumerate() {
        if let Some(vals) = batch.zk.get(k) {
            ema(store, id, &batch.labels, vals, a)?;
        }
    }
    for (k, &id) in bank.unimodal.iter().enumerate() {
        if let Some(vals) = batch.y.get(k) {
            ema(store, id, &batch.labels, vals, a)?;
        }
    }
    Ok(())
}

fn ema(store: &mut ParamStore, id: ParamId, labels: &[usize], values: &[Vec<f64>], alpha: f64) -> Result<()> {
    if labels.len() != values.len() {
        return Err(invalid("center update: labels and embeddings differ in length"));
    }
    let c = store.value_mut(id);
    let (m, d) = (c.rows(), c.cols());
    let mut sums: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
    for (&y, v) in labels.iter().zip(values) {
        if y >= m || v.len() != d {
            return Err(invalid(format!("center update: bad label {y} or dimension {}", v.len())));
        }
        let e = sums.entry(y).or_insert_with(|| (vec![0.0; d], 0));
        e.0.iter_mut().zip(v).for_each(|(s, x)| *s += x);
        e.1 += 1;
    }
    for (y, (sum, n)) in sums {
        let row = c.row_mut(y);
        for (r, s) in row.iter_mut().zip(sum) {
            *r = (1.0 - alpha) * *r + alpha * (s / n as f64);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ParamKind;

    fn uniform_value(rows: usize, cols: usize, data: Vec<f64>) -> f64 {
        let mut g = Graph::new();
        let c = g.constant(Array::matrix(rows, cols, data).unwrap()).unwrap();
        let l = uniform_loss(&mut g, c).unwrap();
        g.scalar(l)
    }

    #[test]
    fn uniform_closed_forms() {
        assert!((uniform_value(2, 2, vec![0., 0., 1., 0.]) - 0.5).abs() < 1e-12);
        assert_eq!(uniform_value(2, 2, vec![0.3, 0.3, 0.3, 0.3]), 1.0);
        assert!((uniform_value(2, 1, vec![0.0, 999.0]) - 0.001).abs() < 1e-12);
    }

    #[test]
    fn uniform_coincident_centers_have_finite_gradient() {
        let mut g = Graph::new();
        let c = g.variable(Array::matrix(2, 2, vec![1., 1., 1., 1.]).unwrap()).unwrap();
        let l = uniform_loss(&mut g, c).unwrap();
        g.backward(l).unwrap();
        assert!(g.grad(c).unwrap().all_finite());
    }

    fn rep_value(sets: Vec<Vec<Vec<f64>>>) -> Result<f64> {
        let mut g = Graph::new();
        let nodes: Vec<Vec<NodeId>> = sets
            .into_iter()
            .map(|s| s.into_iter().map(|z| g.constant(Array::vector(z)).unwrap()).collect())
            .collect();
        let l = representation_loss(&mut g, &nodes)?;
        Ok(g.scalar(l))
    }

    #[test]
    fn representation_closed_forms() {
        assert_eq!(rep_value(vec![vec![vec![3.0, 0.0], vec![0.0, 3.0]]]).unwrap(), 0.0);
        let l = rep_value(vec![vec![vec![3.0, 0.0], vec![0.0, 1.0]]]).unwrap();
        assert!((l - 1.0).abs() < 1e-12);
        let l = rep_value(vec![vec![vec![6.0, 0.0], vec![0.0, 2.0]]]).unwrap();
        assert!((l - 2.0).abs() < 1e-12);
        assert_eq!(rep_value(vec![vec![vec![6.0, 0.0]]]).unwrap(), 0.0);
        assert!(rep_value(vec![vec![vec![0.0], vec![0.0]]]).is_err());
    }

    fn align_value(c: Vec<f64>, ck: Vec<f64>, m: usize, d: usize) -> Result<f64> {
        let mut g = Graph::new();
        let c = g.constant(Array::matrix(m, d, c).unwrap()).unwrap();
        let ck = g.constant(Array::matrix(m, d, ck).unwrap()).unwrap();
        let l = center_alignment_loss(&mut g, c, &[ck])?;
        Ok(g.scalar(l))
    }

    #[test]
    fn alignment_closed_forms() {
        assert_eq!(align_value(vec![2.0, 0.0], vec![5.0, 0.0], 1, 2).unwrap(), 0.0);
        assert!((align_value(vec![1.0, 0.0], vec![-3.0, 0.0], 1, 2).unwrap() - 4.0).abs() < 1e-12);
        assert!((align_value(vec![1.0, 0.0], vec![0.0, 2.0], 1, 2).unwrap() - 2.0).abs() < 1e-12);
        assert!(align_value(vec![0.0, 0.0], vec![0.0, 2.0], 1, 2).is_err());
    }

    #[test]
    fn ema_update() {
        let mut store = ParamStore::new();
        let id = store.add("c", ParamKind::Center, Array::matrix(2, 2, vec![0., 0., 5., 5.]).unwrap());
        let bank = CenterBank {
            multimodal: id,
            modality: vec![],
            unimodal: vec![],
            alpha: 0.5,
        };
        let batch = CenterBatch {
            labels: vec![0, 0],
            z: vec![vec![1.0, 0.0], vec![3.0, 0.0]],
            ..Default::default()
        };
        update_centers(&mut store, &bank, &batch).unwrap();
        assert_eq!(store.value(id).data(), &[1.0, 0.0, 5.0, 5.0]);

        let full = CenterBank { alpha: 1.0, ..bank.clone() };
        update_centers(&mut store, &full, &batch).unwrap();
        assert_eq!(store.value(id).row(0), &[2.0, 0.0]);

        let frozen = CenterBank { alpha: 0.0, ..bank };
        update_centers(&mut store, &frozen, &batch).unwrap();
        assert_eq!(store.value(id).row(0), &[2.0, 0.0]);
    }
}
