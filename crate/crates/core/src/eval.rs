//! Verification and identification metrics, fusion baselines and the
//! quality analysis.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::error::{invalid, Error, Result};
use crate::fusion::{FusionMode, FusionModel, MultimodalSampleSet};
use crate::synthdata::{IdentificationSplit, Pair, Protocol, Split};

/// False-accept rates reported by default.
pub const FAR_LEVELS: [f64; 4] = [1e-1, 1e-2, 1e-3, 1e-4];

pub fn similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(invalid("similarity of vectors with different lengths"));
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm { op: "similarity" });
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Verification scores split by label.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Scores {
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RocPoint {
    /// Accept when `score >= threshold`.
    pub threshold: f64,
    pub far: f64,
    pub tar: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RocMetrics {
    /// From `(0, 0)` at an infinite threshold to `(1, 1)`.
    pub roc: Vec<RocPoint>,
    pub auc: f64,
    pub eer: f64,
    /// First sweep threshold at which `FAR <= FRR` no longer holds strictly.
    pub eer_threshold: f64,
}

impl RocMetrics {
    /// TAR at a given FAR, linear in ROC space; on a vertical run of points
    /// at exactly that FAR the highest TAR is taken.
    pub fn tar_at(&self, far: f64) -> f64 {
        let mut best = 0.0;
        for w in self.roc.windows(2) {
            let (a, b) = (w[0], w[1]);
            if b.far <= far {
                best = b.tar;
            } else if a.far <= far {
                best = a.tar + (far - a.far) / (b.far - a.far) * (b.tar - a.tar);
                break;
            }
        }
        best
    }

    pub fn tar_table(&self, levels: &[f64]) -> BTreeMap<String, f64> {
        levels.iter().map(|&f| (far_key(f), self.tar_at(f))).collect()
    }
}

/// `1e-1`, `1e-2`, ... for powers of ten, plain formatting otherwise.
pub fn far_key(f: f64) -> String {
    let e = f.log10().round();
    if (10f64.powf(e) - f).abs() <= 1e-12 * f {
        format!("1e{}", e as i64)
    } else {
        format!("{f}")
    }
}

/// Threshold sweep over every distinct score.
pub fn roc_metrics(scores: &Scores) -> Result<RocMetrics> {
    if scores.genuine.is_empty() || scores.impostor.is_empty() {
        return Err(invalid("ROC needs both genuine and impostor scores"));
    }
    if scores.genuine.iter().chain(&scores.impostor).any(|s| !s.is_finite()) {
        return Err(Error::NonFinite { op: "roc_metrics" });
    }
    let mut all: Vec<(f64, bool)> = scores
        .genuine
        .iter()
        .map(|&s| (s, true))
        .chain(scores.impostor.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (ng, ni) = (scores.genuine.len() as f64, scores.impostor.len() as f64);

    let mut roc = vec![RocPoint {
        threshold: f64::INFINITY,
        far: 0.0,
        tar: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < all.len() {
        let t = all[i].0;
        while i < all.len() && all[i].0 == t {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        roc.push(RocPoint {
            threshold: t,
            far: fp as f64 / ni,
            tar: tp as f64 / ng,
        });
    }

    let auc = roc
        .windows(2)
        .map(|w| (w[1].far - w[0].far) * (w[0].tar + w[1].tar) / 2.0)
        .sum();

    // FAR + TAR rises from 0 to 2 along the curve; EER sits where it is 1.
    let mut eer = 0.0;
    let mut eer_threshold = roc[roc.len() - 1].threshold;
    for w in roc.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (sa, sb) = (a.far + a.tar, b.far + b.tar);
        if sb >= 1.0 {
            let t = if sb > sa { (1.0 - sa) / (sb - sa) } else { 1.0 };
            eer = a.far + t * (b.far - a.far);
            eer_threshold = b.threshold;
            break;
        }
    }
    Ok(RocMetrics {
        roc,
        auc,
        eer,
        eer_threshold,
    })
}

/// Rank (1-based) of class `truth` in `row`, ordering by score descending
/// and breaking ties toward the lower class index.
pub fn rank_of(row: &[f64], truth: usize) -> usize {
    let s = row[truth];
    1 + row
        .iter()
        .enumerate()
        .filter(|&(j, &v)| v > s || (v == s && j < truth))
        .count()
}

/// `cmc[k-1]` is the fraction of probes whose true class ranks within `k`.
pub fn cmc(scores: &[Vec<f64>], truth: &[usize], max_rank: usize) -> Result<Vec<f64>> {
    if scores.is_empty() || scores.len() != truth.len() {
        return Err(invalid("cmc needs one true class per probe"));
    }
    let mut counts = vec![0usize; max_rank];
    for (row, &t) in scores.iter().zip(truth) {
        if t >= row.len() {
            return Err(invalid(format!("true class {t} is not in the gallery")));
        }
        let r = rank_of(row, t);
        if r <= max_rank {
            counts[r - 1] += 1;
        }
    }
    let n = scores.len() as f64;
    let mut acc = 0;
    Ok(counts
        .into_iter()
        .map(|c| {
            acc += c;
            acc as f64 / n
        })
        .collect())
}

/// Mean of the per-set modality weights.
pub fn quality_expectation(weights: &[Vec<f64>]) -> Result<Vec<f64>> {
    let Some(first) = weights.first() else {
        return Err(invalid("quality expectation over no sample sets"));
    };
    let k = first.len();
    let mut p = vec![0.0; k];
    for w in weights {
        if w.len() != k {
            return Err(invalid("modality count differs between sets"));
        }
        p.iter_mut().zip(w).for_each(|(a, b)| *a += b);
    }
    p.iter_mut().for_each(|a| *a /= weights.len() as f64);
    Ok(p)
}

/// 1-based ranks; tied values share the average of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman's rho: Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(invalid("spearman: inputs differ in length"));
    }
    if x.len() < 3 {
        return Err(invalid("spearman needs at least three pairs"));
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined("spearman correlation of a constant input".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Mean of aligned per-modality scores.
pub fn sum_fusion(per_modality: &[Vec<f64>]) -> Result<Vec<f64>> {
    let Some(first) = per_modality.first() else {
        return Err(invalid("sum fusion over no modalities"));
    };
    if per_modality.iter().any(|m| m.len() != first.len()) {
        return Err(invalid("sum fusion: modalities score different trials"));
    }
    let k = per_modality.len() as f64;
    Ok((0..first.len())
        .map(|i| per_modality.iter().map(|m| m[i]).sum::<f64>() / k)
        .collect())
}

/// Accept only with a strict majority; ties reject.
pub fn majority_accept(decisions: &[bool]) -> bool {
    2 * decisions.iter().filter(|&&d| d).count() > decisions.len()
}

/// Most voted class; ties go to the lowest index.
pub fn majority_class(votes: &[usize]) -> Option<usize> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &v in votes {
        *counts.entry(v).or_default() += 1;
    }
    let best = counts.values().copied().max()?;
    counts.into_iter().find(|&(_, c)| c == best).map(|(v, _)| v)
}

/// How modality evidence is combined at evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fusion {
    /// Learned weights at both blocks.
    Quality,
    /// Feature averaging with forced uniform weights.
    Avg,
    /// Mean of per-modality cosine scores of `Y_k`.
    Sum,
    /// Majority vote of per-modality decisions.
    Major,
}

impl Fusion {
    pub fn name(self) -> &'static str {
        match self {
            Fusion::Quality => "quality",
            Fusion::Avg => "avg",
            Fusion::Sum => "sum",
            Fusion::Major => "major",
        }
    }
}

/// Per-class gallery template.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GalleryRep {
    /// Mean of the class's gallery representations.
    Mean,
    /// Best similarity over the class's gallery sets.
    BestMatch,
}

/// Evaluation-mode outputs of one sample set.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    pub label: u32,
    pub z: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    /// Normalized sample weights per modality.
    pub intra: Vec<Vec<f64>>,
    /// Sigmoid sample scores per modality.
    pub intra_raw: Vec<Vec<f64>>,
    pub inter: Vec<f64>,
    pub inter_raw: Vec<f64>,
}

/// Sets are independent, so the forwards run in parallel; output order
/// follows `sets`.
pub fn embed(model: &FusionModel, sets: &[MultimodalSampleSet], mode: FusionMode) -> Result<Vec<Embedding>> {
    sets.par_iter()
        .map(|s| {
            let mut g = Graph::new();
            let o = model.forward(&mut g, s, mode, None)?;
            let v = |n| g.value(n).data().to_vec();
            Ok(Embedding {
                label: o.label,
                z: v(o.z),
                y: o.y.iter().map(|&n| v(n)).collect(),
                intra: o.intra_weights.iter().map(|&n| v(n)).collect(),
                intra_raw: o.intra_raw.iter().map(|&n| v(n)).collect(),
                inter: v(o.inter_weights),
                inter_raw: v(o.inter_raw),
            })
        })
        .collect()
}

/// Embeddings needed by every fusion: quality-mode forwards, plus
/// uniform-weight forwards for `Avg`.
#[derive(Clone, Debug)]
pub struct EmbeddedSets {
    pub quality: Vec<Embedding>,
    pub average: Vec<Embedding>,
}

impl EmbeddedSets {
    pub fn new(model: &FusionModel, sets: &[MultimodalSampleSet]) -> Result<Self> {
        Ok(EmbeddedSets {
            quality: embed(model, sets, FusionMode::Quality)?,
            average: embed(model, sets, FusionMode::Average)?,
        })
    }

    pub fn modalities(&self) -> usize {
        self.quality.first().map_or(0, |e| e.y.len())
    }
}

fn unimodal_pair_scores(e: &[Embedding], pairs: &[Pair], k: usize) -> Result<Vec<f64>> {
    pairs.iter().map(|p| similarity(&e[p.a].y[k], &e[p.b].y[k])).collect()
}

fn split_by_label(pairs: &[Pair], scores: &[f64]) -> Scores {
    let mut s = Scores::default();
    for (p, &v) in pairs.iter().zip(scores) {
        if p.genuine {
            s.genuine.push(v);
        } else {
            s.impostor.push(v);
        }
    }
    s
}

/// Pair scores under a fusion rule.
///
/// `Major` thresholds each modality at its own equal-error threshold on
/// these pairs, so its score is an optimistic binary decision.
pub fn verification_scores(emb: &EmbeddedSets, pairs: &[Pair], fusion: Fusion) -> Result<Scores> {
    let n = emb.quality.len();
    if let Some(p) = pairs.iter().find(|p| p.a >= n || p.b >= n) {
        return Err(invalid(format!("pair ({}, {}) outside {n} sets", p.a, p.b)));
    }
    let scores: Vec<f64> = match fusion {
        Fusion::Quality | Fusion::Avg => {
            let e = if fusion == Fusion::Quality { &emb.quality } else { &emb.average };
            pairs.iter().map(|p| similarity(&e[p.a].z, &e[p.b].z)).collect::<Result<_>>()?
        }
        Fusion::Sum => {
            let per: Vec<Vec<f64>> = (0..emb.modalities())
                .map(|k| unimodal_pair_scores(&emb.quality, pairs, k))
                .collect::<Result<_>>()?;
            sum_fusion(&per)?
        }
        Fusion::Major => {
            let mut decisions = vec![Vec::new(); pairs.len()];
            for k in 0..emb.modalities() {
                let s = unimodal_pair_scores(&emb.quality, pairs, k)?;
                let t = roc_metrics(&split_by_label(pairs, &s))?.eer_threshold;
                for (d, v) in decisions.iter_mut().zip(&s) {
                    d.push(*v >= t);
                }
            }
            decisions
                .iter()
                .map(|d| if majority_accept(d) { 1.0 } else { 0.0 })
                .collect()
        }
    };
    Ok(split_by_label(pairs, &scores))
}

/// Probe-by-class scores and the probes' true class indices. Gallery
/// classes are the distinct gallery labels in ascending order.
pub fn identification_scores(
    emb: &EmbeddedSets,
    split: &IdentificationSplit,
    fusion: Fusion,
    gallery: GalleryRep,
) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let e = if fusion == Fusion::Avg { &emb.average } else { &emb.quality };
    let mut classes: Vec<u32> = split.gallery.iter().map(|&i| e[i].label).collect();
    classes.sort_unstable();
    classes.dedup();
    let truth = split
        .probes
        .iter()
        .map(|&i| {
            classes
                .binary_search(&e[i].label)
                .map_err(|_| invalid(format!("probe class {} has no gallery sets", e[i].label)))
        })
        .collect::<Result<Vec<_>>>()?;
    let members: Vec<Vec<usize>> = classes
        .iter()
        .map(|&c| split.gallery.iter().copied().filter(|&i| e[i].label == c).collect())
        .collect();

    // Similarity of probe `p` to every class in one representation space.
    let space_scores = |pick: &dyn Fn(&Embedding) -> &[f64]| -> Result<Vec<Vec<f64>>> {
        let templates: Vec<Vec<f64>> = members.iter().map(|m| mean_of(m.iter().map(|&i| pick(&e[i])))).collect();
        split
            .probes
            .iter()
            .map(|&p| {
                let x = pick(&e[p]);
                match gallery {
                    GalleryRep::Mean => templates.iter().map(|t| similarity(x, t)).collect(),
                    GalleryRep::BestMatch => members
                        .iter()
                        .map(|m| {
                            m.iter()
                                .map(|&i| similarity(x, pick(&e[i])))
                                .try_fold(f64::NEG_INFINITY, |acc, s| s.map(|s| acc.max(s)))
                        })
                        .collect(),
                }
            })
            .collect()
    };

    let scores = match fusion {
        Fusion::Quality | Fusion::Avg => space_scores(&|x: &Embedding| x.z.as_slice())?,
        Fusion::Sum | Fusion::Major => {
            let per: Vec<Vec<Vec<f64>>> = (0..emb.modalities())
                .map(|k| space_scores(&move |x: &Embedding| x.y[k].as_slice()))
                .collect::<Result<_>>()?;
            (0..split.probes.len())
                .map(|p| {
                    if fusion == Fusion::Sum {
                        let rows: Vec<Vec<f64>> = per.iter().map(|m| m[p].clone()).collect();
                        sum_fusion(&rows)
                    } else {
                        // votes, ranked by count then by lower class index
                        let mut votes = vec![0.0; classes.len()];
                        for m in &per {
                            votes[rank_top(&m[p])] += 1.0;
                        }
                        Ok(votes)
                    }
                })
                .collect::<Result<_>>()?
        }
    };
    Ok((scores, truth))
}

fn rank_top(row: &[f64]) -> usize {
    (0..row.len()).find(|&j| rank_of(row, j) == 1).unwrap_or(0)
}

fn mean_of<'a>(xs: impl Iterator<Item = &'a [f64]>) -> Vec<f64> {
    let mut acc: Vec<f64> = Vec::new();
    let mut n = 0.0;
    for x in xs {
        if acc.is_empty() {
            acc = vec![0.0; x.len()];
        }
        acc.iter_mut().zip(x).for_each(|(a, b)| *a += b);
        n += 1.0;
    }
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

/// One row per sample: estimated weight against ground truth.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QualityRow {
    pub set: usize,
    pub label: u32,
    pub modality: usize,
    pub sample: usize,
    pub gamma: f64,
    /// Raw sigmoid score `q`.
    pub score: f64,
    /// Normalized weight within the modality.
    pub weight: f64,
}

pub fn quality_rows(sets: &[MultimodalSampleSet], emb: &[Embedding]) -> Vec<QualityRow> {
    let mut rows = Vec::new();
    for (i, (s, e)) in sets.iter().zip(emb).enumerate() {
        for (k, samples) in s.modalities.iter().enumerate() {
            for (j, smp) in samples.iter().enumerate() {
                rows.push(QualityRow {
                    set: i,
                    label: s.label,
                    modality: k,
                    sample: j,
                    gamma: smp.gamma,
                    score: e.intra_raw[k][j],
                    weight: e.intra[k][j],
                });
            }
        }
    }
    rows
}

/// Spearman of estimated weights against `1 − γ` over all rows.
pub fn quality_correlation(rows: &[QualityRow]) -> Result<f64> {
    let w: Vec<f64> = rows.iter().map(|r| r.weight).collect();
    let q: Vec<f64> = rows.iter().map(|r| 1.0 - r.gamma).collect();
    spearman(&w, &q)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub fusion: String,
    pub protocol: String,
    pub auc: Option<f64>,
    pub eer: Option<f64>,
    pub tar_at: BTreeMap<String, f64>,
    pub cmc: Vec<f64>,
    pub p_b: Vec<f64>,
    /// `None` when the correlation is undefined (constant input).
    pub spearman_quality: Option<f64>,
    #[serde(skip)]
    pub roc: Vec<RocPoint>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn write_roc_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "threshold,far,tar")?;
        for p in &self.roc {
            writeln!(out, "{},{},{}", p.threshold, p.far, p.tar)?;
        }
        Ok(())
    }

    pub fn write_cmc_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "rank,recall")?;
        for (i, c) in self.cmc.iter().enumerate() {
            writeln!(out, "{},{c}", i + 1)?;
        }
        Ok(())
    }
}

/// Full report for one fusion rule on an already split set list.
pub fn evaluate(
    model: &FusionModel,
    sets: &[MultimodalSampleSet],
    split: &Split,
    fusion: Fusion,
    gallery: GalleryRep,
) -> Result<EvalReport> {
    let emb = EmbeddedSets::new(model, sets)?;
    report_from(sets, &emb, split, fusion, gallery)
}

pub fn report_from(
    sets: &[MultimodalSampleSet],
    emb: &EmbeddedSets,
    split: &Split,
    fusion: Fusion,
    gallery: GalleryRep,
) -> Result<EvalReport> {
    let weights: Vec<Vec<f64>> = emb.quality.iter().map(|e| e.inter.clone()).collect();
    let p_b = quality_expectation(&weights)?;
    let spearman_quality = match quality_correlation(&quality_rows(sets, &emb.quality)) {
        Ok(r) => Some(r),
        Err(Error::Undefined(_)) => None,
        Err(e) => return Err(e),
    };
    let mut report = EvalReport {
        fusion: fusion.name().into(),
        protocol: String::new(),
        auc: None,
        eer: None,
        tar_at: BTreeMap::new(),
        cmc: Vec::new(),
        p_b,
        spearman_quality,
        roc: Vec::new(),
    };
    match split {
        Split::Verification(pairs) => {
            let m = roc_metrics(&verification_scores(emb, pairs, fusion)?)?;
            report.protocol = "verification".into();
            report.auc = Some(m.auc);
            report.eer = Some(m.eer);
            report.tar_at = m.tar_table(&FAR_LEVELS);
            report.roc = m.roc;
        }
        Split::Identification(s) => {
            let (scores, truth) = identification_scores(emb, s, fusion, gallery)?;
            let max_rank = scores.first().map_or(0, |r| r.len());
            report.protocol = "identification".into();
            report.cmc = cmc(&scores, &truth, max_rank)?;
        }
    }
    Ok(report)
}

/// Human-readable protocol name.
pub fn protocol_name(p: &Protocol) -> &'static str {
    match p {
        Protocol::Identification { .. } => "identification",
        Protocol::Verification { .. } => "verification",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scores(g: &[f64], i: &[f64]) -> Scores {
        Scores {
            genuine: g.to_vec(),
            impostor: i.to_vec(),
        }
    }

    #[test]
    fn cosine_examples() {
        assert!((similarity(&[1.0, 2.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((similarity(&[1.0, 2.0], &[-1.0, -2.0]).unwrap() + 1.0).abs() < 1e-15);
        let s = similarity(&[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((s - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(similarity(&[0.0, 0.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn separable_scores() {
        let m = roc_metrics(&scores(&[0.9, 0.8], &[0.2, 0.1])).unwrap();
        assert_eq!(m.auc, 1.0);
        assert_eq!(m.eer, 0.0);
    }

    #[test]
    fn overlapping_scores_eer() {
        let m = roc_metrics(&scores(&[0.8, 0.4], &[0.6, 0.2])).unwrap();
        assert!((m.eer - 0.5).abs() < 1e-15);
        assert!(m.eer_threshold > 0.4 && m.eer_threshold <= 0.6);
        assert!((m.auc - 0.75).abs() < 1e-15);
    }

    #[test]
    fn swapping_labels_complements_auc() {
        let s = scores(&[0.3, 0.7, 0.7, 0.1], &[0.5, 0.7, 0.2]);
        let a = roc_metrics(&s).unwrap().auc;
        let b = roc_metrics(&scores(&s.impostor, &s.genuine)).unwrap().auc;
        assert!((a + b - 1.0).abs() < 1e-15);
    }

    #[test]
    fn single_label_is_an_error() {
        assert!(roc_metrics(&scores(&[0.5], &[])).is_err());
    }

    #[test]
    fn tar_interpolates_and_is_monotone() {
        let m = roc_metrics(&scores(&[0.9, 0.5], &[0.7, 0.1])).unwrap();
        // (0,0) (0,.5) (.5,.5) (.5,1) (1,1)
        assert_eq!(m.tar_at(0.0), 0.5);
        assert_eq!(m.tar_at(0.25), 0.5);
        assert_eq!(m.tar_at(0.5), 1.0);
        let mut last = 0.0;
        for i in 0..=100 {
            let t = m.tar_at(i as f64 / 100.0);
            assert!(t >= last);
            last = t;
        }
    }

    #[test]
    fn far_keys() {
        assert_eq!(far_key(1e-1), "1e-1");
        assert_eq!(far_key(1e-4), "1e-4");
        assert_eq!(far_key(0.25), "0.25");
    }

    #[test]
    fn cmc_basics() {
        let s = vec![vec![0.9, 0.1, 0.0], vec![0.2, 0.8, 0.1]];
        assert_eq!(cmc(&s, &[0, 1], 3).unwrap(), vec![1.0, 1.0, 1.0]);
        let c = cmc(&s, &[2, 0], 3).unwrap();
        assert_eq!(c, vec![0.0, 0.5, 1.0]);
        assert!(cmc(&s, &[0, 5], 3).is_err());
    }

    #[test]
    fn tied_scores_rank_lower_index_first() {
        assert_eq!(rank_of(&[0.5, 0.5, 0.5], 0), 1);
        assert_eq!(rank_of(&[0.5, 0.5, 0.5], 2), 3);
    }

    #[test]
    fn quality_expectation_examples() {
        assert_eq!(quality_expectation(&[vec![1.0], vec![1.0]]).unwrap(), vec![1.0]);
        let p = quality_expectation(&[vec![0.5, 0.3, 0.2], vec![0.3, 0.3, 0.4]]).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((p[0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn spearman_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((spearman(&x, &[10.0, 20.0, 30.0, 40.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman(&x, &[4.0, 3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        let e = spearman(&x, &[1.0; 4]).unwrap_err();
        assert!(matches!(e, Error::Undefined(_)));
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn baseline_examples() {
        assert_eq!(sum_fusion(&[vec![0.2], vec![0.8]]).unwrap(), vec![0.5]);
        assert_eq!(sum_fusion(&[vec![0.3, 0.4]]).unwrap(), vec![0.3, 0.4]);
        assert!(sum_fusion(&[vec![0.2], vec![0.8, 0.1]]).is_err());
        assert_eq!(majority_class(&[0, 0, 1]), Some(0));
        assert_eq!(majority_class(&[2, 1]), Some(1));
        assert!(majority_accept(&[true, true, false]));
        assert!(!majority_accept(&[true, false]));
        assert!(majority_accept(&[true]));
    }
}
