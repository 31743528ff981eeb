//! Brute-force oracles shared by the integration tests and the acceptance
//! suite. Each one recomputes a quantity straight from its definition,
//! without the sweeps and shortcuts the library uses.

#![allow(dead_code)]

use std::f64::consts::PI;

use qfusion::autodiff::{Array, Graph, ParamKind, ParamStore};
use qfusion::config::Config;
use qfusion::losses::hyperspherical_energy;
use rand::Rng;

/// `(far, tar)` at every distinct score used as an accept-if-`>=` threshold,
/// highest first, after the `(0, 0)` point of an infinite threshold.
pub fn brute_roc(genuine: &[f64], impostor: &[f64]) -> Vec<(f64, f64)> {
    let mut thresholds: Vec<f64> = genuine.iter().chain(impostor).copied().collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut pts = vec![(0.0, 0.0)];
    for t in thresholds {
        let fa = impostor.iter().filter(|&&s| s >= t).count();
        let ta = genuine.iter().filter(|&&s| s >= t).count();
        pts.push((fa as f64 / impostor.len() as f64, ta as f64 / genuine.len() as f64));
    }
    pts
}

/// Probability that a genuine score beats an impostor score, ties counted
/// half (the area under the step-interpolated ROC).
pub fn brute_auc(genuine: &[f64], impostor: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &g in genuine {
        for &i in impostor {
            if g > i {
                wins += 1.0;
            } else if g == i {
                wins += 0.5;
            }
        }
    }
    wins / (genuine.len() * impostor.len()) as f64
}

/// FAR where the piecewise-linear ROC crosses `FAR = 1 − TAR`.
pub fn brute_eer(pts: &[(f64, f64)]) -> f64 {
    for w in pts.windows(2) {
        let ((f0, t0), (f1, t1)) = (w[0], w[1]);
        // h(s) = far(s) − (1 − tar(s)) along the segment
        let h0 = f0 - (1.0 - t0);
        let h1 = f1 - (1.0 - t1);
        if h1 >= 0.0 {
            if h1 == h0 {
                return f1;
            }
            let s = -h0 / (h1 - h0);
            return f0 + s * (f1 - f0);
        }
    }
    1.0
}

/// Linear interpolation of TAR at `far`, the highest TAR on a vertical run.
pub fn brute_tar_at(pts: &[(f64, f64)], far: f64) -> f64 {
    let at: Vec<f64> = pts.iter().filter(|p| p.0 == far).map(|p| p.1).collect();
    if let Some(m) = at.iter().copied().reduce(f64::max) {
        return m;
    }
    let below = pts.iter().rev().find(|p| p.0 < far).copied().unwrap();
    let above = pts.iter().find(|p| p.0 > far).copied().unwrap();
    below.1 + (far - below.0) * (above.1 - below.1) / (above.0 - below.0)
}

/// CMC by sorting each probe's candidate list (stable, so equal scores keep
/// index order) and locating the true class.
pub fn brute_cmc(scores: &[Vec<f64>], truth: &[usize], max_rank: usize) -> Vec<f64> {
    let ranks: Vec<usize> = scores
        .iter()
        .zip(truth)
        .map(|(row, &t)| {
            let mut order: Vec<usize> = (0..row.len()).collect();
            order.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
            1 + order.iter().position(|&c| c == t).unwrap()
        })
        .collect();
    (1..=max_rank)
        .map(|k| ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64)
        .collect()
}

/// Spearman rho as the Pearson correlation of ranks, each rank computed by
/// counting smaller and equal values.
pub fn brute_spearman(x: &[f64], y: &[f64]) -> f64 {
    let rank = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|&a| {
                let less = v.iter().filter(|&&b| b < a).count() as f64;
                let equal = v.iter().filter(|&&b| b == a).count() as f64;
                less + (equal + 1.0) / 2.0
            })
            .collect()
    };
    let (rx, ry) = (rank(x), rank(y));
    let n = x.len() as f64;
    let mean = |r: &[f64]| r.iter().sum::<f64>() / n;
    let (mx, my) = (mean(&rx), mean(&ry));
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// Random verification scores; coarse rounding produces ties.
pub fn random_scores<R: Rng>(rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let ng = rng.gen_range(1..=100);
    let ni = rng.gen_range(1..=100);
    let levels = [4.0, 20.0, 1e6][rng.gen_range(0..3)];
    let draw = |rng: &mut R, shift: f64| ((rng.gen::<f64>() + shift) * levels).round() / levels;
    let shift = rng.gen_range(0.0..0.6);
    let g = (0..ng).map(|_| draw(rng, shift)).collect();
    let i = (0..ni).map(|_| draw(rng, 0.0)).collect();
    (g, i)
}

/// Random identification scores and true classes.
pub fn random_identification<R: Rng>(rng: &mut R) -> (Vec<Vec<f64>>, Vec<usize>) {
    let classes = rng.gen_range(1..=12);
    let probes = rng.gen_range(1..=200 / classes);
    let levels = [3.0, 50.0][rng.gen_range(0..2)];
    let scores = (0..probes)
        .map(|_| (0..classes).map(|_| (rng.gen::<f64>() * levels).round() / levels).collect())
        .collect();
    let truth = (0..probes).map(|_| rng.gen_range(0..classes)).collect();
    (scores, truth)
}

/// Energy `Σ_{i≠l} 1/||u_i − u_l||²` of unit vectors at the given angles.
pub fn planar_energy(angles: &[f64]) -> f64 {
    let mut e = 0.0;
    for (i, a) in angles.iter().enumerate() {
        for (l, b) in angles.iter().enumerate() {
            if i != l {
                let d2 = (a.cos() - b.cos()).powi(2) + (a.sin() - b.sin()).powi(2);
                e += 1.0 / d2;
            }
        }
    }
    e
}

/// Minimum of the three-vector planar energy over a grid with the first
/// vector pinned at angle 0. Returns the sorted angles of the minimizer.
pub fn grid_three_vectors(step_deg: f64) -> [f64; 3] {
    let n = (360.0 / step_deg).round() as usize;
    let mut best = (f64::INFINITY, [0.0; 3]);
    for i in 1..n {
        for j in (i + 1)..n {
            let a = [0.0, (i as f64 * step_deg).to_radians(), (j as f64 * step_deg).to_radians()];
            let e = planar_energy(&a);
            if e < best.0 {
                best = (e, a);
            }
        }
    }
    best.1
}

/// Gradient descent on the library's full-space energy of three rows in 2D,
/// renormalizing rows after each step. Returns the rows' angles.
pub fn mhe_descent(start: [f64; 3], steps: usize, lr: f64) -> [f64; 3] {
    let mut store = ParamStore::new();
    let data: Vec<f64> = start.iter().flat_map(|a| [a.cos(), a.sin()]).collect();
    let id = store.add("w", ParamKind::UnitRows, Array::matrix(3, 2, data).unwrap());
    for _ in 0..steps {
        let mut g = Graph::new();
        let w = g.param(&store, id).unwrap();
        let e = hyperspherical_energy(&mut g, w, None, false).unwrap();
        g.backward(e).unwrap();
        let grad = g.grad(w).unwrap().clone();
        let v = store.value_mut(id);
        for (x, d) in v.data_mut().iter_mut().zip(grad.data()) {
            *x -= lr * d;
        }
        store.renormalize_rows();
    }
    let v = store.value(id);
    let mut out = [0.0; 3];
    for (i, a) in out.iter_mut().enumerate() {
        let r = v.row(i);
        *a = r[1].atan2(r[0]);
    }
    out
}

/// Pairwise angular separations in degrees, sorted.
pub fn pairwise_degrees(angles: &[f64; 3]) -> [f64; 3] {
    let sep = |a: f64, b: f64| {
        let d = (a - b).rem_euclid(2.0 * PI);
        d.min(2.0 * PI - d).to_degrees()
    };
    let mut s = [sep(angles[0], angles[1]), sep(angles[1], angles[2]), sep(angles[0], angles[2])];
    s.sort_by(f64::total_cmp);
    s
}

/// Two-modality config for quick training runs.
pub const SMALL: &str = r#"
seed = 5

[generator]
num_classes = 12
train_classes = 8
identity_dim = 6
sets_per_class = 10
heldout_samples = 3

[[generator.modalities]]
dim = 8
base_noise = 0.1
min_samples = 1
max_samples = 3

[[generator.modalities]]
dim = 6
base_noise = 0.4
min_samples = 1
max_samples = 3

[model]
hidden = [16, 16]
quality_tap = 0
embed_dim = 8
fc_dropout = 0.0
quality_hidden = 4
quality_dim = 4
fnet_hidden = 8
projected_dim = 6

[trainer]
epochs = 20
batch_size = 8
margin_warmup = 20

[trainer.schedule]
lr0 = 0.01
lr_min = 1e-6
"#;

/// A model and dataset small enough to train in about a second.
pub fn small() -> Config {
    let c = Config::from_toml(SMALL).unwrap();
    c.validate().unwrap();
    c
}
