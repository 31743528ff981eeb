mod common;

use common::*;
use qfusion::eval::{cmc, roc_metrics, spearman, Scores, FAR_LEVELS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn roc_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..50 {
        let (genuine, impostor) = random_scores(&mut rng);
        let m = roc_metrics(&Scores {
            genuine: genuine.clone(),
            impostor: impostor.clone(),
        })
        .unwrap();
        let pts = brute_roc(&genuine, &impostor);
        let got: Vec<(f64, f64)> = m.roc.iter().map(|p| (p.far, p.tar)).collect();
        assert_eq!(got, pts, "case {case}");
        assert!((m.auc - brute_auc(&genuine, &impostor)).abs() < 1e-12, "case {case}");
        assert!((m.eer - brute_eer(&pts)).abs() < 1e-12, "case {case}");
        for far in FAR_LEVELS.iter().chain(&[0.25, 0.5]) {
            assert!((m.tar_at(*far) - brute_tar_at(&pts, *far)).abs() < 1e-12, "case {case} far {far}");
        }
    }
}

#[test]
fn cmc_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for case in 0..50 {
        let (scores, truth) = random_identification(&mut rng);
        let max_rank = scores[0].len();
        assert_eq!(cmc(&scores, &truth, max_rank).unwrap(), brute_cmc(&scores, &truth, max_rank), "case {case}");
        assert_eq!(*cmc(&scores, &truth, max_rank).unwrap().last().unwrap(), 1.0);
    }
}

#[test]
fn spearman_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..50 {
        let n = rng.gen_range(3..=10);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0..5) as f64).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        match spearman(&x, &y) {
            Ok(r) => assert!((r - brute_spearman(&x, &y)).abs() < 1e-12),
            Err(_) => assert!(x.iter().all(|&v| v == x[0])),
        }
    }
    let x = [1.0, 2.0, 3.0, 4.0];
    assert!((spearman(&x, &[2.0, 4.0, 8.0, 16.0]).unwrap() - 1.0).abs() < 1e-12);
    assert!((spearman(&x, &[4.0, 3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
}

#[test]
fn metrics_ignore_monotone_transforms() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..20 {
        let (genuine, impostor) = random_scores(&mut rng);
        let f = |v: &Vec<f64>| v.iter().map(|x| (3.0 * x).exp() + 7.0).collect::<Vec<_>>();
        let a = roc_metrics(&Scores {
            genuine: genuine.clone(),
            impostor: impostor.clone(),
        })
        .unwrap();
        let b = roc_metrics(&Scores {
            genuine: f(&genuine),
            impostor: f(&impostor),
        })
        .unwrap();
        assert_eq!(a.auc, b.auc);
        assert_eq!(a.eer, b.eer);

        let (scores, truth) = random_identification(&mut rng);
        let t: Vec<Vec<f64>> = scores.iter().map(|r| r.iter().map(|x| x.powi(3) - 2.0).collect()).collect();
        let k = scores[0].len();
        assert_eq!(cmc(&scores, &truth, k).unwrap(), cmc(&t, &truth, k).unwrap());
    }
}
