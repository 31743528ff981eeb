use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fusion::{MultimodalSampleSet, Sample};

/// Single-modality data: `classes[c][i]` holds the samples of set `i` of
/// class `c`.
#[derive(Clone, Debug, PartialEq)]
pub struct UnimodalPool {
    pub classes: Vec<Vec<Vec<Sample>>>,
}

impl UnimodalPool {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Classes `range` of this pool.
    pub fn slice(&self, range: std::ops::Range<usize>) -> UnimodalPool {
        UnimodalPool {
            classes: self.classes[range].to_vec(),
        }
    }
}

/// Virtual subjects built from independent unimodal pools.
///
/// Subject `s` takes class `s` of the first pool and, from every other pool,
/// a class chosen by a seeded random injection. Its set `i` joins set `i` of
/// each assigned class, so a subject has as many sets as the smallest of its
/// classes. Different seeds give different assignments.
pub fn chimeric_pair(pools: &[UnimodalPool], n_subjects: usize, seed: u64) -> Result<Vec<MultimodalSampleSet>> {
    if pools.is_empty() {
        return Err(Error::InvalidInput("chimeric pairing needs at least one pool".into()));
    }
    for (k, p) in pools.iter().enumerate() {
        if p.num_classes() < n_subjects {
            return Err(Error::InvalidInput(format!(
                "pool {k} has {} classes, fewer than {n_subjects} subjects",
                p.num_classes()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let assignment: Vec<Vec<usize>> = pools
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let mut idx: Vec<usize> = (0..p.num_classes()).collect();
            if k > 0 {
                idx.shuffle(&mut rng);
            }
            idx.truncate(n_subjects);
            idx
        })
        .collect();

    let mut sets = Vec::new();
    for s in 0..n_subjects {
        let classes: Vec<&Vec<Vec<Sample>>> = pools.iter().zip(&assignment).map(|(p, a)| &p.classes[a[s]]).collect();
        let n_sets = classes.iter().map(|c| c.len()).min().unwrap_or(0);
        for i in 0..n_sets {
            sets.push(MultimodalSampleSet {
                label: s as u32,
                modalities: classes.iter().map(|c| c[i].clone()).collect(),
            });
        }
    }
    Ok(sets)
}

/// The pool classes used by each subject, as `assignment[k][s]`.
#[cfg(test)]
pub(crate) fn assignment_of(sets: &[MultimodalSampleSet], pools: &[UnimodalPool]) -> Vec<Vec<Option<usize>>> {
    let n = sets.iter().map(|s| s.label as usize + 1).max().unwrap_or(0);
    let mut out = vec![vec![None; n]; pools.len()];
    for set in sets {
        for (k, samples) in set.modalities.iter().enumerate() {
            if out[k][set.label as usize].is_some() {
                continue;
            }
            out[k][set.label as usize] = pools[k]
                .classes
                .iter()
                .position(|c| c.iter().any(|g| g == samples));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool(classes: usize, tag: f64) -> UnimodalPool {
        UnimodalPool {
            classes: (0..classes)
                .map(|c| {
                    (0..2)
                        .map(|i| {
                            vec![Sample {
                                values: vec![tag, c as f64, i as f64],
                                gamma: 0.0,
                            }]
                        })
                        .collect()
                })
                .collect(),
        }
    }

    #[test]
    fn single_pool_is_identity() {
        let p = [pool(4, 0.0)];
        let sets = chimeric_pair(&p, 4, 9).unwrap();
        for s in &sets {
            assert_eq!(s.modalities[0][0].values[1], s.label as f64);
        }
    }

    #[test]
    fn injective_per_pool() {
        let pools = [pool(5, 0.0), pool(7, 1.0), pool(6, 2.0)];
        let sets = chimeric_pair(&pools, 5, 3).unwrap();
        let a = assignment_of(&sets, &pools);
        for per_pool in &a {
            let mut used: Vec<usize> = per_pool.iter().map(|c| c.unwrap()).collect();
            used.sort();
            used.dedup();
            assert_eq!(used.len(), 5);
        }
    }

    #[test]
    fn seeds_change_the_assignment() {
        let pools = [pool(8, 0.0), pool(8, 1.0)];
        let a: Vec<_> = (0..5)
            .map(|seed| assignment_of(&chimeric_pair(&pools, 8, seed).unwrap(), &pools))
            .collect();
        for i in 0..5 {
            for j in i + 1..5 {
                assert_ne!(a[i], a[j]);
            }
        }
    }

    #[test]
    fn small_pool_is_an_error() {
        let pools = [pool(5, 0.0), pool(3, 1.0)];
        let e = chimeric_pair(&pools, 4, 0).unwrap_err();
        assert!(e.to_string().contains("pool 1"));
    }
}
