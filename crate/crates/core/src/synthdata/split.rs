use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::MultimodalSampleSet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Protocol {
    Identification { gallery_per_class: usize },
    Verification { pairs: usize, positive_fraction: f64 },
}

/// Indices into the set list.
#[derive(Clone, Debug, PartialEq)]
pub struct IdentificationSplit {
    pub gallery: Vec<usize>,
    pub probes: Vec<usize>,
}

/// Two set indices and whether they share a class.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pair {
    pub a: usize,
    pub b: usize,
    pub genuine: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Split {
    Identification(IdentificationSplit),
    Verification(Vec<Pair>),
}

pub fn split(sets: &[MultimodalSampleSet], protocol: &Protocol, seed: u64) -> Result<Split> {
    match *protocol {
        Protocol::Identification { gallery_per_class } => {
            identification_split(sets, gallery_per_class, seed).map(Split::Identification)
        }
        Protocol::Verification {
            pairs,
            positive_fraction,
        } => verification_pairs(sets, pairs, positive_fraction, seed).map(Split::Verification),
    }
}

fn by_class(sets: &[MultimodalSampleSet]) -> BTreeMap<u32, Vec<usize>> {
    let mut m: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, s) in sets.iter().enumerate() {
        m.entry(s.label).or_default().push(i);
    }
    m
}

/// `g` random gallery sets per class; every other set is a probe.
pub fn identification_split(sets: &[MultimodalSampleSet], g: usize, seed: u64) -> Result<IdentificationSplit> {
    if g == 0 {
        return Err(Error::InvalidInput("gallery needs at least one set per class".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gallery = Vec::new();
    let mut probes = Vec::new();
    for (class, mut idx) in by_class(sets) {
        if idx.len() <= g {
            return Err(Error::InvalidInput(format!(
                "class {class} has {} sets; need more than {g} for gallery plus probes",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        gallery.extend_from_slice(&idx[..g]);
        probes.extend_from_slice(&idx[g..]);
    }
    gallery.sort_unstable();
    probes.sort_unstable();
    Ok(IdentificationSplit { gallery, probes })
}

/// `n` random pairs, `round(n · positive_fraction)` of them genuine.
pub fn verification_pairs(
    sets: &[MultimodalSampleSet],
    n: usize,
    positive_fraction: f64,
    seed: u64,
) -> Result<Vec<Pair>> {
    if !(0.0..=1.0).contains(&positive_fraction) {
        return Err(Error::InvalidInput("positive_fraction must lie in [0, 1]".into()));
    }
    let classes: Vec<Vec<usize>> = by_class(sets).into_values().collect();
    let n_genuine = (n as f64 * positive_fraction).round() as usize;
    let n_impostor = n - n_genuine;
    let multi: Vec<&Vec<usize>> = classes.iter().filter(|c| c.len() >= 2).collect();
    if n_genuine > 0 && multi.is_empty() {
        return Err(Error::InvalidInput("genuine pairs need a class with two sets".into()));
    }
    if n_impostor > 0 && classes.len() < 2 {
        return Err(Error::InvalidInput("impostor pairs need two classes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(n);
    for _ in 0..n_genuine {
        let c = multi[rng.gen_range(0..multi.len())];
        let i = rng.gen_range(0..c.len());
        let mut j = rng.gen_range(0..c.len() - 1);
        if j >= i {
            j += 1;
        }
        pairs.push(Pair {
            a: c[i],
            b: c[j],
            genuine: true,
        });
    }
    for _ in 0..n_impostor {
        let ci = rng.gen_range(0..classes.len());
        let mut cj = rng.gen_range(0..classes.len() - 1);
        if cj >= ci {
            cj += 1;
        }
        let a = *classes[ci].choose(&mut rng).expect("classes are nonempty");
        let b = *classes[cj].choose(&mut rng).expect("classes are nonempty");
        pairs.push(Pair { a, b, genuine: false });
    }
    Ok(pairs)
}
