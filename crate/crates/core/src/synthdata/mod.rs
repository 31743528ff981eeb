//! Synthetic multimodal identities with per-sample corruption levels.
//!
//! Each class owns a latent identity `z ~ N(0, I)`. Modality `k` observes it
//! through a fixed map `x = tanh(a · A_k z)` where `A_k` has orthonormal
//! columns (or rows, when the observation is narrower than the latent) and
//! `a` rescales pre-activations to unit variance. A sample adds Gaussian
//! noise of scale `b_k + γ σ_max`; `γ` is stored with the sample as its
//! ground-truth corruption.

mod format;
mod pairing;
mod split;

pub use format::{read_dataset, write_dataset, DATASET_MAGIC, DATASET_VERSION};
pub use pairing::{chimeric_pair, UnimodalPool};
pub use split::{identification_split, split, verification_pairs, IdentificationSplit, Pair, Protocol, Split};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{MultimodalSampleSet, Sample};

/// Upper bound on sample sets per class.
pub const MAX_SETS_PER_CLASS: usize = 25;

/// Distribution of the corruption level `γ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum GammaDist {
    Uniform,
    Beta { a: f64, b: f64 },
    Fixed { value: f64 },
}

impl GammaDist {
    fn validate(&self) -> Result<()> {
        match *self {
            GammaDist::Uniform => Ok(()),
            GammaDist::Beta { a, b } if a > 0.0 && b > 0.0 => Ok(()),
            GammaDist::Fixed { value } if (0.0..=1.0).contains(&value) => Ok(()),
            _ => Err(Error::Config(format!("invalid gamma distribution {self:?}"))),
        }
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            GammaDist::Uniform => rng.gen::<f64>(),
            GammaDist::Beta { a, b } => Beta::new(a, b).expect("validated").sample(rng),
            GammaDist::Fixed { value } => value,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModalitySpec {
    /// Observation dimension.
    pub dim: usize,
    /// Noise scale every sample of this modality carries.
    pub base_noise: f64,
    /// Samples per set for training classes, drawn uniformly from
    /// `min_samples..=max_samples`.
    pub min_samples: usize,
    pub max_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub seed: u64,
    /// Total identities. Labels `0..train_classes` are for training, the
    /// rest are held out for evaluation.
    pub num_classes: usize,
    pub train_classes: usize,
    pub identity_dim: usize,
    pub sets_per_class: usize,
    /// Samples per modality in every held-out set, fixed so that
    /// sample-count studies can truncate.
    pub heldout_samples: usize,
    /// Noise scale added at `γ = 1`.
    pub sigma_max: f64,
    pub gamma: GammaDist,
    /// Draw an independent identity per modality and join modalities into
    /// virtual subjects by a random pairing.
    pub chimeric: bool,
    pub modalities: Vec<ModalitySpec>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        let modality = |base_noise| ModalitySpec {
            dim: 32,
            base_noise,
            min_samples: 1,
            max_samples: 4,
        };
        GeneratorConfig {
            seed: 0,
            num_classes: 100,
            train_classes: 60,
            identity_dim: 16,
            sets_per_class: 12,
            heldout_samples: 4,
            sigma_max: 2.0,
            gamma: GammaDist::Uniform,
            chimeric: false,
            modalities: vec![modality(0.1), modality(0.3), modality(0.5)],
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.num_classes == 0 || self.identity_dim == 0 || self.sets_per_class == 0 {
            return fail("num_classes, identity_dim and sets_per_class must be positive");
        }
        if self.train_classes > self.num_classes {
            return fail("train_classes exceeds num_classes");
        }
        if self.sets_per_class > MAX_SETS_PER_CLASS {
            return fail("sets_per_class is capped at 25");
        }
        if self.heldout_samples == 0 {
            return fail("heldout_samples must be positive");
        }
        if self.modalities.is_empty() || self.modalities.len() > u8::MAX as usize {
            return fail("need between 1 and 255 modalities");
        }
        if !(self.sigma_max >= 0.0 && self.sigma_max.is_finite()) {
            return fail("sigma_max must be a finite non-negative number");
        }
        for (k, m) in self.modalities.iter().enumerate() {
            if m.dim == 0 || m.min_samples == 0 || m.min_samples > m.max_samples {
                return Err(Error::Config(format!(
                    "modality {k}: need dim > 0 and 1 <= min_samples <= max_samples"
                )));
            }
            if m.max_samples.max(self.heldout_samples) > u16::MAX as usize {
                return Err(Error::Config(format!("modality {k}: too many samples per set")));
            }
            if !(m.base_noise >= 0.0 && m.base_noise.is_finite()) {
                return Err(Error::Config(format!("modality {k}: base_noise must be non-negative")));
            }
        }
        self.gamma.validate()
    }

    pub fn input_dims(&self) -> Vec<usize> {
        self.modalities.iter().map(|m| m.dim).collect()
    }

    pub fn heldout_classes(&self) -> usize {
        self.num_classes - self.train_classes
    }
}

/// Generated sets plus the configuration that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: GeneratorConfig,
    /// Ordered by class, then by set.
    pub sets: Vec<MultimodalSampleSet>,
}

impl Dataset {
    pub fn is_train(&self, set: &MultimodalSampleSet) -> bool {
        (set.label as usize) < self.config.train_classes
    }

    pub fn train_sets(&self) -> Vec<MultimodalSampleSet> {
        self.sets.iter().filter(|s| self.is_train(s)).cloned().collect()
    }

    /// Held-out sets, relabelled to `0..heldout_classes`.
    pub fn heldout_sets(&self) -> Vec<MultimodalSampleSet> {
        let offset = self.config.train_classes as u32;
        self.sets
            .iter()
            .filter(|s| !self.is_train(s))
            .map(|s| MultimodalSampleSet {
                label: s.label - offset,
                modalities: s.modalities.clone(),
            })
            .collect()
    }

    pub fn num_samples(&self) -> usize {
        self.sets.iter().map(|s| s.num_samples()).sum()
    }
}

/// Keep the first `p` samples of every modality; sets with fewer samples
/// are an error.
pub fn truncate_samples(sets: &[MultimodalSampleSet], p: usize) -> Result<Vec<MultimodalSampleSet>> {
    if p == 0 {
        return Err(Error::InvalidInput("cannot truncate to zero samples".into()));
    }
    sets.iter()
        .map(|s| {
            let modalities = s
                .modalities
                .iter()
                .enumerate()
                .map(|(k, m)| {
                    if m.len() < p {
                        Err(Error::InvalidInput(format!(
                            "class {} modality {k} has {} samples, fewer than {p}",
                            s.label,
                            m.len()
                        )))
                    } else {
                        Ok(m[..p].to_vec())
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(MultimodalSampleSet {
                label: s.label,
                modalities,
            })
        })
        .collect()
}

/// The fixed observation maps plus per-class random streams.
#[derive(Clone, Debug)]
pub struct Generator {
    config: GeneratorConfig,
    /// `dim × identity_dim`, row-major, gain folded in.
    maps: Vec<Vec<f64>>,
}

impl Generator {
    pub fn new(config: GeneratorConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.identity_dim;
        let maps = config
            .modalities
            .iter()
            .map(|m| {
                let mut a = orthonormal_map(&mut rng, m.dim, d);
                // each pre-activation a_i · z has variance ||a_i||²; scale to 1
                let gain = (m.dim as f64 / d as f64).max(1.0).sqrt();
                a.iter_mut().for_each(|v| *v *= gain);
                a
            })
            .collect();
        Ok(Generator { config, maps })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    /// Independent stream for `(class, modality slot)`; slot 0 is shared by
    /// every modality of a non-chimeric class.
    fn stream(&self, class: usize, slot: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(((slot as u64) << 32) | (class as u64 + 1));
        rng
    }

    /// Latent identity drawn from a class stream.
    fn latent(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..self.config.identity_dim).map(|_| rng.sample(StandardNormal)).collect()
    }

    /// Noise-free observation of modality `k` for latent `z`.
    pub fn clean(&self, k: usize, z: &[f64]) -> Vec<f64> {
        let d = self.config.identity_dim;
        self.maps[k]
            .chunks(d)
            .map(|row| row.iter().zip(z).map(|(a, b)| a * b).sum::<f64>().tanh())
            .collect()
    }

    /// Latent identity of a class (in chimeric mode, of modality `k`'s pool
    /// class).
    pub fn class_latent(&self, class: usize, k: usize) -> Vec<f64> {
        let slot = if self.config.chimeric { k + 1 } else { 0 };
        self.latent(&mut self.stream(class, slot))
    }

    fn sample<R: Rng>(&self, rng: &mut R, k: usize, clean: &[f64]) -> Sample {
        let gamma = self.config.gamma.draw(rng);
        let scale = self.config.modalities[k].base_noise + gamma * self.config.sigma_max;
        let values = clean
            .iter()
            .map(|&c| {
                let n: f64 = rng.sample(StandardNormal);
                c + scale * n
            })
            .collect();
        Sample { values, gamma }
    }

    fn samples_per_set<R: Rng>(&self, rng: &mut R, class: usize, k: usize) -> usize {
        if class < self.config.train_classes {
            let m = &self.config.modalities[k];
            rng.gen_range(m.min_samples..=m.max_samples)
        } else {
            self.config.heldout_samples
        }
    }

    /// All sets of one class as seen by modality `k` alone, drawn from the
    /// `(class, slot)` stream.
    fn unimodal_class(&self, class: usize, k: usize) -> Vec<Vec<Sample>> {
        let mut rng = self.stream(class, k + 1);
        let z = self.latent(&mut rng);
        let clean = self.clean(k, &z);
        (0..self.config.sets_per_class)
            .map(|_| {
                let p = self.samples_per_set(&mut rng, class, k);
                (0..p).map(|_| self.sample(&mut rng, k, &clean)).collect()
            })
            .collect()
    }

    fn joint_class(&self, class: usize) -> Vec<MultimodalSampleSet> {
        let mut rng = self.stream(class, 0);
        let z = self.latent(&mut rng);
        let clean: Vec<Vec<f64>> = (0..self.maps.len()).map(|k| self.clean(k, &z)).collect();
        (0..self.config.sets_per_class)
            .map(|_| MultimodalSampleSet {
                label: class as u32,
                modalities: clean
                    .iter()
                    .enumerate()
                    .map(|(k, c)| {
                        let p = self.samples_per_set(&mut rng, class, k);
                        (0..p).map(|_| self.sample(&mut rng, k, c)).collect()
                    })
                    .collect(),
            })
            .collect()
    }

    /// One pool per modality with independent identities.
    pub fn pools(&self) -> Vec<UnimodalPool> {
        (0..self.maps.len())
            .map(|k| UnimodalPool {
                classes: (0..self.config.num_classes).map(|c| self.unimodal_class(c, k)).collect(),
            })
            .collect()
    }

    pub fn generate(&self) -> Result<Dataset> {
        let sets = if self.config.chimeric {
            // pair training and held-out identities separately so held-out
            // subjects keep their fixed sample counts
            let pools = self.pools();
            let (n, t) = (self.config.num_classes, self.config.train_classes);
            let part = |range: std::ops::Range<usize>| pools.iter().map(|p| p.slice(range.clone())).collect::<Vec<_>>();
            let mut sets = chimeric_pair(&part(0..t), t, self.config.seed)?;
            let held = chimeric_pair(&part(t..n), n - t, self.config.seed.wrapping_add(1))?;
            sets.extend(held.into_iter().map(|mut s| {
                s.label += t as u32;
                s
            }));
            sets
        } else {
            (0..self.config.num_classes).flat_map(|c| self.joint_class(c)).collect()
        };
        Ok(Dataset {
            config: self.config.clone(),
            sets,
        })
    }
}

/// Generate a dataset; deterministic in the configuration (seed included).
pub fn generate(config: &GeneratorConfig) -> Result<Dataset> {
    Generator::new(config.clone())?.generate()
}

/// `rows × cols` matrix, row-major, with orthonormal columns when
/// `rows >= cols` and orthonormal rows otherwise.
fn orthonormal_map<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Vec<f64> {
    let tall = rows >= cols;
    let (n, len) = if tall { (cols, rows) } else { (rows, cols) };
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    while basis.len() < n {
        let mut v: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
        // modified Gram-Schmidt, twice for stability
        for _ in 0..2 {
            for b in &basis {
                let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    let mut m = vec![0.0; rows * cols];
    for (i, b) in basis.iter().enumerate() {
        for (j, &x) in b.iter().enumerate() {
            if tall {
                m[j * cols + i] = x;
            } else {
                m[i * cols + j] = x;
            }
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GeneratorConfig {
        GeneratorConfig {
            num_classes: 6,
            train_classes: 4,
            sets_per_class: 3,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn maps_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (r, c) in [(8, 3), (3, 8), (5, 5)] {
            let m = orthonormal_map(&mut rng, r, c);
            let (n, len, at): (usize, usize, Box<dyn Fn(usize, usize) -> f64>) = if r >= c {
                (c, r, Box::new(|i, j| m[j * c + i]))
            } else {
                (r, c, Box::new(|i, j| m[i * c + j]))
            };
            for a in 0..n {
                for b in 0..n {
                    let d: f64 = (0..len).map(|j| at(a, j) * at(b, j)).sum();
                    let want = if a == b { 1.0 } else { 0.0 };
                    assert!((d - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn noiseless_samples_coincide() {
        let mut cfg = small();
        cfg.gamma = GammaDist::Fixed { value: 0.0 };
        for m in &mut cfg.modalities {
            m.base_noise = 0.0;
        }
        let ds = generate(&cfg).unwrap();
        let s = &ds.sets[0];
        let t = &ds.sets[1];
        assert_eq!(s.label, t.label);
        assert_eq!(s.modalities[0][0].values, t.modalities[0][0].values);
    }

    #[test]
    fn same_seed_same_data() {
        assert_eq!(generate(&small()).unwrap(), generate(&small()).unwrap());
        let mut other = small();
        other.seed = 1;
        assert_ne!(generate(&small()).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn heldout_sets_have_fixed_counts_and_relabel() {
        let ds = generate(&small()).unwrap();
        let held = ds.heldout_sets();
        assert_eq!(held.len(), 2 * 3);
        assert!(held.iter().all(|s| s.modalities.iter().all(|m| m.len() == 4)));
        assert_eq!(held[0].label, 0);
        assert!(ds.train_sets().iter().all(|s| s.label < 4));
    }

    #[test]
    fn rejects_more_than_cap() {
        let mut cfg = small();
        cfg.sets_per_class = 26;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn truncation_keeps_prefix() {
        let ds = generate(&small()).unwrap();
        let held = ds.heldout_sets();
        let one = truncate_samples(&held, 1).unwrap();
        assert_eq!(one[0].modalities[1][0], held[0].modalities[1][0]);
        assert!(one.iter().all(|s| s.num_samples() == 3));
        assert!(truncate_samples(&held, 5).is_err());
    }
}
