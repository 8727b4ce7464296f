//! Synthetic labelled corpora with controllable code reuse.
//!
//! Every class owns a pool of class-specific base functions. A shared pool
//! of base functions is reused across all classes. A program of class `c`
//! contains every function of `c`'s pool plus `round(reuse * F)` functions
//! drawn from the shared pool, and each function instance is its base
//! embedding plus isotropic Gaussian noise of expected norm `noise`.
//!
//! Class-specific functions draw LoC and NoS from larger ranges than shared
//! ones, modelling library code as small and feature code as large.
//! Function `class_label`s identify the base function, so they give the
//! ground truth for function matching.

use std::collections::HashMap;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, FunctionRecord, ProgramRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub classes: usize,
    pub programs_per_class: usize,
    pub functions_per_program: usize,
    pub d: usize,
    /// Fraction of each program's functions taken from the shared pool.
    pub reuse: f64,
    /// Expected norm of the perturbation added to each unit base embedding.
    pub noise: f64,
    /// Size of the shared pool; defaults to exactly the per-program shared
    /// count, so every program reuses the same shared functions.
    pub shared_pool_size: Option<usize>,
    /// Inclusive LoC range of class-specific functions.
    pub feature_loc: (u64, u64),
    pub feature_nos: (u64, u64),
    /// Inclusive LoC range of shared-pool functions.
    pub shared_loc: (u64, u64),
    pub shared_nos: (u64, u64),
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            classes: 20,
            programs_per_class: 10,
            functions_per_program: 50,
            d: 64,
            reuse: 0.0,
            noise: 0.2,
            shared_pool_size: None,
            feature_loc: (20, 400),
            feature_nos: (0, 20),
            shared_loc: (5, 60),
            shared_nos: (0, 3),
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn shared_per_program(&self) -> usize {
        (self.reuse * self.functions_per_program as f64).round() as usize
    }

    pub fn unique_per_program(&self) -> usize {
        self.functions_per_program - self.shared_per_program()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if self.classes == 0 || self.programs_per_class == 0 || self.functions_per_program == 0 {
            return bad(
                "classes, programs_per_class and functions_per_program must be positive".into(),
            );
        }
        if self.d == 0 {
            return bad("d must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.reuse) {
            return bad(format!("reuse {} is outside [0, 1]", self.reuse));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return bad(format!("noise {} must be non-negative", self.noise));
        }
        if let Some(pool) = self.shared_pool_size {
            if pool < self.shared_per_program() {
                return bad(format!(
                    "shared_pool_size {pool} is smaller than the {} shared functions per program",
                    self.shared_per_program()
                ));
            }
        }
        for (name, (lo, hi)) in [
            ("feature_loc", self.feature_loc),
            ("feature_nos", self.feature_nos),
            ("shared_loc", self.shared_loc),
            ("shared_nos", self.shared_nos),
        ] {
            if lo > hi {
                return bad(format!("{name} range ({lo}, {hi}) is empty"));
            }
        }
        Ok(())
    }
}

struct BaseFunction {
    id: u64,
    direction: Vec<f64>,
    loc: u64,
    nos: u64,
}

fn unit_gaussian(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut *rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Generates a labelled corpus. Program ids are `c{class}_p{index}` and
/// class ids `c{class}`, both zero-padded.
pub fn generate(spec: &SynthSpec) -> Result<Corpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.d;
    let mut next_id = 0u64;
    let mut base = |rng: &mut ChaCha8Rng, loc: (u64, u64), nos: (u64, u64)| {
        let f = BaseFunction {
            id: next_id,
            direction: unit_gaussian(rng, d),
            loc: rng.random_range(loc.0..=loc.1),
            nos: rng.random_range(nos.0..=nos.1),
        };
        next_id += 1;
        f
    };

    let n_shared = spec.shared_per_program();
    let pool_size = spec.shared_pool_size.unwrap_or(n_shared);
    let shared: Vec<BaseFunction> = (0..pool_size)
        .map(|_| base(&mut rng, spec.shared_loc, spec.shared_nos))
        .collect();
    let class_pools: Vec<Vec<BaseFunction>> = (0..spec.classes)
        .map(|_| {
            (0..spec.unique_per_program())
                .map(|_| base(&mut rng, spec.feature_loc, spec.feature_nos))
                .collect()
        })
        .collect();

    let sigma = spec.noise / (d as f64).sqrt();
    let cw = digits(spec.classes);
    let pw = digits(spec.programs_per_class);
    let mut programs = Vec::with_capacity(spec.classes * spec.programs_per_class);
    for (c, pool) in class_pools.iter().enumerate() {
        let class_id = format!("c{c:0cw$}");
        for p in 0..spec.programs_per_class {
            let mut members: Vec<&BaseFunction> = pool.iter().collect();
            if n_shared == pool_size {
                members.extend(shared.iter());
            } else {
                members.extend(
                    index::sample(&mut rng, pool_size, n_shared)
                        .into_iter()
                        .map(|i| &shared[i]),
                );
            }
            members.shuffle(&mut rng);
            let functions = members
                .into_iter()
                .enumerate()
                .map(|(i, b)| {
                    let embedding = b
                        .direction
                        .iter()
                        .map(|&x| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            (x + sigma * z) as f32
                        })
                        .collect();
                    FunctionRecord::new(format!("f{i}"), embedding, b.loc, b.nos)
                        .with_class_label(b.id)
                })
                .collect();
            programs.push(
                ProgramRecord::new(format!("{class_id}_p{p:0pw$}"), functions)
                    .with_class_id(class_id.clone()),
            );
        }
    }
    Corpus::new(d, programs)
}

fn digits(n: usize) -> usize {
    n.saturating_sub(1).max(1).to_string().len()
}

/// Splits a corpus into (repository, queries): the first `per_class`
/// programs of every class become queries.
pub fn split_queries(corpus: &Corpus, per_class: usize) -> Result<(Corpus, Corpus)> {
    let mut taken: HashMap<&str, usize> = HashMap::new();
    let mut repo = Vec::new();
    let mut queries = Vec::new();
    for p in corpus.programs() {
        let class = p.class_id.as_deref().unwrap_or("");
        let seen = taken.entry(class).or_insert(0);
        if *seen < per_class {
            queries.push(p.clone());
        } else {
            repo.push(p.clone());
        }
        *seen += 1;
    }
    Ok((
        Corpus::new(corpus.d(), repo)?,
        Corpus::new(corpus.d(), queries)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn small(reuse: f64, noise: f64) -> SynthSpec {
        SynthSpec {
            classes: 6,
            programs_per_class: 4,
            functions_per_program: 30,
            d: 16,
            reuse,
            noise,
            ..SynthSpec::default()
        }
    }

    fn label_multiset(p: &ProgramRecord) -> Vec<u64> {
        let mut v: Vec<u64> = p.functions.iter().map(|f| f.class_label.unwrap()).collect();
        v.sort_unstable();
        v
    }

    #[test]
    fn noiseless_same_class_programs_share_functions() {
        let c = generate(&small(0.0, 0.0)).unwrap();
        for chunk in c.programs().chunks(4) {
            let first = label_multiset(&chunk[0]);
            for p in chunk {
                assert_eq!(label_multiset(p), first);
                assert_eq!(p.class_id, chunk[0].class_id);
            }
        }
        // identical embeddings for the same base function
        let a = &c.programs()[0];
        let b = &c.programs()[1];
        let by_label: HashMap<u64, &Vec<f32>> = b
            .functions
            .iter()
            .map(|f| (f.class_label.unwrap(), &f.embedding))
            .collect();
        for f in &a.functions {
            assert_eq!(&f.embedding, by_label[&f.class_label.unwrap()]);
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        assert_eq!(
            generate(&small(0.5, 0.3)).unwrap(),
            generate(&small(0.5, 0.3)).unwrap()
        );
        let mut other = small(0.5, 0.3);
        other.seed = 1;
        assert_ne!(
            generate(&small(0.5, 0.3)).unwrap(),
            generate(&other).unwrap()
        );
    }

    #[test]
    fn heavy_reuse_makes_class_pools_overlap() {
        let c = generate(&small(0.9, 0.1)).unwrap();
        let mut pools: HashMap<&str, HashSet<u64>> = HashMap::new();
        for p in c.programs() {
            pools
                .entry(p.class_id.as_deref().unwrap())
                .or_default()
                .extend(p.functions.iter().map(|f| f.class_label.unwrap()));
        }
        let pools: Vec<&HashSet<u64>> = pools.values().collect();
        let mut total = 0.0;
        let mut pairs = 0;
        for i in 0..pools.len() {
            for j in i + 1..pools.len() {
                let inter = pools[i].intersection(pools[j]).count() as f64;
                let union = pools[i].union(pools[j]).count() as f64;
                total += inter / union;
                pairs += 1;
            }
        }
        assert!(total / pairs as f64 >= 0.7, "{}", total / pairs as f64);
    }

    #[test]
    fn split_takes_first_programs_per_class() {
        let c = generate(&small(0.0, 0.1)).unwrap();
        let (repo, queries) = split_queries(&c, 1).unwrap();
        assert_eq!(queries.len(), 6);
        assert_eq!(repo.len(), 18);
        assert!(queries
            .programs()
            .iter()
            .all(|p| p.program_id.ends_with("_p0")));
    }

    #[test]
    fn invalid_generator_parameters_rejected() {
        let mut s = small(1.5, 0.1);
        assert!(generate(&s).is_err());
        s.reuse = 0.5;
        s.shared_pool_size = Some(3);
        assert!(matches!(generate(&s), Err(Error::Config(_))));
    }
}
