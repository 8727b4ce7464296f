//! Spherical k-means codebook training and 1-NN centroid classification.
//!
//! Inputs are L2-normalized before clustering, so cosine similarity is a
//! dot product and each centroid is the normalized mean of its members.
//! Seeding is k-means++ under the cosine distance `1 - cos`.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::binfmt::{read_float_records, write_f32s, write_header, write_id, KMEANS_MAGIC};
use crate::error::{Error, Result};
use crate::linalg::{dot, dot64, norm, normalized};

/// Centroids are stored unit-norm to within this tolerance.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

pub const DEFAULT_ITERATIONS: usize = 30;

/// A trained codebook of unit-norm centroids. Label `i` is centroid `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidModel {
    d: usize,
    centroids: Vec<f32>,
    norms: Vec<f64>,
}

impl CentroidModel {
    /// Builds a model from already-unit-norm centroids.
    pub fn new(centroids: Vec<Vec<f32>>) -> Result<Self> {
        let d = centroids.first().map(Vec::len).unwrap_or(0);
        if d == 0 {
            return Err(Error::validation(
                "a model needs at least one non-empty centroid",
            ));
        }
        let mut flat = Vec::with_capacity(centroids.len() * d);
        let mut norms = Vec::with_capacity(centroids.len());
        for (i, c) in centroids.iter().enumerate() {
            if c.len() != d {
                return Err(Error::validation(format!(
                    "centroid {i} has dimension {}, expected {d}",
                    c.len()
                )));
            }
            let n = norm(c);
            if !n.is_finite() || (n - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(Error::validation(format!(
                    "centroid {i} has norm {n}, expected 1"
                )));
            }
            flat.extend_from_slice(c);
            norms.push(n);
        }
        Ok(Self {
            d,
            centroids: flat,
            norms,
        })
    }

    /// Normalizes each direction and builds a model from the results.
    pub fn from_directions(directions: Vec<Vec<f32>>) -> Result<Self> {
        let mut unit = Vec::with_capacity(directions.len());
        for (i, c) in directions.iter().enumerate() {
            let n = normalized(c)
                .ok_or_else(|| Error::validation(format!("centroid {i} is all-zero")))?;
            unit.push(n.into_iter().map(|v| v as f32).collect());
        }
        Self::new(unit)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n_clusters(&self) -> usize {
        self.centroids.len() / self.d
    }

    pub fn centroid(&self, label: usize) -> &[f32] {
        &self.centroids[label * self.d..(label + 1) * self.d]
    }

    pub fn centroids(&self) -> impl Iterator<Item = &[f32]> {
        self.centroids.chunks_exact(self.d)
    }

    /// Label of the most cosine-similar centroid; ties go to the lowest index.
    /// The zero vector gets label 0 and `None` similarity.
    fn nearest(&self, x: &[f32]) -> (u32, Option<f64>) {
        if norm(x) == 0.0 {
            return (0, None);
        }
        let mut best = 0u32;
        let mut best_score = f64::NEG_INFINITY;
        for (i, (c, n)) in self.centroids().zip(&self.norms).enumerate() {
            // |x| is common to every candidate, so it is left out
            let s = dot(c, x) / n;
            if s > best_score {
                best_score = s;
                best = i as u32;
            }
        }
        (best, Some(best_score))
    }

    /// 1-NN classification of every embedding against the centroids.
    pub fn classify<E: AsRef<[f32]> + Sync>(&self, embeddings: &[E]) -> Result<LabelAssignment> {
        if let Some((i, e)) = embeddings
            .iter()
            .enumerate()
            .find(|(_, e)| e.as_ref().len() != self.d)
        {
            return Err(Error::validation(format!(
                "embedding {i} has dimension {}, model expects {}",
                e.as_ref().len(),
                self.d
            )));
        }
        let scored: Vec<(u32, Option<f64>)> = embeddings
            .par_iter()
            .map(|e| self.nearest(e.as_ref()))
            .collect();
        let zero_norm = scored
            .iter()
            .enumerate()
            .filter(|(_, (_, s))| s.is_none())
            .map(|(i, _)| i)
            .collect();
        Ok(LabelAssignment {
            labels: scored.into_iter().map(|(l, _)| l).collect(),
            zero_norm,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// `KHKM1` file bytes: one record per centroid, id = decimal label.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(17 + self.centroids.len() * 4 + self.n_clusters() * 8);
        // writes into a Vec cannot fail
        write_header(&mut buf, KMEANS_MAGIC, self.d as u32, self.n_clusters()).expect("vec write");
        for (i, c) in self.centroids().enumerate() {
            write_id(&mut buf, &i.to_string()).expect("vec write");
            write_f32s(&mut buf, c).expect("vec write");
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let records = read_float_records(bytes, KMEANS_MAGIC)?;
        if records.is_empty() {
            return Err(Error::format("model file has no centroids"));
        }
        let mut centroids = Vec::with_capacity(records.len());
        for (i, (id, values)) in records.into_iter().enumerate() {
            if id != i.to_string() {
                return Err(Error::format(format!("centroid record {i} has id {id:?}")));
            }
            centroids.push(values);
        }
        Self::new(centroids).map_err(|e| Error::format(e.to_string()))
    }
}

/// One label per classified function.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelAssignment {
    pub labels: Vec<u32>,
    /// Indices of zero-norm inputs, which were assigned label 0.
    pub zero_norm: Vec<usize>,
}

/// Output of [`train`].
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: CentroidModel,
    /// Spherical objective (sum of cosine similarity to the assigned
    /// centroid) measured at every assignment step, starting with the
    /// seeded centroids.
    pub objective_history: Vec<f64>,
    /// Lloyd iterations actually run; training stops early once assignments
    /// stop changing.
    pub iterations_run: usize,
    /// Training-set labels from the final assignment.
    pub labels: Vec<u32>,
}

impl TrainedModel {
    pub fn final_objective(&self) -> f64 {
        *self
            .objective_history
            .last()
            .expect("history is never empty")
    }
}

struct Points {
    d: usize,
    data: Vec<f64>,
}

impl Points {
    fn len(&self) -> usize {
        self.data.len() / self.d
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }
}

/// Trains a spherical k-means codebook. Deterministic in `seed`.
pub fn train<E: AsRef<[f32]>>(
    embeddings: &[E],
    n_clusters: usize,
    iterations: usize,
    seed: u64,
) -> Result<TrainedModel> {
    let points = normalize_inputs(embeddings)?;
    if n_clusters == 0 {
        return Err(Error::config("n_clusters must be at least 1"));
    }
    let distinct = count_distinct(&points);
    if n_clusters > distinct {
        return Err(Error::config(format!(
            "n_clusters={n_clusters} exceeds the {distinct} distinct input directions"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_plus_plus(&points, n_clusters, &mut rng);

    let (mut labels, mut sims) = assign(&points, &centroids, n_clusters);
    let mut history = vec![sims.iter().sum::<f64>()];
    let mut iterations_run = 0;

    for _ in 0..iterations {
        let repaired =
            update_centroids(&points, &mut centroids, n_clusters, &mut labels, &mut sims);
        let (new_labels, new_sims) = assign(&points, &centroids, n_clusters);
        iterations_run += 1;
        history.push(new_sims.iter().sum());
        let converged = !repaired && new_labels == labels;
        labels = new_labels;
        sims = new_sims;
        if converged {
            break;
        }
    }

    let unit: Vec<Vec<f32>> = centroids
        .chunks_exact(points.d)
        .map(|c| {
            let n = dot64(c, c).sqrt();
            c.iter().map(|&v| (v / n) as f32).collect()
        })
        .collect();

    Ok(TrainedModel {
        model: CentroidModel::new(unit)?,
        objective_history: history,
        iterations_run,
        labels,
    })
}

fn normalize_inputs<E: AsRef<[f32]>>(embeddings: &[E]) -> Result<Points> {
    let Some(first) = embeddings.first() else {
        return Err(Error::validation("cannot train on an empty embedding set"));
    };
    let d = first.as_ref().len();
    if d == 0 {
        return Err(Error::validation("embeddings must have positive dimension"));
    }
    let mut data = Vec::with_capacity(embeddings.len() * d);
    for (i, e) in embeddings.iter().enumerate() {
        let e = e.as_ref();
        if e.len() != d {
            return Err(Error::validation(format!(
                "embedding {i} has dimension {}, expected {d}",
                e.len()
            )));
        }
        if e.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "embedding {i} has a non-finite value"
            )));
        }
        let unit = normalized(e)
            .ok_or_else(|| Error::validation(format!("embedding {i} has zero norm")))?;
        data.extend_from_slice(&unit);
    }
    Ok(Points { d, data })
}

fn count_distinct(points: &Points) -> usize {
    let mut seen = HashSet::with_capacity(points.len());
    for i in 0..points.len() {
        seen.insert(
            points
                .row(i)
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>(),
        );
    }
    seen.len()
}

/// D^2 seeding with D = 1 - cos, clamped at zero.
fn kmeans_plus_plus(points: &Points, k: usize, rng: &mut impl Rng) -> Vec<f64> {
    let n = points.len();
    let d = points.d;
    let mut centroids = Vec::with_capacity(k * d);
    let mut chosen = vec![false; n];

    let first = rng.random_range(0..n);
    centroids.extend_from_slice(points.row(first));
    chosen[first] = true;

    let mut dist: Vec<f64> = (0..n)
        .map(|i| (1.0 - dot64(points.row(i), points.row(first))).max(0.0))
        .collect();

    while centroids.len() < k * d {
        let total: f64 = dist.iter().map(|x| x * x).sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, x) in dist.iter().enumerate() {
                acc += x * x;
                if acc > target && *x > 0.0 {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave the target just past the running sum
            pick.or_else(|| dist.iter().rposition(|&x| x > 0.0))
        } else {
            None
        };
        // all remaining weight underflowed; fall back to any unseen direction
        let pick = pick.unwrap_or_else(|| {
            (0..n)
                .find(|&i| !chosen[i] && centroids.chunks_exact(d).all(|c| c != points.row(i)))
                .expect("distinct directions checked before seeding")
        });
        chosen[pick] = true;
        centroids.extend_from_slice(points.row(pick));
        let c = points.row(pick);
        for (i, di) in dist.iter_mut().enumerate() {
            let nd = (1.0 - dot64(points.row(i), c)).max(0.0);
            if nd < *di {
                *di = nd;
            }
        }
    }
    centroids
}

fn assign(points: &Points, centroids: &[f64], k: usize) -> (Vec<u32>, Vec<f64>) {
    let d = points.d;
    let pairs: Vec<(u32, f64)> = (0..points.len())
        .into_par_iter()
        .map(|i| {
            let x = points.row(i);
            let mut best = 0u32;
            let mut best_sim = f64::NEG_INFINITY;
            for (j, c) in centroids.chunks_exact(d).take(k).enumerate() {
                let s = dot64(x, c);
                if s > best_sim {
                    best_sim = s;
                    best = j as u32;
                }
            }
            (best, best_sim)
        })
        .collect();
    pairs.into_iter().unzip()
}

/// Recomputes centroids as normalized member means and repairs empty
/// clusters by moving in the point least similar to its own centroid.
/// Returns whether any repair happened.
fn update_centroids(
    points: &Points,
    centroids: &mut [f64],
    k: usize,
    labels: &mut [u32],
    sims: &mut [f64],
) -> bool {
    let d = points.d;
    let mut sums = vec![0f64; k * d];
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        let l = l as usize;
        counts[l] += 1;
        for (s, &x) in sums[l * d..(l + 1) * d].iter_mut().zip(points.row(i)) {
            *s += x;
        }
    }
    for j in 0..k {
        let sum = &sums[j * d..(j + 1) * d];
        let n = dot64(sum, sum).sqrt();
        // a zero sum leaves every member at similarity 0 for any centroid
        if counts[j] > 0 && n > 0.0 {
            for (c, &s) in centroids[j * d..(j + 1) * d].iter_mut().zip(sum) {
                *c = s / n;
            }
        }
    }
    for (i, &l) in labels.iter().enumerate() {
        let l = l as usize;
        sims[i] = dot64(points.row(i), &centroids[l * d..(l + 1) * d]);
    }

    let mut repaired = false;
    for j in 0..k {
        if counts[j] > 0 {
            continue;
        }
        let donor = (0..labels.len())
            .filter(|&i| counts[labels[i] as usize] >= 2)
            .min_by(|&a, &b| sims[a].total_cmp(&sims[b]).then(a.cmp(&b)));
        let Some(p) = donor else { break };
        counts[labels[p] as usize] -= 1;
        counts[j] = 1;
        labels[p] = j as u32;
        sims[p] = 1.0;
        centroids[j * d..(j + 1) * d].copy_from_slice(points.row(p));
        repaired = true;
    }
    repaired
}
