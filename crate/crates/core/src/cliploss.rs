//! Bidirectional softmax contrastive loss over paired source/pseudo
//! embeddings, with analytic gradients.
//!
//! With `x_i` and `y_j` the normalized source and pseudo embeddings and
//! logits `z_ij = t * x_i . y_j`,
//!
//! ```text
//! L = -1/(2N) * sum_i [ log softmax_j(z_i.)_i + log softmax_j(z_.i)_i ]
//! ```
//!
//! The first term is the row (source to pseudo) softmax, the second the
//! column (pseudo to source) softmax. `t` is used as given.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub source: Vec<Vec<f64>>,
    pub pseudo: Vec<Vec<f64>>,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub source: Vec<Vec<f64>>,
    pub pseudo: Vec<Vec<f64>>,
    pub temperature: f64,
}

impl Batch {
    pub fn new(source: Vec<Vec<f64>>, pseudo: Vec<Vec<f64>>, temperature: f64) -> Result<Self> {
        let b = Self {
            source,
            pseudo,
            temperature,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    fn validate(&self) -> Result<()> {
        if self.source.is_empty() || self.source.len() != self.pseudo.len() {
            return Err(Error::validation(format!(
                "need N >= 1 pairs, got {} source and {} pseudo embeddings",
                self.source.len(),
                self.pseudo.len()
            )));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::validation(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        let d = self.source[0].len();
        for (side, set) in [("source", &self.source), ("pseudo", &self.pseudo)] {
            for (i, v) in set.iter().enumerate() {
                if v.len() != d {
                    return Err(Error::validation(format!(
                        "{side} embedding {i} has dimension {}, expected {d}",
                        v.len()
                    )));
                }
                let n = l2(v);
                if n == 0.0 || !n.is_finite() {
                    return Err(Error::validation(format!(
                        "{side} embedding {i} has zero or non-finite norm"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn unit(v: &[f64]) -> (Vec<f64>, f64) {
    let n = l2(v);
    (v.iter().map(|x| x / n).collect(), n)
}

fn cosine_matrix(xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Vec<Vec<f64>> {
    xs.iter()
        .map(|x| {
            ys.iter()
                .map(|y| x.iter().zip(y).map(|(a, b)| a * b).sum())
                .collect()
        })
        .collect()
}

/// Max-shifted softmax of a row of logits, plus its log-sum-exp.
fn softmax(logits: &[f64]) -> (Vec<f64>, f64) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    (exps.iter().map(|e| e / sum).collect(), max + sum.ln())
}

struct Forward {
    xs: Vec<(Vec<f64>, f64)>,
    ys: Vec<(Vec<f64>, f64)>,
    cos: Vec<Vec<f64>>,
    row_soft: Vec<Vec<f64>>,
    // col_soft[j][i]: softmax over i of column j
    col_soft: Vec<Vec<f64>>,
    loss: f64,
}

fn forward(batch: &Batch) -> Result<Forward> {
    batch.validate()?;
    let n = batch.len();
    let t = batch.temperature;
    let xs: Vec<_> = batch.source.iter().map(|v| unit(v)).collect();
    let ys: Vec<_> = batch.pseudo.iter().map(|v| unit(v)).collect();
    let xu: Vec<Vec<f64>> = xs.iter().map(|(u, _)| u.clone()).collect();
    let yu: Vec<Vec<f64>> = ys.iter().map(|(u, _)| u.clone()).collect();
    let cos = cosine_matrix(&xu, &yu);

    let mut total = 0.0;
    let mut row_soft = Vec::with_capacity(n);
    let mut col_soft = Vec::with_capacity(n);
    for i in 0..n {
        let row: Vec<f64> = (0..n).map(|j| t * cos[i][j]).collect();
        let (p, lse) = softmax(&row);
        total += row[i] - lse;
        row_soft.push(p);

        let col: Vec<f64> = (0..n).map(|r| t * cos[r][i]).collect();
        let (p, lse) = softmax(&col);
        total += col[i] - lse;
        col_soft.push(p);
    }
    Ok(Forward {
        xs,
        ys,
        cos,
        row_soft,
        col_soft,
        loss: -total / (2.0 * n as f64),
    })
}

pub fn loss(batch: &Batch) -> Result<f64> {
    Ok(forward(batch)?.loss)
}

/// Loss and its gradient with respect to every raw embedding and `t`.
pub fn loss_grad(batch: &Batch) -> Result<(f64, Gradients)> {
    let f = forward(batch)?;
    let n = batch.len();
    let d = batch.source[0].len();
    let t = batch.temperature;
    let scale = 1.0 / (2.0 * n as f64);

    // dL/dz_ij
    let g: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let delta = if i == j { 2.0 } else { 0.0 };
                    scale * (f.row_soft[i][j] + f.col_soft[j][i] - delta)
                })
                .collect()
        })
        .collect();

    let dt: f64 = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| g[i][j] * f.cos[i][j])
        .sum();

    let mut gx = vec![vec![0.0; d]; n];
    let mut gy = vec![vec![0.0; d]; n];
    for i in 0..n {
        for j in 0..n {
            let w = t * g[i][j];
            for k in 0..d {
                gx[i][k] += w * f.ys[j].0[k];
                gy[j][k] += w * f.xs[i].0[k];
            }
        }
    }

    // through u = v / |v|: dL/dv = (g - (g . u) u) / |v|
    let back = |grads: Vec<Vec<f64>>, units: &[(Vec<f64>, f64)]| -> Vec<Vec<f64>> {
        grads
            .into_iter()
            .zip(units)
            .map(|(gu, (u, norm))| {
                let proj: f64 = gu.iter().zip(u).map(|(a, b)| a * b).sum();
                gu.iter()
                    .zip(u)
                    .map(|(a, b)| (a - proj * b) / norm)
                    .collect()
            })
            .collect()
    };

    Ok((
        f.loss,
        Gradients {
            source: back(gx, &f.xs),
            pseudo: back(gy, &f.ys),
            temperature: dt,
        },
    ))
}

/// Agreement between analytic gradients and central finite differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
    pub components: usize,
}

/// Relative errors are taken against at least this magnitude, so components
/// that are zero analytically do not divide by zero.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-8;

fn coord(b: &mut Batch, side: usize, i: usize, k: usize) -> &mut f64 {
    if side == 0 {
        &mut b.source[i][k]
    } else {
        &mut b.pseudo[i][k]
    }
}

/// Checks every gradient component of `loss_grad` against central
/// differences of `loss` with the given step.
pub fn finite_difference_check(batch: &Batch, step: f64) -> Result<GradientCheck> {
    let (_, grads) = loss_grad(batch)?;
    let mut worst_rel: f64 = 0.0;
    let mut worst_abs: f64 = 0.0;
    let mut components = 0;

    let mut record = |analytic: f64, numeric: f64| {
        let abs = (analytic - numeric).abs();
        let denom = analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
        worst_abs = worst_abs.max(abs);
        worst_rel = worst_rel.max(abs / denom);
        components += 1;
    };

    let mut probe = batch.clone();
    for side in 0..2 {
        for i in 0..batch.len() {
            for k in 0..batch.source[0].len() {
                let orig = *coord(&mut probe, side, i, k);
                *coord(&mut probe, side, i, k) = orig + step;
                let up = loss(&probe)?;
                *coord(&mut probe, side, i, k) = orig - step;
                let down = loss(&probe)?;
                *coord(&mut probe, side, i, k) = orig;
                let analytic = if side == 0 {
                    grads.source[i][k]
                } else {
                    grads.pseudo[i][k]
                };
                record(analytic, (up - down) / (2.0 * step));
            }
        }
    }

    probe.temperature = batch.temperature + step;
    let up = loss(&probe)?;
    probe.temperature = batch.temperature - step;
    let down = loss(&probe)?;
    record(grads.temperature, (up - down) / (2.0 * step));

    Ok(GradientCheck {
        max_relative_error: worst_rel,
        max_absolute_error: worst_abs,
        components,
    })
}
