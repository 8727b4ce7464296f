//! Semantic program embeddings: the significance-weighted mean of a
//! program's normalized function embeddings.
//!
//! A function's weight combines its lines of pseudocode and its string
//! literal count:
//!
//! ```text
//! w = loc^alpha1 / alpha2 + (nos^beta1 / beta2 + 1)
//! v = (1/q) * sum_i w_i * e_i / |e_i|
//! ```
//!
//! The pooled vector is not renormalized.

use serde::{Deserialize, Serialize};

use crate::corpus::{ProgramRecord, SemanticEmbedding};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm};

/// Which terms contribute to a function's weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// Both the LoC and the NoS terms.
    #[default]
    Full,
    /// Every function weighs 1.
    MeanPooling,
    /// LoC term plus the constant 1.
    LocOnly,
    /// NoS term only (which includes its constant 1).
    NosOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeightConfig {
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub mode: WeightMode,
}

impl Default for WeightConfig {
    fn default() -> Self {
        Self {
            alpha1: 0.4,
            alpha2: 5.0,
            beta1: 0.45,
            beta2: 1.0,
            mode: WeightMode::Full,
        }
    }
}

impl WeightConfig {
    pub fn with_mode(mode: WeightMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.alpha1, self.alpha2, self.beta1, self.beta2]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.alpha2 <= 0.0 || self.beta2 <= 0.0 {
            return Err(Error::config(format!(
                "weight parameters must be finite with alpha2 > 0 and beta2 > 0, got {self:?}"
            )));
        }
        Ok(())
    }

    fn loc_term(&self, loc: u64) -> f64 {
        (loc as f64).powf(self.alpha1) / self.alpha2
    }

    fn nos_term(&self, nos: u64) -> f64 {
        (nos as f64).powf(self.beta1) / self.beta2 + 1.0
    }

    /// Significance weight of one function.
    pub fn weight(&self, loc: u64, nos: u64) -> f64 {
        match self.mode {
            WeightMode::Full => self.loc_term(loc) + self.nos_term(nos),
            WeightMode::MeanPooling => 1.0,
            WeightMode::LocOnly => self.loc_term(loc) + 1.0,
            WeightMode::NosOnly => self.nos_term(nos),
        }
    }
}

pub fn weight(loc: u64, nos: u64, cfg: &WeightConfig) -> f64 {
    cfg.weight(loc, nos)
}

/// A pooled program vector plus what had to be skipped to make it.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledProgram {
    pub embedding: SemanticEmbedding,
    /// Functions left out because their embedding had zero norm.
    pub skipped_zero_norm: Vec<String>,
    /// No usable function remained; the embedding is all-zero.
    pub degenerate: bool,
}

/// Weighted pooling over a program in `d` dimensions. Accumulates in `f64`.
pub fn hash_program(
    program: &ProgramRecord,
    d: usize,
    cfg: &WeightConfig,
) -> Result<PooledProgram> {
    cfg.validate()?;
    if d == 0 {
        return Err(Error::validation("dimension d must be positive"));
    }
    let mut acc = vec![0f64; d];
    let mut used = 0usize;
    let mut skipped = Vec::new();
    for f in &program.functions {
        if f.embedding.len() != d {
            return Err(Error::validation(format!(
                "function {:?} of program {:?} has dimension {}, expected {d}",
                f.function_id,
                program.program_id,
                f.embedding.len()
            )));
        }
        let n = norm(&f.embedding);
        if n == 0.0 || !n.is_finite() {
            skipped.push(f.function_id.clone());
            continue;
        }
        let scale = cfg.weight(f.loc, f.nos) / n;
        for (a, &x) in acc.iter_mut().zip(&f.embedding) {
            *a += scale * f64::from(x);
        }
        used += 1;
    }
    let degenerate = used == 0;
    let q = used.max(1) as f64;
    let values = acc.iter().map(|&a| (a / q) as f32).collect();
    Ok(PooledProgram {
        embedding: SemanticEmbedding::new(values)?,
        skipped_zero_norm: skipped,
        degenerate,
    })
}

/// Cosine similarity; 0.0 when either vector is all-zero.
pub fn cosine(a: &SemanticEmbedding, b: &SemanticEmbedding) -> Result<f64> {
    if a.d() != b.d() {
        return Err(Error::validation(format!(
            "cannot compare d={} with d={}",
            a.d(),
            b.d()
        )));
    }
    let denom = a.norm() * b.norm();
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((dot(a.values(), b.values()) / denom).clamp(-1.0, 1.0))
}
