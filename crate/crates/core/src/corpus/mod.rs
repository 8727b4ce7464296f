//! Function and program records, plus the on-disk formats for corpora and
//! program embeddings.
//!
//! A corpus is a JSON-lines text file. The first line is a header declaring
//! the embedding dimension:
//!
//! ```text
//! {"format":"proghash-corpus","version":1,"d":4}
//! {"program_id":"p0","function_id":"f0","loc":12,"nos":1,"embedding":[0.5,0.5,0.5,0.5],"class_id":"c0"}
//! {"program_id":"p1","class_id":"c1"}
//! ```
//!
//! Every later line is a function record; records sharing a `program_id`
//! belong to the same program, and programs keep the order in which their id
//! first appears. A line without `function_id` declares a program and is how
//! function-less programs are written.
//!
//! Embedding files are binary; see [`binfmt`].

pub mod binfmt;
mod embedding;
mod text;

pub use binfmt::{
    load_semantic, load_structural, read_semantic, read_structural, save_semantic, save_structural,
    write_semantic, write_structural,
};
pub use embedding::{SemanticEmbedding, StructuralEmbedding};
pub use text::{load_corpus, read_corpus, save_corpus, write_corpus, CORPUS_VERSION};

use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};

/// One decompiled function: its embedding and the intrinsic features used
/// for weighting.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionRecord {
    pub function_id: String,
    pub embedding: Vec<f32>,
    /// Lines of pseudocode.
    pub loc: u64,
    /// Number of string literals.
    pub nos: u64,
    /// Ground-truth function class, used only by evaluation.
    pub class_label: Option<u64>,
}

impl FunctionRecord {
    pub fn new(function_id: impl Into<String>, embedding: Vec<f32>, loc: u64, nos: u64) -> Self {
        Self {
            function_id: function_id.into(),
            embedding,
            loc,
            nos,
            class_label: None,
        }
    }

    pub fn with_class_label(mut self, label: u64) -> Self {
        self.class_label = Some(label);
        self
    }
}

/// A binary, as the ordered list of its functions.
#[derive(Debug, Clone, PartialEq)]
pub struct ProgramRecord {
    pub program_id: String,
    pub functions: Vec<FunctionRecord>,
    /// Ground-truth program class, used only by evaluation.
    pub class_id: Option<String>,
}

impl ProgramRecord {
    pub fn new(program_id: impl Into<String>, functions: Vec<FunctionRecord>) -> Self {
        Self {
            program_id: program_id.into(),
            functions,
            class_id: None,
        }
    }

    pub fn with_class_id(mut self, class_id: impl Into<String>) -> Self {
        self.class_id = Some(class_id.into());
        self
    }

    pub fn embeddings(&self) -> impl Iterator<Item = &[f32]> {
        self.functions.iter().map(|f| f.embedding.as_slice())
    }
}

/// A validated, immutable collection of programs sharing one embedding
/// dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    d: usize,
    programs: Vec<ProgramRecord>,
}

impl Corpus {
    /// Validates every record against `d` and checks id uniqueness.
    pub fn new(d: usize, programs: Vec<ProgramRecord>) -> Result<Self> {
        if d == 0 {
            return Err(Error::validation("embedding dimension d must be positive"));
        }
        let mut seen = HashSet::with_capacity(programs.len());
        for program in &programs {
            if !seen.insert(program.program_id.as_str()) {
                return Err(Error::validation(format!(
                    "duplicate program_id {:?}",
                    program.program_id
                )));
            }
            let mut fn_ids = HashSet::with_capacity(program.functions.len());
            for function in &program.functions {
                validate_function(function, d)?;
                if !fn_ids.insert(function.function_id.as_str()) {
                    return Err(Error::validation(format!(
                        "duplicate function_id {:?} in program {:?}",
                        function.function_id, program.program_id
                    )));
                }
            }
        }
        Ok(Self { d, programs })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn programs(&self) -> &[ProgramRecord] {
        &self.programs
    }

    pub fn into_programs(self) -> Vec<ProgramRecord> {
        self.programs
    }

    pub fn len(&self) -> usize {
        self.programs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.programs.is_empty()
    }

    pub fn get(&self, program_id: &str) -> Option<&ProgramRecord> {
        self.programs.iter().find(|p| p.program_id == program_id)
    }

    /// All function embeddings in corpus order.
    pub fn function_embeddings(&self) -> Vec<&[f32]> {
        self.programs.iter().flat_map(|p| p.embeddings()).collect()
    }

    /// Map from program id to class id, for programs that carry one.
    pub fn class_map(&self) -> HashMap<String, String> {
        self.programs
            .iter()
            .filter_map(|p| p.class_id.clone().map(|c| (p.program_id.clone(), c)))
            .collect()
    }
}

pub(crate) fn validate_function(function: &FunctionRecord, d: usize) -> Result<()> {
    if function.embedding.len() != d {
        return Err(Error::validation(format!(
            "function {:?} has embedding dimension {}, expected {}",
            function.function_id,
            function.embedding.len(),
            d
        )));
    }
    if function.embedding.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation(format!(
            "function {:?} has a non-finite embedding value",
            function.function_id
        )));
    }
    Ok(())
}
