//! Exact (FLAT) top-k clone search over program embeddings.
//!
//! Structural repositories score by Jaccard over packed words, semantic ones
//! by cosine. Hits are ordered by descending score, then ascending program
//! id, so rankings are reproducible.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::corpus::{SemanticEmbedding, StructuralEmbedding};
use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::stru::jaccard_words;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingKind {
    Structural,
    Semantic,
}

impl std::fmt::Display for EmbeddingKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EmbeddingKind::Structural => "structural",
            EmbeddingKind::Semantic => "semantic",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Embedding {
    Structural(StructuralEmbedding),
    Semantic(SemanticEmbedding),
}

impl Embedding {
    pub fn kind(&self) -> EmbeddingKind {
        match self {
            Embedding::Structural(_) => EmbeddingKind::Structural,
            Embedding::Semantic(_) => EmbeddingKind::Semantic,
        }
    }

    /// `m` for structural embeddings, `d` for semantic ones.
    pub fn dim(&self) -> usize {
        match self {
            Embedding::Structural(e) => e.m() as usize,
            Embedding::Semantic(e) => e.d(),
        }
    }
}

impl From<StructuralEmbedding> for Embedding {
    fn from(e: StructuralEmbedding) -> Self {
        Embedding::Structural(e)
    }
}

impl From<SemanticEmbedding> for Embedding {
    fn from(e: SemanticEmbedding) -> Self {
        Embedding::Semantic(e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub program_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SearchResult {
    pub hits: Vec<Hit>,
}

#[derive(Debug)]
enum Store {
    Structural {
        words_per: usize,
        words: Vec<u64>,
    },
    Semantic {
        d: usize,
        values: Vec<f32>,
        norms: Vec<f64>,
    },
}

/// Immutable repository of program embeddings of a single kind.
#[derive(Debug)]
pub struct Repository {
    kind: EmbeddingKind,
    dim: Option<usize>,
    ids: Vec<String>,
    store: Store,
}

impl Repository {
    /// Builds a repository. All entries must share one kind and dimension.
    /// An empty repository takes its kind from `kind`.
    pub fn build(kind: EmbeddingKind, entries: Vec<(String, Embedding)>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        let dim = entries.first().map(|(_, e)| e.dim());
        for (id, e) in &entries {
            if !seen.insert(id.as_str()) {
                return Err(Error::validation(format!("duplicate program_id {id:?}")));
            }
            if e.kind() != kind {
                return Err(Error::validation(format!(
                    "{id:?} is a {} embedding in a {kind} repository",
                    e.kind()
                )));
            }
            if Some(e.dim()) != dim {
                return Err(Error::validation(format!(
                    "{id:?} has dimension {}, repository uses {}",
                    e.dim(),
                    dim.unwrap_or(0)
                )));
            }
        }

        let mut ids = Vec::with_capacity(entries.len());
        let store = match kind {
            EmbeddingKind::Structural => {
                let words_per = dim.unwrap_or(0) / 64;
                let mut words = Vec::with_capacity(entries.len() * words_per);
                for (id, e) in entries {
                    let Embedding::Structural(e) = e else {
                        unreachable!()
                    };
                    words.extend_from_slice(e.words());
                    ids.push(id);
                }
                Store::Structural { words_per, words }
            }
            EmbeddingKind::Semantic => {
                let d = dim.unwrap_or(0);
                let mut values = Vec::with_capacity(entries.len() * d);
                let mut norms = Vec::with_capacity(entries.len());
                for (id, e) in entries {
                    let Embedding::Semantic(e) = e else {
                        unreachable!()
                    };
                    norms.push(e.norm());
                    values.extend_from_slice(e.values());
                    ids.push(id);
                }
                Store::Semantic { d, values, norms }
            }
        };
        Ok(Self {
            kind,
            dim,
            ids,
            store,
        })
    }

    pub fn structural(entries: Vec<(String, StructuralEmbedding)>) -> Result<Self> {
        Self::build(
            EmbeddingKind::Structural,
            entries.into_iter().map(|(id, e)| (id, e.into())).collect(),
        )
    }

    pub fn semantic(entries: Vec<(String, SemanticEmbedding)>) -> Result<Self> {
        Self::build(
            EmbeddingKind::Semantic,
            entries.into_iter().map(|(id, e)| (id, e.into())).collect(),
        )
    }

    pub fn kind(&self) -> EmbeddingKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    fn check_query(&self, query: &Embedding, k: usize) -> Result<()> {
        if k == 0 {
            return Err(Error::validation("k must be at least 1"));
        }
        if query.kind() != self.kind {
            return Err(Error::validation(format!(
                "{} query against a {} repository",
                query.kind(),
                self.kind
            )));
        }
        if let Some(dim) = self.dim {
            if query.dim() != dim {
                return Err(Error::validation(format!(
                    "query dimension {} does not match repository dimension {dim}",
                    query.dim()
                )));
            }
        }
        Ok(())
    }

    /// Similarity of `query` to every entry, in insertion order.
    fn scores(&self, query: &Embedding) -> Vec<f64> {
        match (&self.store, query) {
            (Store::Structural { words_per, words }, Embedding::Structural(q)) => {
                if *words_per == 0 {
                    return Vec::new();
                }
                words
                    .chunks_exact(*words_per)
                    .map(|w| jaccard_words(q.words(), w))
                    .collect()
            }
            (Store::Semantic { d, values, norms }, Embedding::Semantic(q)) => {
                if *d == 0 {
                    return Vec::new();
                }
                let qn = q.norm();
                values
                    .chunks_exact(*d)
                    .zip(norms)
                    .map(|(v, &n)| {
                        let denom = qn * n;
                        if denom == 0.0 {
                            0.0
                        } else {
                            (dot(q.values(), v) / denom).clamp(-1.0, 1.0)
                        }
                    })
                    .collect()
            }
            _ => unreachable!("query kind checked"),
        }
    }

    /// Exact top-k by the repository's similarity.
    pub fn search(&self, query: &Embedding, k: usize) -> Result<SearchResult> {
        self.check_query(query, k)?;
        let scores = self.scores(query);
        let mut order: Vec<usize> = (0..scores.len()).collect();
        let cmp = |a: &usize, b: &usize| -> Ordering {
            scores[*b]
                .total_cmp(&scores[*a])
                .then_with(|| self.ids[*a].cmp(&self.ids[*b]))
        };
        if k < order.len() {
            order.select_nth_unstable_by(k - 1, cmp);
            order.truncate(k);
        }
        order.sort_unstable_by(cmp);
        Ok(SearchResult {
            hits: order
                .into_iter()
                .map(|i| Hit {
                    program_id: self.ids[i].clone(),
                    score: scores[i],
                })
                .collect(),
        })
    }

    /// Searches every query on a pool of `workers` threads. Results are in
    /// query order and do not depend on `workers`.
    pub fn batch_search(
        &self,
        queries: &[Embedding],
        k: usize,
        workers: usize,
    ) -> Result<BatchOutput> {
        if workers == 0 {
            return Err(Error::validation("workers must be at least 1"));
        }
        for q in queries {
            self.check_query(q, k)?;
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::config(format!("cannot start {workers} workers: {e}")))?;
        let start = Instant::now();
        let results = pool.install(|| {
            queries
                .par_iter()
                .map(|q| self.search(q, k))
                .collect::<Result<Vec<_>>>()
        })?;
        Ok(BatchOutput {
            results,
            comparisons: (queries.len() * self.len()) as u64,
            elapsed: start.elapsed(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct BatchOutput {
    pub results: Vec<SearchResult>,
    /// Query-entry similarity evaluations performed.
    pub comparisons: u64,
    pub elapsed: Duration,
}

impl BatchOutput {
    pub fn comparisons_per_second(&self) -> f64 {
        let secs = self.elapsed.as_secs_f64();
        if secs == 0.0 {
            f64::INFINITY
        } else {
            self.comparisons as f64 / secs
        }
    }
}

/// One line of a results file.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRecord {
    pub query_id: String,
    /// 1-based.
    pub rank: usize,
    pub program_id: String,
    pub score: f64,
}

fn check_field(id: &str) -> Result<()> {
    if id.is_empty() || id.contains(['\t', '\n', '\r']) {
        return Err(Error::validation(format!(
            "id {id:?} cannot be written to a tab-separated results file"
        )));
    }
    Ok(())
}

/// Writes `query_id<TAB>rank<TAB>program_id<TAB>score` lines, scores to six
/// decimal places.
pub fn write_results<W: Write>(
    query_ids: &[String],
    results: &[SearchResult],
    mut w: W,
) -> Result<()> {
    if query_ids.len() != results.len() {
        return Err(Error::validation("one result list is needed per query"));
    }
    for (qid, res) in query_ids.iter().zip(results) {
        check_field(qid)?;
        for (rank, hit) in res.hits.iter().enumerate() {
            check_field(&hit.program_id)?;
            writeln!(
                w,
                "{qid}\t{}\t{}\t{:.6}",
                rank + 1,
                hit.program_id,
                hit.score
            )?;
        }
    }
    Ok(())
}

pub fn read_results<R: BufRead>(reader: R) -> Result<Vec<ResultRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let bad = |message: String| Error::Parse {
            line: i + 1,
            message,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        let [query_id, rank, program_id, score] = fields[..] else {
            return Err(bad(format!(
                "expected 4 tab-separated fields, got {}",
                fields.len()
            )));
        };
        out.push(ResultRecord {
            query_id: query_id.to_string(),
            rank: rank
                .parse()
                .map_err(|e| bad(format!("bad rank {rank:?}: {e}")))?,
            program_id: program_id.to_string(),
            score: score
                .parse()
                .map_err(|e| bad(format!("bad score {score:?}: {e}")))?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sem(v: Vec<f32>) -> Embedding {
        SemanticEmbedding::new(v).unwrap().into()
    }

    fn repo(entries: Vec<(&str, Vec<f32>)>) -> Repository {
        Repository::build(
            EmbeddingKind::Semantic,
            entries
                .into_iter()
                .map(|(id, v)| (id.to_string(), sem(v)))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn empty_repository_returns_no_hits() {
        let r = Repository::build(EmbeddingKind::Structural, vec![]).unwrap();
        let q = StructuralEmbedding::zeroed(1024).unwrap().into();
        assert!(r.search(&q, 5).unwrap().hits.is_empty());
    }

    #[test]
    fn self_query_ranks_first() {
        let r = repo(vec![
            ("a", vec![1.0, 0.0]),
            ("b", vec![0.0, 1.0]),
            ("c", vec![1.0, 1.0]),
        ]);
        let res = r.search(&sem(vec![0.0, 1.0]), 2).unwrap();
        assert_eq!(res.hits[0].program_id, "b");
        assert!((res.hits[0].score - 1.0).abs() < 1e-12);
        assert_eq!(res.hits.len(), 2);
    }

    #[test]
    fn k_beyond_size_returns_all_sorted() {
        let r = repo(vec![
            ("a", vec![1.0, 0.0]),
            ("b", vec![0.0, 1.0]),
            ("c", vec![1.0, 1.0]),
        ]);
        let res = r.search(&sem(vec![1.0, 0.1]), 10).unwrap();
        let ids: Vec<_> = res.hits.iter().map(|h| h.program_id.as_str()).collect();
        assert_eq!(ids, vec!["a", "c", "b"]);
    }

    #[test]
    fn ties_break_by_ascending_id() {
        let r = repo(vec![
            ("z", vec![1.0, 0.0]),
            ("m", vec![2.0, 0.0]),
            ("a", vec![3.0, 0.0]),
        ]);
        let res = r.search(&sem(vec![1.0, 0.0]), 2).unwrap();
        let ids: Vec<_> = res.hits.iter().map(|h| h.program_id.as_str()).collect();
        assert_eq!(ids, vec!["a", "m"]);
    }

    #[test]
    fn kind_and_dimension_mismatch_rejected() {
        let r = repo(vec![("a", vec![1.0, 0.0])]);
        let q = StructuralEmbedding::zeroed(1024).unwrap().into();
        assert!(r.search(&q, 1).is_err());
        assert!(r.search(&sem(vec![1.0, 0.0, 0.0]), 1).is_err());
        assert!(r.search(&sem(vec![1.0, 0.0]), 0).is_err());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let entries = vec![
            ("a".to_string(), sem(vec![1.0])),
            ("a".to_string(), sem(vec![2.0])),
        ];
        assert!(Repository::build(EmbeddingKind::Semantic, entries).is_err());
    }

    #[test]
    fn batch_matches_sequential() {
        let r = repo(vec![
            ("a", vec![1.0, 0.0]),
            ("b", vec![0.0, 1.0]),
            ("c", vec![1.0, 1.0]),
        ]);
        let qs = vec![sem(vec![1.0, 0.2]), sem(vec![-1.0, 0.5])];
        let out = r.batch_search(&qs, 2, 3).unwrap();
        assert_eq!(out.comparisons, 6);
        for (q, got) in qs.iter().zip(&out.results) {
            assert_eq!(&r.search(q, 2).unwrap(), got);
        }
        assert!(r.batch_search(&[], 2, 1).unwrap().results.is_empty());
        assert!(r.batch_search(&qs, 2, 0).is_err());
    }

    #[test]
    fn results_file_round_trips_to_six_places() {
        let res = vec![SearchResult {
            hits: vec![
                Hit {
                    program_id: "p1".into(),
                    score: 1.0,
                },
                Hit {
                    program_id: "p2".into(),
                    score: 1.0 / 3.0,
                },
            ],
        }];
        let mut buf = Vec::new();
        write_results(&["q".to_string()], &res, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text, "q\t1\tp1\t1.000000\nq\t2\tp2\t0.333333\n");
        let back = read_results(buf.as_slice()).unwrap();
        assert_eq!(back[1].rank, 2);
        assert_eq!(back[1].score, 0.333333);
        assert!(write_results(&["bad\tid".to_string()], &res, Vec::new()).is_err());
    }
}
