//! Retrieval and matching metrics.
//!
//! Average precision here is the mean of Precision@i over the retrieved
//! positions `i <= k` that are relevant. Its denominator counts relevant
//! *retrieved* hits, not every relevant item in the repository, so a query
//! whose only relevant hit sits at rank 1 scores 1.0.

use std::collections::{HashMap, HashSet};
use std::hash::Hash;

use crate::error::{Error, Result};
use crate::index::ResultRecord;

/// Same-class flags for one query's ranked hits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelevanceJudgment {
    pub query_id: String,
    pub relevance: Vec<bool>,
}

impl RelevanceJudgment {
    pub fn new(query_id: impl Into<String>, relevance: Vec<bool>) -> Self {
        Self {
            query_id: query_id.into(),
            relevance,
        }
    }

    pub fn from_flags(query_id: impl Into<String>, flags: &[u8]) -> Self {
        Self::new(query_id, flags.iter().map(|&f| f != 0).collect())
    }
}

fn check(judgments: &[RelevanceJudgment], k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::validation("k must be at least 1"));
    }
    if judgments.is_empty() {
        return Err(Error::validation("no judgments to average"));
    }
    Ok(())
}

/// Average precision over the first `k` flags; 0 with no relevant hit.
pub fn average_precision(relevance: &[bool], k: usize) -> f64 {
    let mut relevant = 0usize;
    let mut sum = 0.0;
    for (i, _) in relevance.iter().take(k).enumerate().filter(|(_, &r)| r) {
        relevant += 1;
        sum += relevant as f64 / (i + 1) as f64;
    }
    if relevant == 0 {
        0.0
    } else {
        sum / relevant as f64
    }
}

/// Relevant hits among the first `k`, divided by `k`.
pub fn precision_at_k(relevance: &[bool], k: usize) -> f64 {
    relevance.iter().take(k).filter(|&&r| r).count() as f64 / k as f64
}

/// mAP@k. Flags beyond position `k` are ignored.
pub fn map_at_k(judgments: &[RelevanceJudgment], k: usize) -> Result<f64> {
    check(judgments, k)?;
    let total: f64 = judgments
        .iter()
        .map(|j| average_precision(&j.relevance, k))
        .sum();
    Ok(total / judgments.len() as f64)
}

/// mP@k. Flags beyond position `k` are ignored.
pub fn mp_at_k(judgments: &[RelevanceJudgment], k: usize) -> Result<f64> {
    check(judgments, k)?;
    let total: f64 = judgments
        .iter()
        .map(|j| precision_at_k(&j.relevance, k))
        .sum();
    Ok(total / judgments.len() as f64)
}

/// Judgments built from search results, plus the queries left out.
#[derive(Debug, Clone, Default)]
pub struct Judged {
    pub judgments: Vec<RelevanceJudgment>,
    /// Queries with no class, or whose class has no repository member.
    pub excluded: Vec<String>,
}

/// Turns result records into relevance flags using `class_of`.
///
/// `repository` lists the searchable program ids; when `None`, every
/// program in `class_of` except the query itself counts as a repository
/// member. Queries keep the order of their first result line.
pub fn judge(
    results: &[ResultRecord],
    class_of: &HashMap<String, String>,
    repository: Option<&HashSet<String>>,
) -> Judged {
    let mut class_members: HashMap<&str, Vec<&str>> = HashMap::new();
    for (pid, cid) in class_of {
        if repository.is_none_or(|r| r.contains(pid)) {
            class_members
                .entry(cid.as_str())
                .or_default()
                .push(pid.as_str());
        }
    }

    let mut order: Vec<&str> = Vec::new();
    let mut ranked: HashMap<&str, Vec<(usize, &str)>> = HashMap::new();
    for r in results {
        let entry = ranked.entry(r.query_id.as_str()).or_insert_with(|| {
            order.push(r.query_id.as_str());
            Vec::new()
        });
        entry.push((r.rank, r.program_id.as_str()));
    }

    let mut out = Judged::default();
    for qid in order {
        let has_members = class_of.get(qid).is_some_and(|cid| {
            class_members
                .get(cid.as_str())
                .is_some_and(|members| members.iter().any(|&m| m != qid))
        });
        if !has_members {
            out.excluded.push(qid.to_string());
            continue;
        }
        let qclass = &class_of[qid];
        let mut hits = ranked.remove(qid).unwrap_or_default();
        hits.sort_by_key(|&(rank, _)| rank);
        let relevance = hits
            .iter()
            .map(|(_, pid)| class_of.get(*pid) == Some(qclass))
            .collect();
        out.judgments.push(RelevanceJudgment::new(qid, relevance));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchingReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Predicted pairs that are also ground truth.
    pub matched_pairs: usize,
}

/// Precision, recall, and F1 of a predicted pair set against the truth.
pub fn matching_eval<T: Eq + Hash>(predicted: &HashSet<T>, truth: &HashSet<T>) -> MatchingReport {
    let matched = predicted.intersection(truth).count();
    let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    let precision = ratio(matched, predicted.len());
    let recall = ratio(matched, truth.len());
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    MatchingReport {
        precision,
        recall,
        f1,
        matched_pairs: matched,
    }
}

/// Pairs `(query, repo)` whose classifier labels agree: the cartesian
/// product within every shared label.
pub fn predicted_matches<Q, R>(query: &[(Q, u32)], repo: &[(R, u32)]) -> HashSet<(Q, R)>
where
    Q: Clone + Eq + Hash,
    R: Clone + Eq + Hash,
{
    let mut by_label: HashMap<u32, Vec<&R>> = HashMap::new();
    for (id, label) in repo {
        by_label.entry(*label).or_default().push(id);
    }
    let mut out = HashSet::new();
    for (qid, label) in query {
        if let Some(rs) = by_label.get(label) {
            for &r in rs {
                out.insert((qid.clone(), r.clone()));
            }
        }
    }
    out
}

/// Cliff's delta: `(#(x > y) - #(x < y)) / (|a| |b|)`.
pub fn cliffs_delta(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::validation(
            "Cliff's delta needs two non-empty samples",
        ));
    }
    let mut sorted_b = b.to_vec();
    sorted_b.sort_by(f64::total_cmp);
    let mut dominance: i64 = 0;
    for &x in a {
        let below = sorted_b.partition_point(|&y| y < x);
        let not_above = sorted_b.partition_point(|&y| y <= x);
        let above = sorted_b.len() - not_above;
        dominance += below as i64 - above as i64;
    }
    Ok(dominance as f64 / (a.len() * b.len()) as f64)
}
