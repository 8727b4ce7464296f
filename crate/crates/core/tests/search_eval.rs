use std::collections::{HashMap, HashSet};

use proghash::eval::{self, RelevanceJudgment};
use proghash::index::{read_results, write_results, Embedding, ResultRecord};
use proghash::{Repository, SemanticEmbedding, StructuralEmbedding};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sparse_bits(m: u32, density: f64, rng: &mut ChaCha8Rng) -> StructuralEmbedding {
    let mut e = StructuralEmbedding::zeroed(m).unwrap();
    for bit in 0..m {
        if rng.random_bool(density) {
            e.set(bit);
        }
    }
    e
}

fn structural_entries(n: usize, seed: u64) -> Vec<(String, StructuralEmbedding)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // low resolution so that scores tie often
    (0..n)
        .map(|i| {
            (
                format!("s{:04}", (i * 7919) % n),
                sparse_bits(128, 0.05, &mut rng),
            )
        })
        .collect()
}

fn semantic_entries(n: usize, seed: u64) -> Vec<(String, SemanticEmbedding)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let v = (0..8).map(|_| rng.random_range(-2i8..=2) as f32).collect();
            (
                format!("e{:04}", (i * 7919) % n),
                SemanticEmbedding::new(v).unwrap(),
            )
        })
        .collect()
}

fn oracle_jaccard(a: &StructuralEmbedding, b: &StructuralEmbedding) -> f64 {
    let sa: HashSet<u32> = a.ones().collect();
    let sb: HashSet<u32> = b.ones().collect();
    let union = sa.union(&sb).count();
    if union == 0 {
        1.0
    } else {
        sa.intersection(&sb).count() as f64 / union as f64
    }
}

fn oracle_cosine(a: &SemanticEmbedding, b: &SemanticEmbedding) -> f64 {
    let dot: f64 = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(&x, &y)| x as f64 * y as f64)
        .sum();
    let n = a.norm() * b.norm();
    if n == 0.0 {
        0.0
    } else {
        (dot / n).clamp(-1.0, 1.0)
    }
}

/// Full scan followed by a stable sort on (score desc, id asc).
fn full_scan<T>(
    entries: &[(String, T)],
    score: impl Fn(&T) -> f64,
    k: usize,
) -> Vec<(String, f64)> {
    let mut all: Vec<(String, f64)> = entries
        .iter()
        .map(|(id, e)| (id.clone(), score(e)))
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

fn hits(r: &proghash::SearchResult) -> Vec<(String, f64)> {
    r.hits
        .iter()
        .map(|h| (h.program_id.clone(), h.score))
        .collect()
}

#[test]
fn structural_search_matches_full_scan() {
    let entries = structural_entries(1000, 1);
    let repo = Repository::structural(entries.clone()).unwrap();
    let queries = structural_entries(50, 2);
    for (_, q) in &queries {
        for k in [1, 10, 1000, 2000] {
            let got = repo.search(&Embedding::from(q.clone()), k).unwrap();
            assert_eq!(hits(&got), full_scan(&entries, |e| oracle_jaccard(q, e), k));
        }
    }
}

#[test]
fn semantic_search_matches_full_scan() {
    let entries = semantic_entries(1000, 3);
    let repo = Repository::semantic(entries.clone()).unwrap();
    let queries = semantic_entries(50, 4);
    for (_, q) in &queries {
        for k in [1, 10, 100] {
            let got = repo.search(&Embedding::from(q.clone()), k).unwrap();
            let want = full_scan(&entries, |e| oracle_cosine(q, e), k);
            let got = hits(&got);
            assert_eq!(got.len(), want.len());
            for (g, w) in got.iter().zip(&want) {
                assert!((g.1 - w.1).abs() < 1e-12, "{g:?} vs {w:?}");
            }
            let ids = |v: &[(String, f64)]| v.iter().map(|x| x.0.clone()).collect::<Vec<_>>();
            assert_eq!(ids(&got), ids(&want));
        }
    }
}

#[test]
fn insertion_order_does_not_change_results() {
    let entries = structural_entries(500, 5);
    let mut shuffled = entries.clone();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(6));
    let a = Repository::structural(entries).unwrap();
    let b = Repository::structural(shuffled).unwrap();
    for (_, q) in structural_entries(20, 7) {
        let q = Embedding::from(q);
        assert_eq!(a.search(&q, 25).unwrap(), b.search(&q, 25).unwrap());
    }
}

#[test]
fn worker_count_does_not_change_results() {
    let repo = Repository::semantic(semantic_entries(800, 8)).unwrap();
    let queries: Vec<Embedding> = semantic_entries(100, 9)
        .into_iter()
        .map(|(_, e)| e.into())
        .collect();
    let one = repo.batch_search(&queries, 10, 1).unwrap();
    let eight = repo.batch_search(&queries, 10, 8).unwrap();
    assert_eq!(one.results, eight.results);
    assert_eq!(one.comparisons, 80_000);
    for (q, r) in queries.iter().zip(&one.results) {
        assert_eq!(&repo.search(q, 10).unwrap(), r);
    }
}

#[test]
fn search_rejects_bad_queries() {
    let repo = Repository::structural(structural_entries(10, 1)).unwrap();
    let q = Embedding::from(StructuralEmbedding::zeroed(128).unwrap());
    assert!(repo.search(&q, 0).is_err());
    assert!(repo
        .search(
            &Embedding::from(StructuralEmbedding::zeroed(256).unwrap()),
            1
        )
        .is_err());
    assert!(repo
        .search(
            &Embedding::from(SemanticEmbedding::new(vec![1.0]).unwrap()),
            1
        )
        .is_err());
    assert!(repo.batch_search(&[q], 1, 0).is_err());
}

#[test]
fn results_file_round_trip() {
    let repo = Repository::semantic(semantic_entries(30, 10)).unwrap();
    let queries = semantic_entries(4, 11);
    let ids: Vec<String> = queries.iter().map(|(id, _)| id.clone()).collect();
    let results: Vec<_> = queries
        .iter()
        .map(|(_, q)| repo.search(&Embedding::from(q.clone()), 5).unwrap())
        .collect();
    let mut buf = Vec::new();
    write_results(&ids, &results, &mut buf).unwrap();
    let back = read_results(buf.as_slice()).unwrap();
    assert_eq!(back.len(), 20);
    assert_eq!(back[0].rank, 1);
    assert_eq!(back[0].program_id, results[0].hits[0].program_id);
    assert!((back[0].score - results[0].hits[0].score).abs() <= 5e-7);
}

fn judgments() -> impl Strategy<Value = Vec<RelevanceJudgment>> {
    prop::collection::vec(prop::collection::vec(any::<bool>(), 0..30), 1..20).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, r)| RelevanceJudgment::new(format!("q{i}"), r))
            .collect()
    })
}

proptest! {
    #[test]
    fn metrics_live_in_unit_interval(js in judgments(), k in 1usize..40) {
        let map = eval::map_at_k(&js, k).unwrap();
        let mp = eval::mp_at_k(&js, k).unwrap();
        prop_assert!((0.0..=1.0).contains(&map));
        prop_assert!((0.0..=1.0).contains(&mp));
    }

    #[test]
    fn metrics_ignore_query_order(mut js in judgments(), k in 1usize..40, seed in any::<u64>()) {
        let map = eval::map_at_k(&js, k).unwrap();
        let mp = eval::mp_at_k(&js, k).unwrap();
        js.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!((eval::map_at_k(&js, k).unwrap() - map).abs() < 1e-12);
        prop_assert!((eval::mp_at_k(&js, k).unwrap() - mp).abs() < 1e-12);
    }

    #[test]
    fn precision_ignores_order_within_top_k(mut flags in prop::collection::vec(any::<bool>(), 1..30), seed in any::<u64>()) {
        let k = flags.len();
        let before = eval::precision_at_k(&flags, k);
        flags.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(eval::precision_at_k(&flags, k), before);
    }

    #[test]
    fn moving_a_hit_up_never_lowers_ap(flags in prop::collection::vec(any::<bool>(), 2..30), i in 0usize..29) {
        let i = i % (flags.len() - 1);
        let mut better = flags.clone();
        if !better[i] && better[i + 1] {
            better.swap(i, i + 1);
        }
        let k = flags.len();
        prop_assert!(eval::average_precision(&better, k) >= eval::average_precision(&flags, k) - 1e-15);
    }

    #[test]
    fn cliffs_delta_antisymmetric(a in prop::collection::vec(-100f64..100.0, 1..30), b in prop::collection::vec(-100f64..100.0, 1..30)) {
        let ab = eval::cliffs_delta(&a, &b).unwrap();
        let ba = eval::cliffs_delta(&b, &a).unwrap();
        prop_assert!((ab + ba).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&ab));
        // pairwise oracle
        let mut dom = 0i64;
        for x in &a {
            for y in &b {
                dom += (x > y) as i64 - (x < y) as i64;
            }
        }
        prop_assert!((ab - dom as f64 / (a.len() * b.len()) as f64).abs() < 1e-12);
    }

    #[test]
    fn matching_f1_is_harmonic_mean(pred in prop::collection::hash_set((0u8..10, 0u8..10), 0..40), truth in prop::collection::hash_set((0u8..10, 0u8..10), 0..40)) {
        let r = eval::matching_eval(&pred, &truth);
        prop_assert!((0.0..=1.0).contains(&r.f1));
        prop_assert!(r.f1 <= r.precision.max(r.recall) + 1e-15);
        prop_assert!(r.f1 >= r.precision.min(r.recall) - 1e-15);
    }
}

#[test]
fn judge_then_score_end_to_end() {
    let rec = |q: &str, rank, p: &str| ResultRecord {
        query_id: q.into(),
        rank,
        program_id: p.into(),
        score: 0.0,
    };
    let class_of: HashMap<String, String> = [("q", "A"), ("a1", "A"), ("a2", "A"), ("b1", "B")]
        .into_iter()
        .map(|(a, b)| (a.into(), b.into()))
        .collect();
    let results = vec![rec("q", 1, "a1"), rec("q", 2, "b1"), rec("q", 3, "a2")];
    let judged = eval::judge(&results, &class_of, None);
    let map = eval::map_at_k(&judged.judgments, 3).unwrap();
    assert!((map - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    assert!((eval::mp_at_k(&judged.judgments, 3).unwrap() - 2.0 / 3.0).abs() < 1e-15);
}
