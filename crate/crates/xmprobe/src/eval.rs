//! Retrieval evaluation: ranking a pool of visual vectors by dot product,
//! instance and category recall at k, fold aggregation, and the analytic
//! random baselines.
//!
//! Scores are computed in `f64` regardless of the probe's training precision;
//! exact ties are broken by ascending record id so every report is
//! reproducible.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::seeds::{mix, SALT_BASELINE_MC};

/// One vector retrievable at evaluation time.
#[derive(Debug, Clone)]
pub struct PoolEntry {
    pub record_id: u64,
    pub category_id: u64,
    pub vector: Vec<f64>,
}

/// The set of all visual vectors retrieved against.
#[derive(Debug, Clone)]
pub struct EvalPool {
    entries: Vec<PoolEntry>,
    d_v: usize,
}

impl EvalPool {
    /// Collects the visual vectors of the given records, sorted by record id.
    pub fn from_dataset(dataset: &Dataset, ids: &[u64]) -> Result<EvalPool> {
        if ids.is_empty() {
            return Err(Error::Config("evaluation pool must be nonempty".into()));
        }
        let mut sorted = ids.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != ids.len() {
            return Err(Error::Config("evaluation pool ids must be unique".into()));
        }
        let mut entries = Vec::with_capacity(sorted.len());
        for id in sorted {
            let index = dataset.index_of(id)?;
            entries.push(PoolEntry {
                record_id: id,
                category_id: dataset.records[index].category_id,
                vector: dataset.vis_vector::<f64>(index),
            });
        }
        Ok(EvalPool {
            d_v: dataset.header.d_v,
            entries,
        })
    }

    pub fn from_entries(entries: Vec<PoolEntry>) -> Result<EvalPool> {
        let d_v = entries.first().map(|e| e.vector.len()).ok_or_else(|| {
            Error::Config("evaluation pool must be nonempty".into())
        })?;
        let mut ids: Vec<u64> = entries.iter().map(|e| e.record_id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != entries.len() {
            return Err(Error::Config("evaluation pool ids must be unique".into()));
        }
        if entries.iter().any(|e| e.vector.len() != d_v) {
            return Err(Error::shape("EvalPool::from_entries", d_v.to_string(), "ragged"));
        }
        Ok(EvalPool { entries, d_v })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn d_v(&self) -> usize {
        self.d_v
    }

    pub fn entries(&self) -> &[PoolEntry] {
        &self.entries
    }

    fn contains(&self, record_id: u64) -> bool {
        self.entries.iter().any(|e| e.record_id == record_id)
    }
}

/// One evaluation query: the estimate produced from a record's language side.
#[derive(Debug, Clone)]
pub struct Query {
    pub record_id: u64,
    pub category_id: u64,
    pub estimate: Vec<f64>,
}

/// Instance and category recall at one cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KRecall {
    pub k: usize,
    pub ir: f64,
    pub cr: f64,
}

/// Top-`k` record ids for one estimate, by descending dot product.
/// Exact score ties rank the lower record id first.
pub fn rank_pool(estimate: &[f64], pool: &EvalPool, k: usize) -> Result<Vec<u64>> {
    if k == 0 || k > pool.len() {
        return Err(Error::Config(format!(
            "k must lie in 1..={} (got {k})",
            pool.len()
        )));
    }
    if estimate.len() != pool.d_v {
        return Err(Error::shape(
            "rank_pool",
            pool.d_v.to_string(),
            estimate.len().to_string(),
        ));
    }
    let mut scored: Vec<(f64, u64)> = pool
        .entries
        .iter()
        .map(|e| (dot64(estimate, &e.vector), e.record_id))
        .collect();
    scored.sort_unstable_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .expect("scores are finite")
            .then(a.1.cmp(&b.1))
    });
    Ok(scored[..k].iter().map(|&(_, id)| id).collect())
}

fn dot64(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Computes IR@k and CR@k for each cutoff in `ks`.
///
/// IR@k counts queries whose own paired vector appears in the top `k`; CR@k
/// counts queries for which any top-`k` vector shares the query's category.
pub fn compute_recalls(queries: &[Query], pool: &EvalPool, ks: &[usize]) -> Result<Vec<KRecall>> {
    if queries.is_empty() {
        return Err(Error::Config("no evaluation queries".into()));
    }
    if ks.is_empty() {
        return Err(Error::Config("empty k list".into()));
    }
    let max_k = *ks.iter().max().expect("nonempty");
    if max_k > pool.len() {
        return Err(Error::Config(format!(
            "k={} exceeds pool size {}",
            max_k,
            pool.len()
        )));
    }
    for q in queries {
        if !pool.contains(q.record_id) {
            return Err(Error::Data {
                record_id: q.record_id,
                message: "query's paired vector is missing from the evaluation pool".into(),
            });
        }
    }

    let mut ir_hits = vec![0usize; ks.len()];
    let mut cr_hits = vec![0usize; ks.len()];
    for q in queries {
        let top = rank_pool(&q.estimate, pool, max_k)?;
        let categories: Vec<u64> = top
            .iter()
            .map(|id| {
                pool.entries
                    .iter()
                    .find(|e| e.record_id == *id)
                    .expect("ranked ids come from the pool")
                    .category_id
            })
            .collect();
        for (slot, &k) in ks.iter().enumerate() {
            if top[..k].contains(&q.record_id) {
                ir_hits[slot] += 1;
            }
            if categories[..k].contains(&q.category_id) {
                cr_hits[slot] += 1;
            }
        }
    }
    let n = queries.len() as f64;
    Ok(ks
        .iter()
        .enumerate()
        .map(|(slot, &k)| KRecall {
            k,
            ir: ir_hits[slot] as f64 / n,
            cr: cr_hits[slot] as f64 / n,
        })
        .collect())
}

/// Mean and population standard deviation of one metric across folds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateCell {
    pub mean: f64,
    pub std: f64,
}

impl AggregateCell {
    pub fn from_values(values: &[f64]) -> AggregateCell {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        AggregateCell {
            mean,
            std: var.max(0.0).sqrt(),
        }
    }

    /// Table convention: percent with one decimal, e.g. `12.0 ± 1.4`.
    pub fn format_percent(&self) -> String {
        format!("{:.1} ± {:.1}", self.mean * 100.0, self.std * 100.0)
    }
}

/// Per-fold recall table for one evaluation section (seen, unseen, ...).
pub type SectionRecalls = Vec<KRecall>;

/// One fold's full evaluation output, by section name.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldEval {
    pub fold_index: usize,
    /// Section name ("seen", "unseen", "unseen_adjective", ...) to recalls.
    pub sections: BTreeMap<String, SectionRecalls>,
}

/// Aggregated evaluation across folds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub ks: Vec<usize>,
    pub folds: Vec<FoldEval>,
    /// Keys like `unseen/ir@1`, values aggregated over folds.
    pub aggregate: BTreeMap<String, AggregateCell>,
}

/// Aggregates per-fold sections into mean ± std cells.
///
/// Sections present in only some folds are aggregated over the folds that
/// have them (adjective subsets can be empty in small folds).
pub fn aggregate_folds(folds: Vec<FoldEval>, ks: &[usize]) -> Result<EvalReport> {
    if folds.is_empty() {
        return Err(Error::Config("no folds to aggregate".into()));
    }
    let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for fold in &folds {
        for (section, recalls) in &fold.sections {
            for r in recalls {
                values
                    .entry(format!("{section}/ir@{}", r.k))
                    .or_default()
                    .push(r.ir);
                values
                    .entry(format!("{section}/cr@{}", r.k))
                    .or_default()
                    .push(r.cr);
            }
        }
    }
    let aggregate = values
        .into_iter()
        .map(|(key, vals)| (key, AggregateCell::from_values(&vals)))
        .collect();
    Ok(EvalReport {
        ks: ks.to_vec(),
        folds,
        aggregate,
    })
}

/// Random-retrieval reference values for a pool.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RandomBaseline {
    /// Exact: a uniformly random ranking hits the instance with p = k/N.
    pub ir: f64,
    /// Monte Carlo estimate over random rankings of this pool.
    pub cr: f64,
    /// Binomial standard error of the CR estimate.
    pub cr_std_err: f64,
    pub trials: usize,
}

/// Computes the analytic IR@k baseline and a seeded Monte Carlo CR@k
/// baseline from the pool's category histogram.
pub fn expected_random_recall(
    pool: &EvalPool,
    k: usize,
    trials: usize,
    seed: u64,
) -> Result<RandomBaseline> {
    let n = pool.len();
    if k == 0 || k > n {
        return Err(Error::Config(format!("k must lie in 1..={n} (got {k})")));
    }
    if trials < 10_000 {
        return Err(Error::Config(format!(
            "Monte Carlo baseline needs at least 10000 trials (got {trials})"
        )));
    }
    let categories: Vec<u64> = pool.entries.iter().map(|e| e.category_id).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, SALT_BASELINE_MC, 0));
    let mut hits = 0usize;
    let mut indices: Vec<usize> = (0..n).collect();
    for _ in 0..trials {
        let query = rng.random_range(0..n);
        let want = categories[query];
        // Partial Fisher-Yates: only the top k of the ranking matters.
        for slot in 0..k {
            let pick = rng.random_range(slot..n);
            indices.swap(slot, pick);
        }
        if indices[..k].iter().any(|&i| categories[i] == want) {
            hits += 1;
        }
    }
    let cr = hits as f64 / trials as f64;
    Ok(RandomBaseline {
        ir: k as f64 / n as f64,
        cr,
        cr_std_err: (cr * (1.0 - cr) / trials as f64).sqrt(),
        trials,
    })
}

/// Closed-form chance that a random top-`k` contains at least one of the
/// `same_category` pool members, in a pool of `n`: `1 - C(n-m, k) / C(n, k)`.
pub fn analytic_category_chance(n: usize, same_category: usize, k: usize) -> f64 {
    if same_category + k > n {
        return 1.0;
    }
    let mut miss = 1.0f64;
    for i in 0..k {
        miss *= (n - same_category - i) as f64 / (n - i) as f64;
    }
    1.0 - miss
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn pool_from(vectors: &[(u64, u64, &[f64])]) -> EvalPool {
        EvalPool::from_entries(
            vectors
                .iter()
                .map(|(id, cat, v)| PoolEntry {
                    record_id: *id,
                    category_id: *cat,
                    vector: v.to_vec(),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn singleton_pool_always_returns_its_id() {
        let pool = pool_from(&[(7, 1, &[0.3, -0.2])]);
        assert_eq!(rank_pool(&[5.0, 5.0], &pool, 1).unwrap(), vec![7]);
        assert_eq!(rank_pool(&[-5.0, 0.0], &pool, 1).unwrap(), vec![7]);
    }

    #[test]
    fn orthonormal_pool_retrieves_the_matching_basis_vector() {
        let pool = pool_from(&[
            (0, 0, &[1.0, 0.0, 0.0, 0.0]),
            (1, 1, &[0.0, 1.0, 0.0, 0.0]),
            (2, 2, &[0.0, 0.0, 1.0, 0.0]),
            (3, 3, &[0.0, 0.0, 0.0, 1.0]),
        ]);
        assert_eq!(rank_pool(&[0.0, 0.0, 1.0, 0.0], &pool, 1).unwrap(), vec![2]);
    }

    #[test]
    fn exact_ties_rank_the_lower_record_id_first() {
        let pool = pool_from(&[(9, 0, &[1.0, 0.0]), (4, 1, &[1.0, 0.0])]);
        assert_eq!(rank_pool(&[1.0, 0.5], &pool, 2).unwrap(), vec![4, 9]);
    }

    #[test]
    fn k_out_of_range_is_a_configuration_error() {
        let pool = pool_from(&[(0, 0, &[1.0]), (1, 0, &[2.0])]);
        assert!(matches!(rank_pool(&[1.0], &pool, 3), Err(Error::Config(_))));
        assert!(matches!(rank_pool(&[1.0], &pool, 0), Err(Error::Config(_))));
    }

    /// Exhaustive O(N^2) reference: repeatedly scan for the best remaining
    /// entry instead of sorting.
    fn oracle_recalls(queries: &[Query], pool: &EvalPool, k: usize) -> (f64, f64) {
        let mut ir = 0usize;
        let mut cr = 0usize;
        for q in queries {
            let mut used = vec![false; pool.len()];
            let mut top: Vec<&PoolEntry> = Vec::new();
            for _ in 0..k {
                let mut best: Option<(usize, f64)> = None;
                for (i, e) in pool.entries().iter().enumerate() {
                    if used[i] {
                        continue;
                    }
                    let s = dot64(&q.estimate, &e.vector);
                    let better = match best {
                        None => true,
                        Some((bi, bs)) => {
                            s > bs || (s == bs && e.record_id < pool.entries()[bi].record_id)
                        }
                    };
                    if better {
                        best = Some((i, s));
                    }
                }
                let (i, _) = best.unwrap();
                used[i] = true;
                top.push(&pool.entries()[i]);
            }
            if top.iter().any(|e| e.record_id == q.record_id) {
                ir += 1;
            }
            if top.iter().any(|e| e.category_id == q.category_id) {
                cr += 1;
            }
        }
        (ir as f64 / queries.len() as f64, cr as f64 / queries.len() as f64)
    }

    #[test]
    fn engineered_pairs_match_the_exhaustive_oracle() {
        let pool = pool_from(&[
            (0, 0, &[1.0, 0.0]),
            (1, 0, &[0.9, 0.1]),
            (2, 1, &[0.0, 1.0]),
            (3, 1, &[0.1, 0.9]),
        ]);
        // Queries: 0 retrieves itself; 1 retrieves 0 (category hit);
        // 2 retrieves itself; 3 retrieves 2 (category hit).
        let queries: Vec<Query> = vec![
            Query { record_id: 0, category_id: 0, estimate: vec![1.0, 0.0] },
            Query { record_id: 1, category_id: 0, estimate: vec![1.0, 0.05] },
            Query { record_id: 2, category_id: 1, estimate: vec![0.0, 1.0] },
            Query { record_id: 3, category_id: 1, estimate: vec![0.05, 1.0] },
        ];
        for k in [1usize, 2] {
            let got = compute_recalls(&queries, &pool, &[k]).unwrap();
            let (ir, cr) = oracle_recalls(&queries, &pool, k);
            assert_eq!(got[0].ir, ir, "IR@{k}");
            assert_eq!(got[0].cr, cr, "CR@{k}");
        }
        let at1 = compute_recalls(&queries, &pool, &[1]).unwrap();
        assert_relative_eq!(at1[0].ir, 0.5);
        assert_relative_eq!(at1[0].cr, 1.0);
    }

    #[test]
    fn singleton_categories_make_both_recalls_equal() {
        let pool = pool_from(&[
            (0, 10, &[1.0, 0.2]),
            (1, 11, &[-0.3, 1.0]),
            (2, 12, &[0.5, -0.5]),
        ]);
        let queries: Vec<Query> = pool
            .entries()
            .iter()
            .map(|e| Query {
                record_id: e.record_id,
                category_id: e.category_id,
                estimate: vec![e.vector[0] + 0.4, e.vector[1] - 0.1],
            })
            .collect();
        for k in 1..=3 {
            let got = compute_recalls(&queries, &pool, &[k]).unwrap();
            assert_eq!(got[0].ir, got[0].cr, "k={k}");
        }
    }

    #[test]
    fn full_pool_cutoff_gives_perfect_recall() {
        let pool = pool_from(&[(0, 0, &[1.0]), (1, 0, &[2.0]), (2, 1, &[3.0])]);
        let queries = vec![Query { record_id: 1, category_id: 0, estimate: vec![-1.0] }];
        let got = compute_recalls(&queries, &pool, &[3]).unwrap();
        assert_eq!(got[0].ir, 1.0);
        assert_eq!(got[0].cr, 1.0);
    }

    #[test]
    fn missing_query_vector_names_the_record() {
        let pool = pool_from(&[(0, 0, &[1.0]), (1, 0, &[2.0])]);
        let queries = vec![Query { record_id: 9, category_id: 0, estimate: vec![1.0] }];
        match compute_recalls(&queries, &pool, &[1]) {
            Err(Error::Data { record_id, .. }) => assert_eq!(record_id, 9),
            other => panic!("expected data error, got {other:?}"),
        }
    }

    #[test]
    fn aggregation_formats_match_the_table_convention() {
        let equal = AggregateCell::from_values(&[0.12; 5]);
        assert_eq!(equal.format_percent(), "12.0 ± 0.0");

        let spread = AggregateCell::from_values(&[0.10, 0.11, 0.12, 0.13, 0.14]);
        assert_relative_eq!(spread.mean, 0.12, epsilon = 1e-12);
        assert_relative_eq!(spread.std, 0.0141421356, epsilon = 1e-9);
        assert_eq!(spread.format_percent(), "12.0 ± 1.4");
    }

    #[test]
    fn aggregate_folds_builds_per_section_cells() {
        let mk = |fold_index: usize, ir: f64| FoldEval {
            fold_index,
            sections: [(
                "unseen".to_string(),
                vec![KRecall { k: 1, ir, cr: ir + 0.5 }],
            )]
            .into_iter()
            .collect(),
        };
        let report = aggregate_folds(vec![mk(0, 0.10), mk(1, 0.14)], &[1]).unwrap();
        let ir = &report.aggregate["unseen/ir@1"];
        assert_relative_eq!(ir.mean, 0.12, epsilon = 1e-12);
        let cr = &report.aggregate["unseen/cr@1"];
        assert_relative_eq!(cr.mean, 0.62, epsilon = 1e-12);
    }

    #[test]
    fn random_ir_baseline_is_exact() {
        let entries: Vec<PoolEntry> = (0..5)
            .map(|i| PoolEntry { record_id: i, category_id: i, vector: vec![i as f64] })
            .collect();
        let pool = EvalPool::from_entries(entries).unwrap();
        let base = expected_random_recall(&pool, 5, 10_000, 3).unwrap();
        assert_eq!(base.ir, 1.0);
        let base1 = expected_random_recall(&pool, 1, 10_000, 3).unwrap();
        assert_relative_eq!(base1.ir, 0.2);
    }

    #[test]
    fn two_equal_categories_match_the_closed_form() {
        // Ten vectors, two categories of five: CR@1 chance is exactly 1/2.
        let entries: Vec<PoolEntry> = (0..10)
            .map(|i| PoolEntry { record_id: i, category_id: i / 5, vector: vec![i as f64] })
            .collect();
        let pool = EvalPool::from_entries(entries).unwrap();
        assert_relative_eq!(analytic_category_chance(10, 5, 1), 0.5);
        let base = expected_random_recall(&pool, 1, 40_000, 11).unwrap();
        assert!(
            (base.cr - 0.5).abs() <= 3.0 * base.cr_std_err,
            "MC {} vs closed form 0.5 (SE {})",
            base.cr,
            base.cr_std_err
        );
    }

    #[test]
    fn skewed_histogram_matches_the_closed_form() {
        // 12 vectors: one category of 9, one of 3.
        let entries: Vec<PoolEntry> = (0..12)
            .map(|i| PoolEntry {
                record_id: i,
                category_id: if i < 9 { 0 } else { 1 },
                vector: vec![i as f64],
            })
            .collect();
        let pool = EvalPool::from_entries(entries).unwrap();
        let k = 2;
        let expected = (9.0 / 12.0) * analytic_category_chance(12, 9, k)
            + (3.0 / 12.0) * analytic_category_chance(12, 3, k);
        let base = expected_random_recall(&pool, k, 60_000, 29).unwrap();
        assert!(
            (base.cr - expected).abs() <= 4.0 * base.cr_std_err,
            "MC {} vs closed form {expected}",
            base.cr
        );
    }

    proptest! {
        /// Monotone in k, and category recall dominates instance recall.
        #[test]
        fn recalls_are_monotone_and_dominated(seed in 0u64..300) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = 12usize;
            let entries: Vec<PoolEntry> = (0..n as u64)
                .map(|i| PoolEntry {
                    record_id: i,
                    category_id: i % 4,
                    vector: (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
                })
                .collect();
            let pool = EvalPool::from_entries(entries).unwrap();
            let queries: Vec<Query> = pool
                .entries()
                .iter()
                .map(|e| Query {
                    record_id: e.record_id,
                    category_id: e.category_id,
                    estimate: (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
                })
                .collect();
            let ks: Vec<usize> = (1..=n).collect();
            let recalls = compute_recalls(&queries, &pool, &ks).unwrap();
            for w in recalls.windows(2) {
                prop_assert!(w[1].ir >= w[0].ir);
                prop_assert!(w[1].cr >= w[0].cr);
            }
            for r in &recalls {
                prop_assert!(r.cr >= r.ir);
            }
            prop_assert_eq!(recalls[n - 1].ir, 1.0);
        }
    }
}
