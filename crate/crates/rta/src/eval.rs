//! Ranking metrics and evaluation harnesses shared by the CLI and the
//! acceptance suite.

use std::time::Instant;

use serde::Serialize;

use crate::catalog::ItemId;
use crate::data::RecSample;
use crate::RtaError;

/// 1-based rank of `target` under `scores`, with deterministic tie breaking
/// (equal scores rank by smaller item id). `excluded` items never count.
pub fn rank_of(scores: &[f64], target: ItemId, excluded: &[ItemId]) -> usize {
    let st = scores[target];
    let mut ahead = 0;
    for (i, &s) in scores.iter().enumerate() {
        if i == target || excluded.contains(&i) {
            continue;
        }
        if s > st || (s == st && i < target) {
            ahead += 1;
        }
    }
    ahead + 1
}

pub fn hit_at_k(rank: usize, k: usize) -> f64 {
    if rank <= k {
        1.0
    } else {
        0.0
    }
}

pub fn ndcg_at_k(rank: usize, k: usize) -> f64 {
    if rank <= k {
        1.0 / ((rank as f64 + 1.0).log2())
    } else {
        0.0
    }
}

/// Sample mean and its standard error (sample std / sqrt(n)).
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    assert!(n > 0, "mean of empty slice");
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var =
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct EvalSummary {
    pub hit: f64,
    pub hit_se: f64,
    pub ndcg: f64,
    pub ndcg_se: f64,
    pub n: usize,
}

/// HIT@k and NDCG@k of a scorer over samples. With `remove_repeated`, samples
/// whose target already appears in the context are dropped and context items
/// are excluded from the candidate pool.
pub fn evaluate<F>(
    samples: &[RecSample],
    k: usize,
    remove_repeated: bool,
    scorer: F,
) -> Result<EvalSummary, RtaError>
where
    F: Fn(&RecSample) -> Vec<f64>,
{
    let mut hits = Vec::new();
    let mut ndcgs = Vec::new();
    let mut dropped = 0usize;
    for s in samples {
        if remove_repeated && s.context_items.contains(&s.target_item) {
            dropped += 1;
            continue;
        }
        let scores = scorer(s);
        let excluded: &[ItemId] = if remove_repeated { &s.context_items } else { &[] };
        let rank = rank_of(&scores, s.target_item, excluded);
        hits.push(hit_at_k(rank, k));
        ndcgs.push(ndcg_at_k(rank, k));
    }
    if hits.is_empty() {
        return Err(RtaError::Data(format!(
            "no samples survived evaluation filtering ({dropped} of {} dropped as repeated)",
            samples.len()
        )));
    }
    let (hit, hit_se) = mean_se(&hits);
    let (ndcg, ndcg_se) = mean_se(&ndcgs);
    Ok(EvalSummary { hit, hit_se, ndcg, ndcg_se, n: hits.len() })
}

#[derive(Clone, Debug, Serialize)]
pub struct MetricRow {
    pub metric: String,
    pub mean: f64,
    pub standard_error: f64,
    pub n_samples: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct MetricsTable {
    pub pipeline: String,
    pub rows: Vec<MetricRow>,
}

/// H@5/N@5/H@10/N@10 of one scorer under the shared protocol.
pub fn metrics_table<F>(
    name: &str,
    samples: &[RecSample],
    remove_repeated: bool,
    scorer: F,
) -> Result<MetricsTable, RtaError>
where
    F: Fn(&RecSample) -> Vec<f64>,
{
    let mut rows = Vec::new();
    for k in [5usize, 10] {
        let s = evaluate(samples, k, remove_repeated, &scorer)?;
        rows.push(MetricRow {
            metric: format!("H@{k}"),
            mean: s.hit,
            standard_error: s.hit_se,
            n_samples: s.n,
        });
        rows.push(MetricRow {
            metric: format!("N@{k}"),
            mean: s.ndcg,
            standard_error: s.ndcg_se,
            n_samples: s.n,
        });
    }
    Ok(MetricsTable { pipeline: name.to_string(), rows })
}

pub fn metrics_csv(table: &MetricsTable) -> String {
    let mut out = String::from("pipeline,metric,mean,standard_error,n_samples\n");
    for r in &table.rows {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{}\n",
            table.pipeline, r.metric, r.mean, r.standard_error, r.n_samples
        ));
    }
    out
}

pub const PROBE_BUCKETS: [(u64, u64); 3] = [(0, 10), (10, 100), (100, u64::MAX)];

pub fn bucket_label(bucket: usize) -> &'static str {
    match bucket {
        0 => "cold [0,10)",
        1 => "warm [10,100)",
        _ => "popular [100,+inf)",
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ProbeBucket {
    pub label: String,
    pub lo: u64,
    pub hi: u64,
    pub hit: f64,
    pub n: usize,
}

/// HIT@k on item-retrieval samples, bucketed by the target's interaction
/// count (pass the platform counts for the standard probe).
pub fn l2i_probe<F>(
    samples: &[RecSample],
    counts: &[u64],
    k: usize,
    scorer: F,
) -> Vec<ProbeBucket>
where
    F: Fn(&RecSample) -> Vec<f64>,
{
    let mut hits: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for s in samples {
        let count = counts[s.target_item];
        let bucket = PROBE_BUCKETS
            .iter()
            .position(|&(lo, hi)| count >= lo && count < hi)
            .expect("buckets cover all counts");
        let scores = scorer(s);
        let rank = rank_of(&scores, s.target_item, &[]);
        hits[bucket].push(hit_at_k(rank, k));
    }
    PROBE_BUCKETS
        .iter()
        .enumerate()
        .map(|(i, &(lo, hi))| {
            let (hit, _) = if hits[i].is_empty() { (0.0, 0.0) } else { mean_se(&hits[i]) };
            ProbeBucket { label: bucket_label(i).to_string(), lo, hi, hit, n: hits[i].len() }
        })
        .collect()
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    assert!(xs.len() >= 2, "spearman needs at least two points");
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    pearson(&rx, &ry)
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        cov += (x - mx) * (y - my);
        vx += (x - mx) * (x - mx);
        vy += (y - my) * (y - my);
    }
    cov / (vx.sqrt() * vy.sqrt())
}

/// Empirical target distribution over the catalog, optionally add-1 smoothed.
pub fn empirical_distribution(targets: &[ItemId], n_items: usize, add_one: bool) -> Vec<f64> {
    let mut counts = vec![0.0; n_items];
    for &t in targets {
        counts[t] += 1.0;
    }
    let bump = if add_one { 1.0 } else { 0.0 };
    let total = targets.len() as f64 + bump * n_items as f64;
    counts.into_iter().map(|c| (c + bump) / total).collect()
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct LatencyReport {
    pub baseline_median_ns: u128,
    pub candidate_median_ns: u128,
    pub speedup: f64,
}

/// Median wall-clock per call of two closures over `iters` calls each.
pub fn latency_bench<A, B>(iters: usize, mut baseline: A, mut candidate: B) -> LatencyReport
where
    A: FnMut(),
    B: FnMut(),
{
    assert!(iters > 0);
    let time = |f: &mut dyn FnMut()| -> u128 {
        let mut samples: Vec<u128> = (0..iters)
            .map(|_| {
                let t = Instant::now();
                f();
                t.elapsed().as_nanos()
            })
            .collect();
        samples.sort_unstable();
        samples[samples.len() / 2]
    };
    let baseline_median_ns = time(&mut baseline);
    let candidate_median_ns = time(&mut candidate);
    LatencyReport {
        baseline_median_ns,
        candidate_median_ns,
        speedup: baseline_median_ns as f64 / candidate_median_ns.max(1) as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SampleKind;

    fn sample(target: ItemId, context_items: Vec<ItemId>) -> RecSample {
        RecSample {
            context_tokens: vec![],
            target_item: target,
            kind: SampleKind::L2R,
            period: 0,
            context_items,
        }
    }

    #[test]
    fn rank_brute_force_agreement() {
        let scores = vec![0.3, 0.9, 0.9, -1.0, 0.3];
        // oracle: sort (score desc, id asc) and find position
        for target in 0..scores.len() {
            let mut order: Vec<usize> = (0..scores.len()).collect();
            order.sort_by(|&a, &b| {
                scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b))
            });
            let oracle = order.iter().position(|&i| i == target).unwrap() + 1;
            assert_eq!(rank_of(&scores, target, &[]), oracle, "target {target}");
        }
    }

    #[test]
    fn rank_with_exclusions() {
        let scores = vec![5.0, 4.0, 3.0];
        assert_eq!(rank_of(&scores, 2, &[]), 3);
        assert_eq!(rank_of(&scores, 2, &[0]), 2);
        assert_eq!(rank_of(&scores, 2, &[0, 1]), 1);
    }

    #[test]
    fn metric_values() {
        assert_eq!(hit_at_k(1, 10), 1.0);
        assert_eq!(hit_at_k(10, 10), 1.0);
        assert_eq!(hit_at_k(11, 10), 0.0);
        assert!((ndcg_at_k(1, 10) - 1.0).abs() < 1e-12);
        assert!((ndcg_at_k(2, 10) - 1.0 / 3.0f64.log2()).abs() < 1e-12);
        assert!((ndcg_at_k(3, 10) - 0.5).abs() < 1e-12);
        assert_eq!(ndcg_at_k(11, 10), 0.0);
    }

    #[test]
    fn mean_se_matches_hand_computation() {
        let v = [1.0, 2.0, 3.0, 4.0];
        let (m, se) = mean_se(&v);
        assert!((m - 2.5).abs() < 1e-12);
        // sample variance = 5/3; se = sqrt(5/3/4)
        assert!((se - (5.0 / 3.0 / 4.0f64).sqrt()).abs() < 1e-12);
        let (m1, se1) = mean_se(&[7.0]);
        assert_eq!((m1, se1), (7.0, 0.0));
    }

    #[test]
    fn evaluate_remove_repeated_semantics() {
        // scorer favors item 0 always
        let scorer = |_: &RecSample| vec![3.0, 2.0, 1.0];
        let samples = vec![
            sample(1, vec![1]), // dropped: target repeated in context
            sample(1, vec![0]), // item 0 excluded -> target ranks 1st
            sample(1, vec![]),  // target ranks 2nd
        ];
        let with = evaluate(&samples, 1, true, scorer).unwrap();
        assert_eq!(with.n, 2);
        assert!((with.hit - 0.5).abs() < 1e-12);
        let without = evaluate(&samples, 1, false, scorer).unwrap();
        assert_eq!(without.n, 3);
        assert!((without.hit - 0.0).abs() < 1e-12);
        // se of two {0,1} hits is 0.5
        assert!((with.hit_se - 0.5).abs() < 1e-12);
    }

    #[test]
    fn evaluate_errors_when_all_dropped() {
        let samples = vec![sample(1, vec![1]), sample(0, vec![0])];
        let err = evaluate(&samples, 1, true, |_| vec![1.0, 0.0]).unwrap_err();
        assert!(err.to_string().contains("2 of 2"), "{err}");
    }

    #[test]
    fn ndcg_never_exceeds_hit() {
        for rank in 1..8usize {
            for k in 1..8usize {
                assert!(ndcg_at_k(rank, k) <= hit_at_k(rank, k) + 1e-15);
            }
        }
    }

    #[test]
    fn metrics_table_shape_and_csv() {
        let samples = vec![sample(0, vec![]), sample(1, vec![])];
        let t = metrics_table("base", &samples, false, |_| vec![2.0, 1.0, 0.0]).unwrap();
        assert_eq!(t.rows.len(), 4);
        assert_eq!(
            t.rows.iter().map(|r| r.metric.as_str()).collect::<Vec<_>>(),
            vec!["H@5", "N@5", "H@10", "N@10"]
        );
        let csv = metrics_csv(&t);
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.lines().nth(1).unwrap().starts_with("base,H@5,"));
    }

    #[test]
    fn probe_buckets_assignment() {
        let counts = vec![0, 9, 10, 99, 100, 5000];
        let samples: Vec<RecSample> = (0..6).map(|i| sample(i, vec![])).collect();
        // scorer ranks the target first only for even ids
        let probe = l2i_probe(&samples, &counts, 5, |s| {
            let mut v = vec![0.0; 6];
            if s.target_item % 2 == 0 {
                v[s.target_item] = 10.0;
            } else {
                v[(s.target_item + 1) % 6] = 10.0;
                // push target far down: give everything else a positive score
                for (i, x) in v.iter_mut().enumerate() {
                    if i != s.target_item {
                        *x += 1.0;
                    }
                }
            }
            v
        });
        assert_eq!(probe[0].n, 2); // counts 0, 9
        assert_eq!(probe[1].n, 2); // counts 10, 99
        assert_eq!(probe[2].n, 2); // counts 100, 5000
        assert_eq!(probe[0].lo, 0);
        assert_eq!(probe[2].hi, u64::MAX);
    }

    #[test]
    fn spearman_known_values() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y_up = [10.0, 20.0, 30.0, 40.0];
        let y_down = [4.0, 3.0, 2.0, 1.0];
        assert!((spearman(&x, &y_up) - 1.0).abs() < 1e-12);
        assert!((spearman(&x, &y_down) + 1.0).abs() < 1e-12);
        // hand-computed example with one swap: ranks (1,2,3,4) vs (1,3,2,4)
        // rho = 1 - 6*sum(d^2)/(n(n^2-1)) = 1 - 6*2/60 = 0.8
        let y_swap = [1.0, 3.0, 2.0, 4.0];
        assert!((spearman(&x, &y_swap) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn spearman_handles_ties() {
        // monotone but with a tie in y: still positive, below 1
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [1.0, 2.0, 2.0, 3.0];
        let rho = spearman(&x, &y);
        assert!(rho > 0.9 && rho <= 1.0);
        // invariance under monotone transform of x
        let x2: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        assert!((spearman(&x2, &y) - rho).abs() < 1e-12);
    }

    #[test]
    fn empirical_distribution_sums_to_one() {
        let d = empirical_distribution(&[0, 0, 1], 3, false);
        assert_eq!(d, vec![2.0 / 3.0, 1.0 / 3.0, 0.0]);
        let s = empirical_distribution(&[0, 0, 1], 3, true);
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(s, vec![0.5, 1.0 / 3.0, 1.0 / 6.0]);
    }

    #[test]
    fn latency_bench_orders_fast_and_slow() {
        let rep = latency_bench(
            9,
            || {
                let mut acc = 0.0f64;
                for i in 0..200_000 {
                    acc += (i as f64).sqrt();
                }
                std::hint::black_box(acc);
            },
            || {
                let mut acc = 0.0f64;
                for i in 0..1_000 {
                    acc += (i as f64).sqrt();
                }
                std::hint::black_box(acc);
            },
        );
        assert!(rep.speedup > 1.0, "speedup {}", rep.speedup);
        assert!(rep.baseline_median_ns > rep.candidate_median_ns);
    }
}
