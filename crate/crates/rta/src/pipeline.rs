//! End-to-end ranker: frozen LM query embedding, single-token item table,
//! optional adapter, optional gated recommender.

use crate::adapt::{AdaptSample, Adapter};
use crate::catalog::{ItemCatalog, ItemId};
use crate::data::RecSample;
use crate::eval::LatencyReport;
use crate::lm::Lm;
use crate::recsys::RecModel;
use crate::reindex::{score_items, Aggregator, ItemTable};
use crate::tokenizer::TokenId;

pub struct Pipeline {
    pub lm: Lm,
    pub aggregator: Aggregator,
    pub table: ItemTable,
    pub adapter: Option<Adapter>,
    pub recsys: Option<RecModel>,
}

impl Pipeline {
    pub fn new(lm: Lm, aggregator: Aggregator, table: ItemTable) -> Self {
        Pipeline { lm, aggregator, table, adapter: None, recsys: None }
    }

    pub fn with_adapter(mut self, adapter: Adapter) -> Self {
        self.adapter = Some(adapter);
        self
    }

    pub fn with_recsys(mut self, recsys: RecModel) -> Self {
        self.recsys = Some(recsys);
        self
    }

    /// Raw reindexed logits g for a context, before any adapter.
    pub fn base_logits(&self, context_tokens: &[TokenId]) -> Vec<f64> {
        let q = self.lm.context_embedding(context_tokens);
        score_items(&q, &self.table)
    }

    /// Adapted full-catalog logits for a context plus mentioned-item history.
    pub fn logits(&self, context_tokens: &[TokenId], context_items: &[ItemId]) -> Vec<f64> {
        let g = self.base_logits(context_tokens);
        match &self.adapter {
            None => g,
            Some(a) => {
                let gt = self.recsys.as_ref().map(|r| r.score_all(context_items));
                a.adjust(&g, gt.as_deref())
            }
        }
    }

    pub fn sample_logits(&self, s: &RecSample) -> Vec<f64> {
        self.logits(&s.context_tokens, &s.context_items)
    }

    /// Top-k items by adapted logit, ties broken by smaller id.
    pub fn rank(
        &self,
        context_tokens: &[TokenId],
        context_items: &[ItemId],
        k: usize,
    ) -> Vec<(ItemId, f64)> {
        top_k(&self.logits(context_tokens, context_items), k)
    }
}

/// Precompute adapter-training inputs for a sample set: base logits g, and
/// recommender logits g~ when a recommender is attached.
pub fn make_adapt_samples(
    lm: &Lm,
    table: &ItemTable,
    recsys: Option<&RecModel>,
    samples: &[RecSample],
) -> Vec<AdaptSample> {
    samples
        .iter()
        .map(|s| {
            let q = lm.context_embedding(&s.context_tokens);
            AdaptSample {
                g: score_items(&q, table),
                g_tilde: recsys.map(|r| r.score_all(&s.context_items)),
                target: s.target_item,
            }
        })
        .collect()
}

/// Median per-context wall clock of single-step ranking vs. constrained
/// generative top-k decoding on the same LM. The first two contexts are
/// warmup and excluded from timing.
pub fn latency_compare(
    pipeline: &Pipeline,
    catalog: &ItemCatalog,
    contexts: &[Vec<TokenId>],
    k: usize,
) -> LatencyReport {
    assert!(contexts.len() >= 20, "need at least 20 contexts");
    let warmup = 2;
    for ctx in &contexts[..warmup] {
        std::hint::black_box(top_k(&pipeline.logits(ctx, &[]), k));
        std::hint::black_box(pipeline.lm.generate_titles(catalog, ctx, k));
    }
    let timed = &contexts[warmup..];
    let median = |times: &mut Vec<u128>| {
        times.sort_unstable();
        times[times.len() / 2]
    };
    let mut gen_times: Vec<u128> = Vec::with_capacity(timed.len());
    let mut single_times: Vec<u128> = Vec::with_capacity(timed.len());
    for ctx in timed {
        let t = std::time::Instant::now();
        let generated = pipeline.lm.generate_titles(catalog, ctx, k);
        gen_times.push(t.elapsed().as_nanos());
        let t = std::time::Instant::now();
        let ranked = top_k(&pipeline.logits(ctx, &[]), k);
        single_times.push(t.elapsed().as_nanos());
        assert_eq!(generated.len(), ranked.len());
    }
    let baseline_median_ns = median(&mut gen_times);
    let candidate_median_ns = median(&mut single_times);
    LatencyReport {
        baseline_median_ns,
        candidate_median_ns,
        speedup: baseline_median_ns as f64 / candidate_median_ns.max(1) as f64,
    }
}

pub fn top_k(scores: &[f64], k: usize) -> Vec<(ItemId, f64)> {
    let mut ranked: Vec<(ItemId, f64)> = scores.iter().cloned().enumerate().collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    ranked.truncate(k.min(scores.len()));
    ranked
}
