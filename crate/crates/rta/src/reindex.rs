//! The reindex step: collapse a title's token-embedding sequence into one
//! item vector, train the aggregator contrastively against the frozen LM's
//! query embeddings, and score the whole catalog in a single matrix-vector
//! product.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{ItemCatalog, ItemId};
use crate::checkpoint::Checkpoint;
use crate::data::RecSample;
use crate::lm::{Lm, OptimizerConfig, TrainReport};
use crate::tensor::{Adam, Array, Tape, TensorId};
use crate::RtaError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AggregatorKind {
    /// free out-of-vocabulary embedding per item, ignores the title tokens
    Embed,
    /// softmax position weights + linear projection
    Weighted,
    /// single-layer transformer encoder read out at a learned CLS position
    Trm,
    /// bidirectional single-layer GRU, concatenated last states projected to d
    Rnn,
}

impl AggregatorKind {
    pub fn tag(self) -> f64 {
        match self {
            AggregatorKind::Embed => 0.0,
            AggregatorKind::Weighted => 1.0,
            AggregatorKind::Trm => 2.0,
            AggregatorKind::Rnn => 3.0,
        }
    }

    pub fn from_tag(tag: f64) -> Result<Self, RtaError> {
        match tag as i64 {
            0 => Ok(AggregatorKind::Embed),
            1 => Ok(AggregatorKind::Weighted),
            2 => Ok(AggregatorKind::Trm),
            3 => Ok(AggregatorKind::Rnn),
            other => Err(RtaError::Checkpoint(format!("unknown aggregator tag {other}"))),
        }
    }
}

pub const MAX_TITLE_LEN: usize = 24;

#[derive(Clone, Debug)]
pub struct Aggregator {
    pub kind: AggregatorKind,
    pub d: usize,
    pub gru_hidden: usize,
    pub n_items: usize,
    params: Vec<Array>,
}

/// Single-token item representations, row i = the reindexed embedding of
/// item i.
#[derive(Clone, Debug)]
pub struct ItemTable {
    pub vectors: Array,
}

impl ItemTable {
    pub fn n_items(&self) -> usize {
        self.vectors.rows
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NegStrategy {
    InBatch,
    Uniform,
    Mixed,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct NegativeSet {
    pub strategy: NegStrategy,
    pub n_negatives: usize,
}

impl Default for NegativeSet {
    fn default() -> Self {
        NegativeSet { strategy: NegStrategy::Mixed, n_negatives: 32 }
    }
}

const GRU_GATE_NAMES: [&str; 9] = ["wz", "uz", "bz", "wr", "ur", "br", "wc", "uc", "bc"];

impl Aggregator {
    pub fn new(kind: AggregatorKind, d: usize, n_items: usize, seed: u64) -> Self {
        Self::with_gru_hidden(kind, d, n_items, seed, 64)
    }

    pub fn with_gru_hidden(
        kind: AggregatorKind,
        d: usize,
        n_items: usize,
        seed: u64,
        gru_hidden: usize,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = 0.08;
        let params = match kind {
            AggregatorKind::Embed => vec![Array::randn(&mut rng, n_items, d, std)],
            AggregatorKind::Weighted => {
                let mut proj = Array::zeros(d, d);
                for i in 0..d {
                    *proj.at_mut(i, i) = 1.0;
                }
                vec![Array::zeros(1, MAX_TITLE_LEN), proj]
            }
            AggregatorKind::Trm => {
                let mut v = vec![
                    Array::randn(&mut rng, 1, d, std),                  // cls
                    Array::randn(&mut rng, MAX_TITLE_LEN + 1, d, std),  // pos
                    Array::full(1, d, 1.0),
                    Array::zeros(1, d),
                ];
                for _ in 0..4 {
                    v.push(Array::randn(&mut rng, d, d, std)); // wq wk wv wo
                }
                v.push(Array::full(1, d, 1.0));
                v.push(Array::zeros(1, d));
                v.push(Array::randn(&mut rng, d, 4 * d, std));
                v.push(Array::zeros(1, 4 * d));
                v.push(Array::randn(&mut rng, 4 * d, d, std));
                v.push(Array::zeros(1, d));
                v.push(Array::full(1, d, 1.0));
                v.push(Array::zeros(1, d));
                v
            }
            AggregatorKind::Rnn => {
                let h = gru_hidden;
                let mut v = Vec::new();
                for _dir in 0..2 {
                    for name in GRU_GATE_NAMES {
                        let a = if name.starts_with('w') {
                            Array::randn(&mut rng, d, h, std)
                        } else if name.starts_with('u') {
                            Array::randn(&mut rng, h, h, std)
                        } else {
                            Array::zeros(1, h)
                        };
                        v.push(a);
                    }
                }
                v.push(Array::randn(&mut rng, 2 * h, d, std)); // projection
                v
            }
        };
        Aggregator { kind, d, gru_hidden, n_items, params }
    }

    pub fn params(&self) -> &[Array] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Vec<Array> {
        &mut self.params
    }

    pub fn leaf_params(&self, tape: &mut Tape) -> Vec<TensorId> {
        self.params.iter().map(|p| tape.leaf(p.clone())).collect()
    }

    /// Tape forward from title token embeddings `[T, d]` to `[1, d]`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        leafs: &[TensorId],
        token_embeds: &Array,
        item_id: ItemId,
    ) -> Result<TensorId, RtaError> {
        let t_len = token_embeds.rows;
        match self.kind {
            AggregatorKind::Embed => Ok(tape.gather(leafs[0], &[item_id])),
            AggregatorKind::Weighted => {
                if t_len > MAX_TITLE_LEN {
                    return Err(RtaError::Data(format!(
                        "title of {t_len} tokens exceeds weighted aggregator limit {MAX_TITLE_LEN}"
                    )));
                }
                let x = tape.leaf(token_embeds.clone());
                let w = tape.slice(leafs[0], 0, 1, 0, t_len);
                let attn = tape.softmax_rows(w, false);
                let pooled = tape.matmul(attn, x);
                Ok(tape.matmul(pooled, leafs[1]))
            }
            AggregatorKind::Trm => {
                if t_len > MAX_TITLE_LEN {
                    return Err(RtaError::Data(format!(
                        "title of {t_len} tokens exceeds TRM aggregator limit {MAX_TITLE_LEN}"
                    )));
                }
                let d = self.d;
                let x = tape.leaf(token_embeds.clone());
                let cls = leafs[0];
                let seq = tape.concat_rows(cls, x);
                let pos = tape.slice(leafs[1], 0, t_len + 1, 0, d);
                let mut h = tape.add(seq, pos);
                // one pre-norm encoder block, 2 heads, no causal mask
                let (ln1_g, ln1_b) = (leafs[2], leafs[3]);
                let (wq, wk, wv, wo) = (leafs[4], leafs[5], leafs[6], leafs[7]);
                let (ln2_g, ln2_b) = (leafs[8], leafs[9]);
                let (w1, b1, w2, b2) = (leafs[10], leafs[11], leafs[12], leafs[13]);
                let (lnf_g, lnf_b) = (leafs[14], leafs[15]);
                let n_heads = 2;
                let hd = d / n_heads;
                let a = tape.layer_norm(h, ln1_g, ln1_b);
                let q = tape.matmul(a, wq);
                let k = tape.matmul(a, wk);
                let v = tape.matmul(a, wv);
                let mut heads = Vec::new();
                for head in 0..n_heads {
                    let qh = tape.slice(q, 0, t_len + 1, head * hd, hd);
                    let kh = tape.slice(k, 0, t_len + 1, head * hd, hd);
                    let vh = tape.slice(v, 0, t_len + 1, head * hd, hd);
                    let scores = tape.matmul_nt(qh, kh);
                    let scaled = tape.scale(scores, 1.0 / (hd as f64).sqrt());
                    let probs = tape.softmax_rows(scaled, false);
                    heads.push(tape.matmul(probs, vh));
                }
                let mut merged = heads[0];
                for &hh in &heads[1..] {
                    merged = tape.concat_cols(merged, hh);
                }
                let attn_out = tape.matmul(merged, wo);
                h = tape.add(h, attn_out);
                let m = tape.layer_norm(h, ln2_g, ln2_b);
                let f1 = tape.matmul(m, w1);
                let f1b = tape.add_row(f1, b1);
                let act = tape.gelu(f1b);
                let f2 = tape.matmul(act, w2);
                let f2b = tape.add_row(f2, b2);
                h = tape.add(h, f2b);
                let out = tape.layer_norm(h, lnf_g, lnf_b);
                Ok(tape.slice(out, 0, 1, 0, d))
            }
            AggregatorKind::Rnn => {
                let x = tape.leaf(token_embeds.clone());
                let fwd = self.gru_direction(tape, leafs, x, t_len, false, 0);
                let bwd = self.gru_direction(tape, leafs, x, t_len, true, 9);
                let cat = tape.concat_cols(fwd, bwd);
                Ok(tape.matmul(cat, leafs[18]))
            }
        }
    }

    fn gru_direction(
        &self,
        tape: &mut Tape,
        leafs: &[TensorId],
        x: TensorId,
        t_len: usize,
        reverse: bool,
        base: usize,
    ) -> TensorId {
        let h_dim = self.gru_hidden;
        let (wz, uz, bz) = (leafs[base], leafs[base + 1], leafs[base + 2]);
        let (wr, ur, br) = (leafs[base + 3], leafs[base + 4], leafs[base + 5]);
        let (wc, uc, bc) = (leafs[base + 6], leafs[base + 7], leafs[base + 8]);
        let mut h = tape.leaf(Array::zeros(1, h_dim));
        for step in 0..t_len {
            let t = if reverse { t_len - 1 - step } else { step };
            let xt = tape.row_at(x, t);
            let z = {
                let a = tape.matmul(xt, wz);
                let b = tape.matmul(h, uz);
                let s = tape.add(a, b);
                let s = tape.add_row(s, bz);
                tape.sigmoid(s)
            };
            let r = {
                let a = tape.matmul(xt, wr);
                let b = tape.matmul(h, ur);
                let s = tape.add(a, b);
                let s = tape.add_row(s, br);
                tape.sigmoid(s)
            };
            let c = {
                let a = tape.matmul(xt, wc);
                let rh = tape.mul(r, h);
                let b = tape.matmul(rh, uc);
                let s = tape.add(a, b);
                let s = tape.add_row(s, bc);
                tape.tanh(s)
            };
            let keep = tape.affine(z, -1.0, 1.0);
            let kept = tape.mul(keep, h);
            let new = tape.mul(z, c);
            h = tape.add(kept, new);
        }
        h
    }

    /// Convenience non-tape aggregation of one title.
    pub fn aggregate(
        &self,
        token_embeds: &Array,
        item_id: ItemId,
    ) -> Result<Vec<f64>, RtaError> {
        assert!(
            self.kind == AggregatorKind::Embed || token_embeds.rows > 0,
            "token embeddings must be nonempty"
        );
        let mut tape = Tape::new();
        let leafs = self.leaf_params(&mut tape);
        let out = self.forward(&mut tape, &leafs, token_embeds, item_id)?;
        Ok(tape.value(out).data.clone())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.push_scalar("agg/kind", self.kind.tag());
        ck.push_scalar("agg/d", self.d as f64);
        ck.push_scalar("agg/n_items", self.n_items as f64);
        ck.push_scalar("agg/gru_hidden", self.gru_hidden as f64);
        for (i, p) in self.params.iter().enumerate() {
            ck.push(&format!("agg/p{i}"), p.clone());
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, RtaError> {
        let kind = AggregatorKind::from_tag(ck.get_scalar("agg/kind")?)?;
        let d = ck.get_scalar("agg/d")? as usize;
        let n_items = ck.get_scalar("agg/n_items")? as usize;
        let gru_hidden = ck.get_scalar("agg/gru_hidden")? as usize;
        let mut agg = Aggregator::with_gru_hidden(kind, d, n_items, 0, gru_hidden);
        for i in 0..agg.params.len() {
            agg.params[i] = ck.get(&format!("agg/p{i}"))?.clone();
        }
        Ok(agg)
    }
}

/// Token embeddings of an item's title as a `[T, d]` matrix.
pub fn title_embeds(lm: &Lm, catalog: &ItemCatalog, item: ItemId) -> Result<Array, RtaError> {
    let rows = lm.embed_tokens(&catalog.items[item].title_tokens)?;
    let d = lm.config.d_model;
    let mut a = Array::zeros(rows.len(), d);
    for (r, row) in rows.iter().enumerate() {
        a.data[r * d..(r + 1) * d].copy_from_slice(row);
    }
    Ok(a)
}

/// Aggregates every catalog title into the single-token item table.
pub fn build_item_table(
    agg: &Aggregator,
    lm: &Lm,
    catalog: &ItemCatalog,
) -> Result<ItemTable, RtaError> {
    let mut vectors = Array::zeros(catalog.len(), agg.d);
    for item in &catalog.items {
        let embeds = title_embeds(lm, catalog, item.id)?;
        let v = agg.aggregate(&embeds, item.id)?;
        vectors.data[item.id * agg.d..(item.id + 1) * agg.d].copy_from_slice(&v);
    }
    Ok(ItemTable { vectors })
}

/// Contrastive reindex loss with max-subtraction stabilization.
pub fn reindex_loss(q: &[f64], v_pos: &[f64], negatives: &[Vec<f64>]) -> f64 {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let pos = dot(q, v_pos);
    let mut m = pos;
    let neg_dots: Vec<f64> = negatives
        .iter()
        .map(|n| {
            let s = dot(q, n);
            m = m.max(s);
            s
        })
        .collect();
    let denom: f64 =
        (pos - m).exp() + neg_dots.iter().map(|s| (s - m).exp()).sum::<f64>();
    denom.ln() + m - pos
}

/// Full-catalog logits: g_i = q . v_i.
pub fn score_items(q: &[f64], table: &ItemTable) -> Vec<f64> {
    assert_eq!(q.len(), table.vectors.cols);
    let mut g = vec![0.0; table.vectors.rows];
    for (i, gi) in g.iter_mut().enumerate() {
        let row = table.vectors.row(i);
        *gi = row.iter().zip(q).map(|(a, b)| a * b).sum();
    }
    g
}

/// Trains an aggregator on (q, item) pairs with the contrastive objective.
/// The LM is read-only throughout: q vectors and title token embeddings are
/// computed once up front and never written back.
pub fn train_aggregator(
    lm: &Lm,
    samples: &[RecSample],
    catalog: &ItemCatalog,
    kind: AggregatorKind,
    neg: NegativeSet,
    opt: &OptimizerConfig,
) -> Result<(Aggregator, TrainReport), RtaError> {
    let mut agg = Aggregator::new(kind, lm.config.d_model, catalog.len(), opt.seed ^ 0x5eed);
    let report = continue_aggregator(&mut agg, lm, samples, catalog, neg, opt)?;
    Ok((agg, report))
}

/// Continues contrastive training of an existing aggregator on new samples
/// (the continual-training baseline). The LM stays frozen.
pub fn continue_aggregator(
    agg: &mut Aggregator,
    lm: &Lm,
    samples: &[RecSample],
    catalog: &ItemCatalog,
    neg: NegativeSet,
    opt: &OptimizerConfig,
) -> Result<TrainReport, RtaError> {
    if samples.is_empty() {
        return Err(RtaError::Data("no samples for aggregator training".into()));
    }
    let queries: Vec<Vec<f64>> =
        samples.iter().map(|s| lm.context_embedding(&s.context_tokens)).collect();
    let embeds: Vec<Array> = (0..catalog.len())
        .map(|i| title_embeds(lm, catalog, i))
        .collect::<Result<_, _>>()?;

    let mut adam = Adam::new(&agg.params, opt.lr, opt.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(opt.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut initial_loss = f64::NAN;
    let mut final_loss = f64::NAN;
    let mut step = 0u64;

    for _epoch in 0..opt.epochs {
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for batch in order.chunks(opt.batch_size) {
            // candidate pool: batch positives, plus uniform draws per strategy
            let mut pool: Vec<ItemId> = Vec::new();
            let mut seen = std::collections::HashSet::new();
            for &si in batch {
                if seen.insert(samples[si].target_item) {
                    pool.push(samples[si].target_item);
                }
            }
            if matches!(neg.strategy, NegStrategy::Uniform | NegStrategy::Mixed) {
                for _ in 0..neg.n_negatives {
                    let i = rng.gen_range(0..catalog.len());
                    if seen.insert(i) {
                        pool.push(i);
                    }
                }
            }

            let mut tape = Tape::new();
            let leafs = agg.leaf_params(&mut tape);
            let mut pool_vecs: Vec<TensorId> = Vec::with_capacity(pool.len());
            for &item in &pool {
                pool_vecs.push(agg.forward(&mut tape, &leafs, &embeds[item], item)?);
            }
            let pool_pos: std::collections::HashMap<ItemId, usize> =
                pool.iter().enumerate().map(|(i, &it)| (it, i)).collect();

            let mut loss_acc: Option<TensorId> = None;
            for &si in batch {
                let target = samples[si].target_item;
                let ti = pool_pos[&target];
                // candidates: positive first, then every other pool item
                let mut cand = pool_vecs[ti];
                for (i, &v) in pool_vecs.iter().enumerate() {
                    if i != ti {
                        let use_it = match neg.strategy {
                            NegStrategy::InBatch | NegStrategy::Mixed => true,
                            NegStrategy::Uniform => i >= batch_pool_boundary(batch, samples, &pool),
                        };
                        if use_it {
                            cand = tape.concat_rows(cand, v);
                        }
                    }
                }
                let q = tape.leaf(Array::from_vec(1, agg.d, queries[si].clone()));
                let logits = tape.matmul_nt(q, cand);
                let l = tape.cross_entropy(logits, &[0]);
                loss_acc = Some(match loss_acc {
                    Some(acc) => tape.add(acc, l),
                    None => l,
                });
            }
            let total = loss_acc.expect("nonempty batch");
            let loss = tape.scale(total, 1.0 / batch.len() as f64);
            let loss_val = tape.scalar(loss);
            if !loss_val.is_finite() {
                return Err(RtaError::Diverged(format!(
                    "non-finite reindex loss at step {step} (lr {})",
                    opt.lr
                )));
            }
            if step == 0 {
                initial_loss = loss_val;
            }
            final_loss = loss_val;
            tape.backward(loss);
            let grads: Vec<Array> = leafs.iter().map(|&id| tape.take_grad(id)).collect();
            adam.step(&mut agg.params, &grads);
            step += 1;
        }
    }
    Ok(TrainReport { initial_loss, final_loss, steps: step })
}

/// Number of in-batch positives at the head of the candidate pool.
fn batch_pool_boundary(batch: &[usize], samples: &[RecSample], pool: &[ItemId]) -> usize {
    let mut seen = std::collections::HashSet::new();
    let mut n = 0;
    for &si in batch {
        if seen.insert(samples[si].target_item) {
            n += 1;
        }
    }
    n.min(pool.len())
}

/// Mean reindex loss of an aggregator on held-out samples, scored against the
/// full item table (each sample: positive vs. `n_eval_negs` uniform items).
pub fn mean_holdout_loss(
    lm: &Lm,
    agg: &Aggregator,
    catalog: &ItemCatalog,
    samples: &[RecSample],
    n_eval_negs: usize,
    seed: u64,
) -> Result<f64, RtaError> {
    let table = build_item_table(agg, lm, catalog)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for s in samples {
        let q = lm.context_embedding(&s.context_tokens);
        let pos = table.vectors.row(s.target_item).to_vec();
        let negs: Vec<Vec<f64>> = (0..n_eval_negs)
            .map(|_| {
                let mut i = rng.gen_range(0..catalog.len());
                while i == s.target_item {
                    i = rng.gen_range(0..catalog.len());
                }
                table.vectors.row(i).to_vec()
            })
            .collect();
        total += reindex_loss(&q, &pos, &negs);
    }
    Ok(total / samples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_world, make_rec_samples, WorldConfig};
    use crate::lm::LMConfig;
    use crate::tensor::{finite_diff, max_rel_err};

    #[test]
    fn reindex_loss_symmetry_ln2() {
        // one negative with equal score
        let q = vec![1.0, 0.0];
        let v = vec![0.7, 0.0];
        let n = vec![vec![0.7, 0.0]];
        assert!((reindex_loss(&q, &v, &n) - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn reindex_loss_empty_negatives_zero() {
        assert_eq!(reindex_loss(&[1.0, 2.0], &[3.0, 4.0], &[]), 0.0);
    }

    #[test]
    fn reindex_loss_large_margin() {
        // q.v = 10, one negative at 0: ln(1 + e^-10)
        let q = vec![1.0];
        let v = vec![10.0];
        let n = vec![vec![0.0]];
        let expected = (1.0 + (-10.0f64).exp()).ln();
        assert!((reindex_loss(&q, &v, &n) - expected).abs() < 1e-12);
        assert!((expected - 4.5399e-5).abs() < 1e-8);
    }

    #[test]
    fn reindex_loss_negative_order_invariant() {
        let q = vec![0.3, -1.2, 0.8];
        let v = vec![1.0, 0.2, -0.4];
        let negs = vec![
            vec![0.5, 0.5, 0.5],
            vec![-1.0, 0.3, 0.9],
            vec![2.0, -0.7, 0.1],
        ];
        let base = reindex_loss(&q, &v, &negs);
        let perms = [[1, 0, 2], [2, 1, 0], [0, 2, 1]];
        for p in perms {
            let shuffled: Vec<Vec<f64>> = p.iter().map(|&i| negs[i].clone()).collect();
            assert!((reindex_loss(&q, &v, &shuffled) - base).abs() < 1e-12);
        }
    }

    #[test]
    fn weighted_identity_init_passes_single_token_through() {
        let d = 8;
        let agg = Aggregator::new(AggregatorKind::Weighted, d, 10, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Array::randn(&mut rng, 1, d, 1.0);
        let v = agg.aggregate(&x, 0).unwrap();
        for (a, b) in v.iter().zip(&x.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn embed_kind_ignores_tokens() {
        let agg = Aggregator::new(AggregatorKind::Embed, 8, 10, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x1 = Array::randn(&mut rng, 3, 8, 1.0);
        let x2 = Array::randn(&mut rng, 5, 8, 1.0);
        let v1 = agg.aggregate(&x1, 4).unwrap();
        let v2 = agg.aggregate(&x2, 4).unwrap();
        assert_eq!(v1, v2);
        assert_eq!(v1, agg.params()[0].row(4).to_vec());
    }

    #[test]
    fn rnn_and_trm_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Array::randn(&mut rng, 3, 8, 1.0);
        for kind in [AggregatorKind::Rnn, AggregatorKind::Trm] {
            let agg = Aggregator::new(kind, 8, 10, 7);
            let v1 = agg.aggregate(&x, 0).unwrap();
            let v2 = agg.aggregate(&x, 0).unwrap();
            assert_eq!(v1, v2);
            assert_eq!(v1.len(), 8);
        }
    }

    #[test]
    fn overlong_title_errors_for_weighted() {
        let agg = Aggregator::new(AggregatorKind::Weighted, 4, 10, 1);
        let x = Array::zeros(MAX_TITLE_LEN + 1, 4);
        assert!(agg.aggregate(&x, 0).is_err());
    }

    #[test]
    fn aggregator_is_a_title_text_function() {
        // same title tokens, different item ids -> same vector (non-Embed)
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Array::randn(&mut rng, 2, 8, 1.0);
        for kind in [AggregatorKind::Weighted, AggregatorKind::Trm, AggregatorKind::Rnn] {
            let agg = Aggregator::new(kind, 8, 10, 2);
            assert_eq!(agg.aggregate(&x, 0).unwrap(), agg.aggregate(&x, 9).unwrap());
        }
    }

    #[test]
    fn score_items_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let table = ItemTable { vectors: Array::randn(&mut rng, 100, 8, 1.0) };
        let q: Vec<f64> = (0..8).map(|_| rng.gen::<f64>() - 0.5).collect();
        let g = score_items(&q, &table);
        // brute force oracle: sort dot products computed independently
        let mut oracle: Vec<(f64, usize)> = (0..100)
            .map(|i| {
                let dot: f64 =
                    table.vectors.row(i).iter().zip(&q).map(|(a, b)| a * b).sum();
                (dot, i)
            })
            .collect();
        oracle.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        let mut ranked: Vec<(f64, usize)> = g.iter().cloned().zip(0..100).collect();
        ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        for ((ga, ia), (gb, ib)) in ranked.iter().zip(&oracle) {
            assert_eq!(ia, ib);
            assert!((ga - gb).abs() < 1e-12);
        }
    }

    #[test]
    fn score_items_orthogonal_and_zero() {
        let table =
            ItemTable { vectors: Array::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]) };
        let g = score_items(&[2.0, 0.0], &table);
        assert_eq!(g, vec![2.0, 0.0]);
        assert_eq!(score_items(&[0.0, 0.0], &table), vec![0.0, 0.0]);
    }

    #[test]
    fn aggregator_gradients_match_finite_differences() {
        let d = 8;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let token_embeds = Array::randn(&mut rng, 3, d, 0.5);
        let q = Array::randn(&mut rng, 1, d, 0.5);
        let neg = Array::randn(&mut rng, 2, d, 0.5);
        for kind in [
            AggregatorKind::Embed,
            AggregatorKind::Weighted,
            AggregatorKind::Trm,
            AggregatorKind::Rnn,
        ] {
            let mut agg = Aggregator::new(kind, d, 6, 9);
            // nudge weighted params off exact identity for a generic point
            if kind == AggregatorKind::Weighted {
                for p in agg.params_mut() {
                    for v in p.data.iter_mut() {
                        *v += 0.01;
                    }
                }
            }
            let run = |params: &[Array]| -> f64 {
                let mut probe = Aggregator::new(kind, d, 6, 9);
                probe.params = params.to_vec();
                let mut tape = Tape::new();
                let leafs = probe.leaf_params(&mut tape);
                let v = probe.forward(&mut tape, &leafs, &token_embeds, 2).unwrap();
                let qid = tape.leaf(q.clone());
                let nid = tape.leaf(neg.clone());
                let cand0 = tape.concat_rows(v, nid);
                let logits = tape.matmul_nt(qid, cand0);
                let l = tape.cross_entropy(logits, &[0]);
                tape.scalar(l)
            };
            let mut tape = Tape::new();
            let leafs = agg.leaf_params(&mut tape);
            let v = agg.forward(&mut tape, &leafs, &token_embeds, 2).unwrap();
            let qid = tape.leaf(q.clone());
            let nid = tape.leaf(neg.clone());
            let cand = tape.concat_rows(v, nid);
            let logits = tape.matmul_nt(qid, cand);
            let loss = tape.cross_entropy(logits, &[0]);
            tape.backward(loss);
            let mut params = agg.params.clone();
            for (pi, &leaf) in leafs.iter().enumerate() {
                let analytic = tape.grad(leaf).cloned().unwrap_or_else(|| {
                    Array::zeros(params[pi].rows, params[pi].cols)
                });
                let numeric = finite_diff(&mut params, pi, 1e-5, &run);
                let err = max_rel_err(&analytic, &numeric);
                assert!(err < 1e-3, "{kind:?} param {pi} rel err {err}");
            }
        }
    }

    #[test]
    fn two_item_world_trains_to_high_accuracy() {
        // contexts uniquely determine targets
        let tok = crate::tokenizer::Tokenizer::build(
            ["alpha beta", "gamma delta", "want scary", "want funny"].into_iter(),
        );
        let items: Vec<crate::catalog::Item> = ["alpha beta", "gamma delta"]
            .iter()
            .enumerate()
            .map(|(i, t)| crate::catalog::Item {
                id: i,
                title: t.to_string(),
                title_tokens: tok.encode(t),
                description: None,
                corpus_count: 0,
                platform_count: 0,
            })
            .collect();
        let catalog = ItemCatalog::new(items).unwrap();
        let contexts = [tok.encode("want scary"), tok.encode("want funny")];
        let mut streams = Vec::new();
        for _ in 0..24 {
            for (ci, ctx) in contexts.iter().enumerate() {
                let mut s = ctx.clone();
                s.extend(&catalog.items[ci].title_tokens);
                streams.push(s);
            }
        }
        let cfg = LMConfig {
            vocab_size: tok.vocab_size(),
            d_model: 16,
            n_layers: 1,
            n_heads: 2,
            context_len: 8,
            seed: 3,
        };
        let opt = OptimizerConfig { lr: 3e-3, weight_decay: 0.0, batch_size: 16, epochs: 30, seed: 7 };
        let (lm, _) = crate::lm::train_lm(&streams, cfg, &opt).unwrap();

        let samples: Vec<RecSample> = (0..2)
            .map(|i| RecSample {
                context_tokens: contexts[i].clone(),
                target_item: i,
                kind: crate::data::SampleKind::L2R,
                period: 0,
                context_items: vec![],
            })
            .collect();
        let many: Vec<RecSample> =
            (0..32).map(|k| samples[k % 2].clone()).collect();
        let lm_before = {
            let mut ck = Checkpoint::new();
            for (n, p) in lm.param_names().into_iter().zip(lm.params()) {
                ck.push(&n, (*p).clone());
            }
            ck.content_hash()
        };
        let (agg, report) = train_aggregator(
            &lm,
            &many,
            &catalog,
            AggregatorKind::Rnn,
            NegativeSet { strategy: NegStrategy::InBatch, n_negatives: 1 },
            &OptimizerConfig { lr: 1e-2, weight_decay: 0.0, batch_size: 8, epochs: 50, seed: 5 },
        )
        .unwrap();
        assert!(report.final_loss < report.initial_loss);
        let lm_after = {
            let mut ck = Checkpoint::new();
            for (n, p) in lm.param_names().into_iter().zip(lm.params()) {
                ck.push(&n, (*p).clone());
            }
            ck.content_hash()
        };
        assert_eq!(lm_before, lm_after, "LM must stay frozen");

        let table = build_item_table(&agg, &lm, &catalog).unwrap();
        let mut correct = 0;
        for s in &samples {
            let q = lm.context_embedding(&s.context_tokens);
            let g = score_items(&q, &table);
            let argmax =
                g.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap().0;
            if argmax == s.target_item {
                correct += 1;
            }
        }
        assert!(correct as f64 / samples.len() as f64 > 0.9);
    }

    #[test]
    fn table_rows_change_after_param_perturbation() {
        let cfg = WorldConfig {
            n_items: 12,
            corpus_size: 30,
            platform_size: 10,
            n_periods: 1,
            seed: 13,
            ..WorldConfig::default()
        };
        let w = gen_world(&cfg).unwrap();
        let lmcfg = LMConfig {
            vocab_size: w.tokenizer.vocab_size(),
            d_model: 16,
            n_layers: 1,
            n_heads: 2,
            context_len: 64,
            seed: 2,
        };
        let lm = Lm::new(lmcfg);
        let mut agg = Aggregator::new(AggregatorKind::Rnn, 16, w.catalog.len(), 3);
        let t1 = build_item_table(&agg, &lm, &w.catalog).unwrap();
        // distinct titles -> distinct rows
        for i in 0..w.catalog.len() {
            for j in i + 1..w.catalog.len() {
                assert_ne!(t1.vectors.row(i), t1.vectors.row(j));
            }
        }
        agg.params_mut()[18].data[0] += 1e-2;
        let t2 = build_item_table(&agg, &lm, &w.catalog).unwrap();
        assert_ne!(t1.vectors.data, t2.vectors.data);
    }

    #[test]
    fn checkpoint_roundtrip_preserves_kind_and_params() {
        let agg = Aggregator::new(AggregatorKind::Trm, 8, 5, 11);
        let ck = agg.to_checkpoint();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("agg.rta1");
        ck.save(&path).unwrap();
        let loaded = Aggregator::from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
        assert_eq!(loaded.kind, AggregatorKind::Trm);
        assert_eq!(loaded.params.len(), agg.params.len());
    }

    #[test]
    fn make_rec_samples_smoke_for_reindex_corpus() {
        let cfg = WorldConfig {
            n_items: 12,
            corpus_size: 40,
            platform_size: 20,
            n_periods: 1,
            seed: 21,
            ..WorldConfig::default()
        };
        let w = gen_world(&cfg).unwrap();
        let samples = make_rec_samples(&w.platform, &w.catalog, &w.tokenizer, true);
        assert!(samples.len() >= w.platform.len());
    }
}
