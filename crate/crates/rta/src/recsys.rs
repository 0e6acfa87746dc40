//! Traditional recommenders trained on platform interactions. Each model
//! exposes full-catalog logits for a given item history so the adapt step can
//! gate them against the language model's distribution.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::ItemId;
use crate::checkpoint::Checkpoint;
use crate::data::RecSample;
use crate::lm::{OptimizerConfig, TrainReport};
use crate::tensor::{Adam, Array, Tape, TensorId};
use crate::RtaError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RecKind {
    Popularity,
    Fism,
    Sasrec,
}

impl std::str::FromStr for RecKind {
    type Err = RtaError;
    fn from_str(s: &str) -> Result<Self, RtaError> {
        match s {
            "popularity" => Ok(RecKind::Popularity),
            "fism" => Ok(RecKind::Fism),
            "sasrec" => Ok(RecKind::Sasrec),
            other => Err(RtaError::Config(format!("unknown recsys kind {other:?}"))),
        }
    }
}

pub const N_TRAIN_NEGATIVES: usize = 100;

/// log(interaction count + 1) per item.
#[derive(Clone, Debug)]
pub struct Popularity {
    pub log_counts: Vec<f64>,
}

impl Popularity {
    pub fn fit(samples: &[RecSample], n_items: usize) -> Self {
        let mut counts = vec![0u64; n_items];
        for s in samples {
            counts[s.target_item] += 1;
        }
        Popularity { log_counts: counts.iter().map(|&c| ((c + 1) as f64).ln()).collect() }
    }
}

/// Factored item similarity: score(i | H) = b_i + q_i . mean_{j in H, j != i} p_j.
#[derive(Clone, Debug)]
pub struct Fism {
    pub p: Array,
    pub q: Array,
    pub bias: Array,
}

impl Fism {
    pub fn new(n_items: usize, d: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Fism {
            p: Array::randn(&mut rng, n_items, d, 0.08),
            q: Array::randn(&mut rng, n_items, d, 0.08),
            bias: Array::zeros(n_items, 1),
        }
    }

    pub fn params(&self) -> Vec<&Array> {
        vec![&self.p, &self.q, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Array> {
        vec![&mut self.p, &mut self.q, &mut self.bias]
    }

    fn user_vector(&self, history: &[ItemId], exclude: Option<ItemId>) -> Vec<f64> {
        let d = self.p.cols;
        let mut u = vec![0.0; d];
        let mut n = 0usize;
        for &j in history {
            if Some(j) == exclude {
                continue;
            }
            for (uk, pk) in u.iter_mut().zip(self.p.row(j)) {
                *uk += pk;
            }
            n += 1;
        }
        if n > 0 {
            for uk in u.iter_mut() {
                *uk /= n as f64;
            }
        }
        u
    }

    pub fn score_all(&self, history: &[ItemId]) -> Vec<f64> {
        let n_items = self.q.rows;
        let mut g = vec![0.0; n_items];
        let shared = self.user_vector(history, None);
        for (i, gi) in g.iter_mut().enumerate() {
            let u = if history.contains(&i) {
                self.user_vector(history, Some(i))
            } else {
                shared.clone()
            };
            let dot: f64 = self.q.row(i).iter().zip(&u).map(|(a, b)| a * b).sum();
            *gi = self.bias.at(i, 0) + dot;
        }
        g
    }

    /// Tape loss for one sample against `candidates` (positive first).
    pub fn sample_loss(
        &self,
        tape: &mut Tape,
        leafs: &[TensorId],
        history: &[ItemId],
        candidates: &[ItemId],
    ) -> TensorId {
        let d = self.p.cols;
        let target = candidates[0];
        let hist: Vec<ItemId> = history.iter().copied().filter(|&j| j != target).collect();
        let u = if hist.is_empty() {
            tape.leaf(Array::zeros(1, d))
        } else {
            let rows = tape.gather(leafs[0], &hist);
            let ones = tape.leaf(Array::full(1, hist.len(), 1.0 / hist.len() as f64));
            tape.matmul(ones, rows)
        };
        let qc = tape.gather(leafs[1], candidates);
        let bc = tape.gather(leafs[2], candidates);
        let dots = tape.matmul_nt(u, qc);
        // gathered bias is [C,1]; rebuild it as [1,C] to add onto the logits
        let mut bias_cells = Vec::with_capacity(candidates.len());
        for i in 0..candidates.len() {
            bias_cells.push(tape.slice(bc, i, 1, 0, 1));
        }
        let mut bias_vec = bias_cells[0];
        for &cell in &bias_cells[1..] {
            bias_vec = tape.concat_cols(bias_vec, cell);
        }
        let logits = tape.add(dots, bias_vec);
        tape.cross_entropy(logits, &[0])
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SasrecConfig {
    pub n_items: usize,
    pub d: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_history: usize,
    pub seed: u64,
}

impl SasrecConfig {
    pub fn standard(n_items: usize, seed: u64) -> Self {
        SasrecConfig { n_items, d: 64, n_layers: 2, n_heads: 2, max_history: 50, seed }
    }
}

/// Self-attentive sequential recommender with tied output embeddings and a
/// popularity fallback for empty histories.
#[derive(Clone, Debug)]
pub struct Sasrec {
    pub config: SasrecConfig,
    params: Vec<Array>,
    pub pop_fallback: Vec<f64>,
}

const SASREC_BLOCK_PARAMS: usize = 12;

impl Sasrec {
    pub fn new(config: SasrecConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.d;
        let std = 0.08;
        let mut params = vec![
            Array::randn(&mut rng, config.n_items, d, std),
            Array::randn(&mut rng, config.max_history, d, std),
        ];
        for _ in 0..config.n_layers {
            params.push(Array::full(1, d, 1.0));
            params.push(Array::zeros(1, d));
            for _ in 0..4 {
                params.push(Array::randn(&mut rng, d, d, std));
            }
            params.push(Array::full(1, d, 1.0));
            params.push(Array::zeros(1, d));
            params.push(Array::randn(&mut rng, d, 4 * d, std));
            params.push(Array::zeros(1, 4 * d));
            params.push(Array::randn(&mut rng, 4 * d, d, std));
            params.push(Array::zeros(1, d));
        }
        params.push(Array::full(1, d, 1.0));
        params.push(Array::zeros(1, d));
        Sasrec { config, params, pop_fallback: vec![0.0; config.n_items] }
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

    fn clipped<'a>(&self, history: &'a [ItemId]) -> &'a [ItemId] {
        let n = history.len();
        let keep = n.min(self.config.max_history);
        &history[n - keep..]
    }

    /// Last hidden state over the (clipped) history, `[1, d]`.
    pub fn hidden_on_tape(
        &self,
        tape: &mut Tape,
        leafs: &[TensorId],
        history: &[ItemId],
    ) -> TensorId {
        let hist = self.clipped(history);
        assert!(!hist.is_empty(), "empty history has no hidden state");
        let t_len = hist.len();
        let d = self.config.d;
        let tok = tape.gather(leafs[0], hist);
        let pos = tape.slice(leafs[1], 0, t_len, 0, d);
        let mut h = tape.add(tok, pos);
        for layer in 0..self.config.n_layers {
            let base = 2 + layer * SASREC_BLOCK_PARAMS;
            let a = tape.layer_norm(h, leafs[base], leafs[base + 1]);
            let q = tape.matmul(a, leafs[base + 2]);
            let k = tape.matmul(a, leafs[base + 3]);
            let v = tape.matmul(a, leafs[base + 4]);
            let hd = d / self.config.n_heads;
            let mut heads = Vec::new();
            for head in 0..self.config.n_heads {
                let qh = tape.slice(q, 0, t_len, head * hd, hd);
                let kh = tape.slice(k, 0, t_len, head * hd, hd);
                let vh = tape.slice(v, 0, t_len, head * hd, hd);
                let scores = tape.matmul_nt(qh, kh);
                let scaled = tape.scale(scores, 1.0 / (hd as f64).sqrt());
                let probs = tape.softmax_rows(scaled, true);
                heads.push(tape.matmul(probs, vh));
            }
            let mut merged = heads[0];
            for &hh in &heads[1..] {
                merged = tape.concat_cols(merged, hh);
            }
            let attn_out = tape.matmul(merged, leafs[base + 5]);
            h = tape.add(h, attn_out);
            let m = tape.layer_norm(h, leafs[base + 6], leafs[base + 7]);
            let f1 = tape.matmul(m, leafs[base + 8]);
            let f1b = tape.add_row(f1, leafs[base + 9]);
            let act = tape.gelu(f1b);
            let f2 = tape.matmul(act, leafs[base + 10]);
            let f2b = tape.add_row(f2, leafs[base + 11]);
            h = tape.add(h, f2b);
        }
        let n = self.params.len();
        let out = tape.layer_norm(h, leafs[n - 2], leafs[n - 1]);
        tape.row_at(out, t_len - 1)
    }

    pub fn score_all(&self, history: &[ItemId]) -> Vec<f64> {
        if history.is_empty() {
            return self.pop_fallback.clone();
        }
        let mut tape = Tape::new();
        let leafs = self.leaf_params(&mut tape);
        let h = self.hidden_on_tape(&mut tape, &leafs, history);
        let hv = tape.value(h).data.clone();
        let embed = &self.params[0];
        (0..self.config.n_items)
            .map(|i| embed.row(i).iter().zip(&hv).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn sample_loss(
        &self,
        tape: &mut Tape,
        leafs: &[TensorId],
        history: &[ItemId],
        candidates: &[ItemId],
    ) -> TensorId {
        let h = self.hidden_on_tape(tape, leafs, history);
        let cand = tape.gather(leafs[0], candidates);
        let logits = tape.matmul_nt(h, cand);
        tape.cross_entropy(logits, &[0])
    }
}

#[derive(Clone, Debug)]
pub enum RecModel {
    Popularity(Popularity),
    Fism(Fism),
    Sasrec(Sasrec),
}

impl RecModel {
    pub fn kind(&self) -> RecKind {
        match self {
            RecModel::Popularity(_) => RecKind::Popularity,
            RecModel::Fism(_) => RecKind::Fism,
            RecModel::Sasrec(_) => RecKind::Sasrec,
        }
    }

    pub fn n_items(&self) -> usize {
        match self {
            RecModel::Popularity(p) => p.log_counts.len(),
            RecModel::Fism(f) => f.q.rows,
            RecModel::Sasrec(s) => s.config.n_items,
        }
    }

    /// Full-catalog logits g~ for an item history.
    pub fn score_all(&self, history: &[ItemId]) -> Vec<f64> {
        match self {
            RecModel::Popularity(p) => p.log_counts.clone(),
            RecModel::Fism(f) => f.score_all(history),
            RecModel::Sasrec(s) => s.score_all(history),
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        match self {
            RecModel::Popularity(p) => {
                ck.push_scalar("rec/kind", 0.0);
                ck.push(
                    "rec/log_counts",
                    Array::from_vec(p.log_counts.len(), 1, p.log_counts.clone()),
                );
            }
            RecModel::Fism(f) => {
                ck.push_scalar("rec/kind", 1.0);
                ck.push("rec/p", f.p.clone());
                ck.push("rec/q", f.q.clone());
                ck.push("rec/bias", f.bias.clone());
            }
            RecModel::Sasrec(s) => {
                ck.push_scalar("rec/kind", 2.0);
                ck.push_scalar("rec/n_items", s.config.n_items as f64);
                ck.push_scalar("rec/d", s.config.d as f64);
                ck.push_scalar("rec/n_layers", s.config.n_layers as f64);
                ck.push_scalar("rec/n_heads", s.config.n_heads as f64);
                ck.push_scalar("rec/max_history", s.config.max_history as f64);
                ck.push(
                    "rec/pop_fallback",
                    Array::from_vec(s.pop_fallback.len(), 1, s.pop_fallback.clone()),
                );
                for (i, p) in s.params.iter().enumerate() {
                    ck.push(&format!("rec/p{i}"), p.clone());
                }
            }
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, RtaError> {
        match ck.get_scalar("rec/kind")? as i64 {
            0 => Ok(RecModel::Popularity(Popularity {
                log_counts: ck.get("rec/log_counts")?.data.clone(),
            })),
            1 => Ok(RecModel::Fism(Fism {
                p: ck.get("rec/p")?.clone(),
                q: ck.get("rec/q")?.clone(),
                bias: ck.get("rec/bias")?.clone(),
            })),
            2 => {
                let config = SasrecConfig {
                    n_items: ck.get_scalar("rec/n_items")? as usize,
                    d: ck.get_scalar("rec/d")? as usize,
                    n_layers: ck.get_scalar("rec/n_layers")? as usize,
                    n_heads: ck.get_scalar("rec/n_heads")? as usize,
                    max_history: ck.get_scalar("rec/max_history")? as usize,
                    seed: 0,
                };
                let mut s = Sasrec::new(config);
                s.pop_fallback = ck.get("rec/pop_fallback")?.data.clone();
                for i in 0..s.params.len() {
                    s.params[i] = ck.get(&format!("rec/p{i}"))?.clone();
                }
                Ok(RecModel::Sasrec(s))
            }
            other => Err(RtaError::Checkpoint(format!("unknown recsys tag {other}"))),
        }
    }
}

fn draw_candidates(
    target: ItemId,
    n_items: usize,
    n_negs: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<ItemId> {
    let mut cand = Vec::with_capacity(1 + n_negs);
    cand.push(target);
    for _ in 0..n_negs {
        let mut i = rng.gen_range(0..n_items);
        while i == target {
            i = rng.gen_range(0..n_items);
        }
        cand.push(i);
    }
    cand
}

/// Trains a recommender on platform samples with sampled softmax
/// (1 positive vs. `N_TRAIN_NEGATIVES` uniform negatives).
pub fn train_recsys(
    kind: RecKind,
    samples: &[RecSample],
    n_items: usize,
    opt: &OptimizerConfig,
) -> Result<(RecModel, TrainReport), RtaError> {
    if samples.is_empty() {
        return Err(RtaError::Data("no samples for recsys training".into()));
    }
    let mut model = match kind {
        RecKind::Popularity => RecModel::Popularity(Popularity::fit(samples, n_items)),
        RecKind::Fism => RecModel::Fism(Fism::new(n_items, 64, opt.seed ^ 0xf15)),
        RecKind::Sasrec => {
            let mut sas = Sasrec::new(SasrecConfig::standard(n_items, opt.seed ^ 0x5a5));
            sas.pop_fallback = Popularity::fit(samples, n_items).log_counts;
            RecModel::Sasrec(sas)
        }
    };
    let report = fine_tune(&mut model, samples, opt)?;
    Ok((model, report))
}

/// Continues training an existing recommender on new samples (used when the
/// gate adapter unfreezes the recommender head).
pub fn fine_tune(
    model: &mut RecModel,
    samples: &[RecSample],
    opt: &OptimizerConfig,
) -> Result<TrainReport, RtaError> {
    if samples.is_empty() {
        return Err(RtaError::Data("no samples for recsys training".into()));
    }
    let n_items = model.n_items();
    let (kind, mut owned): (RecKind, Vec<Array>) = match model {
        RecModel::Popularity(p) => {
            *p = Popularity::fit(samples, n_items);
            return Ok(TrainReport { initial_loss: 0.0, final_loss: 0.0, steps: 0 });
        }
        RecModel::Fism(f) => (RecKind::Fism, f.params().into_iter().cloned().collect()),
        RecModel::Sasrec(s) => (RecKind::Sasrec, s.params().to_vec()),
    };
    let (fism, sas): (Fism, Sasrec) = match model {
        RecModel::Fism(f) => (f.clone(), Sasrec::new(SasrecConfig::standard(1, 0))),
        RecModel::Sasrec(s) => (Fism::new(1, 1, 0), s.clone()),
        RecModel::Popularity(_) => unreachable!(),
    };
    let mut adam = Adam::new(&owned, opt.lr, opt.weight_decay);
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
            let mut tape = Tape::new();
            let leafs: Vec<TensorId> =
                owned.iter().map(|p| tape.leaf(p.clone())).collect();
            let mut loss_acc: Option<TensorId> = None;
            let mut used = 0usize;
            for &si in batch {
                let s = &samples[si];
                if kind == RecKind::Sasrec && s.context_items.is_empty() {
                    continue;
                }
                let cand = draw_candidates(s.target_item, n_items, N_TRAIN_NEGATIVES, &mut rng);
                let l = match kind {
                    RecKind::Fism => {
                        fism.sample_loss(&mut tape, &leafs, &s.context_items, &cand)
                    }
                    RecKind::Sasrec => {
                        sas.sample_loss(&mut tape, &leafs, &s.context_items, &cand)
                    }
                    RecKind::Popularity => unreachable!(),
                };
                loss_acc = Some(match loss_acc {
                    Some(acc) => tape.add(acc, l),
                    None => l,
                });
                used += 1;
            }
            let Some(total) = loss_acc else { continue };
            let loss = tape.scale(total, 1.0 / used as f64);
            let loss_val = tape.scalar(loss);
            if !loss_val.is_finite() {
                return Err(RtaError::Diverged(format!(
                    "non-finite recsys loss at step {step} (lr {})",
                    opt.lr
                )));
            }
            if step == 0 {
                initial_loss = loss_val;
            }
            final_loss = loss_val;
            tape.backward(loss);
            let grads: Vec<Array> = leafs.iter().map(|&id| tape.take_grad(id)).collect();
            adam.step(&mut owned, &grads);
            step += 1;
        }
    }
    match model {
        RecModel::Fism(f) => {
            for (dst, src) in f.params_mut().into_iter().zip(owned) {
                *dst = src;
            }
        }
        RecModel::Sasrec(s) => {
            *s.params_mut() = owned;
        }
        RecModel::Popularity(_) => unreachable!(),
    }
    Ok(TrainReport { initial_loss, final_loss, steps: step })
}
