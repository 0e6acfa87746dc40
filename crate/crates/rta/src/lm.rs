//! Small decoder-only transformer standing in for the LLM: token embedding
//! lookup, next-token training on the L2I+L2R corpus, contextual query
//! embedding extraction, and trie-constrained generative title retrieval.
//!
//! Pre-norm blocks, learned positional embeddings, GELU MLP with 4x
//! expansion, output projection tied to the token embedding table.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{ItemCatalog, ItemId, TokenTrie};
use crate::tensor::{matmul_nt, Adam, Array, Tape, TensorId};
use crate::tokenizer::TokenId;
use crate::RtaError;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LMConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub context_len: usize,
    pub seed: u64,
}

impl Default for LMConfig {
    fn default() -> Self {
        LMConfig { vocab_size: 0, d_model: 64, n_layers: 2, n_heads: 2, context_len: 128, seed: 1 }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig { lr: 1e-3, weight_decay: 0.0, batch_size: 256, epochs: 200, seed: 1 }
    }
}

#[derive(Clone, Debug)]
pub struct Block {
    pub ln1_g: Array,
    pub ln1_b: Array,
    pub wq: Array,
    pub wk: Array,
    pub wv: Array,
    pub wo: Array,
    pub ln2_g: Array,
    pub ln2_b: Array,
    pub w1: Array,
    pub b1: Array,
    pub w2: Array,
    pub b2: Array,
}

#[derive(Clone, Debug)]
pub struct Lm {
    pub config: LMConfig,
    pub embed: Array,
    pub pos: Array,
    pub blocks: Vec<Block>,
    pub lnf_g: Array,
    pub lnf_b: Array,
}

impl Lm {
    pub fn new(config: LMConfig) -> Self {
        assert!(config.d_model % config.n_heads == 0, "d_model must divide by n_heads");
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.d_model;
        let std = 0.08;
        let block = |rng: &mut ChaCha8Rng| Block {
            ln1_g: Array::full(1, d, 1.0),
            ln1_b: Array::zeros(1, d),
            wq: Array::randn(rng, d, d, std),
            wk: Array::randn(rng, d, d, std),
            wv: Array::randn(rng, d, d, std),
            wo: Array::randn(rng, d, d, std),
            ln2_g: Array::full(1, d, 1.0),
            ln2_b: Array::zeros(1, d),
            w1: Array::randn(rng, d, 4 * d, std),
            b1: Array::zeros(1, 4 * d),
            w2: Array::randn(rng, 4 * d, d, std),
            b2: Array::zeros(1, d),
        };
        Lm {
            embed: Array::randn(&mut rng, config.vocab_size, d, std),
            pos: Array::randn(&mut rng, config.context_len, d, std),
            blocks: (0..config.n_layers).map(|_| block(&mut rng)).collect(),
            lnf_g: Array::full(1, d, 1.0),
            lnf_b: Array::zeros(1, d),
            config,
        }
    }

    pub fn to_checkpoint(&self) -> crate::checkpoint::Checkpoint {
        let mut ck = crate::checkpoint::Checkpoint::new();
        ck.push_scalar("lm/vocab_size", self.config.vocab_size as f64);
        ck.push_scalar("lm/d_model", self.config.d_model as f64);
        ck.push_scalar("lm/n_layers", self.config.n_layers as f64);
        ck.push_scalar("lm/n_heads", self.config.n_heads as f64);
        ck.push_scalar("lm/context_len", self.config.context_len as f64);
        for (name, p) in self.param_names().into_iter().zip(self.params()) {
            ck.push(&name, p.clone());
        }
        ck
    }

    pub fn from_checkpoint(ck: &crate::checkpoint::Checkpoint) -> Result<Self, RtaError> {
        let config = LMConfig {
            vocab_size: ck.get_scalar("lm/vocab_size")? as usize,
            d_model: ck.get_scalar("lm/d_model")? as usize,
            n_layers: ck.get_scalar("lm/n_layers")? as usize,
            n_heads: ck.get_scalar("lm/n_heads")? as usize,
            context_len: ck.get_scalar("lm/context_len")? as usize,
            seed: 0,
        };
        let mut lm = Lm::new(config);
        let values = lm
            .param_names()
            .into_iter()
            .map(|n| ck.get(&n).cloned())
            .collect::<Result<Vec<_>, _>>()?;
        lm.set_params(values);
        Ok(lm)
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = vec!["lm/embed".to_string(), "lm/pos".to_string()];
        for i in 0..self.blocks.len() {
            for f in
                ["ln1_g", "ln1_b", "wq", "wk", "wv", "wo", "ln2_g", "ln2_b", "w1", "b1", "w2", "b2"]
            {
                names.push(format!("lm/block{i}/{f}"));
            }
        }
        names.push("lm/lnf_g".to_string());
        names.push("lm/lnf_b".to_string());
        names
    }

    pub fn params(&self) -> Vec<&Array> {
        let mut v: Vec<&Array> = vec![&self.embed, &self.pos];
        for b in &self.blocks {
            v.extend([
                &b.ln1_g, &b.ln1_b, &b.wq, &b.wk, &b.wv, &b.wo, &b.ln2_g, &b.ln2_b, &b.w1, &b.b1,
                &b.w2, &b.b2,
            ]);
        }
        v.push(&self.lnf_g);
        v.push(&self.lnf_b);
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Array> {
        let mut v: Vec<&mut Array> = vec![&mut self.embed, &mut self.pos];
        for b in &mut self.blocks {
            v.extend([
                &mut b.ln1_g, &mut b.ln1_b, &mut b.wq, &mut b.wk, &mut b.wv, &mut b.wo,
                &mut b.ln2_g, &mut b.ln2_b, &mut b.w1, &mut b.b1, &mut b.w2, &mut b.b2,
            ]);
        }
        v.push(&mut self.lnf_g);
        v.push(&mut self.lnf_b);
        v
    }

    pub fn set_params(&mut self, values: Vec<Array>) {
        for (slot, v) in self.params_mut().into_iter().zip(values) {
            *slot = v;
        }
    }

    /// Left-truncates to the context window.
    fn clip<'a>(&self, tokens: &'a [TokenId]) -> &'a [TokenId] {
        if tokens.len() > self.config.context_len {
            &tokens[tokens.len() - self.config.context_len..]
        } else {
            tokens
        }
    }

    /// Tape forward to the post-final-norm hidden states `[T, d]`.
    /// `leafs` must come from [`Lm::leaf_params`] on the same tape.
    pub fn hidden_on_tape(
        &self,
        tape: &mut Tape,
        leafs: &[TensorId],
        tokens: &[TokenId],
    ) -> TensorId {
        let tokens = self.clip(tokens);
        let t_len = tokens.len();
        let d = self.config.d_model;
        let n_heads = self.config.n_heads;
        let hd = d / n_heads;
        let scale = 1.0 / (hd as f64).sqrt();

        let embed = leafs[0];
        let pos = leafs[1];
        let tok_e = tape.gather(embed, tokens);
        let pos_e = tape.slice(pos, 0, t_len, 0, d);
        let mut x = tape.add(tok_e, pos_e);

        for (i, _) in self.blocks.iter().enumerate() {
            let base = 2 + i * 12;
            let (ln1_g, ln1_b) = (leafs[base], leafs[base + 1]);
            let (wq, wk, wv, wo) = (leafs[base + 2], leafs[base + 3], leafs[base + 4], leafs[base + 5]);
            let (ln2_g, ln2_b) = (leafs[base + 6], leafs[base + 7]);
            let (w1, b1, w2, b2) = (leafs[base + 8], leafs[base + 9], leafs[base + 10], leafs[base + 11]);

            let a = tape.layer_norm(x, ln1_g, ln1_b);
            let q = tape.matmul(a, wq);
            let k = tape.matmul(a, wk);
            let v = tape.matmul(a, wv);
            let mut heads = Vec::with_capacity(n_heads);
            for h in 0..n_heads {
                let qh = tape.slice(q, 0, t_len, h * hd, hd);
                let kh = tape.slice(k, 0, t_len, h * hd, hd);
                let vh = tape.slice(v, 0, t_len, h * hd, hd);
                let scores = tape.matmul_nt(qh, kh);
                let scaled = tape.scale(scores, scale);
                let probs = tape.softmax_rows(scaled, true);
                heads.push(tape.matmul(probs, vh));
            }
            let mut merged = heads[0];
            for &h in &heads[1..] {
                merged = tape.concat_cols(merged, h);
            }
            let attn_out = tape.matmul(merged, wo);
            x = tape.add(x, attn_out);

            let m = tape.layer_norm(x, ln2_g, ln2_b);
            let h1 = tape.matmul(m, w1);
            let h1b = tape.add_row(h1, b1);
            let act = tape.gelu(h1b);
            let h2 = tape.matmul(act, w2);
            let h2b = tape.add_row(h2, b2);
            x = tape.add(x, h2b);
        }

        let (lnf_g, lnf_b) = (leafs[leafs.len() - 2], leafs[leafs.len() - 1]);
        tape.layer_norm(x, lnf_g, lnf_b)
    }

    pub fn leaf_params(&self, tape: &mut Tape) -> Vec<TensorId> {
        self.params().into_iter().map(|p| tape.leaf(p.clone())).collect()
    }

    /// Mean next-token cross-entropy of one stream on the tape.
    pub fn stream_loss(&self, tape: &mut Tape, leafs: &[TensorId], stream: &[TokenId]) -> TensorId {
        let stream = self.clip(stream);
        assert!(stream.len() >= 2, "stream too short to train on");
        let hidden = self.hidden_on_tape(tape, leafs, stream);
        let preds = tape.slice(hidden, 0, stream.len() - 1, 0, self.config.d_model);
        let logits = tape.matmul_nt(preds, leafs[0]);
        tape.cross_entropy(logits, &stream[1..])
    }

    /// Inference-only forward, identical math to the tape path.
    pub fn hidden(&self, tokens: &[TokenId]) -> Array {
        let tokens = self.clip(tokens);
        let t_len = tokens.len();
        let d = self.config.d_model;
        let n_heads = self.config.n_heads;
        let hd = d / n_heads;
        let scale = 1.0 / (hd as f64).sqrt();

        let mut x = Array::zeros(t_len, d);
        for (r, &t) in tokens.iter().enumerate() {
            for c in 0..d {
                *x.at_mut(r, c) = self.embed.at(t, c) + self.pos.at(r, c);
            }
        }

        let ln = |input: &Array, g: &Array, b: &Array| -> Array {
            let mut out = Array::zeros(input.rows, input.cols);
            let n = input.cols as f64;
            for r in 0..input.rows {
                let row = input.row(r);
                let mean = row.iter().sum::<f64>() / n;
                let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                let inv = 1.0 / (var + 1e-5).sqrt();
                for c in 0..input.cols {
                    *out.at_mut(r, c) = (row[c] - mean) * inv * g.data[c] + b.data[c];
                }
            }
            out
        };

        for blk in &self.blocks {
            let a = ln(&x, &blk.ln1_g, &blk.ln1_b);
            let q = crate::tensor::matmul(&a, &blk.wq);
            let k = crate::tensor::matmul(&a, &blk.wk);
            let v = crate::tensor::matmul(&a, &blk.wv);
            let mut merged = Array::zeros(t_len, d);
            for h in 0..n_heads {
                let cs = h * hd;
                for i in 0..t_len {
                    // causal attention row for head h
                    let mut weights = vec![0.0; i + 1];
                    let mut m = f64::NEG_INFINITY;
                    for (j, w) in weights.iter_mut().enumerate() {
                        let mut s = 0.0;
                        for c in 0..hd {
                            s += q.at(i, cs + c) * k.at(j, cs + c);
                        }
                        *w = s * scale;
                        m = m.max(*w);
                    }
                    let mut z = 0.0;
                    for w in weights.iter_mut() {
                        *w = (*w - m).exp();
                        z += *w;
                    }
                    for (j, w) in weights.iter().enumerate() {
                        let p = w / z;
                        for c in 0..hd {
                            *merged.at_mut(i, cs + c) += p * v.at(j, cs + c);
                        }
                    }
                }
            }
            let attn_out = crate::tensor::matmul(&merged, &blk.wo);
            x.add_assign(&attn_out);

            let mnorm = ln(&x, &blk.ln2_g, &blk.ln2_b);
            let mut h1 = crate::tensor::matmul(&mnorm, &blk.w1);
            for r in 0..h1.rows {
                for c in 0..h1.cols {
                    let v0 = h1.at(r, c) + blk.b1.data[c];
                    let t = (0.7978845608028654 * (v0 + 0.044715 * v0.powi(3))).tanh();
                    *h1.at_mut(r, c) = 0.5 * v0 * (1.0 + t);
                }
            }
            let mut h2 = crate::tensor::matmul(&h1, &blk.w2);
            for r in 0..h2.rows {
                for c in 0..h2.cols {
                    *h2.at_mut(r, c) += blk.b2.data[c];
                }
            }
            x.add_assign(&h2);
        }

        ln(&x, &self.lnf_g, &self.lnf_b)
    }

    /// Token embedding lookups (Embed layer), order preserving.
    pub fn embed_tokens(&self, tokens: &[TokenId]) -> Result<Vec<Vec<f64>>, RtaError> {
        tokens
            .iter()
            .map(|&t| {
                if t >= self.config.vocab_size {
                    Err(RtaError::Data(format!("token id {t} out of range")))
                } else {
                    Ok(self.embed.row(t).to_vec())
                }
            })
            .collect()
    }

    /// Contextual query embedding: final-position hidden state.
    pub fn context_embedding(&self, context_tokens: &[TokenId]) -> Vec<f64> {
        assert!(!context_tokens.is_empty(), "context must be nonempty");
        let h = self.hidden(context_tokens);
        h.row(h.rows - 1).to_vec()
    }

    /// Next-token log-probabilities after `tokens`.
    pub fn next_token_logprobs(&self, tokens: &[TokenId]) -> Vec<f64> {
        let h = self.hidden(tokens);
        let last = Array::from_vec(1, h.cols, h.row(h.rows - 1).to_vec());
        let logits = matmul_nt(&last, &self.embed);
        let m = logits.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.data.iter().map(|x| (x - m).exp()).sum();
        let logz = m + z.ln();
        logits.data.iter().map(|x| x - logz).collect()
    }

    /// Constrained beam search over the catalog title trie. Returns up to
    /// `min(k, |catalog|)` distinct items ranked by total sequence
    /// log-probability, ties toward the smaller id.
    pub fn generate_titles(
        &self,
        catalog: &ItemCatalog,
        context_tokens: &[TokenId],
        k: usize,
    ) -> Vec<ItemId> {
        assert!(k >= 1);
        let beam_width = (2 * k).max(16);
        struct Beam<'t> {
            tokens: Vec<TokenId>,
            node: &'t TokenTrie,
            logp: f64,
        }
        let mut beams =
            vec![Beam { tokens: context_tokens.to_vec(), node: catalog.trie(), logp: 0.0 }];
        let mut finished: Vec<(f64, ItemId)> = Vec::new();
        let max_title_len =
            catalog.items.iter().map(|i| i.title_tokens.len()).max().unwrap_or(0);

        for _ in 0..max_title_len {
            let mut candidates: Vec<Beam> = Vec::new();
            for beam in &beams {
                let next = beam.node.next_tokens();
                if next.is_empty() {
                    continue;
                }
                let logprobs = self.next_token_logprobs(&beam.tokens);
                for t in next {
                    let child = beam.node.child(t).expect("listed child");
                    let logp = beam.logp + logprobs[t];
                    if let Some(item) = child.terminal() {
                        finished.push((logp, item));
                    }
                    if !child.next_tokens().is_empty() {
                        let mut tokens = beam.tokens.clone();
                        tokens.push(t);
                        candidates.push(Beam { tokens, node: child, logp });
                    }
                }
            }
            candidates.sort_by(|a, b| b.logp.partial_cmp(&a.logp).unwrap());
            candidates.truncate(beam_width);
            if candidates.is_empty() {
                break;
            }
            beams = candidates;
        }

        finished.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let mut seen = vec![false; catalog.len()];
        let mut out = Vec::new();
        for (_, item) in finished {
            if !seen[item] {
                seen[item] = true;
                out.push(item);
                if out.len() == k.min(catalog.len()) {
                    break;
                }
            }
        }
        out
    }
}

/// Diagnostics returned alongside the trained model.
#[derive(Clone, Copy, Debug)]
pub struct TrainReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub steps: u64,
}

/// Next-token training over rendered sample streams.
pub fn train_lm(
    streams: &[Vec<TokenId>],
    config: LMConfig,
    opt: &OptimizerConfig,
) -> Result<(Lm, TrainReport), RtaError> {
    if streams.is_empty() {
        return Err(RtaError::Data("empty training corpus".into()));
    }
    for s in streams {
        if let Some(&t) = s.iter().find(|&&t| t >= config.vocab_size) {
            return Err(RtaError::Data(format!("token id {t} exceeds vocab size")));
        }
    }
    let mut lm = Lm::new(config);
    let n_params = lm.params().len();
    let mut adam = Adam::new(
        &lm.params().into_iter().cloned().collect::<Vec<_>>(),
        opt.lr,
        opt.weight_decay,
    );
    let mut order: Vec<usize> = (0..streams.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opt.seed);
    let mut step = 0u64;
    let mut initial_loss = f64::NAN;
    let mut final_loss = f64::NAN;

    for _epoch in 0..opt.epochs {
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for batch in order.chunks(opt.batch_size) {
            let mut tape = Tape::new();
            let leafs = lm.leaf_params(&mut tape);
            let mut loss_acc: Option<TensorId> = None;
            for &si in batch {
                let l = lm.stream_loss(&mut tape, &leafs, &streams[si]);
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
                    "non-finite LM loss at step {step} (lr {})",
                    opt.lr
                )));
            }
            if step == 0 {
                initial_loss = loss_val;
            }
            final_loss = loss_val;
            tape.backward(loss);
            let grads: Vec<Array> = leafs.iter().map(|&id| tape.take_grad(id)).collect();
            debug_assert_eq!(grads.len(), n_params);
            let mut params: Vec<Array> = lm.params().into_iter().cloned().collect();
            adam.step(&mut params, &grads);
            lm.set_params(params);
            step += 1;
        }
    }
    Ok((lm, TrainReport { initial_loss, final_loss, steps: step }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Item;
    use crate::tensor::{finite_diff, max_rel_err};

    fn tiny_config(vocab: usize) -> LMConfig {
        LMConfig { vocab_size: vocab, d_model: 16, n_layers: 2, n_heads: 2, context_len: 16, seed: 3 }
    }

    #[test]
    fn tape_and_nograd_forward_agree() {
        let lm = Lm::new(tiny_config(11));
        let tokens = vec![1, 5, 9, 2, 2, 7];
        let mut tape = Tape::new();
        let leafs = lm.leaf_params(&mut tape);
        let hid_id = lm.hidden_on_tape(&mut tape, &leafs, &tokens);
        let tape_hidden = tape.value(hid_id).clone();
        let plain = lm.hidden(&tokens);
        assert_eq!(tape_hidden.rows, plain.rows);
        for (a, b) in tape_hidden.data.iter().zip(&plain.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn causality_suffix_perturbation() {
        let lm = Lm::new(tiny_config(11));
        let base = vec![1, 5, 9, 2, 3, 7, 4];
        let h1 = lm.hidden(&base);
        let mut edited = base.clone();
        edited[5] = 10;
        edited[6] = 0;
        let h2 = lm.hidden(&edited);
        for t in 0..5 {
            for c in 0..lm.config.d_model {
                assert!((h1.at(t, c) - h2.at(t, c)).abs() < 1e-12, "position {t} leaked");
            }
        }
    }

    #[test]
    fn tied_projection_logits_are_embedding_dots() {
        let lm = Lm::new(tiny_config(9));
        let tokens = vec![1, 2, 3];
        let h = lm.hidden(&tokens);
        let last = h.row(h.rows - 1);
        let logprobs = lm.next_token_logprobs(&tokens);
        // log p_v - log p_w == dot(h, e_v) - dot(h, e_w)
        let dot = |v: usize| -> f64 {
            last.iter().zip(lm.embed.row(v)).map(|(a, b)| a * b).sum()
        };
        let lhs = logprobs[4] - logprobs[7];
        let rhs = dot(4) - dot(7);
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn embed_tokens_lookup_semantics() {
        let lm = Lm::new(tiny_config(9));
        let rows = lm.embed_tokens(&[3, 5, 3]).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0], rows[2]);
        assert_eq!(rows[0].len(), lm.config.d_model);
        assert!(lm.embed_tokens(&[9]).is_err());
        assert!(lm.embed_tokens(&[]).unwrap().is_empty());
    }

    #[test]
    fn lm_gradients_match_finite_differences() {
        let lm = Lm::new(tiny_config(8));
        let stream = vec![1, 4, 2, 7, 3, 0];
        let mut tape = Tape::new();
        let leafs = lm.leaf_params(&mut tape);
        let loss = lm.stream_loss(&mut tape, &leafs, &stream);
        tape.backward(loss);

        let mut params: Vec<Array> = lm.params().into_iter().cloned().collect();
        for (pi, &leaf) in leafs.iter().enumerate() {
            let analytic = tape.grad(leaf).cloned().unwrap_or_else(|| {
                Array::zeros(params[pi].rows, params[pi].cols)
            });
            let numeric = finite_diff(&mut params, pi, 1e-5, |qs| {
                let mut probe = Lm::new(tiny_config(8));
                probe.set_params(qs.to_vec());
                let mut t2 = Tape::new();
                let l2 = probe.leaf_params(&mut t2);
                let loss2 = probe.stream_loss(&mut t2, &l2, &stream);
                t2.scalar(loss2)
            });
            let err = max_rel_err(&analytic, &numeric);
            assert!(err < 1e-3, "param {pi} rel err {err}");
        }
    }

    fn memorization_setup() -> (Vec<TokenId>, Lm) {
        // vocab: 0 unk, 1..=6 sentence tokens
        let sentence = vec![1, 2, 3, 4, 5, 6];
        let streams = vec![sentence.clone(); 64];
        let cfg = LMConfig { vocab_size: 7, d_model: 16, n_layers: 1, n_heads: 2, context_len: 8, seed: 5 };
        let opt = OptimizerConfig { lr: 3e-3, weight_decay: 0.0, batch_size: 16, epochs: 60, seed: 9 };
        let (lm, report) = train_lm(&streams, cfg, &opt).unwrap();
        assert!(report.final_loss < report.initial_loss);
        (sentence, lm)
    }

    #[test]
    fn overfit_reproduces_sentence_greedily() {
        let (sentence, lm) = memorization_setup();
        let mut tokens = vec![sentence[0]];
        for _ in 1..sentence.len() {
            let lp = lm.next_token_logprobs(&tokens);
            let argmax = lp
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            tokens.push(argmax);
        }
        assert_eq!(tokens, sentence);
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let streams = vec![vec![1, 2, 3, 4], vec![2, 3, 1, 4], vec![4, 1, 2, 3]];
        let cfg = tiny_config(5);
        let opt = OptimizerConfig { lr: 1e-3, weight_decay: 1e-6, batch_size: 2, epochs: 3, seed: 2 };
        let (lm1, r1) = train_lm(&streams, cfg, &opt).unwrap();
        let (lm2, r2) = train_lm(&streams, cfg, &opt).unwrap();
        assert_eq!(r1.final_loss.to_bits(), r2.final_loss.to_bits());
        for (a, b) in lm1.params().iter().zip(lm2.params().iter()) {
            assert_eq!(a.data, b.data);
        }
    }

    #[test]
    fn context_embedding_shape_and_determinism() {
        let lm = Lm::new(tiny_config(9));
        let q1 = lm.context_embedding(&[1, 2, 3]);
        let q2 = lm.context_embedding(&[1, 2, 3]);
        assert_eq!(q1.len(), lm.config.d_model);
        assert_eq!(q1, q2);
        let q3 = lm.context_embedding(&[3, 2, 1]);
        let cos = |a: &[f64], b: &[f64]| {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            dot / (na * nb)
        };
        assert!(cos(&q1, &q3) < 1.0 - 1e-9);
    }

    #[test]
    fn overlong_context_left_truncates() {
        let lm = Lm::new(tiny_config(9));
        let long: Vec<TokenId> = (0..40).map(|i| i % 9).collect();
        let q_long = lm.context_embedding(&long);
        let q_tail = lm.context_embedding(&long[40 - lm.config.context_len..]);
        assert_eq!(q_long, q_tail);
    }

    fn tiny_catalog() -> (crate::tokenizer::Tokenizer, ItemCatalog) {
        let tok = crate::tokenizer::Tokenizer::build(
            ["alpha beta", "alpha gamma", "delta"].into_iter(),
        );
        let items: Vec<Item> = ["alpha beta", "alpha gamma", "delta"]
            .iter()
            .enumerate()
            .map(|(i, t)| Item {
                id: i,
                title: t.to_string(),
                title_tokens: tok.encode(t),
                description: None,
                corpus_count: 0,
                platform_count: 0,
            })
            .collect();
        (tok, ItemCatalog::new(items).unwrap())
    }

    #[test]
    fn generate_titles_clamps_and_dedups() {
        let (tok, cat) = tiny_catalog();
        let cfg = LMConfig { vocab_size: tok.vocab_size(), ..tiny_config(tok.vocab_size()) };
        let lm = Lm::new(cfg);
        let out = lm.generate_titles(&cat, &[1], 10);
        assert_eq!(out.len(), cat.len());
        let mut sorted = out.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), out.len());
        assert!(out.iter().all(|&i| i < cat.len()));
    }

    #[test]
    fn overfit_lm_ranks_trained_pair_first() {
        let (tok, cat) = tiny_catalog();
        // context "delta" -> title "alpha gamma" (item 1)
        let context = tok.encode("delta");
        let mut stream = context.clone();
        stream.extend(cat.items[1].title_tokens.clone());
        let streams = vec![stream; 32];
        let cfg = LMConfig {
            vocab_size: tok.vocab_size(),
            d_model: 16,
            n_layers: 1,
            n_heads: 2,
            context_len: 8,
            seed: 4,
        };
        let opt = OptimizerConfig { lr: 3e-3, weight_decay: 0.0, batch_size: 8, epochs: 40, seed: 1 };
        let (lm, _) = train_lm(&streams, cfg, &opt).unwrap();
        let out = lm.generate_titles(&cat, &context, 1);
        assert_eq!(out, vec![1]);
    }
}
