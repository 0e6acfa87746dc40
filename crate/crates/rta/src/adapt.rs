//! The adapt step: small trainable layers on top of the frozen LM-plus-table
//! logits that pull the predicted item distribution toward platform behavior.
//! Two families: an item-wise affine bias on the logits, and a scalar gate
//! blending in a traditional recommender's logits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::ItemId;
use crate::checkpoint::Checkpoint;
use crate::lm::{OptimizerConfig, TrainReport};
use crate::tensor::{Adam, Array, Tape, TensorId};
use crate::RtaError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BiasMode {
    WOnly,
    BOnly,
    WAndB,
}

impl std::str::FromStr for BiasMode {
    type Err = RtaError;
    fn from_str(s: &str) -> Result<Self, RtaError> {
        match s {
            "w" => Ok(BiasMode::WOnly),
            "b" => Ok(BiasMode::BOnly),
            "wb" => Ok(BiasMode::WAndB),
            other => Err(RtaError::Config(format!("unknown bias mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub enum Adapter {
    /// logits -> g * w + b, item-wise
    Bias { w: Vec<f64>, b: Vec<f64>, mode: BiasMode },
    /// logits -> alpha * g + (1 - alpha) * g_tilde, alpha = sigmoid(alpha_raw)
    Gate { alpha_raw: f64 },
}

impl Adapter {
    pub fn identity_bias(n_items: usize, mode: BiasMode) -> Self {
        Adapter::Bias { w: vec![1.0; n_items], b: vec![0.0; n_items], mode }
    }

    pub fn balanced_gate() -> Self {
        Adapter::Gate { alpha_raw: 0.0 }
    }

    /// Adjusted logits. `g` is the reindexed-LM score vector; `g_tilde` is
    /// required for the gate and ignored by the bias.
    pub fn adjust(&self, g: &[f64], g_tilde: Option<&[f64]>) -> Vec<f64> {
        match self {
            Adapter::Bias { w, b, .. } => bias_logits(g, w, b),
            Adapter::Gate { alpha_raw } => {
                let gt = g_tilde.expect("gate adapter needs recommender logits");
                gate_logits(g, gt, *alpha_raw)
            }
        }
    }

    pub fn alpha(&self) -> Option<f64> {
        match self {
            Adapter::Gate { alpha_raw } => Some(sigmoid(*alpha_raw)),
            Adapter::Bias { .. } => None,
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        match self {
            Adapter::Bias { w, b, mode } => {
                ck.push_scalar("adapt/kind", 0.0);
                ck.push_scalar(
                    "adapt/mode",
                    match mode {
                        BiasMode::WOnly => 0.0,
                        BiasMode::BOnly => 1.0,
                        BiasMode::WAndB => 2.0,
                    },
                );
                ck.push("adapt/w", Array::from_vec(1, w.len(), w.clone()));
                ck.push("adapt/b", Array::from_vec(1, b.len(), b.clone()));
            }
            Adapter::Gate { alpha_raw } => {
                ck.push_scalar("adapt/kind", 1.0);
                ck.push_scalar("adapt/alpha_raw", *alpha_raw);
            }
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, RtaError> {
        match ck.get_scalar("adapt/kind")? as i64 {
            0 => {
                let mode = match ck.get_scalar("adapt/mode")? as i64 {
                    0 => BiasMode::WOnly,
                    1 => BiasMode::BOnly,
                    2 => BiasMode::WAndB,
                    m => {
                        return Err(RtaError::Checkpoint(format!("unknown bias mode tag {m}")))
                    }
                };
                Ok(Adapter::Bias {
                    w: ck.get("adapt/w")?.data.clone(),
                    b: ck.get("adapt/b")?.data.clone(),
                    mode,
                })
            }
            1 => Ok(Adapter::Gate { alpha_raw: ck.get_scalar("adapt/alpha_raw")? }),
            other => Err(RtaError::Checkpoint(format!("unknown adapter tag {other}"))),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// softmax(g * w + b)
pub fn apply_bias(g: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    softmax(&bias_logits(g, w, b))
}

/// softmax(alpha * g + (1 - alpha) * g_tilde), alpha = sigmoid(alpha_raw)
pub fn apply_gate(g: &[f64], g_tilde: &[f64], alpha_raw: f64) -> Vec<f64> {
    softmax(&gate_logits(g, g_tilde, alpha_raw))
}

pub fn bias_logits(g: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    assert_eq!(g.len(), w.len());
    assert_eq!(g.len(), b.len());
    g.iter().zip(w).zip(b).map(|((gi, wi), bi)| gi * wi + bi).collect()
}

pub fn gate_logits(g: &[f64], g_tilde: &[f64], alpha_raw: f64) -> Vec<f64> {
    assert_eq!(g.len(), g_tilde.len());
    let a = sigmoid(alpha_raw);
    g.iter().zip(g_tilde).map(|(gi, ti)| a * gi + (1.0 - a) * ti).collect()
}

/// Numerically stable softmax.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// KL(p || q) for two dense probability vectors; both must be normalized and
/// strictly positive where p is positive.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len());
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / qi).ln())
        .sum()
}

/// One training example for the adapters: precomputed logit vectors plus the
/// observed target.
#[derive(Clone, Debug)]
pub struct AdaptSample {
    pub g: Vec<f64>,
    pub g_tilde: Option<Vec<f64>>,
    pub target: ItemId,
}

/// Trains a bias adapter by maximum likelihood over the full catalog softmax.
pub fn train_bias(
    samples: &[AdaptSample],
    n_items: usize,
    mode: BiasMode,
    opt: &OptimizerConfig,
) -> Result<(Adapter, TrainReport), RtaError> {
    validate(samples, n_items, false)?;
    let mut w = Array::full(1, n_items, 1.0);
    let mut b = Array::zeros(1, n_items);
    let train_w = mode != BiasMode::BOnly;
    let train_b = mode != BiasMode::WOnly;
    let mut trainable: Vec<Array> = Vec::new();
    if train_w {
        trainable.push(w.clone());
    }
    if train_b {
        trainable.push(b.clone());
    }
    let mut adam = Adam::new(&trainable, opt.lr, opt.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(opt.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut report = TrainReport { initial_loss: f64::NAN, final_loss: f64::NAN, steps: 0 };

    for _epoch in 0..opt.epochs {
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for batch in order.chunks(opt.batch_size) {
            let mut tape = Tape::new();
            let mut ti = 0;
            let w_id = if train_w {
                ti += 1;
                tape.leaf(trainable[0].clone())
            } else {
                tape.leaf(w.clone())
            };
            let b_id = if train_b {
                tape.leaf(trainable[ti].clone())
            } else {
                tape.leaf(b.clone())
            };
            let mut loss_acc: Option<TensorId> = None;
            for &si in batch {
                let s = &samples[si];
                let g = tape.leaf(Array::from_vec(1, n_items, s.g.clone()));
                let scaled = tape.mul(g, w_id);
                let adj = tape.add(scaled, b_id);
                let l = tape.cross_entropy(adj, &[s.target]);
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
                    "non-finite bias-adapter loss at step {} (lr {})",
                    report.steps, opt.lr
                )));
            }
            if report.steps == 0 {
                report.initial_loss = loss_val;
            }
            report.final_loss = loss_val;
            tape.backward(loss);
            let mut grads = Vec::new();
            if train_w {
                grads.push(tape.take_grad(w_id));
            }
            if train_b {
                grads.push(tape.take_grad(b_id));
            }
            adam.step(&mut trainable, &grads);
            report.steps += 1;
        }
    }
    let mut ti = 0;
    if train_w {
        w = trainable[0].clone();
        ti += 1;
    }
    if train_b {
        b = trainable[ti].clone();
    }
    Ok((Adapter::Bias { w: w.data, b: b.data, mode }, report))
}

/// Trains the scalar gate by maximum likelihood; recommender logits are taken
/// as fixed inputs.
pub fn train_gate(
    samples: &[AdaptSample],
    n_items: usize,
    opt: &OptimizerConfig,
) -> Result<(Adapter, TrainReport), RtaError> {
    validate(samples, n_items, true)?;
    let mut alpha = vec![Array::zeros(1, 1)];
    let mut adam = Adam::new(&alpha, opt.lr, opt.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(opt.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut report = TrainReport { initial_loss: f64::NAN, final_loss: f64::NAN, steps: 0 };

    for _epoch in 0..opt.epochs {
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for batch in order.chunks(opt.batch_size) {
            let mut tape = Tape::new();
            let raw = tape.leaf(alpha[0].clone());
            let a = tape.sigmoid(raw);
            let mut loss_acc: Option<TensorId> = None;
            for &si in batch {
                let s = &samples[si];
                let gt = s.g_tilde.as_ref().expect("validated");
                let diff: Vec<f64> = s.g.iter().zip(gt).map(|(x, y)| x - y).collect();
                let diff_id = tape.leaf(Array::from_vec(1, n_items, diff));
                let gt_id = tape.leaf(Array::from_vec(1, n_items, gt.clone()));
                // alpha*g + (1-alpha)*g~  ==  g~ + alpha*(g - g~)
                let blend = tape.matmul(a, diff_id);
                let adj = tape.add(gt_id, blend);
                let l = tape.cross_entropy(adj, &[s.target]);
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
                    "non-finite gate loss at step {} (lr {})",
                    report.steps, opt.lr
                )));
            }
            if report.steps == 0 {
                report.initial_loss = loss_val;
            }
            report.final_loss = loss_val;
            tape.backward(loss);
            let grads = vec![tape.take_grad(raw)];
            adam.step(&mut alpha, &grads);
            report.steps += 1;
        }
    }
    Ok((Adapter::Gate { alpha_raw: alpha[0].data[0] }, report))
}

fn validate(samples: &[AdaptSample], n_items: usize, need_gt: bool) -> Result<(), RtaError> {
    if samples.is_empty() {
        return Err(RtaError::Data("no samples for adapter training".into()));
    }
    for (i, s) in samples.iter().enumerate() {
        if s.g.len() != n_items {
            return Err(RtaError::Data(format!(
                "sample {i}: logit vector has {} entries, catalog has {n_items}",
                s.g.len()
            )));
        }
        if s.target >= n_items {
            return Err(RtaError::Data(format!("sample {i}: target {} out of range", s.target)));
        }
        if need_gt && s.g_tilde.is_none() {
            return Err(RtaError::Data(format!(
                "sample {i}: gate training needs recommender logits"
            )));
        }
    }
    Ok(())
}

/// Per-item corpus-vs-platform frequency comparison, with an add-1-smoothed
/// KL(platform || corpus) summary.
#[derive(Clone, Debug, Serialize)]
pub struct AlignmentRow {
    pub item: ItemId,
    pub corpus_count: u64,
    pub platform_count: u64,
    pub corpus_prob: f64,
    pub platform_prob: f64,
    pub log_ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct AlignmentReport {
    pub kl_platform_vs_corpus: f64,
    pub rows: Vec<AlignmentRow>,
}

pub fn alignment_report(corpus_counts: &[u64], platform_counts: &[u64]) -> AlignmentReport {
    assert_eq!(corpus_counts.len(), platform_counts.len());
    let n = corpus_counts.len() as f64;
    let ct: u64 = corpus_counts.iter().sum();
    let pt: u64 = platform_counts.iter().sum();
    let rows: Vec<AlignmentRow> = corpus_counts
        .iter()
        .zip(platform_counts)
        .enumerate()
        .map(|(i, (&c, &p))| {
            let cp = (c + 1) as f64 / (ct as f64 + n);
            let pp = (p + 1) as f64 / (pt as f64 + n);
            AlignmentRow {
                item: i,
                corpus_count: c,
                platform_count: p,
                corpus_prob: cp,
                platform_prob: pp,
                log_ratio: (pp / cp).ln(),
            }
        })
        .collect();
    let kl = rows.iter().map(|r| r.platform_prob * (r.platform_prob / r.corpus_prob).ln()).sum();
    AlignmentReport { kl_platform_vs_corpus: kl, rows }
}

/// Alignment between a ranker's top-K lists and the observed targets on a
/// test split: model share = item frequency across top-K lists, dataset
/// share = empirical target frequency, KL(dataset || model) with add-1
/// smoothing on the model side.
#[derive(Clone, Debug, Serialize)]
pub struct ModelAlignment {
    pub kl: f64,
    pub k: usize,
    pub n_contexts: usize,
    pub dataset_share: Vec<f64>,
    pub model_share: Vec<f64>,
}

pub fn model_alignment<F>(
    samples: &[crate::data::RecSample],
    n_items: usize,
    k: usize,
    scorer: F,
) -> ModelAlignment
where
    F: Fn(&crate::data::RecSample) -> Vec<f64>,
{
    assert!(!samples.is_empty());
    let mut top_counts = vec![0u64; n_items];
    let mut target_counts = vec![0u64; n_items];
    for s in samples {
        target_counts[s.target_item] += 1;
        let scores = scorer(s);
        let mut idx: Vec<ItemId> = (0..n_items).collect();
        idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
        for &i in idx.iter().take(k) {
            top_counts[i] += 1;
        }
    }
    let n = samples.len() as f64;
    let dataset_share: Vec<f64> = target_counts.iter().map(|&c| c as f64 / n).collect();
    let model_total: u64 = top_counts.iter().sum();
    let model_share: Vec<f64> = top_counts
        .iter()
        .map(|&c| (c + 1) as f64 / (model_total as f64 + n_items as f64))
        .collect();
    let kl = dataset_share
        .iter()
        .zip(&model_share)
        .filter(|(d, _)| **d > 0.0)
        .map(|(d, m)| d * (d / m).ln())
        .sum();
    ModelAlignment { kl, k, n_contexts: samples.len(), dataset_share, model_share }
}

/// CSV rows (item_id, title, dataset_share, model_share), highest dataset
/// share first.
pub fn model_alignment_csv(report: &ModelAlignment, titles: &[String]) -> String {
    let mut order: Vec<usize> = (0..report.dataset_share.len()).collect();
    order.sort_by(|&a, &b| {
        report.dataset_share[b].partial_cmp(&report.dataset_share[a]).unwrap().then(a.cmp(&b))
    });
    let mut out = String::from("item_id,title,dataset_share,model_share\n");
    for i in order {
        out.push_str(&format!(
            "{},{},{:.12},{:.12}\n",
            i, titles[i], report.dataset_share[i], report.model_share[i]
        ));
    }
    out
}

pub fn alignment_csv(report: &AlignmentReport) -> String {
    let mut out =
        String::from("item,corpus_count,platform_count,corpus_prob,platform_prob,log_ratio\n");
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{:.12},{:.12},{:.12}\n",
            r.item, r.corpus_count, r.platform_count, r.corpus_prob, r.platform_prob, r.log_ratio
        ));
    }
    out
}
