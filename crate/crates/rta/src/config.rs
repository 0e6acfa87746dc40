//! Flat INI-style run configuration: `[section]` headers and `key = value`
//! lines, no nesting. Unknown sections or keys are rejected so typos cannot
//! silently fall back to defaults.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::adapt::BiasMode;
use crate::data::WorldConfig;
use crate::recsys::RecKind;
use crate::reindex::{AggregatorKind, NegStrategy};
use crate::RtaError;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptSection {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LmSection {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub context_len: usize,
    pub opt: OptSection,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReindexSection {
    pub aggregator: AggregatorKind,
    pub negatives: NegStrategy,
    pub n_negatives: usize,
    pub max_samples: usize,
    pub opt: OptSection,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RecsysSection {
    pub kind: RecKind,
    pub opt: OptSection,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdaptMode {
    Bias,
    Gate,
    Cont,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdaptSection {
    pub mode: AdaptMode,
    pub bias_mode: BiasMode,
    pub unfreeze_recsys: bool,
    pub max_samples: usize,
    pub opt: OptSection,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalSection {
    pub remove_repeated: bool,
    pub holdout_periods: usize,
    pub bench_contexts: usize,
    pub bench_k: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub world: WorldConfig,
    pub lm: LmSection,
    pub reindex: ReindexSection,
    pub recsys: RecsysSection,
    pub adapt: AdaptSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            world: WorldConfig::default(),
            lm: LmSection {
                d_model: 64,
                n_layers: 2,
                n_heads: 2,
                context_len: 128,
                opt: OptSection {
                    lr: 1e-3,
                    weight_decay: 0.0,
                    batch_size: 64,
                    epochs: 2,
                    seed: 11,
                },
            },
            reindex: ReindexSection {
                aggregator: AggregatorKind::Rnn,
                negatives: NegStrategy::Mixed,
                n_negatives: 32,
                max_samples: 20_000,
                opt: OptSection {
                    lr: 1e-3,
                    weight_decay: 0.0,
                    batch_size: 64,
                    epochs: 2,
                    seed: 12,
                },
            },
            recsys: RecsysSection {
                kind: RecKind::Fism,
                opt: OptSection {
                    lr: 1e-2,
                    weight_decay: 0.0,
                    batch_size: 64,
                    epochs: 3,
                    seed: 13,
                },
            },
            adapt: AdaptSection {
                mode: AdaptMode::Bias,
                bias_mode: BiasMode::WAndB,
                unfreeze_recsys: false,
                max_samples: 10_000,
                opt: OptSection {
                    lr: 1e-2,
                    weight_decay: 0.0,
                    batch_size: 64,
                    epochs: 10,
                    seed: 14,
                },
            },
            eval: EvalSection {
                remove_repeated: true,
                holdout_periods: 2,
                bench_contexts: 30,
                bench_k: 20,
            },
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, RtaError> {
        let mut cfg = RunConfig::default();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = name.trim().to_string();
                if !["world", "lm", "reindex", "recsys", "adapt", "eval"]
                    .contains(&section.as_str())
                {
                    return Err(RtaError::Config(format!(
                        "line {}: unknown section [{section}]",
                        lineno + 1
                    )));
                }
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(RtaError::Config(format!(
                    "line {}: expected `key = value`, got {line:?}",
                    lineno + 1
                )));
            };
            let key = key.trim();
            let value = value.trim();
            if section.is_empty() {
                return Err(RtaError::Config(format!(
                    "line {}: key {key:?} before any [section]",
                    lineno + 1
                )));
            }
            cfg.set(&section, key, value).map_err(|e| {
                RtaError::Config(format!("line {}: {e}", lineno + 1))
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, RtaError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn set(&mut self, section: &str, key: &str, value: &str) -> Result<(), String> {
        match section {
            "world" => {
                let w = &mut self.world;
                match key {
                    "n_items" => w.n_items = num(value)?,
                    "zipf_exponent_corpus" => w.zipf_exponent_corpus = num(value)?,
                    "zipf_exponent_platform" => w.zipf_exponent_platform = num(value)?,
                    "misalignment_delta" => w.misalignment_delta = num(value)?,
                    "n_periods" => w.n_periods = num(value)?,
                    "drift_rate" => w.drift_rate = num(value)?,
                    "corpus_size" => w.corpus_size = num(value)?,
                    "platform_size" => w.platform_size = num(value)?,
                    "l2i_fraction" => w.l2i_fraction = num(value)?,
                    "seed" => w.seed = num(value)?,
                    "cluster_boost" => w.cluster_boost = num(value)?,
                    "popularity_only" => w.popularity_only = flag(value)?,
                    _ => return Err(unknown(section, key)),
                }
            }
            "lm" => {
                let l = &mut self.lm;
                match key {
                    "d_model" => l.d_model = num(value)?,
                    "n_layers" => l.n_layers = num(value)?,
                    "n_heads" => l.n_heads = num(value)?,
                    "context_len" => l.context_len = num(value)?,
                    _ => set_opt(&mut l.opt, section, key, value)?,
                }
            }
            "reindex" => {
                let r = &mut self.reindex;
                match key {
                    "aggregator" => {
                        r.aggregator = match value {
                            "embed" => AggregatorKind::Embed,
                            "weighted" => AggregatorKind::Weighted,
                            "trm" => AggregatorKind::Trm,
                            "rnn" => AggregatorKind::Rnn,
                            _ => return Err(format!("unknown aggregator {value:?}")),
                        }
                    }
                    "negatives" => {
                        r.negatives = match value {
                            "in_batch" => NegStrategy::InBatch,
                            "uniform" => NegStrategy::Uniform,
                            "mixed" => NegStrategy::Mixed,
                            _ => return Err(format!("unknown negative strategy {value:?}")),
                        }
                    }
                    "n_negatives" => r.n_negatives = num(value)?,
                    "max_samples" => r.max_samples = num(value)?,
                    _ => set_opt(&mut r.opt, section, key, value)?,
                }
            }
            "recsys" => {
                let r = &mut self.recsys;
                match key {
                    "kind" => r.kind = RecKind::from_str(value).map_err(|e| e.to_string())?,
                    _ => set_opt(&mut r.opt, section, key, value)?,
                }
            }
            "adapt" => {
                let a = &mut self.adapt;
                match key {
                    "mode" => {
                        a.mode = match value {
                            "bias" => AdaptMode::Bias,
                            "gate" => AdaptMode::Gate,
                            "cont" => AdaptMode::Cont,
                            _ => return Err(format!("unknown adapt mode {value:?}")),
                        }
                    }
                    "bias_mode" => {
                        a.bias_mode = BiasMode::from_str(value).map_err(|e| e.to_string())?
                    }
                    "unfreeze_recsys" => a.unfreeze_recsys = flag(value)?,
                    "max_samples" => a.max_samples = num(value)?,
                    _ => set_opt(&mut a.opt, section, key, value)?,
                }
            }
            "eval" => {
                let e = &mut self.eval;
                match key {
                    "remove_repeated" => e.remove_repeated = flag(value)?,
                    "holdout_periods" => e.holdout_periods = num(value)?,
                    "bench_contexts" => e.bench_contexts = num(value)?,
                    "bench_k" => e.bench_k = num(value)?,
                    _ => return Err(unknown(section, key)),
                }
            }
            _ => unreachable!("section validated by parse"),
        }
        Ok(())
    }

    /// The fully resolved configuration, in the same INI format it is read
    /// from; logged verbatim at the start of every run.
    pub fn resolved(&self) -> String {
        let mut s = String::new();
        let w = &self.world;
        writeln!(s, "[world]").unwrap();
        writeln!(s, "n_items = {}", w.n_items).unwrap();
        writeln!(s, "zipf_exponent_corpus = {}", w.zipf_exponent_corpus).unwrap();
        writeln!(s, "zipf_exponent_platform = {}", w.zipf_exponent_platform).unwrap();
        writeln!(s, "misalignment_delta = {}", w.misalignment_delta).unwrap();
        writeln!(s, "n_periods = {}", w.n_periods).unwrap();
        writeln!(s, "drift_rate = {}", w.drift_rate).unwrap();
        writeln!(s, "corpus_size = {}", w.corpus_size).unwrap();
        writeln!(s, "platform_size = {}", w.platform_size).unwrap();
        writeln!(s, "l2i_fraction = {}", w.l2i_fraction).unwrap();
        writeln!(s, "seed = {}", w.seed).unwrap();
        writeln!(s, "cluster_boost = {}", w.cluster_boost).unwrap();
        writeln!(s, "popularity_only = {}", w.popularity_only).unwrap();
        let l = &self.lm;
        writeln!(s, "[lm]").unwrap();
        writeln!(s, "d_model = {}", l.d_model).unwrap();
        writeln!(s, "n_layers = {}", l.n_layers).unwrap();
        writeln!(s, "n_heads = {}", l.n_heads).unwrap();
        writeln!(s, "context_len = {}", l.context_len).unwrap();
        write_opt(&mut s, &l.opt);
        let r = &self.reindex;
        writeln!(s, "[reindex]").unwrap();
        let agg = match r.aggregator {
            AggregatorKind::Embed => "embed",
            AggregatorKind::Weighted => "weighted",
            AggregatorKind::Trm => "trm",
            AggregatorKind::Rnn => "rnn",
        };
        writeln!(s, "aggregator = {agg}").unwrap();
        let negs = match r.negatives {
            NegStrategy::InBatch => "in_batch",
            NegStrategy::Uniform => "uniform",
            NegStrategy::Mixed => "mixed",
        };
        writeln!(s, "negatives = {negs}").unwrap();
        writeln!(s, "n_negatives = {}", r.n_negatives).unwrap();
        writeln!(s, "max_samples = {}", r.max_samples).unwrap();
        write_opt(&mut s, &r.opt);
        let rc = &self.recsys;
        writeln!(s, "[recsys]").unwrap();
        let kind = match rc.kind {
            RecKind::Popularity => "popularity",
            RecKind::Fism => "fism",
            RecKind::Sasrec => "sasrec",
        };
        writeln!(s, "kind = {kind}").unwrap();
        write_opt(&mut s, &rc.opt);
        let a = &self.adapt;
        writeln!(s, "[adapt]").unwrap();
        let mode = match a.mode {
            AdaptMode::Bias => "bias",
            AdaptMode::Gate => "gate",
            AdaptMode::Cont => "cont",
        };
        writeln!(s, "mode = {mode}").unwrap();
        let bm = match a.bias_mode {
            BiasMode::WOnly => "w",
            BiasMode::BOnly => "b",
            BiasMode::WAndB => "wb",
        };
        writeln!(s, "bias_mode = {bm}").unwrap();
        writeln!(s, "unfreeze_recsys = {}", a.unfreeze_recsys).unwrap();
        writeln!(s, "max_samples = {}", a.max_samples).unwrap();
        write_opt(&mut s, &a.opt);
        let e = &self.eval;
        writeln!(s, "[eval]").unwrap();
        writeln!(s, "remove_repeated = {}", e.remove_repeated).unwrap();
        writeln!(s, "holdout_periods = {}", e.holdout_periods).unwrap();
        writeln!(s, "bench_contexts = {}", e.bench_contexts).unwrap();
        writeln!(s, "bench_k = {}", e.bench_k).unwrap();
        s
    }
}

fn set_opt(opt: &mut OptSection, section: &str, key: &str, value: &str) -> Result<(), String> {
    match key {
        "lr" => opt.lr = num(value)?,
        "weight_decay" => opt.weight_decay = num(value)?,
        "batch_size" => opt.batch_size = num(value)?,
        "epochs" => opt.epochs = num(value)?,
        "seed" => opt.seed = num(value)?,
        _ => return Err(unknown(section, key)),
    }
    Ok(())
}

fn write_opt(s: &mut String, opt: &OptSection) {
    writeln!(s, "lr = {}", opt.lr).unwrap();
    writeln!(s, "weight_decay = {}", opt.weight_decay).unwrap();
    writeln!(s, "batch_size = {}", opt.batch_size).unwrap();
    writeln!(s, "epochs = {}", opt.epochs).unwrap();
    writeln!(s, "seed = {}", opt.seed).unwrap();
}

fn unknown(section: &str, key: &str) -> String {
    format!("unknown key {key:?} in section [{section}]")
}

fn num<T: FromStr>(value: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| format!("bad value {value:?}: {e}"))
}

fn flag(value: &str) -> Result<bool, String> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("bad boolean {value:?} (use true/false)")),
    }
}

impl OptSection {
    pub fn to_optimizer(self) -> crate::lm::OptimizerConfig {
        crate::lm::OptimizerConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn resolved_roundtrips() {
        let mut cfg = RunConfig::default();
        cfg.world.n_items = 123;
        cfg.adapt.mode = AdaptMode::Gate;
        cfg.reindex.aggregator = AggregatorKind::Weighted;
        let parsed = RunConfig::parse(&cfg.resolved()).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn overrides_and_comments() {
        let text = "# comment\n[world]\nn_items = 50\nseed = 99\n\n[lm]\nepochs = 7\n";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.world.n_items, 50);
        assert_eq!(cfg.world.seed, 99);
        assert_eq!(cfg.lm.opt.epochs, 7);
        assert_eq!(cfg.lm.d_model, 64);
    }

    #[test]
    fn unknown_key_rejected() {
        let err = RunConfig::parse("[world]\nn_item = 5\n").unwrap_err();
        assert!(err.to_string().contains("n_item"), "{err}");
        let err = RunConfig::parse("[nope]\nx = 1\n").unwrap_err();
        assert!(err.to_string().contains("[nope]"), "{err}");
        let err = RunConfig::parse("x = 1\n").unwrap_err();
        assert!(err.to_string().contains("before any"), "{err}");
    }

    #[test]
    fn bad_values_name_the_line() {
        let err = RunConfig::parse("[world]\nn_items = many\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        let err = RunConfig::parse("[eval]\nremove_repeated = yes\n").unwrap_err();
        assert!(err.to_string().contains("yes"), "{err}");
    }

    #[test]
    fn enums_parse() {
        let text = "[reindex]\naggregator = trm\nnegatives = uniform\n[recsys]\nkind = sasrec\n[adapt]\nmode = cont\nbias_mode = b\n";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.reindex.aggregator, AggregatorKind::Trm);
        assert_eq!(cfg.reindex.negatives, NegStrategy::Uniform);
        assert_eq!(cfg.recsys.kind, RecKind::Sasrec);
        assert_eq!(cfg.adapt.mode, AdaptMode::Cont);
        assert_eq!(cfg.adapt.bias_mode, BiasMode::BOnly);
    }
}
