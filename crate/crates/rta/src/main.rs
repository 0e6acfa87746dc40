//! Command-line orchestration: world generation, LM pretraining, reindexing,
//! recommender training, adaptation, evaluation, benchmarking, reporting, and
//! a minimal recommend REPL.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use rta::adapt::{self, Adapter, BiasMode};
use rta::catalog::ItemCatalog;
use rta::checkpoint::Checkpoint;
use rta::config::{AdaptMode, RunConfig};
use rta::data::{self, RecSample, SampleKind, SplitSpec, World};
use rta::eval;
use rta::lm::{Lm, LMConfig};
use rta::pipeline::{self, Pipeline};
use rta::recsys::{self, RecKind, RecModel};
use rta::reindex::{self, Aggregator, ItemTable, NegativeSet};
use rta::RtaError;

#[derive(Parser)]
#[command(name = "rta", about = "reindex-then-adapt conversational recommender pipeline")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Parser)]
struct Common {
    /// INI run configuration; defaults to <run-dir>/config.resolved.cfg
    #[arg(long)]
    config: Option<PathBuf>,
    /// directory for checkpoints/, metrics/, data/ and report.md
    #[arg(long, default_value = "runs/default")]
    run_dir: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// generate the synthetic world and write its JSONL datasets
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// pretrain the language model on the corpus
    TrainLm {
        #[command(flatten)]
        common: Common,
    },
    /// description-to-title retrieval probe per popularity bucket
    ProbeL2i {
        #[command(flatten)]
        common: Common,
    },
    /// train the title aggregator and build the item table
    Reindex {
        #[command(flatten)]
        common: Common,
    },
    /// train a traditional recommender on the platform split
    TrainRecsys {
        #[command(flatten)]
        common: Common,
    },
    /// train an adapter (bias-w | bias-b | bias-wb | gate | cont)
    Adapt {
        #[command(flatten)]
        common: Common,
        /// overrides the configured adapt mode
        #[arg(long)]
        mode: Option<String>,
    },
    /// evaluate one pipeline on the platform test split
    Eval {
        #[command(flatten)]
        common: Common,
        /// popularity | fism | sasrec | lm-gen | lm-r | bias-w | bias-b |
        /// bias-wb | gate | cont
        #[arg(long)]
        pipeline: String,
    },
    /// latency of single-step ranking vs generative decoding
    Bench {
        #[command(flatten)]
        common: Common,
    },
    /// merge all eval outputs into report.md / report.csv
    Report {
        #[command(flatten)]
        common: Common,
    },
    /// interactive top-10 recommendations for typed seeker utterances
    Recommend {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "lm-r")]
        pipeline: String,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // clap help/version are not usage errors
            use clap::error::ErrorKind::*;
            let _ = e.print();
            let code = match e.kind() {
                DisplayHelp | DisplayVersion => 0,
                _ => 1,
            };
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli.cmd) {
        eprintln!("error: {e}");
        std::process::exit(2);
    }
}

struct Stage {
    cfg: RunConfig,
    run_dir: PathBuf,
    world: World,
}

impl Stage {
    fn open(common: &Common) -> Result<Stage, RtaError> {
        let resolved_path = common.run_dir.join("config.resolved.cfg");
        let cfg = match &common.config {
            Some(p) => RunConfig::load(p)?,
            None if resolved_path.exists() => RunConfig::load(&resolved_path)?,
            None => RunConfig::default(),
        };
        std::fs::create_dir_all(common.run_dir.join("checkpoints"))?;
        std::fs::create_dir_all(common.run_dir.join("metrics"))?;
        std::fs::create_dir_all(common.run_dir.join("data"))?;
        let resolved = cfg.resolved();
        std::fs::write(&resolved_path, &resolved)?;
        println!("resolved configuration:\n{resolved}");
        let world = data::gen_world(&cfg.world)?;
        Ok(Stage { cfg, run_dir: common.run_dir.clone(), world })
    }

    fn checkpoint_path(&self, name: &str) -> PathBuf {
        self.run_dir.join("checkpoints").join(format!("{name}.rta1"))
    }

    fn load_checkpoint(&self, name: &str) -> Result<Checkpoint, RtaError> {
        let path = self.checkpoint_path(name);
        if !path.exists() {
            return Err(RtaError::Checkpoint(format!(
                "missing checkpoint {} (run the producing stage first)",
                path.display()
            )));
        }
        Checkpoint::load(&path)
    }

    fn load_lm(&self) -> Result<Lm, RtaError> {
        Lm::from_checkpoint(&self.load_checkpoint("lm")?)
    }

    fn load_reindex(&self, suffix: &str) -> Result<(Aggregator, ItemTable), RtaError> {
        let agg = Aggregator::from_checkpoint(&self.load_checkpoint(&format!(
            "aggregator{suffix}"
        ))?)?;
        let table =
            ItemTable { vectors: self.load_checkpoint(&format!("table{suffix}"))?.get("table/vectors")?.clone() };
        Ok((agg, table))
    }

    fn load_recsys(&self) -> Result<RecModel, RtaError> {
        let name = format!("recsys-{}", kind_name(self.cfg.recsys.kind));
        RecModel::from_checkpoint(&self.load_checkpoint(&name)?)
    }

    /// platform conversations split into train/valid/test sample sets
    fn platform_samples(&self) -> Result<(Vec<RecSample>, Vec<RecSample>, Vec<RecSample>), RtaError> {
        let spec = SplitSpec::Random { seed: self.cfg.world.seed.wrapping_add(101) };
        let (train, valid, test) = data::split(&self.world.platform, &spec)?;
        let mk = |convs: &[data::Conversation]| {
            data::make_rec_samples(convs, &self.world.catalog, &self.world.tokenizer, false)
        };
        Ok((mk(&train), mk(&valid), mk(&test)))
    }

    fn adapt_train_samples(&self) -> Result<Vec<RecSample>, RtaError> {
        let (mut train, _, _) = self.platform_samples()?;
        train.truncate(self.cfg.adapt.max_samples);
        Ok(train)
    }

    fn metrics_path(&self, name: &str, ext: &str) -> PathBuf {
        self.run_dir.join("metrics").join(format!("{name}.{ext}"))
    }
}

fn kind_name(kind: RecKind) -> &'static str {
    match kind {
        RecKind::Popularity => "popularity",
        RecKind::Fism => "fism",
        RecKind::Sasrec => "sasrec",
    }
}

fn run(cmd: Cmd) -> Result<(), RtaError> {
    match cmd {
        Cmd::GenData { common } => gen_data(&Stage::open(&common)?),
        Cmd::TrainLm { common } => train_lm(&Stage::open(&common)?),
        Cmd::ProbeL2i { common } => probe_l2i(&Stage::open(&common)?),
        Cmd::Reindex { common } => reindex_stage(&Stage::open(&common)?),
        Cmd::TrainRecsys { common } => train_recsys_stage(&Stage::open(&common)?),
        Cmd::Adapt { common, mode } => adapt_stage(&Stage::open(&common)?, mode.as_deref()),
        Cmd::Eval { common, pipeline } => eval_stage(&Stage::open(&common)?, &pipeline),
        Cmd::Bench { common } => bench_stage(&Stage::open(&common)?),
        Cmd::Report { common } => report_stage(&Stage::open(&common)?),
        Cmd::Recommend { common, pipeline } => recommend_repl(&Stage::open(&common)?, &pipeline),
    }
}

fn gen_data(stage: &Stage) -> Result<(), RtaError> {
    let dir = stage.run_dir.join("data");
    let world = &stage.world;
    let mut f = std::fs::File::create(dir.join("catalog.jsonl"))?;
    for item in &world.catalog.items {
        let line = serde_json::json!({
            "id": item.id,
            "title": item.title,
            "description": item.description,
            "corpus_count": item.corpus_count,
            "platform_count": item.platform_count,
        });
        writeln!(f, "{line}")?;
    }
    let mut f = std::fs::File::create(dir.join("corpus.jsonl"))?;
    for s in &world.corpus {
        let line = serde_json::json!({
            "context": world.tokenizer.decode(&s.context_tokens),
            "target_item": s.target_item,
            "kind": match s.kind { SampleKind::L2I => "l2i", SampleKind::L2R => "l2r" },
        });
        writeln!(f, "{line}")?;
    }
    data::save_conversations(&dir.join("platform.jsonl"), &world.platform, &world.tokenizer)?;
    world.tokenizer.save(&dir.join("vocab.txt"))?;
    println!(
        "wrote {} catalog items, {} corpus samples, {} platform conversations to {}",
        world.catalog.len(),
        world.corpus.len(),
        world.platform.len(),
        dir.display()
    );
    Ok(())
}

fn train_lm(stage: &Stage) -> Result<(), RtaError> {
    let world = &stage.world;
    let streams: Vec<Vec<usize>> = world
        .corpus
        .iter()
        .map(|s| s.lm_stream(&world.catalog, &world.tokenizer))
        .collect();
    let l = &stage.cfg.lm;
    let cfg = LMConfig {
        vocab_size: world.tokenizer.vocab_size(),
        d_model: l.d_model,
        n_layers: l.n_layers,
        n_heads: l.n_heads,
        context_len: l.context_len,
        seed: l.opt.seed,
    };
    let (lm, report) = rta::lm::train_lm(&streams, cfg, &l.opt.to_optimizer())?;
    lm.to_checkpoint().save(&stage.checkpoint_path("lm"))?;
    println!(
        "lm trained: loss {:.4} -> {:.4} over {} steps",
        report.initial_loss, report.final_loss, report.steps
    );
    Ok(())
}

fn probe_l2i(stage: &Stage) -> Result<(), RtaError> {
    let lm = stage.load_lm()?;
    let world = &stage.world;
    let samples: Vec<RecSample> =
        data::make_rec_samples(&[], &world.catalog, &world.tokenizer, true)
            .into_iter()
            .filter(|s| s.kind == SampleKind::L2I)
            .collect();
    let counts: Vec<u64> = world.catalog.items.iter().map(|i| i.platform_count).collect();
    let buckets = eval::l2i_probe(&samples, &counts, 5, |s| {
        ranked_to_scores(&lm.generate_titles(&world.catalog, &s.context_tokens, 5), world.catalog.len())
    });
    for b in &buckets {
        println!("{:<22} HIT@5 {:.3}  (n={})", b.label, b.hit, b.n);
    }
    std::fs::write(
        stage.metrics_path("probe-l2i", "json"),
        serde_json::to_string_pretty(&buckets).map_err(|e| RtaError::Format(e.to_string()))?,
    )?;
    Ok(())
}

fn reindex_stage(stage: &Stage) -> Result<(), RtaError> {
    let lm = stage.load_lm()?;
    let world = &stage.world;
    let r = &stage.cfg.reindex;
    let mut samples: Vec<RecSample> =
        world.corpus.iter().filter(|s| s.kind == SampleKind::L2R).cloned().collect();
    samples.truncate(r.max_samples);
    let neg = NegativeSet { strategy: r.negatives, n_negatives: r.n_negatives };
    let (agg, report) = reindex::train_aggregator(
        &lm,
        &samples,
        &world.catalog,
        r.aggregator,
        neg,
        &r.opt.to_optimizer(),
    )?;
    let table = reindex::build_item_table(&agg, &lm, &world.catalog)?;
    agg.to_checkpoint().save(&stage.checkpoint_path("aggregator"))?;
    save_table(&table, &stage.checkpoint_path("table"))?;
    println!(
        "aggregator trained: loss {:.4} -> {:.4} over {} steps",
        report.initial_loss, report.final_loss, report.steps
    );
    Ok(())
}

fn save_table(table: &ItemTable, path: &Path) -> Result<(), RtaError> {
    let mut ck = Checkpoint::new();
    ck.push("table/vectors", table.vectors.clone());
    ck.save(path)
}

fn train_recsys_stage(stage: &Stage) -> Result<(), RtaError> {
    let (train, _, _) = stage.platform_samples()?;
    let kind = stage.cfg.recsys.kind;
    let (model, report) = recsys::train_recsys(
        kind,
        &train,
        stage.world.catalog.len(),
        &stage.cfg.recsys.opt.to_optimizer(),
    )?;
    let name = format!("recsys-{}", kind_name(kind));
    model.to_checkpoint().save(&stage.checkpoint_path(&name))?;
    println!(
        "{} trained on {} samples: loss {:.4} -> {:.4}",
        kind_name(kind),
        train.len(),
        report.initial_loss,
        report.final_loss
    );
    Ok(())
}

fn adapt_stage(stage: &Stage, mode_override: Option<&str>) -> Result<(), RtaError> {
    let lm = stage.load_lm()?;
    let (agg, table) = stage.load_reindex("")?;
    let train = stage.adapt_train_samples()?;
    let n_items = stage.world.catalog.len();
    let opt = stage.cfg.adapt.opt.to_optimizer();
    let lm_hash = lm.to_checkpoint().content_hash();

    let (mode, bias_mode) = match mode_override {
        None => (stage.cfg.adapt.mode, stage.cfg.adapt.bias_mode),
        Some("bias-w") => (AdaptMode::Bias, BiasMode::WOnly),
        Some("bias-b") => (AdaptMode::Bias, BiasMode::BOnly),
        Some("bias-wb") => (AdaptMode::Bias, BiasMode::WAndB),
        Some("gate") => (AdaptMode::Gate, stage.cfg.adapt.bias_mode),
        Some("cont") => (AdaptMode::Cont, stage.cfg.adapt.bias_mode),
        Some(other) => {
            return Err(RtaError::Config(format!("unknown adapt mode {other:?}")))
        }
    };

    match mode {
        AdaptMode::Bias => {
            let inputs = pipeline::make_adapt_samples(&lm, &table, None, &train);
            let (adapter, report) = adapt::train_bias(&inputs, n_items, bias_mode, &opt)?;
            let name = match bias_mode {
                BiasMode::WOnly => "adapter-bias-w",
                BiasMode::BOnly => "adapter-bias-b",
                BiasMode::WAndB => "adapter-bias-wb",
            };
            adapter.to_checkpoint().save(&stage.checkpoint_path(name))?;
            println!(
                "bias adapter trained on {} samples: loss {:.4} -> {:.4}",
                train.len(),
                report.initial_loss,
                report.final_loss
            );
        }
        AdaptMode::Gate => {
            let mut rec = stage.load_recsys()?;
            if stage.cfg.adapt.unfreeze_recsys {
                let r = recsys::fine_tune(&mut rec, &train, &opt)?;
                println!(
                    "recsys head fine-tuned: loss {:.4} -> {:.4}",
                    r.initial_loss, r.final_loss
                );
                let name = format!("recsys-{}", kind_name(stage.cfg.recsys.kind));
                rec.to_checkpoint().save(&stage.checkpoint_path(&name))?;
            }
            let inputs = pipeline::make_adapt_samples(&lm, &table, Some(&rec), &train);
            let (adapter, report) = adapt::train_gate(&inputs, n_items, &opt)?;
            adapter.to_checkpoint().save(&stage.checkpoint_path("adapter-gate"))?;
            println!(
                "gate adapter trained on {} samples: alpha {:.3}, loss {:.4} -> {:.4}",
                train.len(),
                adapter.alpha().unwrap(),
                report.initial_loss,
                report.final_loss
            );
        }
        AdaptMode::Cont => {
            let mut agg = agg;
            let r = &stage.cfg.reindex;
            let neg = NegativeSet { strategy: r.negatives, n_negatives: r.n_negatives };
            let report = reindex::continue_aggregator(
                &mut agg,
                &lm,
                &train,
                &stage.world.catalog,
                neg,
                &opt,
            )?;
            let table = reindex::build_item_table(&agg, &lm, &stage.world.catalog)?;
            agg.to_checkpoint().save(&stage.checkpoint_path("aggregator-cont"))?;
            save_table(&table, &stage.checkpoint_path("table-cont"))?;
            println!(
                "aggregator continued on {} samples: loss {:.4} -> {:.4}",
                train.len(),
                report.initial_loss,
                report.final_loss
            );
        }
    }
    assert_eq!(lm.to_checkpoint().content_hash(), lm_hash, "LM must stay frozen during adapt");
    Ok(())
}

fn ranked_to_scores(ranked: &[usize], n_items: usize) -> Vec<f64> {
    let mut scores = vec![-1.0; n_items];
    for (pos, &item) in ranked.iter().enumerate() {
        scores[item] = (ranked.len() - pos) as f64;
    }
    scores
}

enum Scorer {
    Rec(RecModel),
    LmGen { lm: Lm, catalog: ItemCatalog, k: usize },
    Ranker(Pipeline),
}

impl Scorer {
    fn scores(&self, s: &RecSample) -> Vec<f64> {
        match self {
            Scorer::Rec(m) => m.score_all(&s.context_items),
            Scorer::LmGen { lm, catalog, k } => {
                ranked_to_scores(&lm.generate_titles(catalog, &s.context_tokens, *k), catalog.len())
            }
            Scorer::Ranker(p) => p.sample_logits(s),
        }
    }
}

fn pipeline_label(name: &str) -> Result<&'static str, RtaError> {
    Ok(match name {
        "popularity" => "Popularity",
        "fism" => "FISM",
        "sasrec" => "SASRec",
        "lm-gen" => "LM-generative",
        "lm-r" => "LM-R",
        "bias-w" => "LM-R+Bias (w/ gW)",
        "bias-b" => "LM-R+Bias (w/ b)",
        "bias-wb" => "LM-R+Bias (w/ gW+b)",
        "gate" => "LM-R+RecSys",
        "cont" => "Cont.",
        other => {
            return Err(RtaError::Config(format!("unknown pipeline {other:?}")))
        }
    })
}

fn build_scorer(stage: &Stage, name: &str) -> Result<Scorer, RtaError> {
    let catalog = &stage.world.catalog;
    Ok(match name {
        "popularity" | "fism" | "sasrec" => {
            let model =
                RecModel::from_checkpoint(&stage.load_checkpoint(&format!("recsys-{name}"))?)?;
            Scorer::Rec(model)
        }
        "lm-gen" => Scorer::LmGen { lm: stage.load_lm()?, catalog: catalog.clone(), k: 10 },
        "lm-r" => {
            let lm = stage.load_lm()?;
            let (agg, table) = stage.load_reindex("")?;
            Scorer::Ranker(Pipeline::new(lm, agg, table))
        }
        "bias-w" | "bias-b" | "bias-wb" => {
            let lm = stage.load_lm()?;
            let (agg, table) = stage.load_reindex("")?;
            let adapter =
                Adapter::from_checkpoint(&stage.load_checkpoint(&format!("adapter-{name}"))?)?;
            Scorer::Ranker(Pipeline::new(lm, agg, table).with_adapter(adapter))
        }
        "gate" => {
            let lm = stage.load_lm()?;
            let (agg, table) = stage.load_reindex("")?;
            let adapter = Adapter::from_checkpoint(&stage.load_checkpoint("adapter-gate")?)?;
            let rec = stage.load_recsys()?;
            Scorer::Ranker(Pipeline::new(lm, agg, table).with_adapter(adapter).with_recsys(rec))
        }
        "cont" => {
            let lm = stage.load_lm()?;
            let (agg, table) = stage.load_reindex("-cont")?;
            Scorer::Ranker(Pipeline::new(lm, agg, table))
        }
        other => {
            return Err(RtaError::Config(format!("unknown pipeline {other:?}")))
        }
    })
}

fn eval_stage(stage: &Stage, name: &str) -> Result<(), RtaError> {
    let label = pipeline_label(name)?;
    let scorer = build_scorer(stage, name)?;
    let (_, _, test) = stage.platform_samples()?;
    let table = eval::metrics_table(label, &test, stage.cfg.eval.remove_repeated, |s| {
        scorer.scores(s)
    })?;
    let csv = eval::metrics_csv(&table);
    std::fs::write(stage.metrics_path(name, "csv"), &csv)?;
    std::fs::write(
        stage.metrics_path(name, "json"),
        serde_json::to_string_pretty(&table).map_err(|e| RtaError::Format(e.to_string()))?,
    )?;
    print!("{csv}");

    if name != "lm-gen" {
        let alignment =
            adapt::model_alignment(&test, stage.world.catalog.len(), 10, |s| scorer.scores(s));
        let titles: Vec<String> =
            stage.world.catalog.items.iter().map(|i| i.title.clone()).collect();
        let top20: String = adapt::model_alignment_csv(&alignment, &titles)
            .lines()
            .take(21)
            .collect::<Vec<_>>()
            .join("\n");
        std::fs::write(stage.metrics_path(&format!("alignment-{name}"), "csv"), top20)?;
        let summary = serde_json::json!({
            "kl": alignment.kl,
            "k": alignment.k,
            "n_contexts": alignment.n_contexts,
        });
        std::fs::write(
            stage.metrics_path(&format!("alignment-{name}"), "json"),
            serde_json::to_string_pretty(&summary).map_err(|e| RtaError::Format(e.to_string()))?,
        )?;
        println!("alignment KL(dataset || model top-10): {:.4}", alignment.kl);
    }
    Ok(())
}

fn bench_stage(stage: &Stage) -> Result<(), RtaError> {
    let lm = stage.load_lm()?;
    let (agg, table) = stage.load_reindex("")?;
    let p = Pipeline::new(lm, agg, table);
    let (_, _, test) = stage.platform_samples()?;
    let want = stage.cfg.eval.bench_contexts.max(20);
    if test.is_empty() {
        return Err(RtaError::Data("no test contexts for benchmarking".into()));
    }
    let contexts: Vec<Vec<usize>> =
        (0..want).map(|i| test[i % test.len()].context_tokens.clone()).collect();
    let report =
        pipeline::latency_compare(&p, &stage.world.catalog, &contexts, stage.cfg.eval.bench_k);
    println!(
        "generative median {:.2} ms, single-step median {:.3} ms, speedup {:.1}x",
        report.baseline_median_ns as f64 / 1e6,
        report.candidate_median_ns as f64 / 1e6,
        report.speedup
    );
    std::fs::write(
        stage.metrics_path("latency", "json"),
        serde_json::to_string_pretty(&report).map_err(|e| RtaError::Format(e.to_string()))?,
    )?;
    Ok(())
}

const REPORT_ORDER: [&str; 10] = [
    "popularity",
    "fism",
    "sasrec",
    "lm-gen",
    "lm-r",
    "bias-w",
    "bias-b",
    "bias-wb",
    "gate",
    "cont",
];

fn report_stage(stage: &Stage) -> Result<(), RtaError> {
    let mut rows: Vec<(String, Vec<(String, f64, f64, usize)>)> = Vec::new();
    for name in REPORT_ORDER {
        let path = stage.metrics_path(name, "json");
        if !path.exists() {
            continue;
        }
        let text = std::fs::read_to_string(&path)?;
        let v: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| RtaError::Format(e.to_string()))?;
        let label = v["pipeline"].as_str().unwrap_or(name).to_string();
        let metrics = v["rows"]
            .as_array()
            .ok_or_else(|| RtaError::Format(format!("{}: missing rows", path.display())))?
            .iter()
            .map(|r| {
                (
                    r["metric"].as_str().unwrap_or("").to_string(),
                    r["mean"].as_f64().unwrap_or(f64::NAN),
                    r["standard_error"].as_f64().unwrap_or(f64::NAN),
                    r["n_samples"].as_u64().unwrap_or(0) as usize,
                )
            })
            .collect();
        rows.push((label, metrics));
    }
    if rows.is_empty() {
        return Err(RtaError::Data("no eval outputs found; run `rta eval` first".into()));
    }

    let mut csv = String::from("pipeline,H@5,N@5,H@10,N@10,n\n");
    let mut md = String::from("| pipeline | H@5 | N@5 | H@10 | N@10 | n |\n|---|---|---|---|---|---|\n");
    for (label, metrics) in &rows {
        let cell = |name: &str| {
            metrics
                .iter()
                .find(|(m, ..)| m == name)
                .map(|(_, mean, se, _)| format!("{mean:.4} ± {se:.4}"))
                .unwrap_or_else(|| "-".into())
        };
        let n = metrics.first().map(|(.., n)| *n).unwrap_or(0);
        csv.push_str(&format!(
            "{label},{},{},{},{},{n}\n",
            cell("H@5"),
            cell("N@5"),
            cell("H@10"),
            cell("N@10")
        ));
        md.push_str(&format!(
            "| {label} | {} | {} | {} | {} | {n} |\n",
            cell("H@5"),
            cell("N@5"),
            cell("H@10"),
            cell("N@10")
        ));
    }
    std::fs::write(stage.run_dir.join("report.csv"), &csv)?;
    std::fs::write(stage.run_dir.join("report.md"), &md)?;
    print!("{md}");
    Ok(())
}

fn recommend_repl(stage: &Stage, name: &str) -> Result<(), RtaError> {
    let scorer = build_scorer(stage, name)?;
    let catalog = &stage.world.catalog;
    println!("type a seeker utterance (empty line to quit):");
    let stdin = std::io::stdin();
    for line in stdin.lock().lines() {
        let line = line?;
        let text = line.trim();
        if text.is_empty() {
            break;
        }
        let context = stage.world.tokenizer.encode(&format!("seeker : {text} ; recommender :"));
        let sample = RecSample {
            context_tokens: context,
            target_item: 0,
            kind: SampleKind::L2R,
            period: 0,
            context_items: vec![],
        };
        let scores = scorer.scores(&sample);
        let probs = adapt::softmax(&scores);
        // tolerate a closed stdout (e.g. piped through `head`)
        let mut out = std::io::stdout().lock();
        for (rank, (item, _)) in pipeline::top_k(&scores, 10).into_iter().enumerate() {
            if writeln!(
                out,
                "{:>2}. {:<40} p={:.4}",
                rank + 1,
                catalog.items[item].title,
                probs[item]
            )
            .is_err()
            {
                return Ok(());
            }
        }
        let _ = writeln!(out);
    }
    Ok(())
}
