//! Synthetic-world generation with controllable popularity misalignment and
//! temporal drift, L2I/L2R corpus construction, JSONL conversation ingestion,
//! and dataset splitting.

use std::io::BufRead;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{Item, ItemCatalog, ItemId};
use crate::tokenizer::{TokenId, Tokenizer};
use crate::RtaError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Seeker,
    Recommender,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConversationTurn {
    pub speaker: Speaker,
    pub text: Vec<TokenId>,
    pub items: Vec<ItemId>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Conversation {
    pub id: usize,
    pub turns: Vec<ConversationTurn>,
    pub period: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SampleKind {
    L2I,
    L2R,
}

/// A (context, target) training or evaluation pair. `context_tokens` ends
/// exactly where the target item's title begins.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RecSample {
    pub context_tokens: Vec<TokenId>,
    pub target_item: ItemId,
    pub kind: SampleKind,
    pub period: usize,
    /// catalog items mentioned in the context, in mention order
    pub context_items: Vec<ItemId>,
}

impl RecSample {
    /// Full next-token training stream: context, title, terminator.
    pub fn lm_stream(&self, catalog: &ItemCatalog, tokenizer: &Tokenizer) -> Vec<TokenId> {
        let mut s = self.context_tokens.clone();
        s.extend_from_slice(&catalog.items[self.target_item].title_tokens);
        s.extend(tokenizer.encode("."));
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub n_items: usize,
    pub zipf_exponent_corpus: f64,
    pub zipf_exponent_platform: f64,
    /// fraction of ranking positions permuted between corpus and platform
    pub misalignment_delta: f64,
    pub n_periods: usize,
    /// per-period fraction of ranking positions re-permuted
    pub drift_rate: f64,
    pub corpus_size: usize,
    pub platform_size: usize,
    pub l2i_fraction: f64,
    pub seed: u64,
    /// probability that a platform target comes from the last context item's
    /// cluster (gives the platform item-to-item structure the corpus lacks)
    pub cluster_boost: f64,
    /// when set, contexts carry no genre signal and targets are drawn from the
    /// global ranking, so only the popularity marginal is learnable
    pub popularity_only: bool,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            n_items: 2000,
            zipf_exponent_corpus: 1.0,
            zipf_exponent_platform: 1.0,
            misalignment_delta: 0.5,
            n_periods: 12,
            drift_rate: 0.1,
            corpus_size: 50_000,
            platform_size: 10_000,
            l2i_fraction: 0.1,
            seed: 7,
            cluster_boost: 0.5,
            popularity_only: false,
        }
    }
}

const ADJECTIVES: &[&str] = &[
    "silver", "crimson", "golden", "hollow", "savage", "quiet", "broken", "electric", "frozen",
    "burning", "midnight", "scarlet", "iron", "velvet", "wild", "lonely", "rising", "fallen",
    "hidden", "final", "eternal", "shattered", "distant", "neon", "rusty", "pale", "grim",
    "radiant", "solemn", "restless", "bitter", "gentle", "hungry", "silent", "stormy", "ancient",
    "glass", "paper", "marble", "obsidian", "amber", "cobalt", "ivory", "emerald", "violet",
    "ashen", "lunar", "solar",
];

const NOUNS: &[&str] = &[
    "falcon", "harbor", "empire", "garden", "voyage", "mirror", "orchard", "lantern", "citadel",
    "meadow", "serpent", "compass", "anthem", "harvest", "beacon", "canyon", "tempest", "prophet",
    "vagabond", "carousel", "labyrinth", "monarch", "outpost", "pilgrim", "reverie", "sparrow",
    "thicket", "undertow", "vertigo", "wanderer", "zephyr", "avalanche", "bastion", "cascade",
    "dynamo", "eclipse", "fugitive", "gambit", "horizon", "inferno", "juggernaut", "kingdom",
    "mariner", "nocturne", "oracle", "paradox", "quarry", "requiem", "summit", "tundra",
];

const NUMERALS: &[&str] = &["ii", "iii"];

pub const GENRES: &[&str] =
    &["space", "noir", "comedy", "horror", "western", "romance", "fantasy", "drama"];

const STARS: &[&str] = &[
    "vera", "marlon", "ingrid", "takeshi", "priya", "omar", "greta", "dmitri", "lucia", "kofi",
    "astrid", "rafael", "mei", "henrik", "zainab", "carlos", "noor", "stellan", "amara", "bruno",
];

const SEEKER_TEMPLATES: &[&str] = &[
    "hi i am in the mood for a {genre} movie tonight maybe like {items}",
    "hello can you suggest a good {genre} film i enjoyed {items}",
    "hey i want something {genre} to watch i liked {items}",
    "looking for a {genre} movie recommendation similar to {items}",
    "i love {genre} films such as {items} any ideas",
    "what {genre} movie should i see next after {items}",
    "please recommend a {genre} film for someone who liked {items}",
    "any great {genre} picks i recently watched {items}",
];

const RECOMMENDER_LEADS: &[&str] = &[
    "you should watch",
    "i would recommend",
    "you might enjoy",
    "my top pick is",
];

const L2I_LEAD: &str = "film description :";
const L2I_BRIDGE: &str = "; the title is";

/// Everything `gen_world` produces, plus the exact sampling distributions the
/// world was drawn from (tests read the planted popularity back out).
pub struct World {
    pub config: WorldConfig,
    pub tokenizer: Tokenizer,
    pub catalog: ItemCatalog,
    pub corpus: Vec<RecSample>,
    pub platform: Vec<Conversation>,
    pub corpus_probs: Vec<f64>,
    /// one probability vector per period
    pub period_probs: Vec<Vec<f64>>,
    pub genres: Vec<usize>,
    pub clusters: Vec<usize>,
}

impl World {
    /// Planted per-item additive log-shift between corpus and the given
    /// platform period.
    pub fn log_shift(&self, period: usize) -> Vec<f64> {
        self.period_probs[period]
            .iter()
            .zip(&self.corpus_probs)
            .map(|(p, c)| p.ln() - c.ln())
            .collect()
    }
}

fn zipf_probs(ranking: &[ItemId], exponent: f64) -> Vec<f64> {
    let n = ranking.len();
    let mut probs = vec![0.0; n];
    let mut z = 0.0;
    for (rank, &item) in ranking.iter().enumerate() {
        let w = 1.0 / ((rank + 1) as f64).powf(exponent);
        probs[item] = w;
        z += w;
    }
    for p in probs.iter_mut() {
        *p /= z;
    }
    probs
}

/// Shuffles the items occupying a `fraction` of ranking positions.
fn permute_fraction(ranking: &mut [ItemId], fraction: f64, rng: &mut ChaCha8Rng) {
    let n = ranking.len();
    let k = ((n as f64) * fraction).round() as usize;
    if k < 2 {
        return;
    }
    let mut positions: Vec<usize> = (0..n).collect();
    // partial Fisher-Yates: first k entries are a uniform sample
    for i in 0..k {
        let j = rng.gen_range(i..n);
        positions.swap(i, j);
    }
    let chosen = &positions[..k];
    let mut occupants: Vec<ItemId> = chosen.iter().map(|&p| ranking[p]).collect();
    for i in (1..occupants.len()).rev() {
        let j = rng.gen_range(0..=i);
        occupants.swap(i, j);
    }
    for (&pos, &item) in chosen.iter().zip(&occupants) {
        ranking[pos] = item;
    }
}

struct Sampler<'a> {
    probs: &'a [f64],
}

impl<'a> Sampler<'a> {
    /// Draws from `probs` restricted to `subset` (all items when empty).
    fn draw(&self, subset: &[ItemId], rng: &mut ChaCha8Rng) -> ItemId {
        if subset.is_empty() {
            let u: f64 = rng.gen::<f64>();
            let mut acc = 0.0;
            for (i, &p) in self.probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    return i;
                }
            }
            return self.probs.len() - 1;
        }
        let total: f64 = subset.iter().map(|&i| self.probs[i]).sum();
        let u: f64 = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        for &i in subset {
            acc += self.probs[i];
            if u < acc {
                return i;
            }
        }
        subset[subset.len() - 1]
    }
}

fn dedup_preserving_order(items: &mut Vec<ItemId>) {
    let mut seen = std::collections::HashSet::new();
    items.retain(|&i| seen.insert(i));
}

fn render_items(catalog: &ItemCatalog, items: &[ItemId]) -> String {
    items
        .iter()
        .map(|&i| catalog.items[i].title.clone())
        .collect::<Vec<_>>()
        .join(" and ")
}

/// Builds a 2-turn (or 4-turn) templated conversation mentioning `ctx_items`
/// before `targets`.
#[allow(clippy::too_many_arguments)]
fn build_conversation(
    id: usize,
    period: usize,
    genre: usize,
    ctx_items: &[ItemId],
    targets: &[ItemId],
    catalog: &ItemCatalog,
    tokenizer: &Tokenizer,
    rng: &mut ChaCha8Rng,
) -> Conversation {
    let template = SEEKER_TEMPLATES[rng.gen_range(0..SEEKER_TEMPLATES.len())];
    let seeker_text = template
        .replace("{genre}", GENRES[genre])
        .replace("{items}", &render_items(catalog, ctx_items));
    let lead = RECOMMENDER_LEADS[rng.gen_range(0..RECOMMENDER_LEADS.len())];
    let rec_text = if targets.len() == 1 {
        format!("{lead} {} .", catalog.items[targets[0]].title)
    } else {
        format!(
            "{lead} {} or {} .",
            catalog.items[targets[0]].title,
            catalog.items[targets[1]].title
        )
    };
    Conversation {
        id,
        period,
        turns: vec![
            ConversationTurn {
                speaker: Speaker::Seeker,
                text: tokenizer.encode(&seeker_text),
                items: ctx_items.to_vec(),
            },
            ConversationTurn {
                speaker: Speaker::Recommender,
                text: tokenizer.encode(&rec_text),
                items: targets.to_vec(),
            },
        ],
    }
}

pub fn gen_world(config: &WorldConfig) -> Result<World, RtaError> {
    if config.n_items < 2 {
        return Err(RtaError::Data("n_items must be at least 2".into()));
    }
    let capacity = ADJECTIVES.len() * NOUNS.len();
    if config.n_items > capacity {
        return Err(RtaError::Data(format!("n_items exceeds title capacity {capacity}")));
    }

    let mut structure_rng = ChaCha8Rng::seed_from_u64(config.seed);
    structure_rng.set_stream(0);
    let mut ranking_rng = ChaCha8Rng::seed_from_u64(config.seed);
    ranking_rng.set_stream(1);
    let mut corpus_rng = ChaCha8Rng::seed_from_u64(config.seed);
    corpus_rng.set_stream(2);
    let mut platform_rng = ChaCha8Rng::seed_from_u64(config.seed);
    platform_rng.set_stream(3);

    // titles: distinct (adjective, noun) combos, some with a numeral suffix;
    // a combo never appears both with and without the suffix, so no title is
    // a token prefix of another
    let mut combos: Vec<(usize, usize)> = (0..ADJECTIVES.len())
        .flat_map(|a| (0..NOUNS.len()).map(move |n| (a, n)))
        .collect();
    for i in (1..combos.len()).rev() {
        let j = structure_rng.gen_range(0..=i);
        combos.swap(i, j);
    }
    let mut titles = Vec::with_capacity(config.n_items);
    let mut genres = Vec::with_capacity(config.n_items);
    let mut clusters = Vec::with_capacity(config.n_items);
    let mut descriptions = Vec::with_capacity(config.n_items);
    for &(a, n) in combos.iter().take(config.n_items) {
        let mut title = format!("{} {}", ADJECTIVES[a], NOUNS[n]);
        if structure_rng.gen::<f64>() < 0.25 {
            title.push(' ');
            title.push_str(NUMERALS[structure_rng.gen_range(0..NUMERALS.len())]);
        }
        let genre = structure_rng.gen_range(0..GENRES.len());
        let star = STARS[structure_rng.gen_range(0..STARS.len())];
        let year = 1960 + structure_rng.gen_range(0..64);
        descriptions.push(format!(
            "a {year} {} film about the {} starring {star}",
            GENRES[genre],
            NOUNS[n]
        ));
        titles.push(title);
        genres.push(genre);
        clusters.push(n);
    }

    // vocabulary: every word the templates, titles, and descriptions can emit
    let year_words: Vec<String> = (1960..2024).map(|y| y.to_string()).collect();
    let template_text = format!(
        "{} {} {} {} seeker recommender : ; . or and a film about starring {L2I_LEAD} {L2I_BRIDGE}",
        SEEKER_TEMPLATES.join(" "),
        RECOMMENDER_LEADS.join(" "),
        GENRES.join(" "),
        STARS.join(" "),
    );
    let mut vocab_texts: Vec<&str> = vec![&template_text];
    vocab_texts.extend(ADJECTIVES);
    vocab_texts.extend(NOUNS);
    vocab_texts.extend(NUMERALS);
    let year_refs: Vec<&str> = year_words.iter().map(String::as_str).collect();
    vocab_texts.extend(year_refs);
    let tokenizer = Tokenizer::build(vocab_texts.into_iter());

    let items: Vec<Item> = titles
        .iter()
        .enumerate()
        .map(|(i, t)| Item {
            id: i,
            title: t.clone(),
            title_tokens: tokenizer.encode(t),
            description: Some(descriptions[i].clone()),
            corpus_count: 0,
            platform_count: 0,
        })
        .collect();
    let mut catalog = ItemCatalog::new(items)?;

    // popularity rankings
    let mut corpus_ranking: Vec<ItemId> = (0..config.n_items).collect();
    for i in (1..corpus_ranking.len()).rev() {
        let j = ranking_rng.gen_range(0..=i);
        corpus_ranking.swap(i, j);
    }
    let corpus_probs = zipf_probs(&corpus_ranking, config.zipf_exponent_corpus);
    let mut platform_ranking = corpus_ranking.clone();
    permute_fraction(&mut platform_ranking, config.misalignment_delta, &mut ranking_rng);
    let mut period_probs = Vec::with_capacity(config.n_periods);
    let mut period_ranking = platform_ranking;
    for p in 0..config.n_periods {
        if p > 0 {
            permute_fraction(&mut period_ranking, config.drift_rate, &mut ranking_rng);
        }
        period_probs.push(zipf_probs(&period_ranking, config.zipf_exponent_platform));
    }

    // per-genre item pools
    let mut genre_items: Vec<Vec<ItemId>> = vec![Vec::new(); GENRES.len()];
    for (i, &g) in genres.iter().enumerate() {
        genre_items[g].push(i);
    }

    // pretrain corpus: L2I and L2R samples drawn from the corpus distribution
    let corpus_sampler = Sampler { probs: &corpus_probs };
    let empty: Vec<ItemId> = Vec::new();
    let mut corpus = Vec::with_capacity(config.corpus_size);
    for idx in 0..config.corpus_size {
        if corpus_rng.gen::<f64>() < config.l2i_fraction {
            let item = corpus_sampler.draw(&empty, &mut corpus_rng);
            catalog.items[item].corpus_count += 1;
            let context = format!(
                "{L2I_LEAD} {} {L2I_BRIDGE}",
                catalog.items[item].description.as_deref().unwrap_or("")
            );
            corpus.push(RecSample {
                context_tokens: tokenizer.encode(&context),
                target_item: item,
                kind: SampleKind::L2I,
                period: 0,
                context_items: Vec::new(),
            });
        } else {
            let target = corpus_sampler.draw(&empty, &mut corpus_rng);
            catalog.items[target].corpus_count += 1;
            let pool =
                if config.popularity_only { &empty } else { &genre_items[genres[target]] };
            let n_ctx = corpus_rng.gen_range(1..=2usize);
            let mut ctx: Vec<ItemId> =
                (0..n_ctx).map(|_| corpus_sampler.draw(pool, &mut corpus_rng)).collect();
            dedup_preserving_order(&mut ctx);
            let conv = build_conversation(
                idx,
                0,
                genres[target],
                &ctx,
                &[target],
                &catalog,
                &tokenizer,
                &mut corpus_rng,
            );
            let mut samples = extract_samples_with(&conv, &catalog, &tokenizer);
            corpus.append(&mut samples);
        }
    }

    // platform conversations, one period slice at a time
    let mut platform = Vec::with_capacity(config.platform_size);
    for idx in 0..config.platform_size {
        let period = idx * config.n_periods / config.platform_size;
        let sampler = Sampler { probs: &period_probs[period] };
        let genre = platform_rng.gen_range(0..GENRES.len());
        let pool = if config.popularity_only { &empty } else { &genre_items[genre] };
        let n_ctx = platform_rng.gen_range(1..=3usize);
        let mut ctx: Vec<ItemId> =
            (0..n_ctx).map(|_| sampler.draw(pool, &mut platform_rng)).collect();
        dedup_preserving_order(&mut ctx);
        let last = *ctx.last().expect("nonempty context");
        let n_targets = if platform_rng.gen::<f64>() < 0.1 { 2 } else { 1 };
        let mut targets = Vec::with_capacity(n_targets);
        for _ in 0..n_targets {
            let boosted = !config.popularity_only
                && platform_rng.gen::<f64>() < config.cluster_boost;
            let target = if boosted {
                let cluster_pool: Vec<ItemId> = genre_items[genre]
                    .iter()
                    .copied()
                    .filter(|&i| clusters[i] == clusters[last])
                    .collect();
                sampler.draw(&cluster_pool, &mut platform_rng)
            } else {
                sampler.draw(pool, &mut platform_rng)
            };
            targets.push(target);
        }
        dedup_preserving_order(&mut targets);
        for &t in &targets {
            catalog.items[t].platform_count += 1;
        }
        platform.push(build_conversation(
            idx,
            period,
            genre,
            &ctx,
            &targets,
            &catalog,
            &tokenizer,
            &mut platform_rng,
        ));
    }

    Ok(World {
        config: config.clone(),
        tokenizer,
        catalog,
        corpus,
        platform,
        corpus_probs,
        period_probs,
        genres,
        clusters,
    })
}

const TURN_SEPARATOR: &str = ";";

fn speaker_word(s: Speaker) -> &'static str {
    match s {
        Speaker::Seeker => "seeker",
        Speaker::Recommender => "recommender",
    }
}

/// Renders conversation turns through the fixed prompt template:
/// `seeker : <text> ; recommender : <text> ; ...`
pub fn render_turns(turns: &[ConversationTurn], tokenizer: &Tokenizer) -> Vec<TokenId> {
    let mut out = Vec::new();
    for (i, turn) in turns.iter().enumerate() {
        if i > 0 {
            out.extend(tokenizer.encode(TURN_SEPARATOR));
        }
        out.extend(tokenizer.encode(speaker_word(turn.speaker)));
        out.extend(tokenizer.encode(":"));
        out.extend_from_slice(&turn.text);
    }
    out
}

/// One L2R sample per (conversation prefix, recommender-turn item) pair.
fn extract_samples_with(
    conv: &Conversation,
    catalog: &ItemCatalog,
    tokenizer: &Tokenizer,
) -> Vec<RecSample> {
    let mut samples = Vec::new();
    for (k, turn) in conv.turns.iter().enumerate() {
        if turn.speaker != Speaker::Recommender || turn.items.is_empty() {
            continue;
        }
        let spans = catalog.locate_item_spans(&turn.text);
        let mut prefix = render_turns(&conv.turns[..k], tokenizer);
        if k > 0 {
            prefix.extend(tokenizer.encode(TURN_SEPARATOR));
        }
        prefix.extend(tokenizer.encode(speaker_word(turn.speaker)));
        prefix.extend(tokenizer.encode(":"));
        let context_items: Vec<ItemId> = conv.turns[..k]
            .iter()
            .flat_map(|t| t.items.iter().copied())
            .collect();
        for span in spans {
            let mut context = prefix.clone();
            context.extend_from_slice(&turn.text[..span.start]);
            let mut mentioned = context_items.clone();
            // items mentioned earlier in the same turn count as context too
            for earlier in catalog.locate_item_spans(&turn.text[..span.start]) {
                mentioned.push(earlier.item_id);
            }
            samples.push(RecSample {
                context_tokens: context,
                target_item: span.item_id,
                kind: SampleKind::L2R,
                period: conv.period,
                context_items: mentioned,
            });
        }
    }
    samples
}

/// L2R samples from conversations plus, optionally, one L2I sample per
/// described catalog item.
pub fn make_rec_samples(
    conversations: &[Conversation],
    catalog: &ItemCatalog,
    tokenizer: &Tokenizer,
    l2i_from_catalog: bool,
) -> Vec<RecSample> {
    let mut samples = Vec::new();
    for conv in conversations {
        samples.extend(extract_samples_with(conv, catalog, tokenizer));
    }
    if l2i_from_catalog {
        for item in &catalog.items {
            if let Some(desc) = &item.description {
                let context = format!("{L2I_LEAD} {desc} {L2I_BRIDGE}");
                samples.push(RecSample {
                    context_tokens: tokenizer.encode(&context),
                    target_item: item.id,
                    kind: SampleKind::L2I,
                    period: 0,
                    context_items: Vec::new(),
                });
            }
        }
    }
    samples
}

#[derive(Clone, Debug)]
pub enum SplitSpec {
    Random { seed: u64 },
    Temporal { last_k: usize },
}

/// Disjoint (train, valid, test) cover of the conversations.
pub fn split(
    dataset: &[Conversation],
    spec: &SplitSpec,
) -> Result<(Vec<Conversation>, Vec<Conversation>, Vec<Conversation>), RtaError> {
    if dataset.is_empty() {
        return Err(RtaError::Data("cannot split an empty dataset".into()));
    }
    match spec {
        SplitSpec::Random { seed } => {
            let mut order: Vec<usize> = (0..dataset.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            for i in (1..order.len()).rev() {
                let j = rng.gen_range(0..=i);
                order.swap(i, j);
            }
            let n = dataset.len();
            let n_valid = n / 10;
            let n_test = n / 10;
            let n_train = n - n_valid - n_test;
            let pick = |range: std::ops::Range<usize>| {
                range.map(|i| dataset[order[i]].clone()).collect::<Vec<_>>()
            };
            Ok((
                pick(0..n_train),
                pick(n_train..n_train + n_valid),
                pick(n_train + n_valid..n),
            ))
        }
        SplitSpec::Temporal { last_k } => {
            let mut periods: Vec<usize> = dataset.iter().map(|c| c.period).collect();
            periods.sort_unstable();
            periods.dedup();
            if periods.len() < 3 {
                return Err(RtaError::Data(format!(
                    "temporal split needs at least 3 distinct periods, got {}",
                    periods.len()
                )));
            }
            let k = (*last_k).max(2);
            let held = &periods[periods.len() - k.min(periods.len())..];
            let split_at = held.len() / 2;
            let valid_periods = &held[..split_at];
            let test_periods = &held[split_at..];
            let mut train = Vec::new();
            let mut valid = Vec::new();
            let mut test = Vec::new();
            for c in dataset {
                if test_periods.contains(&c.period) {
                    test.push(c.clone());
                } else if valid_periods.contains(&c.period) {
                    valid.push(c.clone());
                } else {
                    train.push(c.clone());
                }
            }
            Ok((train, valid, test))
        }
    }
}

#[derive(Deserialize)]
struct TurnLine {
    speaker: Speaker,
    text: String,
    #[serde(default)]
    items: Vec<ItemId>,
}

#[derive(Deserialize)]
struct ConversationLine {
    id: usize,
    #[serde(default)]
    period: usize,
    turns: Vec<TurnLine>,
}

/// Loads JSONL conversations, resolving item mentions by span location.
/// Returns the conversations and the count of annotated ids that could not be
/// located in their turn's text.
pub fn load_conversations(
    path: &Path,
    catalog: &ItemCatalog,
    tokenizer: &Tokenizer,
) -> Result<(Vec<Conversation>, usize), RtaError> {
    let f = std::fs::File::open(path)?;
    let mut out = Vec::new();
    let mut dropped = 0usize;
    for (lineno, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ConversationLine = serde_json::from_str(&line).map_err(|e| {
            RtaError::Format(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        let mut turns = Vec::new();
        for (ti, t) in parsed.turns.iter().enumerate() {
            let expected = if ti % 2 == 0 { Speaker::Seeker } else { Speaker::Recommender };
            if t.speaker != expected {
                return Err(RtaError::Data(format!(
                    "{}:{}: turns must alternate starting with seeker",
                    path.display(),
                    lineno + 1
                )));
            }
            let text = tokenizer.encode(&t.text);
            let located: Vec<ItemId> =
                catalog.locate_item_spans(&text).iter().map(|s| s.item_id).collect();
            let mut items = Vec::new();
            for &annotated in &t.items {
                if located.contains(&annotated) {
                    items.push(annotated);
                } else {
                    dropped += 1;
                }
            }
            turns.push(ConversationTurn { speaker: t.speaker, text, items });
        }
        out.push(Conversation { id: parsed.id, turns, period: parsed.period });
    }
    Ok((out, dropped))
}

/// Serializes conversations back to the JSONL interchange format.
pub fn save_conversations(
    path: &Path,
    conversations: &[Conversation],
    tokenizer: &Tokenizer,
) -> Result<(), RtaError> {
    use std::io::Write;
    let mut f = std::fs::File::create(path)?;
    for c in conversations {
        let turns: Vec<serde_json::Value> = c
            .turns
            .iter()
            .map(|t| {
                serde_json::json!({
                    "speaker": match t.speaker {
                        Speaker::Seeker => "seeker",
                        Speaker::Recommender => "recommender",
                    },
                    "text": tokenizer.decode(&t.text),
                    "items": t.items,
                })
            })
            .collect();
        let line = serde_json::json!({"id": c.id, "period": c.period, "turns": turns});
        writeln!(f, "{line}")?;
    }
    Ok(())
}
