use std::io::{BufRead, Write};
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use anyhow::{anyhow, Context, Result};
use convrec_core::config::{EngineConfig, PathKind};
use convrec_core::corpus::{corpus_stats, parse_corpus, split, MovieDb, StatsReport};
use convrec_core::dialogue::{build_dialogue_examples, mean_nll, predicted_ratings, train_dialogue, DialogueExample};
use convrec_core::engine::{Component, Diagnostics, Engine, EngineBundle, TurnResult, MOVIES_FILE};
use convrec_core::recommender::{
    evaluate_heldout, global_mean, load_id_map, load_ratings_csv, split_ratings, synthetic_ratings,
    train_autorec, Autorec, AutorecConfig, Procedure, RatingVector, Validation,
};
use convrec_core::sentiment::{build_examples, evaluate_sentiment, train_sentiment, SentimentReport};
use convrec_core::synth::{template_dialogues_jsonl, template_movies};
use convrec_core::tensor::{checkpoint, ParamStore};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::setup::{apply_data_args, checkpoint_dir, load_config, load_corpus, load_movies, open_bundle, prepare_bundle};
use crate::{Cli, Command, UsageError};

pub fn run(cli: Cli) -> Result<()> {
    let mut config = load_config(&cli)?;
    let json = cli.json;
    match cli.command {
        Command::Stats { corpus, movies } => {
            if let Some(p) = corpus {
                config.paths.corpus = Some(p);
            }
            if let Some(p) = movies {
                config.paths.movies = Some(p);
            }
            stats(&config, json)
        }
        Command::PretrainRecommender {
            procedure,
            epochs,
            ratings,
            movies,
        } => {
            if let Some(p) = procedure {
                config.recommender.train.procedure = p;
            }
            if let Some(e) = epochs {
                config.recommender.train.epochs = e;
            }
            if let Some(p) = ratings {
                config.paths.ratings = Some(p);
            }
            if let Some(p) = movies {
                config.paths.movies = Some(p);
            }
            pretrain_recommender(&config, json)
        }
        Command::TrainSentiment { data, epochs } => {
            apply_data_args(&mut config, &data);
            if let Some(e) = epochs {
                config.sentiment.train.epochs = e;
            }
            train_sentiment_cmd(&config, json)
        }
        Command::TrainDialogue { data, epochs } => {
            apply_data_args(&mut config, &data);
            if let Some(e) = epochs {
                config.dialogue.train.epochs = e;
            }
            train_dialogue_cmd(&config, json)
        }
        Command::Evaluate { data } => {
            apply_data_args(&mut config, &data);
            evaluate(&config, json)
        }
        Command::Chat => chat(&config, json),
        Command::Serve {
            host,
            port,
            allow_origin,
        } => serve(&config, &host, port, allow_origin),
        Command::Synth {
            out,
            dialogues,
            movies,
            users,
            density,
        } => synth(&out, dialogues, movies, users, density, config.seed, json),
    }
}

fn emit<T: Serialize>(json: bool, report: &T, text: impl FnOnce() -> String) -> Result<()> {
    if json {
        println!("{}", serde_json::to_string_pretty(report)?);
    } else {
        println!("{}", text());
    }
    Ok(())
}

fn stats(c: &EngineConfig, json: bool) -> Result<()> {
    let path = c.paths.corpus.as_deref().ok_or_else(|| UsageError("stats needs a corpus path".into()))?;
    let db = match &c.paths.movies {
        Some(p) => MovieDb::load_tsv(p)?,
        None => MovieDb::new(Vec::new())?,
    };
    let parsed = parse_corpus(path, &db)?;
    for w in &parsed.warnings {
        log::warn!("{w}");
    }
    let report: StatsReport = corpus_stats(&parsed.conversations);
    emit(json, &report, || report.to_string())
}

#[derive(Debug, Serialize)]
struct Repetition {
    seed: u64,
    lambda: f64,
    validation_rmse: f64,
    test_rmse: f64,
    baseline_rmse: f64,
}

#[derive(Debug, Serialize)]
struct PretrainReport {
    procedure: Procedure,
    epochs: usize,
    users: usize,
    ratings: usize,
    liked_fraction: f64,
    repetitions: Vec<Repetition>,
    mean_test_rmse: f64,
    mean_baseline_rmse: f64,
    checkpoint: String,
}

/// RMSE of predicting `value` for every held-out rating.
fn constant_rmse(targets: &[RatingVector], value: f64) -> f64 {
    let (mut sse, mut n) = (0.0, 0usize);
    for r in targets {
        for (_, v) in r.observed_pairs() {
            sse += (value - v).powi(2);
            n += 1;
        }
    }
    if n == 0 {
        f64::NAN
    } else {
        (sse / n as f64).sqrt()
    }
}

fn pretrain_recommender(c: &EngineConfig, json: bool) -> Result<()> {
    c.validate_paths(&[PathKind::Movies, PathKind::Ratings, PathKind::CheckpointDir])?;
    let dir = checkpoint_dir(c)?;
    let db = load_movies(c)?;
    let id_map = c.paths.ratings_id_map.as_deref().map(load_id_map).transpose()?;
    let data = load_ratings_csv(c.paths.ratings.as_deref().expect("validated"), id_map.as_ref(), &db)?;
    if data.ratings == 0 {
        return Err(anyhow!("no ratings match the movie database"));
    }
    log::info!(
        "{} users, {} ratings ({} dropped), {:.1}% liked",
        data.users.len(),
        data.ratings,
        data.dropped,
        100.0 * data.liked_fraction()
    );
    let rc = &c.recommender;
    let grid = if rc.lambda_grid.is_empty() {
        vec![rc.model.lambda]
    } else {
        rc.lambda_grid.clone()
    };
    let mut reps = Vec::new();
    let mut best: Option<(f64, f64, ParamStore<f32>)> = None;
    for rep in 0..rc.repetitions.max(1) {
        let seed = c.seed.wrapping_add(rep as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = split_ratings(&data.users, rc.split, &mut rng)?;
        let val = Validation {
            inputs: &s.train,
            targets: &s.validation,
        };
        let mut chosen: Option<(f64, f64, ParamStore<f32>, Autorec)> = None;
        for &lambda in &grid {
            let mut store = ParamStore::<f32>::new();
            let model = Autorec::register(&mut store, db.len(), AutorecConfig { lambda, ..rc.model }, &mut rng)?;
            train_autorec(&model, &mut store, &s.train, Some(val), &rc.train, &mut rng)?;
            let v = evaluate_heldout(&model, &store, &s.train, &s.validation)?.rmse;
            log::info!("repetition {rep}, lambda {lambda}: validation RMSE {v:.4}");
            if chosen.as_ref().is_none_or(|(b, ..)| v < *b) {
                chosen = Some((v, lambda, store, model));
            }
        }
        let (v, lambda, store, model) = chosen.expect("grid is not empty");
        let test = evaluate_heldout(&model, &store, &s.train, &s.test)?.rmse;
        reps.push(Repetition {
            seed,
            lambda,
            validation_rmse: v,
            test_rmse: test,
            baseline_rmse: constant_rmse(&s.test, global_mean(&s.train)),
        });
        if best.as_ref().is_none_or(|(b, ..)| v < *b) {
            best = Some((v, lambda, store));
        }
    }
    let (_, lambda, store) = best.expect("at least one repetition");
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let file = dir.join(Component::Recommender.file_name());
    if dir.join(convrec_core::engine::CONFIG_FILE).exists() {
        let mut cfg = c.clone();
        cfg.recommender.model.lambda = lambda;
        let mut bundle = prepare_bundle(&cfg)?;
        if bundle.db != db {
            return Err(anyhow!("the movie database differs from the one in {}", dir.display()));
        }
        bundle.store.load_prefix(&store, Component::Recommender.prefix())?;
        bundle.save_component(dir, Component::Recommender)?;
    } else {
        checkpoint::save(&file, &store)?;
        std::fs::write(dir.join(MOVIES_FILE), db.to_tsv())?;
    }
    let n = reps.len() as f64;
    let report = PretrainReport {
        procedure: rc.train.procedure,
        epochs: rc.train.epochs,
        users: data.users.len(),
        ratings: data.ratings,
        liked_fraction: data.liked_fraction(),
        mean_test_rmse: reps.iter().map(|r| r.test_rmse).sum::<f64>() / n,
        mean_baseline_rmse: reps.iter().map(|r| r.baseline_rmse).sum::<f64>() / n,
        repetitions: reps,
        checkpoint: file.display().to_string(),
    };
    emit(json, &report, || {
        let mut s = format!(
            "procedure {} ({} epochs), {} users, {} ratings\n",
            report.procedure, report.epochs, report.users, report.ratings
        );
        for r in &report.repetitions {
            s += &format!(
                "seed {:>4}  lambda {:<6} validation {:.4}  test {:.4}  baseline {:.4}\n",
                r.seed, r.lambda, r.validation_rmse, r.test_rmse, r.baseline_rmse
            );
        }
        s += &format!(
            "mean test RMSE {:.4} (baseline {:.4})\nsaved {}",
            report.mean_test_rmse, report.mean_baseline_rmse, report.checkpoint
        );
        s
    })
}

#[derive(Debug, Serialize)]
struct SentimentTrainReport {
    train_examples: usize,
    validation_examples: usize,
    epoch_loss: Vec<f64>,
    warnings: Vec<String>,
    validation: Option<SentimentReport>,
}

fn train_sentiment_cmd(c: &EngineConfig, json: bool) -> Result<()> {
    let mut bundle = prepare_bundle(c)?;
    let convs = load_corpus(c, &bundle.db)?;
    let (train_c, val_c) = split(&convs, c.data.validation_fraction, c.seed)?;
    let train = build_examples(&train_c, &bundle.vocab)?.examples;
    let val = build_examples(&val_c, &bundle.vocab)?.examples;
    if train.is_empty() {
        return Err(anyhow!("no complete forms to train on"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let model = bundle.sentiment.clone();
    let saved = bundle.store.freeze_all_except(&[Component::Sentiment.prefix()]);
    let log = train_sentiment(&model, &mut bundle.store, &train, &c.sentiment.train, &mut rng)?;
    bundle.store.set_frozen_flags(&saved);
    let dir = checkpoint_dir(c)?;
    bundle.save_component(dir, Component::Sentiment)?;
    let validation = if val.is_empty() {
        None
    } else {
        Some(evaluate_sentiment(&model, &bundle.store, &val)?)
    };
    let report = SentimentTrainReport {
        train_examples: train.len(),
        validation_examples: val.len(),
        epoch_loss: log.epoch_loss,
        warnings: log.warnings,
        validation,
    };
    emit(json, &report, || {
        let mut s = format!("{} training / {} validation examples\n", report.train_examples, report.validation_examples);
        for (e, l) in report.epoch_loss.iter().enumerate() {
            s += &format!("epoch {e:>3}  loss {l:.4}\n");
        }
        for w in &report.warnings {
            s += &format!("warning: {w}\n");
        }
        match &report.validation {
            Some(v) => s += &v.to_string(),
            None => s += "no validation examples",
        }
        s
    })
}

fn dialogue_examples(bundle: &EngineBundle, convs: &[convrec_core::corpus::Conversation]) -> Result<Vec<DialogueExample>> {
    let rule = bundle.config.dialogue.rating_rule;
    let (examples, skipped) = build_dialogue_examples(convs, &bundle.vocab, &bundle.db, |_, prefix| {
        Ok(predicted_ratings(&bundle.sentiment, &bundle.store, prefix, &bundle.db, rule)?.0)
    })?;
    if skipped > 0 {
        log::info!("{skipped} conversations without recommender turns skipped");
    }
    Ok(examples)
}

#[derive(Debug, Serialize)]
struct DialogueTrainReport {
    train_dialogues: usize,
    validation_dialogues: usize,
    log: convrec_core::dialogue::DialogueTrainLog,
}

fn train_dialogue_cmd(c: &EngineConfig, json: bool) -> Result<()> {
    let mut bundle = prepare_bundle(c)?;
    let dir = checkpoint_dir(c)?;
    if !dir.join(Component::Sentiment.file_name()).exists() {
        log::warn!("no trained sentiment model in {}; ratings come from random parameters", dir.display());
    }
    let convs = load_corpus(c, &bundle.db)?;
    let (train_c, val_c) = split(&convs, c.dialogue.train.validation_fraction, c.seed)?;
    let train = dialogue_examples(&bundle, &train_c)?;
    let val = dialogue_examples(&bundle, &val_c)?;
    if train.is_empty() {
        return Err(anyhow!("no dialogues with recommender turns to train on"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let saved = bundle
        .store
        .freeze_all_except(&[Component::Dialogue.prefix(), Component::Recommender.prefix()]);
    bundle.dialogue.utterance.freeze_first_layer(&mut bundle.store, true);
    let (model, rec) = (bundle.dialogue.clone(), bundle.recommender.clone());
    let log = train_dialogue(&model, &rec, &mut bundle.store, &train, &val, &c.dialogue.train, &mut rng)?;
    bundle.store.set_frozen_flags(&saved);
    bundle.save_component(dir, Component::Dialogue)?;
    bundle.save_component(dir, Component::Recommender)?;
    let report = DialogueTrainReport {
        train_dialogues: train.len(),
        validation_dialogues: val.len(),
        log,
    };
    emit(json, &report, || {
        let l = &report.log;
        let mut s = format!(
            "{} training / {} validation dialogues\ninitial NLL: train {:.4}",
            report.train_dialogues, report.validation_dialogues, l.initial_train_nll
        );
        if let Some(v) = l.initial_validation_nll {
            s += &format!(", validation {v:.4}");
        }
        for (e, t) in l.train_nll.iter().enumerate() {
            s += &format!("\nepoch {e:>3}  train NLL {t:.4}");
            if let Some(v) = l.validation_nll.get(e) {
                s += &format!("  validation NLL {v:.4}");
            }
        }
        if let Some(b) = l.best_epoch {
            s += &format!("\nbest epoch {b}");
        }
        if l.stopped_early {
            s += " (stopped early)";
        }
        s
    })
}

#[derive(Debug, Serialize)]
struct EvaluationReport {
    missing_components: Vec<Component>,
    sentiment: Option<SentimentReport>,
    dialogue_nll: Option<f64>,
}

fn evaluate(c: &EngineConfig, json: bool) -> Result<()> {
    let (bundle, missing) = open_bundle(c, false)?;
    for m in &missing {
        log::warn!("{} not found; using fresh parameters", m.file_name());
    }
    let convs = load_corpus(c, &bundle.db)?;
    let (_, val_s) = split(&convs, c.data.validation_fraction, c.seed)?;
    let examples = build_examples(&val_s, &bundle.vocab)?.examples;
    let sentiment = if examples.is_empty() {
        None
    } else {
        Some(evaluate_sentiment(&bundle.sentiment, &bundle.store, &examples)?)
    };
    let (_, val_d) = split(&convs, c.dialogue.train.validation_fraction, c.seed)?;
    let dialogues = dialogue_examples(&bundle, &val_d)?;
    let dialogue_nll = if dialogues.is_empty() {
        None
    } else {
        Some(mean_nll(&bundle.dialogue, &bundle.recommender, &bundle.store, &dialogues)?)
    };
    let report = EvaluationReport {
        missing_components: missing,
        sentiment,
        dialogue_nll,
    };
    emit(json, &report, || {
        let mut s = String::new();
        match &report.sentiment {
            Some(r) => s += &format!("{r}\n"),
            None => s += "no sentiment validation examples\n",
        }
        match report.dialogue_nll {
            Some(v) => s += &format!("dialogue validation NLL per token: {v:.4}"),
            None => s += "no dialogue validation examples",
        }
        s
    })
}

/// `turn 2 | The red river: liked 0.91 | top: The x 0.62, The y 0.58, The z 0.55`
pub fn diagnostics_line(d: &Diagnostics) -> String {
    let labels = ["disliked", "liked", "unsaid"];
    let movies: Vec<String> = d
        .movies
        .iter()
        .map(|m| {
            let i = convrec_core::sentiment::argmax(&m.liked);
            format!("{}: {} {:.2}", m.title, labels[i], m.liked[i])
        })
        .collect();
    let top: Vec<String> = d.top_k.iter().take(3).map(|m| format!("{} {:.2}", m.title, m.score)).collect();
    let movies = if movies.is_empty() {
        "no movies".to_string()
    } else {
        movies.join(", ")
    };
    format!("turn {} | {} | top: {}", d.turns, movies, top.join(", "))
}

fn chat(c: &EngineConfig, json: bool) -> Result<()> {
    let (bundle, _) = open_bundle(c, true)?;
    let engine = Engine::new(Arc::new(bundle));
    let session = engine.create_session()?;
    let stdin = std::io::stdin();
    let mut out = std::io::stdout().lock();
    for line in stdin.lock().lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let turn: TurnResult = engine.post_utterance(&session, &line)?;
        if json {
            writeln!(out, "{}", serde_json::to_string(&turn)?)?;
        } else {
            for w in &turn.reply.warnings {
                writeln!(out, "warning: {w}")?;
            }
            writeln!(out, "recommender: {}", turn.reply.text)?;
            writeln!(out, "{}", diagnostics_line(&turn.diagnostics))?;
        }
        out.flush()?;
    }
    Ok(())
}

fn serve(c: &EngineConfig, host: &str, port: u16, origins: Vec<String>) -> Result<()> {
    let addr: SocketAddr = format!("{host}:{port}")
        .parse()
        .map_err(|e| UsageError(format!("bad address {host}:{port}: {e}")))?;
    let (bundle, missing) = open_bundle(c, false)?;
    for m in &missing {
        log::warn!("{} not found; serving fresh parameters", m.file_name());
    }
    let state = convrec_server::AppState {
        engine: Arc::new(Engine::new(Arc::new(bundle))),
        model_loaded: missing.is_empty(),
    };
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(convrec_server::serve(state, addr, &origins))?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct SynthReport {
    dir: String,
    dialogues: usize,
    movies: usize,
    users: usize,
    ratings: usize,
}

/// Small model sizes that keep a full pipeline run on the generated data
/// to a few minutes.
pub fn synth_config() -> EngineConfig {
    let mut c = EngineConfig::default();
    c.paths.corpus = Some("dialogues.jsonl".into());
    c.paths.movies = Some("movies.tsv".into());
    c.paths.ratings = Some("ratings.csv".into());
    c.paths.checkpoint_dir = Some("checkpoint".into());
    c.sentiment.model.utterance.embedding_dim = 16;
    c.sentiment.model.utterance.hidden = 16;
    c.sentiment.model.conversation_hidden = 32;
    c.sentiment.train.epochs = 8;
    c.sentiment.train.adam.lr = 0.01;
    c.recommender.model.hidden = 8;
    c.recommender.train.epochs = 100;
    c.recommender.train.adam.lr = 0.005;
    c.recommender.repetitions = 2;
    c.dialogue.model.utterance.embedding_dim = 16;
    c.dialogue.model.utterance.hidden = 16;
    c.dialogue.model.conversation_hidden = 32;
    c.dialogue.model.decoder.embedding_dim = 16;
    c.dialogue.train.epochs = 3;
    c.dialogue.train.adam.lr = 0.005;
    c.generation.beam_width = 4;
    c.generation.max_len = 20;
    c
}

fn synth(out: &Path, dialogues: usize, movies: usize, users: usize, density: f64, seed: u64, json: bool) -> Result<()> {
    if movies < 2 {
        return Err(UsageError("--movies must be at least 2".into()).into());
    }
    if !(0.0..=1.0).contains(&density) {
        return Err(UsageError("--density must be in [0, 1]".into()).into());
    }
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let db = template_movies(movies);
    std::fs::write(out.join("movies.tsv"), db.to_tsv())?;
    std::fs::write(
        out.join("dialogues.jsonl"),
        template_dialogues_jsonl(dialogues, &db, 2.min(movies), &mut rng),
    )?;
    let ratings = synthetic_ratings(users, movies, 5, density, &mut rng);
    let mut csv = String::from("userId,movieId,rating,timestamp\n");
    let mut n = 0;
    for (u, r) in ratings.iter().enumerate() {
        for (i, v) in r.observed_pairs() {
            let stars = if v == 1.0 { 4.0 } else { 1.0 };
            csv += &format!("{},{},{stars},0\n", u + 1, db.by_index(i).id);
            n += 1;
        }
    }
    std::fs::write(out.join("ratings.csv"), csv)?;
    let mut cfg = synth_config();
    cfg.seed = seed;
    cfg.save(&out.join("config.toml"))?;
    let report = SynthReport {
        dir: out.display().to_string(),
        dialogues,
        movies,
        users,
        ratings: n,
    };
    emit(json, &report, || {
        format!(
            "wrote {} dialogues, {} movies and {} ratings to {}",
            report.dialogues, report.movies, report.ratings, report.dir
        )
    })
}
