//! Config loading and checkpoint-directory plumbing shared by the commands.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use convrec_core::config::{EngineConfig, PathKind};
use convrec_core::corpus::{parse_corpus, Conversation, MovieDb, Vocab};
use convrec_core::encoder::load_pretrained_embeddings;
use convrec_core::engine::{Component, EngineBundle, CONFIG_FILE, MOVIES_FILE};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Cli, DataArgs};

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

/// Reads `--config` (or defaults) and applies the global flag overrides.
pub fn load_config(cli: &Cli) -> Result<EngineConfig> {
    let mut c = match &cli.config {
        Some(path) => {
            let mut c = EngineConfig::load(path)?;
            let base = path.parent().unwrap_or(Path::new("."));
            let p = &mut c.paths;
            for slot in [
                &mut p.corpus,
                &mut p.movies,
                &mut p.ratings,
                &mut p.ratings_id_map,
                &mut p.embeddings,
                &mut p.checkpoint_dir,
            ] {
                resolve(base, slot);
            }
            c
        }
        None => EngineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        c.seed = seed;
    }
    if let Some(dir) = &cli.checkpoint_dir {
        c.paths.checkpoint_dir = Some(dir.clone());
    }
    Ok(c)
}

pub fn apply_data_args(c: &mut EngineConfig, data: &DataArgs) {
    if let Some(p) = &data.corpus {
        c.paths.corpus = Some(p.clone());
    }
    if let Some(p) = &data.movies {
        c.paths.movies = Some(p.clone());
    }
}

pub fn checkpoint_dir(c: &EngineConfig) -> Result<&Path> {
    c.validate_paths(&[PathKind::CheckpointDir])?;
    Ok(c.paths.checkpoint_dir.as_deref().expect("validated"))
}

pub fn load_movies(c: &EngineConfig) -> Result<MovieDb> {
    Ok(MovieDb::load_tsv(c.paths.movies.as_deref().context("paths.movies is not set")?)?)
}

pub fn load_corpus(c: &EngineConfig, db: &MovieDb) -> Result<Vec<Conversation>> {
    let path = c.paths.corpus.as_deref().context("paths.corpus is not set")?;
    let parsed = parse_corpus(path, db)?;
    for w in &parsed.warnings {
        log::warn!("{w}");
    }
    if !parsed.malformed_lines.is_empty() {
        log::warn!("{} malformed records skipped", parsed.malformed_lines.len());
    }
    Ok(parsed.conversations)
}

/// Opens the bundle in the checkpoint directory, or creates one from the
/// configured corpus and movies. Component files already present (such as
/// a pre-trained recommender) are loaded either way, and the metadata is
/// rewritten with the current config.
pub fn prepare_bundle(c: &EngineConfig) -> Result<EngineBundle> {
    let dir = checkpoint_dir(c)?;
    let bundle = if dir.join(CONFIG_FILE).exists() {
        let (mut b, missing) = EngineBundle::open(dir, false)?;
        let (old, new) = (&b.config, c);
        if old.sentiment.model != new.sentiment.model
            || old.recommender.model.hidden != new.recommender.model.hidden
            || old.dialogue.model != new.dialogue.model
        {
            return Err(anyhow!(
                "model sizes in the config differ from the checkpoint in {}",
                dir.display()
            ));
        }
        b.config = c.clone();
        load_embeddings(c, &mut b, &missing)?;
        b
    } else {
        c.validate_paths(&[PathKind::Corpus, PathKind::Movies])?;
        let db = load_movies(c)?;
        let convs = load_corpus(c, &db)?;
        let vocab = Vocab::build(&convs, c.data.min_count)?;
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        let mut b = EngineBundle::new(c.clone(), vocab, db, &mut rng)?;
        let mut missing = Vec::new();
        for comp in Component::ALL {
            if dir.join(comp.file_name()).exists() {
                log::info!("loading existing {}", comp.file_name());
                b.load_component(dir, comp)?;
            } else {
                missing.push(comp);
            }
        }
        load_embeddings(c, &mut b, &missing)?;
        b
    };
    bundle.save_metadata(dir)?;
    Ok(bundle)
}

/// Word vectors for the encoders of components without a checkpoint.
fn load_embeddings(c: &EngineConfig, b: &mut EngineBundle, missing: &[Component]) -> Result<()> {
    let Some(path) = &c.paths.embeddings else {
        return Ok(());
    };
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed.wrapping_add(1));
    let mut encoders = Vec::new();
    if missing.contains(&Component::Sentiment) {
        encoders.push(b.sentiment.utterance.clone());
    }
    if missing.contains(&Component::Dialogue) {
        encoders.push(b.dialogue.utterance.clone());
    }
    for enc in encoders {
        let r = load_pretrained_embeddings(path, &b.vocab, &mut b.store, &enc, &mut rng)?;
        for w in &r.warnings {
            log::warn!("{w}");
        }
    }
    Ok(())
}

/// Loads a trained bundle for chat and serving. Returns the components
/// that fell back to fresh parameters.
pub fn open_bundle(c: &EngineConfig, require_all: bool) -> Result<(EngineBundle, Vec<Component>)> {
    let dir = checkpoint_dir(c)?;
    if !dir.join(CONFIG_FILE).exists() || !dir.join(MOVIES_FILE).exists() {
        return Err(anyhow!("no checkpoint in {}", dir.display()));
    }
    Ok(EngineBundle::open(dir, require_all)?)
}
