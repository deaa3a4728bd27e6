//! Live dialogue sessions: every seeker utterance advances the dialogue
//! state, refreshes the sentiment estimates of all movies mentioned so far,
//! turns them into a rating vector for the recommender and decodes a reply.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use serde::Serialize;

use crate::config::EngineConfig;
use crate::corpus::{expand_mentions, MovieDb, MovieEntity, MovieId, Role, Token, Utterance, Vocab, BOS, EOS, UNK};
use crate::decoder::{render_tokens, MixedToken};
use crate::dialogue::{predicted_ratings, DialogueModel};
use crate::encoder::EncodedUtterance;
use crate::error::{Error, Result};
use crate::recommender::{Autorec, RatingVector};
use crate::sentiment::{FormPrediction, SentimentModel};
use crate::tensor::{checkpoint, ParamStore};

pub const CONFIG_FILE: &str = "config.toml";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const MOVIES_FILE: &str = "movies.tsv";

/// The three parameter groups, each saved to its own checkpoint file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Sentiment,
    Recommender,
    Dialogue,
}

impl Component {
    pub const ALL: [Component; 3] = [Component::Sentiment, Component::Recommender, Component::Dialogue];

    pub fn prefix(self) -> &'static str {
        match self {
            Component::Sentiment => "sentiment.",
            Component::Recommender => "recommender.",
            Component::Dialogue => "dialogue.",
        }
    }

    pub fn file_name(self) -> &'static str {
        match self {
            Component::Sentiment => "sentiment.cvrc",
            Component::Recommender => "recommender.cvrc",
            Component::Dialogue => "dialogue.cvrc",
        }
    }
}

/// Everything needed to run sessions: models, vocabulary, movies and config.
#[derive(Debug, Clone)]
pub struct EngineBundle {
    pub config: EngineConfig,
    pub vocab: Vocab,
    pub db: MovieDb,
    pub store: ParamStore<f32>,
    pub sentiment: SentimentModel,
    pub recommender: Autorec,
    pub dialogue: DialogueModel,
}

impl EngineBundle {
    /// Registers all models with freshly initialized parameters.
    pub fn new<R: Rng + ?Sized>(config: EngineConfig, vocab: Vocab, db: MovieDb, rng: &mut R) -> Result<Self> {
        if db.is_empty() {
            return Err(Error::Config("the movie database is empty".into()));
        }
        let mut store = ParamStore::new();
        let sentiment = SentimentModel::register(&mut store, vocab.len(), config.sentiment.model, rng)?;
        let recommender = Autorec::register(&mut store, db.len(), config.recommender.model, rng)?;
        let dialogue = DialogueModel::register(&mut store, vocab.len(), db.len(), config.dialogue.model, rng)?;
        Ok(EngineBundle {
            config,
            vocab,
            db,
            store,
            sentiment,
            recommender,
            dialogue,
        })
    }

    /// Writes config, vocabulary, movies and all three checkpoints.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.save_metadata(dir)?;
        for c in Component::ALL {
            self.save_component(dir, c)?;
        }
        Ok(())
    }

    pub fn save_metadata(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.config.save(&dir.join(CONFIG_FILE))?;
        self.vocab.save(&dir.join(VOCAB_FILE))?;
        let movies = dir.join(MOVIES_FILE);
        std::fs::write(&movies, self.db.to_tsv()).map_err(|e| Error::io(movies, e))
    }

    pub fn save_component(&self, dir: &Path, component: Component) -> Result<()> {
        let prefix = component.prefix();
        let mut part = ParamStore::new();
        part.import(&self.store.extract(prefix), prefix);
        checkpoint::save(&dir.join(component.file_name()), &part)
    }

    /// Loads parameters of `component` from its file in `dir`.
    pub fn load_component(&mut self, dir: &Path, component: Component) -> Result<()> {
        let loaded = checkpoint::load::<f32>(&dir.join(component.file_name()))?;
        self.store.load_prefix(&loaded, component.prefix())
    }

    /// Opens a checkpoint directory. Components whose file is absent keep
    /// their fresh initialization unless `require_all` is set.
    pub fn open(dir: &Path, require_all: bool) -> Result<(Self, Vec<Component>)> {
        if !dir.is_dir() {
            return Err(Error::Config(format!("checkpoint directory {} does not exist", dir.display())));
        }
        let config = EngineConfig::load(&dir.join(CONFIG_FILE))?;
        let vocab = Vocab::load(&dir.join(VOCAB_FILE))?;
        let db = MovieDb::load_tsv(&dir.join(MOVIES_FILE))?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.seed);
        let mut bundle = Self::new(config, vocab, db, &mut rng)?;
        let mut missing = Vec::new();
        for c in Component::ALL {
            if dir.join(c.file_name()).exists() {
                bundle.load_component(dir, c)?;
            } else if require_all {
                return Err(Error::Checkpoint(format!(
                    "{} is missing from {}",
                    c.file_name(),
                    dir.display()
                )));
            } else {
                missing.push(c);
            }
        }
        Ok((bundle, missing))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(Self::open(dir, true)?.0)
    }

    /// Encodes corpus tokens for the encoders. Mentions must be in the db.
    fn encode(&self, role: Role, tokens: &[Token]) -> Result<EncodedUtterance> {
        let e = expand_mentions(tokens, |id| self.db.get(id).map(|m| m.title.as_str()))?;
        Ok(EncodedUtterance {
            ids: self.vocab.encode(&e.words),
            spans: e.spans,
            role,
        })
    }
}

/// Per-movie sentiment estimates shown to clients.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MovieDiagnostics {
    pub id: MovieId,
    pub title: String,
    pub suggested: f64,
    pub seen: [f64; 3],
    pub liked: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredMovie {
    pub id: MovieId,
    pub title: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Diagnostics {
    /// Seeker-side estimates, in order of first mention.
    pub movies: Vec<MovieDiagnostics>,
    /// Highest recommender scores, best first.
    pub top_k: Vec<ScoredMovie>,
    /// Number of seeker utterances so far.
    pub turns: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reply {
    /// Reply with movie titles spelled out.
    pub text: String,
    /// Reply tokens, movies as `@id`.
    pub tokens: Vec<String>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TurnResult {
    pub reply: Reply,
    pub diagnostics: Diagnostics,
}

pub const TOP_K: usize = 10;

/// State of one conversation.
#[derive(Debug, Clone)]
pub struct SessionState {
    pub id: String,
    pub utterances: Vec<Utterance>,
    pub encoded: Vec<EncodedUtterance>,
    /// Conversation-encoder state of the dialogue model.
    pub state: Vec<f64>,
    pub predictions: Vec<(MovieId, FormPrediction)>,
    pub ratings: RatingVector,
    pub r_hat: Vec<f64>,
    pub turns: usize,
    pub created: Instant,
    pub last_active: Instant,
}

impl SessionState {
    fn new(id: String, bundle: &EngineBundle) -> Result<Self> {
        let ratings = RatingVector::empty(bundle.db.len());
        let r_hat = bundle.recommender.forward(&bundle.store, &ratings)?;
        let now = Instant::now();
        Ok(SessionState {
            id,
            utterances: Vec::new(),
            encoded: Vec::new(),
            state: bundle.dialogue.initial_state(),
            predictions: Vec::new(),
            ratings,
            r_hat,
            turns: 0,
            created: now,
            last_active: now,
        })
    }

    fn push(&mut self, bundle: &EngineBundle, utterance: Utterance, encoded: EncodedUtterance) -> Result<()> {
        self.state = bundle.dialogue.advance(&bundle.store, &self.state, &encoded)?;
        self.utterances.push(utterance);
        self.encoded.push(encoded);
        Ok(())
    }

    pub fn diagnostics(&self, bundle: &EngineBundle) -> Diagnostics {
        let movies = self
            .predictions
            .iter()
            .map(|(id, p)| MovieDiagnostics {
                id: *id,
                title: bundle.db.get(*id).map(|m| m.title.clone()).unwrap_or_default(),
                suggested: p.seeker.suggested,
                seen: p.seeker.seen,
                liked: p.seeker.liked,
            })
            .collect();
        Diagnostics {
            movies,
            top_k: top_k(&self.r_hat, &bundle.db, TOP_K),
            turns: self.turns,
        }
    }
}

/// The `k` highest scores, ties broken by ascending movie id.
pub fn top_k(scores: &[f64], db: &MovieDb, k: usize) -> Vec<ScoredMovie> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then(db.by_index(a).id.cmp(&db.by_index(b).id))
    });
    order
        .into_iter()
        .take(k)
        .map(|i| {
            let m = db.by_index(i);
            ScoredMovie {
                id: m.id,
                title: m.title.clone(),
                score: scores[i],
            }
        })
        .collect()
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

/// Session registry over a shared, read-only bundle. Operations on one
/// session are serialized; different sessions run independently.
pub struct Engine {
    bundle: Arc<EngineBundle>,
    sessions: Mutex<HashMap<String, Arc<Mutex<SessionState>>>>,
    idle_timeout: Duration,
    counter: AtomicU64,
}

pub const DEFAULT_IDLE_TIMEOUT: Duration = Duration::from_secs(30 * 60);

impl Engine {
    pub fn new(bundle: Arc<EngineBundle>) -> Self {
        Self::with_idle_timeout(bundle, DEFAULT_IDLE_TIMEOUT)
    }

    pub fn with_idle_timeout(bundle: Arc<EngineBundle>, idle_timeout: Duration) -> Self {
        Engine {
            bundle,
            sessions: Mutex::new(HashMap::new()),
            idle_timeout,
            counter: AtomicU64::new(0),
        }
    }

    pub fn bundle(&self) -> &EngineBundle {
        &self.bundle
    }

    /// Drops sessions idle for longer than the timeout; returns how many.
    pub fn evict_idle(&self) -> usize {
        let now = Instant::now();
        let mut sessions = lock(&self.sessions);
        let before = sessions.len();
        sessions.retain(|_, s| match s.try_lock() {
            Ok(s) => now.duration_since(s.last_active) <= self.idle_timeout,
            // Busy sessions are in use, hence not idle.
            Err(_) => true,
        });
        before - sessions.len()
    }

    pub fn session_count(&self) -> usize {
        lock(&self.sessions).len()
    }

    pub fn create_session(&self) -> Result<String> {
        self.evict_idle();
        let n = self.counter.fetch_add(1, Ordering::Relaxed);
        let id = format!("{n:06}-{:08x}", rand::rng().random::<u32>());
        let state = SessionState::new(id.clone(), &self.bundle)?;
        lock(&self.sessions).insert(id.clone(), Arc::new(Mutex::new(state)));
        Ok(id)
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<SessionState>>> {
        self.evict_idle();
        lock(&self.sessions)
            .get(id)
            .cloned()
            .ok_or_else(|| Error::UnknownSession(id.to_string()))
    }

    /// Runs one seeker turn and returns the recommender's reply.
    pub fn post_utterance(&self, id: &str, text: &str) -> Result<TurnResult> {
        let session = self.session(id)?;
        let mut s = lock(&session);
        s.last_active = Instant::now();
        let result = run_turn(&self.bundle, &mut s, text);
        s.last_active = Instant::now();
        result
    }

    pub fn diagnostics(&self, id: &str) -> Result<Diagnostics> {
        let session = self.session(id)?;
        let s = lock(&session);
        Ok(s.diagnostics(&self.bundle))
    }

    /// Copy of a session's state.
    pub fn snapshot(&self, id: &str) -> Result<SessionState> {
        let session = self.session(id)?;
        let s = lock(&session);
        Ok(s.clone())
    }

    pub fn autocomplete(&self, query: &str, limit: usize) -> Vec<MovieEntity> {
        autocomplete_movies(&self.bundle.db, query, limit)
    }
}

/// Case-insensitive prefix matches, then substring matches, each by id.
pub fn autocomplete_movies(db: &MovieDb, query: &str, limit: usize) -> Vec<MovieEntity> {
    db.search(query, limit).into_iter().cloned().collect()
}

/// The seeker pipeline on a session: encoder update, sentiment update,
/// rating vector, recommender, decoder, and the reply appended as a
/// recommender utterance.
pub fn run_turn(bundle: &EngineBundle, session: &mut SessionState, text: &str) -> Result<TurnResult> {
    let mut warnings = Vec::new();
    let mut utterance = Utterance::new(Role::Seeker, text);
    for t in &mut utterance.tokens {
        if let Token::Mention(id) = *t {
            if bundle.db.get(id).is_none() {
                warnings.push(format!("movie @{id} is not in the movie database and was ignored"));
                *t = Token::Word(UNK.to_string());
            }
        }
    }
    let encoded = bundle.encode(Role::Seeker, &utterance.tokens)?;
    session.push(bundle, utterance, encoded)?;
    session.turns += 1;

    let (ratings, predictions) = predicted_ratings(
        &bundle.sentiment,
        &bundle.store,
        &session.encoded,
        &bundle.db,
        bundle.config.dialogue.rating_rule,
    )?;
    session.r_hat = bundle.recommender.forward(&bundle.store, &ratings)?;
    session.ratings = ratings;
    session.predictions = predictions;

    let mentioned: Vec<usize> = session
        .predictions
        .iter()
        .filter_map(|(id, _)| bundle.db.index_of(*id))
        .collect();
    let hyp = bundle.dialogue.reply(
        &bundle.store,
        &session.state,
        &session.r_hat,
        &mentioned,
        &bundle.config.generation,
    )?;
    let content = hyp.content();
    let text = render_tokens(content, &bundle.vocab, &bundle.db);

    let mut tokens = vec![Token::word(BOS)];
    let mut shown = Vec::with_capacity(content.len());
    for &t in content {
        let token = match t {
            MixedToken::Word(w) => Token::Word(bundle.vocab.word(w).to_string()),
            MixedToken::Movie(m) => Token::Mention(bundle.db.by_index(m).id),
        };
        shown.push(match &token {
            Token::Word(w) => w.clone(),
            Token::Mention(id) => format!("@{id}"),
        });
        tokens.push(token);
    }
    tokens.push(Token::word(EOS));
    let reply_utterance = Utterance {
        role: Role::Recommender,
        raw_text: shown.join(" "),
        tokens,
    };
    let encoded = bundle.encode(Role::Recommender, &reply_utterance.tokens)?;
    session.push(bundle, reply_utterance, encoded)?;

    Ok(TurnResult {
        reply: Reply {
            text,
            tokens: shown,
            warnings,
        },
        diagnostics: session.diagnostics(bundle),
    })
}
