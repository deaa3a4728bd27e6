//! The dialogue model: a hierarchical encoder supplies the context of each
//! recommender turn, the recommender turns the movies discussed so far into
//! movie scores, and the switching decoder writes the reply.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Conversation, Liked, MovieDb, MovieId, Role, Vocab};
use crate::decoder::{
    generate, masked_movie_distribution, movie_distribution, to_mixed_tokens, DecoderConfig, DecoderParams,
    GenerationConfig, Hypothesis, MixedToken,
};
use crate::encoder::{encode_utterances, ConversationEncoder, EncodedUtterance, UtteranceEncoder, UtteranceEncoderConfig};
use crate::error::{Error, Result};
use crate::recommender::{Autorec, RatingVector};
use crate::sentiment::{FormPrediction, ParticipantPrediction, SentimentModel};
use crate::tensor::{Adam, AdamConfig, Graph, ParamStore, Scalar, Tensor, Var};
use crate::train::{self, EarlyStopping, ExampleLoss, LossTally};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DialogueConfig {
    pub utterance: UtteranceEncoderConfig,
    pub conversation_hidden: usize,
    pub decoder: DecoderConfig,
}

impl Default for DialogueConfig {
    fn default() -> Self {
        DialogueConfig {
            utterance: UtteranceEncoderConfig::default(),
            conversation_hidden: 256,
            decoder: DecoderConfig::default(),
        }
    }
}

/// Encoder and decoder of the reply generator. The recommender is kept
/// separately (it is pre-trained on its own) and passed in where needed.
#[derive(Debug, Clone)]
pub struct DialogueModel {
    pub utterance: UtteranceEncoder,
    pub conversation: ConversationEncoder,
    pub decoder: DecoderParams,
    pub config: DialogueConfig,
}

impl DialogueModel {
    pub const PREFIX: &'static str = "dialogue";

    pub fn register<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        words: usize,
        movies: usize,
        config: DialogueConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let p = Self::PREFIX;
        let utterance = UtteranceEncoder::register(store, &format!("{p}.utterance"), words, config.utterance, false, rng)?;
        let conversation = ConversationEncoder::register(
            store,
            &format!("{p}.conversation"),
            utterance.output_dim(),
            config.conversation_hidden,
            rng,
        )?;
        let decoder = DecoderParams::register(
            store,
            &format!("{p}.decoder"),
            words,
            movies,
            config.conversation_hidden,
            config.decoder,
            rng,
        )?;
        Ok(DialogueModel {
            utterance,
            conversation,
            decoder,
            config,
        })
    }

    /// Conversation state after one more utterance, from a plain state.
    pub fn advance<S: Scalar>(&self, store: &ParamStore<S>, state: &[f64], utterance: &EncodedUtterance) -> Result<Vec<f64>> {
        let mut g = Graph::inference();
        let h = g.constant(Tensor::from_f64(&[state.len()], state)?);
        let ub = self.utterance.bind(&mut g, store);
        let cb = self.conversation.bind(&mut g, store);
        let u = ub.encode(&mut g, &utterance.ids, None)?;
        let h = cb.step(&mut g, u, utterance.sender(), h)?;
        Ok(g.value(h).to_f64_vec())
    }

    pub fn initial_state(&self) -> Vec<f64> {
        vec![0.0; self.config.conversation_hidden]
    }

    /// Summed teacher-forcing NLL over the recommender turns of `example`
    /// and the number of scored tokens.
    pub fn nll<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        recommender: &Autorec,
        example: &DialogueExample,
    ) -> Result<(Var, usize)> {
        if example.turns.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "dialogue {} has no recommender utterance",
                example.conversation
            )));
        }
        let ub = self.utterance.bind(g, store);
        let cb = self.conversation.bind(g, store);
        let dec = self.decoder.bind(g, store);
        let mut h = cb.initial(g);
        let mut turns = example.turns.iter().peekable();
        let mut total: Option<Var> = None;
        let mut tokens = 0;
        for (i, u) in example.utterances.iter().enumerate() {
            if let Some(turn) = turns.next_if(|t| t.index == i) {
                let r = g.constant(Tensor::from_f64(&[turn.ratings.len()], turn.ratings.values())?);
                let r_hat = recommender.forward_graph(g, store, r)?;
                let (nll, n) = dec.utterance_nll(g, h, r_hat, &turn.tokens)?;
                tokens += n;
                total = Some(match total {
                    None => nll,
                    Some(t) => g.add(t, nll)?,
                });
            }
            if turns.peek().is_none() {
                break;
            }
            let uv = ub.encode(g, &u.ids, None)?;
            h = cb.step(g, uv, u.sender(), h)?;
        }
        Ok((total.expect("at least one turn"), tokens))
    }

    /// Beam-searches a recommender reply from a conversation state.
    /// `mentioned` lists movie indices to drop from `v'` when masking is on.
    pub fn reply<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        state: &[f64],
        r_hat: &[f64],
        mentioned: &[usize],
        config: &GenerationConfig,
    ) -> Result<Hypothesis> {
        let v_movies = if config.mask_mentioned {
            masked_movie_distribution(r_hat, mentioned)
        } else {
            movie_distribution(r_hat)
        };
        let mut g = Graph::inference();
        let context = g.constant(Tensor::from_f64(&[state.len()], state)?);
        let dec = self.decoder.bind(&mut g, store);
        generate(&mut g, &dec, context, &v_movies, config)
    }
}

/// How a sentiment prediction becomes a rating-vector entry.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RatingRule {
    /// Liked-argmax: liked gives 1, disliked 0, did-not-say leaves it unobserved.
    #[default]
    Argmax,
    /// As `Argmax`, but only when the winning probability reaches `threshold`.
    Confident { threshold: f64 },
}

pub fn rating_from_prediction(p: &ParticipantPrediction, rule: RatingRule) -> Option<f64> {
    if let RatingRule::Confident { threshold } = rule {
        if p.liked.iter().copied().fold(0.0, f64::max) < threshold {
            return None;
        }
    }
    match p.liked_argmax() {
        Liked::Liked => Some(1.0),
        Liked::Disliked => Some(0.0),
        Liked::DidNotSay => None,
    }
}

/// Movies mentioned in `utterances`, in order of first appearance.
pub fn mentioned_in(utterances: &[EncodedUtterance]) -> Vec<MovieId> {
    let mut out = Vec::new();
    for s in utterances.iter().flat_map(|u| &u.spans) {
        if !out.contains(&s.movie) {
            out.push(s.movie);
        }
    }
    out
}

/// Seeker-side predictions for every movie mentioned in `prefix` and the
/// rating vector built from them. Movies outside `db` get a prediction but
/// no rating slot.
pub fn predicted_ratings<S: Scalar>(
    sentiment: &SentimentModel,
    store: &ParamStore<S>,
    prefix: &[EncodedUtterance],
    db: &MovieDb,
    rule: RatingRule,
) -> Result<(RatingVector, Vec<(MovieId, FormPrediction)>)> {
    let mut r = RatingVector::empty(db.len());
    let mut predictions = Vec::new();
    for movie in mentioned_in(prefix) {
        let p = sentiment.predict(store, prefix, movie)?;
        if let (Some(i), Some(v)) = (db.index_of(movie), rating_from_prediction(&p.seeker, rule)) {
            r.set(i, v)?;
        }
        predictions.push((movie, p));
    }
    Ok((r, predictions))
}

/// Rating vector from the annotated seeker answers of the movies mentioned
/// in `prefix` (liked 1, disliked 0, otherwise unobserved).
pub fn annotated_ratings(conversation: &Conversation, prefix: &[EncodedUtterance], db: &MovieDb) -> Result<RatingVector> {
    let mut r = RatingVector::empty(db.len());
    for movie in mentioned_in(prefix) {
        let liked = conversation.form(movie).and_then(|f| f.seeker.liked);
        if let (Some(i), Some(l)) = (db.index_of(movie), liked) {
            match l {
                Liked::Liked => r.set(i, 1.0)?,
                Liked::Disliked => r.set(i, 0.0)?,
                Liked::DidNotSay => {}
            }
        }
    }
    Ok(r)
}

/// One recommender utterance to predict: its position, its decoder tokens
/// (starting with `<s>`, ending with `</s>`) and the rating input built
/// from the utterances before it.
#[derive(Debug, Clone, PartialEq)]
pub struct DialogueTurn {
    pub index: usize,
    pub tokens: Vec<MixedToken>,
    pub ratings: RatingVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DialogueExample {
    pub conversation: u64,
    pub utterances: Vec<EncodedUtterance>,
    pub turns: Vec<DialogueTurn>,
}

impl DialogueExample {
    pub fn tokens(&self) -> usize {
        self.turns.iter().map(|t| t.tokens.len() - 1).sum()
    }
}

/// Builds one example per conversation with at least one recommender
/// utterance; `ratings(conversation, prefix)` provides the recommender
/// input for each turn. Returns the examples and the number skipped.
pub fn build_dialogue_examples<F>(
    conversations: &[Conversation],
    vocab: &Vocab,
    db: &MovieDb,
    mut ratings: F,
) -> Result<(Vec<DialogueExample>, usize)>
where
    F: FnMut(&Conversation, &[EncodedUtterance]) -> Result<RatingVector>,
{
    let mut out = Vec::new();
    let mut skipped = 0;
    for c in conversations {
        let utterances = encode_utterances(c, vocab)?;
        let mut turns = Vec::new();
        for (i, u) in c.utterances.iter().enumerate() {
            if u.role == Role::Recommender {
                turns.push(DialogueTurn {
                    index: i,
                    tokens: to_mixed_tokens(&u.tokens, vocab, db, |id| c.title_of(id)),
                    ratings: ratings(c, &utterances[..i])?,
                });
            }
        }
        if turns.is_empty() {
            skipped += 1;
        } else {
            out.push(DialogueExample {
                conversation: c.id,
                utterances,
                turns,
            });
        }
    }
    Ok((out, skipped))
}

/// Teacher-forcing objective of one dialogue: NLL per token, so that every
/// dialogue weighs the same in a batch.
pub fn teacher_forcing_loss<S: Scalar>(
    model: &DialogueModel,
    recommender: &Autorec,
    g: &mut Graph<S>,
    store: &ParamStore<S>,
    example: &DialogueExample,
) -> Result<ExampleLoss> {
    let (nll, n) = model.nll(g, store, recommender, example)?;
    Ok(ExampleLoss {
        loss: g.scale(nll, S::lit(1.0 / n as f64)),
        units: 1.0,
    })
}

/// Token-weighted mean NLL over `examples`.
pub fn mean_nll<S: Scalar>(
    model: &DialogueModel,
    recommender: &Autorec,
    store: &ParamStore<S>,
    examples: &[DialogueExample],
) -> Result<f64> {
    let t = train::evaluate(store, examples, |g, s, e| {
        let (nll, n) = model.nll(g, s, recommender, e)?;
        Ok(ExampleLoss {
            loss: nll,
            units: n as f64,
        })
    })?;
    if t.units == 0.0 {
        return Err(Error::InvalidArgument("no tokens to score".into()));
    }
    Ok(t.mean())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DialogueTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub validation_fraction: f64,
}

impl Default for DialogueTrainConfig {
    fn default() -> Self {
        DialogueTrainConfig {
            epochs: 20,
            batch_size: 8,
            adam: AdamConfig::default(),
            patience: 3,
            validation_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DialogueTrainLog {
    /// Per-token training NLL before any update.
    pub initial_train_nll: f64,
    pub initial_validation_nll: Option<f64>,
    /// Mean per-dialogue, per-token NLL of each epoch's updates.
    pub train_nll: Vec<f64>,
    pub validation_nll: Vec<f64>,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

/// Teacher-forcing training of the dialogue model and fine-tuning of the
/// recommender (frozen parameters, such as the sentiment model's, are left
/// alone). With validation examples, training stops after `patience`
/// epochs without improvement and the best epoch's parameters are restored.
pub fn train_dialogue<S: Scalar, R: Rng + ?Sized>(
    model: &DialogueModel,
    recommender: &Autorec,
    store: &mut ParamStore<S>,
    train_set: &[DialogueExample],
    validation: &[DialogueExample],
    config: &DialogueTrainConfig,
    rng: &mut R,
) -> Result<DialogueTrainLog> {
    let mut log = DialogueTrainLog {
        initial_train_nll: mean_nll(model, recommender, store, train_set)?,
        ..Default::default()
    };
    if !validation.is_empty() {
        log.initial_validation_nll = Some(mean_nll(model, recommender, store, validation)?);
    }
    let mut adam = Adam::new(config.adam);
    let mut stopping = EarlyStopping::new(config.patience);
    let mut best: Option<ParamStore<S>> = None;
    for epoch in 0..config.epochs {
        let t: LossTally = train::epoch(store, &mut adam, train_set, config.batch_size, rng, |g, s, e| {
            teacher_forcing_loss(model, recommender, g, s, e)
        })?;
        log.train_nll.push(t.mean());
        if validation.is_empty() {
            continue;
        }
        let v = mean_nll(model, recommender, store, validation)?;
        log.validation_nll.push(v);
        if stopping.observe(epoch, v) {
            best = Some(store.clone());
            log.best_epoch = Some(epoch);
        } else if stopping.should_stop() {
            log.stopped_early = true;
            break;
        }
    }
    if let Some(snapshot) = best {
        store.load_from(&snapshot)?;
    }
    Ok(log)
}
