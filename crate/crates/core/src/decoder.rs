//! Switching decoder: a GRU started from the dialogue context that predicts,
//! at every step, a word distribution and the probability that the next
//! token is a word. Movie tokens come from one movie distribution computed
//! per utterance from the recommender output.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{MovieDb, Token, Vocab, BOS_ID, EOS_ID, PAD_ID, UNK_ID};
use crate::encoder::{GruCell, GruParams};
use crate::error::{Error, Result};
use crate::tensor::{sigmoid_value, softmax_values, Graph, Init, ParamId, ParamStore, Scalar, Var};

/// A decoder token: a word of `V` or a movie of `V'` (both as indices).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MixedToken {
    Word(usize),
    Movie(usize),
}

impl MixedToken {
    pub const BOS: MixedToken = MixedToken::Word(BOS_ID);
    pub const EOS: MixedToken = MixedToken::Word(EOS_ID);

    /// Position in the combined `V ∪ V'` distribution.
    pub fn combined_index(self, words: usize) -> usize {
        match self {
            MixedToken::Word(w) => w,
            MixedToken::Movie(m) => words + m,
        }
    }

    pub fn from_combined_index(i: usize, words: usize) -> Self {
        if i < words {
            MixedToken::Word(i)
        } else {
            MixedToken::Movie(i - words)
        }
    }
}

/// Converts corpus tokens to decoder tokens. Mentions of movies outside
/// `db` fall back to the words of their title (via `title_of`), or to
/// `<unk>` when even the title is unknown.
pub fn to_mixed_tokens<'a, F>(tokens: &[Token], vocab: &Vocab, db: &MovieDb, title_of: F) -> Vec<MixedToken>
where
    F: Fn(u64) -> Option<&'a str>,
{
    let mut out = Vec::with_capacity(tokens.len());
    for t in tokens {
        match t {
            Token::Word(w) => out.push(MixedToken::Word(vocab.index(w))),
            Token::Mention(id) => match (db.index_of(*id), title_of(*id)) {
                (Some(i), _) => out.push(MixedToken::Movie(i)),
                (None, Some(title)) => out.extend(
                    crate::corpus::title_words(title)
                        .iter()
                        .map(|w| MixedToken::Word(vocab.index(w))),
                ),
                (None, None) => out.push(MixedToken::Word(UNK_ID)),
            },
        }
    }
    out
}

/// `softmax(r_hat)`: the movie distribution used for a whole utterance.
pub fn movie_distribution(r_hat: &[f64]) -> Vec<f64> {
    softmax_values(r_hat)
}

/// Movie distribution with the movies in `excluded` removed. Falls back to
/// the unmasked distribution when every movie is excluded.
pub fn masked_movie_distribution(r_hat: &[f64], excluded: &[usize]) -> Vec<f64> {
    let masked: Vec<f64> = r_hat
        .iter()
        .enumerate()
        .map(|(i, &x)| if excluded.contains(&i) { f64::NEG_INFINITY } else { x })
        .collect();
    if masked.iter().all(|x| x.is_infinite()) {
        return movie_distribution(r_hat);
    }
    movie_distribution(&masked)
}

/// `[d * v ; (1 - d) * v']`: words first, then movies.
pub fn combined_distribution(v: &[f64], v_movies: &[f64], d: f64) -> Vec<f64> {
    v.iter()
        .map(|p| d * p)
        .chain(v_movies.iter().map(|p| (1.0 - d) * p))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderConfig {
    /// Size of the word and movie input embeddings.
    pub embedding_dim: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig { embedding_dim: 64 }
    }
}

/// Decoder weights. The hidden size equals the context size, since the
/// decoder state starts at the context.
#[derive(Debug, Clone)]
pub struct DecoderParams {
    pub gru: GruParams,
    pub word_embedding: ParamId,
    pub movie_embedding: ParamId,
    /// `[|V|, hidden]`, no bias.
    pub word_out: ParamId,
    /// `[1, 2 * hidden]` over `[context ; state]`.
    pub switch_w: ParamId,
    pub switch_b: ParamId,
    pub words: usize,
    pub movies: usize,
    pub hidden: usize,
}

impl DecoderParams {
    pub fn register<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        prefix: &str,
        words: usize,
        movies: usize,
        hidden: usize,
        config: DecoderConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if words == 0 || movies == 0 || hidden == 0 {
            return Err(Error::Config("decoder sizes must be positive".into()));
        }
        let e = config.embedding_dim;
        Ok(DecoderParams {
            gru: GruParams::register(store, &format!("{prefix}.gru"), e, hidden, rng)?,
            word_embedding: store.param(&format!("{prefix}.word_embedding"), &[words, e], Init::FanIn, rng)?,
            movie_embedding: store.param(&format!("{prefix}.movie_embedding"), &[movies, e], Init::FanIn, rng)?,
            word_out: store.param(&format!("{prefix}.word_out"), &[words, hidden], Init::FanIn, rng)?,
            switch_w: store.param(&format!("{prefix}.switch.w"), &[1, 2 * hidden], Init::FanIn, rng)?,
            switch_b: store.param(&format!("{prefix}.switch.b"), &[1], Init::Zeros, rng)?,
            words,
            movies,
            hidden,
        })
    }

    /// Sets the word projection and the switch to zero, which makes every
    /// word equally likely and the switch exactly 0.5.
    pub fn zero_heads<S: Scalar>(&self, store: &mut ParamStore<S>) {
        for id in [self.word_out, self.switch_w, self.switch_b] {
            store.value_mut(id).data_mut().fill(S::zero());
        }
    }

    pub fn bind<S: Scalar>(&self, g: &mut Graph<S>, store: &ParamStore<S>) -> BoundDecoder {
        BoundDecoder {
            cell: self.gru.bind(g, store),
            word_embedding: g.param(store, self.word_embedding),
            movie_embedding: g.param(store, self.movie_embedding),
            word_out: g.param(store, self.word_out),
            switch_w: g.param(store, self.switch_w),
            switch_b: g.param(store, self.switch_b),
            words: self.words,
            movies: self.movies,
            hidden: self.hidden,
        }
    }
}

/// Graph nodes of one decoder step.
#[derive(Debug, Clone, Copy)]
pub struct DecodeStep {
    /// Word logits `W h'`.
    pub word_logits: Var,
    /// Switch logit; `sigmoid` of it is `d`.
    pub switch_logit: Var,
    pub state: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundDecoder {
    cell: GruCell,
    word_embedding: Var,
    movie_embedding: Var,
    word_out: Var,
    switch_w: Var,
    switch_b: Var,
    pub words: usize,
    pub movies: usize,
    pub hidden: usize,
}

impl BoundDecoder {
    fn embed<S: Scalar>(&self, g: &mut Graph<S>, token: MixedToken) -> Result<Var> {
        match token {
            MixedToken::Word(w) => g.embedding(self.word_embedding, w),
            MixedToken::Movie(m) => g.embedding(self.movie_embedding, m),
        }
    }

    /// Consumes `prev` and returns the predictions for the next token.
    pub fn step<S: Scalar>(&self, g: &mut Graph<S>, state: Var, prev: MixedToken, context: Var) -> Result<DecodeStep> {
        for (what, v) in [("state", state), ("context", context)] {
            if g.shape(v) != [self.hidden] {
                return Err(Error::invalid(
                    "decode_step",
                    format!("{what} has shape {:?}, expected [{}]", g.shape(v), self.hidden),
                ));
            }
        }
        let x = self.embed(g, prev)?;
        let h = self.cell.step(g, x, state)?;
        let word_logits = g.matmul(self.word_out, h)?;
        let both = g.concat(&[context, h])?;
        let s = g.matmul(self.switch_w, both)?;
        let switch_logit = g.add_bias(s, self.switch_b)?;
        Ok(DecodeStep {
            word_logits,
            switch_logit,
            state: h,
        })
    }

    /// Summed negative log-likelihood of `tokens[1..]` given `tokens[..n-1]`
    /// (teacher forcing), and the number of scored tokens. Words are scored
    /// as `d * v[w]`, movies as `(1 - d) * softmax(r_hat)[m]`.
    pub fn utterance_nll<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        context: Var,
        r_hat: Var,
        tokens: &[MixedToken],
    ) -> Result<(Var, usize)> {
        if tokens.len() < 2 {
            return Err(Error::invalid("teacher_forcing_loss", "utterance needs at least two tokens"));
        }
        if g.shape(r_hat) != [self.movies] {
            return Err(Error::shape("teacher_forcing_loss", g.shape(r_hat), &[self.movies]));
        }
        let mut state = context;
        let mut total: Option<Var> = None;
        for pair in tokens.windows(2) {
            let step = self.step(g, state, pair[0], context)?;
            state = step.state;
            let (branch, switch) = match pair[1] {
                MixedToken::Word(w) => (
                    g.cross_entropy_with_logits(step.word_logits, w, S::one())?,
                    g.bce_with_logits(step.switch_logit, S::one(), S::one())?,
                ),
                MixedToken::Movie(m) => (
                    g.cross_entropy_with_logits(r_hat, m, S::one())?,
                    g.bce_with_logits(step.switch_logit, S::zero(), S::one())?,
                ),
            };
            let term = g.add(branch, switch)?;
            total = Some(match total {
                None => term,
                Some(t) => g.add(t, term)?,
            });
        }
        Ok((total.expect("at least one step"), tokens.len() - 1))
    }
}

/// Value-level outputs of one decoder step.
#[derive(Debug, Clone)]
pub struct StepDistribution {
    /// Word distribution `v`.
    pub words: Vec<f64>,
    /// Probability that the next token is a word.
    pub switch: f64,
    pub state: Var,
}

/// One decoder step evaluated to plain distributions.
pub fn decode_step<S: Scalar>(
    g: &mut Graph<S>,
    decoder: &BoundDecoder,
    state: Var,
    prev: MixedToken,
    context: Var,
) -> Result<StepDistribution> {
    let s = decoder.step(g, state, prev, context)?;
    let logits = g.value(s.word_logits).to_f64_vec();
    Ok(StepDistribution {
        words: softmax_values(&logits),
        switch: sigmoid_value(g.value(s.switch_logit).item().as_f64()),
        state: s.state,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub beam_width: usize,
    pub max_len: usize,
    /// Remove movies already mentioned in the dialogue from `v'`.
    pub mask_mentioned: bool,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            beam_width: 10,
            max_len: 40,
            mask_mentioned: false,
        }
    }
}

/// A beam-search hypothesis. `tokens` excludes the start token and ends
/// with the end token when `finished`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<MixedToken>,
    /// Cumulative log-probability after each token.
    pub prefix_log_probs: Vec<f64>,
    pub finished: bool,
}

impl Hypothesis {
    pub fn log_prob(&self) -> f64 {
        self.prefix_log_probs.last().copied().unwrap_or(0.0)
    }

    /// Log-probability divided by the number of tokens.
    pub fn score(&self) -> f64 {
        if self.tokens.is_empty() {
            0.0
        } else {
            self.log_prob() / self.tokens.len() as f64
        }
    }

    /// Tokens without the trailing end token.
    pub fn content(&self) -> &[MixedToken] {
        match self.tokens.last() {
            Some(&MixedToken::EOS) => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }
}

/// Beam search over the combined word/movie distribution.
///
/// `step(state, prev)` returns the combined distribution of the next token
/// (words first, `words` entries) and the next state. At each length the
/// `beam_width` best extensions by cumulative log-probability are kept;
/// those ending in `</s>` leave the beam. The result is the finished
/// hypothesis with the best length-normalized score, or the best unfinished
/// one if nothing finished within `max_len` tokens.
pub fn beam_search<St, F>(
    initial: St,
    words: usize,
    beam_width: usize,
    max_len: usize,
    mut step: F,
) -> Result<Hypothesis>
where
    St: Clone,
    F: FnMut(&St, MixedToken) -> Result<(Vec<f64>, St)>,
{
    if beam_width == 0 {
        return Err(Error::InvalidArgument("beam width must be at least 1".into()));
    }
    struct Beam<St> {
        hyp: Hypothesis,
        state: St,
    }
    let mut beams = vec![Beam {
        hyp: Hypothesis {
            tokens: Vec::new(),
            prefix_log_probs: Vec::new(),
            finished: false,
        },
        state: initial,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for _ in 0..max_len {
        let mut next_states = Vec::with_capacity(beams.len());
        let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
        for (b, beam) in beams.iter().enumerate() {
            let prev = beam.hyp.tokens.last().copied().unwrap_or(MixedToken::BOS);
            let (probs, next) = step(&beam.state, prev)?;
            for (i, &p) in probs.iter().enumerate() {
                if p > 0.0 {
                    candidates.push((beam.hyp.log_prob() + p.ln(), b, i));
                }
            }
            next_states.push(next);
        }
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0));
        candidates.truncate(beam_width);
        let mut survivors = Vec::new();
        for (lp, b, i) in candidates {
            let token = MixedToken::from_combined_index(i, words);
            let mut hyp = beams[b].hyp.clone();
            hyp.tokens.push(token);
            hyp.prefix_log_probs.push(lp);
            if token == MixedToken::EOS {
                hyp.finished = true;
                finished.push(hyp);
            } else {
                survivors.push(Beam {
                    hyp,
                    state: next_states[b].clone(),
                });
            }
        }
        beams = survivors;
        if beams.is_empty() {
            break;
        }
    }
    let pool = if finished.is_empty() {
        beams.into_iter().map(|b| b.hyp).collect()
    } else {
        finished
    };
    pool.into_iter()
        .reduce(|best, h| if h.score() > best.score() { h } else { best })
        .ok_or_else(|| Error::invalid("beam_search", "no hypothesis was produced"))
}

/// Words joined by spaces with movie tokens shown as their titles. Sentence
/// markers and padding are dropped; unknown movie indices render as
/// `<unknown-movie>`.
pub fn render_tokens(tokens: &[MixedToken], vocab: &Vocab, db: &MovieDb) -> String {
    let mut parts: Vec<String> = Vec::with_capacity(tokens.len());
    for &t in tokens {
        match t {
            MixedToken::Word(w) if [BOS_ID, EOS_ID, PAD_ID].contains(&w) => {}
            MixedToken::Word(w) if w < vocab.len() => parts.push(vocab.word(w).to_string()),
            MixedToken::Word(_) => parts.push(crate::corpus::UNK.to_string()),
            MixedToken::Movie(m) if m < db.len() => parts.push(db.by_index(m).title.to_lowercase()),
            MixedToken::Movie(_) => parts.push("<unknown-movie>".to_string()),
        }
    }
    parts.join(" ")
}

/// Beam search from a context vector with a fixed movie distribution.
pub fn generate<S: Scalar>(
    g: &mut Graph<S>,
    decoder: &BoundDecoder,
    context: Var,
    v_movies: &[f64],
    config: &GenerationConfig,
) -> Result<Hypothesis> {
    generate_traced(g, decoder, context, v_movies, config, |_, _| {})
}

/// [`generate`] that also reports every decoder step together with the
/// movie distribution it was combined with.
pub fn generate_traced<S: Scalar, F>(
    g: &mut Graph<S>,
    decoder: &BoundDecoder,
    context: Var,
    v_movies: &[f64],
    config: &GenerationConfig,
    mut observe: F,
) -> Result<Hypothesis>
where
    F: FnMut(&StepDistribution, &[f64]),
{
    if v_movies.len() != decoder.movies {
        return Err(Error::shape("generate", &[v_movies.len()], &[decoder.movies]));
    }
    beam_search(context, decoder.words, config.beam_width, config.max_len, |&state, prev| {
        let s = decode_step(g, decoder, state, prev, context)?;
        observe(&s, v_movies);
        Ok((combined_distribution(&s.words, v_movies, s.switch), s.state))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn movie_distribution_examples() {
        assert_eq!(movie_distribution(&[0.3; 4]), vec![0.25; 4]);
        let a = movie_distribution(&[0.1, 2.0, -1.0]);
        let b = movie_distribution(&[5.1, 7.0, 4.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        let mut r = vec![0.0; 100];
        r[17] = 10.0;
        assert!(movie_distribution(&r)[17] > 0.99);
    }

    #[test]
    fn masking_removes_movies() {
        let v = masked_movie_distribution(&[1.0, 2.0, 3.0], &[2]);
        assert_eq!(v[2], 0.0);
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(masked_movie_distribution(&[1.0, 1.0], &[0, 1]), vec![0.5, 0.5]);
    }

    #[test]
    fn combined_distribution_extremes() {
        let v = [0.2, 0.8];
        let m = [0.5, 0.25, 0.25];
        assert_eq!(combined_distribution(&v, &m, 1.0), vec![0.2, 0.8, 0.0, 0.0, 0.0]);
        assert_eq!(combined_distribution(&v, &m, 0.0), vec![0.0, 0.0, 0.5, 0.25, 0.25]);
    }

    #[test]
    fn render_examples() {
        let vocab = Vocab::from_words(["hi", "have", "you", "seen", "?"]);
        let db = MovieDb::new(vec![crate::corpus::MovieEntity {
            id: 7,
            title: "Jurassic Park".into(),
            year: Some(1993),
        }])
        .unwrap();
        let w = |s: &str| MixedToken::Word(vocab.index(s));
        assert_eq!(render_tokens(&[w("hi")], &vocab, &db), "hi");
        let seq = [w("have"), w("you"), w("seen"), MixedToken::Movie(0), w("?"), MixedToken::EOS];
        assert_eq!(render_tokens(&seq, &vocab, &db), "have you seen jurassic park ?");
        assert_eq!(render_tokens(&[], &vocab, &db), "");
        assert_eq!(render_tokens(&[MixedToken::Movie(3)], &vocab, &db), "<unknown-movie>");
    }
}
