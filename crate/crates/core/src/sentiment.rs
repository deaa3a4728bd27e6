//! Per-movie sentiment model: given a dialogue and one of its movies,
//! predict both participants' answers to the movie form (suggested, seen,
//! liked). Also confusion matrices and Cohen's kappa for evaluation.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Conversation, FormAnswers, FormLabels, Liked, MentionSpan, MovieId, Seen, Vocab};
use crate::encoder::{
    encode_utterances, ConversationEncoder, EncodedUtterance, UtteranceEncoder, UtteranceEncoderConfig,
};
use crate::error::{Error, Result};
use crate::tensor::{
    sigmoid_value, softmax_values, Adam, AdamConfig, Graph, Init, ParamId, ParamStore, Scalar, Var,
};
use crate::train::{self, ExampleLoss, LossTally};

/// Output width of the form head: 1 + 3 + 3 per participant.
pub const OUTPUTS: usize = 14;
pub const DEFAULT_WEIGHT_CAP: f64 = 100.0;

/// 0/1 per token: 1 inside the title spans of `movie`.
pub fn mention_feature(len: usize, spans: &[MentionSpan], movie: MovieId) -> Result<Vec<f64>> {
    let mut f = vec![0.0; len];
    for s in spans {
        if s.start > s.end || s.end >= len {
            return Err(Error::invalid(
                "mention_feature",
                format!("span {}..={} out of bounds for {len} tokens", s.start, s.end),
            ));
        }
        if s.movie == movie {
            f[s.start..=s.end].iter_mut().for_each(|v| *v = 1.0);
        }
    }
    Ok(f)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParticipantPrediction {
    pub suggested: f64,
    /// Not seen, seen, did not say.
    pub seen: [f64; 3],
    /// Disliked, liked, did not say.
    pub liked: [f64; 3],
}

impl ParticipantPrediction {
    fn from_logits(z: &[f64]) -> Self {
        let s = softmax_values(&z[1..4]);
        let l = softmax_values(&z[4..7]);
        ParticipantPrediction {
            suggested: sigmoid_value(z[0]),
            seen: [s[0], s[1], s[2]],
            liked: [l[0], l[1], l[2]],
        }
    }

    pub fn seen_argmax(&self) -> Seen {
        [Seen::NotSeen, Seen::Seen, Seen::DidNotSay][argmax(&self.seen)]
    }

    pub fn liked_argmax(&self) -> Liked {
        [Liked::Disliked, Liked::Liked, Liked::DidNotSay][argmax(&self.liked)]
    }
}

/// First index of the maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FormPrediction {
    pub seeker: ParticipantPrediction,
    pub recommender: ParticipantPrediction,
}

impl FormPrediction {
    pub fn from_logits(z: &[f64]) -> Result<Self> {
        if z.len() != OUTPUTS {
            return Err(Error::invalid("predict_forms", format!("expected {OUTPUTS} logits, got {}", z.len())));
        }
        Ok(FormPrediction {
            seeker: ParticipantPrediction::from_logits(&z[..7]),
            recommender: ParticipantPrediction::from_logits(&z[7..]),
        })
    }
}

/// Class weights of the three heads of one participant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadWeights {
    /// Indexed by `suggested as usize`.
    pub suggested: [f64; 2],
    pub seen: [f64; 3],
    pub liked: [f64; 3],
}

impl Default for HeadWeights {
    fn default() -> Self {
        HeadWeights {
            suggested: [1.0; 2],
            seen: [1.0; 3],
            liked: [1.0; 3],
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub seeker: HeadWeights,
    pub recommender: HeadWeights,
}

impl ClassWeights {
    pub fn scaled(mut self, factor: f64) -> Self {
        for h in [&mut self.seeker, &mut self.recommender] {
            h.suggested.iter_mut().chain(&mut h.seen).chain(&mut h.liked).for_each(|w| *w *= factor);
        }
        self
    }
}

/// `N / (k * N_c)` per class, capped at `cap`. An empty class gets the cap
/// and a warning.
pub fn inverse_frequency(counts: &[f64], cap: f64, warnings: &mut Vec<String>) -> Vec<f64> {
    let total: f64 = counts.iter().sum();
    let k = counts.len() as f64;
    counts
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            if c <= 0.0 {
                warnings.push(format!("class {i} has no examples; weight capped at {cap}"));
                cap
            } else {
                (total / (k * c)).min(cap)
            }
        })
        .collect()
}

/// Inverse-frequency class weights from complete training forms.
pub fn class_weights<'a, I>(labels: I, cap: f64) -> (ClassWeights, Vec<String>)
where
    I: IntoIterator<Item = &'a FormLabels>,
{
    let mut counts = [[[0.0f64; 3]; 3]; 2];
    for f in labels.into_iter().filter(|f| f.is_complete()) {
        for (p, a) in [&f.seeker, &f.recommender].into_iter().enumerate() {
            counts[p][0][a.suggested.unwrap() as usize] += 1.0;
            counts[p][1][a.seen.unwrap().index()] += 1.0;
            counts[p][2][a.liked.unwrap().index()] += 1.0;
        }
    }
    let mut warnings = Vec::new();
    let mut heads = [HeadWeights::default(); 2];
    for (p, h) in heads.iter_mut().enumerate() {
        let s = inverse_frequency(&counts[p][0][..2], cap, &mut warnings);
        h.suggested = [s[0], s[1]];
        let s = inverse_frequency(&counts[p][1], cap, &mut warnings);
        h.seen = [s[0], s[1], s[2]];
        let s = inverse_frequency(&counts[p][2], cap, &mut warnings);
        h.liked = [s[0], s[1], s[2]];
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    (
        ClassWeights {
            seeker: heads[0],
            recommender: heads[1],
        },
        warnings,
    )
}

struct Targets {
    suggested: f64,
    seen: usize,
    liked: usize,
}

fn targets(a: &FormAnswers) -> Result<Targets> {
    match (a.suggested, a.seen, a.liked) {
        (Some(s), Some(seen), Some(liked)) => Ok(Targets {
            suggested: if s { 1.0 } else { 0.0 },
            seen: seen.index(),
            liked: liked.index(),
        }),
        _ => Err(Error::invalid("sentiment_loss", "form labels are incomplete")),
    }
}

/// Weighted cross-entropy of a prediction against complete labels:
/// binary on suggested, categorical on seen and liked, for both participants.
pub fn sentiment_loss(prediction: &FormPrediction, labels: &FormLabels, weights: &ClassWeights) -> Result<f64> {
    let nll = |p: f64| if p > 0.0 { -p.ln() } else { f64::INFINITY };
    let mut total = 0.0;
    for (p, a, w) in [
        (&prediction.seeker, &labels.seeker, &weights.seeker),
        (&prediction.recommender, &labels.recommender, &weights.recommender),
    ] {
        let t = targets(a)?;
        let ps = if t.suggested == 1.0 { p.suggested } else { 1.0 - p.suggested };
        total += w.suggested[t.suggested as usize] * nll(ps);
        total += w.seen[t.seen] * nll(p.seen[t.seen]);
        total += w.liked[t.liked] * nll(p.liked[t.liked]);
    }
    Ok(total)
}

/// Graph form of [`sentiment_loss`] on the 14 head logits.
pub fn form_loss<S: Scalar>(
    g: &mut Graph<S>,
    logits: Var,
    labels: &FormLabels,
    weights: &ClassWeights,
) -> Result<Var> {
    let mut terms = Vec::with_capacity(6);
    for (offset, a, w) in [(0, &labels.seeker, &weights.seeker), (7, &labels.recommender, &weights.recommender)] {
        let t = targets(a)?;
        let s = g.slice(logits, offset, 1)?;
        terms.push(g.bce_with_logits(s, S::lit(t.suggested), S::lit(w.suggested[t.suggested as usize]))?);
        let s = g.slice(logits, offset + 1, 3)?;
        terms.push(g.cross_entropy_with_logits(s, t.seen, S::lit(w.seen[t.seen]))?);
        let s = g.slice(logits, offset + 4, 3)?;
        terms.push(g.cross_entropy_with_logits(s, t.liked, S::lit(w.liked[t.liked]))?);
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = g.add(total, t)?;
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SentimentConfig {
    pub utterance: UtteranceEncoderConfig,
    pub conversation_hidden: usize,
}

impl Default for SentimentConfig {
    fn default() -> Self {
        SentimentConfig {
            utterance: UtteranceEncoderConfig {
                layers: 2,
                ..Default::default()
            },
            conversation_hidden: 256,
        }
    }
}

/// Mention-aware hierarchical encoder with a 14-way form head.
#[derive(Debug, Clone)]
pub struct SentimentModel {
    pub utterance: UtteranceEncoder,
    pub conversation: ConversationEncoder,
    pub head_w: ParamId,
    pub head_b: ParamId,
    pub config: SentimentConfig,
}

impl SentimentModel {
    pub const PREFIX: &'static str = "sentiment";

    pub fn register<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        vocab_size: usize,
        config: SentimentConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let p = Self::PREFIX;
        let utterance =
            UtteranceEncoder::register(store, &format!("{p}.utterance"), vocab_size, config.utterance, true, rng)?;
        let conversation = ConversationEncoder::register(
            store,
            &format!("{p}.conversation"),
            utterance.output_dim(),
            config.conversation_hidden,
            rng,
        )?;
        let head_w = store.param(
            &format!("{p}.head.w"),
            &[OUTPUTS, config.conversation_hidden],
            Init::FanIn,
            rng,
        )?;
        let head_b = store.param(&format!("{p}.head.b"), &[OUTPUTS], Init::Zeros, rng)?;
        Ok(SentimentModel {
            utterance,
            conversation,
            head_w,
            head_b,
            config,
        })
    }

    /// Head logits for `movie` after the last utterance of `utterances`.
    pub fn logits<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        utterances: &[EncodedUtterance],
        movie: MovieId,
    ) -> Result<Var> {
        if !utterances.iter().any(|u| u.spans.iter().any(|s| s.movie == movie)) {
            return Err(Error::MovieNotMentioned(movie));
        }
        let ub = self.utterance.bind(g, store);
        let cb = self.conversation.bind(g, store);
        let mut h = cb.initial(g);
        for u in utterances {
            let f = mention_feature(u.ids.len(), &u.spans, movie)?;
            let uv = ub.encode(g, &u.ids, Some(&f))?;
            h = cb.step(g, uv, u.sender(), h)?;
        }
        let w = g.param(store, self.head_w);
        let b = g.param(store, self.head_b);
        let z = g.matmul(w, h)?;
        g.add_bias(z, b)
    }

    pub fn predict<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        utterances: &[EncodedUtterance],
        movie: MovieId,
    ) -> Result<FormPrediction> {
        let mut g = Graph::inference();
        let z = self.logits(&mut g, store, utterances, movie)?;
        FormPrediction::from_logits(&g.value(z).to_f64_vec())
    }
}

/// Free-function form of [`SentimentModel::predict`].
pub fn predict_forms<S: Scalar>(
    utterances: &[EncodedUtterance],
    movie: MovieId,
    model: &SentimentModel,
    store: &ParamStore<S>,
) -> Result<FormPrediction> {
    model.predict(store, utterances, movie)
}

/// One training example: a whole dialogue conditioned on one of its movies.
#[derive(Debug, Clone)]
pub struct SentimentExample {
    pub conversation: u64,
    pub utterances: std::sync::Arc<Vec<EncodedUtterance>>,
    pub labels: FormLabels,
}

#[derive(Debug, Clone, Default)]
pub struct ExampleSet {
    pub examples: Vec<SentimentExample>,
    pub skipped_incomplete: usize,
    pub skipped_unmentioned: usize,
}

/// One example per complete form whose movie occurs in the dialogue.
pub fn build_examples(conversations: &[Conversation], vocab: &Vocab) -> Result<ExampleSet> {
    let mut set = ExampleSet::default();
    for c in conversations {
        let utts = std::sync::Arc::new(encode_utterances(c, vocab)?);
        let mentioned = c.mentioned_movies();
        for f in &c.forms {
            if !f.is_complete() {
                set.skipped_incomplete += 1;
            } else if !mentioned.contains(&f.movie) {
                set.skipped_unmentioned += 1;
            } else {
                set.examples.push(SentimentExample {
                    conversation: c.id,
                    utterances: utts.clone(),
                    labels: *f,
                });
            }
        }
    }
    Ok(set)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SentimentTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub weight_cap: f64,
    pub class_weighting: bool,
}

impl Default for SentimentTrainConfig {
    fn default() -> Self {
        SentimentTrainConfig {
            epochs: 10,
            batch_size: 8,
            adam: AdamConfig::default(),
            weight_cap: DEFAULT_WEIGHT_CAP,
            class_weighting: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SentimentTrainLog {
    /// Mean loss per example for each epoch.
    pub epoch_loss: Vec<f64>,
    pub weights: ClassWeights,
    pub warnings: Vec<String>,
}

/// Trains on `examples`; returns per-epoch mean losses.
pub fn train_sentiment<S: Scalar, R: Rng + ?Sized>(
    model: &SentimentModel,
    store: &mut ParamStore<S>,
    examples: &[SentimentExample],
    config: &SentimentTrainConfig,
    rng: &mut R,
) -> Result<SentimentTrainLog> {
    let (weights, warnings) = if config.class_weighting {
        class_weights(examples.iter().map(|e| &e.labels), config.weight_cap)
    } else {
        (ClassWeights::default(), Vec::new())
    };
    let mut adam = Adam::new(config.adam);
    let mut log = SentimentTrainLog {
        weights,
        warnings,
        ..Default::default()
    };
    for _ in 0..config.epochs {
        let t = train::epoch(store, &mut adam, examples, config.batch_size, rng, |g, s, e| {
            example_loss(model, g, s, e, &weights)
        })?;
        log.epoch_loss.push(t.mean());
    }
    Ok(log)
}

pub fn example_loss<S: Scalar>(
    model: &SentimentModel,
    g: &mut Graph<S>,
    store: &ParamStore<S>,
    example: &SentimentExample,
    weights: &ClassWeights,
) -> Result<ExampleLoss> {
    let z = model.logits(g, store, &example.utterances, example.labels.movie)?;
    Ok(ExampleLoss {
        loss: form_loss(g, z, &example.labels, weights)?,
        units: 1.0,
    })
}

pub fn mean_loss<S: Scalar>(
    model: &SentimentModel,
    store: &ParamStore<S>,
    examples: &[SentimentExample],
    weights: &ClassWeights,
) -> Result<LossTally> {
    train::evaluate(store, examples, |g, s, e| example_loss(model, g, s, e, weights))
}

/// k x k counts, rows are true labels and columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new<L: ToString>(labels: &[L]) -> Self {
        let k = labels.len();
        ConfusionMatrix {
            labels: labels.iter().map(|l| l.to_string()).collect(),
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = counts.len();
        if counts.iter().any(|r| r.len() != k) {
            return Err(Error::invalid("confusion_matrix", "counts must be square"));
        }
        Ok(ConfusionMatrix {
            labels: (0..k).map(|i| i.to_string()).collect(),
            counts,
        })
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn add(&mut self, truth: usize, predicted: usize) -> Result<()> {
        let k = self.k();
        if truth >= k || predicted >= k {
            return Err(Error::invalid(
                "confusion_matrix",
                format!("label pair ({truth}, {predicted}) out of range for k = {k}"),
            ));
        }
        self.counts[truth][predicted] += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let t = self.total();
        if t == 0 {
            return 0.0;
        }
        (0..self.k()).map(|i| self.counts[i][i]).sum::<u64>() as f64 / t as f64
    }
}

pub fn confusion_matrix(predicted: &[usize], truth: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if predicted.len() != truth.len() {
        return Err(Error::invalid("confusion_matrix", "prediction and truth lengths differ"));
    }
    let labels: Vec<usize> = (0..k).collect();
    let mut m = ConfusionMatrix::new(&labels);
    for (&p, &t) in predicted.iter().zip(truth) {
        m.add(t, p)?;
    }
    Ok(m)
}

/// `(p_o - p_e) / (1 - p_e)`; zero, with a warning, when `p_e = 1`.
pub fn cohens_kappa(m: &ConfusionMatrix) -> Result<f64> {
    let total = m.total() as f64;
    if total == 0.0 {
        return Err(Error::invalid("cohens_kappa", "empty confusion matrix"));
    }
    let k = m.k();
    let p_o = (0..k).map(|i| m.counts[i][i]).sum::<u64>() as f64 / total;
    let p_e: f64 = (0..k)
        .map(|c| {
            let row: u64 = m.counts[c].iter().sum();
            let col: u64 = m.counts.iter().map(|r| r[c]).sum();
            row as f64 * col as f64
        })
        .sum::<f64>()
        / (total * total);
    if (1.0 - p_e).abs() < 1e-12 {
        log::warn!("cohens_kappa: chance agreement is 1; kappa defined as 0");
        return Ok(0.0);
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadReport {
    pub confusion: ConfusionMatrix,
    pub kappa: f64,
    pub accuracy: f64,
}

impl HeadReport {
    fn from_matrix(confusion: ConfusionMatrix) -> Result<Self> {
        Ok(HeadReport {
            kappa: cohens_kappa(&confusion)?,
            accuracy: confusion.accuracy(),
            confusion,
        })
    }
}

/// Seeker-side evaluation of the seen and liked heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentimentReport {
    pub examples: usize,
    pub suggested_accuracy: f64,
    pub seen: HeadReport,
    pub liked: HeadReport,
}

pub fn evaluate_sentiment<S: Scalar>(
    model: &SentimentModel,
    store: &ParamStore<S>,
    examples: &[SentimentExample],
) -> Result<SentimentReport> {
    let mut seen = ConfusionMatrix::new(&Seen::LABELS);
    let mut liked = ConfusionMatrix::new(&Liked::LABELS);
    let mut suggested_ok = 0usize;
    for e in examples {
        let p = model.predict(store, &e.utterances, e.labels.movie)?.seeker;
        let t = targets(&e.labels.seeker)?;
        seen.add(t.seen, argmax(&p.seen))?;
        liked.add(t.liked, argmax(&p.liked))?;
        if (p.suggested >= 0.5) == (t.suggested == 1.0) {
            suggested_ok += 1;
        }
    }
    Ok(SentimentReport {
        examples: examples.len(),
        suggested_accuracy: if examples.is_empty() {
            0.0
        } else {
            suggested_ok as f64 / examples.len() as f64
        },
        seen: HeadReport::from_matrix(seen)?,
        liked: HeadReport::from_matrix(liked)?,
    })
}

impl fmt::Display for ConfusionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let w = self.labels.iter().map(|l| l.len()).max().unwrap_or(0).max(6);
        write!(f, "{:w$}", "")?;
        for l in &self.labels {
            write!(f, " {l:>w$}")?;
        }
        for (l, row) in self.labels.iter().zip(&self.counts) {
            write!(f, "\n{l:w$}")?;
            for c in row {
                write!(f, " {c:>w$}")?;
            }
        }
        Ok(())
    }
}

impl fmt::Display for SentimentReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "examples: {}", self.examples)?;
        writeln!(f, "suggested accuracy: {:.3}", self.suggested_accuracy)?;
        writeln!(f, "seen (rows = truth, columns = prediction), kappa = {:.3}", self.seen.kappa)?;
        writeln!(f, "{}", self.seen.confusion)?;
        writeln!(f, "liked (rows = truth, columns = prediction), kappa = {:.3}", self.liked.kappa)?;
        write!(f, "{}", self.liked.confusion)
    }
}
