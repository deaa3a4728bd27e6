//! User-based autoencoder recommender (AutoRec) with optional denoising
//! training, rating binarization and cold-start evaluation.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Conversation, Liked, MovieDb, MovieId};
use crate::error::{Error, Result};
use crate::tensor::{sigmoid_value, Adam, AdamConfig, Graph, Init, ParamId, ParamStore, Scalar, Tensor, Var};
use crate::train::{self, ExampleLoss, LossTally};

/// Partially observed ratings of one user; unobserved entries hold 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingVector {
    values: Vec<f64>,
    mask: Vec<bool>,
}

impl RatingVector {
    pub fn empty(n: usize) -> Self {
        RatingVector {
            values: vec![0.0; n],
            mask: vec![false; n],
        }
    }

    pub fn from_pairs(n: usize, pairs: &[(usize, f64)]) -> Result<Self> {
        let mut r = Self::empty(n);
        for &(i, v) in pairs {
            r.set(i, v)?;
        }
        Ok(r)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn get(&self, i: usize) -> Option<f64> {
        self.mask.get(i).copied().unwrap_or(false).then(|| self.values[i])
    }

    pub fn set(&mut self, i: usize, value: f64) -> Result<()> {
        if i >= self.len() {
            return Err(Error::InvalidArgument(format!("item {i} out of range for {} items", self.len())));
        }
        self.values[i] = value;
        self.mask[i] = true;
        Ok(())
    }

    pub fn unset(&mut self, i: usize) {
        if i < self.len() {
            self.values[i] = 0.0;
            self.mask[i] = false;
        }
    }

    /// `N_u`.
    pub fn observed(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn observed_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.mask[i]).collect()
    }

    pub fn observed_pairs(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        (0..self.len()).filter(|&i| self.mask[i]).map(|i| (i, self.values[i]))
    }

    fn mask_tensor<S: Scalar>(&self) -> Vec<S> {
        self.mask.iter().map(|&m| if m { S::one() } else { S::zero() }).collect()
    }
}

/// Binary rating: 1 when `rating >= 2`, for ratings on the 0.5..=5 half-star scale.
pub fn binarize(rating: f64) -> Result<f64> {
    let doubled = rating * 2.0;
    if !(1.0..=10.0).contains(&doubled) || doubled.fract() != 0.0 {
        return Err(Error::InvalidArgument(format!("rating {rating} is not on the 0.5-5 scale")));
    }
    Ok(if rating >= 2.0 { 1.0 } else { 0.0 })
}

/// The seeker's liked answers as ratings: liked 1, disliked 0, anything
/// else unobserved. Movies without an index are ignored.
pub fn conversation_to_rating_vector<F>(conversation: &Conversation, n: usize, index_of: F) -> RatingVector
where
    F: Fn(MovieId) -> Option<usize>,
{
    let mut r = RatingVector::empty(n);
    for f in &conversation.forms {
        let v = match f.seeker.liked {
            Some(Liked::Liked) => 1.0,
            Some(Liked::Disliked) => 0.0,
            _ => continue,
        };
        if let Some(i) = index_of(f.movie).filter(|&i| i < n) {
            r.values[i] = v;
            r.mask[i] = true;
        }
    }
    r
}

/// Keeps `p ~ U{1, .., N_u - 1}` observed entries chosen uniformly without
/// replacement. `None` when `N_u < 2`.
pub fn denoise_sample<R: Rng + ?Sized>(r: &RatingVector, rng: &mut R) -> Option<RatingVector> {
    let observed = r.observed_indices();
    let n_u = observed.len();
    if n_u < 2 {
        return None;
    }
    let p = rng.random_range(1..n_u);
    let mut out = RatingVector::empty(r.len());
    for k in index::sample(rng, n_u, p) {
        let i = observed[k];
        out.values[i] = r.values[i];
        out.mask[i] = true;
    }
    Some(out)
}

/// `sqrt(mean((p - t)^2))` over masked entries.
pub fn rmse(predictions: &[f64], truths: &[f64], mask: &[bool]) -> Result<f64> {
    if predictions.len() != truths.len() || truths.len() != mask.len() {
        return Err(Error::InvalidArgument("rmse: length mismatch".into()));
    }
    let (mut sse, mut n) = (0.0, 0usize);
    for ((p, t), &m) in predictions.iter().zip(truths).zip(mask) {
        if m {
            sse += (p - t) * (p - t);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::InvalidArgument("rmse: empty mask".into()));
    }
    Ok((sse / n as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AutorecConfig {
    pub hidden: usize,
    pub lambda: f64,
}

impl Default for AutorecConfig {
    fn default() -> Self {
        AutorecConfig {
            hidden: 64,
            lambda: 0.01,
        }
    }
}

/// `r_hat = W_dec^T sigmoid(W_enc^T r + b_enc) + b_dec` with
/// `W_enc: [n, k]` and `W_dec: [k, n]`.
#[derive(Debug, Clone)]
pub struct Autorec {
    pub enc_w: ParamId,
    pub enc_b: ParamId,
    pub dec_w: ParamId,
    pub dec_b: ParamId,
    pub items: usize,
    pub config: AutorecConfig,
}

impl Autorec {
    pub const PREFIX: &'static str = "recommender";

    pub fn register<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        items: usize,
        config: AutorecConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if config.hidden == 0 || config.hidden >= items {
            return Err(Error::Config(format!(
                "autorec hidden size {} must be in 1..{items}",
                config.hidden
            )));
        }
        if config.lambda < 0.0 {
            return Err(Error::Config("lambda must be non-negative".into()));
        }
        let p = Self::PREFIX;
        let k = config.hidden;
        Ok(Autorec {
            enc_w: store.param(&format!("{p}.enc.w"), &[items, k], Init::Uniform(1.0 / (items as f64).sqrt()), rng)?,
            enc_b: store.param(&format!("{p}.enc.b"), &[k], Init::Zeros, rng)?,
            dec_w: store.param(&format!("{p}.dec.w"), &[k, items], Init::Uniform(1.0 / (k as f64).sqrt()), rng)?,
            dec_b: store.param(&format!("{p}.dec.b"), &[items], Init::Zeros, rng)?,
            items,
            config,
        })
    }

    /// Graph forward for a vector `[n]` or a batch `[b, n]`.
    pub fn forward_graph<S: Scalar>(&self, g: &mut Graph<S>, store: &ParamStore<S>, input: Var) -> Result<Var> {
        let last = *g.shape(input).last().unwrap_or(&0);
        if last != self.items {
            return Err(Error::shape("autorec_forward", g.shape(input), &[self.items]));
        }
        let (ew, eb, dw, db) = (
            g.param(store, self.enc_w),
            g.param(store, self.enc_b),
            g.param(store, self.dec_w),
            g.param(store, self.dec_b),
        );
        let h = g.matmul(input, ew)?;
        let h = g.add_bias(h, eb)?;
        let h = g.sigmoid(h);
        let o = g.matmul(h, dw)?;
        g.add_bias(o, db)
    }

    /// Plain forward pass that only touches the observed inputs.
    pub fn forward<S: Scalar>(&self, store: &ParamStore<S>, r: &RatingVector) -> Result<Vec<f64>> {
        if r.len() != self.items {
            return Err(Error::shape("autorec_forward", &[r.len()], &[self.items]));
        }
        let k = self.config.hidden;
        let ew = store.value(self.enc_w).data();
        let mut h: Vec<f64> = store.value(self.enc_b).data().iter().map(|b| b.as_f64()).collect();
        for (i, v) in r.observed_pairs() {
            if v != 0.0 {
                for (hj, w) in h.iter_mut().zip(&ew[i * k..(i + 1) * k]) {
                    *hj += v * w.as_f64();
                }
            }
        }
        let h: Vec<f64> = h.into_iter().map(sigmoid_value).collect();
        let dw = store.value(self.dec_w).data();
        let mut out: Vec<f64> = store.value(self.dec_b).data().iter().map(|b| b.as_f64()).collect();
        for (j, &hj) in h.iter().enumerate() {
            for (o, w) in out.iter_mut().zip(&dw[j * self.items..(j + 1) * self.items]) {
                *o += hj * w.as_f64();
            }
        }
        Ok(out)
    }

    /// `lambda * (|W_enc|^2 + |W_dec|^2)`.
    pub fn weight_penalty<S: Scalar>(&self, g: &mut Graph<S>, store: &ParamStore<S>) -> Result<Var> {
        let mut total = None;
        for id in [self.enc_w, self.dec_w] {
            let w = g.param(store, id);
            let sq = g.mul(w, w)?;
            let s = g.sum(sq);
            total = Some(match total {
                None => s,
                Some(t) => g.add(t, s)?,
            });
        }
        Ok(g.scale(total.expect("two weights"), S::lit(self.config.lambda)))
    }

    /// Mean over the batch of the observed squared error against `targets`
    /// when fed `inputs`, plus the weight penalty.
    pub fn batch_loss<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        store: &ParamStore<S>,
        inputs: &[&RatingVector],
        targets: &[&RatingVector],
    ) -> Result<Var> {
        let b = inputs.len();
        if b == 0 || targets.len() != b {
            return Err(Error::InvalidArgument("autorec batch must be non-empty and aligned".into()));
        }
        let n = self.items;
        let flat = |vs: &[&RatingVector]| -> Vec<S> { vs.iter().flat_map(|r| r.values.iter().map(|&v| S::lit(v))).collect() };
        let x = g.constant(Tensor::matrix(b, n, flat(inputs))?);
        let y = g.constant(Tensor::matrix(b, n, flat(targets))?);
        let mask = Tensor::matrix(b, n, targets.iter().flat_map(|r| r.mask_tensor::<S>()).collect())?;
        let pred = self.forward_graph(g, store, x)?;
        let sse = g.squared_error(pred, y, Some(mask))?;
        let sse = g.scale(sse, S::lit(1.0 / b as f64));
        let penalty = self.weight_penalty(g, store)?;
        g.add(sse, penalty)
    }
}

/// Free-function form of [`Autorec::forward`].
pub fn autorec_forward<S: Scalar>(r: &RatingVector, model: &Autorec, store: &ParamStore<S>) -> Result<Vec<f64>> {
    model.forward(store, r)
}

/// Observed squared error of `r_hat` against `r` plus `lambda * |weights|^2`.
pub fn autorec_loss<S: Scalar>(r: &RatingVector, r_hat: &[f64], model: &Autorec, store: &ParamStore<S>) -> Result<f64> {
    if r_hat.len() != r.len() {
        return Err(Error::shape("autorec_loss", &[r_hat.len()], &[r.len()]));
    }
    let sse: f64 = r.observed_pairs().map(|(i, v)| (v - r_hat[i]).powi(2)).sum();
    let norm: f64 = [model.enc_w, model.dec_w]
        .iter()
        .map(|&id| store.value(id).sum_squares().as_f64())
        .sum();
    Ok(sse + model.config.lambda * norm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Procedure {
    #[default]
    Standard,
    Denoising,
}

impl std::str::FromStr for Procedure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "standard" => Ok(Procedure::Standard),
            "denoising" => Ok(Procedure::Denoising),
            _ => Err(Error::Config(format!("unknown procedure `{s}` (standard|denoising)"))),
        }
    }
}

impl std::fmt::Display for Procedure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Procedure::Standard => "standard",
            Procedure::Denoising => "denoising",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AutorecTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub procedure: Procedure,
}

impl Default for AutorecTrainConfig {
    fn default() -> Self {
        AutorecTrainConfig {
            epochs: 30,
            batch_size: 32,
            adam: AdamConfig::default(),
            procedure: Procedure::Standard,
        }
    }
}

/// Held-out ratings to track during training: predictions are made from
/// `inputs` and scored on `targets`.
#[derive(Debug, Clone, Copy)]
pub struct Validation<'a> {
    pub inputs: &'a [RatingVector],
    pub targets: &'a [RatingVector],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AutorecTrainLog {
    /// Mean batch loss per epoch.
    pub epoch_loss: Vec<f64>,
    pub validation_rmse: Vec<f64>,
    pub best_epoch: Option<usize>,
    /// Users left out of denoising training because they have fewer than two ratings.
    pub skipped_users: usize,
}

/// Trains on `users`. With `validation`, the parameters of the epoch with
/// the lowest validation RMSE are restored at the end.
pub fn train_autorec<S: Scalar, R: Rng + ?Sized>(
    model: &Autorec,
    store: &mut ParamStore<S>,
    users: &[RatingVector],
    validation: Option<Validation<'_>>,
    config: &AutorecTrainConfig,
    rng: &mut R,
) -> Result<AutorecTrainLog> {
    if config.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut adam = Adam::new(config.adam);
    let mut log = AutorecTrainLog::default();
    let mut best: Option<(f64, ParamStore<S>)> = None;
    let eligible: Vec<&RatingVector> = users
        .iter()
        .filter(|r| match config.procedure {
            Procedure::Standard => r.observed() >= 1,
            Procedure::Denoising => r.observed() >= 2,
        })
        .collect();
    log.skipped_users = users.len() - eligible.len();
    for epoch in 0..config.epochs {
        let mut pairs: Vec<(RatingVector, &RatingVector)> = eligible
            .iter()
            .map(|&r| match config.procedure {
                Procedure::Standard => (r.clone(), r),
                Procedure::Denoising => (denoise_sample(r, rng).expect("N_u >= 2"), r),
            })
            .collect();
        pairs.shuffle(rng);
        let mut tally = LossTally::default();
        for chunk in pairs.chunks(config.batch_size) {
            let t = train::minibatch_step(store, &mut adam, std::slice::from_ref(&chunk), |g, s, batch| {
                let inputs: Vec<&RatingVector> = batch.iter().map(|(i, _)| i).collect();
                let targets: Vec<&RatingVector> = batch.iter().map(|(_, t)| *t).collect();
                Ok(ExampleLoss {
                    loss: model.batch_loss(g, s, &inputs, &targets)?,
                    units: 1.0,
                })
            })?;
            tally.add(t);
        }
        log.epoch_loss.push(tally.mean());
        if let Some(v) = validation {
            let r = evaluate_heldout(model, store, v.inputs, v.targets)?.rmse;
            log.validation_rmse.push(r);
            if best.as_ref().is_none_or(|(b, _)| r < *b) {
                best = Some((r, store.clone()));
                log.best_epoch = Some(epoch);
            }
        }
    }
    if let Some((_, snapshot)) = best {
        store.load_from(&snapshot)?;
    }
    Ok(log)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmseReport {
    pub rmse: f64,
    pub predictions: usize,
    /// Users without enough ratings to contribute.
    pub skipped: usize,
}

fn finish(sse: f64, n: usize, skipped: usize) -> Result<RmseReport> {
    if n == 0 {
        return Err(Error::InvalidArgument("no ratings to evaluate".into()));
    }
    Ok(RmseReport {
        rmse: (sse / n as f64).sqrt(),
        predictions: n,
        skipped,
    })
}

/// RMSE on `targets` with predictions from the uncorrupted `inputs`,
/// clamped to [0, 1].
pub fn evaluate_heldout<S: Scalar>(
    model: &Autorec,
    store: &ParamStore<S>,
    inputs: &[RatingVector],
    targets: &[RatingVector],
) -> Result<RmseReport> {
    if inputs.len() != targets.len() {
        return Err(Error::InvalidArgument("inputs and targets must align".into()));
    }
    let (mut sse, mut n, mut skipped) = (0.0, 0usize, 0usize);
    for (x, t) in inputs.iter().zip(targets) {
        if t.observed() == 0 {
            skipped += 1;
            continue;
        }
        let out = model.forward(store, x)?;
        for (i, v) in t.observed_pairs() {
            sse += (out[i].clamp(0.0, 1.0) - v).powi(2);
            n += 1;
        }
    }
    finish(sse, n, skipped)
}

/// Leave-one-out within each user: every rating is predicted from the
/// user's other ratings. Users with fewer than two ratings are skipped.
pub fn evaluate_coldstart<S: Scalar>(model: &Autorec, store: &ParamStore<S>, users: &[RatingVector]) -> Result<RmseReport> {
    coldstart(users, |input, i| Ok(model.forward(store, input)?[i].clamp(0.0, 1.0)))
}

/// The same leave-one-out protocol with a constant prediction.
pub fn constant_coldstart(users: &[RatingVector], value: f64) -> Result<RmseReport> {
    coldstart(users, |_, _| Ok(value))
}

fn coldstart<F>(users: &[RatingVector], mut predict: F) -> Result<RmseReport>
where
    F: FnMut(&RatingVector, usize) -> Result<f64>,
{
    let (mut sse, mut n, mut skipped) = (0.0, 0usize, 0usize);
    for r in users {
        if r.observed() < 2 {
            skipped += 1;
            continue;
        }
        for (i, v) in r.observed_pairs() {
            let mut input = r.clone();
            input.unset(i);
            sse += (predict(&input, i)? - v).powi(2);
            n += 1;
        }
    }
    finish(sse, n, skipped)
}

/// Mean of all observed ratings (0 when there are none).
pub fn global_mean(users: &[RatingVector]) -> f64 {
    let (s, n) = users
        .iter()
        .flat_map(|r| r.observed_pairs())
        .fold((0.0, 0usize), |(s, n), (_, v)| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Binary ratings from a random rank-`rank` model: user and item factors
/// are standard normal, each entry is observed with probability `density`,
/// and an observed rating is 1 when the factor dot product is positive.
pub fn synthetic_ratings<R: Rng + ?Sized>(
    users: usize,
    items: usize,
    rank: usize,
    density: f64,
    rng: &mut R,
) -> Vec<RatingVector> {
    let mut factors = |n: usize| -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..rank).map(|_| StandardNormal.sample(&mut *rng)).collect()).collect()
    };
    let item_f = factors(items);
    let user_f = factors(users);
    user_f
        .iter()
        .map(|u| {
            let mut r = RatingVector::empty(items);
            for (i, v) in item_f.iter().enumerate() {
                if rng.random_bool(density) {
                    let score: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
                    r.values[i] = if score > 0.0 { 1.0 } else { 0.0 };
                    r.mask[i] = true;
                }
            }
            r
        })
        .collect()
}

/// Per-user partition of observed ratings into train / validation / test.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingSplit {
    pub train: Vec<RatingVector>,
    pub validation: Vec<RatingVector>,
    pub test: Vec<RatingVector>,
}

/// Assigns every observed rating independently to train, validation or
/// test with probabilities `fractions`.
pub fn split_ratings<R: Rng + ?Sized>(users: &[RatingVector], fractions: [f64; 3], rng: &mut R) -> Result<RatingSplit> {
    let total: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| *f < 0.0) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("split fractions {fractions:?} must be non-negative and sum to 1")));
    }
    let n = users.first().map_or(0, |r| r.len());
    let mut out = RatingSplit {
        train: Vec::with_capacity(users.len()),
        validation: Vec::with_capacity(users.len()),
        test: Vec::with_capacity(users.len()),
    };
    for r in users {
        let mut parts = [RatingVector::empty(n), RatingVector::empty(n), RatingVector::empty(n)];
        for (i, v) in r.observed_pairs() {
            let u: f64 = rng.random();
            let k = if u < fractions[0] {
                0
            } else if u < fractions[0] + fractions[1] {
                1
            } else {
                2
            };
            parts[k].values[i] = v;
            parts[k].mask[i] = true;
        }
        let [a, b, c] = parts;
        out.train.push(a);
        out.validation.push(b);
        out.test.push(c);
    }
    Ok(out)
}

/// Binarized ratings aligned with a movie database.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingsData {
    pub users: Vec<RatingVector>,
    pub user_ids: Vec<u64>,
    pub ratings: usize,
    pub liked: usize,
    /// Ratings of movies that are not in the database.
    pub dropped: usize,
}

impl RatingsData {
    pub fn liked_fraction(&self) -> f64 {
        if self.ratings == 0 {
            0.0
        } else {
            self.liked as f64 / self.ratings as f64
        }
    }
}

/// Reads `movielens_id<TAB>movie_id` pairs.
pub fn load_id_map(path: &Path) -> Result<HashMap<u64, MovieId>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut map = HashMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            msg: format!("expected `movielens_id<TAB>movie_id`, got `{line}`"),
        };
        let (a, b) = line.split_once('\t').ok_or_else(bad)?;
        map.insert(a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
    }
    Ok(map)
}

/// Loads a MovieLens-layout ratings CSV (`userId,movieId,rating,timestamp`
/// with a header), maps movie ids through `id_map` (identity when absent),
/// and binarizes. Users appear in order of first occurrence.
pub fn load_ratings_csv(path: &Path, id_map: Option<&HashMap<u64, MovieId>>, db: &MovieDb) -> Result<RatingsData> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim().starts_with("userId,movieId,rating") => {}
        Some((_, h)) => return Err(parse_err(1, format!("unexpected header `{h}`"))),
        None => return Err(parse_err(1, "empty ratings file".into())),
    }
    let n = db.len();
    let mut data = RatingsData {
        users: Vec::new(),
        user_ids: Vec::new(),
        ratings: 0,
        liked: 0,
        dropped: 0,
    };
    let mut user_index: HashMap<u64, usize> = HashMap::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() < 3 {
            return Err(parse_err(i + 1, "expected at least 3 columns".into()));
        }
        let user: u64 = cols[0].trim().parse().map_err(|_| parse_err(i + 1, format!("bad user id `{}`", cols[0])))?;
        let ml: u64 = cols[1].trim().parse().map_err(|_| parse_err(i + 1, format!("bad movie id `{}`", cols[1])))?;
        let rating: f64 = cols[2].trim().parse().map_err(|_| parse_err(i + 1, format!("bad rating `{}`", cols[2])))?;
        let value = binarize(rating).map_err(|e| parse_err(i + 1, e.to_string()))?;
        let movie = match id_map {
            Some(m) => m.get(&ml).copied(),
            None => Some(ml),
        };
        let Some(item) = movie.and_then(|m| db.index_of(m)) else {
            data.dropped += 1;
            continue;
        };
        let u = *user_index.entry(user).or_insert_with(|| {
            data.users.push(RatingVector::empty(n));
            data.user_ids.push(user);
            data.users.len() - 1
        });
        let r = &mut data.users[u];
        if !r.mask[item] {
            data.ratings += 1;
        } else if r.values[item] == 1.0 {
            data.liked -= 1;
        }
        r.values[item] = value;
        r.mask[item] = true;
        if value == 1.0 {
            data.liked += 1;
        }
    }
    Ok(data)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaTrial {
    pub lambda: f64,
    pub validation_rmse: f64,
}

/// Trains one fresh model per `lambda` and returns the trials, best first.
pub fn lambda_search<R: Rng + ?Sized>(
    grid: &[f64],
    items: usize,
    config: AutorecConfig,
    train_config: &AutorecTrainConfig,
    train_users: &[RatingVector],
    validation: Validation<'_>,
    rng: &mut R,
) -> Result<Vec<LambdaTrial>> {
    let mut trials = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let mut store = ParamStore::<f32>::new();
        let model = Autorec::register(&mut store, items, AutorecConfig { lambda, ..config }, rng)?;
        train_autorec(&model, &mut store, train_users, Some(validation), train_config, rng)?;
        let rmse = evaluate_heldout(&model, &store, validation.inputs, validation.targets)?.rmse;
        trials.push(LambdaTrial {
            lambda,
            validation_rmse: rmse,
        });
    }
    trials.sort_by(|a, b| a.validation_rmse.total_cmp(&b.validation_rmse));
    Ok(trials)
}

pub const LAMBDA_GRID: [f64; 4] = [0.001, 0.01, 0.1, 1.0];


/// Leave-one-out pairs: for every rating of every user with at least two
/// ratings, the input without that rating and a target holding only it.
pub fn leave_one_out_pairs(users: &[RatingVector]) -> (Vec<RatingVector>, Vec<RatingVector>) {
    let (mut inputs, mut targets) = (Vec::new(), Vec::new());
    for r in users.iter().filter(|r| r.observed() >= 2) {
        for (i, v) in r.observed_pairs() {
            let mut x = r.clone();
            x.unset(i);
            let mut t = RatingVector::empty(r.len());
            t.values[i] = v;
            t.mask[i] = true;
            inputs.push(x);
            targets.push(t);
        }
    }
    (inputs, targets)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticBenchmarkConfig {
    pub users: usize,
    pub items: usize,
    pub rank: usize,
    pub density: f64,
    /// Fraction of users held out for cold-start testing.
    pub test_fraction: f64,
    /// Fraction of the remaining users used for model selection.
    pub validation_fraction: f64,
    pub hidden: usize,
    pub lambda_grid: Vec<f64>,
    pub train: AutorecTrainConfig,
}

impl Default for SyntheticBenchmarkConfig {
    fn default() -> Self {
        SyntheticBenchmarkConfig {
            users: 2000,
            items: 200,
            rank: 5,
            density: 0.05,
            test_fraction: 0.2,
            validation_fraction: 0.1,
            hidden: 8,
            lambda_grid: LAMBDA_GRID.to_vec(),
            train: AutorecTrainConfig {
                epochs: 100,
                batch_size: 32,
                adam: AdamConfig {
                    lr: 0.01,
                    ..Default::default()
                },
                procedure: Procedure::Standard,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProcedureResult {
    pub procedure: Procedure,
    pub lambda: f64,
    pub validation_rmse: f64,
    pub coldstart_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkRun {
    pub seed: u64,
    pub baseline_rmse: f64,
    pub results: Vec<ProcedureResult>,
}

/// Cold-start comparison on synthetic ratings for one seed: users are split
/// into train, validation and test; for each procedure, lambda is chosen on
/// validation-user leave-one-out RMSE (with best-epoch restore) and the
/// chosen model is scored on the test users. The baseline predicts the
/// training global mean.
pub fn synthetic_benchmark(config: &SyntheticBenchmarkConfig, procedures: &[Procedure], seed: u64) -> Result<BenchmarkRun> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let users = synthetic_ratings(config.users, config.items, config.rank, config.density, &mut rng);
    let (rest, test) = crate::corpus::split(&users, config.test_fraction, seed)?;
    let (train, val) = crate::corpus::split(&rest, config.validation_fraction, seed.wrapping_add(1))?;
    let (val_in, val_out) = leave_one_out_pairs(&val);
    let validation = Validation {
        inputs: &val_in,
        targets: &val_out,
    };
    let baseline_rmse = constant_coldstart(&test, global_mean(&train))?.rmse;
    let mut results = Vec::new();
    for &procedure in procedures {
        let train_config = AutorecTrainConfig {
            procedure,
            ..config.train
        };
        let mut best: Option<(f64, f64, ParamStore<f32>, Autorec)> = None;
        for &lambda in &config.lambda_grid {
            let mut store = ParamStore::<f32>::new();
            let model = Autorec::register(
                &mut store,
                config.items,
                AutorecConfig {
                    hidden: config.hidden,
                    lambda,
                },
                &mut rng,
            )?;
            train_autorec(&model, &mut store, &train, Some(validation), &train_config, &mut rng)?;
            let v = evaluate_heldout(&model, &store, &val_in, &val_out)?.rmse;
            if best.as_ref().is_none_or(|b| v < b.0) {
                best = Some((v, lambda, store, model));
            }
        }
        let (validation_rmse, lambda, store, model) =
            best.ok_or_else(|| Error::Config("lambda grid is empty".into()))?;
        results.push(ProcedureResult {
            procedure,
            lambda,
            validation_rmse,
            coldstart_rmse: evaluate_coldstart(&model, &store, &test)?.rmse,
        });
    }
    Ok(BenchmarkRun {
        seed,
        baseline_rmse,
        results,
    })
}
