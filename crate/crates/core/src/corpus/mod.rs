//! Dialogue corpus: movie database, tokenization with `@id` mentions,
//! conversation parsing, statistics, vocabulary and train/validation splits.

mod conversation;
mod movies;
pub mod redial;
mod stats;
mod tokenize;
mod vocab;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use conversation::{
    parse_corpus, parse_corpus_str, Conversation, FormAnswers, FormLabels, Liked, ParsedCorpus,
    Role, Seen, Utterance,
};
pub use movies::{MovieDb, MovieEntity};
pub use stats::{corpus_stats, LikedCounts, SeenCounts, StatsReport};
pub use tokenize::{
    expand_mentions, title_words, tokenize, tokenize_words, Expanded, MentionSpan, Token, BOS,
    EOS, PAD, UNK,
};
pub use vocab::{Vocab, BOS_ID, EOS_ID, PAD_ID, UNK_ID};

pub type MovieId = u64;

/// Deterministic conversation-level split. The validation part holds
/// `floor(n * fraction)` conversations; both parts keep corpus order.
pub fn split<T: Clone>(items: &[T], fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split fraction must be in (0, 1), got {fraction}"
        )));
    }
    let n = items.len();
    let n_val = (n as f64 * fraction).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_val = vec![false; n];
    for &i in &order[..n_val] {
        is_val[i] = true;
    }
    let (mut train, mut val) = (Vec::with_capacity(n - n_val), Vec::with_capacity(n_val));
    for (item, v) in items.iter().zip(is_val) {
        if v {
            val.push(item.clone());
        } else {
            train.push(item.clone());
        }
    }
    Ok((train, val))
}
