use serde::{Deserialize, Serialize};

use super::MovieId;
use crate::error::{Error, Result};

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";
pub const PAD: &str = "<pad>";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Token {
    Word(String),
    Mention(MovieId),
}

impl Token {
    pub fn word(w: &str) -> Self {
        Token::Word(w.to_string())
    }
}

/// Inclusive token range `[start, end]` covered by one expanded movie title.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MentionSpan {
    pub movie: MovieId,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Expanded {
    pub words: Vec<String>,
    pub spans: Vec<MentionSpan>,
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Lowercased word/punctuation tokens without sentence markers.
///
/// Runs of alphanumerics form words (an apostrophe between two word
/// characters stays inside the word); every other non-space character is a
/// token of its own. `@` followed by decimal digits is a movie mention.
pub fn tokenize_words(text: &str) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == '@' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()) {
            let start = i + 1;
            let mut end = start;
            while end < chars.len() && chars[end].is_ascii_digit() {
                end += 1;
            }
            let digits: String = chars[start..end].iter().collect();
            match digits.parse::<MovieId>() {
                Ok(id) => out.push(Token::Mention(id)),
                Err(_) => out.push(Token::Word(format!("@{digits}"))),
            }
            i = end;
        } else if is_word_char(c) {
            let start = i;
            while i < chars.len()
                && (is_word_char(chars[i])
                    || (chars[i] == '\''
                        && i > start
                        && chars.get(i + 1).is_some_and(|&n| is_word_char(n))))
            {
                i += 1;
            }
            let word: String = chars[start..i].iter().collect();
            out.push(Token::Word(word.to_lowercase()));
        } else {
            out.push(Token::Word(c.to_lowercase().collect()));
            i += 1;
        }
    }
    out
}

/// Tokenizes an utterance and wraps it in `<s>` ... `</s>`.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut out = vec![Token::word(BOS)];
    out.extend(tokenize_words(text));
    out.push(Token::word(EOS));
    out
}

/// Word tokens of a movie title (mentions inside titles are kept literally).
pub fn title_words(title: &str) -> Vec<String> {
    tokenize_words(title)
        .into_iter()
        .map(|t| match t {
            Token::Word(w) => w,
            Token::Mention(id) => format!("@{id}"),
        })
        .collect()
}

/// Replaces every mention by the words of its title and records where each
/// title landed.
pub fn expand_mentions<'a, F>(tokens: &[Token], title_of: F) -> Result<Expanded>
where
    F: Fn(MovieId) -> Option<&'a str>,
{
    let mut words = Vec::with_capacity(tokens.len());
    let mut spans = Vec::new();
    for t in tokens {
        match t {
            Token::Word(w) => words.push(w.clone()),
            Token::Mention(id) => {
                let title = title_of(*id).ok_or(Error::UnresolvedMention(*id))?;
                let tw = title_words(title);
                if tw.is_empty() {
                    return Err(Error::UnresolvedMention(*id));
                }
                let start = words.len();
                words.extend(tw);
                spans.push(MentionSpan {
                    movie: *id,
                    start,
                    end: words.len() - 1,
                });
            }
        }
    }
    Ok(Expanded { words, spans })
}
