use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::tokenize::{expand_mentions, tokenize, Expanded, Token, UNK};
use super::{MovieDb, MovieEntity, MovieId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Seeker,
    Recommender,
}

impl Role {
    /// Sender flag appended to utterance representations.
    pub fn flag(self) -> f64 {
        match self {
            Role::Seeker => 1.0,
            Role::Recommender => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utterance {
    pub role: Role,
    pub tokens: Vec<Token>,
    pub raw_text: String,
}

impl Utterance {
    pub fn new(role: Role, text: &str) -> Self {
        Utterance {
            role,
            tokens: tokenize(text),
            raw_text: text.to_string(),
        }
    }

    pub fn mentions(&self) -> impl Iterator<Item = MovieId> + '_ {
        self.tokens.iter().filter_map(|t| match t {
            Token::Mention(id) => Some(*id),
            Token::Word(_) => None,
        })
    }
}

/// Answer to "have you seen it"; discriminants are the wire codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Seen {
    NotSeen = 0,
    Seen = 1,
    DidNotSay = 2,
}

/// Answer to "did you like it"; discriminants are the wire codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Liked {
    Disliked = 0,
    Liked = 1,
    DidNotSay = 2,
}

impl Seen {
    pub const LABELS: [&'static str; 3] = ["not seen", "seen", "did not say"];

    pub fn from_code(c: u64) -> Option<Self> {
        [Seen::NotSeen, Seen::Seen, Seen::DidNotSay].get(c as usize).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl Liked {
    pub const LABELS: [&'static str; 3] = ["disliked", "liked", "did not say"];

    pub fn from_code(c: u64) -> Option<Self> {
        [Liked::Disliked, Liked::Liked, Liked::DidNotSay]
            .get(c as usize)
            .copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// One participant's answers about one movie. Missing fields stay `None`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FormAnswers {
    pub suggested: Option<bool>,
    pub seen: Option<Seen>,
    pub liked: Option<Liked>,
}

impl FormAnswers {
    pub fn new(suggested: bool, seen: Seen, liked: Liked) -> Self {
        FormAnswers {
            suggested: Some(suggested),
            seen: Some(seen),
            liked: Some(liked),
        }
    }

    pub fn is_complete(&self) -> bool {
        self.suggested.is_some() && self.seen.is_some() && self.liked.is_some()
    }

    pub fn is_empty(&self) -> bool {
        self.suggested.is_none() && self.seen.is_none() && self.liked.is_none()
    }
}

/// Both participants' answers for one mentioned movie.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FormLabels {
    pub movie: MovieId,
    pub seeker: FormAnswers,
    pub recommender: FormAnswers,
}

impl FormLabels {
    pub fn is_complete(&self) -> bool {
        self.seeker.is_complete() && self.recommender.is_complete()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conversation {
    pub id: u64,
    pub utterances: Vec<Utterance>,
    pub mentions: BTreeMap<MovieId, MovieEntity>,
    /// Sorted by movie id.
    pub forms: Vec<FormLabels>,
    pub seeker_worker: Option<String>,
    pub recommender_worker: Option<String>,
}

impl Conversation {
    pub fn title_of(&self, id: MovieId) -> Option<&str> {
        self.mentions.get(&id).map(|m| m.title.as_str())
    }

    /// Word tokens of utterance `i` with mentions replaced by titles.
    pub fn expand(&self, i: usize) -> Result<Expanded> {
        expand_mentions(&self.utterances[i].tokens, |id| self.title_of(id))
    }

    pub fn form(&self, movie: MovieId) -> Option<&FormLabels> {
        self.forms.iter().find(|f| f.movie == movie)
    }

    /// Movies mentioned in the text, in order of first appearance.
    pub fn mentioned_movies(&self) -> Vec<MovieId> {
        let mut seen = Vec::new();
        for id in self.utterances.iter().flat_map(|u| u.mentions()) {
            if !seen.contains(&id) {
                seen.push(id);
            }
        }
        seen
    }

    pub fn to_canonical_json(&self) -> String {
        let record = CanonicalRecord {
            conversation_id: self.id,
            messages: self
                .utterances
                .iter()
                .map(|u| CanonicalMessage {
                    sender_role: u.role,
                    text: u.raw_text.clone(),
                })
                .collect(),
            movie_mentions: self
                .mentions
                .values()
                .map(|m| {
                    (
                        m.id.to_string(),
                        CanonicalMovie {
                            title: m.title.clone(),
                            year: m.year,
                        },
                    )
                })
                .collect(),
            seeker_questions: answers_map(self.forms.iter().map(|f| (f.movie, f.seeker))),
            recommender_questions: answers_map(self.forms.iter().map(|f| (f.movie, f.recommender))),
            seeker_worker_id: self.seeker_worker.clone(),
            recommender_worker_id: self.recommender_worker.clone(),
        };
        serde_json::to_string(&record).expect("plain data serializes")
    }
}

fn answers_map(
    it: impl Iterator<Item = (MovieId, FormAnswers)>,
) -> BTreeMap<String, CanonicalAnswers> {
    it.filter(|(_, a)| !a.is_empty())
        .map(|(id, a)| {
            (
                id.to_string(),
                CanonicalAnswers {
                    suggested: a.suggested.map(u64::from),
                    seen: a.seen.map(|s| s as u64),
                    liked: a.liked.map(|l| l as u64),
                },
            )
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct CanonicalRecord {
    conversation_id: u64,
    messages: Vec<CanonicalMessage>,
    #[serde(default)]
    movie_mentions: BTreeMap<String, CanonicalMovie>,
    #[serde(default)]
    seeker_questions: BTreeMap<String, CanonicalAnswers>,
    #[serde(default)]
    recommender_questions: BTreeMap<String, CanonicalAnswers>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seeker_worker_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    recommender_worker_id: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct CanonicalMessage {
    sender_role: Role,
    text: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct CanonicalMovie {
    title: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    year: Option<i32>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct CanonicalAnswers {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    suggested: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seen: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    liked: Option<u64>,
}

/// Format-neutral intermediate produced by both the canonical reader and the
/// ReDial adapter.
pub(super) struct RawConversation {
    pub id: u64,
    pub messages: Vec<(Role, String)>,
    pub mentions: BTreeMap<MovieId, (String, Option<i32>)>,
    pub seeker: BTreeMap<MovieId, FormAnswers>,
    pub recommender: BTreeMap<MovieId, FormAnswers>,
    pub seeker_worker: Option<String>,
    pub recommender_worker: Option<String>,
}

#[derive(Debug, Default)]
pub struct ParsedCorpus {
    pub conversations: Vec<Conversation>,
    /// 1-based line numbers of records that could not be parsed.
    pub malformed_lines: Vec<usize>,
    pub warnings: Vec<String>,
    pub unresolved_mentions: usize,
}

/// Reads one conversation per line, in the canonical format or the upstream
/// ReDial layout (detected per line).
pub fn parse_corpus(path: &Path, movie_db: &MovieDb) -> Result<ParsedCorpus> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_corpus_str(&text, movie_db))
}

pub fn parse_corpus_str(text: &str, movie_db: &MovieDb) -> ParsedCorpus {
    let mut out = ParsedCorpus::default();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw = serde_json::from_str::<Value>(line)
            .map_err(|e| e.to_string())
            .and_then(raw_from_value);
        match raw {
            Ok(raw) => {
                let conv = build(raw, movie_db, &mut out);
                out.conversations.push(conv);
            }
            Err(msg) => {
                log::warn!("line {}: malformed conversation: {msg}", lineno + 1);
                out.malformed_lines.push(lineno + 1);
            }
        }
    }
    out
}

fn raw_from_value(v: Value) -> Result<RawConversation, String> {
    let raw = if v.get("initiatorWorkerId").is_some() || v.get("initiatorQuestions").is_some() {
        super::redial::adapt(v)?
    } else {
        let rec: CanonicalRecord = serde_json::from_value(v).map_err(|e| e.to_string())?;
        canonical_to_raw(rec)?
    };
    if raw.messages.is_empty() {
        return Err("conversation has no messages".into());
    }
    Ok(raw)
}

pub(super) fn parse_id(key: &str) -> Result<MovieId, String> {
    key.trim()
        .parse()
        .map_err(|_| format!("movie id `{key}` is not numeric"))
}

pub(super) fn answers_from_codes(
    suggested: Option<u64>,
    seen: Option<u64>,
    liked: Option<u64>,
) -> FormAnswers {
    FormAnswers {
        suggested: suggested.and_then(|c| match c {
            0 => Some(false),
            1 => Some(true),
            _ => None,
        }),
        seen: seen.and_then(Seen::from_code),
        liked: liked.and_then(Liked::from_code),
    }
}

fn canonical_to_raw(rec: CanonicalRecord) -> Result<RawConversation, String> {
    let mut mentions = BTreeMap::new();
    for (k, m) in rec.movie_mentions {
        mentions.insert(parse_id(&k)?, (m.title, m.year));
    }
    let answers = |map: BTreeMap<String, CanonicalAnswers>| -> Result<_, String> {
        let mut out = BTreeMap::new();
        for (k, a) in map {
            out.insert(parse_id(&k)?, answers_from_codes(a.suggested, a.seen, a.liked));
        }
        Ok(out)
    };
    Ok(RawConversation {
        id: rec.conversation_id,
        messages: rec.messages.into_iter().map(|m| (m.sender_role, m.text)).collect(),
        mentions,
        seeker: answers(rec.seeker_questions)?,
        recommender: answers(rec.recommender_questions)?,
        seeker_worker: rec.seeker_worker_id,
        recommender_worker: rec.recommender_worker_id,
    })
}

fn build(raw: RawConversation, db: &MovieDb, out: &mut ParsedCorpus) -> Conversation {
    let mut mentions: BTreeMap<MovieId, MovieEntity> = BTreeMap::new();
    for (id, (title, year)) in raw.mentions {
        if !title.trim().is_empty() {
            mentions.insert(id, MovieEntity { id, title, year });
        } else if let Some(m) = db.get(id) {
            mentions.insert(id, m.clone());
        }
    }

    let resolve = |id: MovieId, mentions: &mut BTreeMap<MovieId, MovieEntity>| -> bool {
        if mentions.contains_key(&id) {
            return true;
        }
        match db.get(id) {
            Some(m) => {
                mentions.insert(id, m.clone());
                true
            }
            None => false,
        }
    };

    let mut utterances = Vec::with_capacity(raw.messages.len());
    for (role, text) in raw.messages {
        let mut u = Utterance::new(role, &text);
        for t in &mut u.tokens {
            if let Token::Mention(id) = *t {
                if !resolve(id, &mut mentions) {
                    out.unresolved_mentions += 1;
                    out.warnings
                        .push(format!("conversation {}: unresolved mention @{id}", raw.id));
                    *t = Token::word(UNK);
                }
            }
        }
        utterances.push(u);
    }

    let mut forms = Vec::new();
    let ids: std::collections::BTreeSet<MovieId> =
        raw.seeker.keys().chain(raw.recommender.keys()).copied().collect();
    for id in ids {
        if !resolve(id, &mut mentions) {
            out.warnings.push(format!(
                "conversation {}: form answers for unknown movie {id} dropped",
                raw.id
            ));
            continue;
        }
        forms.push(FormLabels {
            movie: id,
            seeker: raw.seeker.get(&id).copied().unwrap_or_default(),
            recommender: raw.recommender.get(&id).copied().unwrap_or_default(),
        });
    }

    Conversation {
        id: raw.id,
        utterances,
        mentions,
        forms,
        seeker_worker: raw.seeker_worker,
        recommender_worker: raw.recommender_worker,
    }
}
