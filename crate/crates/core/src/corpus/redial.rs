//! Adapter for the publicly released ReDial JSON-lines layout.
//!
//! Upstream field names map onto the canonical record as follows:
//! `initiatorWorkerId` is the seeker, `respondentWorkerId` the recommender,
//! `initiatorQuestions`/`respondentQuestions` hold their form answers, and a
//! message's role is recovered from its `senderWorkerId`. Mention titles carry
//! a trailing `(year)` which is split off. Empty maps are sometimes encoded as
//! `[]`.

use std::collections::BTreeMap;

use serde_json::Value;

use super::conversation::{answers_from_codes, parse_id, RawConversation, Role};
use super::{FormAnswers, MovieId};

fn worker(v: Option<&Value>) -> Option<String> {
    match v? {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn as_object(v: Option<&Value>) -> Option<&serde_json::Map<String, Value>> {
    v.and_then(Value::as_object)
}

/// Splits `"Title (1999)"` into `("Title", Some(1999))`.
pub fn split_year(title: &str) -> (String, Option<i32>) {
    let t = title.trim();
    if let Some(open) = t.rfind('(') {
        if t.ends_with(')') {
            if let Ok(year) = t[open + 1..t.len() - 1].trim().parse::<i32>() {
                let rest = t[..open].trim_end();
                if !rest.is_empty() {
                    return (rest.to_string(), Some(year));
                }
            }
        }
    }
    (t.to_string(), None)
}

fn answers(v: Option<&Value>) -> Result<BTreeMap<MovieId, FormAnswers>, String> {
    let mut out = BTreeMap::new();
    if let Some(map) = as_object(v) {
        for (k, a) in map {
            let code = |f: &str| a.get(f).and_then(Value::as_u64);
            out.insert(
                parse_id(k)?,
                answers_from_codes(code("suggested"), code("seen"), code("liked")),
            );
        }
    }
    Ok(out)
}

pub(super) fn adapt(v: Value) -> Result<RawConversation, String> {
    let id = match v.get("conversationId") {
        Some(Value::String(s)) => s.trim().parse().map_err(|_| format!("bad conversationId `{s}`"))?,
        Some(Value::Number(n)) => n.as_u64().ok_or("bad conversationId")?,
        _ => return Err("missing conversationId".into()),
    };
    let seeker_worker = worker(v.get("initiatorWorkerId"));
    let recommender_worker = worker(v.get("respondentWorkerId"));

    let msgs = v
        .get("messages")
        .and_then(Value::as_array)
        .ok_or("missing messages")?;
    let mut messages = Vec::with_capacity(msgs.len());
    for m in msgs {
        let text = m.get("text").and_then(Value::as_str).ok_or("message without text")?;
        let sender = worker(m.get("senderWorkerId"));
        let role = if sender.is_some() && sender == seeker_worker {
            Role::Seeker
        } else {
            Role::Recommender
        };
        messages.push((role, text.to_string()));
    }

    let mut mentions = BTreeMap::new();
    if let Some(map) = as_object(v.get("movieMentions")) {
        for (k, title) in map {
            let title = title.as_str().unwrap_or_default();
            mentions.insert(parse_id(k)?, split_year(title));
        }
    }

    Ok(RawConversation {
        id,
        messages,
        mentions,
        seeker: answers(v.get("initiatorQuestions"))?,
        recommender: answers(v.get("respondentQuestions"))?,
        seeker_worker,
        recommender_worker,
    })
}
