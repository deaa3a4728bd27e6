//! Synthetic data with known ground truth: template dialogues whose form
//! labels are fixed by the wording.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde_json::{json, Map, Value};

use crate::corpus::{parse_corpus_str, Conversation, Liked, MovieDb, MovieEntity, Seen};
use crate::error::Result;

const ADJECTIVES: [&str; 10] = [
    "red", "silent", "last", "hidden", "broken", "golden", "frozen", "wild", "dark", "lucky",
];
const NOUNS: [&str; 6] = ["river", "garden", "machine", "island", "promise", "tower"];

/// Titles `"The <adjective> <noun>"`; ids start at 100.
pub fn template_movies(n: usize) -> MovieDb {
    let movies = (0..n)
        .map(|i| MovieEntity {
            id: 100 + i as u64,
            title: format!(
                "The {} {}",
                ADJECTIVES[i % ADJECTIVES.len()],
                NOUNS[(i / ADJECTIVES.len()) % NOUNS.len()]
            ),
            year: Some(1980 + (i % 40) as i32),
        })
        .collect();
    MovieDb::new(movies).expect("generated titles are distinct")
}

const GREETINGS: [&str; 3] = ["hi there !", "hello , i want a movie tonight .", "hey ! any ideas ?"];
const REPLIES: [&str; 3] = ["hello ! what do you like ?", "hi ! sure .", "good evening !"];
const SUGGEST: [&str; 2] = ["have you seen @{} ?", "you might like @{} ."];
const ACK: [&str; 2] = ["ok , good to know .", "nice ."];
const BYE: [&str; 2] = ["thanks , bye !", "great , thank you ."];

fn seen_phrase(s: Seen) -> &'static str {
    match s {
        Seen::Seen => "i have seen",
        Seen::NotSeen => "i have never seen",
        Seen::DidNotSay => "what about",
    }
}

fn liked_phrase(l: Liked) -> &'static str {
    match l {
        Liked::Liked => " and i loved it",
        Liked::Disliked => " and i hated it",
        Liked::DidNotSay => "",
    }
}

fn answers(suggested: bool, seen: Seen, liked: Liked) -> Value {
    json!({"suggested": suggested as u8, "seen": seen as u8, "liked": liked as u8})
}

/// Dialogues mentioning `movies_per_dialogue` distinct movies each. The
/// seeker's seen/liked answers are uniformly random and stated with fixed
/// phrases; "suggested" is whether the recommender brought the movie up.
/// The recommender's answers are (suggested, seen, liked) when it
/// suggested the movie and (not suggested, did not say, did not say)
/// otherwise.
pub fn template_dialogues_jsonl<R: Rng + ?Sized>(
    n: usize,
    db: &MovieDb,
    movies_per_dialogue: usize,
    rng: &mut R,
) -> String {
    let ids: Vec<u64> = db.iter().map(|m| m.id).collect();
    let seens = [Seen::NotSeen, Seen::Seen, Seen::DidNotSay];
    let likeds = [Liked::Disliked, Liked::Liked, Liked::DidNotSay];
    let mut out = String::new();
    for c in 0..n {
        let mut messages = vec![
            json!({"senderRole": "seeker", "text": GREETINGS.choose(rng).unwrap()}),
            json!({"senderRole": "recommender", "text": REPLIES.choose(rng).unwrap()}),
        ];
        let mut mentions = Map::new();
        let mut seeker_q = Map::new();
        let mut rec_q = Map::new();
        for &m in ids.choose_multiple(rng, movies_per_dialogue) {
            let suggested = rng.random_bool(0.5);
            let seen = *seens.choose(rng).unwrap();
            let liked = *likeds.choose(rng).unwrap();
            let statement = format!("{} @{m}{} .", seen_phrase(seen), liked_phrase(liked));
            if suggested {
                let s = SUGGEST.choose(rng).unwrap().replace("{}", &m.to_string());
                messages.push(json!({"senderRole": "recommender", "text": s}));
                messages.push(json!({"senderRole": "seeker", "text": statement}));
            } else {
                messages.push(json!({"senderRole": "seeker", "text": statement}));
                messages.push(json!({"senderRole": "recommender", "text": ACK.choose(rng).unwrap()}));
            }
            let entity = db.get(m).expect("id from db");
            mentions.insert(m.to_string(), json!({"title": entity.title, "year": entity.year}));
            seeker_q.insert(m.to_string(), answers(suggested, seen, liked));
            rec_q.insert(
                m.to_string(),
                if suggested {
                    answers(true, Seen::Seen, Liked::Liked)
                } else {
                    answers(false, Seen::DidNotSay, Liked::DidNotSay)
                },
            );
        }
        messages.push(json!({"senderRole": "seeker", "text": BYE.choose(rng).unwrap()}));
        let conv = json!({
            "conversationId": 1 + c as u64,
            "messages": messages,
            "movieMentions": mentions,
            "seekerQuestions": seeker_q,
            "recommenderQuestions": rec_q,
        });
        out.push_str(&conv.to_string());
        out.push('\n');
    }
    out
}

pub fn template_dialogues<R: Rng + ?Sized>(
    n: usize,
    db: &MovieDb,
    movies_per_dialogue: usize,
    rng: &mut R,
) -> Result<Vec<Conversation>> {
    let text = template_dialogues_jsonl(n, db, movies_per_dialogue, rng);
    Ok(parse_corpus_str(&text, db).conversations)
}
