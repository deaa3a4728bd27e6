use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Conversation, Liked, Seen};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeenCounts {
    pub not_seen: usize,
    pub seen: usize,
    pub did_not_say: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LikedCounts {
    pub disliked: usize,
    pub liked: usize,
    pub did_not_say: usize,
}

/// Corpus summary. Form distributions count the seeker's answers; a movie
/// mention is one movie with seeker form answers in one conversation.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsReport {
    pub conversations: usize,
    pub utterances: usize,
    /// Distinct worker ids, when the corpus records them.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub users: Option<usize>,
    pub movie_mentions: usize,
    pub seeker_mentioned: usize,
    pub recommender_suggested: usize,
    pub seen: SeenCounts,
    pub liked: LikedCounts,
    pub incomplete_forms: usize,
}

pub fn corpus_stats(conversations: &[Conversation]) -> StatsReport {
    let mut r = StatsReport {
        conversations: conversations.len(),
        ..Default::default()
    };
    let mut workers = BTreeSet::new();
    for c in conversations {
        r.utterances += c.utterances.len();
        workers.extend(c.seeker_worker.iter().chain(&c.recommender_worker).cloned());
        for f in &c.forms {
            if !f.is_complete() {
                r.incomplete_forms += 1;
            }
            let a = f.seeker;
            if a.is_empty() {
                continue;
            }
            r.movie_mentions += 1;
            match a.suggested {
                Some(true) => r.recommender_suggested += 1,
                Some(false) => r.seeker_mentioned += 1,
                None => {}
            }
            match a.seen {
                Some(Seen::NotSeen) => r.seen.not_seen += 1,
                Some(Seen::Seen) => r.seen.seen += 1,
                Some(Seen::DidNotSay) => r.seen.did_not_say += 1,
                None => {}
            }
            match a.liked {
                Some(Liked::Disliked) => r.liked.disliked += 1,
                Some(Liked::Liked) => r.liked.liked += 1,
                Some(Liked::DidNotSay) => r.liked.did_not_say += 1,
                None => {}
            }
        }
    }
    if !workers.is_empty() {
        r.users = Some(workers.len());
    }
    r
}

fn pct(n: usize, total: usize) -> String {
    if total == 0 {
        "-".into()
    } else {
        format!("{:.1}%", 100.0 * n as f64 / total as f64)
    }
}

impl fmt::Display for StatsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = self.movie_mentions;
        writeln!(f, "# conversations        {:>8}", self.conversations)?;
        writeln!(f, "# utterances           {:>8}", self.utterances)?;
        if let Some(u) = self.users {
            writeln!(f, "# users                {u:>8}")?;
        }
        writeln!(f, "# movie mentions       {m:>8}")?;
        writeln!(f, "seeker mentioned       {:>8}", self.seeker_mentioned)?;
        writeln!(f, "recommender suggested  {:>8}", self.recommender_suggested)?;
        writeln!(f, "not seen               {:>8}  {}", self.seen.not_seen, pct(self.seen.not_seen, m))?;
        writeln!(f, "seen                   {:>8}  {}", self.seen.seen, pct(self.seen.seen, m))?;
        writeln!(f, "did not say            {:>8}  {}", self.seen.did_not_say, pct(self.seen.did_not_say, m))?;
        writeln!(f, "disliked               {:>8}  {}", self.liked.disliked, pct(self.liked.disliked, m))?;
        writeln!(f, "liked                  {:>8}  {}", self.liked.liked, pct(self.liked.liked, m))?;
        write!(f, "did not say            {:>8}  {}", self.liked.did_not_say, pct(self.liked.did_not_say, m))
    }
}
