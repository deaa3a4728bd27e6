use std::sync::Arc;
use std::time::Duration;

use convrec_core::config::EngineConfig;
use convrec_core::corpus::{Liked, MovieDb, Vocab};
use convrec_core::engine::*;
use convrec_core::sentiment::{build_examples, train_sentiment, SentimentTrainConfig};
use convrec_core::synth::{template_dialogues, template_movies};
use convrec_core::tensor::AdamConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_config() -> EngineConfig {
    let mut c = EngineConfig::default();
    c.sentiment.model.utterance.embedding_dim = 16;
    c.sentiment.model.utterance.hidden = 16;
    c.sentiment.model.conversation_hidden = 24;
    c.recommender.model.hidden = 8;
    c.dialogue.model.utterance.embedding_dim = 16;
    c.dialogue.model.utterance.hidden = 16;
    c.dialogue.model.conversation_hidden = 24;
    c.dialogue.model.decoder.embedding_dim = 16;
    c.generation.beam_width = 3;
    c.generation.max_len = 8;
    c
}

fn small_bundle(seed: u64) -> EngineBundle {
    let db = template_movies(20);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let convs = template_dialogues(30, &db, 2, &mut rng).unwrap();
    let vocab = Vocab::build(&convs, 1).unwrap();
    EngineBundle::new(small_config(), vocab, db, &mut rng).unwrap()
}

fn engine(seed: u64) -> Engine {
    Engine::new(Arc::new(small_bundle(seed)))
}

const TRANSCRIPT: [&str; 3] = [
    "hi there !",
    "i have seen @100 and i loved it .",
    "what about @105 ? i have never seen @101 .",
];

#[test]
fn fresh_sessions_are_distinct_and_empty() {
    let e = engine(0);
    let a = e.create_session().unwrap();
    let b = e.create_session().unwrap();
    assert_ne!(a, b);
    let d = e.diagnostics(&a).unwrap();
    assert!(d.movies.is_empty());
    assert_eq!(d.turns, 0);
    assert_eq!(d.top_k.len(), 10);
    assert!(d.top_k.windows(2).all(|w| w[0].score >= w[1].score));
    assert_eq!(e.snapshot(&a).unwrap().ratings.observed(), 0);
    assert_eq!(e.diagnostics(&a).unwrap(), d);
}

#[test]
fn top_k_is_capped_by_movie_count() {
    let db = MovieDb::parse_tsv("1\tA\t\n2\tB\t\n3\tC\t\n", std::path::Path::new("m")).unwrap();
    let k = top_k(&[0.2, 0.9, 0.2], &db, 10);
    assert_eq!(k.iter().map(|m| m.id).collect::<Vec<_>>(), [2, 1, 3]);
}

#[test]
fn turns_report_mentioned_movies() {
    let e = engine(1);
    let s = e.create_session().unwrap();
    let first = e.post_utterance(&s, TRANSCRIPT[0]).unwrap();
    assert!(first.diagnostics.movies.is_empty());
    assert_eq!(e.snapshot(&s).unwrap().ratings.observed(), 0);
    let second = e.post_utterance(&s, TRANSCRIPT[1]).unwrap();
    let before_reply = convrec_core::dialogue::mentioned_in(&e.snapshot(&s).unwrap().encoded[..3]);
    assert!(before_reply.contains(&100));
    assert_eq!(second.diagnostics.movies.len(), before_reply.len());
    assert_eq!(second.diagnostics.turns, 2);
    let p = second.diagnostics.movies.iter().find(|m| m.id == 100).unwrap();
    assert!((p.liked.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    assert_eq!(e.diagnostics(&s).unwrap(), second.diagnostics);
    let snap = e.snapshot(&s).unwrap();
    assert_eq!(snap.utterances.len(), 4);
    assert!(snap.predictions.iter().all(|(id, _)| snap.encoded.iter().any(|u| u.spans.iter().any(|sp| sp.movie == *id))));
}

#[test]
fn unknown_movies_and_sessions() {
    let e = engine(2);
    let s = e.create_session().unwrap();
    let r = e.post_utterance(&s, "i loved @999999").unwrap();
    assert_eq!(r.reply.warnings.len(), 1);
    assert!(r.diagnostics.movies.is_empty());
    assert!(matches!(
        e.post_utterance("nope", "hi"),
        Err(convrec_core::Error::UnknownSession(_))
    ));
    assert!(e.diagnostics("nope").is_err());
}

#[test]
fn replaying_a_session_reproduces_it() {
    let e = engine(3);
    let s = e.create_session().unwrap();
    let replies: Vec<String> = TRANSCRIPT.iter().map(|t| e.post_utterance(&s, t).unwrap().reply.text).collect();
    let original = e.snapshot(&s).unwrap();

    let t = e.create_session().unwrap();
    let seeker_lines: Vec<&str> = original
        .utterances
        .iter()
        .step_by(2)
        .map(|u| u.raw_text.as_str())
        .collect();
    let again: Vec<String> = seeker_lines.iter().map(|l| e.post_utterance(&t, l).unwrap().reply.text).collect();
    assert_eq!(replies, again);
    assert_eq!(e.diagnostics(&s).unwrap(), e.diagnostics(&t).unwrap());

    let b = e.bundle();
    let mut state = b.dialogue.initial_state();
    for u in &original.encoded {
        state = b.dialogue.advance(&b.store, &state, u).unwrap();
    }
    for (x, y) in state.iter().zip(&original.state) {
        assert!((x - y).abs() < 1e-6);
    }
}

#[test]
fn interleaved_sessions_match_serial_ones() {
    let e = engine(4);
    let serial = |lines: &[&str]| -> Vec<String> {
        let s = e.create_session().unwrap();
        lines.iter().map(|l| e.post_utterance(&s, l).unwrap().reply.text).collect()
    };
    let other = ["hello , i want a movie tonight .", "i have seen @107 and i hated it ."];
    let a_serial = serial(&TRANSCRIPT[..2]);
    let b_serial = serial(&other);
    let (a, b) = (e.create_session().unwrap(), e.create_session().unwrap());
    let mut a_inter = Vec::new();
    let mut b_inter = Vec::new();
    for i in 0..2 {
        a_inter.push(e.post_utterance(&a, TRANSCRIPT[i]).unwrap().reply.text);
        b_inter.push(e.post_utterance(&b, other[i]).unwrap().reply.text);
    }
    assert_eq!(a_serial, a_inter);
    assert_eq!(b_serial, b_inter);
}

#[test]
fn concurrent_posts_to_one_session_are_serialized() {
    let e = Arc::new(engine(5));
    let s = e.create_session().unwrap();
    let handles: Vec<_> = (0..4)
        .map(|_| {
            let (e, s) = (e.clone(), s.clone());
            std::thread::spawn(move || e.post_utterance(&s, "hi there !").unwrap())
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    let snap = e.snapshot(&s).unwrap();
    assert_eq!(snap.turns, 4);
    assert_eq!(snap.utterances.len(), 8);
}

#[test]
fn idle_sessions_are_evicted() {
    let e = Engine::with_idle_timeout(Arc::new(small_bundle(6)), Duration::from_millis(20));
    let s = e.create_session().unwrap();
    std::thread::sleep(Duration::from_millis(60));
    assert_eq!(e.evict_idle(), 1);
    assert!(e.diagnostics(&s).is_err());
}

#[test]
fn bundle_round_trips_through_a_directory() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = small_bundle(7);
    bundle.save(dir.path()).unwrap();
    let loaded = EngineBundle::load(dir.path()).unwrap();
    assert_eq!(loaded.config, bundle.config);
    assert_eq!(loaded.vocab, bundle.vocab);
    let (a, b) = (Engine::new(Arc::new(bundle)), Engine::new(Arc::new(loaded)));
    let (sa, sb) = (a.create_session().unwrap(), b.create_session().unwrap());
    for line in TRANSCRIPT {
        assert_eq!(a.post_utterance(&sa, line).unwrap(), b.post_utterance(&sb, line).unwrap());
    }

    std::fs::remove_file(dir.path().join(Component::Dialogue.file_name())).unwrap();
    assert!(EngineBundle::load(dir.path()).is_err());
    let (_, missing) = EngineBundle::open(dir.path(), false).unwrap();
    assert_eq!(missing, [Component::Dialogue]);
}

#[test]
fn autocomplete_orders_prefix_matches_first() {
    let e = engine(8);
    let all: Vec<u64> = e.autocomplete("", 3).iter().map(|m| m.id).collect();
    assert_eq!(all, [100, 101, 102]);
    let hits = e.autocomplete("THE RED", 10);
    assert_eq!(hits.iter().map(|m| m.title.as_str()).collect::<Vec<_>>(), ["The red river", "The red garden"]);
    let sub = e.autocomplete("garden", 20);
    assert!(sub.windows(2).all(|w| w[0].id < w[1].id));
    assert!(e.autocomplete("zzz", 5).is_empty());
}

#[test]
fn trained_sentiment_drives_diagnostics() {
    let mut bundle = small_bundle(9);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let convs = template_dialogues(300, &bundle.db, 2, &mut rng).unwrap();
    let examples = build_examples(&convs, &bundle.vocab).unwrap().examples;
    let config = SentimentTrainConfig {
        epochs: 3,
        adam: AdamConfig {
            lr: 0.005,
            ..Default::default()
        },
        ..Default::default()
    };
    let sentiment = bundle.sentiment.clone();
    train_sentiment(&sentiment, &mut bundle.store, &examples, &config, &mut rng).unwrap();
    let e = Engine::new(Arc::new(bundle));
    let s = e.create_session().unwrap();
    let d = e.post_utterance(&s, "i have seen @103 and i loved it .").unwrap().diagnostics;
    let p = &d.movies[0];
    assert_eq!(p.id, 103);
    let liked = (0..3).fold(0, |b, i| if p.liked[i] > p.liked[b] { i } else { b });
    assert_eq!(liked, Liked::Liked.index(), "{:?}", p.liked);
    assert_eq!(e.snapshot(&s).unwrap().ratings.observed_pairs().collect::<Vec<_>>(), [(3, 1.0)]);
}
