mod common;

use std::sync::Arc;

use common::{service, SpyExtractor};
use persona_esc::service::{JsonDirStore, SessionOverrides, SessionStore};

#[test]
fn failed_save_changes_nothing() {
    common::atomic_turn_failure().unwrap();
}

#[test]
fn sixteen_concurrent_sessions() {
    common::concurrent_sessions().unwrap();
}

#[test]
fn transcripts_reproduce() {
    common::reproducible_transcripts().unwrap();
}

#[test]
fn extractor_never_sees_supporter_text() {
    let spy = Arc::new(SpyExtractor::default());
    let svc = service(Arc::new(persona_esc::service::MemoryStore::default()), spy.clone());
    let id = svc.create_session(SessionOverrides::default()).unwrap().id;
    let messages = ["i am a pilot .", "i feel sad .", "you am a i ."];
    for msg in messages {
        svc.chat_turn(&id, msg, None, None).unwrap();
    }
    let seen = spy.seen.lock().clone();
    // the extractor runs from the second seeker message, once per turn, on the full seeker prefix
    assert_eq!(seen, ["i am a pilot .", "i feel sad .", "i am a pilot .", "i feel sad .", "you am a i ."]);
    let replies: Vec<String> = svc.get_session(&id).unwrap().dialogue.iter().skip(1).step_by(2).map(|t| t.text.clone()).collect();
    assert_eq!(replies.len(), 3);
    assert!(seen.iter().all(|s| messages.contains(&s.as_str())));
}

#[test]
fn persona_is_monotone_over_a_session() {
    let (svc, _) = common::memory_service();
    let id = svc.create_session(SessionOverrides::default()).unwrap().id;
    for msg in ["hello", "i am a farmer .", "my dog is sick .", "i feel sad about my farmer ."] {
        svc.chat_turn(&id, msg, None, None).unwrap();
    }
    let s = svc.get_session(&id).unwrap();
    let snaps: Vec<_> = s.persona_history.values().collect();
    assert!(snaps.len() >= 2);
    assert!(snaps.windows(2).all(|w| w[0].is_subset_of(w[1])));
    assert_eq!(s.persona, *snaps[snaps.len() - 1]);
    assert!(s.persona_history.keys().all(|&k| k >= 2));
}

#[test]
fn sessions_survive_restart() {
    let dir = tempfile::tempdir().unwrap();
    let extractor = Arc::new(persona_esc::persona::RuleExtractor);
    let (id, before) = {
        let svc = service(Arc::new(JsonDirStore::open(dir.path()).unwrap()), extractor.clone());
        let id = svc.create_session(SessionOverrides::default()).unwrap().id;
        svc.chat_turn(&id, "i am a tailor .", Some(3), None).unwrap();
        (id.clone(), svc.get_session(&id).unwrap())
    };
    let store = Arc::new(JsonDirStore::open(dir.path()).unwrap());
    assert_eq!(store.list().unwrap(), vec![id.clone()]);
    let svc = service(store, extractor);
    assert_eq!(svc.get_session(&id).unwrap(), before);
    let reply = svc.chat_turn(&id, "i feel sad .", Some(4), None).unwrap();
    assert_eq!(reply.turn, 3);
}
