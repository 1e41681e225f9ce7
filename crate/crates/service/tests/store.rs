mod common;

use squat_core::session::{RepGrader, SessionConfig, SessionEvent};
use squat_service::archive::{ClipArchive, ClipMeta};
use squat_service::record::{SessionEntry, SessionRecord};
use squat_service::store::{PersistError, Store};

use common::{good_clip, FakeGrader};

fn archive(session: &str, id: &str, rep: usize) -> ClipArchive {
    let clip = good_clip(id);
    let graded = FakeGrader::default().grade(&clip).unwrap();
    ClipArchive {
        meta: ClipMeta::new(id, session, rep, clip.frames.len(), 30.0).with_grade(graded, None),
        features: clip.frames,
        joints: None,
    }
}

#[test]
fn sessions_and_clips_persist_and_list() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    let mut writer = store.create_session(&SessionRecord::new("s1", SessionConfig::default())).unwrap();
    writer.append(SessionEntry::Event { event: SessionEvent::SetStarted { t_ms: 5 } }).unwrap();
    for rep in [2, 1, 3] {
        store.persist_clip(&archive("s1", &format!("s1-rep{rep}"), rep)).unwrap();
    }

    let loaded = store.load_session("s1").unwrap();
    assert_eq!(&loaded, writer.record());
    let reps = store.list_reps("s1").unwrap();
    assert_eq!(reps.iter().map(|r| r.rep).collect::<Vec<_>>(), vec![1, 2, 3]);
    assert!(reps.iter().all(|r| r.score.is_some() && !r.data_error));
    assert_eq!(store.load_clip("s1", "s1-rep2").unwrap(), archive("s1", "s1-rep2", 2));

    let sessions = store.list_sessions().unwrap();
    assert_eq!(sessions.len(), 1);
    assert_eq!(sessions[0].started_ms, Some(5));
    assert!(!sessions[0].complete);
}

#[test]
fn duplicates_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    let record = SessionRecord::new("dup", SessionConfig::default());
    store.persist_session(&record).unwrap();
    assert!(matches!(store.persist_session(&record), Err(PersistError::DuplicateId { kind: "session", .. })));
    let a = archive("dup", "c1", 1);
    store.persist_clip(&a).unwrap();
    assert!(matches!(store.persist_clip(&a), Err(PersistError::DuplicateId { kind: "clip", .. })));
}

#[test]
fn invalid_archives_are_not_stored() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    let mut a = archive("s", "c1", 1);
    a.features.pop();
    assert!(matches!(store.persist_clip(&a), Err(PersistError::Invalid(_))));
    assert!(store.load_clip("s", "c1").unwrap_err().is_not_found());
}

#[test]
fn missing_and_malformed_ids() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    assert!(store.load_session("nope").unwrap_err().is_not_found());
    assert!(store.list_reps("nope").unwrap_err().is_not_found());
    for bad in ["../etc", "a/b", ".hidden", ""] {
        assert!(matches!(store.load_session(bad), Err(PersistError::InvalidId(_))), "{bad:?}");
    }
}

#[test]
fn session_log_survives_reopen_line_by_line() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    let mut writer = store.create_session(&SessionRecord::new("s", SessionConfig::default())).unwrap();
    writer.append(SessionEntry::Event { event: SessionEvent::SetStarted { t_ms: 0 } }).unwrap();
    writer.append(SessionEntry::Event { event: SessionEvent::RepStarted { t_ms: 10 } }).unwrap();
    // Readable while still open.
    assert_eq!(Store::open(dir.path()).unwrap().load_session("s").unwrap().events().len(), 2);
    writer.append(SessionEntry::Event { event: SessionEvent::SetCompleted { t_ms: 20, count: 0 } }).unwrap();
    assert!(writer.is_complete());
    assert!(matches!(
        writer.append(SessionEntry::Event { event: SessionEvent::RepStarted { t_ms: 30 } }),
        Err(PersistError::Closed(_))
    ));
    assert!(store.load_session("s").unwrap().is_complete());
}
