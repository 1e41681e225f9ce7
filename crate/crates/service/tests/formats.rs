mod common;

use std::io::Cursor;

use proptest::prelude::*;
use squat_core::kinematics::{JointFrame, Point2};
use squat_core::session::{DataErrorReason, SessionConfig, SessionEvent};
use squat_service::api::{ApiBody, ApiMessage, Status};
use squat_service::archive::{read_features, write_features, ClipArchive, ClipMeta, RepOutcome};
use squat_service::corpus::{decode_corpus, encode_corpus};
use squat_service::formats::FormatError;
use squat_service::joints::{decode_joint_stream, encode_joint_stream, JointStreamHeader};
use squat_service::record::{SessionEntry, SessionRecord};
use squat_core::preprocess::{BaseChannel, OutlierFlag};
use squat_core::session::RepGrader;

use common::{clips, good_clip, scripted_set, FakeGrader};

fn frame(t: i64, x: f64) -> JointFrame {
    let p = |dx: f64, y: f64| Point2::new(x + dx, y);
    JointFrame {
        timestamp_ms: t,
        pelvis: p(0.0, 300.0),
        spine_navel: p(2.0, 250.0),
        knee: p(40.0, 380.0),
        ankle: p(10.0, 460.0),
        forefoot: p(45.0, 470.0),
        bar: p(5.0, 150.0),
    }
}

fn joint_text(header: &str, records: &[&str]) -> Vec<u8> {
    let mut s = String::from(header);
    for r in records {
        s.push('\n');
        s.push_str(r);
    }
    s.push('\n');
    s.into_bytes()
}

const RECORD_0: &str = r#"{"t":0,"pelvis":[1,2],"spine_navel":[1,1],"knee":[3,4],"ankle":[3,6],"forefoot":[5,6],"bar":[1,0]}"#;
const RECORD_33: &str = r#"{"t":33,"pelvis":[1,2],"spine_navel":[1,1],"knee":[3,4],"ankle":[3,6],"forefoot":[5,6],"bar":[1,0]}"#;

#[test]
fn joint_stream_round_trip_is_exact() {
    let frames = scripted_set(2);
    let header = JointStreamHeader::new(30.0);
    let bytes = encode_joint_stream(&header, &frames).unwrap();
    let (h, back) = decode_joint_stream(&bytes).unwrap();
    assert_eq!(h, header);
    assert_eq!(back, frames);
}

#[test]
fn joint_stream_rejects_unknown_major_version() {
    let bytes = joint_text(r#"{"format":"squat-joints","version":"2.0","frame_rate":30,"coords":"px"}"#, &[RECORD_0]);
    assert!(matches!(
        decode_joint_stream(&bytes),
        Err(FormatError::UnsupportedVersion { .. })
    ));
}

#[test]
fn joint_stream_accepts_minor_versions_and_unknown_fields() {
    let bytes = joint_text(
        r#"{"format":"squat-joints","version":"1.4","frame_rate":30,"coords":"px","camera":"side"}"#,
        &[
            r#"{"t":0,"pelvis":[1,2],"spine_navel":[1,1],"knee":[3,4],"ankle":[3,6],"forefoot":[5,6],"bar":[1,0],"confidence":0.9}"#,
            "",
            RECORD_33,
        ],
    );
    let (_, frames) = decode_joint_stream(&bytes).unwrap();
    assert_eq!(frames.len(), 2);
    assert_eq!(frames[1].timestamp_ms, 33);
    assert_eq!(frames[0].knee, Point2::new(3.0, 4.0));
}

#[test]
fn joint_stream_rejects_wrong_format_and_missing_header() {
    let bytes = joint_text(r#"{"format":"squat-corpus","version":"1.0","frame_rate":30,"coords":"px"}"#, &[]);
    assert!(matches!(decode_joint_stream(&bytes), Err(FormatError::WrongFormat { .. })));
    assert!(matches!(decode_joint_stream(b"\n\n"), Err(FormatError::MissingHeader)));
}

#[test]
fn joint_stream_rejects_non_increasing_timestamps() {
    let header = r#"{"format":"squat-joints","version":"1.0","frame_rate":30,"coords":"px"}"#;
    let bytes = joint_text(header, &[RECORD_33, RECORD_0]);
    assert!(matches!(
        decode_joint_stream(&bytes),
        Err(FormatError::NonIncreasing { line: 3, previous: 33, got: 0 })
    ));
    let bytes = joint_text(header, &[RECORD_33, RECORD_33]);
    assert!(matches!(decode_joint_stream(&bytes), Err(FormatError::NonIncreasing { .. })));
    let frames = [frame(10, 0.0), frame(10, 0.0)];
    assert!(matches!(
        encode_joint_stream(&JointStreamHeader::new(30.0), &frames),
        Err(FormatError::NonIncreasing { .. })
    ));
}

#[test]
fn joint_writer_rejects_non_finite_coordinates() {
    let mut bad = frame(0, 0.0);
    bad.knee.x = f64::NAN;
    assert!(matches!(
        encode_joint_stream(&JointStreamHeader::new(30.0), &[bad]),
        Err(FormatError::NonFinite { .. })
    ));
}

#[test]
fn corpus_round_trip_and_count_check() {
    let raw: Vec<_> = clips(7).into_iter().map(|c| c.clip).collect();
    let mut bytes = Vec::new();
    encode_corpus(&raw, Some(3), &mut bytes).unwrap();
    let (header, back) = decode_corpus(Cursor::new(&bytes)).unwrap();
    assert_eq!(header.clips, 7);
    assert_eq!(header.seed, Some(3));
    assert_eq!(back, raw);

    let text = String::from_utf8(bytes).unwrap();
    let truncated: String = text.lines().take(5).map(|l| format!("{l}\n")).collect();
    assert!(matches!(
        decode_corpus(Cursor::new(truncated)),
        Err(FormatError::Count { expected: 7, found: 4, .. })
    ));
    let future = text.replacen("\"version\":\"1.0\"", "\"version\":\"3.1\"", 1);
    assert!(matches!(
        decode_corpus(Cursor::new(future)),
        Err(FormatError::UnsupportedVersion { .. })
    ));
}

fn graded_archive(id: &str) -> ClipArchive {
    let clip = good_clip(id);
    let graded = FakeGrader::default().grade(&clip).unwrap();
    let meta = ClipMeta::new(id, "s1", 1, clip.frames.len(), 30.0).with_grade(graded, Some(12.5));
    let joints = (0..clip.frames.len()).map(|i| frame(i as i64 * 33, 0.0)).collect();
    ClipArchive {
        meta,
        features: clip.frames,
        joints: Some(joints),
    }
}

#[test]
fn clip_archive_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let archive = graded_archive("rep-1");
    archive.write_to(dir.path()).unwrap();
    assert_eq!(ClipArchive::read_from(dir.path()).unwrap(), archive);

    let mut ungraded = archive.clone();
    ungraded.joints = None;
    ungraded.meta.outcome = RepOutcome::DataError {
        error: DataErrorReason::MultipleOutliers {
            flags: vec![
                OutlierFlag { frame: 3, channel: BaseChannel::Df },
                OutlierFlag { frame: 5, channel: BaseChannel::Bs },
            ],
        },
    };
    let dir = tempfile::tempdir().unwrap();
    ungraded.write_to(dir.path()).unwrap();
    assert_eq!(ClipArchive::read_from(dir.path()).unwrap(), ungraded);
}

#[test]
fn clip_archive_frame_count_mismatch_is_rejected() {
    let mut archive = graded_archive("rep-2");
    archive.meta.frame_count += 1;
    assert!(matches!(archive.validate(), Err(FormatError::Count { .. })));
    let mut archive = graded_archive("rep-3");
    archive.joints.as_mut().unwrap().pop();
    assert!(matches!(archive.validate(), Err(FormatError::Count { .. })));
}

#[test]
fn feature_table_header_is_fixed() {
    let frames = good_clip("c").frames;
    let mut bytes = Vec::new();
    write_features(&frames, &mut bytes).unwrap();
    let text = String::from_utf8(bytes).unwrap();
    assert!(text.starts_with("timestamp_ms,bt,df,torso,khr,bs\n"));
    assert_eq!(read_features(text.as_bytes()).unwrap(), frames);
    let swapped = text.replacen("bt,df", "df,bt", 1);
    assert!(matches!(read_features(swapped.as_bytes()), Err(FormatError::BadHeader(_))));
}

fn ten_rep_record() -> SessionRecord {
    let grader = FakeGrader::failing(&[4]);
    let mut record = SessionRecord::new("s-10", SessionConfig::default());
    record.append(SessionEntry::Event { event: SessionEvent::SetStarted { t_ms: 0 } }).unwrap();
    let mut count = 0;
    for (i, c) in clips(10).into_iter().enumerate() {
        let t = 1000 * (i as i64 + 1);
        record.append(SessionEntry::Event { event: SessionEvent::RepStarted { t_ms: t } }).unwrap();
        match grader.grade(&c.clip) {
            Ok(graded) => {
                count += 1;
                record
                    .append(SessionEntry::Event {
                        event: SessionEvent::RepCompleted {
                            t_ms: t + 500,
                            index: count,
                            clip: c.clip,
                        },
                    })
                    .unwrap();
                record.append(SessionEntry::Graded { graded }).unwrap();
            }
            Err(message) => record
                .append(SessionEntry::Event {
                    event: SessionEvent::DataError {
                        t_ms: t + 500,
                        clip: c.clip,
                        error: DataErrorReason::Pipeline { message },
                    },
                })
                .unwrap(),
        }
    }
    record
        .append(SessionEntry::Event { event: SessionEvent::SetCompleted { t_ms: 20_000, count } })
        .unwrap();
    record
}

#[test]
fn session_record_round_trip() {
    let record = ten_rep_record();
    assert!(record.is_complete());
    assert_eq!(record.squat_count(), 9);
    assert_eq!(record.data_errors(), 1);
    let mut bytes = Vec::new();
    record.encode(&mut bytes).unwrap();
    let back = SessionRecord::decode(Cursor::new(&bytes)).unwrap();
    assert_eq!(back, record);
    assert_eq!(back.entries(), record.entries());
}

#[test]
fn completed_record_refuses_appends() {
    let mut record = ten_rep_record();
    assert!(record
        .append(SessionEntry::Event { event: SessionEvent::SetStarted { t_ms: 30_000 } })
        .is_err());
}

#[test]
fn session_record_rejects_unknown_major_version() {
    let mut bytes = Vec::new();
    ten_rep_record().encode(&mut bytes).unwrap();
    let text = String::from_utf8(bytes).unwrap().replacen("\"version\":\"1.0\"", "\"version\":\"2.0\"", 1);
    assert!(SessionRecord::decode(Cursor::new(text)).is_err());
}

#[test]
fn api_messages_round_trip() {
    let graded = FakeGrader::default().grade(&good_clip("c")).unwrap();
    let bodies = vec![
        ApiBody::Frame { frame: frame(5, 1.5) },
        ApiBody::FeaturePoint { bt: 1.0, df: 2.0, torso: 3.0, khr: 0.5, bs: 4.0 },
        ApiBody::StatusChange { status: Status::Recording, squat_count: 2 },
        ApiBody::RepStarted { rep: 3 },
        ApiBody::rep_completed(3, graded, 42.0),
        ApiBody::DataError {
            rep: 4,
            clip_id: "x".into(),
            frames: 30,
            error: DataErrorReason::TooShort,
        },
        ApiBody::SetCompleted { count: 10 },
        ApiBody::Error { code: "not_found".into(), message: "m".into() },
    ];
    for (i, body) in bodies.into_iter().enumerate() {
        let msg = ApiMessage {
            seq: i as u64 + 1,
            session_id: "s".into(),
            t_ms: 100,
            dropped: i as u64 % 2,
            body,
        };
        let json = msg.to_json();
        let value: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(value["kind"], msg.body.kind());
        assert_eq!(value.get("dropped").is_some(), msg.dropped > 0);
        assert_eq!(serde_json::from_str::<ApiMessage>(&json).unwrap(), msg);
    }
}

#[test]
fn rep_completed_carries_score_and_deductions() {
    let graded = FakeGrader::default().grade(&good_clip("c")).unwrap();
    let ApiBody::RepCompleted { score, deductions, issues, .. } = ApiBody::rep_completed(1, graded.clone(), 1.0) else {
        panic!("wrong kind");
    };
    assert_eq!(score, graded.score);
    assert_eq!(issues, graded.diagnosis.issues);
    let lost: f64 = deductions.iter().map(|d| d.points).sum();
    assert!((100.0 - lost - score).abs() < 1e-9);
}

fn arb_frames() -> impl Strategy<Value = Vec<JointFrame>> {
    prop::collection::vec((1i64..100, -500.0f64..500.0), 0..40).prop_map(|steps| {
        let mut t = -50;
        steps
            .into_iter()
            .map(|(dt, x)| {
                t += dt;
                frame(t, x)
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn any_increasing_stream_round_trips(frames in arb_frames(), rate in 1.0f64..240.0) {
        let header = JointStreamHeader::new(rate);
        let bytes = encode_joint_stream(&header, &frames).unwrap();
        let (h, back) = decode_joint_stream(&bytes).unwrap();
        prop_assert_eq!(h, header);
        prop_assert_eq!(back, frames);
    }

    #[test]
    fn any_feature_table_round_trips(values in prop::collection::vec((-1e6f64..1e6, 0.0f64..180.0), 1..30)) {
        let frames: Vec<_> = values
            .iter()
            .enumerate()
            .map(|(i, &(a, b))| squat_core::kinematics::FeatureFrame {
                timestamp_ms: i as i64 * 33,
                bt: b,
                df: a / 1e4,
                torso: b / 3.0,
                khr: a,
                bs: a.abs().sqrt(),
            })
            .collect();
        let mut bytes = Vec::new();
        write_features(&frames, &mut bytes).unwrap();
        prop_assert_eq!(read_features(bytes.as_slice()).unwrap(), frames);
    }
}

#[test]
fn joint_fixture_conforms() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/fixtures/joints-v1.jsonl");
    let (header, frames) = squat_service::joints::read_joint_stream(&path).unwrap();
    assert_eq!(header.version, "1.2");
    assert_eq!(header.frame_rate, 30.0);
    assert_eq!(frames.len(), 3);
    assert_eq!(frames.iter().map(|f| f.timestamp_ms).collect::<Vec<_>>(), [0, 33, 67]);
    assert_eq!(frames[1].pelvis.x, 290.5);
    assert_eq!(frames[2].bar.y, 174.0);
}
