mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use common::rng;
use proptest::prelude::*;
use rand::Rng;
use twinflow::data::{
    filter_clip, gen_synthetic_pairs, pack_dims, run_filter_corpus, ClipMetadata, ClipRecord, CombinedPrompt,
    CorpusOptions, Decision, FilterPolicy, FilterStats, RejectReason, Segment, SyntheticPairSpec,
};
use twinflow::Error;

const GOLDEN: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/golden_clips.jsonl");
const GOLDEN_EXPECTED: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/golden_expected.json");

fn parse_offset(s: &str) -> usize {
    match CombinedPrompt::parse(s) {
        Err(Error::Prompt { offset, .. }) => offset,
        other => panic!("{s:?}: {other:?}"),
    }
}

#[test]
fn prompt_error_offsets() {
    assert_eq!(parse_offset("<S>hi<S>there<E>"), 5);
    let s = "A dog runs. <S>woof";
    assert_eq!(parse_offset(s), 12);
    let s = "<AUDCAP>rain<ENDAUDCAP> trailing";
    assert_eq!(parse_offset(s), 23);
    assert_eq!(parse_offset("just words"), 10);
    assert_eq!(parse_offset("<AUDCAP>a<ENDAUDCAP><AUDCAP>b<ENDAUDCAP>"), 20);
}

#[test]
fn captionless_clip_has_no_speech() {
    let p = CombinedPrompt::parse("<AUDCAP>Rain on a tin roof<ENDAUDCAP>").unwrap();
    assert_eq!(p.speech().count(), 0);
    assert_eq!(p.audio_caption, "Rain on a tin roof");
    let lone = CombinedPrompt { segments: vec![Segment::Speech("hi".into())], audio_caption: "x".into() };
    assert_eq!(lone.render().unwrap(), "<S>hi<E><AUDCAP>x<ENDAUDCAP>");
}

#[test]
fn reserved_tags_refuse_to_render() {
    let p = CombinedPrompt { segments: vec![Segment::Visual("a <E> b".into())], audio_caption: String::new() };
    assert!(matches!(p.render(), Err(Error::PromptEncode(_))));
    let p = CombinedPrompt { segments: vec![], audio_caption: "x<AUDCAP>".into() };
    assert!(matches!(p.render(), Err(Error::PromptEncode(_))));
}

const TAGS: [&str; 4] = ["<S>", "<E>", "<AUDCAP>", "<ENDAUDCAP>"];

fn tag_free(min: usize) -> impl Strategy<Value = String> {
    proptest::string::string_regex(&format!("[ab <>SEAUDCPN/\\n]{{{min},12}}"))
        .unwrap()
        .prop_filter("reserved tag", |s| TAGS.iter().all(|t| !s.contains(t)))
}

fn segments() -> impl Strategy<Value = Vec<Segment>> {
    proptest::collection::vec((any::<bool>(), tag_free(1), tag_free(0)), 0..6).prop_map(|parts| {
        let mut out = Vec::new();
        let mut prev_visual = false;
        for (visual, v, s) in parts {
            if visual && !prev_visual {
                out.push(Segment::Visual(v));
            } else {
                out.push(Segment::Speech(s));
            }
            prev_visual = matches!(out.last(), Some(Segment::Visual(_)));
        }
        out
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn prompts_round_trip(segments in segments(), caption in tag_free(0)) {
        let p = CombinedPrompt { segments, audio_caption: caption };
        let text = p.render().unwrap();
        prop_assert_eq!(CombinedPrompt::parse(&text).unwrap(), p);
    }
}

proptest! {
    #[test]
    fn packing_keeps_area_and_aspect(w in 16u32..4000, h in 16u32..4000, m in prop::sample::select(vec![2u32, 4, 8, 16])) {
        let target = 518_400u64;
        let (pw, ph) = pack_dims(w, h, target, m).unwrap();
        prop_assert!(pw % m == 0 && ph % m == 0);
        let area_gap = (pw as f64 * ph as f64 - target as f64).abs();
        prop_assert!(area_gap <= 2.0 * m as f64 * pw.max(ph) as f64);
        let ratio = |a: u32, b: u32| a.min(b) as f64 / a.max(b) as f64;
        prop_assert!((ratio(pw, ph) - ratio(w, h)).abs() <= m as f64 / pw.min(ph) as f64);
        prop_assert_eq!(pw >= ph, w >= h || pw == ph);
    }
}

#[test]
fn packing_examples() {
    assert_eq!(pack_dims(720, 720, 518_400, 4).unwrap(), (720, 720));
    assert_eq!(pack_dims(1280, 720, 518_400, 4).unwrap(), (960, 540));
    assert_eq!(pack_dims(1080, 1920, 518_400, 4).unwrap(), (540, 960));
    assert!(pack_dims(0, 720, 518_400, 4).is_err());
}

fn clip() -> ClipMetadata {
    ClipMetadata {
        id: "c".into(),
        width: 1280,
        height: 720,
        n_frames: 121,
        fps: 24.0,
        motion_score: 0.5,
        aesthetic_score: 5.0,
        sync_offset: -3,
        sync_confidence: 1.6,
        mean_volume_db: -59.0,
        face_count: 1,
        caption: "<AUDCAP>x<ENDAUDCAP>".into(),
    }
}

#[test]
fn filter_boundaries() {
    let p = FilterPolicy { motion_min: Some(0.1), aesthetic_min: Some(4.0), ..FilterPolicy::default() };
    assert_eq!(filter_clip(&clip(), &p), Decision::Keep);
    let reject = |m: ClipMetadata| match filter_clip(&m, &p) {
        Decision::Reject(r) => r,
        Decision::Keep => panic!("kept {m:?}"),
    };
    assert_eq!(reject(ClipMetadata { sync_confidence: 1.5, ..clip() }), RejectReason::SyncConfidence);
    assert_eq!(reject(ClipMetadata { sync_offset: 4, ..clip() }), RejectReason::SyncOffset);
    assert_eq!(reject(ClipMetadata { sync_offset: -4, ..clip() }), RejectReason::SyncOffset);
    assert_eq!(reject(ClipMetadata { width: 720, height: 720, ..clip() }), RejectReason::Resolution);
    assert_eq!(reject(ClipMetadata { mean_volume_db: -60.01, ..clip() }), RejectReason::MeanVolumeDb);
    assert_eq!(reject(ClipMetadata { motion_score: 0.05, ..clip() }), RejectReason::MotionScore);
    assert_eq!(reject(ClipMetadata { aesthetic_score: 3.0, ..clip() }), RejectReason::AestheticScore);
    assert!(filter_clip(&ClipMetadata { mean_volume_db: -60.0, ..clip() }, &p).is_keep());
}

fn random_clip(r: &mut impl Rng) -> ClipMetadata {
    ClipMetadata {
        width: *[640u32, 720, 1280, 1920].get(r.random_range(0..4)).unwrap(),
        height: *[480u32, 720, 1080].get(r.random_range(0..3)).unwrap(),
        n_frames: if r.random_bool(0.9) { 121 } else { 120 },
        fps: if r.random_bool(0.9) { 24.0 } else { 25.0 },
        sync_offset: r.random_range(-5..=5),
        sync_confidence: r.random_range(0.5..3.0),
        mean_volume_db: r.random_range(-70.0..-10.0),
        motion_score: r.random_range(0.0..1.0),
        aesthetic_score: r.random_range(3.0..7.0),
        ..clip()
    }
}

#[test]
fn raising_confidence_never_admits() {
    let mut r = rng(40);
    let base = FilterPolicy::default();
    for _ in 0..1000 {
        let m = random_clip(&mut r);
        let stricter = FilterPolicy { min_confidence: base.min_confidence + r.random_range(0.0..2.0), ..base.clone() };
        if filter_clip(&m, &stricter).is_keep() {
            assert!(filter_clip(&m, &base).is_keep(), "{m:?}");
        }
        assert_eq!(filter_clip(&m, &base), filter_clip(&m, &base));
    }
}

#[derive(serde::Deserialize)]
struct Expected {
    kept: Vec<String>,
    rejected: BTreeMap<String, String>,
    stats: BTreeMap<String, u64>,
}

fn expected() -> Expected {
    serde_json::from_str(&fs::read_to_string(GOLDEN_EXPECTED).unwrap()).unwrap()
}

fn ids(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<ClipMetadata>(l).unwrap().id)
        .collect()
}

fn stats_by_name(s: &FilterStats) -> BTreeMap<String, u64> {
    s.rejected.iter().map(|(r, n)| (r.name().to_string(), *n)).collect()
}

#[test]
fn golden_corpus_split() {
    let exp = expected();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("kept.jsonl");
    let stats_path = dir.path().join("stats.json");
    let opts = CorpusOptions { skip_bad: false, stats_path: Some(stats_path.clone()) };
    let s = run_filter_corpus(GOLDEN, &FilterPolicy::default(), &out, &opts).unwrap();
    assert_eq!((s.total, s.kept, s.malformed), (12, 4, 0));
    assert_eq!(ids(&out), exp.kept);
    assert_eq!(stats_by_name(&s), exp.stats);
    let on_disk: BTreeMap<String, u64> = serde_json::from_slice(&fs::read(&stats_path).unwrap()).unwrap();
    assert_eq!(on_disk, exp.stats);

    for (i, line) in fs::read_to_string(GOLDEN).unwrap().lines().enumerate() {
        let rec = ClipRecord::parse_line(line, i + 1).unwrap();
        let id = rec.id.clone().unwrap();
        match twinflow::data::filter_record(rec, &FilterPolicy::default()) {
            Decision::Keep => assert!(exp.kept.contains(&id)),
            Decision::Reject(r) => assert_eq!(exp.rejected[&id], r.name(), "{id}"),
        }
    }

    let again = dir.path().join("again.jsonl");
    let s2 = run_filter_corpus(&out, &FilterPolicy::default(), &again, &CorpusOptions::default()).unwrap();
    assert_eq!((s2.total, s2.kept), (4, 4));
    assert_eq!(fs::read(&out).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn concatenated_inputs_add_their_stats() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(GOLDEN).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let (a, b, ab) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("ab"));
    fs::write(&a, lines[..5].join("\n") + "\n").unwrap();
    fs::write(&b, lines[5..].join("\n") + "\n").unwrap();
    fs::write(&ab, text.clone()).unwrap();
    let run = |p: &Path| {
        run_filter_corpus(p, &FilterPolicy::default(), dir.path().join("out"), &CorpusOptions::default()).unwrap()
    };
    let mut sum = run(&a);
    sum.merge(&run(&b));
    assert_eq!(sum, run(&ab));
}

#[test]
fn empty_and_malformed_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let (i, o) = (dir.path().join("in"), dir.path().join("out"));
    fs::write(&i, "").unwrap();
    let s = run_filter_corpus(&i, &FilterPolicy::default(), &o, &CorpusOptions::default()).unwrap();
    assert_eq!(s, FilterStats::default());
    assert_eq!(fs::read(&o).unwrap(), b"");

    let golden = fs::read_to_string(GOLDEN).unwrap();
    fs::write(&i, format!("{golden}{{\"id\": 3\n")).unwrap();
    let o2 = dir.path().join("out2");
    match run_filter_corpus(&i, &FilterPolicy::default(), &o2, &CorpusOptions::default()) {
        Err(Error::Record { line, .. }) => assert_eq!(line, 13),
        other => panic!("{other:?}"),
    }
    assert!(!o2.exists());
    let skip = CorpusOptions { skip_bad: true, stats_path: None };
    let s = run_filter_corpus(&i, &FilterPolicy::default(), &o2, &skip).unwrap();
    assert_eq!((s.total, s.kept, s.malformed), (13, 4, 1));
}

/// Pearson correlation across examples of `audio[j, k]` and `video[i, k]`,
/// averaged over channels.
fn channel_corr(ds: &twinflow::data::Dataset, j: usize, i: usize) -> f64 {
    let c = ds.spec().channels;
    let n = ds.len() as f64;
    let mut total = 0.0;
    for k in 0..c {
        let xs: Vec<f64> = ds.examples().iter().map(|e| e.audio.at(j, k)).collect();
        let ys: Vec<f64> = ds.examples().iter().map(|e| e.video.as_ref().unwrap().at(i, k)).collect();
        let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
        let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sx = xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>().sqrt();
        let sy = ys.iter().map(|y| (y - my).powi(2)).sum::<f64>().sqrt();
        total += cov / (sx * sy);
    }
    total / c as f64
}

fn wide_spec(seed: u64, noise: f64) -> SyntheticPairSpec {
    SyntheticPairSpec { video_len: 16, audio_len: 60, noise_std: noise, ..SyntheticPairSpec::toy(seed) }
}

fn nearest(j: usize, spec: &SyntheticPairSpec) -> usize {
    (j as f64 * spec.video_len as f64 / spec.audio_len as f64).round() as usize
}

#[test]
fn planted_alignment_beats_offset_three() {
    let spec = wide_spec(50, 0.05);
    let ds = gen_synthetic_pairs(&spec, 1000).unwrap();
    let js: Vec<usize> = (0..spec.audio_len).filter(|&j| nearest(j, &spec) + 3 < spec.video_len).collect();
    let at = js.iter().map(|&j| channel_corr(&ds, j, nearest(j, &spec))).sum::<f64>() / js.len() as f64;
    let off = js.iter().map(|&j| channel_corr(&ds, j, nearest(j, &spec) + 3)).sum::<f64>() / js.len() as f64;
    assert!(at > off, "{at} vs {off}");
}

#[test]
fn noiseless_correspondence_argmax() {
    // 16/60 never puts an audio frame exactly halfway between video frames.
    let spec = wide_spec(51, 0.0);
    let ds = gen_synthetic_pairs(&spec, 400).unwrap();
    for j in 0..spec.audio_len {
        let want = nearest(j, &spec);
        if want == 0 || want + 1 >= spec.video_len {
            continue;
        }
        let best = (0..spec.video_len)
            .max_by(|&a, &b| channel_corr(&ds, j, a).abs().total_cmp(&channel_corr(&ds, j, b).abs()))
            .unwrap();
        assert_eq!(best, want, "audio frame {j}");
    }
}

#[test]
fn synthetic_data_is_deterministic_and_round_trips() {
    let spec = SyntheticPairSpec::toy(52);
    let a = gen_synthetic_pairs(&spec, 20).unwrap();
    let b = gen_synthetic_pairs(&spec, 20).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.content_hash(), b.content_hash());
    assert_ne!(a.content_hash(), gen_synthetic_pairs(&SyntheticPairSpec::toy(53), 20).unwrap().content_hash());
    let dir = tempfile::tempdir().unwrap();
    a.save(dir.path().join("x")).unwrap();
    b.save(dir.path().join("y")).unwrap();
    for f in ["manifest.json", "video.tnsr", "audio.tnsr"] {
        assert_eq!(fs::read(dir.path().join("x").join(f)).unwrap(), fs::read(dir.path().join("y").join(f)).unwrap());
    }
    assert_eq!(twinflow::data::Dataset::load(dir.path().join("x")).unwrap(), a);
}
