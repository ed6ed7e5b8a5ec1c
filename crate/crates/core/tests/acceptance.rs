//! One test per acceptance criterion. Each prints a single
//! `PASS <name>: ...` or `FAIL <name>: ...` line before asserting.

mod common;

use std::io::Write as _;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::Rng;

use semvad::eval::{self, LabeledScores};
use semvad::fusion::{self, ScoreSeries, SeriesKind};
use semvad::ingest::{BBox, Detection, FeatureStore, VideoManifest};
use semvad::pipeline::{self, Channel, EvalReport};
use semvad::s3m::{self, TrainConfig};
use semvad::spa;
use semvad::synth::{self, AnomalyKind, GroundTruth, SynthConfig};
use semvad::tracker::{build_tracks, TrackerConfig};

/// Writes to the stdout handle directly, which the test harness does not
/// capture, so the line shows up in a plain `cargo test` run.
fn report(name: &str, ok: bool, detail: String) {
    let line = format!("{} {name}: {detail}\n", if ok { "PASS" } else { "FAIL" });
    std::io::stdout().lock().write_all(line.as_bytes()).unwrap();
    assert!(ok, "{name}: {detail}");
}

#[test]
fn gradient_matches_finite_differences() {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let instances = 24;
    for seed in 0..instances {
        let mut rng = common::rng(1000 + seed);
        let d = rng.random_range(1..=8);
        let o = rng.random_range(1..=6);
        let t = rng.random_range(2..=6);
        let p = common::random_params(d, o, 0.5, &mut rng);
        let f = common::random_seq(t, d, &mut rng);
        worst = worst.max(common::gradient_check(&p, &f, 1e-4));
    }
    let elapsed = start.elapsed();
    report(
        "gradient_fd",
        worst <= 1e-4 && elapsed < Duration::from_secs(10),
        format!("{instances} instances, max rel err {worst:.2e} (<= 1e-4), {elapsed:.2?} (< 10s)"),
    );
}

#[test]
fn micro_auc_matches_pairwise_oracle() {
    let mut worst: f64 = 0.0;
    let mut rng = common::rng(2024);
    let mut checked = 0;
    while checked < 100 {
        let n = rng.random_range(2..=200);
        // coarse grid forces ties
        let levels = rng.random_range(2..=12);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / 4.0).collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.random_bool(0.3) as u8).collect();
        if labels.iter().all(|&l| l == labels[0]) {
            continue;
        }
        // split into up to three videos to exercise concatenation
        let cut1 = n / 3;
        let cut2 = 2 * n / 3;
        let parts: Vec<LabeledScores> = [(0, cut1), (cut1, cut2), (cut2, n)]
            .iter()
            .filter(|(a, b)| a < b)
            .map(|&(a, b)| LabeledScores::new(scores[a..b].to_vec(), labels[a..b].to_vec()).unwrap())
            .collect();
        let got = eval::micro_auc(&parts).unwrap();
        worst = worst.max((got - common::pairwise_auc(&scores, &labels)).abs());
        checked += 1;
    }
    report(
        "auc_oracle",
        worst <= 1e-12,
        format!("100 instances with ties, max abs diff {worst:.2e} (<= 1e-12)"),
    );
}

#[test]
fn smoothing_matches_direct_convolution() {
    let mut worst: f64 = 0.0;
    let mut rng = common::rng(77);
    for _ in 0..100 {
        let n = rng.random_range(1..=300);
        let sigma = rng.random_range(0.3..6.0);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let got = fusion::gaussian_smooth(&ScoreSeries::new("v", SeriesKind::Fused, x.clone()), sigma)
            .unwrap()
            .values;
        let want = common::smooth_direct(&x, sigma);
        for (a, b) in got.iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }
    }
    report(
        "smoothing_oracle",
        worst <= 1e-12,
        format!("100 series, max abs diff {worst:.2e} (<= 1e-12)"),
    );
}

#[test]
fn realizable_system_is_learned() {
    let start = Instant::now();
    let d = 8;
    let clips = common::realizable_clips(d, 64, 8, 1);
    let cfg = TrainConfig {
        state_dim: d,
        epochs: 200,
        lr0: 1e-2,
        lr_decay: 0.97,
        seed: 3,
        ..TrainConfig::default()
    };
    let out = s3m::train(&clips, &cfg).unwrap();
    let mse = s3m::mean_loss(&out.params, &clips).unwrap();
    let elapsed = start.elapsed();
    report(
        "realizable_training",
        mse < 1e-6 && elapsed < Duration::from_secs(30),
        format!("D=O={d}, 200 epochs, lr 1e-2: final MSE {mse:.2e} (< 1e-6), {elapsed:.2?} (< 30s)"),
    );
}

struct EndToEnd {
    report: EvalReport,
    auc_static_caption: f64,
    auc_temporal_dynamics: f64,
    elapsed: Duration,
}

fn semvad_bin() -> &'static str {
    env!("CARGO_BIN_EXE_semvad")
}

fn run_cli(args: &[&str]) {
    let out = Command::new(semvad_bin())
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn semvad");
    assert!(
        out.status.success(),
        "semvad {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

/// synth + run through the binary, then per-kind channel AUCs from the
/// written scores.
fn end_to_end(root: &Path, run_dir: &str) -> EndToEnd {
    let data = root.join("data");
    let out = root.join(run_dir);
    let start = Instant::now();
    run_cli(&["synth", data.to_str().unwrap()]);
    run_cli(&["run", "--data", data.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "7"]);
    let elapsed = start.elapsed();

    let report: EvalReport = semvad::ingest::read_json(&out.join("eval/report.json")).unwrap();
    let truth = GroundTruth::load(&data.join(synth::GROUND_TRUTH_FILE)).unwrap();
    let ds = semvad::ingest::Dataset::load(&data).unwrap();
    let sigma = pipeline::PipelineConfig::default().fusion.sigma;

    let subset_auc = |kind: AnomalyKind, channel: Channel| {
        let mut scores = Vec::new();
        let mut videos = Vec::new();
        for v in &ds.test {
            let windows = truth.windows_for(&v.video_id);
            if windows.is_empty() || windows.iter().any(|w| w.kind != kind) {
                continue;
            }
            let text = std::fs::read_to_string(out.join("score").join(&v.video_id).join("scores.csv")).unwrap();
            scores.push(pipeline::parse_scores_csv(&v.video_id, &text).unwrap());
            videos.push(v);
        }
        assert!(!videos.is_empty(), "no {kind:?}-only test videos");
        pipeline::channel_micro_auc(&scores, &videos, sigma, channel).unwrap()
    };

    EndToEnd {
        auc_static_caption: subset_auc(AnomalyKind::Caption, Channel::Static),
        auc_temporal_dynamics: subset_auc(AnomalyKind::Dynamics, Channel::Temporal),
        report,
        elapsed,
    }
}

// First verified run of the acceptance instance, pinned to +-0.02.
const PINNED_MICRO_AUC: f64 = 0.7683;
const PINNED_STATIC_CAPTION: f64 = 1.0;
const PINNED_TEMPORAL_DYNAMICS: f64 = 0.8969;

#[test]
fn end_to_end_synthetic_detection() {
    let dir = tempfile::tempdir().unwrap();
    let r = end_to_end(dir.path(), "run");
    let ok = r.report.auc >= 0.95
        && r.auc_static_caption >= 0.80
        && r.auc_temporal_dynamics >= 0.80
        && r.elapsed < Duration::from_secs(60);
    report(
        "end_to_end",
        ok,
        format!(
            "micro-AUC {:.4} (>= 0.95), A_s on caption-only {:.4} (>= 0.80), A_t on dynamics-only {:.4} (>= 0.80), {:.2?} (< 60s)",
            r.report.auc, r.auc_static_caption, r.auc_temporal_dynamics, r.elapsed
        ),
    );
}

#[test]
fn end_to_end_values_are_pinned() {
    let dir = tempfile::tempdir().unwrap();
    let r = end_to_end(dir.path(), "run");
    let close = |a: f64, b: f64| (a - b).abs() <= 0.02;
    report(
        "end_to_end_pinned",
        close(r.report.auc, PINNED_MICRO_AUC)
            && close(r.auc_static_caption, PINNED_STATIC_CAPTION)
            && close(r.auc_temporal_dynamics, PINNED_TEMPORAL_DYNAMICS),
        format!(
            "micro-AUC {:.4} vs {PINNED_MICRO_AUC}, A_s {:.4} vs {PINNED_STATIC_CAPTION}, A_t {:.4} vs {PINNED_TEMPORAL_DYNAMICS} (+-0.02)",
            r.report.auc, r.auc_static_caption, r.auc_temporal_dynamics
        ),
    );
}

#[test]
fn two_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    end_to_end(dir.path(), "a");
    end_to_end(dir.path(), "b");
    let mut compared = 0;
    let mut mismatched = Vec::new();
    let mut files = vec!["eval/report.json".to_string(), "eval/roc.csv".to_string()];
    for v in std::fs::read_dir(dir.path().join("a/score")).unwrap() {
        let name = v.unwrap().file_name().into_string().unwrap();
        files.push(format!("score/{name}/scores.csv"));
    }
    files.sort();
    for f in &files {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        compared += 1;
        if a != b {
            mismatched.push(f.clone());
        }
    }
    report(
        "determinism",
        mismatched.is_empty() && compared >= 6,
        format!("{compared} files compared across two runs, mismatched: {mismatched:?}"),
    );
}

// ---- invariant suites, 256 cases each ----

fn runner() -> TestRunner {
    TestRunner::new(Config {
        failure_persistence: None,
        ..Config::with_cases(256)
    })
}

fn arb_manifest() -> impl Strategy<Value = VideoManifest> {
    let det = (0usize..12, 0.0f64..300.0, 0.0f64..300.0, 5.0f64..80.0, 5.0f64..80.0, 0.0f64..=1.0);
    prop::collection::vec(det, 0..40).prop_map(|raw| {
        let mut dets: Vec<Detection> = raw
            .into_iter()
            .enumerate()
            .map(|(i, (frame, x, y, w, h, conf))| Detection {
                frame,
                bbox: BBox::new(x, y, x + w, y + h).unwrap(),
                confidence: conf,
                feature_ref: i,
                answers: Default::default(),
            })
            .collect();
        dets.sort_by_key(|d| d.frame);
        let mut features = FeatureStore::new(1);
        for i in 0..dets.len() {
            features.push(&[i as f32]);
        }
        VideoManifest {
            video_id: "v".into(),
            frame_count: 12,
            image_width: 400,
            image_height: 400,
            detections: dets,
            features,
            labels: None,
        }
    })
}

#[test]
fn invariant_suites() {
    let mut failures = Vec::new();
    let mut check = |name: &str, result: Result<(), String>| {
        if let Err(e) = result {
            failures.push(format!("{name}: {e}"));
        }
    };

    // tracker: every detection in at most one track, one per frame per
    // track, consecutive frames, deterministic
    check(
        "tracker",
        runner()
            .run(&arb_manifest(), |m| {
                let cfg = TrackerConfig::default();
                let tracks = build_tracks(&m, &cfg);
                prop_assert_eq!(&tracks, &build_tracks(&m, &cfg));
                let mut seen = vec![false; m.detections.len()];
                for t in &tracks {
                    for w in t.entries.windows(2) {
                        prop_assert_eq!(w[1].0, w[0].0 + 1);
                    }
                    for &(frame, det) in &t.entries {
                        prop_assert!(!seen[det]);
                        seen[det] = true;
                        prop_assert_eq!(m.detections[det].frame, frame);
                    }
                }
                Ok(())
            })
            .map_err(|e| e.to_string()),
    );

    // SPA: more frequent answers never score higher; scores in (0, 1)
    check(
        "spa",
        runner()
            .run(
                &(prop::collection::btree_map("[a-e]", 0u64..50, 1..5), 0.01f64..3.0),
                |(counts, alpha)| {
                    let dist = spa::AnswerDistribution::from_counts("p", counts.clone(), alpha);
                    let mut answers: Vec<_> = counts.iter().collect();
                    answers.sort_by_key(|(_, c)| **c);
                    for w in answers.windows(2) {
                        let lo = spa::static_object_score(&dist, w[0].0);
                        let hi = spa::static_object_score(&dist, w[1].0);
                        prop_assert!(lo >= hi, "count {} scored {} < count {} scored {}", w[0].1, lo, w[1].1, hi);
                    }
                    let unseen = spa::static_object_score(&dist, "zzz");
                    for (a, _) in &counts {
                        let s = spa::static_object_score(&dist, a);
                        prop_assert!(s > 0.0 && s < 1.0);
                        prop_assert!(unseen >= s);
                    }
                    Ok(())
                },
            )
            .map_err(|e| e.to_string()),
    );

    // fusion: normalized, fused and smoothed series stay in [0, 1];
    // normalization keeps the ranking
    check(
        "fusion",
        runner()
            .run(
                &(
                    prop::collection::vec(-5.0f64..5.0, 1..80),
                    prop::collection::vec(0.0f64..9.0, 1..80),
                    0.0f64..=1.0,
                    0.2f64..5.0,
                ),
                |(a, b, lambda, sigma)| {
                    let n = a.len().min(b.len());
                    let sa = ScoreSeries::new("v", SeriesKind::Static, a[..n].to_vec());
                    let sb = ScoreSeries::new("v", SeriesKind::Temporal, b[..n].to_vec());
                    let cfg = fusion::FusionConfig { lambda, sigma };
                    let out = fusion::combine(&sa, &sb, &cfg).unwrap();
                    for s in [&out.stat, &out.temporal, &out.fused, &out.smoothed] {
                        prop_assert!(s.values.iter().all(|v| (0.0..=1.0).contains(v)));
                    }
                    for i in 0..n {
                        for j in 0..n {
                            if sa.values[i] < sa.values[j] {
                                prop_assert!(out.stat.values[i] < out.stat.values[j]);
                            }
                        }
                    }
                    Ok(())
                },
            )
            .map_err(|e| e.to_string()),
    );

    // AUC: invariant under strictly increasing transforms
    check(
        "auc",
        runner()
            .run(
                &prop::collection::vec((0u8..20, 0u8..2), 2..150),
                |pairs| {
                    let scores: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
                    let labels: Vec<u8> = pairs.iter().map(|p| p.1).collect();
                    prop_assume!(labels.contains(&0) && labels.contains(&1));
                    let base = eval::auc(&LabeledScores::new(scores.clone(), labels.clone()).unwrap()).unwrap();
                    let mapped: Vec<f64> = scores.iter().map(|s| (0.3 * s).exp() * 2.0 - 7.0).collect();
                    let moved = eval::auc(&LabeledScores::new(mapped, labels).unwrap()).unwrap();
                    prop_assert!((base - moved).abs() <= 1e-12);
                    Ok(())
                },
            )
            .map_err(|e| e.to_string()),
    );

    let ok = failures.is_empty();
    report(
        "invariant_suites",
        ok,
        if ok {
            "tracker, spa, fusion and auc properties held on 256 cases each".into()
        } else {
            failures.join("; ")
        },
    );
}

#[test]
fn acceptance_instance_matches_the_configured_constants() {
    let cfg = SynthConfig::acceptance();
    assert_eq!((cfg.seed, cfg.n_train, cfg.n_test), (7, 8, 4));
    assert_eq!((cfg.frames_per_video, cfg.objects_per_video, cfg.feature_dim), (200, 3, 16));
    assert_eq!(cfg.noise_std, 0.05);
    assert_eq!(cfg.windows.len(), 4);
    assert!(cfg.windows.iter().all(|w| w.end - w.start == 30));
}
