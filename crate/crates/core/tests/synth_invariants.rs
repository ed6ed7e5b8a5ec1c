use nalgebra::{DMatrix, DVector};
use semvad::pipeline::{self, ClipConfig};
use semvad::s3m::{self, S3mParams};
use semvad::synth::{self, AnomalyKind, AnomalyWindow, SynthConfig};
use semvad::tracker::{build_tracks, TrackerConfig};

/// Parameters that predict `M f_t` exactly: identity encoder, no state
/// carry-over, decoder `M`.
fn true_model(m: &DMatrix<f64>) -> S3mParams {
    let d = m.nrows();
    S3mParams {
        enc_w: DMatrix::identity(d, d),
        enc_b: DVector::zeros(d),
        transition: DMatrix::zeros(d, d),
        dec_w: m.clone(),
        dec_b: DVector::zeros(d),
    }
}

#[test]
fn true_dynamics_score_zero_outside_windows_without_noise() {
    let cfg = SynthConfig {
        n_train: 0,
        n_test: 2,
        frames_per_video: 80,
        noise_std: 0.0,
        spectral_radius: 0.9,
        windows: vec![
            AnomalyWindow { test_video: 0, object: 1, start: 20, end: 40, kind: AnomalyKind::Dynamics },
            AnomalyWindow { test_video: 1, object: 2, start: 50, end: 70, kind: AnomalyKind::Both },
        ],
        ..SynthConfig::acceptance()
    };
    let gen = synth::generate(&cfg).unwrap();
    let params = true_model(&gen.truth.transition_matrix());
    let clip = ClipConfig::default();
    for video in &gen.dataset.test {
        let tracks = build_tracks(video, &TrackerConfig::default());
        assert_eq!(tracks.len(), 3);
        let series = pipeline::temporal_series(video, &tracks, &params, &clip).unwrap();
        let labels = video.labels.as_ref().unwrap();
        let scale = series.values.iter().cloned().fold(0.0, f64::max);
        assert!(scale > 0.0, "dynamics windows must register");
        for (frame, (&s, &l)) in series.values.iter().zip(labels).enumerate() {
            if l == 0 {
                // features are stored as f32, so the residual is rounding only
                assert!(s <= 1e-12, "{} frame {frame}: {s}", video.video_id);
            }
        }
        // the switched matrix leaves error on every window frame
        let w = gen.truth.windows_for(&video.video_id)[0];
        for frame in w.start..w.end {
            assert!(series.values[frame] > 0.0, "frame {frame}");
        }
        let out_max = series
            .values
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l == 0)
            .map(|(s, _)| *s)
            .fold(0.0, f64::max);
        // noise-free features decay, so compare against the rounding floor
        assert!(series.values[w.start] > 1e6 * out_max);
    }
}

#[test]
fn clip_scores_of_the_true_model_are_rounding_level() {
    let cfg = SynthConfig { noise_std: 0.0, n_test: 1, windows: vec![], ..SynthConfig::acceptance() };
    let gen = synth::generate(&cfg).unwrap();
    let params = true_model(&gen.truth.transition_matrix());
    let v = &gen.dataset.train[0];
    let tracks = build_tracks(v, &TrackerConfig::default());
    for c in pipeline::video_clips(v, &tracks, &ClipConfig::default()) {
        assert!(s3m::loss(&params, &c.features).unwrap() <= 1e-12);
    }
}

#[test]
fn labels_are_the_window_indicator() {
    let gen = synth::generate(&SynthConfig::acceptance()).unwrap();
    for (i, v) in gen.dataset.test.iter().enumerate() {
        let labels = v.labels.as_ref().unwrap();
        for (f, &l) in labels.iter().enumerate() {
            let inside = gen.truth.windows.iter().any(|w| w.test_video == i && w.contains(f));
            assert_eq!(l == 1, inside);
        }
    }
    assert!(gen.dataset.train.iter().all(|v| v.labels.is_none()));
}

#[test]
fn tracks_cover_each_object_for_the_whole_video() {
    let gen = synth::generate(&SynthConfig::acceptance()).unwrap();
    for v in gen.dataset.videos() {
        let tracks = build_tracks(v, &TrackerConfig::default());
        assert_eq!(tracks.len(), 3, "{}", v.video_id);
        assert!(tracks.iter().all(|t| t.len() == v.frame_count));
    }
}
