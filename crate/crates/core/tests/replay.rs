mod support;

use std::sync::Arc;

use hnlc_core::pipeline::{compress, decompress, PipelineConfig};
use hnlc_core::predictor::{
    Fixture, FixtureRecorder, ModelParams, Predictor, PredictorSpec, ReplayPredictor, SyntheticLogitPredictor,
    SyntheticParams,
};
use hnlc_core::Error;
use support::*;

fn config(workers: usize) -> PipelineConfig {
    PipelineConfig {
        segment_tokens: 1024,
        graft_tokens: 64,
        window: 1024,
        block_bytes: 8192,
        workers,
        ..Default::default()
    }
}

/// Compresses with a recording synthetic model; returns archive and fixture.
fn record(data: &[u8], cfg: &PipelineConfig) -> (Vec<u8>, Fixture) {
    let recorder = Arc::new(FixtureRecorder::new());
    let params = ModelParams { recorder: Some(recorder.clone()), ..cfg.model_params() };
    let p = SyntheticLogitPredictor::new(SyntheticParams { seed: 11, on_grid: false }, &params).unwrap();
    let archive = compress(data, cfg, &p).unwrap().to_bytes();
    (archive, recorder.to_fixture(p.identity(), cfg.grid_k))
}

#[test]
fn replay_reproduces_archive_without_the_model() {
    let cfg = config(1);
    let text = synthetic_text(40_000, 21);
    let (archive, fixture) = record(&text, &cfg);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.hnlf");
    fixture.save(&path).unwrap();

    let replay = PredictorSpec::Replay(path).build(&cfg.model_params()).unwrap();
    let again = compress(&text, &cfg, replay.as_ref()).unwrap().to_bytes();
    assert_eq!(again, archive);
    assert_eq!(decompress(&archive, Some(replay.as_ref()), 1).unwrap(), text);
}

#[test]
fn recordings_are_identical_across_runs_and_workers() {
    let text = synthetic_text(30_000, 22);
    let (a1, f1) = record(&text, &config(1));
    let (a4, f4) = record(&text, &config(4));
    assert_eq!(a1, a4);
    let (mut b1, mut b4) = (Vec::new(), Vec::new());
    f1.write_to(&mut b1).unwrap();
    f4.write_to(&mut b4).unwrap();
    assert_eq!(b1, b4);
    let (_, f1b) = record(&text, &config(1));
    assert_eq!(f1, f1b);
}

#[test]
fn truncated_fixture_is_exhausted() {
    let cfg = config(1);
    let text = synthetic_text(10_000, 23);
    let (archive, mut fixture) = record(&text, &cfg);
    let last = *fixture.records.keys().next_back().unwrap();
    fixture.records.remove(&last);
    let replay = ReplayPredictor::from_fixture(fixture, cfg.total_mass).unwrap();
    match decompress(&archive, Some(&replay), 1) {
        Err(Error::FixtureExhausted { block, position }) => assert_eq!((block, position), last),
        other => panic!("expected exhaustion, got {:?}", other.map(|v| v.len())),
    }
}

#[test]
fn truncated_fixture_file_is_rejected() {
    let cfg = config(1);
    let (_, fixture) = record(&synthetic_text(3000, 24), &cfg);
    let mut bytes = Vec::new();
    fixture.write_to(&mut bytes).unwrap();
    for cut in [3, 20, 47, 50, bytes.len() - 1] {
        assert!(matches!(Fixture::read_from(&mut &bytes[..cut]), Err(Error::BadFixture(_))), "cut {cut}");
    }
}

#[test]
fn replay_presents_the_recorded_identity() {
    let cfg = config(1);
    let (_, fixture) = record(&synthetic_text(2000, 25), &cfg);
    let id = fixture.identity;
    let replay = ReplayPredictor::from_fixture(fixture, cfg.total_mass).unwrap();
    assert_eq!(replay.identity(), id);
    let builtin = PredictorSpec::Builtin.build(&cfg.model_params()).unwrap();
    let archive = compress(&synthetic_text(9000, 26), &cfg, &replay);
    // The replay holds logits for a different text, so coding must stop
    // at the first missing record rather than guess.
    assert!(matches!(archive, Err(Error::FixtureExhausted { .. })));
    assert_ne!(builtin.identity(), id);
}
