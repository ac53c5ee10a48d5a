mod support;

use std::sync::Arc;

use hnlc_core::pipeline::{audit_routes, compress, decompress, PipelineConfig};
use hnlc_core::predictor::{
    Endpoint, ExternalPredictor, FixtureRecorder, ModelParams, Predictor, PredictorSpec, ADAPTER_CMD_ENV,
};
use hnlc_core::router::Route;
use hnlc_core::Error;
use support::*;

fn connect(endpoint: &str, cfg: &PipelineConfig) -> ExternalPredictor {
    ExternalPredictor::connect(endpoint.parse::<Endpoint>().unwrap(), &cfg.model_params()).unwrap()
}

fn small_config() -> PipelineConfig {
    PipelineConfig { segment_tokens: 512, graft_tokens: 32, window: 512, block_bytes: 4096, ..Default::default() }
}

#[test]
fn tcp_round_trip_and_handshake_identity() {
    let endpoint = spawn_tcp_adapter();
    let cfg = small_config();
    let p = connect(&endpoint, &cfg);
    assert_eq!(p.identity(), mock_identity());
    assert_eq!(p.handshake().vocab_size, MOCK_VOCAB);
    let text = synthetic_text(20_000, 1);
    let c = compress(&text, &cfg, &p).unwrap();
    assert!(c.report.blocks[Route::Neural as usize] > 0);
    assert_eq!(c.archive.header.identity, mock_identity());
    assert_eq!(decompress(&c.to_bytes(), Some(&p), 1).unwrap(), text);
}

#[test]
fn grid_mismatch_is_rejected_by_adapter() {
    let endpoint = spawn_tcp_adapter();
    let params = ModelParams { grid_k: MOCK_GRID + 1, ..ModelParams::default() };
    match ExternalPredictor::connect(endpoint.parse().unwrap(), &params) {
        Err(Error::AdapterError { code, .. }) => assert_eq!(code, hnlc_core::wire::ERR_GRID_MISMATCH),
        other => panic!("expected grid mismatch, got {:?}", other.map(|p| p.identity())),
    }
}

#[test]
fn non_tokenizable_blocks_fall_back_to_legacy() {
    let endpoint = spawn_tcp_adapter();
    let cfg = small_config();
    let p = connect(&endpoint, &cfg);
    let mut data = synthetic_text(8192, 2);
    let mut accented = synthetic_text(8192, 3);
    for (i, b) in accented.iter_mut().enumerate() {
        if i % 97 == 0 {
            *b = 0xe9;
        }
    }
    data.extend_from_slice(&accented);
    data.extend_from_slice(&synthetic_text(8192, 4));
    let c = compress(&data, &cfg, &p).unwrap();
    assert_eq!(c.report.tokenizer_fallbacks, 2);
    let audit = audit_routes(&c.archive, &data).unwrap();
    assert_eq!(audit.fallbacks, 2);
    assert!(audit.violations.is_empty());
    assert_eq!(decompress(&c.to_bytes(), Some(&p), 2).unwrap(), data);
}

#[test]
fn parallel_workers_each_hold_a_connection() {
    let endpoint = spawn_tcp_adapter();
    let one = PipelineConfig { workers: 1, ..small_config() };
    let four = PipelineConfig { workers: 4, ..small_config() };
    let text = synthetic_text(30_000, 5);
    let p = connect(&endpoint, &one);
    let a = compress(&text, &one, &p).unwrap().to_bytes();
    let b = compress(&text, &four, &p).unwrap().to_bytes();
    assert_eq!(a, b);
}

#[cfg(unix)]
#[test]
fn unix_socket_matches_tcp() {
    let dir = tempfile::tempdir().unwrap();
    let unix = spawn_unix_adapter(&dir.path().join("adapter.sock"));
    let tcp = spawn_tcp_adapter();
    let cfg = small_config();
    let text = synthetic_text(12_000, 6);
    let a = compress(&text, &cfg, &connect(&tcp, &cfg)).unwrap().to_bytes();
    let b = compress(&text, &cfg, &connect(&unix, &cfg)).unwrap().to_bytes();
    assert_eq!(a, b);
}

#[test]
fn stdio_adapter_decodes_tcp_archive() {
    if std::process::Command::new("python3").arg("--version").output().is_err() {
        eprintln!("python3 unavailable; skipping stdio transport check");
        return;
    }
    std::env::set_var(ADAPTER_CMD_ENV, format!("python3 {}", mock_adapter_script().display()));
    let cfg = small_config();
    let text = synthetic_text(6_000, 7);
    let tcp = connect(&spawn_tcp_adapter(), &cfg);
    let stdio = connect("stdio", &cfg);
    assert_eq!(stdio.identity(), tcp.identity());
    let archive = compress(&text, &cfg, &tcp).unwrap().to_bytes();
    assert_eq!(decompress(&archive, Some(&stdio), 1).unwrap(), text);
    let again = compress(&text, &cfg, &stdio).unwrap().to_bytes();
    assert_eq!(again, archive);
}

#[test]
fn recorded_logits_are_the_wire_integers() {
    let endpoint = spawn_tcp_adapter();
    let recorder = Arc::new(FixtureRecorder::new());
    let cfg = small_config();
    let params = ModelParams { recorder: Some(recorder.clone()), ..cfg.model_params() };
    let spec: PredictorSpec = format!("external:{endpoint}").parse().unwrap();
    let p = spec.build(&params).unwrap();
    let text = synthetic_text(700, 8);
    compress(&text, &cfg, p.as_ref()).unwrap();
    let fixture = recorder.to_fixture(p.identity(), MOCK_GRID);
    assert_eq!(fixture.records.len(), 700);
    let first = &fixture.records[&(0, 0)];
    assert_eq!(first, &mock_logits(&[]));
    let second = &fixture.records[&(0, 1)];
    assert_eq!(second, &mock_logits(&[text[0] as u32]));
}

#[test]
fn dead_adapter_is_unavailable() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let r = ExternalPredictor::connect(format!("tcp:{addr}").parse().unwrap(), &ModelParams::default());
    assert!(matches!(r, Err(Error::ExternalPredictorUnavailable(_))));
}
