//! Wire-format tests for every remote adapter, against a minimal in-process
//! HTTP server.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::thread;

use handfusion_core::dataset::{
    CaptionerAdapter, EnricherAdapter, JointEmbedderAdapter, RemoteCaptioner, RemoteEnricher,
    RemoteJointEmbedder,
};
use handfusion_core::encoder::{RemoteTextEncoder, TextEncoderAdapter};
use handfusion_core::error::GestureError;
use handfusion_core::eval::{FeatureExtractorAdapter, RemoteExtractor};
use handfusion_core::gesture::{extract_feature, GestureRecognizerAdapter, RemoteRecognizer};
use handfusion_core::img::Image;

struct Request {
    path: String,
    body: Vec<u8>,
}

fn read_request(stream: &mut TcpStream) -> Request {
    let mut buf = Vec::new();
    let mut chunk = [0u8; 1024];
    let header_end = loop {
        let n = stream.read(&mut chunk).unwrap();
        buf.extend_from_slice(&chunk[..n]);
        if let Some(pos) = buf.windows(4).position(|w| w == b"\r\n\r\n") {
            break pos + 4;
        }
        assert!(n > 0, "connection closed mid-headers");
    };
    let head = String::from_utf8_lossy(&buf[..header_end]).to_string();
    let path = head
        .lines()
        .next()
        .unwrap()
        .split_whitespace()
        .nth(1)
        .unwrap()
        .to_string();
    let content_length: usize = head
        .lines()
        .find(|l| l.to_ascii_lowercase().starts_with("content-length:"))
        .map(|l| l.split(':').nth(1).unwrap().trim().parse().unwrap())
        .unwrap_or(0);
    let mut body = buf[header_end..].to_vec();
    while body.len() < content_length {
        let n = stream.read(&mut chunk).unwrap();
        assert!(n > 0, "connection closed mid-body");
        body.extend_from_slice(&chunk[..n]);
    }
    Request { path, body }
}

fn respond_json(stream: &mut TcpStream, status: u16, body: &str) {
    let response = format!(
        "HTTP/1.1 {status} OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
        body.len()
    );
    stream.write_all(response.as_bytes()).unwrap();
}

/// Serves `n_requests` requests with the given handler; returns the base URL.
fn spawn_server(
    n_requests: usize,
    handler: impl Fn(&Request) -> (u16, String) + Send + 'static,
) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    thread::spawn(move || {
        for _ in 0..n_requests {
            let (mut stream, _) = listener.accept().unwrap();
            let request = read_request(&mut stream);
            let (status, body) = handler(&request);
            respond_json(&mut stream, status, &body);
        }
    });
    format!("http://{addr}")
}

fn png_magic_ok(body: &[u8]) -> bool {
    body.starts_with(&[0x89, b'P', b'N', b'G'])
}

#[test]
fn remote_recognizer_speaks_the_detect_protocol() {
    let url = spawn_server(1, |req| {
        assert_eq!(req.path, "/detect");
        assert!(png_magic_ok(&req.body), "body must be a PNG");
        let feature: Vec<f32> = (0..16).map(|i| i as f32 / 16.0).collect();
        (
            200,
            serde_json::json!({
                "detections": [
                    {"feature": feature, "confidence": 0.9, "bbox": [0.1, 0.2, 0.6, 0.7]}
                ]
            })
            .to_string(),
        )
    });
    let adapter = RemoteRecognizer::new(url, 16);
    let image = Image::filled(1, 8, 8, 0.5);
    let detections = adapter.detect(&image).unwrap();
    assert_eq!(detections.len(), 1);
    assert_eq!(detections[0].feature.dim(), 16);
    assert!((detections[0].confidence - 0.9).abs() < 1e-6);
}

#[test]
fn remote_recognizer_failure_is_an_error_not_none() {
    // Nothing listens on this address once the listener drops.
    let url = {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        format!("http://{}", listener.local_addr().unwrap())
    };
    let adapter = RemoteRecognizer::new(url, 16);
    let image = Image::filled(1, 8, 8, 0.5);
    let result = extract_feature(&image, &adapter, 0.5);
    assert!(matches!(result, Err(GestureError::AdapterFailure { .. })));
}

#[test]
fn remote_recognizer_rejects_wrong_feature_dims() {
    let url = spawn_server(1, |_| {
        (
            200,
            serde_json::json!({
                "detections": [
                    {"feature": [1.0, 2.0], "confidence": 0.9, "bbox": [0.0, 0.0, 1.0, 1.0]}
                ]
            })
            .to_string(),
        )
    });
    let adapter = RemoteRecognizer::new(url, 16);
    let image = Image::filled(1, 8, 8, 0.5);
    assert!(matches!(
        adapter.detect(&image),
        Err(GestureError::FeatureDimMismatch {
            expected: 16,
            actual: 2
        })
    ));
}

#[test]
fn remote_encoder_speaks_the_encode_protocol() {
    let url = spawn_server(1, |req| {
        assert_eq!(req.path, "/encode");
        let parsed: serde_json::Value = serde_json::from_slice(&req.body).unwrap();
        assert_eq!(parsed["text"], "a test caption");
        let rows: Vec<Vec<f32>> = (0..4).map(|r| vec![r as f32; 6]).collect();
        (200, serde_json::json!({ "embedding": rows }).to_string())
    });
    let adapter = RemoteTextEncoder::new(url, 4, 6);
    let embedding = adapter.encode("a test caption").unwrap();
    assert_eq!(embedding.matrix().n_tokens(), 4);
    assert_eq!(embedding.matrix().d_text(), 6);
    assert_eq!(embedding.matrix().row(2), &[2.0f32; 6]);
}

#[test]
fn remote_captioner_and_enricher_protocols() {
    let url = spawn_server(1, |req| {
        assert_eq!(req.path, "/caption");
        assert!(png_magic_ok(&req.body));
        (200, serde_json::json!({"caption": "a scene"}).to_string())
    });
    let captioner = RemoteCaptioner::new(url);
    let caption = captioner.caption(&Image::filled(1, 8, 8, 0.3)).unwrap();
    assert_eq!(caption, "a scene");

    let url = spawn_server(1, |req| {
        assert_eq!(req.path, "/enrich");
        let parsed: serde_json::Value = serde_json::from_slice(&req.body).unwrap();
        assert_eq!(parsed["caption"], "a scene");
        assert_eq!(parsed["label"], "ok");
        (
            200,
            serde_json::json!({"enriched": "a scene, making an ok hand gesture"}).to_string(),
        )
    });
    let enricher = RemoteEnricher::new(url);
    let enriched = enricher.enrich("a scene", "ok").unwrap();
    assert!(enriched.contains("ok hand gesture"));
}

#[test]
fn remote_joint_embedder_protocols_and_norm_contract() {
    let unit = vec![1.0, 0.0, 0.0];
    let unit_for_server = unit.clone();
    let url = spawn_server(2, move |req| {
        match req.path.as_str() {
            "/embed_text" => {
                let parsed: serde_json::Value = serde_json::from_slice(&req.body).unwrap();
                assert_eq!(parsed["text"], "hello");
            }
            "/embed_image" => assert!(png_magic_ok(&req.body)),
            other => panic!("unexpected path {other}"),
        }
        (200, serde_json::json!({"vector": unit_for_server}).to_string())
    });
    let adapter = RemoteJointEmbedder::new(url, 3);
    assert_eq!(adapter.embed_text("hello").unwrap(), unit);
    assert_eq!(adapter.embed_image(&Image::filled(1, 4, 4, 0.2)).unwrap(), unit);

    // Norm violations are adapter failures.
    let url = spawn_server(1, |_| {
        (200, serde_json::json!({"vector": [2.0, 0.0, 0.0]}).to_string())
    });
    let bad = RemoteJointEmbedder::new(url, 3);
    assert!(bad.embed_text("x").is_err());
}

#[test]
fn remote_extractor_protocol() {
    let url = spawn_server(1, |req| {
        assert_eq!(req.path, "/extract");
        assert!(png_magic_ok(&req.body));
        (200, serde_json::json!({"vector": [0.5, -0.5, 0.25, 0.0]}).to_string())
    });
    let adapter = RemoteExtractor::new(url, 4);
    let features = adapter.extract(&Image::filled(1, 8, 8, 0.4)).unwrap();
    assert_eq!(features, vec![0.5, -0.5, 0.25, 0.0]);
}

#[test]
fn http_error_statuses_surface_as_adapter_failures() {
    let url = spawn_server(1, |_| (500, "{}".to_string()));
    let adapter = RemoteCaptioner::new(url);
    assert!(adapter.caption(&Image::filled(1, 4, 4, 0.1)).is_err());
}
