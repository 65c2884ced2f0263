mod common;

use std::sync::Arc;
use std::thread;

use serde_json::json;
use setaudit_core::error::Error;
use setaudit_core::oracle::{ImageRef, OracleRegistration, QueryEngine, RemoteRegistration, Sample};
use setaudit_core::similarity::{EmbeddingProvider, RemoteEmbeddingProvider};
use setaudit_core::transport::{HttpEndpoint, RetryPolicy};
use setaudit_core::{Scorer, SimilarityMetric};

use common::MockServer;

fn sample(id: &str, bytes: &[u8]) -> Sample {
    Sample {
        id: id.into(),
        image: ImageRef::from_bytes(bytes.to_vec()),
        question: "What is shown?".into(),
        answer: Some("a cat".into()),
        membership: None,
    }
}

fn endpoint(server: &MockServer) -> HttpEndpoint {
    HttpEndpoint {
        retry: RetryPolicy {
            attempts: 3,
            initial_backoff_ms: 1,
            multiplier: 2,
        },
        ..HttpEndpoint::new(server.url.clone())
    }
}

fn engine(endpoint: HttpEndpoint) -> QueryEngine {
    let registration = RemoteRegistration {
        id: "remote".into(),
        endpoint,
        max_tokens: 64,
        member_ids: None,
    };
    QueryEngine::in_memory().with_backend(OracleRegistration::Remote(registration).instantiate().unwrap())
}

#[test]
fn oracle_request_carries_image_prompt_and_temperature() {
    let server = MockServer::start(|_, _| (200, json!({"text": "a cat on a mat"}).to_string()));
    let engine = engine(endpoint(&server));
    let s = sample("s1", b"\x89PNG fake");
    let r = engine.query("remote", &s, 0.35, 0).unwrap();
    assert_eq!(r.text, "a cat on a mat");
    let body = server.request(0).body;
    assert_eq!(body["image_b64"], "iVBORyBmYWtl");
    assert_eq!(body["prompt"], "What is shown?");
    assert_eq!(body["temperature"], 0.35);
    assert_eq!(body["max_tokens"], 64);

    // cached on the second call
    assert!(engine.query("remote", &s, 0.35, 0).unwrap().cached);
    assert_eq!(server.count(), 1);
}

#[test]
fn bearer_token_comes_from_the_environment() {
    let server = MockServer::start(|_, _| (200, json!({"text": "ok"}).to_string()));
    std::env::set_var("SETAUDIT_TEST_TOKEN", "s3cret");
    let engine = engine(HttpEndpoint {
        token_env: Some("SETAUDIT_TEST_TOKEN".into()),
        ..endpoint(&server)
    });
    engine.query("remote", &sample("s", b"x"), 1.0, 0).unwrap();
    assert_eq!(server.request(0).header("authorization"), Some("Bearer s3cret"));
}

#[test]
fn server_errors_are_retried() {
    let server = MockServer::start(|n, _| {
        if n < 2 {
            (503, "busy".into())
        } else {
            (200, json!({"text": "third time"}).to_string())
        }
    });
    let engine = engine(endpoint(&server));
    assert_eq!(engine.query("remote", &sample("s", b"x"), 1.0, 0).unwrap().text, "third time");
    assert_eq!(server.count(), 3);
}

#[test]
fn exhausted_retries_are_a_transport_error() {
    let server = MockServer::start(|_, _| (500, "down".into()));
    let engine = engine(endpoint(&server));
    let err = engine.query("remote", &sample("s", b"x"), 1.0, 0).unwrap_err();
    assert!(matches!(err, Error::Transport { attempts: 3, .. }), "{err:?}");
    assert_eq!(server.count(), 3);
    // failures are not cached
    assert!(engine.query("remote", &sample("s", b"x"), 1.0, 0).is_err());
    assert_eq!(server.count(), 6);
}

#[test]
fn client_errors_and_error_bodies_are_refusals() {
    let server = MockServer::start(|_, _| (400, "bad image".into()));
    let err = engine(endpoint(&server))
        .query("remote", &sample("s", b"x"), 1.0, 0)
        .unwrap_err();
    assert!(matches!(err, Error::Refusal { .. }), "{err:?}");
    assert_eq!(server.count(), 1);

    let server = MockServer::start(|_, _| (200, json!({"error": "content policy"}).to_string()));
    let err = engine(endpoint(&server))
        .query("remote", &sample("s", b"x"), 1.0, 0)
        .unwrap_err();
    match err {
        Error::Refusal { message, .. } => assert_eq!(message, "content policy"),
        other => panic!("{other:?}"),
    }
    assert_eq!(server.count(), 1);
}

#[test]
fn concurrent_identical_queries_dispatch_once() {
    let server = MockServer::start(|_, _| {
        thread::sleep(std::time::Duration::from_millis(50));
        (200, json!({"text": "shared"}).to_string())
    });
    let engine = Arc::new(engine(endpoint(&server)));
    let s = Arc::new(sample("s", b"x"));
    let handles: Vec<_> = (0..8)
        .map(|_| {
            let (engine, s) = (engine.clone(), s.clone());
            thread::spawn(move || engine.query("remote", &s, 0.5, 0).unwrap().text)
        })
        .collect();
    for h in handles {
        assert_eq!(h.join().unwrap(), "shared");
    }
    assert_eq!(server.count(), 1);
    let c = engine.counters();
    assert_eq!((c.queries, c.hits, c.misses), (8, 7, 1));
}

#[test]
fn embedding_provider_batches_and_memoizes() {
    let server = MockServer::start(|_, body| {
        let rows: Vec<Vec<f64>> = body["texts"]
            .as_array()
            .unwrap()
            .iter()
            .map(|t| {
                let n = t.as_str().unwrap().len() as f64;
                vec![1.0, n]
            })
            .collect();
        (200, json!({ "embeddings": rows }).to_string())
    });
    let provider = RemoteEmbeddingProvider::new("remote-embed", endpoint(&server)).unwrap();
    let v = provider.embed_batch(&["ab", "abcd", "ab"]).unwrap();
    assert_eq!(v[0].values(), &[1.0, 2.0]);
    assert_eq!(v[1].values(), &[1.0, 4.0]);
    assert_eq!(v[0], v[2]);
    assert_eq!(server.request(0).body, json!({"texts": ["ab", "abcd"]}));
    provider.embed_batch(&["abcd"]).unwrap();
    assert_eq!(server.count(), 1);

    let mut scorer = Scorer::default();
    scorer.register(Arc::new(provider));
    let metric = SimilarityMetric::EmbeddingCosine {
        provider: "remote-embed".into(),
    };
    let sim = scorer.score(&metric, "ab", "abcd").unwrap();
    let want = (1.0 + 8.0) / (5f64.sqrt() * 17f64.sqrt());
    assert!((sim - want).abs() < 1e-12);
}

#[test]
fn embedding_dimension_changes_are_rejected() {
    let server = MockServer::start(|n, _| {
        let row = if n == 0 { vec![1.0, 0.0] } else { vec![1.0, 0.0, 0.0] };
        (200, json!({ "embeddings": [row] }).to_string())
    });
    let provider = RemoteEmbeddingProvider::new("e", endpoint(&server)).unwrap();
    provider.embed_batch(&["one"]).unwrap();
    assert!(matches!(provider.embed_batch(&["two"]), Err(Error::Invariant(_))));
}
