//! The HTTP embedder against a local mock `/embeddings` endpoint.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use flowgeom::provider::{Embedder, HttpConfig, HttpEmbedder, ProviderError};
use serde_json::{json, Value};

#[derive(Default)]
struct Mock {
    /// Inputs of every request, in arrival order.
    requests: Mutex<Vec<Vec<String>>>,
    auth: Mutex<Vec<Option<String>>>,
    /// Status to return for the first `fail_first` requests.
    fail_status: u16,
    fail_first: usize,
    seen: AtomicUsize,
    /// Reverse the order of `data` entries in responses.
    shuffle: bool,
    /// Vary the vector length with the request number.
    ragged: bool,
}

/// Embedding of a text: [chars, words].
fn fake_vector(text: &str) -> Vec<f64> {
    vec![text.chars().count() as f64, text.split_whitespace().count() as f64]
}

async fn embeddings(State(mock): State<Arc<Mock>>, headers: HeaderMap, Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
    let n = mock.seen.fetch_add(1, Ordering::SeqCst);
    let input: Vec<String> = body["input"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    mock.requests.lock().unwrap().push(input.clone());
    mock.auth.lock().unwrap().push(
        headers
            .get("authorization")
            .map(|h| h.to_str().unwrap().to_string()),
    );
    if n < mock.fail_first {
        return (StatusCode::from_u16(mock.fail_status).unwrap(), Json(json!({"error": "busy"})));
    }
    let mut data: Vec<Value> = input
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let mut v = fake_vector(t);
            if mock.ragged && n > 0 {
                v.push(0.0);
            }
            json!({"index": i, "embedding": v})
        })
        .collect();
    if mock.shuffle {
        data.reverse();
    }
    (StatusCode::OK, Json(json!({"data": data, "model": body["model"]})))
}

fn serve(mock: Mock) -> (String, Arc<Mock>) {
    let mock = Arc::new(mock);
    let state = mock.clone();
    let (tx, rx) = std::sync::mpsc::channel::<SocketAddr>();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .unwrap();
        rt.block_on(async move {
            let app = Router::new().route("/v1/embeddings", post(embeddings)).with_state(state);
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    let addr = rx.recv().unwrap();
    (format!("http://{addr}/v1/embeddings"), mock)
}

fn config(endpoint: String) -> HttpConfig {
    HttpConfig {
        endpoint,
        model: "mock-embed".into(),
        api_key_env: "FLOWGEOM_TEST_UNSET_KEY".into(),
        max_batch: 2,
        max_parallel: 1,
        retries: 3,
        backoff_base_ms: 5,
        timeout_ms: 5_000,
    }
}

fn texts(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

#[test]
fn batches_follow_max_batch_in_order() {
    let (url, mock) = serve(Mock::default());
    let e = HttpEmbedder::new(config(url)).unwrap();
    let input = texts(&["one", "two words", "three more words"]);
    let out = e.embed_batch(&input).unwrap();
    assert_eq!(
        *mock.requests.lock().unwrap(),
        vec![texts(&["one", "two words"]), texts(&["three more words"])]
    );
    let expected: Vec<Vec<f64>> = input.iter().map(|t| fake_vector(t)).collect();
    assert_eq!(out, expected);
    assert_eq!(e.id(), "http:mock-embed");
}

#[test]
fn parallel_chunks_keep_input_order() {
    let (url, mock) = serve(Mock {
        shuffle: true,
        ..Default::default()
    });
    let e = HttpEmbedder::new(HttpConfig {
        max_batch: 3,
        max_parallel: 4,
        ..config(url)
    })
    .unwrap();
    // each text is its own sentinel: length i+1
    let input: Vec<String> = (0..20).map(|i| "x".repeat(i + 1)).collect();
    let out = e.embed_batch(&input).unwrap();
    for (i, v) in out.iter().enumerate() {
        assert_eq!(v[0], (i + 1) as f64);
    }
    assert_eq!(mock.requests.lock().unwrap().len(), 7);
}

#[test]
fn retries_after_rate_limit() {
    let (url, mock) = serve(Mock {
        fail_status: 429,
        fail_first: 2,
        ..Default::default()
    });
    let e = HttpEmbedder::new(config(url)).unwrap();
    let out = e.embed_batch(&texts(&["a b"])).unwrap();
    assert_eq!(out, vec![vec![3.0, 2.0]]);
    assert_eq!(mock.seen.load(Ordering::SeqCst), 3);
}

#[test]
fn gives_up_after_retries() {
    let (url, mock) = serve(Mock {
        fail_status: 503,
        fail_first: usize::MAX,
        ..Default::default()
    });
    let e = HttpEmbedder::new(HttpConfig {
        retries: 2,
        ..config(url)
    })
    .unwrap();
    match e.embed_batch(&texts(&["a"])) {
        Err(ProviderError::Endpoint { status, body }) => {
            assert_eq!(status, 503);
            assert!(body.contains("busy"));
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(mock.seen.load(Ordering::SeqCst), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let (url, mock) = serve(Mock {
        fail_status: 400,
        fail_first: usize::MAX,
        ..Default::default()
    });
    let e = HttpEmbedder::new(config(url)).unwrap();
    assert!(matches!(
        e.embed_batch(&texts(&["a"])),
        Err(ProviderError::Endpoint { status: 400, .. })
    ));
    assert_eq!(mock.seen.load(Ordering::SeqCst), 1);
}

#[test]
fn inconsistent_dimensions_are_reported() {
    let (url, _mock) = serve(Mock {
        ragged: true,
        ..Default::default()
    });
    let e = HttpEmbedder::new(config(url)).unwrap();
    assert!(matches!(
        e.embed_batch(&texts(&["a", "b", "c"])),
        Err(ProviderError::DimensionMismatch { expected: 2, found: 3 })
    ));
}

#[test]
fn bearer_token_from_named_variable() {
    let (url, mock) = serve(Mock::default());
    let var = "FLOWGEOM_TEST_KEY_FOR_MOCK";
    std::env::set_var(var, "test-token");
    let e = HttpEmbedder::new(HttpConfig {
        api_key_env: var.into(),
        ..config(url.clone())
    })
    .unwrap();
    e.embed_batch(&texts(&["a"])).unwrap();
    assert!(!format!("{e:?}").contains("test-token"));
    let anonymous = HttpEmbedder::new(config(url)).unwrap();
    anonymous.embed_batch(&texts(&["a"])).unwrap();
    assert_eq!(
        *mock.auth.lock().unwrap(),
        vec![Some("Bearer test-token".to_string()), None]
    );
}

#[test]
fn unreachable_endpoint_is_a_transport_error() {
    let e = HttpEmbedder::new(HttpConfig {
        retries: 0,
        ..config("http://127.0.0.1:9/v1/embeddings".into())
    })
    .unwrap();
    assert!(matches!(e.embed_batch(&texts(&["a"])), Err(ProviderError::Transport(_))));
}
