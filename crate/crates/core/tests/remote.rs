mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

use common::{bayesian, config, sentiment, write_dataset};
use icl_dynamics::backends::{
    serve, BackendError, LanguageModel, RemoteBackend, RemoteConfig, Tokenizer,
};
use icl_dynamics::runner::{build_backend, execute};
use icl_dynamics::verbalize::{TaskDataset, TemplateSpec};

fn reference_model(dir: &std::path::Path, data: &TaskDataset) -> Arc<dyn LanguageModel> {
    let path = write_dataset(dir, data);
    let cfg = config(&path, &dir.join("out"), &bayesian(0.6, 0.1), &[("default", "{ kind = \"default\" }")], 1, 4, "");
    build_backend(&cfg, data, &TemplateSpec::sentence()).unwrap()
}

fn client(url: String) -> RemoteBackend {
    let mut config = RemoteConfig::new(url);
    config.backoff_ms = 1;
    RemoteBackend::connect(config).unwrap()
}

#[test]
fn served_model_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let data = sentiment(10, 10);
    let model = reference_model(dir.path(), &data);
    let server = serve(Arc::clone(&model), "127.0.0.1:0").unwrap();
    let remote = client(server.url());
    assert_eq!(remote.vocab_size(), model.vocab_size());
    assert_eq!(remote.max_input_tokens(), model.max_input_tokens());
    assert_eq!(remote.bos_token_id(), None);

    let text = "Sentence: 'a good film'\nAnswer: positive\n\nSentence: 'a bad plot'\nAnswer:";
    let tokens = remote.tokenize(text).unwrap();
    assert_eq!(tokens, model.tokenize(text).unwrap());

    let ids = [model.tokenize("positive").unwrap()[0], model.tokenize("negative").unwrap()[0]];
    let positions = [tokens.len() / 2, tokens.len()];
    let local = model.logprobs(&tokens, &positions, &ids).unwrap();
    let served = remote.logprobs(&tokens, &positions, &ids).unwrap();
    assert_eq!(served.len(), 2);
    assert!(served.iter().all(|row| row.len() == 2));
    for (a, b) in local.iter().flatten().zip(served.iter().flatten()) {
        assert!(a.to_bits() == b.to_bits() || (a.is_infinite() && b.is_infinite()), "{a} vs {b}");
    }
    // identical requests give identical payloads
    assert_eq!(remote.logprobs(&tokens, &positions, &ids).unwrap(), served);
    server.shutdown();
}

#[test]
fn request_errors_are_permanent() {
    let dir = tempfile::tempdir().unwrap();
    let data = sentiment(4, 4);
    let model = reference_model(dir.path(), &data);
    let server = serve(model, "127.0.0.1:0").unwrap();
    let remote = client(server.url());
    let tokens = remote.tokenize("Sentence: 'a good film'\nAnswer:").unwrap();
    let err = remote.logprobs(&tokens, &[tokens.len() + 1], &[1]).unwrap_err();
    assert!(matches!(err, BackendError::PositionOutOfRange { .. }));
    assert!(!err.is_retryable());
    let too_long = vec![1; remote.max_input_tokens() + 1];
    let err = remote.logprobs(&too_long, &[1], &[1]).unwrap_err();
    assert!(matches!(err, BackendError::TokenLimit { .. }));
    server.shutdown();
}

/// Answers every request with `status` and counts the requests.
fn failing_server(status: u16) -> (String, Arc<AtomicUsize>) {
    let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let url = format!("http://{}", server.server_addr().to_ip().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = Arc::clone(&hits);
    thread::spawn(move || {
        for request in server.incoming_requests() {
            counter.fetch_add(1, Ordering::SeqCst);
            let body = r#"{"error":{"code":"busy","message":"try later"}}"#;
            let _ = request.respond(tiny_http::Response::from_string(body).with_status_code(status));
        }
    });
    (url, hits)
}

#[test]
fn transient_failures_are_retried_then_reported() {
    let (url, hits) = failing_server(503);
    let mut config = RemoteConfig::new(url);
    config.retries = 2;
    config.backoff_ms = 1;
    config.vocab_size = Some(10);
    config.max_input_tokens = Some(10);
    let remote = RemoteBackend::connect(config).unwrap();
    let err = remote.tokenize("x").unwrap_err();
    assert!(matches!(err, BackendError::Server { status: 503, .. }));
    assert_eq!(hits.load(Ordering::SeqCst), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let (url, hits) = failing_server(400);
    let mut config = RemoteConfig::new(url);
    config.retries = 5;
    config.vocab_size = Some(10);
    config.max_input_tokens = Some(10);
    let remote = RemoteBackend::connect(config).unwrap();
    assert!(remote.tokenize("x").is_err());
    assert_eq!(hits.load(Ordering::SeqCst), 1);
}

#[test]
fn experiments_over_http_match_in_process_runs() {
    let dir = tempfile::tempdir().unwrap();
    let data = sentiment(12, 12);
    let path = write_dataset(dir.path(), &data);
    let transforms = [("default", "{ kind = \"default\" }"), ("random", "{ kind = \"randomize\", proportion = 0.5 }")];
    let local_cfg = config(&path, &dir.path().join("a"), &bayesian(0.6, 0.1), &transforms, 4, 10, "");
    let model = build_backend(&local_cfg, &data, &TemplateSpec::sentence()).unwrap();
    let server = serve(Arc::clone(&model), "127.0.0.1:0").unwrap();
    let remote = client(server.url());
    let local = execute(&local_cfg, &data, model.as_ref()).unwrap();
    let served = execute(&local_cfg, &data, &remote).unwrap();
    for (a, b) in local.transforms.iter().zip(&served.transforms) {
        assert_eq!(a.records, b.records);
    }
    server.shutdown();
}
