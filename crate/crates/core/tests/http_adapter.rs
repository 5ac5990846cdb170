use std::sync::Arc;
use std::time::Duration;

use evoderm::adapters::http::{
    HttpBackend, HttpClassifier, HttpDescriber, HttpSummarizer, HttpTextEmbedder, RetryPolicy,
    INTEGRATION_DELIMITER,
};
use evoderm::adapters::mock::mock_embed_text;
use evoderm::adapters::{
    BackendError, BackendProfile, Classifier, ImageInput, Summarizer, TextEmbedder, VisionDescriber,
};
use evoderm::app::{build_ports, AppConfig};
use evoderm::domain::Label;
use evoderm::stub::{StubLlm, StubReply};

fn backend(stub: &StubLlm, profile: BackendProfile) -> Arc<HttpBackend> {
    let profile = BackendProfile {
        endpoint_url: stub.url(),
        ..profile
    };
    let retries = profile.max_retries;
    let policy = RetryPolicy {
        max_retries: retries,
        base: Duration::from_millis(1),
        factor: 2,
        max_delay: Duration::from_millis(5),
    };
    Arc::new(HttpBackend::new(profile, 3).unwrap().with_retry_policy(policy))
}

#[test]
fn bearer_token_comes_from_named_variable() {
    let stub = StubLlm::start(4).unwrap();
    std::env::set_var("EVODERM_HTTP_ADAPTER_TEST_TOKEN", "s3cret");
    let b = backend(
        &stub,
        BackendProfile {
            auth_token_env_var: Some("EVODERM_HTTP_ADAPTER_TEST_TOKEN".into()),
            ..Default::default()
        },
    );
    HttpSummarizer(b).summarize(None, &["red".into()]).unwrap();
    assert_eq!(stub.last_authorization().as_deref(), Some("Bearer s3cret"));

    let anonymous = backend(&stub, BackendProfile::default());
    HttpSummarizer(anonymous).summarize(None, &["red".into()]).unwrap();
    assert_eq!(stub.last_authorization(), None);
}

#[test]
fn describer_sends_image_as_data_url() {
    let stub = StubLlm::start(4).unwrap();
    stub.set_reply(StubReply::Fixed("erythematous papules".into()));
    let png = [0x89, b'P', b'N', b'G', 0, 1, 2, 3];
    let text = HttpDescriber(backend(&stub, BackendProfile::default()))
        .describe(&ImageInput::new(png.to_vec()), "describe")
        .unwrap();
    assert_eq!(text, "erythematous papules");
    let (path, body) = stub.requests().pop().unwrap();
    assert_eq!(path, "chat/completions");
    let parts = body["messages"][1]["content"].as_array().unwrap();
    assert_eq!(parts[0]["text"], "describe");
    assert_eq!(parts[1]["image_url"]["url"], "data:image/png;base64,iVBORwABAgM=");
}

#[test]
fn classifier_parses_embedded_json() {
    let stub = StubLlm::start(4).unwrap();
    stub.set_reply(StubReply::Fixed(
        "Here you go:\n```json\n{\"Eczema\": 0.7, \"Psoriasis\": 0.3}\n```".into(),
    ));
    let labels = [Label::new("Eczema"), Label::new("Psoriasis")];
    let dist = HttpClassifier(backend(&stub, BackendProfile::default()))
        .classify(&ImageInput::new(vec![1, 2, 3]), &labels)
        .unwrap();
    assert_eq!(dist, vec![(labels[0].clone(), 0.7), (labels[1].clone(), 0.3)]);

    stub.set_reply(StubReply::Fixed("no idea".into()));
    let err = HttpClassifier(backend(&stub, BackendProfile::default()))
        .classify(&ImageInput::new(vec![1]), &labels)
        .unwrap_err();
    assert!(matches!(err, BackendError::InvalidResponse(_)));
}

#[test]
fn summarizer_prompt_carries_previous_guideline() {
    let stub = StubLlm::start(4).unwrap();
    let out = HttpSummarizer(backend(&stub, BackendProfile::default()))
        .summarize(Some("old text"), &["scale".into(), "plaque".into()])
        .unwrap();
    assert_eq!(out, format!("old text{INTEGRATION_DELIMITER}- scale\n- plaque"));
}

#[test]
fn text_embedder_checks_dimension() {
    let stub = StubLlm::start(6).unwrap();
    let b = backend(&stub, BackendProfile::default());
    let e = HttpTextEmbedder { backend: b.clone(), dim: 6 }.embed_text("psoriasis").unwrap();
    assert_eq!(e, mock_embed_text("psoriasis", 6, 0));
    let err = HttpTextEmbedder { backend: b, dim: 8 }.embed_text("psoriasis").unwrap_err();
    assert!(matches!(err, BackendError::InvalidResponse(_)));
}

#[test]
fn client_errors_are_not_retried() {
    let stub = StubLlm::start(4).unwrap();
    stub.fail_next(5, 400);
    let err = HttpSummarizer(backend(&stub, BackendProfile::default()))
        .summarize(None, &["x".into()])
        .unwrap_err();
    assert!(matches!(err, BackendError::Failure { attempts: 1, status: Some(400), .. }), "{err:?}");
    assert_eq!(stub.request_count(), 1);
}

#[test]
fn config_routes_roles_to_http() {
    let stub = StubLlm::start(16).unwrap();
    let cfg = AppConfig::from_toml(&format!(
        "labels = [\"A\"]\n[evolution]\ndim = 16\n\
         [backends.summarizer]\nmode = \"http\"\nendpoint_url = \"{0}\"\n\
         [backends.text_embedder]\nmode = \"http\"\nendpoint_url = \"{0}\"\n",
        stub.url()
    ))
    .unwrap();
    let (ports, embedder) = build_ports(&cfg).unwrap();
    assert_eq!(ports.summarizer.summarize(None, &["a b".into()]).unwrap(), "- a b");
    assert_eq!(embedder.embed_text("x").unwrap().dim(), 16);
    let paths: Vec<String> = stub.requests().into_iter().map(|(p, _)| p).collect();
    assert_eq!(paths, ["chat/completions", "embeddings"]);
}
