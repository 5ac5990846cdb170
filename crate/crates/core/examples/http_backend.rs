//! The OpenAI-compatible adapter against the bundled stub server,
//! including retries on scripted 503s.

use std::time::Duration;

use evoderm::adapters::http::{ChatMessage, HttpBackend, RetryPolicy};
use evoderm::adapters::BackendProfile;
use evoderm::stub::{StubLlm, StubReply};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let stub = StubLlm::start(8)?;
    let profile = BackendProfile {
        endpoint_url: stub.url(),
        model_name: "stub-model".into(),
        max_retries: 3,
        ..Default::default()
    };
    let backend = HttpBackend::new(profile, 7)?.with_retry_policy(RetryPolicy {
        max_retries: 3,
        base: Duration::from_millis(20),
        factor: 2,
        max_delay: Duration::from_millis(200),
    });
    let msgs = [ChatMessage::system("be brief"), ChatMessage::user("hello stub")];

    let r = backend.chat(&msgs, &[])?;
    println!("echo {:?} after {} attempt(s)", r.text, r.attempts);

    stub.fail_next(2, 503);
    stub.set_reply(StubReply::Fixed("recovered".into()));
    let r = backend.chat(&msgs, &[])?;
    println!("{:?} after {} attempt(s)", r.text, r.attempts);

    stub.fail_next(10, 500);
    match backend.chat(&msgs, &[]) {
        Ok(r) => println!("unexpected success: {}", r.text),
        Err(e) => println!("gave up: {e}"),
    }
    stub.fail_next(0, 500);

    let v = backend.embed("psoriasis")?;
    println!("embedding with {} dims, first {:.4}", v.len(), v[0]);
    println!("stub saw {} requests", stub.request_count());
    Ok(())
}
