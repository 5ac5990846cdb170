//! Starts the HTTP service on an ephemeral port and drives it with a client.

use std::sync::Arc;

use base64::Engine;
use evoderm::adapters::ImageMeta;
use evoderm::app::service::ServiceHandle;
use evoderm::corpus::PlantedCorpus;
use serde_json::json;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = PlantedCorpus::bundled();
    let rt = corpus.runtime(corpus.config(), true)?;
    let service = ServiceHandle::spawn(Arc::new(rt), "127.0.0.1:0")?;
    let client = reqwest::blocking::Client::new();
    println!("listening on {}", service.url(""));

    let health: serde_json::Value = client.get(service.url("/v1/healthz")).send()?.json()?;
    println!("healthz: {health}");

    let sample = &corpus.samples()[3];
    let path = corpus.image_path(sample);
    let body = json!({
        "image_b64": base64::engine::general_purpose::STANDARD.encode(std::fs::read(&path)?),
        "meta": ImageMeta::load_for(&path)?,
        "confirm": true,
    });
    let resp = client.post(service.url("/v1/diagnose")).json(&body).send()?;
    let case_id = resp.headers().get("x-evoderm-case-id").cloned();
    let report: serde_json::Value = resp.json()?;
    println!("{}: final diagnosis {}, stored as {:?}", sample.sample_id, report["final_diagnosis"], case_id);

    let g: serde_json::Value = client
        .get(service.url("/v1/memory/guidelines/Psoriasis"))
        .send()?
        .json()?;
    println!("Psoriasis guideline versions: {}", g["versions"].as_array().map_or(0, Vec::len));
    service.shutdown()?;
    Ok(())
}
