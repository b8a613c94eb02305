use std::net::SocketAddr;
use std::sync::Arc;

use claimspot::checkpoint::Checkpoint;
use claimspot::model::{ModelConfig, Params};
use claimspot::scoring::Scorer;
use claimspot::text::{BasicTokenizer, Vocab};
use claimspot_service::{router, Health, ScoreResponse, MAX_BODY_BYTES};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use reqwest::StatusCode;

fn scorer() -> Arc<Scorer> {
    let vocab = Vocab::build(&["the sky is blue and taxes rose 5 percent"], 32, &BasicTokenizer).unwrap();
    let config = ModelConfig {
        layers: 1,
        hidden_size: 16,
        seq_len: 12,
        vocab_size: vocab.len(),
        ..ModelConfig::default()
    };
    let params = Params::init_random(&config, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    Arc::new(Scorer::new(Checkpoint::new(params, vocab).unwrap()).unwrap())
}

async fn start(model: Option<Arc<Scorer>>) -> SocketAddr {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, router(model)).await.unwrap() });
    addr
}

#[tokio::test]
async fn scores_one_and_many_in_order() {
    let model = scorer();
    let addr = start(Some(model.clone())).await;
    let client = reqwest::Client::new();
    let url = format!("http://{addr}/score/text");

    let one: ScoreResponse = client
        .post(&url)
        .json(&serde_json::json!({"input_text": "The sky is blue."}))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(one.results.len(), 1);
    assert!((0.0..=1.0).contains(&one.results[0].score));
    assert_eq!(one.model.config_hash, model.config_hash());

    let texts = ["first one", "taxes rose 5 percent", "the sky"];
    let many: ScoreResponse = client
        .post(&url)
        .json(&serde_json::json!({ "input_text": texts }))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    let got: Vec<&str> = many.results.iter().map(|r| r.text.as_str()).collect();
    assert_eq!(got, texts);
    let direct = model.score(&texts).unwrap();
    for (r, p) in many.results.iter().zip(direct) {
        assert_eq!(r.score, p.cws);
    }
}

#[tokio::test]
async fn rejects_bad_requests() {
    let addr = start(Some(scorer())).await;
    let client = reqwest::Client::new();
    let url = format!("http://{addr}/score/text");
    let status = |body: serde_json::Value| {
        let req = client.post(&url).json(&body);
        async move { req.send().await.unwrap().status() }
    };
    assert_eq!(status(serde_json::json!({"input_text": ""})).await, StatusCode::BAD_REQUEST);
    assert_eq!(status(serde_json::json!({"input_text": []})).await, StatusCode::BAD_REQUEST);
    assert_eq!(status(serde_json::json!({"text": "x"})).await, StatusCode::BAD_REQUEST);
    let huge = "a ".repeat(MAX_BODY_BYTES);
    assert_eq!(
        status(serde_json::json!({ "input_text": huge })).await,
        StatusCode::PAYLOAD_TOO_LARGE
    );
}

#[tokio::test]
async fn health_reflects_model() {
    let model = scorer();
    let loaded = start(Some(model.clone())).await;
    let empty = start(None).await;
    let r = reqwest::get(format!("http://{loaded}/healthz")).await.unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    let h: Health = r.json().await.unwrap();
    assert_eq!(h.model.unwrap().config_hash, model.config_hash());

    let r = reqwest::get(format!("http://{empty}/healthz")).await.unwrap();
    assert_eq!(r.status(), StatusCode::SERVICE_UNAVAILABLE);
    let r = reqwest::Client::new()
        .post(format!("http://{empty}/score/text"))
        .json(&serde_json::json!({"input_text": "hi"}))
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::SERVICE_UNAVAILABLE);
}
