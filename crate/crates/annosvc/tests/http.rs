mod common;

use std::collections::HashSet;
use std::net::SocketAddr;
use std::sync::Arc;

use annosvc::{AnnoService, TaskKind};
use common::catalog;
use reqwest::StatusCode;
use serde_json::{json, Value};

async fn start(svc: AnnoService) -> (String, Arc<AnnoService>) {
    let svc = Arc::new(svc);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr: SocketAddr = listener.local_addr().unwrap();
    let router = annosvc::http::router(svc.clone());
    tokio::spawn(async move { axum::serve(listener, router).await.unwrap() });
    (format!("http://{addr}/api/v1"), svc)
}

async fn session(c: &reqwest::Client, base: &str) -> String {
    let v: Value = c.get(format!("{base}/session/new")).send().await.unwrap().json().await.unwrap();
    v["session_id"].as_str().unwrap().to_string()
}

async fn submit(c: &reqwest::Client, base: &str, body: Value) -> StatusCode {
    c.post(format!("{base}/submit")).json(&body).send().await.unwrap().status()
}

#[tokio::test(flavor = "multi_thread")]
async fn endpoints_and_status_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (svc, _clock) = common::open(catalog(2, &TaskKind::ALL, 1), &dir.path().join("j"));
    let (base, _svc) = start(svc).await;
    let c = reqwest::Client::new();
    let s = session(&c, &base).await;

    let r = c.get(format!("{base}/task?session={s}&kind=similarity_ab")).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    let task: Value = r.json().await.unwrap();
    assert_eq!(task["kind"], "similarity_ab");
    assert_eq!(task["question"], "Which speech sounds more like the reference speaker's style?");
    assert_eq!(task["options"].as_array().unwrap().len(), 5);
    assert_eq!(task["options"][0]["value"], "a2");
    assert_eq!(task["prompt"]["display"], "w0 , w3");
    for key in ["a", "b", "reference"] {
        assert_eq!(task["samples"][key]["kind"], "discrete", "{key}");
    }
    let id = task["task_id"].as_u64().unwrap();

    let r = c.get(format!("{base}/task?session={s}&kind=reading_accuracy")).send().await.unwrap();
    let reading: Value = r.json().await.unwrap();
    assert_eq!(reading["question"], "Is any reading error? (insertion, omission, or mispronunciation)");
    assert!(reading["samples"]["sample"].is_object());
    assert_eq!(reading["options"][1]["label"], "Has Error");

    assert_eq!(
        submit(&c, &base, json!({"task_id": id, "session_id": s, "judgment": "no_error"})).await,
        StatusCode::UNPROCESSABLE_ENTITY
    );
    assert_eq!(
        submit(&c, &base, json!({"task_id": id, "session_id": "ghost", "judgment": "a1"})).await,
        StatusCode::NOT_FOUND
    );
    assert_eq!(
        submit(&c, &base, json!({"task_id": 99, "session_id": s, "judgment": "a1"})).await,
        StatusCode::NOT_FOUND
    );
    assert_eq!(submit(&c, &base, json!({"task_id": id})).await, StatusCode::BAD_REQUEST);
    let r = c.post(format!("{base}/submit")).body("{not json").send().await.unwrap();
    assert_eq!(r.status(), StatusCode::BAD_REQUEST);
    let ok = c
        .post(format!("{base}/submit"))
        .json(&json!({"task_id": id, "session_id": s, "judgment": "a1"}))
        .send()
        .await
        .unwrap();
    assert_eq!(ok.status(), StatusCode::OK);
    assert_eq!(ok.json::<Value>().await.unwrap(), json!({"ok": true}));
    assert_eq!(
        submit(&c, &base, json!({"task_id": id, "session_id": s, "judgment": "b1"})).await,
        StatusCode::CONFLICT
    );

    let r = c.get(format!("{base}/task?kind=cmos_typo&session={s}")).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::BAD_REQUEST);
    let r = c.get(format!("{base}/task?session=ghost")).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::NOT_FOUND);

    for which in ["reading", "cmos", "similarity"] {
        let r = c.get(format!("{base}/aggregate/{which}")).send().await.unwrap();
        assert_eq!(r.status(), StatusCode::OK, "{which}");
    }
    let sim: Value = c.get(format!("{base}/aggregate/similarity")).send().await.unwrap().json().await.unwrap();
    assert_eq!(sim["overall"]["win"], 1);
    let r = c.get(format!("{base}/aggregate/nope")).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::NOT_FOUND);

    let status: Value = c.get(format!("{base}/status")).send().await.unwrap().json().await.unwrap();
    assert_eq!(status["tasks"], 2 * 2 + 2 + 2);
    assert_eq!(status["answered"], 1);

    let export = c.get(format!("{base}/export")).send().await.unwrap().text().await.unwrap();
    assert!(export.starts_with("{\"op\":\"open\""));
    assert!(export.contains("\"judgment\":\"a1\""));
}

#[tokio::test(flavor = "multi_thread")]
async fn no_content_when_exhausted() {
    let dir = tempfile::tempdir().unwrap();
    let (svc, _clock) = common::open(catalog(1, &[TaskKind::NaturalnessCmos], 1), &dir.path().join("j"));
    let (base, _svc) = start(svc).await;
    let c = reqwest::Client::new();
    let s = session(&c, &base).await;
    let task: Value = c.get(format!("{base}/task?session={s}")).send().await.unwrap().json().await.unwrap();
    assert_eq!(
        submit(&c, &base, json!({"task_id": task["task_id"], "session_id": s, "judgment": "tie"})).await,
        StatusCode::OK
    );
    let r = c.get(format!("{base}/task?session={s}")).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::NO_CONTENT);
}

/// 50 raters working concurrently: every task answered exactly once, no
/// rater answers the same group twice, and the journal replays to the same
/// records.
#[tokio::test(flavor = "multi_thread", worker_threads = 8)]
async fn fifty_concurrent_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("j");
    let (svc, _clock) = common::open(catalog(20, &TaskKind::ALL, 3), &path);
    let (base, svc) = start(svc).await;
    let c = reqwest::Client::new();
    let mut handles = Vec::new();
    for _ in 0..50 {
        let (c, base) = (c.clone(), base.clone());
        handles.push(tokio::spawn(async move {
            let s = session(&c, &base).await;
            let mut done = 0;
            loop {
                let r = c.get(format!("{base}/task?session={s}")).send().await.unwrap();
                if r.status() == StatusCode::NO_CONTENT {
                    return done;
                }
                let t: Value = r.json().await.unwrap();
                let j = t["options"][done % t["options"].as_array().unwrap().len()]["value"].clone();
                let st = submit(&c, &base, json!({"task_id": t["task_id"], "session_id": s, "judgment": j})).await;
                assert_eq!(st, StatusCode::OK);
                done += 1;
            }
        }));
    }
    let mut total = 0;
    for h in handles {
        total += h.await.unwrap();
    }
    let tasks = svc.catalog().tasks.len();
    assert_eq!(total, tasks);
    let records = svc.snapshot().records.clone();
    assert_eq!(records.len(), tasks);
    let ids: HashSet<u64> = records.iter().map(|r| r.task).collect();
    assert_eq!(ids.len(), tasks);
    let groups: HashSet<_> = records
        .iter()
        .map(|r| (r.session.clone(), svc.catalog().tasks[r.task as usize].group()))
        .collect();
    assert_eq!(groups.len(), records.len());
    assert!(svc.replication_status().under_replicated.is_empty());

    let catalog = svc.catalog().as_ref().clone();
    drop(svc);
    let (reopened, _clock) = common::open(catalog, &path);
    assert_eq!(reopened.snapshot().records, records);
}
