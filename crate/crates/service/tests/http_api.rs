mod common;

use std::time::{Duration, Instant};

use common::{assert_error, quick_config, Api};
use kohdesign::criteria::Criterion;
use kohdesign::design_loop::Mode;
use kohdesign::koh::McmcConfig;
use kohdesign_service::http::Server;
use kohdesign_service::session::SessionRecord;
use kohdesign_service::store::Store;
use serde_json::{json, Value};

fn server() -> (tempfile::TempDir, Server, Api) {
    let dir = tempfile::tempdir().unwrap();
    let server = Server::start("127.0.0.1:0", Store::open(dir.path()).unwrap()).unwrap();
    let api = Api::new(server.url());
    (dir, server, api)
}

fn poll_job(api: &Api, location: &str) -> Value {
    let t0 = Instant::now();
    loop {
        let r = api.get(location);
        assert_eq!(r.status, 200, "{}", r.text);
        if r.body["status"] != "running" {
            return r.body;
        }
        assert!(t0.elapsed() < Duration::from_secs(300), "job did not finish");
        std::thread::sleep(Duration::from_millis(20));
    }
}

#[test]
fn adaptive_lifecycle() {
    let (_dir, _server, api) = server();
    assert_eq!(api.get("/health").body["status"], "ok");
    let id = api.create(&quick_config(Criterion::MiCx, Mode::Ade, 3), 11);

    let s = api.post(&format!("/sessions/{id}/suggest"), &json!({}));
    assert_eq!(s.status, 200, "{}", s.text);
    let c = s.body["candidate_index"].as_u64().unwrap();
    assert_eq!(s.body["scores"].as_array().unwrap().len(), 50);

    let o = api.post(&format!("/sessions/{id}/observe"), &json!({ "candidate_index": c, "y_new": [1.25] }));
    assert_eq!(o.status, 200, "{}", o.text);
    assert_eq!(o.body["round"], 1);
    assert_eq!(o.body["suggested_index"], c);
    assert_eq!(o.body["budget_left"], 2);

    let state = api.get(&format!("/sessions/{id}"));
    assert_eq!(state.status, 200);
    let rec: SessionRecord = serde_json::from_str(&state.text).unwrap();
    assert_eq!(rec.round, 1);
    assert_eq!(rec.selected.len(), 1);
    assert_eq!(rec.selected[0].observation, Some(vec![1.25]));
    assert_eq!(rec.model.data.n_field(), 6);
    assert!(rec.pending.is_none());
    assert!(!rec.remaining.contains(&(c as usize)));
    assert_eq!(rec.history.len(), 1);

    let m = api.get(&format!("/sessions/{id}/metrics"));
    assert_eq!(m.body["metrics"].as_array().unwrap().len(), 2);

    let band = api.get(&format!("/sessions/{id}/predictive?grid=-1.5,0,2.5,6"));
    assert_eq!(band.status, 200, "{}", band.text);
    for t in ["mean", "lower95", "upper95"] {
        assert_eq!(band.body[t][0].as_array().unwrap().len(), 4);
    }
    for i in 0..4 {
        let (lo, mu, hi) = (band.body["lower95"][0][i].as_f64().unwrap(), band.body["mean"][0][i].as_f64().unwrap(), band.body["upper95"][0][i].as_f64().unwrap());
        assert!(lo < mu && mu < hi);
    }
    let full = api.get(&format!("/sessions/{id}/predictive"));
    assert_eq!(full.body["grid"].as_array().unwrap().len(), rec.model.prediction_grid.len());

    let list = api.get("/sessions");
    assert_eq!(list.body.as_array().unwrap().len(), 1);
}

#[test]
fn suggest_is_idempotent_until_observe() {
    let (_dir, _server, api) = server();
    let id = api.create(&quick_config(Criterion::ImspeCx, Mode::Ade, 3), 3);
    let path = format!("/sessions/{id}/suggest");
    let a = api.post_raw(&path, "");
    let b = api.post(&path, &json!({}));
    assert_eq!(a.status, 200, "{}", a.text);
    assert_eq!(a.text, b.text);

    let other = api.post(&path, &json!({ "alpha": 0.0 }));
    assert_eq!(other.status, 200);
    assert_eq!(other.body["alpha"], 0.0);
    assert!(other.body["scores"][0]["hybrid"].is_null());
    let again = api.post(&path, &json!({ "alpha": 0.0 }));
    assert_eq!(other.text, again.text);

    let c = other.body["candidate_index"].as_u64().unwrap();
    api.post(&format!("/sessions/{id}/observe"), &json!({ "candidate_index": c, "y_new": [0.5] }));
    let next = api.post(&path, &json!({}));
    assert_eq!(next.body["round"], 1);
    assert!(next.body["scores"].as_array().unwrap().iter().all(|s| s["candidate_index"] != c));
}

#[test]
fn error_responses() {
    let (_dir, _server, api) = server();
    assert_error(&api.get("/sessions/0123-abcd"), 404, "not_found");
    assert_error(&api.get("/sessions/..%2Fetc"), 404, "not_found");
    assert_error(&api.post("/sessions/0123/suggest", &json!({})), 404, "not_found");
    assert_error(&api.get("/nowhere"), 404, "not_found");
    assert_error(&api.post_raw("/sessions", "{not json"), 422, "invalid_body");
    assert_error(&api.post("/sessions", &json!({ "scenario": "nowhere.json" })), 422, "invalid_body");
    assert_error(&api.post("/sessions", &json!({ "scenario": "toy", "config": { "budget": 1000 } })), 422, "invalid_config");
    assert_error(&api.post("/sessions", &json!({ "scenario": "toy", "colour": 1 })), 422, "invalid_body");

    let id = api.create(&quick_config(Criterion::Maximin, Mode::Ade, 2), 5);
    let observe = format!("/sessions/{id}/observe");
    assert_error(&api.post(&observe, &json!({ "candidate_index": 0, "y_new": [1.0] })), 409, "no_pending_suggestion");

    let s = api.post(&format!("/sessions/{id}/suggest"), &json!({}));
    let c = s.body["candidate_index"].as_u64().unwrap();
    assert_error(&api.post(&format!("/sessions/{id}/suggest"), &json!({ "alpha": 1.5 })), 422, "invalid_body");
    assert_error(&api.post(&observe, &json!({ "candidate_index": 50, "y_new": [1.0] })), 409, "candidate_unavailable");
    assert_error(&api.post(&observe, &json!({ "y_new": [1.0] })), 422, "invalid_body");
    assert_error(&api.post(&observe, &json!({ "candidate_index": c })), 422, "invalid_body");
    assert_error(&api.post(&observe, &json!({ "candidate_index": c, "y_new": [1.0, 2.0] })), 422, "invalid_body");
    assert_error(&api.post(&observe, &json!({ "candidate_index": -1, "y_new": [1.0] })), 422, "invalid_body");
    assert_error(&api.get(&format!("/sessions/{id}/predictive?grid=1,x")), 422, "invalid_body");
    assert_error(&api.get(&format!("/sessions/{id}/jobs/123")), 404, "not_found");

    assert_eq!(api.post(&observe, &json!({ "candidate_index": c, "y_new": [1.0] })).status, 200);
    assert_error(&api.post(&observe, &json!({ "candidate_index": c, "y_new": [1.0] })), 409, "no_pending_suggestion");
    api.post(&format!("/sessions/{id}/suggest"), &json!({}));
    assert_error(&api.post(&observe, &json!({ "candidate_index": c, "y_new": [1.0] })), 409, "candidate_unavailable");

    let s2 = api.post(&format!("/sessions/{id}/suggest"), &json!({}));
    let c2 = s2.body["candidate_index"].as_u64().unwrap();
    assert_eq!(api.post(&observe, &json!({ "candidate_index": c2, "y_new": [2.0] })).status, 200);
    assert_error(&api.post(&format!("/sessions/{id}/suggest"), &json!({})), 409, "campaign_finished");
}

#[test]
fn override_commits_a_different_candidate() {
    let (_dir, _server, api) = server();
    let id = api.create(&quick_config(Criterion::Maximin, Mode::Ade, 2), 2);
    let s = api.post(&format!("/sessions/{id}/suggest"), &json!({}));
    let suggested = s.body["candidate_index"].as_u64().unwrap();
    let chosen = if suggested == 7 { 8 } else { 7 };
    let o = api.post(&format!("/sessions/{id}/observe"), &json!({ "candidate_index": chosen, "y_new": [0.0] }));
    assert_eq!(o.body["candidate_index"], chosen);
    assert_eq!(o.body["suggested_index"], suggested);
}

#[test]
fn sequential_sessions_take_no_observation() {
    let (_dir, _server, api) = server();
    let id = api.create(&quick_config(Criterion::Imspe, Mode::Sde, 2), 4);
    let s = api.post(&format!("/sessions/{id}/suggest"), &json!({}));
    let c = s.body["candidate_index"].as_u64().unwrap();
    let observe = format!("/sessions/{id}/observe");
    assert_error(&api.post(&observe, &json!({ "candidate_index": c, "y_new": [1.0] })), 422, "invalid_body");
    let before = api.get(&format!("/sessions/{id}/predictive"));
    let o = api.post(&observe, &json!({ "candidate_index": c }));
    assert_eq!(o.status, 200, "{}", o.text);
    assert!(o.body["observation"].is_null());
    let after = api.get(&format!("/sessions/{id}/predictive"));
    assert_eq!(before.body["mean"], after.body["mean"]);
    let width = |b: &Value| -> f64 {
        let (lo, hi) = (b["lower95"][0].as_array().unwrap(), b["upper95"][0].as_array().unwrap());
        lo.iter().zip(hi).map(|(l, h)| h.as_f64().unwrap() - l.as_f64().unwrap()).sum()
    };
    assert!(width(&after.body) < width(&before.body));
}

#[test]
fn async_jobs_complete_and_health_stays_responsive() {
    let (_dir, _server, api) = server();
    let mut cfg = quick_config(Criterion::MiCx, Mode::Ade, 2);
    cfg.mcmc = McmcConfig::default();
    let id = api.create(&cfg, 8);

    let r = api.post(&format!("/sessions/{id}/suggest"), &json!({ "async": true }));
    assert_eq!(r.status, 202, "{}", r.text);
    assert_eq!(r.body["kind"], "suggest");
    let job = poll_job(&api, &format!("/sessions/{id}/jobs/{}", r.body["job_id"].as_str().unwrap()));
    assert_eq!(job["status"], "done");
    let sync = api.post(&format!("/sessions/{id}/suggest"), &json!({}));
    assert_eq!(job["result"], sync.body);

    let c = sync.body["candidate_index"].as_u64().unwrap();
    let r = api.post(&format!("/sessions/{id}/observe"), &json!({ "candidate_index": c, "y_new": [3.0], "async": true }));
    assert_eq!(r.status, 202);
    let location = format!("/sessions/{id}/jobs/{}", r.body["job_id"].as_str().unwrap());
    let t0 = Instant::now();
    assert_eq!(api.get("/health").status, 200);
    let state = api.get(&format!("/sessions/{id}"));
    assert_eq!(state.status, 200);
    let health_secs = t0.elapsed().as_secs_f64();
    let job = poll_job(&api, &location);
    assert_eq!(job["status"], "done", "{job}");
    assert_eq!(job["result"]["round"], 1);
    let total_secs = t0.elapsed().as_secs_f64();
    assert!(health_secs < 0.5 * total_secs, "reads waited for the refit: {health_secs} of {total_secs}");

    let failed = api.post(&format!("/sessions/{id}/observe"), &json!({ "candidate_index": c, "y_new": [3.0], "async": true }));
    let job = poll_job(&api, &format!("/sessions/{id}/jobs/{}", failed.body["job_id"].as_str().unwrap()));
    assert_eq!(job["status"], "failed");
    assert_eq!(job["error"]["code"], "no_pending_suggestion");
}

#[test]
fn restart_preserves_state_and_continues_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(Criterion::MiCx, Mode::Ade, 3);
    let first = Server::start("127.0.0.1:0", Store::open(dir.path()).unwrap()).unwrap();
    let api = Api::new(first.url());
    let id = api.create(&cfg, 21);
    let s = api.post(&format!("/sessions/{id}/suggest"), &json!({}));
    api.post(&format!("/sessions/{id}/observe"), &json!({ "candidate_index": s.body["candidate_index"], "y_new": [2.5] }));
    let before = api.get(&format!("/sessions/{id}"));
    let next_before = api.post(&format!("/sessions/{id}/suggest"), &json!({}));
    let state_with_pending = api.get(&format!("/sessions/{id}"));
    first.stop();

    let second = Server::start("127.0.0.1:0", Store::open(dir.path()).unwrap()).unwrap();
    let api = Api::new(second.url());
    let after = api.get(&format!("/sessions/{id}"));
    assert_eq!(state_with_pending.text, after.text);
    let rec_before: SessionRecord = serde_json::from_str(&before.text).unwrap();
    let rec_after: SessionRecord = serde_json::from_str(&after.text).unwrap();
    assert_eq!(rec_before.model, rec_after.model);
    assert_eq!(api.post(&format!("/sessions/{id}/suggest"), &json!({})).text, next_before.text);

    // Without the stored suggestion the rebuilt state must score identically.
    let mut rec = rec_after.clone();
    rec.pending = None;
    Store::open(dir.path()).unwrap().save(&rec).unwrap();
    second.stop();
    let third = Server::start("127.0.0.1:0", Store::open(dir.path()).unwrap()).unwrap();
    let api = Api::new(third.url());
    assert_eq!(api.post(&format!("/sessions/{id}/suggest"), &json!({})).body["scores"], next_before.body["scores"]);
}

#[test]
fn session_records_round_trip_bit_exactly() {
    let (dir, _server, api) = server();
    let id = api.create(&quick_config(Criterion::Imspe, Mode::Ade, 2), 9);
    let s = api.post(&format!("/sessions/{id}/suggest"), &json!({}));
    api.post(&format!("/sessions/{id}/observe"), &json!({ "candidate_index": s.body["candidate_index"], "y_new": [0.1 + 0.2] }));
    let text = std::fs::read_to_string(dir.path().join(format!("{id}.json"))).unwrap();
    let rec: SessionRecord = serde_json::from_str(&text).unwrap();
    assert_eq!(serde_json::to_string(&rec).unwrap(), text);
    assert_eq!(rec.selected[0].observation.as_ref().unwrap()[0].to_bits(), (0.1f64 + 0.2).to_bits());
    let theta: Vec<u64> = rec.model.posterior.iter().map(|w| w.theta[0].to_bits()).collect();
    let again: SessionRecord = serde_json::from_str(&serde_json::to_string(&rec).unwrap()).unwrap();
    assert_eq!(theta, again.model.posterior.iter().map(|w| w.theta[0].to_bits()).collect::<Vec<_>>());
    assert_eq!(rec, again);
}
