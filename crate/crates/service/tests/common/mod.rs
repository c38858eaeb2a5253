#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Stdio};

use kohdesign::criteria::{Criterion, FimConfig, NmcConfig};
use kohdesign::design_loop::{CampaignConfig, Mode};
use kohdesign::gmm::CompressionConfig;
use kohdesign::koh::McmcConfig;
use serde_json::{json, Value};

pub const BIN: &str = env!("CARGO_BIN_EXE_kohdesign");

/// Small samplers and Monte Carlo sizes so that a round takes well under a
/// second on the toy scenario.
pub fn quick_config(criterion: Criterion, mode: Mode, budget: usize) -> CampaignConfig {
    let mcmc = McmcConfig { burn_in: 300, draws: 40, ..Default::default() };
    CampaignConfig {
        criterion,
        mode,
        budget,
        nmc: NmcConfig { outer_s: 400, ..Default::default() },
        compression: Some(CompressionConfig { j0: 20, j_target: 8, ..Default::default() }),
        stage1: mcmc.clone(),
        mcmc,
        fim: FimConfig { max_samples: Some(5), ..Default::default() },
        metric_samples: 200,
        ..Default::default()
    }
}

pub fn write_config(dir: &Path, cfg: &CampaignConfig) -> std::path::PathBuf {
    let path = dir.join("campaign.json");
    std::fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

pub struct Api {
    pub base: String,
    pub client: reqwest::blocking::Client,
}

pub struct Reply {
    pub status: u16,
    pub body: Value,
    pub text: String,
}

impl Api {
    pub fn new(base: String) -> Self {
        let client = reqwest::blocking::Client::builder().timeout(std::time::Duration::from_secs(600)).build().unwrap();
        Self { base, client }
    }

    fn finish(r: reqwest::blocking::Response) -> Reply {
        let status = r.status().as_u16();
        let text = r.text().unwrap();
        let body = serde_json::from_str(&text).unwrap_or(Value::Null);
        Reply { status, body, text }
    }

    pub fn get(&self, path: &str) -> Reply {
        Self::finish(self.client.get(format!("{}{path}", self.base)).send().unwrap())
    }

    pub fn post(&self, path: &str, body: &Value) -> Reply {
        Self::finish(self.client.post(format!("{}{path}", self.base)).json(body).send().unwrap())
    }

    pub fn post_raw(&self, path: &str, body: &str) -> Reply {
        Self::finish(self.client.post(format!("{}{path}", self.base)).body(body.to_string()).send().unwrap())
    }

    pub fn create(&self, cfg: &CampaignConfig, seed: u64) -> String {
        let r = self.post("/sessions", &json!({ "scenario": "toy", "config": cfg, "seed": seed }));
        assert_eq!(r.status, 201, "{}", r.text);
        r.body["session_id"].as_str().unwrap().to_string()
    }
}

pub fn assert_error(r: &Reply, status: u16, code: &str) {
    assert_eq!(r.status, status, "{}", r.text);
    assert_eq!(r.body["code"], code, "{}", r.text);
    assert!(r.body["message"].is_string());
    assert!(r.body.as_object().unwrap().contains_key("detail"));
}

/// The service binary serving `dir` on a free port.
pub struct ServiceProcess {
    pub child: Child,
    pub url: String,
}

impl ServiceProcess {
    pub fn spawn(dir: &Path) -> Self {
        let mut child = Command::new(BIN)
            .args(["serve", "--bind", "127.0.0.1:0"])
            .env("KOHDESIGN_DATA_DIR", dir)
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        let url = line.trim().strip_prefix("listening on ").expect("service announces its address").to_string();
        Self { child, url }
    }

    /// Kills the process without letting it shut down.
    pub fn kill(mut self) {
        self.child.kill().unwrap();
        self.child.wait().unwrap();
    }
}

impl Drop for ServiceProcess {
    fn drop(&mut self) {
        self.child.kill().ok();
        self.child.wait().ok();
    }
}
