//! The `kohdesign` command line.

use std::ffi::OsString;
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use kohdesign::criteria::Criterion;
use kohdesign::design_loop::{
    run_campaign_from, run_campaign_with, suggest_next, write_scores_csv, CampaignConfig, CampaignResult, Mode, RoundRecord,
    RoundTiming, TimingSummary,
};
use kohdesign::gmm::CompressionConfig;
use kohdesign::koh::KohModelState;
use kohdesign::scenarios::ScenarioConfig;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{ErrorBody, Result, ServiceError};
use crate::http;
use crate::setup::{load_config, prepare, ModelDocument, Prepared, SCHEMA_VERSION};
use crate::store::Store;

#[derive(Debug, Parser)]
#[command(name = "kohdesign", version, about = "Sequential Bayesian design of calibration experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the two-stage posterior and write model.json.
    Fit(CommonArgs),
    /// Run a sequential (sde) or adaptive (ade) design campaign.
    Design(DesignArgs),
    /// Score the candidates once and report the table.
    Score(CommonArgs),
    /// Time campaigns per criterion.
    Bench(BenchArgs),
    /// Predictive MSE and CRPS of the fitted model.
    Metrics(CommonArgs),
    /// Serve the HTTP session API.
    Serve(ServeArgs),
}

#[derive(Clone, Debug, Default, Args)]
pub struct CommonArgs {
    /// Scenario name (toy, jakstat) or a scenario config file.
    #[arg(long, default_value = "toy")]
    pub scenario: String,
    /// Campaign configuration (TOML or JSON); flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Start from a model written by `fit` instead of refitting.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub criterion: Option<Criterion>,
    #[arg(long)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Seed for the scenario data and every campaign stream.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, overrides_with = "no_compress")]
    pub compress: bool,
    #[arg(long, overrides_with = "compress")]
    pub no_compress: bool,
    /// Posterior draws kept by the stage-2 sampler.
    #[arg(long)]
    pub draws: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    /// Predictive draws per metric evaluation.
    #[arg(long)]
    pub metric_samples: Option<usize>,
    /// Outer Monte Carlo samples for mutual information.
    #[arg(long)]
    pub outer_samples: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DesignArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Adaptive mode: draw observations from the scenario's simulated
    /// truth instead of prompting on stdin.
    #[arg(long)]
    pub simulate: bool,
    /// Sequential mode: also report metrics as if the selections were
    /// observed.
    #[arg(long)]
    pub posthoc: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Comma-separated criteria to time; defaults to --criterion.
    #[arg(long, value_delimiter = ',')]
    pub criteria: Vec<Criterion>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "KOHDESIGN_BIND", default_value = "127.0.0.1:8080")]
    pub bind: String,
    #[arg(long, env = "KOHDESIGN_DATA_DIR", default_value = "kohdesign-sessions")]
    pub data_dir: PathBuf,
}

/// Campaign result as written to result.json: wall-clock fields are moved
/// to timing.json so equal runs produce identical files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultDocument {
    pub schema_version: u32,
    pub scenario: ScenarioConfig,
    pub result: CampaignResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingDocument {
    pub schema_version: u32,
    pub summary: TimingSummary,
    pub rounds: Vec<RoundTiming>,
}

/// One row of the bench table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub criterion: String,
    pub compressed: bool,
    pub rounds: usize,
    pub scoring_secs: f64,
    pub commit_secs: f64,
    pub metrics_secs: f64,
    pub total_secs: f64,
}

impl CommonArgs {
    fn campaign_config(&self) -> Result<CampaignConfig> {
        let mut c = match &self.config {
            Some(p) => load_config(p)?,
            None => CampaignConfig::default(),
        };
        if let Some(v) = self.criterion {
            c.criterion = v;
        }
        if let Some(v) = self.mode {
            c.mode = v;
        }
        if let Some(v) = self.budget {
            c.budget = v;
        }
        if let Some(v) = self.alpha {
            c.alpha = Some(v);
        }
        if self.compress && c.compression.is_none() {
            c.compression = Some(CompressionConfig::default());
        }
        if self.no_compress {
            c.compression = None;
        }
        if let Some(v) = self.draws {
            c.mcmc.draws = v;
        }
        if let Some(v) = self.burn_in {
            c.mcmc.burn_in = v;
        }
        if let Some(v) = self.metric_samples {
            c.metric_samples = v;
        }
        if let Some(v) = self.outer_samples {
            c.nmc.outer_s = v;
        }
        Ok(c)
    }

    /// Scenario, resolved configuration and initial model. A model file
    /// fixes the scenario it was fitted on.
    fn prepare(&self) -> Result<(Prepared, KohModelState)> {
        let cfg = self.campaign_config()?;
        match &self.model {
            Some(path) => {
                let doc = ModelDocument::load(path)?;
                let mut cfg = cfg;
                if let Some(s) = self.seed {
                    cfg.seed = s;
                }
                let p = prepare(doc.scenario, cfg, None)?;
                Ok((p, doc.model))
            }
            None => {
                let p = prepare(ScenarioConfig::resolve(&self.scenario)?, cfg, self.seed)?;
                let model = p.fit()?;
                Ok((p, model))
            }
        }
    }

    fn out_dir(&self, default: Option<&str>) -> Result<Option<PathBuf>> {
        let dir = self.out.clone().or_else(|| default.map(PathBuf::from));
        if let Some(d) = &dir {
            fs::create_dir_all(d)?;
        }
        Ok(dir)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn fit(args: &CommonArgs) -> Result<()> {
    let (p, model) = args.prepare()?;
    let n = model.posterior.len() as f64;
    let h = model.posterior[0].theta.len();
    let mean: Vec<f64> = (0..h).map(|k| model.posterior.iter().map(|s| s.theta[k]).sum::<f64>() / n).collect();
    let sd: Vec<f64> = (0..h)
        .map(|k| (model.posterior.iter().map(|s| (s.theta[k] - mean[k]).powi(2)).sum::<f64>() / n).sqrt())
        .collect();
    if let Some(dir) = args.out_dir(None)? {
        let doc = ModelDocument { schema_version: SCHEMA_VERSION, scenario: p.scenario_config.clone(), config: p.config.clone(), model: model.clone() };
        write_json(&dir.join("model.json"), &doc)?;
    }
    print_json(&json!({
        "scenario": p.scenario.name(),
        "seed": p.config.seed,
        "draws": model.posterior.len(),
        "theta_mean": mean,
        "theta_sd": sd,
        "phi1": model.phi1,
    }))
}

/// Reads one observation of `p` values per round from `input`.
pub fn prompt_observation<R: BufRead, W: Write>(input: &mut R, prompt: &mut W, round: usize, x: &[f64], p: usize) -> Result<Vec<f64>> {
    loop {
        write!(prompt, "round {}: run the experiment at x = {x:?} and enter {p} value(s): ", round + 1)?;
        prompt.flush()?;
        let mut line = String::new();
        if input.read_line(&mut line)? == 0 {
            writeln!(prompt)?;
            return Err(ServiceError::invalid(format!("stdin closed before the round {} observation", round + 1)));
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            line.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).map(str::parse::<f64>).collect();
        match parsed {
            Ok(y) if y.len() == p && y.iter().all(|v| v.is_finite()) => return Ok(y),
            _ => writeln!(prompt, "expected {p} finite number(s)")?,
        }
    }
}

fn design(args: &DesignArgs) -> Result<()> {
    let (mut p, model) = args.common.prepare()?;
    p.config.posthoc_metrics |= args.posthoc;
    let state = p.initial_state(model)?;
    let result = if p.config.mode == Mode::Ade && !args.simulate {
        let outputs = p.scenario.n_outputs();
        let stdin = std::io::stdin();
        let mut input = stdin.lock();
        let mut respond = |round: usize, x: &[f64]| {
            prompt_observation(&mut input, &mut std::io::stderr(), round, x, outputs).map_err(|e| kohdesign::Error::InvalidConfig(e.to_string()))
        };
        run_campaign_with(&state, &p.config, &p.scenario, &mut respond)?
    } else {
        run_campaign_from(&state, &p.config, &p.scenario)?
    };
    let dir = args.common.out_dir(Some("."))?.expect("design always has an output directory");
    write_outputs(&dir, &p, &result)?;
    print_json(&json!({
        "selected": result.selected_indices(),
        "mse": result.mse_series(),
        "crps": result.crps_series(),
        "out": dir,
    }))
}

/// result.json, selection.json, scores.csv and timing.json.
pub fn write_outputs(dir: &Path, p: &Prepared, result: &CampaignResult) -> Result<()> {
    let doc = ResultDocument { schema_version: SCHEMA_VERSION, scenario: p.scenario_config.clone(), result: result.without_timing() };
    write_json(&dir.join("result.json"), &doc)?;
    write_json(&dir.join("selection.json"), &result.selected)?;
    result.write_scores_csv(fs::File::create(dir.join("scores.csv"))?)?;
    let timing = TimingDocument {
        schema_version: SCHEMA_VERSION,
        summary: result.timing.clone(),
        rounds: result.rounds.iter().map(|r| r.timing.clone()).collect(),
    };
    write_json(&dir.join("timing.json"), &timing)
}

fn score(args: &CommonArgs) -> Result<()> {
    let (p, model) = args.prepare()?;
    let state = p.initial_state(model)?;
    let s = suggest_next(&state, &p.config)?;
    let record = RoundRecord {
        round: 0,
        selected_index: s.candidate_index,
        point: state.candidates[s.candidate_index].clone(),
        observation: None,
        scores: s.scores.clone(),
        std_errors: s.std_errors.clone(),
        mixture_components: s.mixture_components,
        timing: RoundTiming { scoring_secs: s.elapsed_secs, ..Default::default() },
    };
    if let Some(dir) = args.out_dir(None)? {
        write_scores_csv(std::slice::from_ref(&record), fs::File::create(dir.join("scores.csv"))?)?;
        write_json(&dir.join("suggestion.json"), &record)?;
    }
    write_scores_csv(std::slice::from_ref(&record), std::io::stdout().lock())?;
    Ok(())
}

fn bench(args: &BenchArgs) -> Result<()> {
    let (p, model) = args.common.prepare()?;
    let state = p.initial_state(model)?;
    let criteria = if args.criteria.is_empty() { vec![p.config.criterion] } else { args.criteria.clone() };
    let mut rows = Vec::new();
    for c in criteria {
        let cfg = CampaignConfig { criterion: c, mode: Mode::Sde, ..p.config.clone() };
        let r = run_campaign_from(&state, &cfg, &p.scenario)?;
        let t = &r.timing;
        rows.push(BenchRow {
            criterion: c.to_string(),
            compressed: cfg.compression.is_some() && matches!(c, Criterion::Mi | Criterion::MiCx),
            rounds: t.rounds,
            scoring_secs: t.scoring_total_secs,
            commit_secs: t.commit_total_secs,
            metrics_secs: t.metrics_total_secs,
            total_secs: t.wall_secs,
        });
    }
    println!("{:<10} {:>10} {:>6} {:>12} {:>12} {:>12} {:>12}", "criterion", "compressed", "rounds", "scoring_s", "commit_s", "metrics_s", "total_s");
    for r in &rows {
        println!(
            "{:<10} {:>10} {:>6} {:>12.4} {:>12.4} {:>12.4} {:>12.4}",
            r.criterion, r.compressed, r.rounds, r.scoring_secs, r.commit_secs, r.metrics_secs, r.total_secs
        );
    }
    if let Some(dir) = args.common.out_dir(None)? {
        write_json(&dir.join("bench.json"), &rows)?;
    }
    Ok(())
}

fn metrics(args: &CommonArgs) -> Result<()> {
    let (p, model) = args.prepare()?;
    let state = p.initial_state(model)?;
    let m = state.metrics(&p.scenario.truth, p.config.metric_samples, p.config.seed)?;
    if let Some(dir) = args.out_dir(None)? {
        write_json(&dir.join("metrics.json"), &m)?;
    }
    print_json(&m)
}

fn serve(args: &ServeArgs) -> Result<()> {
    let store = Store::open(&args.data_dir)?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&args.bind).await?;
        println!("listening on http://{}", listener.local_addr()?);
        std::io::stdout().flush()?;
        http::serve(listener, http::AppState::new(store), async {
            tokio::signal::ctrl_c().await.ok();
        })
        .await
    })?;
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Fit(a) => fit(a),
        Command::Design(a) => design(a),
        Command::Score(a) => score(a),
        Command::Bench(a) => bench(a),
        Command::Metrics(a) => metrics(a),
        Command::Serve(a) => serve(a),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
/// Failures print an error document on stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init().ok();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let body = ErrorBody { code: "usage".into(), message: e.kind().to_string(), detail: json!({ "usage": e.to_string() }) };
            eprintln!("{}", serde_json::to_string(&body).expect("error body serializes"));
            return 2;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", serde_json::to_string(&e.body()).expect("error body serializes"));
            1
        }
    }
}
