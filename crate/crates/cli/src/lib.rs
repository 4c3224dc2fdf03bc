//! Operator commands for the AIBOM pipeline and the reviewer HTTP API.
//!
//! Exit codes: 0 success or sealed, 1 usage or input error, 2 fail-closed
//! capture or a failing compliance rule.

pub mod api;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::{SecondsFormat, Utc};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use aibom_core::compliance::{self, default_ruleset, parse_ruleset};
use aibom_core::harness::{self, ReplayOptions, ReplayReport, SessionReport};
use aibom_core::metrics::{decomposed_score, Agreement, ScoreWeights};
use aibom_core::workload::parse_injections;
use aibom_core::{
    Ablation, CaptureStatus, DecomposedScore, DriftInjection, EvaluationContext, Feed, FeedSet, ParityConfig,
    ParityResult, SessionConfig, SessionPolicy, Store, WorkloadSpec,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAIL_CLOSED: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "aibom", version, about = "Capture, seal, replay and audit agentic AIBOM sessions")]
pub struct Cli {
    /// Store root.
    #[arg(long, env = "AIBOM_STORE", default_value = "aibom-store", global = true)]
    pub store: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a workload through the agents and seal the session.
    Capture(RunArgs),
    /// Rebuild a sealed session from its locked AIBOM and compare outputs.
    Replay(ReplayArgs),
    /// Run a workload with each agent disabled in turn.
    Ablate(RunArgs),
    /// Integrity, capture, VEX and reproducibility summary for sessions.
    Report(ReportArgs),
    /// Evaluate the compliance ruleset against a session.
    Comply(ComplyArgs),
    /// Serve the reviewer HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub workload: PathBuf,
    /// JSON array of drift injections.
    #[arg(long)]
    pub inject: Option<PathBuf>,
    /// Advisory feed; repeat for cross-feed corroboration.
    #[arg(long)]
    pub feed: Vec<PathBuf>,
    #[arg(long)]
    pub policy: Option<PathBuf>,
    #[arg(long)]
    pub disable_mcp: bool,
    #[arg(long)]
    pub disable_a2a: bool,
    #[arg(long)]
    pub disable_agntcy: bool,
    #[arg(long)]
    pub session_id: Option<String>,
    /// RFC 3339 session timestamp; now when absent.
    #[arg(long)]
    pub timestamp: Option<String>,
}

#[derive(Debug, Args)]
pub struct ParityArgs {
    #[arg(long)]
    pub epsilon_deterministic: Option<f64>,
    #[arg(long)]
    pub epsilon_float: Option<f64>,
}

impl ParityArgs {
    fn config(&self) -> ParityConfig {
        let d = ParityConfig::default();
        ParityConfig {
            epsilon_deterministic: self.epsilon_deterministic.unwrap_or(d.epsilon_deterministic),
            epsilon_float: self.epsilon_float.unwrap_or(d.epsilon_float),
        }
    }
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub session_id: String,
    #[arg(long)]
    pub feed: Vec<PathBuf>,
    /// Registry profile directory; the store registry when absent.
    #[arg(long)]
    pub registry: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub runs: u32,
    /// Drift applied to the replay runs only.
    #[arg(long)]
    pub inject: Option<PathBuf>,
    #[command(flatten)]
    pub parity: ParityArgs,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(required = true)]
    pub session_ids: Vec<String>,
    #[arg(long)]
    pub feed: Vec<PathBuf>,
    #[arg(long)]
    pub registry: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub runs: u32,
    #[arg(long)]
    pub policy: Option<PathBuf>,
    #[command(flatten)]
    pub parity: ParityArgs,
}

#[derive(Debug, Args)]
pub struct ComplyArgs {
    pub session_id: String,
    #[arg(long)]
    pub policy: Option<PathBuf>,
    /// Ruleset JSON; the bundled default when absent.
    #[arg(long)]
    pub ruleset: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub bind: String,
    #[arg(long)]
    pub policy: Option<PathBuf>,
    /// Tokens accepted for auditor views; two distinct ones are required.
    #[arg(long = "auditor-token", env = "AIBOM_AUDITOR_TOKENS", value_delimiter = ',')]
    pub auditor_tokens: Vec<String>,
    /// Default view tier for document requests without `tier`.
    #[arg(long, default_value = "reviewer")]
    pub tier: String,
}

/// Run a parsed command, writing JSON to `out` and diagnostics to `err`.
pub fn execute(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    match dispatch(cli, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {}", error_chain(&e));
            EXIT_USAGE
        }
    }
}

/// Cause chain joined by `: `, skipping causes a parent already quotes.
fn error_chain(e: &anyhow::Error) -> String {
    let mut text = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if text.contains(&msg) {
            continue;
        }
        if !text.is_empty() {
            text.push_str(": ");
        }
        text.push_str(&msg);
    }
    text
}

fn dispatch(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    match &cli.command {
        Command::Capture(args) => capture(cli, args, out, err),
        Command::Replay(args) => replay(cli, args, out, err),
        Command::Ablate(args) => ablate(args, out, err),
        Command::Report(args) => report(cli, args, out, err),
        Command::Comply(args) => comply(cli, args, out, err),
        Command::Serve(args) => serve(cli, args, err),
    }
}

fn print_json<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut *out, value)?;
    writeln!(out)?;
    Ok(())
}

pub fn load_feeds(paths: &[PathBuf]) -> Result<FeedSet> {
    let feeds = paths
        .iter()
        .map(|p| Feed::load(p).map_err(anyhow::Error::from))
        .collect::<Result<Vec<_>>>()?;
    Ok(FeedSet::new(&feeds))
}

pub fn load_policy(path: Option<&Path>) -> Result<SessionPolicy> {
    match path {
        None => Ok(SessionPolicy::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("policy {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("policy {}", p.display()))
        }
    }
}

fn load_injections(path: Option<&Path>) -> Result<Vec<DriftInjection>> {
    match path {
        None => Ok(vec![]),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("injections {}", p.display()))?;
            Ok(parse_injections(&text)?)
        }
    }
}

fn open_store(cli: &Cli) -> Result<Store> {
    Store::open(&cli.store).with_context(|| format!("store {}", cli.store.display()))
}

struct Prepared {
    spec: WorkloadSpec,
    feeds: FeedSet,
    config: SessionConfig,
}

fn prepare(args: &RunArgs) -> Result<Prepared> {
    let text = fs::read_to_string(&args.workload).with_context(|| format!("workload {}", args.workload.display()))?;
    let spec = WorkloadSpec::from_jsonl(&text).with_context(|| format!("workload {}", args.workload.display()))?;
    let feeds = load_feeds(&args.feed)?;
    let timestamp = match &args.timestamp {
        Some(t) => {
            chrono::DateTime::parse_from_rfc3339(t).with_context(|| format!("timestamp {t}"))?;
            t.clone()
        }
        None => Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true),
    };
    let session_id = args
        .session_id
        .clone()
        .unwrap_or_else(|| format!("sess-{}", &uuid::Uuid::new_v4().simple().to_string()[..12]));
    let mut config = SessionConfig::new(session_id, timestamp);
    config.policy = load_policy(args.policy.as_deref())?;
    config.injections = load_injections(args.inject.as_deref())?;
    config.ablation = Ablation {
        disable_mcp: args.disable_mcp,
        disable_a2a: args.disable_a2a,
        disable_agntcy: args.disable_agntcy,
    };
    Ok(Prepared { spec, feeds, config })
}

fn capture(cli: &Cli, args: &RunArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let p = prepare(args)?;
    let store = open_store(cli)?;
    let report = harness::capture(&store, &p.spec, &p.feeds, &p.config)?;
    print_json(out, &report)?;
    Ok(match report.status {
        CaptureStatus::Sealed => EXIT_OK,
        CaptureStatus::FailClosed => {
            writeln!(
                err,
                "session {} failed closed: {}",
                report.session_id,
                report.reason.as_deref().unwrap_or("unspecified")
            )?;
            EXIT_FAIL_CLOSED
        }
    })
}

fn replay(cli: &Cli, args: &ReplayArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let store = open_store(cli)?;
    if args.feed.is_empty() {
        writeln!(err, "warning: no advisory feeds; replay VEX is compared against an empty feed set")?;
    }
    let options = ReplayOptions {
        registry: args.registry.clone(),
        runs: args.runs,
        parity: args.parity.config(),
        weights: ScoreWeights::default(),
        injections: load_injections(args.inject.as_deref())?,
    };
    let report = harness::replay(&store, &args.session_id, &load_feeds(&args.feed)?, &options)?;
    print_json(out, &report)?;
    writeln!(err, "{}", replay_summary(&report))?;
    Ok(EXIT_OK)
}

fn replay_summary(r: &ReplayReport) -> String {
    let pct = |p: Option<f64>| p.map_or("n/a".to_string(), |p| format!("{p:.1}%"));
    let diffs = r.runs.iter().filter(|run| !run.sbom_diff.is_empty()).count();
    format!(
        "{}: {} runs, ep {}, sp {}, sbom diffs in {} runs",
        r.session_id,
        r.runs.len(),
        pct(r.score.ep.pct),
        pct(r.score.sp.pct),
        diffs
    )
}

fn ablate(args: &RunArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let p = prepare(args)?;
    let report = harness::ablate(&p.spec, &p.feeds, &p.config)?;
    print_json(out, &report)?;
    let full = report.run("full").expect("full run");
    let full_fnr = full.metrics.as_ref().map(|m| m.fnr);
    for run in &report.runs {
        let fnr = run.metrics.as_ref().map(|m| m.fnr);
        let delta = match (fnr, full_fnr) {
            (Some(a), Some(b)) => format!("{:+.4}", a - b),
            _ => "n/a".into(),
        };
        writeln!(
            err,
            "{:<10} fnr {:<8} delta {:<8} vex {}/{} matches{}",
            run.variant,
            fnr.map_or("n/a".into(), |f| format!("{f:.4}")),
            delta,
            run.vex_assertions,
            run.advisory_matches,
            if run.fail_closed { " (fail-closed)" } else { "" }
        )?;
    }
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
struct ReportEntry {
    #[serde(flatten)]
    session: SessionReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    replay: Option<ReplayReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    replay_error: Option<String>,
}

#[derive(Debug, Serialize)]
struct Report {
    sessions: Vec<ReportEntry>,
    /// Four-axis score over every replay of every sealed session.
    score: Option<DecomposedScore>,
}

fn report(cli: &Cli, args: &ReportArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let store = open_store(cli)?;
    let feeds = load_feeds(&args.feed)?;
    if args.feed.is_empty() {
        writeln!(err, "warning: no advisory feeds; replay VEX is compared against an empty feed set")?;
    }
    let ctx = EvaluationContext {
        active_policy_version: load_policy(args.policy.as_deref())?.policy_version,
    };
    let options = ReplayOptions {
        registry: args.registry.clone(),
        runs: args.runs,
        parity: args.parity.config(),
        ..ReplayOptions::default()
    };
    let mut entries = Vec::new();
    let (mut parities, mut env, mut vex): (Vec<ParityResult>, Vec<Agreement>, Vec<Agreement>) = Default::default();
    for id in &args.session_ids {
        let session = harness::report(&store, id, &ctx)?;
        let (replay, replay_error) = match session.status {
            CaptureStatus::FailClosed => (None, None),
            CaptureStatus::Sealed => match harness::replay(&store, id, &feeds, &options) {
                Ok(r) => {
                    for run in &r.runs {
                        parities.push(run.parity.clone());
                        env.push(run.env_state);
                        vex.push(run.vex);
                    }
                    (Some(r), None)
                }
                Err(e) => (None, Some(e.to_string())),
            },
        };
        let failed = session.compliance.iter().filter(|r| !r.passed()).count();
        let line = match (&replay, &replay_error) {
            (Some(r), _) => replay_summary(r),
            (None, Some(e)) => format!("{id}: replay failed: {e}"),
            (None, None) => format!("{id}: failed closed, not replayed"),
        };
        writeln!(err, "{line}; {failed} compliance rules failing")?;
        entries.push(ReportEntry {
            session,
            replay,
            replay_error,
        });
    }
    let score = if parities.is_empty() {
        None
    } else {
        Some(decomposed_score(&parities, &env, &vex, ScoreWeights::default())?)
    };
    if let Some(s) = &score {
        writeln!(err, "{}", score_summary(s))?;
    }
    print_json(out, &Report { sessions: entries, score })?;
    Ok(EXIT_OK)
}

fn score_summary(s: &DecomposedScore) -> String {
    let axis = |name: &str, a: &aibom_core::metrics::AxisScore| match (a.pct, a.wilson) {
        (Some(p), Some((lo, hi))) => format!("{name} {p:.1}% [{lo:.3}, {hi:.3}]"),
        _ => format!("{name} n/a"),
    };
    format!(
        "{}; {}; {}; {}; composite {}",
        axis("ep", &s.ep),
        axis("sp", &s.sp),
        axis("env", &s.env_state_match),
        axis("vex", &s.vex_alignment),
        s.composite_pct.map_or("n/a".into(), |c| format!("{c:.1}%"))
    )
}

fn comply(cli: &Cli, args: &ComplyArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let store = open_store(cli)?;
    let rules = match &args.ruleset {
        None => default_ruleset(),
        Some(p) => parse_ruleset(&fs::read_to_string(p).with_context(|| format!("ruleset {}", p.display()))?)?,
    };
    let ctx = EvaluationContext {
        active_policy_version: load_policy(args.policy.as_deref())?.policy_version,
    };
    let results = compliance::evaluate(&rules, &store, &args.session_id, &ctx)?;
    print_json(out, &results)?;
    let failing: Vec<&str> = results.iter().filter(|r| !r.passed()).map(|r| r.rule_id.as_str()).collect();
    if failing.is_empty() {
        return Ok(EXIT_OK);
    }
    writeln!(err, "failing rules: {}", failing.join(", "))?;
    Ok(EXIT_FAIL_CLOSED)
}

fn serve(cli: &Cli, args: &ServeArgs, err: &mut dyn Write) -> Result<i32> {
    let store = open_store(cli)?;
    let default_tier = args.tier.parse().map_err(anyhow::Error::msg)?;
    if args.auditor_tokens.len() == 1 {
        bail!("auditor views need at least two tokens");
    }
    let state = api::AppState::new(
        store,
        EvaluationContext {
            active_policy_version: load_policy(args.policy.as_deref())?.policy_version,
        },
        args.auditor_tokens.clone(),
        default_tier,
    );
    let addr = format!("{}:{}", args.bind, args.port);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .with_context(|| format!("bind {addr}"))?;
        writeln!(err, "serving {} on http://{addr}", cli.store.display())?;
        axum::serve(listener, api::router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok::<_, anyhow::Error>(())
    })?;
    Ok(EXIT_OK)
}
