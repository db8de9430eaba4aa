//! Command-line front end: each subcommand loads (or defaults) a flat
//! key-value config, fans the seeds out, writes hash-stamped CSV/JSON/
//! SVG artifacts, and exits 1 iff a registered claim fails.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use selfpred::agents::AgentVariant;
use selfpred::harness::{
    collapse_study, desk_config, oracle_study, plot_collapse_csv, rank_study, train_study,
    AggregateSummary, ClaimResult, ExperimentConfig, ExperimentKind, HarnessError, parse_seeds,
};
use selfpred::linearlab::LabEnv;

#[derive(Parser)]
#[command(name = "selfpred", about = "self-predictive representation laboratory")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Flat key-value config file; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed list override: `a..b` or comma-separated.
    #[arg(long)]
    seeds: Option<String>,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Implication-edge sweep over random POMDPs.
    Oracle(Common),
    /// Linear stop-gradient collapse comparison on both lab envs.
    Collapse(Common),
    /// Train one agent variant across seeds.
    Train(Common),
    /// Latent-rank comparison of online vs EMA prediction targets.
    Rank(Common),
    /// Re-render a figure from a collapse telemetry CSV.
    Plot(Common),
    /// Parse a config file and echo its content hash.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load_config(
    common: &Common,
    kind: ExperimentKind,
    default_seeds: &str,
) -> Result<ExperimentConfig, HarnessError> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::from_text(&std::fs::read_to_string(path)?)?,
        None => ExperimentConfig {
            kind,
            seeds: parse_seeds(default_seeds).expect("valid default"),
            out_dir: PathBuf::from("out"),
            params: BTreeMap::new(),
        },
    };
    if let Some(text) = &common.seeds {
        config.seeds = parse_seeds(text).ok_or_else(|| HarnessError::BadValue {
            key: "seeds".into(),
            value: text.clone(),
        })?;
    }
    if let Some(out) = &common.out {
        config.out_dir = out.clone();
    }
    Ok(config)
}

fn write_artifact(
    config: &ExperimentConfig,
    name: &str,
    contents: &str,
) -> Result<PathBuf, HarnessError> {
    std::fs::create_dir_all(&config.out_dir)?;
    let path = config.out_dir.join(name);
    std::fs::write(&path, contents)?;
    Ok(path)
}

/// Echo the comment header every artifact carries: the canonical
/// config and its hash.
fn config_header(config: &ExperimentConfig) -> String {
    let mut out = String::new();
    for line in config.canonical_text().lines() {
        out.push_str(&format!("# {line}\n"));
    }
    out.push_str(&format!("# hash={}\n", config.content_hash()));
    out
}

fn finish(
    config: &ExperimentConfig,
    summary: &AggregateSummary,
) -> Result<bool, HarnessError> {
    let name = format!("{}-{}.json", config.kind.name(), config.content_hash());
    let path = write_artifact(config, &name, &summary.to_json())?;
    println!("summary: {}", path.display());
    for claim in &summary.claims {
        println!(
            "claim {}: {} (margin {:.6})",
            claim.name,
            if claim.pass { "pass" } else { "FAIL" },
            claim.margin
        );
    }
    Ok(summary.all_claims_pass())
}

fn run_oracle(common: &Common) -> Result<bool, HarnessError> {
    let config = load_config(common, ExperimentKind::OracleSuite, "0..25")?;
    let budget = config.parsed("node_budget", 1_000_000usize)?;
    let report = oracle_study(&config.seeds, budget)?;
    let text = format!("{}{}", config_header(&config), report.to_text());
    let name = format!("oracle-{}.txt", config.content_hash());
    write_artifact(&config, &name, &text)?;
    let mut summary = AggregateSummary::default();
    for e in &report.entries {
        summary
            .claims
            .push(ClaimResult::new(format!("edge-{}", e.name), -(e.violations as f64)));
    }
    finish(&config, &summary)
}

fn run_collapse(common: &Common) -> Result<bool, HarnessError> {
    let config = load_config(common, ExperimentKind::LinearCollapse, "0..100")?;
    let lr = config.parsed("learning_rate", 0.01f64)?;
    let steps = config.parsed("steps", 500usize)?;
    let hash = config.content_hash();
    let mut summary = AggregateSummary::default();
    for env in [LabEnv::MountainCar, LabEnv::LoadUnload] {
        let study = collapse_study(env, &config.seeds, lr, steps)?;
        let csv = format!("{}{}", config_header(&config), study.csv());
        write_artifact(&config, &format!("collapse-{}-{hash}.csv", env.name()), &csv)?;
        write_artifact(&config, &format!("collapse-{}-{hash}.svg", env.name()), &study.svg()?)?;
        summary.metrics.extend(study.summary.metrics);
        summary.claims.extend(study.summary.claims);
    }
    finish(&config, &summary)
}

fn run_train(common: &Common) -> Result<bool, HarnessError> {
    let config = load_config(common, ExperimentKind::Train, "0..9")?;
    let variant = parse_variant(&config.param_or("variant", "zp-l2"))?;
    let env_name = config.param_or("env", "keydoor:5");
    let budget = config.parsed("budget", 40_000usize)?;
    let hash = config.content_hash();
    let study = train_study(&desk_config(variant, budget), &env_name, &config.seeds, budget)?;
    for (seed, record) in &study.runs {
        let csv = format!("{}{}", config_header(&config), record.to_csv());
        let name = format!("train-{}-{hash}-seed{seed}.csv", variant.name());
        write_artifact(&config, &name, &csv)?;
    }
    finish(&config, &study.summary)
}

fn run_rank(common: &Common) -> Result<bool, HarnessError> {
    let config = load_config(common, ExperimentKind::RankReport, "0..5")?;
    let budget = config.parsed("budget", 20_000usize)?;
    let n_distractors = config.parsed("distractors", 64usize)?;
    let study = rank_study(&config.seeds, budget, n_distractors)?;
    finish(&config, &study.summary)
}

fn run_plot(common: &Common) -> Result<bool, HarnessError> {
    let config = load_config(common, ExperimentKind::LinearCollapse, "0..1")?;
    let input = config
        .param("input")
        .ok_or_else(|| HarnessError::MissingKey("input".into()))?
        .to_string();
    let column = config.param_or("column", "abs_cos");
    let csv = std::fs::read_to_string(&input)?;
    let body: String = csv.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    let svg = plot_collapse_csv(&body, &column)?;
    let name = format!("plot-{}-{}.svg", column, config.content_hash());
    let path = write_artifact(&config, &name, &svg)?;
    println!("figure: {}", path.display());
    Ok(true)
}

fn parse_variant(name: &str) -> Result<AgentVariant, HarnessError> {
    for v in [
        AgentVariant::ModelFree,
        AgentVariant::ZpL2,
        AgentVariant::ZpFkl,
        AgentVariant::ZpRkl,
        AgentVariant::Op,
        AgentVariant::PhasedRpZp,
        AgentVariant::PhasedRpOp,
    ] {
        if v.name() == name {
            return Ok(v);
        }
    }
    Err(HarnessError::BadValue {
        key: "variant".into(),
        value: name.to_string(),
    })
}

// Exit codes: 0 all claims pass, 1 a registered claim failed, 2 usage
// or configuration error (clap also exits 2 on unknown flags).
fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Oracle(c) => run_oracle(c),
        Cmd::Collapse(c) => run_collapse(c),
        Cmd::Train(c) => run_train(c),
        Cmd::Rank(c) => run_rank(c),
        Cmd::Plot(c) => run_plot(c),
        Cmd::ValidateConfig { config } => (|| {
            let text = std::fs::read_to_string(config)?;
            let parsed = ExperimentConfig::from_text(&text)?;
            println!("{}", parsed.content_hash());
            Ok(true)
        })(),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
