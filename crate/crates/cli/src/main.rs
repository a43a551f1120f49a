//! `frd`: run federated distillation experiments from the command line.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use frd_core::federation::{payload_bytes, Protocol};
use frd_core::harness::{self, ExperimentConfig, OutputFormat, Preset};
use frd_core::nn::MlpConfig;

#[derive(Parser)]
#[command(name = "frd", version, about = "Federated reinforcement distillation experiments on cart-pole")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration for every seed.
    Run {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Number of federating agents.
        #[arg(long)]
        agents: Option<usize>,
    },
    /// Run a configuration across agent counts and seeds.
    Sweep {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Comma-separated agent counts.
        #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
        agent_counts: Vec<usize>,
    },
    /// Payload sizes in bytes for given knowledge sizes.
    Payload {
        #[arg(long, default_value = "frd")]
        protocol: Protocol,
        /// Local knowledge size: proxy entries (frd/mixfrd) or raw entries (pd).
        #[arg(long, default_value_t = 0)]
        local: u64,
        /// Global knowledge size downloaded by each agent.
        #[arg(long, default_value_t = 0)]
        global: u64,
        /// FRL: neurons per hidden layer.
        #[arg(long, default_value_t = 50)]
        width: usize,
        /// FRL: hidden layers.
        #[arg(long, default_value_t = 2)]
        layers: usize,
        /// FRL: count only the policy network.
        #[arg(long)]
        policy_only: bool,
    },
    /// List the built-in presets.
    Presets,
}

/// Flags shared by `run` and `sweep`. A `--config` file is applied after the
/// flags and wins over them.
#[derive(Args)]
struct ExperimentArgs {
    #[arg(long, default_value = "fig3")]
    preset: Preset,
    #[arg(long)]
    protocol: Option<String>,
    /// Sections per state component (S).
    #[arg(long)]
    sections: Option<String>,
    /// Local episodes between exchanges (E).
    #[arg(long)]
    period: Option<String>,
    /// Neurons per hidden layer (n).
    #[arg(long)]
    width: Option<String>,
    /// Hidden layers (l).
    #[arg(long)]
    layers: Option<String>,
    /// Episode budget per run.
    #[arg(long)]
    budget: Option<String>,
    /// Seeds: `0..10` or `1,4,9`.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    discount: Option<String>,
    #[arg(long)]
    policy_lr: Option<String>,
    #[arg(long)]
    value_lr: Option<String>,
    /// tanh or relu.
    #[arg(long)]
    activation: Option<String>,
    #[arg(long)]
    distill_epochs: Option<String>,
    #[arg(long)]
    distill_lr: Option<String>,
    /// Distillation mini-batch size, 0 for full batch.
    #[arg(long)]
    distill_batch: Option<String>,
    /// uniform or count.
    #[arg(long)]
    merge: Option<String>,
    #[arg(long)]
    exclude_self: Option<String>,
    /// Fixed portion such as `0.5`, or `beta:<alpha>`.
    #[arg(long)]
    mixup: Option<String>,
    /// both or policy.
    #[arg(long)]
    frl_scope: Option<String>,
    /// Key-value file (`key = value` per line).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads (default: FRD_WORKERS, else all cores).
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    #[arg(long)]
    prefix: Option<String>,
    #[arg(long, default_value = "csv")]
    format: OutputFormat,
}

impl ExperimentArgs {
    fn build(&self, agents: Option<usize>) -> Result<ExperimentConfig> {
        let mut cfg = self.preset.config();
        let flags = [
            ("protocol", &self.protocol),
            ("sections", &self.sections),
            ("period", &self.period),
            ("width", &self.width),
            ("layers", &self.layers),
            ("budget", &self.budget),
            ("seeds", &self.seeds),
            ("discount", &self.discount),
            ("policy_lr", &self.policy_lr),
            ("value_lr", &self.value_lr),
            ("activation", &self.activation),
            ("distill_epochs", &self.distill_epochs),
            ("distill_lr", &self.distill_lr),
            ("distill_batch", &self.distill_batch),
            ("merge", &self.merge),
            ("exclude_self", &self.exclude_self),
            ("mixup", &self.mixup),
            ("frl_scope", &self.frl_scope),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        if let Some(n) = agents {
            cfg.set("agents", &n.to_string())?;
        }
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            cfg.apply_text(&text)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn prefix(&self, cfg: &ExperimentConfig) -> String {
        self.prefix.clone().unwrap_or_else(|| format!("{}_{}", self.preset, cfg.federation.protocol))
    }
}

fn execute(exp: &ExperimentArgs, cfg: &ExperimentConfig, agent_counts: &[usize]) -> Result<()> {
    let result = harness::with_workers(exp.workers, || harness::sweep(cfg, agent_counts))?;
    for a in &result.aggregates {
        println!(
            "{} agents={} S={} E={} n={} l={}: median {} (p25 {}, p75 {}), {} of {} capped",
            a.protocol, a.agents, a.sections, a.period, a.width, a.layers, a.median, a.p25, a.p75, a.capped_runs, a.runs
        );
    }
    for path in harness::emit(&result, &exp.out, &exp.prefix(cfg), exp.format)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { exp, agents } => {
            let cfg = exp.build(agents)?;
            let n = cfg.federation.num_agents;
            execute(&exp, &cfg, &[n])
        }
        Command::Sweep { exp, agent_counts } => {
            let cfg = exp.build(None)?;
            execute(&exp, &cfg, &agent_counts)
        }
        Command::Payload { protocol, local, global, width, layers, policy_only } => {
            let (up, down) = match protocol {
                Protocol::Frl => {
                    let mut w = MlpConfig::policy(layers, width).weight_count();
                    if !policy_only {
                        w += MlpConfig::value(layers, width).weight_count();
                    }
                    println!("W = {w} parameters");
                    (payload_bytes(protocol, w as u64), payload_bytes(protocol, w as u64))
                }
                Protocol::Standalone => bail!("standalone runs exchange nothing"),
                _ => (payload_bytes(protocol, local), payload_bytes(protocol, global)),
            };
            println!("{protocol} uplink {up} bytes, downlink {down} bytes");
            Ok(())
        }
        Command::Presets => {
            println!("{:<10} {:>4} {:>3} {:>4} {:>2}  description", "name", "S", "E", "n", "l");
            for p in Preset::ALL {
                let (s, e, n, l) = p.shape();
                println!("{:<10} {s:>4} {e:>3} {n:>4} {l:>2}  {}", p.name(), p.description());
            }
            println!("\nn is the number of neurons in each hidden layer.");
            Ok(())
        }
    }
}
