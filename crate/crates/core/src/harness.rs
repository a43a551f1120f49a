//! Experiment driver: named presets, multi-seed sweeps, percentile summaries
//! and CSV / JSON-lines output.
//!
//! Percentiles use the nearest-rank method: the p-th percentile of `N`
//! sorted values is the value at 1-based rank `ceil(p / 100 * N)`. Runs that
//! hit the episode budget enter the statistics at the budget value and are
//! flagged `capped`.

use std::fmt;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::federation::{run_mission, FederationConfig, FederationError, FrlScope, Protocol, RunResult};
use crate::nn::Activation;
use crate::proxy::{MergeWeighting, MixupPortion};

/// Environment variable holding the worker-thread count.
pub const WORKERS_ENV: &str = "FRD_WORKERS";

pub const RUN_COLUMNS: [&str; 11] = [
    "protocol",
    "agents",
    "S",
    "E",
    "n",
    "l",
    "seed",
    "completion_episode",
    "capped",
    "total_uplink_bytes",
    "total_downlink_bytes",
];

pub const AGGREGATE_COLUMNS: [&str; 12] =
    ["protocol", "agents", "S", "E", "n", "l", "runs", "capped_runs", "median", "p25", "p75", "iqr"];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("bad value for `{key}`: {reason}")]
    BadValue { key: String, reason: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("config line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("invalid experiment: {0}")]
    Invalid(String),
    #[error("run failed (protocol {protocol}, agents {agents}, seed {seed}): {source}")]
    Run { protocol: Protocol, agents: usize, seed: u64, source: FederationError },
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Preset {
    Setting1,
    Setting2,
    Setting3,
    Setting4,
    Setting5,
    Fig3,
    Fig4,
}

impl Preset {
    pub const ALL: [Preset; 7] =
        [Preset::Setting1, Preset::Setting2, Preset::Setting3, Preset::Setting4, Preset::Setting5, Preset::Fig3, Preset::Fig4];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Setting1 => "setting1",
            Preset::Setting2 => "setting2",
            Preset::Setting3 => "setting3",
            Preset::Setting4 => "setting4",
            Preset::Setting5 => "setting5",
            Preset::Fig3 => "fig3",
            Preset::Fig4 => "fig4",
        }
    }

    /// `(S, E, n, l)`.
    pub fn shape(self) -> (u32, usize, usize, usize) {
        match self {
            Preset::Setting1 => (100, 25, 24, 2),
            Preset::Setting2 => (100, 25, 100, 2),
            Preset::Setting3 => (50, 25, 100, 2),
            Preset::Setting4 => (100, 10, 24, 1),
            Preset::Setting5 => (100, 50, 24, 1),
            Preset::Fig3 | Preset::Fig4 => (30, 25, 50, 2),
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Preset::Setting1 => "FRD ablation, small network",
            Preset::Setting2 => "FRD ablation, wide network",
            Preset::Setting3 => "FRD ablation, coarse clusters",
            Preset::Setting4 => "FRD ablation, frequent exchange",
            Preset::Setting5 => "FRD ablation, infrequent exchange",
            Preset::Fig3 => "FRD vs MixFRD",
            Preset::Fig4 => "MixFRD vs PD vs FRL",
        }
    }

    pub fn config(self) -> ExperimentConfig {
        let (sections, period, width, layers) = self.shape();
        let protocol = match self {
            Preset::Fig3 | Preset::Fig4 => Protocol::MixFrd,
            _ => Protocol::Frd,
        };
        let mut cfg = ExperimentConfig::default();
        cfg.federation.protocol = protocol;
        cfg.federation.sections = sections;
        cfg.federation.period = period;
        cfg.federation.agent.hidden_width = width;
        cfg.federation.agent.hidden_layers = layers;
        cfg
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| HarnessError::UnknownPreset(s.to_string()))
    }
}

/// One experiment: a federation setup and the seeds to run it under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub federation: FederationConfig<f32>,
    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self { federation: FederationConfig::default(), seeds: (0..10).collect() }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.seeds.is_empty() {
            return Err(HarnessError::Invalid("at least one seed is required".into()));
        }
        self.federation.validate().map_err(|e| HarnessError::Invalid(e.to_string()))
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        let f = &mut self.federation;
        let bad = |reason: String| HarnessError::BadValue { key: key.to_string(), reason };
        fn num<V: FromStr>(v: &str) -> Result<V, String>
        where
            V::Err: fmt::Display,
        {
            v.parse::<V>().map_err(|e| e.to_string())
        }
        match key {
            "protocol" => f.protocol = value.parse().map_err(bad)?,
            "agents" => f.num_agents = num(value).map_err(bad)?,
            "S" | "sections" => f.sections = num(value).map_err(bad)?,
            "E" | "period" => f.period = num(value).map_err(bad)?,
            "n" | "width" => f.agent.hidden_width = num(value).map_err(bad)?,
            "l" | "layers" => f.agent.hidden_layers = num(value).map_err(bad)?,
            "budget" => f.episode_budget = num(value).map_err(bad)?,
            "seeds" => self.seeds = parse_seeds(value).map_err(bad)?,
            "discount" => f.agent.discount = num(value).map_err(bad)?,
            "policy_lr" => f.agent.policy_lr = num(value).map_err(bad)?,
            "value_lr" => f.agent.value_lr = num(value).map_err(bad)?,
            "activation" => {
                f.agent.activation = match value {
                    "tanh" => Activation::Tanh,
                    "relu" => Activation::Relu,
                    other => return Err(bad(format!("`{other}` is not tanh or relu"))),
                }
            }
            "distill_epochs" => f.distill.epochs = num(value).map_err(bad)?,
            "distill_lr" => f.distill.learning_rate = num(value).map_err(bad)?,
            "distill_batch" => f.distill.batch_size = num(value).map_err(bad)?,
            "merge" => {
                f.merge_weighting = match value {
                    "uniform" => MergeWeighting::Uniform,
                    "count" => MergeWeighting::VisitCount,
                    other => return Err(bad(format!("`{other}` is not uniform or count"))),
                }
            }
            "exclude_self" => f.exclude_self = num(value).map_err(bad)?,
            "mixup" => {
                f.mixup = match value.strip_prefix("beta:") {
                    Some(alpha) => MixupPortion::Beta { alpha: num(alpha).map_err(bad)? },
                    None => MixupPortion::Fixed(num(value).map_err(bad)?),
                }
            }
            "frl_scope" => {
                f.frl_scope = match value {
                    "both" => FrlScope::PolicyAndValue,
                    "policy" => FrlScope::PolicyOnly,
                    other => return Err(bad(format!("`{other}` is not both or policy"))),
                }
            }
            other => return Err(HarnessError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Applies a key-value text: one `key = value` per line, `#` comments.
    pub fn apply_text(&mut self, text: &str) -> Result<(), HarnessError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(HarnessError::Syntax { line: i + 1 })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }
}

/// `"0,3,7"` or `"0..10"` (half-open).
pub fn parse_seeds(s: &str) -> Result<Vec<u64>, String> {
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|e| format!("{e}"))?;
        let b: u64 = b.trim().parse().map_err(|e| format!("{e}"))?;
        return Ok((a..b).collect());
    }
    s.split(',').map(|x| x.trim().parse::<u64>().map_err(|e| format!("{e}"))).collect()
}

/// One row of the per-run table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRecord {
    pub protocol: Protocol,
    pub agents: usize,
    #[serde(rename = "S")]
    pub sections: u32,
    #[serde(rename = "E")]
    pub period: usize,
    #[serde(rename = "n")]
    pub width: usize,
    #[serde(rename = "l")]
    pub layers: usize,
    pub seed: u64,
    /// Completion episode, or the budget for capped runs.
    pub completion_episode: usize,
    pub capped: bool,
    pub total_uplink_bytes: u64,
    pub total_downlink_bytes: u64,
}

impl RunRecord {
    pub fn new(config: &FederationConfig<f32>, run: &RunResult) -> Self {
        Self {
            protocol: run.protocol,
            agents: run.num_agents,
            sections: config.sections,
            period: config.period,
            width: config.agent.hidden_width,
            layers: config.agent.hidden_layers,
            seed: run.seed,
            completion_episode: run.completion_episode.unwrap_or(config.episode_budget),
            capped: run.completion_episode.is_none(),
            total_uplink_bytes: run.total_uplink_bytes,
            total_downlink_bytes: run.total_downlink_bytes,
        }
    }

    fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.protocol,
            self.agents,
            self.sections,
            self.period,
            self.width,
            self.layers,
            self.seed,
            self.completion_episode,
            self.capped,
            self.total_uplink_bytes,
            self.total_downlink_bytes
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub protocol: Protocol,
    pub agents: usize,
    pub sections: u32,
    pub period: usize,
    pub width: usize,
    pub layers: usize,
    pub runs: usize,
    pub capped_runs: usize,
    pub median: usize,
    pub p25: usize,
    pub p75: usize,
}

impl Aggregate {
    pub fn iqr(&self) -> usize {
        self.p75 - self.p25
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    /// Sorted by `(agents, seed)`.
    pub records: Vec<RunRecord>,
    pub aggregates: Vec<Aggregate>,
    /// Full run results in the same order as `records`.
    pub runs: Vec<RunResult>,
}

impl SweepResult {
    pub fn aggregate_for(&self, agents: usize) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.agents == agents)
    }
}

/// Nearest-rank percentile of ascending `sorted` values.
pub fn percentile_nearest_rank(sorted: &[usize], p: f64) -> Option<usize> {
    if sorted.is_empty() {
        return None;
    }
    let n = sorted.len();
    // p * n first: (0.3 * 10).ceil() would be 4.
    let rank = (p * n as f64 / 100.0).ceil() as usize;
    Some(sorted[rank.clamp(1, n) - 1])
}

pub fn aggregate(records: &[RunRecord]) -> Vec<Aggregate> {
    let mut groups: Vec<(&RunRecord, Vec<&RunRecord>)> = Vec::new();
    for r in records {
        let key = |x: &RunRecord| (x.protocol, x.agents, x.sections, x.period, x.width, x.layers);
        match groups.iter_mut().find(|(head, _)| key(head) == key(r)) {
            Some((_, members)) => members.push(r),
            None => groups.push((r, vec![r])),
        }
    }
    groups
        .into_iter()
        .map(|(head, members)| {
            let mut values: Vec<usize> = members.iter().map(|r| r.completion_episode).collect();
            values.sort_unstable();
            let pct = |p| percentile_nearest_rank(&values, p).expect("group is nonempty");
            Aggregate {
                protocol: head.protocol,
                agents: head.agents,
                sections: head.sections,
                period: head.period,
                width: head.width,
                layers: head.layers,
                runs: members.len(),
                capped_runs: members.iter().filter(|r| r.capped).count(),
                median: pct(50.0),
                p25: pct(25.0),
                p75: pct(75.0),
            }
        })
        .collect()
}

/// Runs every `(agent count, seed)` cell. Cells are independent, so the
/// result does not depend on the worker count.
pub fn sweep(config: &ExperimentConfig, agent_counts: &[usize]) -> Result<SweepResult, HarnessError> {
    if agent_counts.is_empty() {
        return Err(HarnessError::Invalid("at least one agent count is required".into()));
    }
    config.validate()?;
    let cells: Vec<(usize, u64)> =
        agent_counts.iter().flat_map(|&a| config.seeds.iter().map(move |&s| (a, s))).collect();
    let mut runs = cells
        .par_iter()
        .map(|&(agents, seed)| {
            let fed = FederationConfig { num_agents: agents, ..config.federation };
            run_mission(&fed, seed).map_err(|source| HarnessError::Run {
                protocol: fed.protocol,
                agents,
                seed,
                source,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    runs.sort_by_key(|r| (r.num_agents, r.seed));
    let records: Vec<RunRecord> = runs.iter().map(|r| RunRecord::new(&config.federation, r)).collect();
    Ok(SweepResult { aggregates: aggregate(&records), records, runs })
}

/// Runs `f` on a pool of `workers` threads (`0`: read [`WORKERS_ENV`],
/// falling back to rayon's default).
pub fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> R {
    let n = if workers > 0 {
        workers
    } else {
        std::env::var(WORKERS_ENV).ok().and_then(|v| v.parse().ok()).unwrap_or(0)
    };
    match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

pub fn write_runs_csv<W: Write>(mut w: W, records: &[RunRecord]) -> io::Result<()> {
    writeln!(w, "{}", RUN_COLUMNS.join(","))?;
    for r in records {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}

pub fn write_runs_jsonl<W: Write>(mut w: W, records: &[RunRecord]) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn write_aggregates_csv<W: Write>(mut w: W, aggregates: &[Aggregate]) -> io::Result<()> {
    writeln!(w, "{}", AGGREGATE_COLUMNS.join(","))?;
    for a in aggregates {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            a.protocol,
            a.agents,
            a.sections,
            a.period,
            a.width,
            a.layers,
            a.runs,
            a.capped_runs,
            a.median,
            a.p25,
            a.p75,
            a.iqr()
        )?;
    }
    Ok(())
}

/// Per-round log lines, one JSON object per round of every run.
pub fn write_rounds_jsonl<W: Write>(mut w: W, runs: &[RunResult]) -> io::Result<()> {
    for run in runs {
        for r in &run.rounds {
            let line = serde_json::json!({
                "seed": run.seed,
                "agents": run.num_agents,
                "round": r.round,
                "protocol": r.protocol,
                "per_agent_uplink_bytes": r.per_agent_uplink_bytes,
                "downlink_bytes": r.downlink_bytes,
                "count_uplink_bytes": r.count_uplink_bytes,
                "episodes_played": r.episodes_played,
                "rolling_averages": r.rolling_averages,
            });
            serde_json::to_writer(&mut w, &line)?;
            writeln!(w)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputFormat {
    Csv,
    Jsonl,
}

impl FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "jsonl" => Ok(OutputFormat::Jsonl),
            other => Err(format!("unknown format `{other}` (csv or jsonl)")),
        }
    }
}

/// Writes `<prefix>_runs.{csv,jsonl}`, `<prefix>_aggregate.csv` and
/// `<prefix>_rounds.jsonl` under `dir`. Returns the written paths.
pub fn emit(result: &SweepResult, dir: &Path, prefix: &str, format: OutputFormat) -> Result<Vec<PathBuf>, HarnessError> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| HarnessError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let create = |name: String| -> Result<(PathBuf, io::BufWriter<std::fs::File>), HarnessError> {
        let path = dir.join(name);
        let file = std::fs::File::create(&path).map_err(io_err(&path))?;
        Ok((path, io::BufWriter::new(file)))
    };

    let mut written = Vec::new();
    let (path, mut w) = match format {
        OutputFormat::Csv => create(format!("{prefix}_runs.csv"))?,
        OutputFormat::Jsonl => create(format!("{prefix}_runs.jsonl"))?,
    };
    match format {
        OutputFormat::Csv => write_runs_csv(&mut w, &result.records),
        OutputFormat::Jsonl => write_runs_jsonl(&mut w, &result.records),
    }
    .and_then(|_| w.flush())
    .map_err(io_err(&path))?;
    written.push(path);

    let (path, mut w) = create(format!("{prefix}_aggregate.csv"))?;
    write_aggregates_csv(&mut w, &result.aggregates).and_then(|_| w.flush()).map_err(io_err(&path))?;
    written.push(path);

    let (path, mut w) = create(format!("{prefix}_rounds.jsonl"))?;
    write_rounds_jsonl(&mut w, &result.runs).and_then(|_| w.flush()).map_err(io_err(&path))?;
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_presets() {
        assert_eq!(Preset::Setting3.config().federation.sections, 50);
        assert_eq!(Preset::Setting4.config().federation.period, 10);
        assert_eq!(Preset::Fig3.shape(), (30, 25, 50, 2));
        assert_eq!(Preset::Setting2.shape(), (100, 25, 100, 2));
        assert_eq!(Preset::Setting5.shape(), (100, 50, 24, 1));
        assert_eq!("FIG4".parse::<Preset>().unwrap(), Preset::Fig4);
        assert!(matches!("setting9".parse::<Preset>(), Err(HarnessError::UnknownPreset(_))));
    }

    #[test]
    fn nearest_rank_percentiles() {
        let v = [15, 20, 35, 40, 50];
        assert_eq!(percentile_nearest_rank(&v, 5.0), Some(15));
        assert_eq!(percentile_nearest_rank(&v, 30.0), Some(20));
        assert_eq!(percentile_nearest_rank(&v, 40.0), Some(20));
        assert_eq!(percentile_nearest_rank(&v, 50.0), Some(35));
        assert_eq!(percentile_nearest_rank(&v, 100.0), Some(50));
        assert_eq!(percentile_nearest_rank(&[], 50.0), None);
        assert_eq!(percentile_nearest_rank(&[7], 0.0), Some(7));
    }

    #[test]
    fn key_value_overrides() {
        let mut cfg = Preset::Fig3.config();
        cfg.apply_text(
            "# comment\nprotocol = pd\nagents=4\nS = 12\nseeds = 3..6\nmixup = beta:0.3\nmerge = count\n\n",
        )
        .unwrap();
        assert_eq!(cfg.federation.protocol, Protocol::Pd);
        assert_eq!(cfg.federation.num_agents, 4);
        assert_eq!(cfg.federation.sections, 12);
        assert_eq!(cfg.seeds, vec![3, 4, 5]);
        assert_eq!(cfg.federation.mixup, MixupPortion::Beta { alpha: 0.3 });
        assert_eq!(cfg.federation.merge_weighting, MergeWeighting::VisitCount);
        assert!(matches!(cfg.apply_text("nope = 1"), Err(HarnessError::UnknownKey(_))));
        assert!(matches!(cfg.apply_text("agents"), Err(HarnessError::Syntax { line: 1 })));
        assert!(matches!(cfg.set("agents", "x"), Err(HarnessError::BadValue { .. })));
        assert_eq!(parse_seeds("1, 5,9").unwrap(), vec![1, 5, 9]);
    }

    #[test]
    fn aggregate_counts_capped_runs_at_budget() {
        let rec = |seed, completion_episode, capped| RunRecord {
            protocol: Protocol::Frd,
            agents: 2,
            sections: 30,
            period: 25,
            width: 50,
            layers: 2,
            seed,
            completion_episode,
            capped,
            total_uplink_bytes: 0,
            total_downlink_bytes: 0,
        };
        let a = aggregate(&[rec(0, 300, false), rec(1, 5000, true), rec(2, 100, false), rec(3, 200, false)]);
        assert_eq!(a.len(), 1);
        assert_eq!((a[0].p25, a[0].median, a[0].p75), (100, 200, 300));
        assert_eq!(a[0].capped_runs, 1);
        assert_eq!(a[0].iqr(), 200);
    }

    #[test]
    fn header_only_outputs_for_empty_results() {
        let mut buf = Vec::new();
        write_runs_csv(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{}\n", RUN_COLUMNS.join(",")));
        let mut buf = Vec::new();
        write_aggregates_csv(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1);
    }

    #[test]
    fn sweep_rejects_empty_inputs() {
        let cfg = ExperimentConfig { seeds: vec![], ..Default::default() };
        assert!(matches!(sweep(&cfg, &[1]), Err(HarnessError::Invalid(_))));
        assert!(matches!(sweep(&ExperimentConfig::default(), &[]), Err(HarnessError::Invalid(_))));
    }
}
