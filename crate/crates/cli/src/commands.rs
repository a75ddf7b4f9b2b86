//! Subcommand implementations. Each writes its artifacts under an output
//! directory and returns what it wrote for programmatic callers.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use flagfed_core::data::{self, MultiLabelDataset, SynthSpec};
use flagfed_core::federate::{self, AggregationStrategy, FederationState, Parallelism};
use flagfed_core::metrics::{self, ConvergenceResult, RoundRecord};
use flagfed_core::model;
use flagfed_core::partition::{self, ClientShard, HeterogeneityReport, Partitioner};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{ExperimentConfig, StrategyKind};
use crate::error::{CliError, CliResult};

pub const TRAIN_FILE: &str = "train.jsonl";
pub const VAL_FILE: &str = "val.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CENTRALIZED_FILE: &str = "centralized.json";

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_json(path: &Path, value: &serde_json::Value) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("JSON values serialize");
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> CliResult<()> {
    let csv_err = |source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Shortest representation that parses back to the same f64.
fn num(v: f64) -> String {
    format!("{v}")
}

fn headers<const N: usize>(names: [&str; N]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

/// Write `train.jsonl` and `val.jsonl` drawn from the same planted themes.
/// Validation rows come from an independent sampling stream.
pub fn synth(spec: &SynthSpec, val_samples: usize, out: &Path) -> CliResult<(PathBuf, PathBuf)> {
    spec.validate()?;
    let val_spec = SynthSpec {
        n_samples: val_samples,
        ..spec.clone()
    };
    val_spec.validate()?;
    let train = data::generate_synthetic_stream(spec, 0)?;
    let val = data::generate_synthetic_stream(&val_spec, 1)?;
    create_dir(out)?;
    let (tp, vp) = (out.join(TRAIN_FILE), out.join(VAL_FILE));
    data::save_dataset(&train.dataset, &tp)?;
    data::save_dataset(&val.dataset, &vp)?;
    write_json(&out.join("synth.json"), &json!({ "spec": spec, "val_samples": val_samples }))?;
    Ok((tp, vp))
}

pub fn default_val_samples(n_samples: usize) -> usize {
    (n_samples / 4).max(1)
}

/// Load or generate the train/validation pair named by the config.
pub fn load_data(cfg: &ExperimentConfig) -> CliResult<(MultiLabelDataset, MultiLabelDataset)> {
    if let Some(dir) = &cfg.data {
        let train = data::load_dataset(dir.join(TRAIN_FILE))?;
        let val = data::load_dataset(dir.join(VAL_FILE))?;
        return Ok((train, val));
    }
    let spec = cfg
        .synth
        .as_ref()
        .ok_or_else(|| CliError::Config("set either `data` or `synth`".into()))?;
    let val_spec = SynthSpec {
        n_samples: cfg
            .synth_val_samples
            .unwrap_or_else(|| default_val_samples(spec.n_samples)),
        ..spec.clone()
    };
    Ok((
        data::generate_synthetic_stream(spec, 0)?.dataset,
        data::generate_synthetic_stream(&val_spec, 1)?.dataset,
    ))
}

pub fn split(cfg: &ExperimentConfig) -> CliResult<Vec<ClientShard>> {
    let (train, val) = load_data(cfg)?;
    Ok(cfg.partitioner.split(&train, &val, cfg.n_clients, cfg.seed)?)
}

/// `sizes.csv`, `ldist.csv`, `kl.csv` and `summary.json`.
pub fn write_report(report: &HeterogeneityReport, method: Partitioner, label_names: &[String], out: &Path) -> CliResult<()> {
    create_dir(out)?;
    let n = report.client_sizes.len();
    let sizes: Vec<Vec<String>> = report
        .client_sizes
        .iter()
        .enumerate()
        .map(|(c, s)| vec![c.to_string(), s.to_string()])
        .collect();
    write_csv(&out.join("sizes.csv"), &headers(["client_id", "count"]), &sizes)?;

    let mut ldist_header = headers(["client_id"]);
    ldist_header.extend(label_names.iter().cloned());
    let ldist: Vec<Vec<String>> = report
        .ldist
        .iter()
        .enumerate()
        .map(|(c, row)| std::iter::once(c.to_string()).chain(row.iter().map(|&v| num(v))).collect())
        .collect();
    write_csv(&out.join("ldist.csv"), &ldist_header, &ldist)?;

    let mut kl_header = headers(["client_id"]);
    kl_header.extend((0..n).map(|c| c.to_string()));
    let kl: Vec<Vec<String>> = report
        .kl_matrix
        .iter()
        .enumerate()
        .map(|(c, row)| std::iter::once(c.to_string()).chain(row.iter().map(|&v| num(v))).collect())
        .collect();
    write_csv(&out.join("kl.csv"), &kl_header, &kl)?;

    write_json(
        &out.join("summary.json"),
        &json!({ "total_kl": report.total_kl, "epsilon": report.epsilon, "method": method.to_string() }),
    )
}

fn shard_paths(dir: &Path, client: usize) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("client_{client}_train.jsonl")),
        dir.join(format!("client_{client}_val.jsonl")),
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    method: Partitioner,
    n_clients: usize,
    seed: u64,
}

/// Partition, then write one train/val file pair per client plus the report.
pub fn partition(cfg: &ExperimentConfig) -> CliResult<(Vec<ClientShard>, HeterogeneityReport)> {
    let shards = split(cfg)?;
    let out = &cfg.out_dir;
    create_dir(out)?;
    for s in &shards {
        let (tp, vp) = shard_paths(out, s.client_id);
        data::save_dataset(&s.train, tp)?;
        data::save_dataset(&s.val, vp)?;
    }
    let manifest = Manifest {
        method: cfg.partitioner,
        n_clients: shards.len(),
        seed: cfg.seed,
    };
    write_json(&out.join(MANIFEST_FILE), &serde_json::to_value(&manifest).expect("manifest serializes"))?;
    let report = partition::heterogeneity_report(&shards, cfg.kl_epsilon)?;
    write_report(&report, cfg.partitioner, shards[0].train.label_names(), out)?;
    Ok((shards, report))
}

/// Read shard files written by [`partition`].
pub fn load_shards(dir: &Path) -> CliResult<(Vec<ClientShard>, Partitioner)> {
    let manifest: Manifest = read_json(&dir.join(MANIFEST_FILE))?;
    let shards = (0..manifest.n_clients)
        .map(|c| {
            let (tp, vp) = shard_paths(dir, c);
            Ok(ClientShard {
                client_id: c,
                train: data::load_dataset(tp)?,
                val: data::load_dataset(vp)?,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok((shards, manifest.method))
}

/// Heterogeneity report for an existing shard directory, or for a fresh
/// partition of the configured dataset.
pub fn analyze(cfg: &ExperimentConfig, shards_dir: Option<&Path>) -> CliResult<HeterogeneityReport> {
    let (shards, method) = match shards_dir {
        Some(dir) => load_shards(dir)?,
        None => (split(cfg)?, cfg.partitioner),
    };
    let report = partition::heterogeneity_report(&shards, cfg.kl_epsilon)?;
    write_report(&report, method, shards[0].train.label_names(), &cfg.out_dir)?;
    Ok(report)
}

/// Result of a `train` run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: FederationState,
    pub centralized_map: f64,
    pub convergence: ConvergenceResult,
}

impl TrainOutcome {
    pub fn log(&self) -> &[RoundRecord] {
        &self.state.log
    }

    pub fn final_record(&self) -> &RoundRecord {
        self.state.log.last().expect("at least one round")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CentralizedBaseline {
    pub centralized_map: f64,
    pub rounds: usize,
    pub local_epochs: usize,
    pub seed: u64,
}

/// `rounds.csv`: one row per client per round plus a `global` row carrying
/// GmAP (empty when there is no global model) and the mean loss.
pub fn write_rounds_csv(log: &[RoundRecord], path: &Path) -> CliResult<()> {
    let mut rows = Vec::new();
    for r in log {
        for (c, (&m, &loss)) in r.per_client_map.iter().zip(&r.client_losses).enumerate() {
            rows.push(vec![r.round.to_string(), c.to_string(), num(m), num(loss), num(r.wall_seconds)]);
        }
        rows.push(vec![
            r.round.to_string(),
            "global".into(),
            r.gmap().map(num).unwrap_or_default(),
            num(r.mean_train_loss),
            num(r.wall_seconds),
        ]);
    }
    write_csv(path, &headers(["round", "client_id", "map", "loss", "wall_seconds"]), &rows)
}

/// `metrics.csv`: AmAP, WmAP, GmAP and mean loss per round.
pub fn write_metrics_csv(log: &[RoundRecord], path: &Path) -> CliResult<()> {
    let rows: Vec<Vec<String>> = log
        .iter()
        .map(|r| {
            vec![
                r.round.to_string(),
                num(r.amap()),
                num(r.wmap()),
                r.gmap().map(num).unwrap_or_default(),
                num(r.mean_train_loss),
            ]
        })
        .collect();
    write_csv(path, &headers(["round", "amap", "wmap", "gmap", "loss"]), &rows)
}

pub fn convergence_json(c: &ConvergenceResult) -> serde_json::Value {
    let count = |v: Option<usize>| v.map_or_else(|| json!("never"), |n| json!(n));
    json!({
        "target_map": c.target_map,
        "rounds_to_target": count(c.rounds_to_target),
        "epochs_to_target": count(c.epochs_to_target),
        "best_map": c.best_map,
        "best_round": c.best_round,
    })
}

fn run_and_record(
    cfg: &ExperimentConfig,
    shards: &[ClientShard],
    strategy: AggregationStrategy,
    parallelism: Parallelism,
) -> CliResult<FederationState> {
    let out = &cfg.out_dir;
    create_dir(out)?;
    let ckpt_dir = out.join("checkpoints");
    if cfg.checkpoints {
        create_dir(&ckpt_dir)?;
    }
    let fed_cfg = cfg.federation_config(parallelism);
    let state = federate::run_federation_with(shards, strategy, &fed_cfg, |state| {
        if !cfg.checkpoints {
            return Ok(());
        }
        let path = ckpt_dir.join(format!("round_{}.params", state.round));
        let params = if state.has_global() {
            &state.global_params
        } else {
            // local-only runs have no global model; keep client 0's as a sample
            &state.client_params[0]
        };
        let file = File::create(&path).map_err(|e| flagfed_core::Error::Io { path: path.clone(), source: e })?;
        model::write_params(params, BufWriter::new(file))
            .map_err(|e| flagfed_core::Error::Io { path: path.clone(), source: e })
    })?;
    write_rounds_csv(&state.log, &out.join("rounds.csv"))?;
    write_metrics_csv(&state.log, &out.join("metrics.csv"))?;
    Ok(state)
}

fn final_map(state: &FederationState) -> f64 {
    let last = state.log.last().expect("at least one round");
    last.gmap().unwrap_or_else(|| last.amap())
}

/// Run the centralized reference with the experiment's budget.
pub fn centralized_baseline(
    cfg: &ExperimentConfig,
    shards: &[ClientShard],
    parallelism: Parallelism,
) -> CliResult<CentralizedBaseline> {
    let fed_cfg = cfg.federation_config(parallelism);
    let state = federate::run_federation(shards, AggregationStrategy::Centralized, &fed_cfg)?;
    Ok(CentralizedBaseline {
        centralized_map: final_map(&state),
        rounds: cfg.rounds,
        local_epochs: cfg.local_epochs,
        seed: cfg.seed,
    })
}

fn write_baseline(b: &CentralizedBaseline, out: &Path) -> CliResult<()> {
    write_json(&out.join(CENTRALIZED_FILE), &serde_json::to_value(b).expect("baseline serializes"))
}

/// Partition, federate, and write `rounds.csv`, `metrics.csv`,
/// `convergence.json` and checkpoints. The convergence target comes from
/// `cfg.baseline` when given; otherwise a same-budget centralized run is
/// performed and recorded in `centralized.json`.
pub fn train(cfg: &ExperimentConfig, parallelism: Parallelism) -> CliResult<TrainOutcome> {
    cfg.validate()?;
    let shards = split(cfg)?;
    let baseline = match &cfg.baseline {
        Some(path) => Some(read_json::<CentralizedBaseline>(path)?),
        None => None,
    };
    train_on_shards(cfg, &shards, baseline, parallelism)
}

pub fn train_on_shards(
    cfg: &ExperimentConfig,
    shards: &[ClientShard],
    baseline: Option<CentralizedBaseline>,
    parallelism: Parallelism,
) -> CliResult<TrainOutcome> {
    let strategy = cfg.strategy();
    let state = run_and_record(cfg, shards, strategy, parallelism)?;
    let baseline = match (cfg.strategy, baseline) {
        (StrategyKind::Central, _) => {
            let b = CentralizedBaseline {
                centralized_map: final_map(&state),
                rounds: cfg.rounds,
                local_epochs: cfg.local_epochs,
                seed: cfg.seed,
            };
            write_baseline(&b, &cfg.out_dir)?;
            b
        }
        (_, Some(b)) => b,
        (_, None) => {
            let b = centralized_baseline(cfg, shards, parallelism)?;
            write_baseline(&b, &cfg.out_dir)?;
            b
        }
    };
    let conv = metrics::convergence(&state.log, cfg.target_fraction, baseline.centralized_map, cfg.local_epochs)?;
    write_json(&cfg.out_dir.join("convergence.json"), &convergence_json(&conv))?;
    Ok(TrainOutcome {
        state,
        centralized_map: baseline.centralized_map,
        convergence: conv,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub alpha: f64,
    pub amap: f64,
    pub wmap: f64,
    pub gmap: f64,
    pub rounds_to_target: Option<usize>,
}

/// `0.0, 0.1, …, 1.0`.
pub fn default_alphas() -> Vec<f64> {
    (0..=10).map(|i| f64::from(i) / 10.0).collect()
}

/// FLAG runs over `alphas` on one fixed partition and seed; writes one
/// subdirectory per α and `sweep.csv` sorted by α.
pub fn sweep(cfg: &ExperimentConfig, alphas: &[f64], parallelism: Parallelism) -> CliResult<Vec<SweepRow>> {
    let mut alphas = alphas.to_vec();
    if alphas.is_empty() {
        return Err(CliError::Config("sweep needs at least one alpha".into()));
    }
    if let Some(a) = alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(CliError::Config(format!("alpha {a} outside [0,1]")));
    }
    alphas.sort_by(f64::total_cmp);
    alphas.dedup();
    let base = ExperimentConfig {
        strategy: StrategyKind::Flag,
        ..cfg.clone()
    };
    base.validate()?;
    let shards = split(&base)?;
    create_dir(&base.out_dir)?;
    let baseline = match &base.baseline {
        Some(path) => read_json::<CentralizedBaseline>(path)?,
        None => {
            let b = centralized_baseline(&base, &shards, parallelism)?;
            write_baseline(&b, &base.out_dir)?;
            b
        }
    };

    let mut rows = Vec::with_capacity(alphas.len());
    for &alpha in &alphas {
        let run_cfg = ExperimentConfig {
            alpha,
            out_dir: base.out_dir.join(format!("alpha_{alpha:.2}")),
            ..base.clone()
        };
        log::info!("sweep: alpha = {alpha}");
        let outcome = train_on_shards(&run_cfg, &shards, Some(baseline.clone()), parallelism)?;
        let last = outcome.final_record();
        rows.push(SweepRow {
            alpha,
            amap: last.amap(),
            wmap: last.wmap(),
            gmap: last.gmap().unwrap_or(f64::NAN),
            rounds_to_target: outcome.convergence.rounds_to_target,
        });
    }
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                num(r.alpha),
                num(r.amap),
                num(r.wmap),
                num(r.gmap),
                r.rounds_to_target.map_or_else(|| "never".to_string(), |n| n.to_string()),
            ]
        })
        .collect();
    write_csv(
        &base.out_dir.join("sweep.csv"),
        &headers(["alpha", "amap", "wmap", "gmap", "rounds_to_target"]),
        &csv_rows,
    )?;
    Ok(rows)
}
