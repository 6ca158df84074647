use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use shopflow_core::datagen::{generate, Preset, ShopperModel};
use shopflow_core::flow::RunStatus;
use shopflow_core::quality::Gate;
use shopflow_core::raw::PartitionId;
use shopflow_core::transform::sessionize::sequences_from_table;

use shopflow::artifacts::{ArtifactStore, Lineage};
use shopflow::config::Config;
use shopflow::fsutil::now_ms;
use shopflow::ingest::{self, Collector};
use shopflow::pump::{documents, pump, PumpConfig};
use shopflow::quality::{load_suite, render, run_on_store};
use shopflow::rawstore::PartitionRange;
use shopflow::serving::{self, ServingState};
use shopflow::stack::{open_raw, RawAccess, Stack};
use shopflow::tables::{default_dag, load_dag, run_dag, TableStore};
use shopflow::training::{train, TrainConfig};
use shopflow::{orchestrator, server};

#[derive(Parser)]
#[command(name = "shopflow", version, about = "Event collection, transforms, quality gates, training and serving")]
struct Cli {
    /// TOML config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Event collection service.
    Ingest {
        #[command(subcommand)]
        cmd: ServeOnly,
    },
    /// Raw store inspection and maintenance.
    Rawstore {
        #[command(subcommand)]
        cmd: RawCmd,
    },
    Transform {
        #[command(subcommand)]
        cmd: TransformCmd,
    },
    Quality {
        #[command(subcommand)]
        cmd: QualityCmd,
    },
    Recsys {
        #[command(subcommand)]
        cmd: RecsysCmd,
    },
    /// Model server.
    Serving {
        #[command(subcommand)]
        cmd: ServeOnly,
    },
    Orchestrate {
        #[command(subcommand)]
        cmd: OrchCmd,
    },
    Datagen {
        #[command(subcommand)]
        cmd: DatagenCmd,
    },
    /// Ingest, serving and orchestrator in one process, sharing stores.
    Stack {
        #[command(subcommand)]
        cmd: ServeOnly,
    },
}

#[derive(Subcommand)]
enum ServeOnly {
    Serve,
}

#[derive(Subcommand)]
enum RawCmd {
    /// Print stored payloads as NDJSON, in (partition, record) order.
    Replay {
        /// First partition (hours since epoch), inclusive.
        #[arg(long)]
        from: Option<u64>,
        /// Last partition, inclusive.
        #[arg(long)]
        to: Option<u64>,
        /// Skip records of the first partition below this id.
        #[arg(long)]
        from_record: Option<u64>,
    },
    /// Merge each partition's segments into one.
    Compact,
    /// Per-partition manifests as JSON.
    Stats,
}

#[derive(Subcommand)]
enum TransformCmd {
    Run {
        /// DAG spec; the config's DAG otherwise.
        #[arg(long)]
        dag: Option<PathBuf>,
        /// Run only this node and what it depends on.
        #[arg(long)]
        node: Option<String>,
        #[arg(long)]
        full_rebuild: bool,
    },
}

#[derive(Subcommand)]
enum QualityCmd {
    /// Exit status 0 when the gate passes, 1 when it blocks.
    Run {
        #[arg(long)]
        suite: PathBuf,
        /// Evaluation clock in epoch ms.
        #[arg(long)]
        now_ms: Option<u64>,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Subcommand)]
enum RecsysCmd {
    Train {
        #[arg(long, default_value = "sessions")]
        sessions: String,
        #[arg(long, value_delimiter = ',', default_value = "0,0.01,0.1,1")]
        alpha_grid: Vec<f64>,
        #[arg(long)]
        split_ts: Option<i64>,
        /// Artifact root; the config's artifacts dir otherwise.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum OrchCmd {
    /// REST API over the orchestrator.
    Serve,
    /// Run one flow in-process and wait for it.
    Run {
        flow: String,
        /// Run params as JSON, keyed by task name.
        #[arg(long, default_value = "{}")]
        params: String,
        #[arg(long, default_value_t = 3600)]
        timeout_secs: u64,
    },
}

#[derive(Subcommand)]
enum DatagenCmd {
    /// Generate sessions and deliver or write them.
    Run(DatagenRun),
    /// Print a preset shopper model as JSON.
    Model {
        #[arg(long, default_value_t = 50)]
        catalog: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value = "skewed")]
        preset: Preset,
    },
}

#[derive(Args)]
struct DatagenRun {
    #[arg(long, default_value_t = 50)]
    catalog: usize,
    #[arg(long)]
    sessions: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// skewed, uniform or block-diagonal.
    #[arg(long, default_value = "skewed")]
    preset: Preset,
    /// Shopper model JSON; replaces the preset, catalog and seed flags.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Timestamp of the first session in epoch ms.
    #[arg(long, default_value_t = 1_704_067_200_000)]
    clock_start: i64,
    /// Ingest base URL, e.g. http://127.0.0.1:8080.
    #[arg(long)]
    endpoint: Option<String>,
    /// Also write the events as NDJSON here.
    #[arg(long)]
    emit_file: Option<PathBuf>,
    /// Events per second.
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long, default_value_t = 500)]
    batch_size: usize,
}

fn print_json(v: &impl serde::Serialize) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let cfg = Config::load(cli.config.as_deref())?;
    match cli.cmd {
        Cmd::Ingest { cmd: ServeOnly::Serve } => {
            let raw = open_raw(&cfg, RawAccess::Writer)?;
            server::serve_forever(ingest::router(Collector::new(raw)), &cfg.ingest.listen)?;
        }
        Cmd::Serving { cmd: ServeOnly::Serve } => {
            let state = Arc::new(ServingState::new(ArtifactStore::new(cfg.artifacts_dir())));
            server::serve_forever(serving::router(state), &cfg.serving.listen)?;
        }
        Cmd::Stack { cmd: ServeOnly::Serve } => {
            let mut cfg = cfg;
            // Deploys go straight to the in-process server.
            cfg.orchestrator.serving_url = None;
            let stack = Stack::open(cfg, RawAccess::Writer)?;
            let _ingest = server::spawn(ingest::router(Collector::new(stack.raw.clone())), &stack.cfg.ingest.listen)?;
            let _serving = server::spawn(serving::router(stack.serving.clone()), &stack.cfg.serving.listen)?;
            eprintln!("ingest on {}, serving on {}", _ingest.addr, _serving.addr);
            server::serve_forever(orchestrator::http::router(stack.orchestrator.clone()), &stack.cfg.orchestrator.listen)?;
        }
        Cmd::Orchestrate { cmd } => return orchestrate(cfg, cmd),
        Cmd::Rawstore { cmd } => {
            let raw = open_raw(&cfg, RawAccess::Reader)?;
            match cmd {
                RawCmd::Replay { from, to, from_record } => {
                    let range = PartitionRange {
                        from: from.map(PartitionId),
                        to: to.map(PartitionId),
                    };
                    let mut out = io::BufWriter::new(io::stdout().lock());
                    for r in raw.replay(range, from_record)? {
                        out.write_all(&r.payload)?;
                        out.write_all(b"\n")?;
                    }
                    out.flush()?;
                }
                RawCmd::Compact => print_json(&open_raw(&cfg, RawAccess::Writer)?.compact_segments()?)?,
                RawCmd::Stats => {
                    let mut all = Vec::new();
                    for p in raw.partitions()? {
                        all.extend(raw.manifest(p)?);
                    }
                    print_json(&all)?;
                }
            }
        }
        Cmd::Transform {
            cmd: TransformCmd::Run { dag, node, full_rebuild },
        } => {
            let raw = open_raw(&cfg, RawAccess::Reader)?;
            let tables = TableStore::open(cfg.tables_dir())?;
            let dag = match dag.or_else(|| cfg.dag.as_ref().map(|p| cfg.resolve(p))) {
                Some(p) => load_dag(&p)?,
                None => default_dag(),
            };
            for run in run_dag(&dag, &raw, &tables, node.as_deref(), full_rebuild)? {
                let tables: Vec<Value> = run
                    .manifests
                    .iter()
                    .map(|m| json!({ "table": m.table, "row_count": m.row_count, "content_hash": m.content_hash }))
                    .collect();
                println!("{}", json!({ "node": run.node, "mode": run.mode, "tables": tables }));
            }
        }
        Cmd::Quality {
            cmd: QualityCmd::Run { suite, now_ms: at, json },
        } => {
            let tables = TableStore::open(cfg.tables_dir())?;
            let suite = load_suite(&suite)?;
            let run = run_on_store(&tables, &suite, at.unwrap_or_else(now_ms))?;
            if json {
                print_json(&run.file)?;
            } else {
                print!("{}", render(&run.file));
            }
            if run.file.gate != Gate::Pass {
                return Ok(ExitCode::from(1));
            }
        }
        Cmd::Recsys {
            cmd: RecsysCmd::Train { sessions, alpha_grid, split_ts, out },
        } => {
            let tables = TableStore::open(cfg.tables_dir())?;
            let Some((manifest, table)) = tables.read(&sessions)? else {
                bail!("STALE_INPUT: table `{sessions}` has not been materialized");
            };
            let tc = TrainConfig {
                alpha_grid,
                split_ts,
                ..TrainConfig::default()
            };
            let outcome = train(&sequences_from_table(&table), &tc)?;
            let store = ArtifactStore::new(out.unwrap_or_else(|| cfg.artifacts_dir()));
            let lineage = Lineage {
                raw_watermarks: manifest.input_watermarks.clone(),
                node_versions: Default::default(),
                sessions_hash: Some(manifest.content_hash.clone()),
                suite_report_hash: None,
                flow_run_id: None,
                created_at: 0,
            };
            let packaged = store.package(&outcome.model, &outcome.eval, &outcome.checklist, &lineage)?;
            print_json(&json!({
                "version": packaged.version,
                "path": packaged.path,
                "reused": packaged.reused,
                "best_alpha": outcome.eval.best_alpha,
                "recall_at_k": outcome.eval.report.recall_at_k,
                "baseline_recall_at_k": outcome.eval.report.baseline.recall_at_k,
            }))?;
        }
        Cmd::Datagen { cmd } => return datagen(cmd),
    }
    Ok(ExitCode::SUCCESS)
}

fn orchestrate(cfg: Config, cmd: OrchCmd) -> anyhow::Result<ExitCode> {
    match cmd {
        OrchCmd::Serve => {
            if cfg.orchestrator.serving_url.is_none() {
                eprintln!("warning: no serving_url configured; deploys only reach this process");
            }
            let stack = Stack::open(cfg, RawAccess::Reader)?;
            server::serve_forever(orchestrator::http::router(stack.orchestrator.clone()), &stack.cfg.orchestrator.listen)?;
            Ok(ExitCode::SUCCESS)
        }
        OrchCmd::Run { flow, params, timeout_secs } => {
            let params: Value = serde_json::from_str(&params).context("--params must be JSON")?;
            let stack = Stack::open(cfg, RawAccess::Reader)?;
            let id = stack.orchestrator.run_flow(&flow, params)?;
            let run = stack.orchestrator.wait_notified(&id, Duration::from_secs(timeout_secs))?;
            print_json(&json!({
                "run_id": run.run_id,
                "status": run.status,
                "reason": run.reason,
                "tasks": run.tasks.iter().map(|t| json!({
                    "name": t.name, "status": t.status, "attempts": t.attempts, "error": t.error, "output": t.output,
                })).collect::<Vec<_>>(),
            }))?;
            Ok(if run.status == RunStatus::Succeeded { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
    }
}

fn datagen(cmd: DatagenCmd) -> anyhow::Result<ExitCode> {
    match cmd {
        DatagenCmd::Model { catalog, seed, preset } => {
            print_json(&ShopperModel::preset(preset, catalog, seed)?)?;
            Ok(ExitCode::SUCCESS)
        }
        DatagenCmd::Run(a) => {
            let model = match &a.model {
                Some(p) => serde_json::from_slice(&fs::read(p)?).with_context(|| format!("parsing {}", p.display()))?,
                None => ShopperModel::preset(a.preset, a.catalog, a.seed)?,
            };
            let docs = documents(&generate(&model, a.sessions, a.clock_start)?);
            if let Some(path) = &a.emit_file {
                let mut out = io::BufWriter::new(fs::File::create(path)?);
                for d in &docs {
                    out.write_all(d)?;
                    out.write_all(b"\n")?;
                }
                out.flush()?;
            }
            let Some(endpoint) = a.endpoint else {
                print_json(&json!({ "generated": docs.len() }))?;
                return Ok(ExitCode::SUCCESS);
            };
            let report = pump(
                &docs,
                &PumpConfig {
                    batch_size: a.batch_size,
                    rate: a.rate,
                    ..PumpConfig::new(endpoint)
                },
            );
            print_json(&report)?;
            Ok(if report.failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
    }
}
