mod store;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use agp_core::optimizers::{OptimizerConfig, OptimizerKind};
use agp_core::registry::InitReport;
use agp_core::sepl::{run_loop, AgentSystem, LoopOutcome, Objective};
use agp_core::server::serve;
use agp_core::toy::ToyTask;
use agp_core::trace::Trace;
use agp_core::{EntityKind, Error, Version};
use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use store::Store;

const EXIT_DOMAIN: u8 = 1;
const EXIT_USAGE: u8 = 2;

#[derive(Parser)]
#[command(name = "agp", version, about = "Versioned agent resources and closed-loop evolution")]
struct Cli {
    /// Print machine-readable JSON.
    #[arg(long, global = true)]
    json: bool,
    /// Store root; overrides AGP_HOME.
    #[arg(long, global = true, value_name = "DIR")]
    home: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Inspect and roll back stored resources.
    #[command(subcommand)]
    Registry(RegistryCmd),
    /// Run the evolution loop against the stored agents.
    #[command(subcommand)]
    Evolve(EvolveCmd),
    /// Read exported traces.
    #[command(subcommand)]
    Trace(TraceCmd),
    /// Serve the stored registries over POST /rpc and GET /catalogue.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7878")]
        bind: String,
    },
    /// Run a bundled offline task.
    Demo {
        #[arg(value_parser = parse_toy)]
        task: String,
        #[arg(long, value_parser = parse_optimizer, default_value = "reflection")]
        optimizer: OptimizerKind,
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long, value_name = "DIR")]
        trace_dir: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum RegistryCmd {
    /// Active resources with their head versions.
    List {
        #[arg(long, value_parser = parse_kind)]
        kind: Option<EntityKind>,
    },
    /// A head record, or a historical snapshot with --version.
    Show {
        #[arg(value_parser = parse_kind)]
        kind: EntityKind,
        name: String,
        #[arg(long, value_parser = parse_version)]
        version: Option<Version>,
    },
    /// Field-level changes between two versions.
    Diff {
        #[arg(value_parser = parse_kind)]
        kind: EntityKind,
        name: String,
        #[arg(value_parser = parse_version)]
        a: Version,
        #[arg(value_parser = parse_version)]
        b: Version,
    },
    /// Append a new head whose content equals a historical version.
    Restore {
        #[arg(value_parser = parse_kind)]
        kind: EntityKind,
        name: String,
        #[arg(value_parser = parse_version)]
        version: Version,
    },
    /// Register every record file found under a directory.
    Init { root: PathBuf },
}

#[derive(Subcommand)]
enum EvolveCmd {
    Run {
        /// Objective JSON file.
        #[arg(long)]
        task: PathBuf,
        #[arg(long, value_parser = parse_optimizer)]
        optimizer: Option<OptimizerKind>,
        #[arg(long)]
        budget: Option<usize>,
        /// Agent to evolve; defaults to the only registered agent.
        #[arg(long)]
        agent: Option<String>,
        /// Optimizer config JSON file.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        trace_dir: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum TraceCmd {
    /// Print the events of a JSONL trace.
    Dump { file: PathBuf },
}

fn parse_kind(s: &str) -> Result<EntityKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_version(s: &str) -> Result<Version, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_optimizer(s: &str) -> Result<OptimizerKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_toy(s: &str) -> Result<String, String> {
    ToyTask::by_name(s).map(|t| t.name.to_string()).map_err(|e| e.to_string())
}

fn catalogue() -> String {
    let names = |it: &mut dyn Iterator<Item = &'static str>| it.collect::<Vec<_>>().join(", ");
    format!(
        "commands:\n\
         \x20 registry list [--kind <kind>]\n\
         \x20 registry show <kind> <name> [--version <v>]\n\
         \x20 registry diff <kind> <name> <a> <b>\n\
         \x20 registry restore <kind> <name> <version>\n\
         \x20 registry init <dir>\n\
         \x20 evolve run --task <file> [--optimizer <name>] [--budget <T>] [--agent <name>] [--config <file>] [--trace-dir <dir>]\n\
         \x20 trace dump <file>\n\
         \x20 serve [--bind <addr>]\n\
         \x20 demo <toy-task> [--optimizer <name>] [--budget <T>] [--trace-dir <dir>]\n\
         global flags: --json, --home <dir> (else AGP_HOME, else ./.agp)\n\
         optimizers: {}\n\
         toy tasks: {}\n\
         kinds: {}",
        names(&mut OptimizerKind::ALL.iter().map(|k| k.as_str())),
        names(&mut ToyTask::NAMES.iter().copied()),
        names(&mut EntityKind::ALL.iter().map(|k| k.as_str())),
    )
}

struct Out {
    json: bool,
}

impl Out {
    fn emit(&self, value: &Value, human: impl FnOnce() -> String) {
        if self.json {
            println!("{value}");
        } else {
            println!("{}", human());
        }
    }
}

fn pretty(v: &Value) -> String {
    serde_json::to_string_pretty(v).unwrap_or_default()
}

fn to_json<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable")
}

fn export_traces(dir: &Path, traces: &[Trace]) -> agp_core::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::PathError {
        path: dir.to_path_buf(),
        message: e.to_string(),
    })?;
    for t in traces {
        t.export(dir.join(format!("{}.jsonl", t.trace_id)))?;
    }
    Ok(())
}

fn outcome_json(label: Value, out: &LoopOutcome) -> Value {
    json!({
        "run": label,
        "converged": out.converged,
        "score": out.best_score,
        "baseline_score": out.baseline.score,
        "rounds": out.rounds(),
        "accepted": out.accepted,
        "committed_scores": out.committed_scores,
        "answer": out.variables.output().value,
        "variables": out.variables.values(),
    })
}

fn outcome_human(title: &str, out: &LoopOutcome) -> String {
    let mut s = format!(
        "{title}\nconverged: {}\nscore: {:.1}\nbaseline score: {:.1}\nrounds: {}\nanswer: {}",
        out.converged,
        out.best_score,
        out.baseline.score,
        out.rounds(),
        out.variables.output().value
    );
    for v in out.variables.theta() {
        s.push_str(&format!("\n{} = {}", v.id, v.value));
    }
    s
}

fn registry_cmd(cmd: RegistryCmd, store: &Store, out: &Out) -> agp_core::Result<()> {
    let hub = store.load_hub()?;
    match cmd {
        RegistryCmd::List { kind } => {
            let kinds: Vec<EntityKind> = kind.map_or(EntityKind::ALL.to_vec(), |k| vec![k]);
            let mut rows = Vec::new();
            for k in kinds {
                let reg = hub.registry(k);
                for name in reg.list() {
                    let r = reg.get_info(&name)?;
                    rows.push(json!({ "kind": k, "name": name, "version": r.version }));
                }
            }
            out.emit(&Value::Array(rows.clone()), || {
                if rows.is_empty() {
                    return "(no resources)".into();
                }
                rows.iter()
                    .map(|r| format!("{}\t{}\t{}", r["kind"].as_str().unwrap_or(""), r["name"].as_str().unwrap_or(""), r["version"].as_str().unwrap_or("")))
                    .collect::<Vec<_>>()
                    .join("\n")
            });
        }
        RegistryCmd::Show { kind, name, version } => {
            let reg = hub.registry(kind);
            let record = match version {
                Some(v) => reg.snapshot(&name, v)?.record,
                None => reg.get_info(&name)?,
            };
            let v = to_json(&record);
            out.emit(&v, || {
                let history = reg
                    .history(&name)
                    .map(|h| h.iter().map(|e| e.version.to_string()).collect::<Vec<_>>().join(" -> "))
                    .unwrap_or_default();
                format!("{}\nhistory: {history}", pretty(&v))
            });
        }
        RegistryCmd::Diff { kind, name, a, b } => {
            let changes = hub.registry(kind).diff(&name, a, b)?;
            let v = to_json(&changes);
            out.emit(&v, || {
                if changes.is_empty() {
                    return "(no changes)".into();
                }
                changes
                    .iter()
                    .map(|c| {
                        let show = |x: &Option<Value>| x.as_ref().map_or("<absent>".to_string(), |v| v.to_string());
                        format!("{}: {} -> {}", c.path, show(&c.old), show(&c.new))
                    })
                    .collect::<Vec<_>>()
                    .join("\n")
            });
        }
        RegistryCmd::Restore { kind, name, version } => {
            let new = hub.registry(kind).restore(&name, version)?;
            store.save_hub(&hub)?;
            out.emit(&json!({ "kind": kind, "name": name, "restored": version, "version": new }), || {
                format!("{kind}:{name} restored {version} as {new}")
            });
        }
        RegistryCmd::Init { root } => {
            let report: InitReport = hub.init(&root)?;
            store.save_hub(&hub)?;
            out.emit(&to_json(&report), || {
                let mut s = format!("registered {}", report.registered.len());
                for r in &report.registered {
                    s.push_str(&format!("\n  + {r}"));
                }
                for sk in &report.skipped {
                    s.push_str(&format!("\n  skipped {}: {}", sk.path.display(), sk.reason));
                }
                s
            });
        }
    }
    Ok(())
}

fn optimizer_config(store: &Store, file: Option<&Path>, kind: Option<OptimizerKind>, budget: Option<usize>) -> agp_core::Result<OptimizerConfig> {
    let mut cfg = match file {
        Some(f) => OptimizerConfig::load(f)?,
        None => store
            .config
            .optimizer
            .clone()
            .unwrap_or_else(|| OptimizerConfig::new(OptimizerKind::Reflection)),
    };
    if let Some(k) = kind {
        cfg.optimizer = k;
    }
    if let Some(t) = budget {
        cfg.t = t;
    }
    cfg.rl().validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> agp_core::Result<()> {
    let out = Out { json: cli.json };
    let store = Store::open(cli.home)?;
    match cli.command {
        Command::Registry(cmd) => registry_cmd(cmd, &store, &out)?,
        Command::Evolve(EvolveCmd::Run {
            task,
            optimizer,
            budget,
            agent,
            config,
            trace_dir,
        }) => {
            let objective = Objective::load(&task)?;
            let cfg = optimizer_config(&store, config.as_deref(), optimizer, budget)?;
            let hub = store.load_hub()?;
            let agent = match agent {
                Some(a) => a,
                None => {
                    let agents = hub.registry(EntityKind::Agent).list();
                    match agents.as_slice() {
                        [one] => one.clone(),
                        _ => {
                            return Err(Error::InvalidConfig(format!(
                                "--agent is required when {} agents are registered",
                                agents.len()
                            )))
                        }
                    }
                }
            };
            let mut system = AgentSystem::new(hub.clone(), agent.clone());
            if let Some(a) = &cfg.models.actor {
                system = system.with_actor_model(a.clone());
            }
            let mut opt = cfg.build()?;
            let outcome = run_loop(&system, &objective, opt.as_mut(), cfg.t)?;
            store.save_hub(&hub)?;
            if let Some(dir) = trace_dir {
                export_traces(&dir, &outcome.traces)?;
            }
            let label = json!({ "agent": agent, "optimizer": cfg.optimizer });
            out.emit(&outcome_json(label, &outcome), || {
                outcome_human(&format!("evolve {agent} with {}", cfg.optimizer.as_str()), &outcome)
            });
        }
        Command::Trace(TraceCmd::Dump { file }) => {
            let trace = Trace::load(&file)?;
            if out.json {
                // Same line layout as the file: header, then one event per line.
                println!("{}", json!({ "trace_id": trace.trace_id, "outcome": trace.outcome }));
                for e in &trace.events {
                    println!("{}", to_json(e));
                }
            } else {
                println!(
                    "trace {} ({} events, success={}, answer={:?})",
                    trace.trace_id,
                    trace.events.len(),
                    trace.outcome.success,
                    trace.outcome.final_answer
                );
                for e in &trace.events {
                    let kind = to_json(&e.kind);
                    let parent = e.parent.as_deref().map(|p| format!(" <- {p}")).unwrap_or_default();
                    println!(
                        "[{}] {}{parent} {}: {}",
                        e.seq,
                        e.span,
                        kind.as_str().unwrap_or(""),
                        Value::Object(e.payload.clone())
                    );
                }
            }
        }
        Command::Serve { bind } => {
            let hub = store.load_hub()?;
            let handle = serve(&bind, hub.clone(), true)?;
            out.emit(&json!({ "url": handle.url() }), || {
                format!("listening on {} (Ctrl-C to stop)", handle.url())
            });
            handle.wait()?;
            store.save_hub(&hub)?;
        }
        Command::Demo {
            task,
            optimizer,
            budget,
            trace_dir,
        } => {
            let toy = ToyTask::by_name(&task)?;
            let mut cfg = OptimizerConfig::new(optimizer);
            if let Some(t) = budget {
                cfg.t = t;
            }
            let outcome = toy.run(&cfg)?;
            if let Some(dir) = trace_dir {
                export_traces(&dir, &outcome.traces)?;
            }
            let label = json!({ "task": toy.name, "optimizer": optimizer });
            out.emit(&outcome_json(label, &outcome), || {
                outcome_human(&format!("demo {} with {}", toy.name, optimizer.as_str()), &outcome)
            });
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            eprintln!("{e}");
            eprintln!("{}", catalogue());
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let json = cli.json;
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if json {
                eprintln!("{}", json!({ "error": { "kind": e.kind_name(), "code": e.code(), "message": e.to_string() } }));
            } else {
                eprintln!("error: {e}");
            }
            ExitCode::from(EXIT_DOMAIN)
        }
    }
}
