mod dryrun;
mod llm;

use std::io::{self, BufRead, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use tuneplan_core::assistant::{questionnaire_next, QuestionnaireState, QuestionnaireStep};
use tuneplan_core::assistant::{ChatClient, Session};
use tuneplan_core::assistant::{build_system_message, Effect, EventLog};
use tuneplan_core::datasets::{load_jsonl, stats, validate_jsonl};
use tuneplan_core::emit::{
    build_launch_command, load_args, save_args, LaunchExecutor, PrintOnly, ShellExecutor, ARGS_FILE_NAME,
};
use tuneplan_core::hardware::{acquire, parse_layout, probe_command, summarize, GpuInventory};
use tuneplan_core::memory::feasibility_matrix;
use tuneplan_core::planner::{recommend, DataMode, Plan, Priority, Requirements};
use tuneplan_core::registry::{export_catalog, list_datasets, list_models};
use tuneplan_core::rope::{frequencies, table_csv, RopeKind, RopeScalingSpec};
use tuneplan_serve::{GpuSource, ServeConfig};

#[derive(Parser)]
#[command(name = "tuneplan", version, about = "Plan and launch LLM fine-tuning runs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct GpuArgs {
    /// Layout shorthand such as "2x48 GB"; skips probing.
    #[arg(long)]
    gpus: Option<String>,
}

impl GpuArgs {
    fn inventory(&self) -> Result<GpuInventory> {
        match &self.gpus {
            Some(s) => Ok(parse_layout(s)?),
            None => {
                let cmd = probe_command();
                acquire(&cmd).with_context(|| format!("probing GPUs with `{cmd}` (pass --gpus to skip)"))
            }
        }
    }
}

#[derive(Subcommand)]
enum Command {
    #[command(subcommand)]
    Plan(PlanCmd),
    #[command(subcommand)]
    Registry(RegistryCmd),
    /// Show the detected GPUs.
    Gpus {
        #[command(flatten)]
        gpu: GpuArgs,
        #[arg(long)]
        json: bool,
    },
    #[command(subcommand)]
    Rope(RopeCmd),
    #[command(subcommand)]
    Data(DataCmd),
    #[command(subcommand)]
    Train(TrainCmd),
    /// Ten-question setup; writes ARGS.json.
    Wizard {
        #[command(flatten)]
        gpu: GpuArgs,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Conversational setup through a chat model with the Set_ARGS tool.
    Chat {
        #[command(flatten)]
        gpu: GpuArgs,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Type key=value settings yourself instead of calling a model.
        #[arg(long)]
        no_llm: bool,
        /// Append conversation events to this JSONL file.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Print the launch command for an ARGS.json, or run it.
    Launch {
        #[arg(long, default_value = ARGS_FILE_NAME)]
        args: PathBuf,
        #[command(flatten)]
        gpu: GpuArgs,
        #[arg(long)]
        exec: bool,
    },
    /// Run the HTTP service for the dashboard.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        #[arg(long, default_value = "runs")]
        runs_dir: PathBuf,
        #[arg(long)]
        static_dir: Option<PathBuf>,
        #[command(flatten)]
        gpu: GpuArgs,
    },
}

#[derive(Subcommand)]
enum PlanCmd {
    /// Recommend a model, method and config; writes ARGS.json.
    Recommend {
        #[arg(long, default_value = "general")]
        domain: String,
        #[arg(long, default_value = "en")]
        lang: String,
        #[command(flatten)]
        gpu: GpuArgs,
        #[arg(long)]
        memory_first: bool,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        dataset: Option<String>,
        #[arg(long)]
        persona: Option<String>,
        #[arg(long)]
        context: Option<u32>,
        /// Produce a setup readme instead of a local launch.
        #[arg(long)]
        readme_only: bool,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Print the minimum-GPU table as JSON.
    ExportTable,
}

#[derive(Subcommand)]
enum RegistryCmd {
    Models,
    Datasets,
    /// Print the catalog as JSON.
    Export,
}

#[derive(Subcommand)]
enum RopeCmd {
    /// Print a frequency table as CSV.
    Table {
        #[arg(long, default_value = "none")]
        kind: RopeKind,
        #[arg(long, default_value_t = 128)]
        dim: usize,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long, default_value_t = 2048)]
        len: usize,
        #[arg(long, default_value_t = 2048)]
        train_len: usize,
    },
}

#[derive(Subcommand)]
enum DataCmd {
    Validate {
        path: PathBuf,
        #[arg(long, default_value = "instruct")]
        mode: DataMode,
    },
    Stats {
        path: PathBuf,
        #[arg(long, default_value = "instruct")]
        mode: DataMode,
    },
}

#[derive(Subcommand)]
enum TrainCmd {
    /// Train the toy model on the configured dataset and write telemetry.
    DryRun {
        #[arg(long, default_value = ARGS_FILE_NAME)]
        args: PathBuf,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long, default_value = "runs")]
        runs_dir: PathBuf,
        #[arg(long, default_value = "dry-run")]
        run_id: String,
        /// Where built-in datasets are looked up.
        #[arg(long, default_value = "data")]
        data_dir: PathBuf,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Plan(cmd) => plan(cmd),
        Command::Registry(cmd) => registry(cmd),
        Command::Gpus { gpu, json } => {
            let inv = gpu.inventory()?;
            if json {
                println!("{}", serde_json::to_string_pretty(&inv)?);
            } else {
                println!("{}", summarize(&inv));
            }
            Ok(())
        }
        Command::Rope(RopeCmd::Table {
            kind,
            dim,
            scale,
            len,
            train_len,
        }) => {
            let spec = RopeScalingSpec {
                train_len,
                ..RopeScalingSpec::new(kind, dim, scale)
            };
            print!("{}", table_csv(&frequencies(&spec, len)?));
            Ok(())
        }
        Command::Data(cmd) => data(cmd),
        Command::Train(TrainCmd::DryRun {
            args,
            steps,
            runs_dir,
            run_id,
            data_dir,
        }) => {
            let cfg = load_args(&args)?;
            let s = dryrun::run(&cfg, &data_dir, &runs_dir, &run_id, steps)?;
            println!(
                "{} steps, {} tokens, loss {:.4} -> {:.4} (ratio {:.3})",
                s.steps,
                s.tokens,
                s.initial_loss,
                s.final_loss,
                s.final_loss / s.initial_loss
            );
            println!("telemetry in {}", runs_dir.join(&run_id).display());
            Ok(())
        }
        Command::Wizard { gpu, out_dir } => wizard(&gpu.inventory()?, &out_dir),
        Command::Chat {
            gpu,
            out_dir,
            no_llm,
            log,
        } => {
            let inv = gpu.inventory()?;
            if no_llm {
                chat(&inv, llm::ManualClient::new(), &out_dir, log.as_deref())
            } else {
                chat(&inv, llm::HttpClient::from_env(), &out_dir, log.as_deref())
            }
        }
        Command::Launch { args, gpu, exec } => {
            let cfg = load_args(&args)?;
            let command = build_launch_command(&cfg, &gpu.inventory()?)?;
            let code = if exec {
                ShellExecutor.execute(&command)?
            } else {
                PrintOnly.execute(&command)?
            };
            if code != 0 {
                bail!("launch exited with status {code}");
            }
            Ok(())
        }
        Command::Serve {
            bind,
            runs_dir,
            static_dir,
            gpu,
        } => {
            let source = match gpu.gpus {
                Some(s) => GpuSource::Fixed(parse_layout(&s)?),
                None => GpuSource::Probe(probe_command()),
            };
            let mut config = ServeConfig::new(source, runs_dir);
            config.static_dir = static_dir;
            eprintln!("listening on http://{bind}");
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(tuneplan_serve::serve(bind, config))?;
            Ok(())
        }
    }
}

fn plan(cmd: PlanCmd) -> Result<()> {
    match cmd {
        PlanCmd::ExportTable => {
            println!("{}", serde_json::to_string_pretty(&feasibility_matrix())?);
            Ok(())
        }
        PlanCmd::Recommend {
            domain,
            lang,
            gpu,
            memory_first,
            model,
            dataset,
            persona,
            context,
            readme_only,
            out_dir,
        } => {
            let inv = gpu.inventory()?;
            let req = Requirements {
                domain,
                language: lang,
                quality_vs_memory: if memory_first {
                    Priority::MemoryFirst
                } else {
                    Priority::QualityFirst
                },
                model_choice: model,
                dataset_choice: dataset,
                train_here: !readme_only,
                persona_name: persona,
                context_target: context,
            };
            let plan = recommend(&req, &inv)?;
            print_plan(&plan);
            write_outputs(&plan, &out_dir)
        }
    }
}

fn print_plan(plan: &Plan) {
    let cfg = &plan.config;
    println!("Model:     {}", cfg.model);
    println!("Method:    {}", cfg.method);
    println!("Dataset:   {}", cfg.dataset.as_deref().unwrap_or("-"));
    println!("Optimizer: {} lr {} x {} epochs", cfg.optimizer, cfg.lr, cfg.epochs);
    let feasible = match &plan.verdict.satisfied_layout {
        Some(l) => format!("yes ({})", l.label()),
        None => "no".to_string(),
    };
    println!("Feasible:  {feasible}");
    for w in &plan.verdict.warnings {
        println!("warning:   {w}");
    }
    println!("\nRationale:");
    for line in &plan.rationale {
        println!("  - {line}");
    }
    if let Some(cmd) = &plan.launch {
        println!("\nLaunch:\n  {cmd}");
    }
}

fn write_outputs(plan: &Plan, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let args = out_dir.join(ARGS_FILE_NAME);
    save_args(&args, &plan.config)?;
    println!("\nwrote {}", args.display());
    if let Some(md) = &plan.readme {
        let path = out_dir.join("Readme.md");
        std::fs::write(&path, md)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn registry(cmd: RegistryCmd) -> Result<()> {
    match cmd {
        RegistryCmd::Models => {
            for m in list_models() {
                println!(
                    "{:<14} {:<10} {:>7}  bucket {:<5} ctx {:>5}",
                    m.name,
                    m.family,
                    format!("{:.1}B", m.param_count as f64 / 1e9),
                    m.bucket().label(),
                    m.default_context
                );
            }
        }
        RegistryCmd::Datasets => {
            for d in list_datasets() {
                println!("{:<16} {:<10} {:<4} {:>7} samples", d.name, d.domain, d.language, d.sample_count);
            }
        }
        RegistryCmd::Export => print!("{}", export_catalog()),
    }
    Ok(())
}

fn data(cmd: DataCmd) -> Result<()> {
    match cmd {
        DataCmd::Validate { path, mode } => {
            let file = std::fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?;
            let report = validate_jsonl(io::BufReader::new(file), mode);
            for (line, msg) in &report.warnings {
                println!("line {line}: warning: {msg}");
            }
            for (line, msg) in &report.errors {
                println!("line {line}: error: {msg}");
            }
            println!("{} lines, {} errors", report.lines, report.errors.len());
            if !report.is_clean() {
                bail!("{} is not valid {mode} data", path.display());
            }
        }
        DataCmd::Stats { path, mode } => {
            let ds = load_jsonl(&path, mode)?;
            println!("{}", serde_json::to_string_pretty(&stats(&ds))?);
        }
    }
    Ok(())
}

fn prompt_line(prompt: &str) -> Result<Option<String>> {
    print!("{prompt}");
    io::stdout().flush()?;
    let mut line = String::new();
    if io::stdin().lock().read_line(&mut line)? == 0 {
        return Ok(None);
    }
    Ok(Some(line.trim_end_matches(['\r', '\n']).to_string()))
}

fn wizard(inv: &GpuInventory, out_dir: &Path) -> Result<()> {
    println!("{}\n", summarize(inv));
    let mut state = QuestionnaireState::new(inv);
    let mut step = questionnaire_next(&mut state, None);
    loop {
        match step {
            QuestionnaireStep::Ask(q) => {
                if let Some(hint) = &q.hint {
                    println!("  ! {hint}");
                }
                println!("[{}/{}] {}", q.number, q.total, q.prompt);
                for (i, c) in q.choices.iter().enumerate() {
                    println!("  {}) {c}", i + 1);
                }
                let Some(answer) = prompt_line(&format!("  [{}] > ", q.default))? else {
                    bail!("input ended before the questionnaire finished");
                };
                step = questionnaire_next(&mut state, Some(&answer));
            }
            QuestionnaireStep::Done(done) => {
                println!();
                print_plan(&done.plan);
                return write_outputs(&done.plan, out_dir);
            }
        }
    }
}

fn chat<C: ChatClient>(inv: &GpuInventory, client: C, out_dir: &Path, log: Option<&Path>) -> Result<()> {
    let mut session = Session::new(inv, client);
    if let Some(path) = log {
        session = session.with_log(EventLog::open(path)?);
    }
    if std::env::var_os("TUNEPLAN_SHOW_SYSTEM").is_some() {
        println!("{}\n", build_system_message(inv));
    }
    println!("Describe what you want to train. /confirm accepts the config, /quit leaves.");
    while let Some(line) = prompt_line("> ")? {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line == "/quit" {
            return Ok(());
        }
        let effect = if line == "/confirm" {
            session.confirm()?
        } else {
            let (said, effect) = session.user_says(line)?;
            for s in said {
                println!("{s}");
            }
            effect
        };
        match effect {
            Effect::EmitArgs(cfg) => {
                std::fs::create_dir_all(out_dir)?;
                let path = out_dir.join(ARGS_FILE_NAME);
                save_args(&path, &cfg)?;
                println!("wrote {}", path.display());
                return Ok(());
            }
            Effect::AwaitConfirmation => println!("(config is complete; /confirm to write it)"),
            Effect::None => {}
        }
    }
    Ok(())
}
