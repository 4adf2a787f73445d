use clap::{Args, Parser, Subcommand};
use inqkit::ensemble::{mean_outputs, Ensemble};
use inqkit::harness::{
    build_model, evaluate_model, evaluate_probs, load_dataset, metric_names, quantize_model, run_experiment,
    select_training_sets, train_float, ExperimentConfig, Task,
};
use inqkit::inq::PartitionState;
use inqkit::nncore::ModelGraph;
use inqkit::packstore::{bench, memory_report, pack_model, PackedModel, TensorData};
use inqkit::Result;
use serde_json::json;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "inqkit", version, about = "Power-of-two weight quantization toolkit")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Task used when no config file is given.
    #[arg(long, global = true, value_parser = parse_task)]
    task: Option<Task>,
    /// Run a single seed instead of the configured list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Bit width (replaces the configured sweep).
    #[arg(long, global = true)]
    bits: Option<u32>,
    /// Ensemble size (replaces the configured sweep).
    #[arg(long, global = true)]
    parallel: Option<usize>,
    /// Worker threads for independent jobs.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a float model and save it as SQW.
    Train,
    /// Incrementally quantize a model (trained from scratch unless --model is given).
    Inq {
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Evaluate a saved model on the test split.
    Eval {
        #[arg(long)]
        model: PathBuf,
    },
    /// Train --parallel members and compare the ensemble with its members.
    EnsembleEval,
    /// Run the suggestive-annotation loop and save the chosen indices.
    Suggest,
    /// One-shot quantize the weights of a float SQW model at --bits.
    Pack {
        #[arg(long)]
        model: PathBuf,
    },
    /// Describe an SQW file; with --out also dump its values as JSON.
    Unpack { file: PathBuf },
    /// Time shift-add against multiply inference for a quantized model.
    Bench {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 20)]
        reps: usize,
        #[arg(long, default_value_t = 64)]
        batch: usize,
    },
    /// Run the configured recipe and write its CSV tables.
    Report,
}

fn parse_task(s: &str) -> std::result::Result<Task, String> {
    match s {
        "seg" => Ok(Task::Seg),
        "cls" => Ok(Task::Cls),
        "asr" => Ok(Task::Asr),
        _ => Err(format!("unknown task {s:?} (seg, cls, asr)")),
    }
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::for_task(c.task.unwrap_or(Task::Cls)),
    };
    if let Some(s) = c.seed {
        cfg.seeds = vec![s];
    }
    if let Some(b) = c.bits {
        cfg.bit_widths = vec![b];
    }
    if let Some(p) = c.parallel {
        cfg.parallel = vec![p];
    }
    if let Some(o) = &c.out {
        cfg.output_dir = o.clone();
    }
    if let Some(w) = c.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_metrics(task: Task, label: &str, values: &[f64]) {
    let parts: Vec<String> = metric_names(task)
        .iter()
        .zip(values)
        .map(|(n, v)| format!("{n} {v:.2}%"))
        .collect();
    println!("{label}: {}", parts.join(", "));
}

fn save(dir: &Path, name: &str, m: &PackedModel) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let p = dir.join(name);
    m.write(&p)?;
    println!("wrote {}", p.display());
    Ok(p)
}

fn template(cfg: &ExperimentConfig) -> Result<ModelGraph<f32>> {
    build_model(cfg.task, cfg.model_size, cfg.dataset(), 0)
}

fn load_model(cfg: &ExperimentConfig, path: &Path) -> Result<(ModelGraph<f32>, PackedModel)> {
    let packed = PackedModel::read(path)?;
    let mut model = template(cfg)?;
    packed.load_into(&mut model)?;
    Ok((model, packed))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.common)?;
    let seed = cfg.seeds[0];
    let bits = cfg.bit_widths[0];
    let out = cfg.output_dir.clone();
    match cli.command {
        Command::Train => {
            let data = load_dataset(cfg.task, cfg.dataset())?;
            let (model, losses) = train_float(&cfg, cfg.model_size, &data.train, seed, cfg.train().epochs)?;
            println!("losses: {losses:.4?}");
            print_metrics(cfg.task, "test", &evaluate_model(cfg.task, &model, &data.test)?);
            save(&out, &format!("float-s{seed}.sqw"), &pack_model(&model, None)?)?;
        }
        Command::Inq { model } => {
            let data = load_dataset(cfg.task, cfg.dataset())?;
            let float = match model {
                Some(p) => load_model(&cfg, &p)?.0,
                None => train_float(&cfg, cfg.model_size, &data.train, seed, cfg.train().epochs)?.0,
            };
            print_metrics(cfg.task, "float", &evaluate_model(cfg.task, &float, &data.test)?);
            let (q, state, log) = quantize_model(&cfg, &float, &data.train, bits, seed)?;
            for step in &log {
                println!(
                    "step {}: {:.1}% quantized, loss {:.4}",
                    step.step,
                    100.0 * step.quantized_fraction,
                    step.train_loss.unwrap_or(f64::NAN)
                );
            }
            print_metrics(cfg.task, &format!("{bits}-bit"), &evaluate_model(cfg.task, &q, &data.test)?);
            let packed = pack_model(&q, Some(&state))?;
            println!("{}", memory_report(&packed));
            save(&out, &format!("inq-b{bits}-s{seed}.sqw"), &packed)?;
        }
        Command::Eval { model } => {
            let data = load_dataset(cfg.task, cfg.dataset())?;
            let (m, _) = load_model(&cfg, &model)?;
            print_metrics(cfg.task, "test", &evaluate_model(cfg.task, &m, &data.test)?);
        }
        Command::EnsembleEval => {
            let data = load_dataset(cfg.task, cfg.dataset())?;
            let k = cfg.parallel[0];
            let quantize = cli.common.bits.is_some();
            let mut members = Vec::with_capacity(k);
            for m in 0..k {
                let s = seed * 1000 + m as u64;
                let (mut model, _) = train_float(&cfg, cfg.model_size, &data.train, s, cfg.train().epochs)?;
                if quantize {
                    model = quantize_model(&cfg, &model, &data.train, bits, s)?.0;
                }
                print_metrics(cfg.task, &format!("member {m}"), &evaluate_model(cfg.task, &model, &data.test)?);
                members.push(model);
            }
            let ens = Ensemble::new(members)?;
            let outs = ens.member_outputs(&data.test.inputs, 128)?;
            print_metrics(cfg.task, &format!("ensemble of {k}"), &evaluate_probs(cfg.task, &mean_outputs(&outs)?, &data.test)?);
        }
        Command::Suggest => {
            let data = load_dataset(cfg.task, cfg.dataset())?;
            let sel = select_training_sets(&cfg, &data.train, seed)?;
            for s in &sel.steps {
                println!(
                    "iteration {}: {} labeled, shortlist uncertainty {:.5}, chose {:?}",
                    s.iteration, s.labeled, s.shortlist_mean_uncertainty, s.chosen
                );
            }
            std::fs::create_dir_all(&out)?;
            let p = out.join(format!("suggested-s{seed}.json"));
            let body = json!({
                "seed_labeled": sel.seed_labeled,
                "suggested": sel.suggested,
                "exhausted": sel.exhausted,
            });
            std::fs::write(&p, serde_json::to_string_pretty(&body)?)?;
            println!("{} suggested{}; wrote {}", sel.suggested.len(), if sel.exhausted { " (pool exhausted)" } else { "" }, p.display());
        }
        Command::Pack { model } => {
            let (mut m, _) = load_model(&cfg, &model)?;
            let mut state = PartitionState::new(&m, bits, cfg.inq.max_level_override)?;
            for t in 0..state.tensors.len() {
                let all: Vec<usize> = (0..state.tensors[t].len()).collect();
                state.quantize_group(&mut m, t, &all)?;
            }
            let packed = pack_model(&m, Some(&state))?;
            println!("{}", memory_report(&packed));
            save(&out, &format!("packed-b{bits}.sqw"), &packed)?;
        }
        Command::Unpack { file } => {
            let packed = PackedModel::read(&file)?;
            for t in &packed.tensors {
                match &t.data {
                    TensorData::Float32(_) => println!("{:<12} {:?} f32", t.name, t.shape),
                    TensorData::Packed { level_set, .. } => println!(
                        "{:<12} {:?} {}-bit, exponents {}..={}",
                        t.name,
                        t.shape,
                        level_set.bit_width(),
                        level_set.n2(),
                        level_set.n1()
                    ),
                }
            }
            println!("{}", memory_report(&packed));
            if cli.common.out.is_some() {
                let mut dump = serde_json::Map::new();
                for t in &packed.tensors {
                    dump.insert(t.name.clone(), json!({"shape": t.shape, "values": t.values()?}));
                }
                std::fs::create_dir_all(&out)?;
                let p = out.join("unpacked.json");
                std::fs::write(&p, serde_json::to_string(&dump)?)?;
                println!("wrote {}", p.display());
            }
        }
        Command::Bench { model, reps, batch } => {
            let data = load_dataset(cfg.task, cfg.dataset())?;
            let (_, packed) = load_model(&cfg, &model)?;
            let n = batch.min(data.test.len());
            let x = data.test.inputs.gather_rows(&(0..n).collect::<Vec<_>>());
            println!("{}", bench(&template(&cfg)?, &packed, &x, reps)?);
        }
        Command::Report => {
            let report = run_experiment(&cfg)?;
            for t in &report.tables {
                println!("== {} ==\n{}", t.name, t.to_csv()?);
            }
            println!("outputs in {}", out.display());
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
