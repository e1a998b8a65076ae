//! Command line. Every config-driven subcommand accepts `--section.key value`
//! overrides on top of its TOML file.

use crate::config::{apply_overrides, ExperimentConfig, ExperimentKind};
use crate::experiments::run_experiment;
use crate::report::ExperimentReport;
use crate::HarnessError;
use clap::{CommandFactory, Parser, Subcommand};
use seedmem_core::binfmt::{ArrayFile, NamedArray};
use seedmem_core::RngStream;
use seedmem_erasure::{erase_concept, ErasureConfig};
use seedmem_inversion::{invert_images, write_seed_file, InversionParams};
use seedmem_toyldm::{build_model, make_dataset, ConceptLabel, ModelCheckpoint, ModelConfig, ToyImage, IMAGE_LEN, IMAGE_SIDE};
use std::path::{Path, PathBuf};

pub const DATA_MAGIC: [u8; 8] = *b"SMDATA01";

#[derive(Debug, Parser)]
#[command(name = "seedmem", about = "Seed-memory experiments on a toy latent diffusion model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a labelled dataset to an array file.
    MakeData {
        /// Model config (TOML); its dataset section and training seed are used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Images per class, replacing the configured counts.
        #[arg(long)]
        per_class: Option<usize>,
    },
    /// Train autoencoder and denoiser and write a checkpoint.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Erase a concept from a checkpoint.
    Erase {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Erasure config (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Invert every image of a dataset file; writes rows.csv and seeds.bin.
    Invert {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Inversion jumps; 0 uses every timestep.
        #[arg(long, default_value_t = 0)]
        steps: usize,
        #[arg(long, default_value_t = 5)]
        renoise_iters: usize,
        /// Invert only the first N images.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Erased-set vs reference-set seed likelihoods.
    ConceptExp(ExpArgs),
    /// SIB memories of erased-concept queries.
    ImageExp(ExpArgs),
    /// Inversion of patch-shuffled images.
    ShuffleExp(ExpArgs),
    /// Generation quality vs seed norm.
    NormSweep(ExpArgs),
    /// Verify a report directory and print its summaries and gates.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
}

#[derive(Debug, clap::Args)]
struct ExpArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, replacing the configured one.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Separates `--key value` pairs that are not flags of `sub` from the rest.
fn split_overrides(sub: &clap::Command, args: &[String]) -> Result<(Vec<String>, Vec<(String, String)>), String> {
    let known: Vec<(String, bool)> = sub
        .get_arguments()
        .filter_map(|a| a.get_long().map(|l| (l.to_string(), a.get_action().takes_values())))
        .collect();
    let mut keep = Vec::new();
    let mut overrides = Vec::new();
    let mut i = 0;
    while i < args.len() {
        let tok = &args[i];
        i += 1;
        let Some(flag) = tok.strip_prefix("--").filter(|f| !f.is_empty()) else {
            keep.push(tok.clone());
            continue;
        };
        let (name, inline) = match flag.split_once('=') {
            Some((n, v)) => (n, Some(v.to_string())),
            None => (flag, None),
        };
        if name == "help" {
            keep.push(tok.clone());
            continue;
        }
        if let Some((_, takes)) = known.iter().find(|(l, _)| l == name) {
            keep.push(tok.clone());
            if *takes && inline.is_none() && i < args.len() {
                keep.push(args[i].clone());
                i += 1;
            }
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None if i < args.len() => {
                i += 1;
                args[i - 1].clone()
            }
            None => return Err(format!("override --{name} needs a value")),
        };
        overrides.push((name.to_string(), value));
    }
    Ok((keep, overrides))
}

fn read_text(path: &Option<PathBuf>) -> Result<String, HarnessError> {
    match path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| HarnessError::Config(format!("{}: {e}", p.display()))),
        None => Ok(String::new()),
    }
}

fn parse_with<T: serde::de::DeserializeOwned>(path: &Option<PathBuf>, overrides: &[(String, String)]) -> Result<T, HarnessError> {
    let table = apply_overrides(&read_text(path)?, overrides)?;
    table.try_into().map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))
}

fn model_config(path: &Option<PathBuf>, overrides: &[(String, String)]) -> Result<ModelConfig, HarnessError> {
    let cfg: ModelConfig = parse_with(path, overrides)?;
    cfg.dataset.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
    Ok(cfg)
}

pub fn write_dataset(path: &Path, images: &[ToyImage], cfg: &ModelConfig) -> Result<(), HarnessError> {
    let mut f = ArrayFile::new(DATA_MAGIC, 1);
    let pixels: Vec<f32> = images.iter().flat_map(|i| i.data().iter().copied()).collect();
    f.arrays.push(NamedArray::new("images", vec![images.len(), IMAGE_SIDE, IMAGE_SIDE], pixels));
    f.arrays.push(NamedArray::new("labels", vec![images.len()], images.iter().map(|i| i.label.id() as f32).collect()));
    f.metadata.insert("count".into(), images.len().to_string());
    f.metadata.insert("dataset_hash".into(), cfg.dataset.hash());
    f.metadata.insert("concepts".into(), cfg.dataset.concept_names().join(","));
    f.save(path)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Vec<ToyImage>, HarnessError> {
    let f = ArrayFile::load(path, &DATA_MAGIC)?;
    let images = f.require("images")?;
    let labels = f.require("labels")?;
    let n = labels.data.len();
    if images.data.len() != n * IMAGE_LEN {
        return Err(HarnessError::Config(format!("{}: image and label counts differ", path.display())));
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        out.push(ToyImage::new(images.data[i * IMAGE_LEN..(i + 1) * IMAGE_LEN].to_vec(), ConceptLabel(labels.data[i] as u32))?);
    }
    Ok(out)
}

fn print_report(r: &ExperimentReport) {
    println!("{} experiment, config {}", r.kind.name(), &r.provenance.config_hash[..12]);
    println!("{:<10} {:<18} {:>5} {:>6} {:>9} {:>9} {:>9} {:>8}", "model", "group", "n", "failed", "psnr", "nll", "detect", "d_N");
    let f = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into());
    for s in &r.summaries {
        println!(
            "{:<10} {:<18} {:>5} {:>6} {:>9} {:>9} {:>9} {:>8}",
            s.model,
            s.group,
            s.count,
            s.failed,
            f(s.mean_psnr),
            f(s.mean_nll),
            f(s.detection_rate),
            f(s.d_n)
        );
    }
    for g in &r.gates {
        println!("[{}] {} = {:.4} ({} {})", if g.passed { "PASS" } else { "FAIL" }, g.name, g.value, g.op, g.threshold);
    }
}

fn run_command(cmd: Command, overrides: &[(String, String)]) -> Result<i32, HarnessError> {
    let no_overrides = |what: &str| {
        if overrides.is_empty() {
            Ok(())
        } else {
            Err(HarnessError::Config(format!("{what} takes no config overrides, got --{}", overrides[0].0)))
        }
    };
    match cmd {
        Command::MakeData { config, out, per_class } => {
            let cfg = model_config(&config, overrides)?;
            let spec = match per_class {
                Some(n) => cfg.dataset.clone().with_counts(n),
                None => cfg.dataset.clone(),
            };
            let images = make_dataset(&spec, &RngStream::new(cfg.train.seed, 0).derive(10))?;
            write_dataset(&out, &images, &cfg)?;
            println!("wrote {} images to {}", images.len(), out.display());
        }
        Command::Train { config, out } => {
            let cfg = model_config(&config, overrides)?;
            let (ckpt, log) = build_model(&cfg)?;
            ckpt.save(&out)?;
            println!("loss head {:.4} tail {:.4}; wrote {}", log.head_mean(0.1), log.tail_mean(0.1), out.display());
        }
        Command::Erase { checkpoint, config, out } => {
            let cfg: ErasureConfig = parse_with(&config, overrides)?;
            let ckpt = ModelCheckpoint::load(&checkpoint).map_err(|e| HarnessError::Config(format!("{}: {e}", checkpoint.display())))?;
            let erased = erase_concept(&ckpt, &cfg)?;
            erased.save(&out)?;
            println!("erased concept {} ; wrote {}", cfg.target, out.display());
        }
        Command::Invert { checkpoint, data, out, steps, renoise_iters, limit } => {
            no_overrides("invert")?;
            let ckpt = ModelCheckpoint::load(&checkpoint).map_err(|e| HarnessError::Config(format!("{}: {e}", checkpoint.display())))?;
            let mut images = read_dataset(&data).map_err(|e| HarnessError::Config(e.to_string()))?;
            images.truncate(limit.unwrap_or(images.len()));
            let refs: Vec<&ToyImage> = images.iter().collect();
            let conds: Vec<ConceptLabel> = images.iter().map(|i| i.label).collect();
            let ids: Vec<String> = (0..images.len()).map(|i| format!("img{i}")).collect();
            let res = invert_images(&ckpt, &refs, &conds, &ids, &InversionParams { steps, renoise_iters })?;
            std::fs::create_dir_all(&out)?;
            let mut csv = String::from("id,concept,psnr,nll\n");
            for (id, r) in ids.iter().zip(&res) {
                csv.push_str(&format!("{id},{},{},{}\n", r.seed.condition.id(), r.psnr, r.nll));
            }
            std::fs::write(out.join("rows.csv"), csv)?;
            let seeds: Vec<_> = res.into_iter().map(|r| r.seed).collect();
            write_seed_file(&out.join("seeds.bin"), &seeds)?;
            println!("inverted {} images into {}", seeds.len(), out.display());
        }
        Command::ConceptExp(a) => return experiment(ExperimentKind::Concept, a, overrides),
        Command::ImageExp(a) => return experiment(ExperimentKind::Image, a, overrides),
        Command::ShuffleExp(a) => return experiment(ExperimentKind::Shuffle, a, overrides),
        Command::NormSweep(a) => return experiment(ExperimentKind::NormSweep, a, overrides),
        Command::Report { dir } => {
            no_overrides("report")?;
            let path = dir.join("report.json");
            let text = std::fs::read_to_string(&path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
            let report = ExperimentReport::from_json(&text)?;
            report.verify()?;
            print_report(&report);
            return Ok(if report.all_gates_pass() { 0 } else { 1 });
        }
    }
    Ok(0)
}

fn experiment(kind: ExperimentKind, a: ExpArgs, overrides: &[(String, String)]) -> Result<i32, HarnessError> {
    let mut all = vec![("kind".to_string(), kind.name().to_string())];
    all.extend_from_slice(overrides);
    let mut cfg = ExperimentConfig::from_toml_with_overrides(&read_text(&a.config)?, &all)?;
    if let Some(out) = a.out {
        cfg.out = out;
    }
    let run = run_experiment(&cfg)?;
    run.write(&cfg.out)?;
    std::fs::write(cfg.out.join("config.toml"), cfg.to_toml_string())?;
    print_report(&run.report);
    Ok(if run.report.all_gates_pass() { 0 } else { 1 })
}

/// Runs the command line on `args` (including the program name) and returns the exit code.
pub fn run(args: Vec<String>) -> i32 {
    let cmd = Cli::command();
    let (head, rest) = args.split_at(args.len().min(2));
    let sub = cmd.find_subcommand(head.get(1).map(String::as_str).unwrap_or("")).cloned();
    let (mut kept, overrides) = match &sub {
        Some(sub) => match split_overrides(sub, rest) {
            Ok(x) => x,
            Err(msg) => {
                eprintln!("error: {msg}\n\n{}", sub.clone().render_usage());
                return 2;
            }
        },
        None => (rest.to_vec(), Vec::new()),
    };
    let mut argv = head.to_vec();
    argv.append(&mut kept);
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run_command(cli.command, &overrides) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.exit_code() == 2 {
                if let Some(mut sub) = sub {
                    eprintln!("\n{}", sub.render_usage());
                }
            }
            e.exit_code()
        }
    }
}
