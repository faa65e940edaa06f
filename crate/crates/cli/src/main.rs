//! Command-line harness: dataset ingestion, synthetic benchmark generation,
//! training, evaluation, NMS sweeps and gradient checks.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use partfuse::annotations::{dataset_stats, load_annotations, save_annotations, CollationMap};
use partfuse::learner::{grad_check_head, load_checkpoint, random_instance, Mode, TrainConfig};
use partfuse::runner::{
    default_nms_sweep_grid, evaluate_checkpoint, load_split, run_training, sweep_part_nms,
    write_eval_report, write_sweep_report, DataSource, RunConfig,
};
use partfuse::synthetic::{generate_synthetic, SyntheticSpec};

#[derive(Parser)]
#[command(
    name = "partfuse",
    about = "Joint object / semantic-part detection mechanics",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest annotation JSON: collate part names, filter to animals, drop
    /// part-less objects, report rejected names.
    Ingest(IngestArgs),
    /// Generate a synthetic benchmark dataset from a spec file.
    Synth(SynthArgs),
    /// Train a detection head on a dataset directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint: per-class AP, mAP, reports.
    Eval(EvalArgs),
    /// Sweep the part-detection NMS threshold and tabulate mAP.
    SweepNms(SweepArgs),
    /// Check analytic gradients against central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Annotation JSON file.
    #[arg(long)]
    annotations: PathBuf,
    /// Collation map JSON; the built-in default table when omitted.
    #[arg(long)]
    collation: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Also compute and write instance histograms.
    #[arg(long)]
    stats: bool,
}

#[derive(Args)]
struct SynthArgs {
    /// SyntheticSpec JSON; missing fields take their defaults.
    #[arg(long)]
    spec: PathBuf,
    /// Output dataset directory (train/ and val/ splits).
    #[arg(long)]
    out: PathBuf,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse::<Mode>().map_err(|e| e.to_string())
}

#[derive(Args)]
struct TrainArgs {
    /// TrainConfig JSON; missing fields take their defaults.
    #[arg(long)]
    config: PathBuf,
    /// Dataset directory with train/ and val/ splits.
    #[arg(long)]
    data: PathBuf,
    /// joint | object | part | naive
    #[arg(long, value_parser = parse_mode)]
    mode: Mode,
    /// Output directory for checkpoint, log and summary.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint file written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Which split of the dataset to score.
    #[arg(long, default_value = "val")]
    split: String,
    /// Comma-separated IoU thresholds, e.g. 0.5 or 0.5,0.55,0.6
    #[arg(long, default_value = "0.5")]
    iou: String,
    /// NMS threshold applied to both sides before scoring.
    #[arg(long, default_value_t = 0.5)]
    nms: f64,
    /// Report directory.
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Which split of the dataset to score.
    #[arg(long, default_value = "val")]
    split: String,
    /// Comma-separated NMS thresholds; the default sweep grid when omitted.
    #[arg(long)]
    thresholds: Option<String>,
    /// Evaluation IoU threshold.
    #[arg(long, default_value_t = 0.5)]
    iou: f64,
    /// Report directory; stdout only when omitted.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Seed for the randomized check instance.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Maximum accepted relative error.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-3)]
    step: f64,
}

fn parse_float_list(text: &str) -> partfuse::Result<Vec<f64>> {
    text.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<f64>()
                .map_err(|_| partfuse::Error::Config(format!("bad threshold {tok:?}")))
        })
        .collect()
}

fn read_json<T: serde::de::DeserializeOwned>(path: &PathBuf) -> partfuse::Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| partfuse::Error::Config(format!("{}: {e}", path.display())))
}

fn cmd_ingest(args: &IngestArgs) -> partfuse::Result<()> {
    let collation = match &args.collation {
        Some(path) => CollationMap::from_path(path)?,
        None => CollationMap::default(),
    };
    let outcome = load_annotations(&args.annotations, &collation)?;
    std::fs::create_dir_all(&args.out)?;
    save_annotations(&args.out.join("annotations.json"), &outcome.annotations)?;
    std::fs::write(
        args.out.join("rejected_parts.txt"),
        outcome.rejection_report(),
    )?;
    let stats = dataset_stats(&outcome.annotations);
    println!(
        "ingested {} images, {} objects, {} parts ({} non-animal objects skipped, {} part names rejected)",
        stats.images,
        stats.objects,
        stats.parts,
        outcome.skipped_object_classes,
        outcome.rejected_parts.len()
    );
    if args.stats {
        print!("{stats}");
        std::fs::write(
            args.out.join("stats.json"),
            serde_json::to_string_pretty(&stats).expect("stats serialize"),
        )?;
    }
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> partfuse::Result<()> {
    let spec: SyntheticSpec = read_json(&args.spec)?;
    let data = generate_synthetic(&spec)?;
    partfuse::runner::save_dataset(&args.out, &data.train, &data.val)?;
    std::fs::write(
        args.out.join("synth_spec.json"),
        serde_json::to_string_pretty(&spec).expect("spec serializes"),
    )?;
    println!(
        "wrote {} train and {} val images to {}",
        data.train.len(),
        data.val.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> partfuse::Result<()> {
    let config: TrainConfig = read_json(&args.config)?;
    let run = RunConfig {
        mode: args.mode,
        train: config,
        data: DataSource::Directory(args.data.clone()),
        out_dir: args.out.clone(),
    };
    let outcome = run_training(&run)?;
    println!(
        "trained mode {} for {} epochs ({} parameters)",
        outcome.checkpoint.mode.name(),
        outcome.checkpoint.epoch,
        outcome.checkpoint.params.n_params()
    );
    if let Some(last) = outcome.logs.last() {
        println!(
            "final train loss {:.4}, val mAP@0.5 object {:.1}, part {:.1}",
            last.train_loss,
            100.0 * last.val_map_object,
            100.0 * last.val_map_part
        );
    }
    println!("checkpoint: {}", outcome.checkpoint_path.display());
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> partfuse::Result<()> {
    let checkpoint = load_checkpoint(&args.checkpoint)?;
    let dataset = load_split(&args.data.join(&args.split))?;
    let thresholds = parse_float_list(&args.iou)?;
    let report = evaluate_checkpoint(&checkpoint, &dataset, &thresholds, args.nms)?;
    write_eval_report(&args.report, &report)?;
    if report.object_detections.is_empty() && report.part_detections.is_empty() {
        eprintln!("warning: the checkpoint produced no detections on this split");
    }
    for &iou in &thresholds {
        println!(
            "IoU {:.2}: object mAP {:.1}, part mAP {:.1}",
            iou,
            100.0 * report.object_map(iou),
            100.0 * report.part_map(iou)
        );
    }
    if thresholds.len() > 1 {
        println!(
            "mean over IoU thresholds: object {:.1}, part {:.1}",
            100.0 * report.object.mean_over_thresholds,
            100.0 * report.part.mean_over_thresholds
        );
    }
    println!("reports written to {}", args.report.display());
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> partfuse::Result<()> {
    let checkpoint = load_checkpoint(&args.checkpoint)?;
    let dataset = load_split(&args.data.join(&args.split))?;
    let thresholds = match &args.thresholds {
        Some(text) => parse_float_list(text)?,
        None => default_nms_sweep_grid(),
    };
    let table = sweep_part_nms(&checkpoint, &dataset, &thresholds, args.iou)?;
    println!(
        "part detection mAP@IoU={:.2} by NMS threshold:",
        table.iou_threshold
    );
    for row in &table.rows {
        println!("  {:<6.2} {:>6.1}", row.nms_threshold, 100.0 * row.map);
    }
    if let Some(dir) = &args.report {
        write_sweep_report(dir, &table)?;
        println!("reports written to {}", dir.display());
    }
    Ok(())
}

fn cmd_gradcheck(args: &GradcheckArgs) -> partfuse::Result<()> {
    let (params, instance) = random_instance(args.seed);
    let report = grad_check_head(&params, &instance, args.step, args.tolerance)?;
    print!("{report}");
    report.ensure_pass()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Ingest(args) => cmd_ingest(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::SweepNms(args) => cmd_sweep(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error[{}]: {err}", err.category());
            ExitCode::FAILURE
        }
    }
}
