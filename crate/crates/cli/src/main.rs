use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hotspot::grid::{aggregate, write_stack, GridSpec};
use hotspot::harness::{
    emit_report, evaluate_all, load_incidents, load_report, load_trained, prepare, rederive, run_experiment, save_trained, train_all,
    DataSource, EvalReport, ExperimentConfig, SynthSettings,
};
use hotspot::ingest::{generate_synthetic, write_incidents};
use hotspot::models::Preset;
use hotspot::Error;

/// Crime hotspot forecasting experiments.
#[derive(Parser)]
#[command(name = "hotspot", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic incident CSV.
    Synth(Common),
    /// Bin the configured incidents into one stack file per resolution.
    Ingest(Common),
    /// Train every configured method and write checkpoints.
    Train(Common),
    /// Score checkpoints written by `train` and emit the report.
    Evaluate(Common),
    /// Ingest, train, evaluate and emit the report in one go.
    Run(Common),
    /// Re-derive metrics from a report's stored predictions and re-emit it.
    Report(Common),
}

#[derive(Args)]
struct Common {
    /// key = value experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: the config's output.dir, else `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Model size preset: small, full or tiny.
    #[arg(long)]
    preset: Option<String>,
}

impl Common {
    fn config(&self) -> hotspot::Result<ExperimentConfig> {
        let mut cfg = match (&self.config, self.seed) {
            (Some(path), _) => ExperimentConfig::load(path)?,
            (None, Some(seed)) => ExperimentConfig::synthetic(seed),
            (None, None) => return Err(Error::config("pass --config or --seed")),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(p) = &self.preset {
            cfg.train.preset = Preset::parse(p)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_dir(&self, cfg: Option<&ExperimentConfig>) -> PathBuf {
        self.out.clone().or_else(|| cfg.and_then(|c| c.output.clone())).unwrap_or_else(|| PathBuf::from("out"))
    }
}

fn synth(args: &Common) -> hotspot::Result<()> {
    let cfg = args.config()?;
    let settings = match &cfg.data {
        DataSource::Synthetic(s) => s.clone(),
        DataSource::Csv { .. } => SynthSettings::default(),
    };
    let events = generate_synthetic(&settings.resolve(cfg.seed))?;
    let out = args.out_dir(Some(&cfg));
    std::fs::create_dir_all(&out)?;
    let path = out.join("incidents.csv");
    write_incidents(BufWriter::new(File::create(&path)?), &events)?;
    println!("{} incidents -> {}", events.len(), path.display());
    Ok(())
}

fn ingest(args: &Common) -> hotspot::Result<()> {
    let cfg = args.config()?;
    let incidents = load_incidents(&cfg).map_err(|e| e.in_stage("ingest"))?;
    let out = args.out_dir(Some(&cfg));
    std::fs::create_dir_all(&out)?;
    for &p in &cfg.resolutions {
        let spec = GridSpec::new(incidents.bbox, p)?;
        let (stack, report) = aggregate(&incidents.events, &spec, incidents.start, incidents.days);
        let path = out.join(format!("p{p}.stack"));
        write_stack(BufWriter::new(File::create(&path)?), &stack)?;
        println!(
            "p={p}: {} binned, {} outside the box, {} outside the period -> {}",
            report.binned,
            report.out_of_bounds,
            report.out_of_range,
            path.display()
        );
    }
    Ok(())
}

fn checkpoints(out: &Path) -> PathBuf {
    out.join("checkpoints")
}

fn train(args: &Common) -> hotspot::Result<()> {
    let cfg = args.config()?;
    let incidents = load_incidents(&cfg).map_err(|e| e.in_stage("ingest"))?;
    let dir = checkpoints(&args.out_dir(Some(&cfg)));
    for &p in &cfg.resolutions {
        let prep = prepare(&cfg, &incidents, p)?;
        let mut trained = train_all(&cfg, &prep)?;
        save_trained(&cfg, &mut trained, &dir).map_err(|e| e.in_stage("checkpoint"))?;
        println!("p={p}: {} models -> {}", trained.len(), dir.display());
    }
    Ok(())
}

fn finish(report: &EvalReport, out: &Path) -> hotspot::Result<()> {
    emit_report(report, out).map_err(|e| e.in_stage("report"))?;
    for r in &report.resolutions {
        for s in &r.series {
            let m = &s.mean;
            let show = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
            println!(
                "p={:<3} {:<18} {:<12} F1 {:.3}  AUROC {}  AUCPR {}  PAI@5 {}",
                r.p,
                s.method,
                if s.multi_label { format!("{}*", s.target) } else { s.target.to_string() },
                m.f1,
                show(m.auroc),
                show(m.aucpr),
                show(m.pai5)
            );
        }
    }
    println!("digest {}\nreport -> {}", report.digest, out.join("report.json").display());
    Ok(())
}

fn evaluate(args: &Common) -> hotspot::Result<()> {
    let cfg = args.config()?;
    let incidents = load_incidents(&cfg).map_err(|e| e.in_stage("ingest"))?;
    let out = args.out_dir(Some(&cfg));
    let mut resolutions = Vec::new();
    let mut timings = Vec::new();
    for &p in &cfg.resolutions {
        let prep = prepare(&cfg, &incidents, p)?;
        let mut trained = load_trained(&cfg, p, &checkpoints(&out)).map_err(|e| e.in_stage("checkpoint"))?;
        let (r, t) = evaluate_all(&prep, &mut trained)?;
        resolutions.push(r);
        timings.extend(t);
    }
    finish(&EvalReport::new(&cfg, resolutions, timings), &out)
}

fn run(args: &Common) -> hotspot::Result<()> {
    let cfg = args.config()?;
    let report = run_experiment(&cfg)?;
    finish(&report, &args.out_dir(Some(&cfg)))
}

fn report(args: &Common) -> hotspot::Result<()> {
    let out = args.out_dir(None);
    let stored = load_report(&out.join("report.json"))?;
    let fresh = rederive(&stored)?;
    if fresh != stored {
        return Err(Error::data("stored metrics differ from those re-derived from the stored predictions"));
    }
    finish(&fresh, &out)
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Config(_) => 2,
        Error::Divergence(_) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Ingest(a) => ingest(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Run(a) => run(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
