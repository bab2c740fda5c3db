use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use ambc_core::bench::{
    build_online_dataset, csv_string, emit_csv, prepare_models, preset, run_ber_sweep_with,
    run_single_frame, ExperimentConfig, ModelBank, SweepVar, PRESET_NAMES,
};
use ambc_core::cmnet::checkpoint::{load_checkpoint, save_checkpoint};
use ambc_core::cmnet::{CmnetModel, TrainConfig};
use ambc_core::error::{Error, Result};
use ambc_core::rng::stream;
use ambc_core::sim::{draw_channel, generate_frame};
use ambc_core::verify::{asymptotic_equivalence, gradcheck, AsymptoticConfig, GradcheckConfig};

#[derive(Parser, Debug)]
#[command(
    name = "ambc",
    version,
    about = "Ambient backscatter detection lab",
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Pretrain CMNet offline on simulated channels and write a checkpoint.
    Train(TrainArgs),
    /// Fine-tune a checkpoint on the pilots of one simulated frame.
    Transfer(TransferArgs),
    /// Decode one simulated frame with every configured detector.
    Detect(DetectArgs),
    /// Run a Monte Carlo BER sweep and write CSV.
    Sweep(SweepArgs),
    /// Compare analytic and finite-difference gradients of CMNet.
    Gradcheck(GradcheckArgs),
    /// Check CMNet against energy thresholding on diagonal covariances.
    Asymptotic(AsymptoticArgs),
}

#[derive(Args, Debug, Clone)]
struct ExperimentArgs {
    /// Named experiment family.
    #[arg(long, value_parser = PRESET_NAMES)]
    preset: Option<String>,
    /// Experiment TOML file (for train/transfer: a training-schedule file).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated SNR values in dB.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    snr_grid: Option<Vec<f64>>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
    /// Offline examples.
    #[arg(long)]
    count: Option<usize>,
    /// Output checkpoint.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TransferArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
    /// Pretrained checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output checkpoint.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DetectArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// CSV output; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    exp: ExperimentArgs,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    trials: Option<u64>,
    /// CSV output; falls back to the config's `output`, then stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long)]
    transfer_every: Option<usize>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    antennas: usize,
    /// Entries probed per parameter tensor; 0 probes all.
    #[arg(long, default_value_t = 256)]
    samples: usize,
}

#[derive(Args, Debug)]
struct AsymptoticArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    #[arg(long, default_value_t = 8)]
    antennas: usize,
    /// Per-entry variance under H1.
    #[arg(long)]
    sigma1_sq: Option<f64>,
    /// Per-entry variance under H0.
    #[arg(long)]
    sigma0_sq: Option<f64>,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Experiment selected by `--config` or `--preset` (default fig7a).
fn experiment(args: &ExperimentArgs, config_is_experiment: bool) -> Result<ExperimentConfig> {
    let mut cfg = match (&args.config, &args.preset) {
        (Some(path), _) if config_is_experiment => ExperimentConfig::from_toml(&read_text(path)?)?,
        (_, Some(name)) => preset(name)?,
        _ => preset("fig7a")?,
    };
    if let Some(grid) = &args.snr_grid {
        if cfg.sweep == SweepVar::SnrDb {
            cfg.grid = grid.clone();
        } else if grid.len() == 1 {
            cfg.base.snr_db = grid[0];
        } else {
            return Err(Error::Config(format!(
                "--snr-grid takes a single value for a {} sweep",
                cfg.sweep.id()
            )));
        }
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn schedule_file(args: &ExperimentArgs, base: TrainConfig) -> Result<TrainConfig> {
    match &args.config {
        Some(path) => TrainConfig::from_toml(&read_text(path)?, base),
        None => Ok(base),
    }
}

fn write_points(points: &[ambc_core::bench::BerPoint], out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => emit_csv(points, path),
        None => {
            let text = csv_string(points)?;
            io::stdout()
                .write_all(text.as_bytes())
                .map_err(|e| Error::io(Path::new("<stdout>"), e))
        }
    }
}

fn models_for(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<ModelBank> {
    let mut cfg = cfg.clone();
    if let Some(path) = checkpoint {
        cfg.cmnet.checkpoint = Some(path.to_path_buf());
    }
    prepare_models(&cfg)
}

fn train(args: TrainArgs) -> Result<()> {
    let mut cfg = experiment(&args.exp, false)?;
    cfg.cmnet.checkpoint = None;
    let plan = cfg.cmnet.pretrain.get_or_insert_with(Default::default);
    if let Some(count) = args.count {
        plan.count = count;
    }
    let schedule = schedule_file(&args.exp, TrainConfig::offline_default().apply(&plan.train))?;
    plan.train = ambc_core::cmnet::TrainOverrides {
        epochs: Some(schedule.epochs),
        batch_size: Some(schedule.batch_size),
        lr: Some(schedule.lr),
        seed: Some(schedule.seed),
        freeze_boundary: Some(schedule.freeze_boundary.clone()),
    };
    cfg.detectors = vec![ambc_core::bench::DetectorKind::Cmnet];
    let bank = prepare_models(&cfg)?;
    if bank.len() != 1 {
        return Err(Error::Config(format!(
            "experiment spans {} (M, N) pairs; train needs exactly one",
            bank.len()
        )));
    }
    let model = bank.into_values().next().expect("one model");
    save_checkpoint(&model, &args.out)?;
    println!(
        "pretrained M={} final_loss={:.6} -> {}",
        model.antennas(),
        model.provenance().final_loss.unwrap_or(f64::NAN),
        args.out.display()
    );
    Ok(())
}

fn transfer(args: TransferArgs) -> Result<()> {
    let cfg = experiment(&args.exp, false)?;
    let mut model: CmnetModel = load_checkpoint(&args.checkpoint)?;
    let p = cfg.point_params(cfg.grid[0])?;
    if p.antennas != model.antennas() {
        return Err(Error::DimensionMismatch {
            expected: format!("M={}", p.antennas),
            actual: format!("checkpoint M={}", model.antennas()),
        });
    }
    let mut rng = stream(cfg.seed, &[u64::MAX]);
    let ch = draw_channel(&mut rng, &p)?;
    let t = cfg.frame_symbols(&p);
    let frame = generate_frame(&mut rng, &ch, &p, t, cfg.pilots, None)?;
    let online = build_online_dataset(
        &mut rng,
        &frame,
        cfg.cmnet.online_count,
        cfg.cmnet.augment_var,
    )?;
    let schedule = schedule_file(&args.exp, cfg.cmnet.transfer_config())?;
    let report = model.transfer_finetune(&online, &schedule)?;
    save_checkpoint(&model, &args.out)?;
    println!(
        "transferred on {} pilots, final_loss={:.6} -> {}",
        cfg.pilots,
        report.final_loss().unwrap_or(f64::NAN),
        args.out.display()
    );
    Ok(())
}

fn detect(args: DetectArgs) -> Result<()> {
    let cfg = experiment(&args.exp, true)?;
    let models = models_for(&cfg, args.checkpoint.as_deref())?;
    let points = run_single_frame(&cfg, cfg.grid[0], &models)?;
    write_points(&points, args.out.as_deref())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let mut cfg = experiment(&args.exp, true)?;
    if let Some(t) = args.trials {
        cfg.trials = t;
    }
    if let Some(k) = args.transfer_every {
        cfg.transfer_every = k;
    }
    cfg.validate()?;
    let models = models_for(&cfg, args.checkpoint.as_deref())?;
    let result = run_ber_sweep_with(&cfg, &models, args.workers)?;
    for r in &result.pretrained {
        log::info!(
            "model M={} N={}: datasets {:?}",
            r.antennas,
            r.samples_per_symbol,
            r.provenance.datasets
        );
    }
    let out = args.out.or(cfg.output.clone());
    write_points(&result.points, out.as_deref())
}

fn run_gradcheck(args: GradcheckArgs) -> Result<bool> {
    let report = gradcheck(&GradcheckConfig {
        antennas: args.antennas,
        seed: args.seed,
        samples_per_tensor: (args.samples > 0).then_some(args.samples),
        ..GradcheckConfig::default()
    })?;
    for t in &report.tensors {
        println!(
            "{} {:<3} {:<6} checked={}/{} kinks_skipped={} max_rel={:.3e}",
            if t.passed { "PASS" } else { "FAIL" },
            t.layer,
            t.param,
            t.checked,
            t.len,
            t.kinks_skipped,
            t.max_rel_error
        );
    }
    Ok(report.passed())
}

fn run_asymptotic(args: AsymptoticArgs) -> Result<bool> {
    let mut cfg = AsymptoticConfig {
        antennas: args.antennas,
        trials: args.trials,
        seed: args.seed,
        ..AsymptoticConfig::default()
    };
    if let Some(v) = args.sigma1_sq {
        cfg.sigma1_sq = v;
    }
    if let Some(v) = args.sigma0_sq {
        cfg.sigma0_sq = v;
    }
    let r = asymptotic_equivalence(&cfg)?;
    println!(
        "agreement={:.4} implied_sigma2={:.5} gamma={:.3} cmnet_ber={:.4} ed_ber={:.4}",
        r.agreement, r.implied_sigma_sq, r.energy_threshold, r.cmnet_ber, r.energy_ber
    );
    Ok(r.agreement >= 0.95)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let outcome = match cli.command {
        Command::Train(a) => train(a).map(|_| true),
        Command::Transfer(a) => transfer(a).map(|_| true),
        Command::Detect(a) => detect(a).map(|_| true),
        Command::Sweep(a) => sweep(a).map(|_| true),
        Command::Gradcheck(a) => run_gradcheck(a),
        Command::Asymptotic(a) => run_asymptotic(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
