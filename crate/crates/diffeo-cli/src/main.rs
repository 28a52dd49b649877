//! `diffeo`: end-to-end pipeline driver. Subcommands generate Darcy datasets
//! on random polygonal domains, train and evaluate the Fourier neural
//! operator on the shared grid, run the domain-similarity (DDS) study, and
//! certify the 3D volume parameterization.
//!
//! Every subcommand takes `--config FILE` (JSON) plus flags; flags win. The
//! fully resolved config is echoed into the output directory. Exit codes:
//! 0 success, 2 validation error (bad input/config), 3 numerical failure.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use diffeo_core::darcy::{generate_dataset, DarcyConfig, PolygonFamily};
use diffeo_core::dataset::load_dataset;
use diffeo_core::dds::{
    correlation_report, dds_with_mode, GeometryImage, NccMode,
};
use diffeo_core::error::{Error, Result};
use diffeo_core::fno::{
    evaluate, load_checkpoint, save_checkpoint, train, training_pair, write_log_csv, Activation,
    FnoConfig, TrainSample,
};
use diffeo_core::volparam::{
    demo_pocket_part, inverse_parameterize, jacobian_det, load_part_surfaces, volume_parameterize,
    PartSurfaces,
};
use rand::{Rng, SeedableRng};

#[derive(Parser)]
#[command(name = "diffeo", version, about = "Shared-domain neural operator pipeline")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a Darcy-flow dataset on random polygonal domains.
    Gen(GenArgs),
    /// Train the FNO on a generated dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a labeled dataset.
    Eval(EvalArgs),
    /// DDS study: similarity of candidate domains to a training set,
    /// correlated against evaluation errors.
    Dds(DdsArgs),
    /// Sample a part volume and certify the closed-form parameterization.
    VolparamCheck(VolArgs),
}

#[derive(Args)]
struct GenArgs {
    /// JSON file with a full dataset config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output dataset directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    family: Option<PolygonFamily>,
    /// Shared-grid resolution per axis.
    #[arg(long)]
    res: Option<usize>,
    /// Target mesh edge length.
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Uniform magnification of the physics domain.
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long)]
    c_min: Option<f64>,
    #[arg(long)]
    c_max: Option<f64>,
}

/// Train-run config as stored in `--config` JSON and echoed to the output:
/// the FNO hyperparameters plus the train/validation split.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainRunConfig {
    #[serde(default)]
    fno: FnoConfig,
    /// Number of leading dataset samples used for training; the rest are
    /// validation. Default: 80% (160/40 at the default dataset size).
    #[serde(default)]
    train_count: Option<usize>,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        TrainRunConfig { fno: FnoConfig::default(), train_count: None }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory produced by `gen`.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoint, log, and config echo.
    #[arg(long)]
    out: PathBuf,
    /// Continue from `<out>/model.ckpt` instead of initializing fresh.
    #[arg(long)]
    resume: bool,
    #[arg(long)]
    train_count: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    modes: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    activation: Option<Activation>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint file from `train`.
    #[arg(long)]
    model: PathBuf,
    /// Labeled dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for per-sample CSV and JSON summary.
    #[arg(long)]
    out: PathBuf,
    /// Skip this many leading samples (e.g. past the training split).
    #[arg(long, default_value_t = 0)]
    skip: usize,
    /// Evaluate at most this many samples.
    #[arg(long)]
    take: Option<usize>,
}

#[derive(Args)]
struct DdsArgs {
    /// Dataset directory whose geometries define the training set.
    #[arg(long)]
    train_data: PathBuf,
    /// Candidate dataset directory to score.
    #[arg(long)]
    candidate_data: PathBuf,
    /// Per-sample eval CSV for the candidate set (from `eval`).
    #[arg(long)]
    eval_csv: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// NCC normalization: joint (default) or per_channel.
    #[arg(long, default_value = "joint")]
    ncc_mode: String,
}

#[derive(Args)]
struct VolArgs {
    /// Part surface file; omit to use the built-in demo pocket part.
    #[arg(long)]
    surfaces: Option<PathBuf>,
    /// Use the flat block (identity map) instead of the demo pocket.
    #[arg(long)]
    flat_block: bool,
    #[arg(long)]
    out: PathBuf,
    /// Number of sample points in the part box.
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

fn load_json_config<T: serde::de::DeserializeOwned + Default>(path: &Option<PathBuf>) -> Result<T> {
    match path {
        Some(p) => Ok(serde_json::from_str(&fs::read_to_string(p)?)?),
        None => Ok(T::default()),
    }
}

fn echo_config<T: Serialize>(dir: &Path, config: &T) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.json"), serde_json::to_string_pretty(config)?)?;
    Ok(())
}

fn cmd_gen(args: GenArgs) -> Result<()> {
    let mut cfg: DarcyConfig = load_json_config(&args.config)?;
    if let Some(n) = args.n {
        cfg.n = n;
    }
    if let Some(f) = args.family {
        cfg.family = f;
    }
    if let Some(r) = args.res {
        cfg.resolution = r;
    }
    if let Some(h) = args.h {
        cfg.h = h;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(s) = args.scale {
        cfg.scale = s;
    }
    if let Some(c) = args.c_min {
        cfg.c_range.0 = c;
    }
    if let Some(c) = args.c_max {
        cfg.c_range.1 = c;
    }
    echo_config(&args.out, &cfg)?;
    let manifest = generate_dataset(&cfg, &args.out)?;
    println!(
        "generated {} {:?} samples at resolution {} in {}",
        manifest.samples.len(),
        cfg.family,
        cfg.resolution,
        args.out.display()
    );
    Ok(())
}

fn split_counts(total: usize, train_count: Option<usize>) -> Result<usize> {
    let k = train_count.unwrap_or(total * 4 / 5);
    if k == 0 || k > total {
        return Err(Error::Config(format!(
            "train_count {k} out of range for {total} samples"
        )));
    }
    Ok(k)
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut run: TrainRunConfig = load_json_config(&args.config)?;
    if let Some(v) = args.train_count {
        run.train_count = Some(v);
    }
    if let Some(v) = args.layers {
        run.fno.n_layers = v;
    }
    if let Some(v) = args.width {
        run.fno.width = v;
    }
    if let Some(v) = args.modes {
        run.fno.modes = (v, v);
    }
    if let Some(v) = args.hidden {
        run.fno.hidden = v;
    }
    if let Some(v) = args.activation {
        run.fno.activation = v;
    }
    if let Some(v) = args.lr {
        run.fno.lr = v;
    }
    if let Some(v) = args.batch_size {
        run.fno.batch_size = v;
    }
    if let Some(v) = args.epochs {
        run.fno.epochs = v;
    }
    if let Some(v) = args.seed {
        run.fno.seed = v;
    }
    run.fno.validate()?;
    echo_config(&args.out, &run)?;

    let (_, grids) = load_dataset(&args.data)?;
    let pairs: Vec<TrainSample> = grids
        .iter()
        .map(training_pair)
        .collect::<Result<_>>()?;
    let k = split_counts(pairs.len(), run.train_count)?;
    let (train_set, val_set) = pairs.split_at(k);

    let ckpt = args.out.join("model.ckpt");
    let resume = if args.resume {
        let (model, adam, epoch) = load_checkpoint(&ckpt)?;
        // `epochs` is the continuation target; everything else must match.
        let ckpt_cfg = FnoConfig { epochs: run.fno.epochs, ..model.config.clone() };
        if ckpt_cfg != run.fno {
            return Err(Error::Config(
                "resume config differs from the checkpoint's".into(),
            ));
        }
        Some((model, adam, epoch))
    } else {
        None
    };

    let (model, adam, log) = train(&run.fno, train_set, val_set, resume)?;
    save_checkpoint(&ckpt, &model, &adam, run.fno.epochs)?;
    // Resumed runs append to the existing curve.
    let log_path = args.out.join("log.csv");
    if args.resume && log_path.exists() {
        let mut out = fs::OpenOptions::new().append(true).open(&log_path)?;
        for row in &log {
            writeln!(
                out,
                "{},{:.12e},{:.12e},{:.12e},{}",
                row.epoch, row.train_loss, row.val_loss, row.lr, row.wall_ms
            )?;
        }
    } else {
        write_log_csv(&log_path, &log)?;
    }
    if let Some(last) = log.last() {
        println!(
            "trained {} epochs: train {:.4e}, val {:.4e} ({} train / {} val samples)",
            run.fno.epochs,
            last.train_loss,
            last.val_loss,
            train_set.len(),
            val_set.len()
        );
    } else {
        println!("checkpoint already at {} epochs; nothing to do", run.fno.epochs);
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvalSummary {
    model: String,
    data: String,
    n: usize,
    mean_rel_l2: f64,
    max_rel_l2: f64,
    resolution: usize,
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let (model, _, _) = load_checkpoint(&args.model)?;
    let (manifest, grids) = load_dataset(&args.data)?;
    let end = args
        .take
        .map(|t| (args.skip + t).min(grids.len()))
        .unwrap_or(grids.len());
    if args.skip >= end {
        return Err(Error::Config(format!(
            "skip {} leaves no samples out of {}",
            args.skip,
            grids.len()
        )));
    }
    let grids = &grids[args.skip..end];
    let records = &manifest.samples[args.skip..end];
    let errors = evaluate(&model, grids)?;

    fs::create_dir_all(&args.out)?;
    let mut csv = String::from("id,rel_l2\n");
    for (rec, err) in records.iter().zip(&errors) {
        csv.push_str(&format!("{},{:.12e}\n", rec.id, err));
    }
    fs::write(args.out.join("per_sample.csv"), csv)?;
    let summary = EvalSummary {
        model: args.model.display().to_string(),
        data: args.data.display().to_string(),
        n: errors.len(),
        mean_rel_l2: errors.iter().sum::<f64>() / errors.len() as f64,
        max_rel_l2: errors.iter().cloned().fold(0.0, f64::max),
        resolution: manifest.config.resolution,
    };
    fs::write(
        args.out.join("summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    println!(
        "evaluated {} samples: mean rel-L2 {:.4e}, max {:.4e}",
        summary.n, summary.mean_rel_l2, summary.max_rel_l2
    );
    Ok(())
}

fn read_eval_csv(path: &Path) -> Result<BTreeMap<String, f64>> {
    let text = fs::read_to_string(path)?;
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let (id, err) = line
            .split_once(',')
            .ok_or_else(|| Error::Format(format!("bad eval CSV line: {line}")))?;
        let err: f64 = err
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("bad eval CSV value: {line}")))?;
        map.insert(id.to_string(), err);
    }
    Ok(map)
}

fn cmd_dds(args: DdsArgs) -> Result<()> {
    let mode = match args.ncc_mode.as_str() {
        "joint" => NccMode::Joint,
        "per_channel" => NccMode::PerChannel,
        other => return Err(Error::Config(format!("unknown ncc mode: {other}"))),
    };
    let (_, train_grids) = load_dataset(&args.train_data)?;
    let (cand_manifest, cand_grids) = load_dataset(&args.candidate_data)?;
    let errors_by_id = read_eval_csv(&args.eval_csv)?;

    let train_images: Vec<GeometryImage> = train_grids
        .iter()
        .map(GeometryImage::from_grid)
        .collect::<Result<_>>()?;

    fs::create_dir_all(&args.out)?;
    let mut dds_vals = Vec::new();
    let mut errs = Vec::new();
    let mut csv = String::from("id,dds,rel_l2\n");
    for (rec, grid) in cand_manifest.samples.iter().zip(&cand_grids) {
        let err = *errors_by_id.get(&rec.id).ok_or_else(|| {
            Error::Format(format!("eval CSV has no row for sample {}", rec.id))
        })?;
        let image = GeometryImage::from_grid(grid)?;
        let d = dds_with_mode(&image, &train_images, mode)?;
        csv.push_str(&format!("{},{:.12e},{:.12e}\n", rec.id, d, err));
        dds_vals.push(d);
        errs.push(err);
    }
    fs::write(args.out.join("dds.csv"), csv)?;

    let report = correlation_report(&dds_vals, &errs)?;
    fs::write(
        args.out.join("correlation.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    println!(
        "DDS over {} candidates: pearson r = {:.4}, spearman rho = {:.4}",
        report.n, report.pearson_r, report.spearman_rho
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct VolparamReport {
    samples: usize,
    min_jacobian_det: f64,
    max_jacobian_det: f64,
    max_fd_det_rel_err: f64,
    max_round_trip_err: f64,
}

fn cmd_volparam(args: VolArgs) -> Result<()> {
    let part: PartSurfaces = match (&args.surfaces, args.flat_block) {
        (Some(path), _) => load_part_surfaces(path)?,
        (None, true) => PartSurfaces::flat_block(),
        (None, false) => demo_pocket_part(),
    };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(args.seed);
    let [sx, sy, sz] = part.extents;
    let mut min_det = f64::INFINITY;
    let mut max_det = f64::NEG_INFINITY;
    let mut max_fd = 0.0f64;
    let mut max_rt = 0.0f64;
    for i in 0..args.samples {
        let q = [
            rng.gen_range(0.0..sx),
            rng.gen_range(0.0..sy),
            rng.gen_range(0.0..sz),
        ];
        let p = inverse_parameterize(&part, q)?;
        let det = jacobian_det(&part, p)?;
        min_det = min_det.min(det);
        max_det = max_det.max(det);
        let q2 = volume_parameterize(&part, p)?;
        for c in 0..3 {
            max_rt = max_rt.max((q[c] - q2[c]).abs() / part.extents[c].max(1.0));
        }
        // Spot-check the analytic determinant against finite differences.
        if i % 100 == 0 {
            let h = 1e-5;
            let mut fd = [[0.0; 3]; 3];
            for col in 0..3 {
                let (mut pp, mut pm) = (p, p);
                pp[col] += h;
                pm[col] -= h;
                let (qp, qm) = (volume_parameterize(&part, pp)?, volume_parameterize(&part, pm)?);
                for row in 0..3 {
                    fd[row][col] = (qp[row] - qm[row]) / (2.0 * h);
                }
            }
            let fd_det = fd[0][0] * (fd[1][1] * fd[2][2] - fd[1][2] * fd[2][1])
                - fd[0][1] * (fd[1][0] * fd[2][2] - fd[1][2] * fd[2][0])
                + fd[0][2] * (fd[1][0] * fd[2][1] - fd[1][1] * fd[2][0]);
            max_fd = max_fd.max((fd_det - det).abs() / det.abs());
        }
    }
    let report = VolparamReport {
        samples: args.samples,
        min_jacobian_det: min_det,
        max_jacobian_det: max_det,
        max_fd_det_rel_err: max_fd,
        max_round_trip_err: max_rt,
    };
    fs::create_dir_all(&args.out)?;
    fs::write(
        args.out.join("volparam_report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    println!(
        "volparam over {} points: min det {:.4e}, max round-trip {:.2e}, max FD det err {:.2e}",
        report.samples, report.min_jacobian_det, report.max_round_trip_err, report.max_fd_det_rel_err
    );
    Ok(())
}

fn init_threads() {
    if let Ok(v) = std::env::var("DIFFEO_OP_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn main() {
    let cli = Cli::parse();
    init_threads();
    let result = match cli.cmd {
        Cmd::Gen(a) => cmd_gen(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Dds(a) => cmd_dds(a),
        Cmd::VolparamCheck(a) => cmd_volparam(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        let mut source = std::error::Error::source(&e);
        while let Some(s) = source {
            eprintln!("  caused by: {s}");
            source = s.source();
        }
        std::process::exit(if e.is_validation() { 2 } else { 3 });
    }
}
