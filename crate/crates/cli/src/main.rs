//! `bdgnet` command line: boundary map generation, training, evaluation and
//! inference.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numerical failure.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bdgnet::bdm::{ideal_bdm_with, BdmOptions, BinaryMask, BoundaryMode};
use bdgnet::checkpoint;
use bdgnet::config::RunConfig;
use bdgnet::data::{ingest_dataset, list_images, load_rgb, make_split, LayoutManifest, SampleRecord, Split, SplitManifest};
use bdgnet::infer::predict_image;
use bdgnet::metrics::{binarize, evaluate_dataset, PredictionMap};
use bdgnet::network::count_flops;
use bdgnet::train::{Trainer, LOG_HEADER};
use bdgnet::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "bdgnet", version, about = "Boundary-distribution-guided polyp segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the ideal boundary map of every mask as an 8-bit preview and a raw float grid.
    GenBdm(GenBdmArgs),
    /// Train a network and write checkpoints plus a per-iteration loss log.
    Train(TrainArgs),
    /// Evaluate a checkpoint (or a directory of saved predictions) on a dataset.
    Eval(EvalArgs),
    /// Predict masks and boundary maps for every image of a directory.
    Infer(InferArgs),
}

#[derive(Debug, Args)]
struct GenBdmArgs {
    #[arg(long)]
    mask_dir: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Gaussian width; several values (`--sigma 1,3,5,7`) write one `sigma_<s>` subdirectory each.
    #[arg(long, value_delimiter = ',', default_value = "5")]
    sigma: Vec<f64>,
    /// Peak-one maps (`true`) or the unit-area Gaussian density (`false`).
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    normalized: bool,
    /// Boundary definition: `inner` or `symmetric`.
    #[arg(long, default_value = "inner", value_parser = parse_boundary)]
    boundary: BoundaryMode,
}

/// Run-configuration overrides shared by `train`; each flag mirrors a config key.
#[derive(Debug, Args)]
struct TrainArgs {
    /// TOML run configuration; defaults are used for anything it omits.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Generic override, `--set section.key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    data_root: Option<PathBuf>,
    /// Datasets of the manifest to train on; repeatable or comma separated.
    #[arg(long, value_delimiter = ',')]
    dataset: Vec<String>,
    #[arg(long)]
    split_seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long)]
    log_every: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    input_size: Option<usize>,
    #[arg(long)]
    decoder_channels: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    skip_levels: Vec<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Drop the boundary generation module; the decoder is gated by a map of ones.
    #[arg(long)]
    no_bdgm: bool,
    /// Replace the guided decoder blocks with plain upsample-and-add blocks.
    #[arg(long)]
    no_bdgd: bool,
    /// Disable flip and rotation augmentation.
    #[arg(long)]
    no_augment: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Checkpoint manifest to evaluate; omit when `--pred-dir` is given.
    #[arg(long, required_unless_present = "pred_dir")]
    checkpoint: Option<PathBuf>,
    /// Directory of saved prediction images named by image stem.
    #[arg(long, conflicts_with = "checkpoint")]
    pred_dir: Option<PathBuf>,
    /// Run configuration; supplies the network for the FLOPs line in `--pred-dir` mode.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    data_root: Option<PathBuf>,
    /// Datasets to evaluate; all when omitted.
    #[arg(long, value_delimiter = ',')]
    dataset: Vec<String>,
    /// Split file written by `train`; restricts evaluation to its test ids.
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    /// Binarization threshold for Dice and IoU.
    #[arg(long, default_value_t = bdgnet::metrics::DEFAULT_THRESHOLD)]
    threshold: f64,
}

#[derive(Debug, Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    image_dir: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = bdgnet::metrics::DEFAULT_THRESHOLD)]
    threshold: f64,
}

fn parse_boundary(s: &str) -> Result<BoundaryMode, String> {
    match s {
        "inner" => Ok(BoundaryMode::Inner),
        "symmetric" => Ok(BoundaryMode::Symmetric),
        _ => Err(format!("expected `inner` or `symmetric`, got `{s}`")),
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::InvalidArgument(_) => 1,
        Error::NonFinite { .. } => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::GenBdm(args) => cmd_gen_bdm(&args),
        Command::Train(args) => cmd_train(&args),
        Command::Eval(args) => cmd_eval(&args),
        Command::Infer(args) => cmd_infer(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn create_dir(dir: &Path) -> bdgnet::Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Data(format!("{}: {e}", dir.display())))
}

fn write_file(path: &Path, contents: &str) -> bdgnet::Result<()> {
    fs::write(path, contents).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn save_gray(img: &image::GrayImage, path: &Path) -> bdgnet::Result<()> {
    img.save(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn cmd_gen_bdm(args: &GenBdmArgs) -> bdgnet::Result<()> {
    if args.sigma.is_empty() || args.sigma.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(Error::InvalidArgument("every sigma must be positive".into()));
    }
    let masks = list_images(&args.mask_dir)?;
    let sweep = args.sigma.len() > 1;
    for &sigma in &args.sigma {
        let dir = if sweep { args.out_dir.join(format!("sigma_{sigma}")) } else { args.out_dir.clone() };
        create_dir(&dir)?;
        let opts = BdmOptions { sigma, normalized: args.normalized, boundary: args.boundary };
        for (stem, path) in &masks {
            let map = ideal_bdm_with(&BinaryMask::load(path)?, &opts)?;
            map.save_preview(&dir.join(format!("{stem}.png")))?;
            map.save_raw(&dir.join(format!("{stem}.bdm")))?;
        }
    }
    println!("wrote {} boundary maps for {} sigma value(s) to {}", masks.len(), args.sigma.len(), args.out_dir.display());
    Ok(())
}

fn run_config(args: &TrainArgs) -> bdgnet::Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let mut overrides: Vec<(String, String)> = Vec::new();
    let mut push = |key: &str, value: Option<String>| {
        if let Some(v) = value {
            overrides.push((key.to_string(), v));
        }
    };
    let quoted = |p: &Option<PathBuf>| p.as_ref().map(|p| toml::Value::String(p.display().to_string()).to_string());
    push("seed", args.seed.map(|v| v.to_string()));
    push("output_dir", quoted(&args.output_dir));
    push("data.manifest", quoted(&args.manifest));
    push("data.root", quoted(&args.data_root));
    if !args.dataset.is_empty() {
        let list: Vec<String> = args.dataset.iter().map(|d| toml::Value::String(d.clone()).to_string()).collect();
        push("data.datasets", Some(format!("[{}]", list.join(", "))));
    }
    push("data.split_seed", args.split_seed.map(|v| v.to_string()));
    push("optimizer.lr", args.lr.map(|v| format!("{v:e}")));
    push("optimizer.batch_size", args.batch_size.map(|v| v.to_string()));
    push("optimizer.iterations", args.iterations.map(|v| v.to_string()));
    push("optimizer.checkpoint_every", args.checkpoint_every.map(|v| v.to_string()));
    push("optimizer.log_every", args.log_every.map(|v| v.to_string()));
    push("network.sigma", args.sigma.map(|v| format!("{v:?}")));
    push("network.input_size", args.input_size.map(|v| v.to_string()));
    push("network.decoder_channels", args.decoder_channels.map(|v| v.to_string()));
    if !args.skip_levels.is_empty() {
        let list: Vec<String> = args.skip_levels.iter().map(usize::to_string).collect();
        push("network.skip_levels", Some(format!("[{}]", list.join(", "))));
    }
    push("loss.lambda", args.lambda.map(|v| format!("{v:?}")));
    push("network.use_bdgm", args.no_bdgm.then(|| "false".into()));
    push("network.use_bdgd", args.no_bdgd.then(|| "false".into()));
    if args.no_augment {
        push("data.augment.flips", Some("false".into()));
        push("data.augment.rotations", Some("false".into()));
    }
    for item in &args.set {
        let (key, value) =
            item.split_once('=').ok_or_else(|| Error::Config(format!("`--set {item}` is not of the form key=value")))?;
        push(key.trim(), Some(value.trim().to_string()));
    }
    for (key, value) in &overrides {
        cfg.set(key, value)?;
    }
    Ok(cfg)
}

/// Records of the selected datasets plus their seeded train/test splits.
fn load_datasets(
    manifest_path: &Path,
    root: &Path,
    wanted: &[String],
    split_seed: u64,
) -> bdgnet::Result<(Vec<SampleRecord>, SplitManifest)> {
    let manifest = LayoutManifest::load(manifest_path)?;
    for name in wanted {
        if !manifest.datasets.contains_key(name) {
            return Err(Error::Config(format!("dataset `{name}` is not in {}", manifest_path.display())));
        }
    }
    let mut records = Vec::new();
    let mut splits = SplitManifest { seed: split_seed, ..SplitManifest::default() };
    for (name, layout) in &manifest.datasets {
        if !wanted.is_empty() && !wanted.contains(name) {
            continue;
        }
        let recs = ingest_dataset(root, name, layout)?;
        let ids: Vec<String> = recs.iter().map(|r| r.id.clone()).collect();
        let split = match layout.train_count {
            Some(n) => make_split(&ids, n, split_seed)?,
            None => Split { train: ids, test: Vec::new() },
        };
        splits.datasets.insert(name.clone(), split);
        records.extend(recs);
    }
    if records.is_empty() {
        return Err(Error::Data(format!("no records found through {}", manifest_path.display())));
    }
    Ok((records, splits))
}

fn cmd_train(args: &TrainArgs) -> bdgnet::Result<()> {
    let cfg = run_config(args)?;
    let manifest = cfg.data.manifest.clone().ok_or_else(|| Error::Config("data.manifest is required (use --manifest)".into()))?;
    let root = cfg.data_root().unwrap_or_default();
    let (records, splits) = load_datasets(&manifest, &root, &cfg.data.datasets, cfg.split_seed())?;
    let train_ids: BTreeSet<(&str, &str)> =
        splits.datasets.iter().flat_map(|(name, s)| s.train.iter().map(move |id| (name.as_str(), id.as_str()))).collect();
    let pre = cfg.preprocessor();
    let samples: Vec<_> =
        records.iter().filter(|r| train_ids.contains(&(r.dataset.as_str(), r.id.as_str()))).map(|r| pre.prepare(r)).collect();
    if samples.is_empty() {
        return Err(Error::Data("the training split is empty".into()));
    }

    let out = &cfg.output_dir;
    create_dir(out)?;
    write_file(&out.join("config.toml"), &cfg.to_toml())?;
    splits.save(&out.join("split.txt"))?;
    let log_path = out.join("log.csv");
    let log_err = |e: std::io::Error| Error::Data(format!("{}: {e}", log_path.display()));
    let mut log = BufWriter::new(File::create(&log_path).map_err(log_err)?);
    writeln!(log, "{LOG_HEADER}").map_err(log_err)?;

    println!("training on {} images for {} iterations", samples.len(), cfg.optimizer.iterations);
    let mut trainer = Trainer::new(&cfg)?;
    let every = cfg.optimizer.checkpoint_every;
    for _ in 0..cfg.optimizer.iterations {
        let row = match trainer.step(&samples) {
            Ok(row) => row,
            Err(Error::NonFinite { iteration, ids }) => {
                log.flush().map_err(log_err)?;
                write_file(&out.join("nonfinite.txt"), &format!("iteration = {iteration}\nbatch_ids = {ids:?}\n"))?;
                return Err(Error::NonFinite { iteration, ids });
            }
            Err(e) => return Err(e),
        };
        writeln!(log, "{}", row.to_csv()).map_err(log_err)?;
        let it = row.iteration;
        if cfg.optimizer.log_every > 0 && it % cfg.optimizer.log_every == 0 {
            let l = row.loss;
            println!("iter {it}: total {:.5} (bdm {:.5}, wbce {:.5}, wiou {:.5})", l.total, l.bdm, l.wbce, l.wiou);
        }
        if every > 0 && it % every == 0 && it < cfg.optimizer.iterations {
            checkpoint::save(trainer.net(), it as u64, &pre, &out.join(format!("checkpoint-{it}.toml")))?;
        }
    }
    log.flush().map_err(log_err)?;
    let final_path = out.join("checkpoint.toml");
    checkpoint::save(trainer.net(), trainer.iteration() as u64, &pre, &final_path)?;
    println!("wrote {}", final_path.display());
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> bdgnet::Result<()> {
    let cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let root = args.data_root.clone().unwrap_or_else(|| args.manifest.parent().map(Path::to_path_buf).unwrap_or_default());
    let (mut records, _) = load_datasets(&args.manifest, &root, &args.dataset, cfg.split_seed())?;
    if let Some(path) = &args.split {
        let split = SplitManifest::load(path)?;
        records.retain(|r| split.datasets.get(&r.dataset).is_some_and(|s| s.test.contains(&r.id)));
        if records.is_empty() {
            return Err(Error::Data(format!("no test ids of {} are present", path.display())));
        }
    }

    let (pairs, network) = match (&args.checkpoint, &args.pred_dir) {
        (Some(ckpt), _) => {
            let (net, manifest) = checkpoint::load(ckpt)?;
            let pre = manifest.preprocessor();
            let pairs = records
                .iter()
                .map(|r| Ok((format!("{}/{}", r.dataset, r.id), predict_image(&net, &pre, &r.image)?.mask, r.mask.clone())))
                .collect::<bdgnet::Result<Vec<_>>>()?;
            (pairs, manifest.network)
        }
        (None, Some(dir)) => {
            let preds: std::collections::BTreeMap<String, PathBuf> = list_images(dir)?.into_iter().collect();
            let pairs = records
                .iter()
                .map(|r| {
                    let path = preds
                        .get(&r.id)
                        .ok_or_else(|| Error::Data(format!("no prediction for `{}` in {}", r.id, dir.display())))?;
                    let img = image::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?.to_luma8();
                    Ok((format!("{}/{}", r.dataset, r.id), PredictionMap::from_gray(&img), r.mask.clone()))
                })
                .collect::<bdgnet::Result<Vec<_>>>()?;
            (pairs, cfg.network.clone())
        }
        (None, None) => return Err(Error::Config("either --checkpoint or --pred-dir is required".into())),
    };

    let report = evaluate_dataset(&pairs, args.threshold)?;
    create_dir(&args.out_dir)?;
    write_file(&args.out_dir.join("metrics.csv"), &report.to_csv())?;
    let title = if args.dataset.is_empty() { "all datasets".to_string() } else { args.dataset.join(", ") };
    let table = report.to_table(&title);
    write_file(&args.out_dir.join("metrics.txt"), &table)?;
    print!("{table}");
    println!("FLOPs: {} ({}x{} input)", count_flops(&network)?, network.input_size, network.input_size);
    Ok(())
}

fn cmd_infer(args: &InferArgs) -> bdgnet::Result<()> {
    let (net, manifest) = checkpoint::load(&args.checkpoint)?;
    let pre = manifest.preprocessor();
    let images = list_images(&args.image_dir)?;
    create_dir(&args.out_dir)?;
    for (stem, path) in &images {
        let pred = predict_image(&net, &pre, &load_rgb(path)?)?;
        save_gray(&binarize(&pred.mask, args.threshold).to_gray(), &args.out_dir.join(format!("{stem}_mask.png")))?;
        save_gray(&pred.bdm.to_gray(), &args.out_dir.join(format!("{stem}_bdm.png")))?;
    }
    println!("wrote {} predictions to {}", images.len(), args.out_dir.display());
    Ok(())
}
