//! `vascmil`: pipeline stages from ROI images to cross-validated reports.
//!
//! Every stage writes its artifacts plus a `<artifact>.stamp.json` stamp and
//! checks the stamp of its input against the current configuration.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use rayon::prelude::*;
use serde_json::Value;

use vascmil::config::{digest, PipelineConfig, Stamp};
use vascmil::eval::{build_report, fit_fold, run_cv, EvalReport, Task};
use vascmil::features::{extract_all, FeatureLayout};
use vascmil::manifest::{load_dataset, read_manifest, save_dataset, write_manifest, FeatureMatrix, ManifestRecord};
use vascmil::mil::Method;
use vascmil::patch::{extract_patches, load_patches, save_patches, Patch, RgbImage, RoiMask};
use vascmil::reduce::Reducer;
use vascmil::seed::derive_seed;
use vascmil::svm::KernelKind;
use vascmil::synth::generate_synthetic;
use vascmil::{Dataset, Label};

#[derive(Parser)]
#[command(name = "vascmil", version, about = "Multiple-instance learning over bags of image patches")]
struct Cli {
    #[command(flatten)]
    opts: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Flags override values from `--config`, which override the defaults.
#[derive(Args, Debug, Default)]
struct Overrides {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; every stage derives its own seed from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    method: Option<Method>,
    #[arg(long, global = true)]
    task: Option<Task>,
    #[arg(long, global = true)]
    folds: Option<usize>,
    #[arg(long, global = true)]
    patch_size: Option<usize>,
    #[arg(long, global = true)]
    overlap: Option<f64>,
    #[arg(long, global = true)]
    min_inside_fraction: Option<f64>,
    #[arg(long, global = true)]
    n_colors: Option<usize>,
    #[arg(long, global = true)]
    pca_variance: Option<f64>,
    #[arg(long, global = true)]
    k_init: Option<usize>,
    #[arg(long, global = true)]
    prune_threshold: Option<f64>,
    #[arg(long, global = true)]
    vb_tol: Option<f64>,
    #[arg(long, global = true)]
    vb_max_iter: Option<usize>,
    #[arg(long, global = true)]
    kernel: Option<KernelKind>,
    /// Comma-separated C values.
    #[arg(long, global = true, value_delimiter = ',')]
    svm_c_grid: Option<Vec<f64>>,
    /// Comma-separated RBF gamma values.
    #[arg(long, global = true, value_delimiter = ',')]
    svm_gamma_grid: Option<Vec<f64>>,
    #[arg(long, global = true)]
    inner_folds: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Cut ROI patches from the images listed in a CSV file
    /// (`bag_id, video_id, label, image.png, mask.png`).
    ExtractPatches {
        #[arg(long)]
        list: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute the handcrafted feature vector of every patch.
    Featurize {
        /// `patches.list` written by `extract-patches`.
        #[arg(long)]
        patches: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit standardization and PCA on a dataset and write it projected.
    Reduce {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the reducer and the selected method on a whole dataset.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the by-video cross-validation protocol and write report.json.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a seeded synthetic dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "synthetic")]
        name: String,
    },
    /// Render a report.json as a plain-text table.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn resolve_config(o: &Overrides) -> Result<PipelineConfig> {
    let mut cfg = match &o.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?
        }
        None => PipelineConfig::default(),
    };
    if let Some(v) = o.seed {
        cfg.seed = v;
        cfg.synth.seed = v;
    }
    let m = &mut cfg.eval.method;
    macro_rules! set {
        ($flag:expr => $field:expr) => {
            if let Some(v) = $flag.clone() {
                $field = v;
            }
        };
    }
    set!(o.method => m.method);
    set!(o.k_init => m.vbgmm.k_init);
    set!(o.prune_threshold => m.vbgmm.prune_threshold);
    set!(o.vb_tol => m.vbgmm.tol);
    set!(o.vb_max_iter => m.vbgmm.max_iter);
    set!(o.kernel => m.svm.kernel);
    set!(o.svm_c_grid => m.svm.c_grid);
    set!(o.inner_folds => m.svm.inner_folds);
    if let Some(g) = &o.svm_gamma_grid {
        m.svm.gamma_grid = Some(g.clone());
    }
    set!(o.task => cfg.task);
    set!(o.folds => cfg.eval.folds);
    set!(o.pca_variance => cfg.eval.reduce.variance);
    set!(o.patch_size => cfg.patch.size);
    set!(o.overlap => cfg.patch.overlap);
    set!(o.min_inside_fraction => cfg.patch.min_inside_fraction);
    set!(o.n_colors => cfg.features.n_colors);
    cfg.validate()?;
    Ok(cfg)
}

/// Configuration file that does not parse; reported as a validation error.
#[derive(Debug)]
struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid config: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

/// Checks the input's stamp, if any, against the full configuration and
/// returns its sections for carrying forward.
fn check_input(cfg: &PipelineConfig, input: &Path) -> Result<BTreeMap<String, Value>> {
    if !input.exists() {
        return Err(vascmil::Error::InvalidData(format!("input {} does not exist", input.display())).into());
    }
    match Stamp::load(input)? {
        Some(stamp) => {
            stamp.check(&cfg.sections(&["seed", "task", "patch", "features", "eval", "synth"])?, input)?;
            Ok(stamp.sections)
        }
        None => {
            warn!("{} has no stamp; configuration consistency not checked", input.display());
            Ok(BTreeMap::new())
        }
    }
}

fn stamp(command: &str, cfg: &PipelineConfig, upstream: BTreeMap<String, Value>, own: &[&str], artifact: &Path) -> Result<()> {
    let mut sections = upstream;
    sections.extend(cfg.sections(own)?);
    Stamp::new(command, cfg.seed, sections)?.save(artifact)?;
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

struct ImageEntry {
    bag_id: String,
    video_id: String,
    label: Option<Label>,
    image: PathBuf,
    mask: PathBuf,
}

fn read_image_list(path: &Path) -> Result<Vec<ImageEntry>> {
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 5 {
            return Err(vascmil::Error::Format(format!(
                "{} line {}: expected `bag_id, video_id, label, image, mask`",
                path.display(),
                i + 1
            ))
            .into());
        }
        let label = match f[2] {
            "?" => None,
            s => Some(s.parse::<Label>()?),
        };
        out.push(ImageEntry {
            bag_id: f[0].to_string(),
            video_id: f[1].to_string(),
            label,
            image: base.join(f[3]),
            mask: base.join(f[4]),
        });
    }
    Ok(out)
}

fn extract_cmd(cfg: &PipelineConfig, list: &Path, out: &Path) -> Result<()> {
    let entries = read_image_list(list)?;
    let per_image: Vec<Vec<Patch>> = entries
        .par_iter()
        .map(|e| {
            let img = RgbImage::load_png(&e.image)?;
            let mask = RoiMask::load_png(&e.mask)?;
            extract_patches(&img, &mask, &cfg.patch)
        })
        .collect::<vascmil::Result<_>>()?;
    fs::create_dir_all(out)?;
    let mut records = Vec::new();
    let mut all = Vec::new();
    for (e, patches) in entries.iter().zip(per_image) {
        if patches.is_empty() {
            warn!("bag {} yields no patch inside its ROI; skipped", e.bag_id);
            continue;
        }
        records.push(ManifestRecord {
            bag_id: e.bag_id.clone(),
            video_id: e.video_id.clone(),
            label: e.label,
            feature_file: "patches.bin".into(),
            row_begin: all.len(),
            row_count: patches.len(),
        });
        all.extend(patches);
    }
    let videos: std::collections::BTreeSet<&str> = records.iter().map(|r| r.video_id.as_str()).collect();
    info!("ingest: {} bags, {} instances, {} videos", records.len(), all.len(), videos.len());
    save_patches(&out.join("patches.bin"), &all)?;
    let list_path = out.join("patches.list");
    let mut w = BufWriter::new(fs::File::create(&list_path)?);
    write_manifest(&mut w, &records)?;
    w.flush()?;
    stamp("extract-patches", cfg, BTreeMap::new(), &["patch"], &list_path)
}

fn featurize_cmd(cfg: &PipelineConfig, patches: &Path, out: &Path) -> Result<()> {
    let upstream = check_input(cfg, patches)?;
    let records = read_manifest(BufReader::new(fs::File::open(patches)?))?;
    let base = patches.parent().unwrap_or_else(|| Path::new("."));
    let mut files: BTreeMap<String, Vec<Patch>> = BTreeMap::new();
    for r in &records {
        if !files.contains_key(&r.feature_file) {
            files.insert(r.feature_file.clone(), load_patches(&base.join(&r.feature_file))?);
        }
    }
    let seed = derive_seed(cfg.seed, "quantize");
    let n_colors = cfg.features.n_colors;
    let mut jobs: Vec<&Patch> = Vec::new();
    for r in &records {
        let ps = &files[&r.feature_file];
        let end = r.row_begin + r.row_count;
        if end > ps.len() {
            return Err(vascmil::Error::Format(format!("bag {} references patches beyond {}", r.bag_id, r.feature_file)).into());
        }
        jobs.extend(&ps[r.row_begin..end]);
    }
    let rows: Vec<Vec<f64>> = jobs
        .par_iter()
        .map(|p| extract_all(p, n_colors, seed).map(|f| f.values))
        .collect::<vascmil::Result<_>>()?;
    fs::create_dir_all(out)?;
    FeatureMatrix::from_rows(&rows)?.save(&out.join("features.f64"))?;
    let mut begin = 0;
    let out_records: Vec<ManifestRecord> = records
        .iter()
        .map(|r| {
            let rec = ManifestRecord {
                feature_file: "features.f64".into(),
                row_begin: begin,
                ..r.clone()
            };
            begin += r.row_count;
            rec
        })
        .collect();
    let manifest = out.join("features.manifest");
    let mut w = BufWriter::new(fs::File::create(&manifest)?);
    write_manifest(&mut w, &out_records)?;
    w.flush()?;
    write_json(&out.join("features.layout.json"), &FeatureLayout::standard())?;
    info!("featurized {} patches into {} dimensions", rows.len(), FeatureLayout::standard().total);
    stamp("featurize", cfg, upstream, &["patch", "features"], &manifest)
}

fn load_checked(cfg: &PipelineConfig, manifest: &Path) -> Result<(Dataset, BTreeMap<String, Value>)> {
    let upstream = check_input(cfg, manifest)?;
    let ds = load_dataset(manifest)?;
    info!(
        "loaded {} bags, {} instances, {} videos, dimension {}",
        ds.len(),
        ds.n_instances(),
        ds.video_ids().len(),
        ds.feature_dim()
    );
    Ok((ds, upstream))
}

fn reduce_cmd(cfg: &PipelineConfig, manifest: &Path, out: &Path) -> Result<()> {
    let (ds, upstream) = load_checked(cfg, manifest)?;
    let reducer = Reducer::fit_dataset(&ds, &cfg.eval.reduce)?;
    info!(
        "kept {} of {} dimensions ({:.4} of the variance)",
        reducer.pca.d_out(),
        reducer.pca.d_in(),
        reducer.pca.variance_kept
    );
    let reduced = reducer.transform_dataset(&ds)?;
    fs::create_dir_all(out)?;
    let mut w = BufWriter::new(fs::File::create(out.join("reducer.bin"))?);
    reducer.write_to(&mut w)?;
    w.flush()?;
    let m = save_dataset(&reduced, out, "reduced")?;
    stamp("reduce", cfg, upstream, &["eval.reduce"], &m)
}

fn train_cmd(cfg: &PipelineConfig, manifest: &Path, out: &Path) -> Result<()> {
    let (ds, upstream) = load_checked(cfg, manifest)?;
    let state = fit_fold(&ds, &cfg.eval, derive_seed(cfg.seed, "train"))?;
    fs::create_dir_all(out)?;
    let path = out.join("model.bin");
    fs::write(&path, state.to_bytes()?)?;
    info!("trained {} on {} bags", cfg.eval.method.method, ds.len());
    stamp("train", cfg, upstream, &["seed", "eval"], &path)
}

fn evaluate_cmd(cfg: &PipelineConfig, manifest: &Path, out: &Path) -> Result<()> {
    let (ds, upstream) = load_checked(cfg, manifest)?;
    let cv = run_cv(&ds, &cfg.eval, cfg.seed)?;
    let config_digest = digest(&cfg.sections(&["seed", "task", "eval"])?)?;
    let method = cfg.eval.method.method;
    let report = build_report(&ds, &cv, cfg.task, method.as_str(), &config_digest, cfg.seed)?;
    fs::create_dir_all(out)?;
    let path = out.join("report.json");
    write_json(&path, &report)?;
    fs::write(out.join("report.txt"), report.render_text())?;
    if let Some(m) = &report.mean {
        info!("{method}: image-level mean Acc {:.1}", m.acc);
    }
    if let Some(m) = &report.video_level {
        info!("{method}: video-level mean Acc {:.1}", m.acc);
    }
    stamp("evaluate", cfg, upstream, &["seed", "task", "eval"], &path)
}

fn synth_cmd(cfg: &PipelineConfig, out: &Path, name: &str) -> Result<()> {
    let data = generate_synthetic(&cfg.synth)?;
    let m = save_dataset(&data.dataset, out, name)?;
    info!("wrote {} synthetic bags to {}", data.dataset.len(), m.display());
    stamp("synth", cfg, BTreeMap::new(), &["synth"], &m)
}

fn report_cmd(input: &Path, out: &Path) -> Result<()> {
    let text = fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let report: EvalReport = serde_json::from_str(&text).map_err(vascmil::Error::from)?;
    fs::write(out, report.render_text()).with_context(|| format!("writing {}", out.display()))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli.opts)?;
    match &cli.command {
        Command::ExtractPatches { list, out } => extract_cmd(&cfg, list, out),
        Command::Featurize { patches, out } => featurize_cmd(&cfg, patches, out),
        Command::Reduce { manifest, out } => reduce_cmd(&cfg, manifest, out),
        Command::Train { manifest, out } => train_cmd(&cfg, manifest, out),
        Command::Evaluate { manifest, out } => evaluate_cmd(&cfg, manifest, out),
        Command::Synth { out, name } => synth_cmd(&cfg, out, name),
        Command::Report { input, out } => report_cmd(input, out),
    }
}

/// 2 for invalid arguments, configuration or stale artifacts; 3 for data
/// errors; 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ConfigError>().is_some() {
        return 2;
    }
    if let Some(e) = err.downcast_ref::<vascmil::Error>() {
        return if e.is_data_error() { 3 } else { 2 };
    }
    if err.downcast_ref::<std::io::Error>().is_some() {
        return 3;
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
