//! Command-line interface: synthetic campaigns, porosity extraction,
//! pipeline training, accuracy assessment, sensitivity analysis, screening
//! optimization, design maps, and point predictions.
//!
//! All artifacts are written atomically (temp file + rename) and embed the
//! tool version and a hash of the resolved configuration, so identical runs
//! produce byte-identical outputs.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use fuselab::analysis::{kfold_cv, pearson_matrix, stage_sensitivity};
use fuselab::data::{CatVar, MixedDataset, MixedInput, Schema};
use fuselab::domain::{compute_ved, CuboidRecord, ParamRanges, ProcessParams, ScanRotation, TensileRecord};
use fuselab::error::Error;
use fuselab::fusion::{train_hierarchy, HierarchyConfig, HierarchyPipeline, PipelineDoc, Stage};
use fuselab::imaging::{crop_margins, gaussian_blur, pixel_histogram, porosity_fraction, CropMargins};
use fuselab::io;
use fuselab::optimize::{design_map, rank_by_uncertainty, screen, RankMode, Sampling, ScreenFilters};
use fuselab::synth::{generate_campaign, CampaignSpec};

const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "fuselab", version, about = "Process-property emulation and screening for laser powder bed fusion")]
struct Cli {
    /// TOML file with default seeds, training settings, and thresholds.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed; falls back to FUSELAB_SEED, then the config file, then 0.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Parallelism cap (accepted for interface stability; execution is
    /// currently single-threaded).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Serialize)]
struct TrainArgs {
    #[arg(long)]
    include_scan_rotation: bool,
    #[arg(long)]
    n_starts: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    embed_dim: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
enum StageArg {
    H,
    Ep,
    Ys,
    Ef,
}

impl From<StageArg> for Stage {
    fn from(s: StageArg) -> Stage {
        match s {
            StageArg::H => Stage::Hardness,
            StageArg::Ep => Stage::EngineeredPorosity,
            StageArg::Ys => Stage::YieldStrength,
            StageArg::Ef => Stage::Ductility,
        }
    }
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
enum RankArg {
    Ys,
    Ef,
    Combined,
}

impl From<RankArg> for RankMode {
    fn from(r: RankArg) -> RankMode {
        match r {
            RankArg::Ys => RankMode::Ys,
            RankArg::Ef => RankMode::Ef,
            RankArg::Combined => RankMode::Combined,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic campaign (cuboids.csv, tensile.csv, truth.json).
    Synth {
        /// CampaignSpec as JSON; defaults to the standard 270+54 campaign.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Extract porosity fractions from microscopy images.
    Porosity {
        /// Image file or directory of PNG/TIFF images.
        #[arg(long = "in", value_name = "PATH")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 75)]
        threshold: u32,
        /// Margins top,right,left,bottom in pixels.
        #[arg(long, default_value = "50,50,50,80")]
        crop: String,
        /// Gaussian kernel size (odd; 0 disables the blur).
        #[arg(long, default_value_t = 5)]
        blur: usize,
        /// Also write per-image intensity histograms to this CSV.
        #[arg(long)]
        hist: Option<PathBuf>,
    },
    /// Train the four-stage pipeline from cuboid and tensile CSVs.
    Train {
        #[arg(long)]
        cuboids: PathBuf,
        #[arg(long)]
        tensile: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// k-fold cross-validation of a single-response emulator.
    Cv {
        /// cuboids.csv-schema dataset.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "hardness")]
        target: String,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Sobol sensitivity indices of one pipeline stage.
    Sobol {
        #[arg(long)]
        pipeline: PathBuf,
        #[arg(long, value_enum)]
        stage: StageArg,
        #[arg(long, default_value_t = 4096)]
        n: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pearson correlations among properties on matched parameter sets.
    Corr {
        #[arg(long)]
        cuboids: PathBuf,
        #[arg(long)]
        tensile: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Screen sampled parameter combinations and rank by uncertainty.
    Optimize {
        #[arg(long)]
        pipeline: PathBuf,
        #[arg(long, default_value_t = 10000)]
        n: usize,
        #[arg(long)]
        ved_min: Option<f64>,
        #[arg(long)]
        ved_max: Option<f64>,
        #[arg(long)]
        ys_min: Option<f64>,
        #[arg(long)]
        ef_min: Option<f64>,
        /// Disable the energy-density window.
        #[arg(long)]
        no_ved_filter: bool,
        #[arg(long)]
        no_ys_filter: bool,
        #[arg(long)]
        no_ef_filter: bool,
        /// Pseudo-random instead of low-discrepancy sampling.
        #[arg(long)]
        uniform: bool,
        #[arg(long, value_enum, default_value_t = RankArg::Combined)]
        rank: RankArg,
        /// Echo the k-th ranked candidate (1-based) to stdout.
        #[arg(long, default_value_t = 1)]
        pick: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Prediction grid over two free parameters.
    Map {
        #[arg(long)]
        pipeline: PathBuf,
        /// Two comma-separated parameter names, e.g. power_w,speed_mm_s.
        #[arg(long)]
        free: String,
        /// Fixed values for the remaining two, e.g. layer_um=20,hatch_um=77.
        #[arg(long)]
        fixed: String,
        #[arg(long, default_value_t = 67.0)]
        scan_rot: f64,
        #[arg(long, default_value_t = 200)]
        res: usize,
        #[arg(long)]
        out: PathBuf,
        /// Also write the energy-density iso-lines to this CSV.
        #[arg(long)]
        iso_out: Option<PathBuf>,
    },
    /// Predict tensile properties for explicit parameter combinations.
    Predict {
        #[arg(long)]
        pipeline: PathBuf,
        /// "power_w,speed_mm_s,layer_um,hatch_um,scan_rot"; repeatable.
        #[arg(long, required = true)]
        params: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

// ---------------------------------------------------------------------------
// config file and error handling

#[derive(Debug, Default, serde::Deserialize)]
struct FileConfig {
    seed: Option<u64>,
    train: Option<FileTrain>,
    filters: Option<FileFilters>,
}

#[derive(Debug, Default, serde::Deserialize)]
struct FileTrain {
    include_scan_rotation: Option<bool>,
    n_starts: Option<usize>,
    max_iters: Option<usize>,
    learning_rate: Option<f64>,
    embed_dim: Option<usize>,
}

#[derive(Debug, Default, serde::Deserialize)]
struct FileFilters {
    ved_min: Option<f64>,
    ved_max: Option<f64>,
    ys_min: Option<f64>,
    ef_min: Option<f64>,
}

enum CliError {
    /// Malformed argument content (exit 2).
    Usage(String),
    Lib(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Lib(Error::Numeric(_)) => 4,
            CliError::Lib(_) => 3,
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Usage(m) => format!("usage error: {m}"),
            CliError::Lib(e) => e.to_string(),
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("fuselab: {}", e.message());
            std::process::exit(e.exit_code());
        }
    }
}

// ---------------------------------------------------------------------------
// shared plumbing

fn load_file_config(path: Option<&Path>) -> Result<FileConfig, CliError> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Lib(Error::data(format!("cannot read `{}`: {e}", p.display()))))?;
            toml::from_str(&text)
                .map_err(|e| CliError::Lib(Error::data(format!("bad config `{}`: {e}", p.display()))))
        }
    }
}

fn resolve_seed(cli: Option<u64>, cfg: &FileConfig) -> u64 {
    cli.or_else(|| std::env::var("FUSELAB_SEED").ok().and_then(|s| s.parse().ok()))
        .or(cfg.seed)
        .unwrap_or(0)
}

fn hierarchy_config(args: &TrainArgs, cfg: &FileConfig) -> HierarchyConfig {
    let file = cfg.train.as_ref();
    let base = HierarchyConfig::default();
    HierarchyConfig {
        include_scan_rotation: args.include_scan_rotation
            || file.and_then(|f| f.include_scan_rotation).unwrap_or(false),
        n_starts: args.n_starts.or(file.and_then(|f| f.n_starts)).unwrap_or(base.n_starts),
        max_iters: args.max_iters.or(file.and_then(|f| f.max_iters)).unwrap_or(base.max_iters),
        learning_rate: args
            .learning_rate
            .or(file.and_then(|f| f.learning_rate))
            .unwrap_or(base.learning_rate),
        embed_dim: args.embed_dim.or(file.and_then(|f| f.embed_dim)).unwrap_or(base.embed_dim),
    }
}

/// Short hash of the resolved configuration for artifact headers.
fn config_hash(resolved: &impl Serialize) -> String {
    let json = serde_json::to_string(resolved).expect("config serializes");
    let digest = Sha256::digest(json.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(Error::from)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(Error::from)?;
    tmp.write_all(bytes).map_err(Error::from)?;
    tmp.persist(path)
        .map_err(|e| CliError::Lib(Error::Io(e.error)))?;
    Ok(())
}

fn csv_header_comments(hash: &str) -> Vec<String> {
    vec![format!("fuselab {TOOL_VERSION}"), format!("config {hash}")]
}

fn write_csv(path: &Path, hash: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut out = String::new();
    for line in csv_header_comments(hash) {
        out.push_str(&format!("# {line}\n"));
    }
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

/// JSON artifact wrapper carrying the version/config header.
fn write_json(
    path: Option<&Path>,
    hash: &str,
    key: &str,
    value: impl Serialize,
) -> Result<(), CliError> {
    let mut doc = serde_json::Map::new();
    doc.insert("tool_version".into(), TOOL_VERSION.into());
    doc.insert("config_hash".into(), hash.into());
    doc.insert(key.into(), serde_json::to_value(value).map_err(|e| Error::data(e.to_string()))?);
    let text = serde_json::to_string_pretty(&serde_json::Value::Object(doc))
        .map_err(|e| Error::data(e.to_string()))?;
    match path {
        Some(p) => atomic_write(p, format!("{text}\n").as_bytes()),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn load_pipeline(path: &Path) -> Result<HierarchyPipeline, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Lib(Error::data(format!("cannot read `{}`: {e}", path.display()))))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Lib(Error::data(format!("bad JSON in `{}`: {e}", path.display()))))?;
    let doc_value = value.get("pipeline").cloned().unwrap_or(value);
    let doc: PipelineDoc = serde_json::from_value(doc_value)
        .map_err(|e| CliError::Lib(Error::data(format!("`{}` is not a pipeline document: {e}", path.display()))))?;
    Ok(HierarchyPipeline::from_doc(doc)?)
}

fn parse_params_arg(raw: &str) -> Result<ProcessParams, CliError> {
    let parts: Vec<&str> = raw.split(',').map(str::trim).collect();
    if parts.len() != 5 {
        return Err(usage(format!(
            "--params expects 5 comma-separated values (power_w,speed_mm_s,layer_um,hatch_um,scan_rot), got `{raw}`"
        )));
    }
    let nums: Vec<f64> = parts
        .iter()
        .map(|s| s.parse::<f64>().map_err(|_| usage(format!("`{s}` is not a number in `{raw}`"))))
        .collect::<Result<_, _>>()?;
    let sr = ScanRotation::from_degrees(nums[4])?;
    Ok(ProcessParams::from_um(nums[0], nums[1], nums[2], nums[3], sr)?)
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn prediction_row(p: &ProcessParams, pred: &fuselab::fusion::TensilePrediction) -> Vec<String> {
    vec![
        fmt(p.power_w),
        fmt(p.speed_mm_s),
        fmt(p.layer_um()),
        fmt(p.hatch_um()),
        fmt(p.scan_rotation.degrees()),
        fmt(compute_ved(p).expect("validated")),
        fmt(pred.yield_strength.mean),
        fmt(pred.yield_strength.sd),
        fmt(pred.ductility.mean),
        fmt(pred.ductility.sd),
        fmt(pred.hardness_hat),
        fmt(pred.ep_hat),
    ]
}

const PREDICTION_HEADER: [&str; 12] = [
    "power_w", "speed_mm_s", "layer_um", "hatch_um", "scan_rot", "ved_j_mm3", "ys_mean_mpa",
    "ys_sd_mpa", "ef_mean_pct", "ef_sd_pct", "hardness_hat_hv", "ep_hat",
];

// ---------------------------------------------------------------------------
// command implementations

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = load_file_config(cli.config.as_deref())?;
    let seed = resolve_seed(cli.seed, &cfg);
    match cli.command {
        Command::Synth { spec, out_dir } => cmd_synth(spec.as_deref(), &out_dir, cli.seed, seed),
        Command::Porosity { input, out, threshold, crop, blur, hist } => {
            cmd_porosity(&input, &out, threshold, &crop, blur, hist.as_deref())
        }
        Command::Train { cuboids, tensile, out, train } => {
            cmd_train(&cuboids, &tensile, &out, &hierarchy_config(&train, &cfg), seed)
        }
        Command::Cv { data, target, k, out, train } => {
            cmd_cv(&data, &target, k, out.as_deref(), &hierarchy_config(&train, &cfg), seed)
        }
        Command::Sobol { pipeline, stage, n, out } => {
            cmd_sobol(&pipeline, stage, n, out.as_deref(), seed)
        }
        Command::Corr { cuboids, tensile, out } => cmd_corr(&cuboids, &tensile, &out),
        Command::Optimize {
            pipeline,
            n,
            ved_min,
            ved_max,
            ys_min,
            ef_min,
            no_ved_filter,
            no_ys_filter,
            no_ef_filter,
            uniform,
            rank,
            pick,
            out,
        } => {
            let defaults = ScreenFilters::default();
            let file = cfg.filters.as_ref();
            let filters = ScreenFilters {
                ved: if no_ved_filter {
                    None
                } else {
                    let (dlo, dhi) = defaults.ved.unwrap();
                    Some((
                        ved_min.or(file.and_then(|f| f.ved_min)).unwrap_or(dlo),
                        ved_max.or(file.and_then(|f| f.ved_max)).unwrap_or(dhi),
                    ))
                },
                ys_min: if no_ys_filter {
                    None
                } else {
                    Some(ys_min.or(file.and_then(|f| f.ys_min)).unwrap_or(defaults.ys_min.unwrap()))
                },
                ef_min: if no_ef_filter {
                    None
                } else {
                    Some(ef_min.or(file.and_then(|f| f.ef_min)).unwrap_or(defaults.ef_min.unwrap()))
                },
            };
            cmd_optimize(&pipeline, n, &filters, uniform, rank, pick, &out, seed)
        }
        Command::Map { pipeline, free, fixed, scan_rot, res, out, iso_out } => {
            cmd_map(&pipeline, &free, &fixed, scan_rot, res, &out, iso_out.as_deref())
        }
        Command::Predict { pipeline, params, out } => cmd_predict(&pipeline, &params, out.as_deref()),
    }
}

fn cmd_synth(
    spec_path: Option<&Path>,
    out_dir: &Path,
    seed_flag: Option<u64>,
    seed: u64,
) -> Result<(), CliError> {
    let mut spec: CampaignSpec = match spec_path {
        None => CampaignSpec::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Lib(Error::data(format!("cannot read `{}`: {e}", p.display()))))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Lib(Error::data(format!("bad campaign spec `{}`: {e}", p.display()))))?
        }
    };
    if seed_flag.is_some() || spec_path.is_none() {
        spec.seed = seed;
    }
    let hash = config_hash(&spec);
    let (cuboids, tensile, truth) = generate_campaign(&spec)?;
    atomic_write(
        &out_dir.join("cuboids.csv"),
        io::cuboids_to_csv(&cuboids, &csv_header_comments(&hash)).as_bytes(),
    )?;
    atomic_write(
        &out_dir.join("tensile.csv"),
        io::tensile_to_csv(&tensile, &csv_header_comments(&hash)).as_bytes(),
    )?;
    #[derive(Serialize)]
    struct Truth<'a> {
        spec: &'a CampaignSpec,
        truth: &'a fuselab::synth::GroundTruth,
    }
    write_json(Some(&out_dir.join("truth.json")), &hash, "campaign", Truth { spec: &spec, truth: &truth })?;
    eprintln!(
        "wrote {} cuboid and {} tensile records to {}",
        cuboids.len(),
        tensile.len(),
        out_dir.display()
    );
    Ok(())
}

fn parse_crop(raw: &str) -> Result<CropMargins, CliError> {
    let parts: Vec<usize> = raw
        .split(',')
        .map(|s| s.trim().parse::<usize>().map_err(|_| usage(format!("bad --crop `{raw}`"))))
        .collect::<Result<_, _>>()?;
    if parts.len() != 4 {
        return Err(usage("--crop expects top,right,left,bottom"));
    }
    Ok(CropMargins { top: parts[0], right: parts[1], left: parts[2], bottom: parts[3] })
}

fn cmd_porosity(
    input: &Path,
    out: &Path,
    threshold: u32,
    crop: &str,
    blur: usize,
    hist: Option<&Path>,
) -> Result<(), CliError> {
    let margins = parse_crop(crop)?;
    let mut files: Vec<PathBuf> = if input.is_dir() {
        std::fs::read_dir(input)
            .map_err(Error::from)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "tif" | "tiff"))
                    .unwrap_or(false)
            })
            .collect()
    } else {
        vec![input.to_path_buf()]
    };
    files.sort();
    if files.is_empty() {
        return Err(CliError::Lib(Error::data(format!(
            "no PNG/TIFF images found in `{}`",
            input.display()
        ))));
    }
    #[derive(Serialize)]
    struct Resolved<'a> {
        threshold: u32,
        crop: &'a str,
        blur: usize,
    }
    let hash = config_hash(&Resolved { threshold, crop, blur });
    let mut rows = Vec::new();
    let mut hist_rows = Vec::new();
    for file in &files {
        let name = file.file_name().unwrap().to_string_lossy().into_owned();
        let img = io::load_gray_image(file)?;
        let cropped = crop_margins(&img, margins)?;
        let processed = if blur > 0 { gaussian_blur(&cropped, blur, None)? } else { cropped };
        let porosity = porosity_fraction(&processed, threshold)?;
        rows.push(vec![name.clone(), fmt(porosity)]);
        if hist.is_some() {
            for (intensity, count) in pixel_histogram(&processed).iter().enumerate() {
                hist_rows.push(vec![name.clone(), intensity.to_string(), count.to_string()]);
            }
        }
    }
    write_csv(out, &hash, &["filename", "porosity"], &rows)?;
    if let Some(h) = hist {
        write_csv(h, &hash, &["filename", "intensity", "count"], &hist_rows)?;
    }
    Ok(())
}

fn report_flags(flags: &[String]) {
    for flag in flags {
        eprintln!("warning: {flag}");
    }
}

fn cmd_train(
    cuboids: &Path,
    tensile: &Path,
    out: &Path,
    config: &HierarchyConfig,
    seed: u64,
) -> Result<(), CliError> {
    let (cub, flags_c) = io::read_cuboids(cuboids)?;
    let (ten, flags_t) = io::read_tensile(tensile)?;
    report_flags(&flags_c);
    report_flags(&flags_t);
    #[derive(Serialize)]
    struct Resolved<'a> {
        config: &'a HierarchyConfig,
        seed: u64,
    }
    let hash = config_hash(&Resolved { config, seed });
    let pipeline = train_hierarchy(&cub, &ten, config, seed)?;
    write_json(Some(out), &hash, "pipeline", pipeline.to_doc())?;
    eprintln!("trained 4-stage pipeline on {} + {} records", cub.len(), ten.len());
    Ok(())
}

fn cuboid_dataset(
    records: &[CuboidRecord],
    target: &str,
    include_sr: bool,
) -> Result<MixedDataset, CliError> {
    let schema = Schema::quantitative(&["power_w", "speed_mm_s", "layer_um", "hatch_um"]);
    let schema = if include_sr {
        schema.with_cat(CatVar::new("scan_rot", vec!["67".into(), "90".into()]))
    } else {
        schema
    };
    let inputs = records
        .iter()
        .map(|r| {
            let levels = if include_sr { vec![r.params.scan_rotation.level()] } else { vec![] };
            MixedInput::new(r.params.quant_features().to_vec(), levels)
        })
        .collect();
    let responses = records
        .iter()
        .map(|r| match target {
            "hardness" => Ok(r.hardness_hv),
            "porosity" => Ok(r.porosity),
            other => Err(usage(format!("unknown --target `{other}` (hardness|porosity)"))),
        })
        .collect::<Result<_, _>>()?;
    Ok(MixedDataset::new(schema, inputs, responses)?)
}

fn cmd_cv(
    data: &Path,
    target: &str,
    k: usize,
    out: Option<&Path>,
    config: &HierarchyConfig,
    seed: u64,
) -> Result<(), CliError> {
    let (records, flags) = io::read_cuboids(data)?;
    report_flags(&flags);
    let dataset = cuboid_dataset(&records, target, config.include_scan_rotation)?;
    let gp_config = fuselab::gp::GpConfig {
        n_starts: config.n_starts,
        max_iters: config.max_iters,
        learning_rate: config.learning_rate,
        embed_dim: config.embed_dim.min(1.max(dataset.schema.total_levels().saturating_sub(1))),
        ..Default::default()
    };
    #[derive(Serialize)]
    struct Resolved<'a> {
        target: &'a str,
        k: usize,
        seed: u64,
        config: &'a HierarchyConfig,
    }
    let hash = config_hash(&Resolved { target, k, seed, config });
    let report = kfold_cv(&dataset, k, &gp_config, seed)?;
    write_json(out, &hash, "cv_report", &report)
}

fn cmd_sobol(
    pipeline_path: &Path,
    stage: StageArg,
    n: usize,
    out: Option<&Path>,
    seed: u64,
) -> Result<(), CliError> {
    let pipeline = load_pipeline(pipeline_path)?;
    #[derive(Serialize)]
    struct Resolved {
        stage: StageArg,
        n: usize,
        seed: u64,
    }
    let hash = config_hash(&Resolved { stage, n, seed });
    let report = stage_sensitivity(&pipeline, stage.into(), &ParamRanges::campaign(), n, seed)?;
    write_json(out, &hash, "sobol_report", &report)
}

fn cmd_corr(cuboids: &Path, tensile: &Path, out: &Path) -> Result<(), CliError> {
    let (cub, flags_c) = io::read_cuboids(cuboids)?;
    let (ten, flags_t) = io::read_tensile(tensile)?;
    report_flags(&flags_c);
    report_flags(&flags_t);
    let matched: Vec<(&CuboidRecord, &TensileRecord)> = ten
        .iter()
        .filter_map(|t| cub.iter().find(|c| c.params == t.params).map(|c| (c, t)))
        .collect();
    if matched.len() < 2 {
        return Err(CliError::Lib(Error::domain(
            "fewer than two tensile records share parameters with a cuboid record",
        )));
    }
    let columns = vec![
        ("hardness_hv".to_string(), matched.iter().map(|(c, _)| c.hardness_hv).collect()),
        ("porosity".to_string(), matched.iter().map(|(c, _)| c.porosity).collect()),
        ("ys_mpa".to_string(), matched.iter().map(|(_, t)| t.yield_mpa).collect()),
        ("uts_mpa".to_string(), matched.iter().map(|(_, t)| t.ultimate_mpa).collect()),
        ("ef_pct".to_string(), matched.iter().map(|(_, t)| t.ductility_pct).collect()),
    ];
    let matrix = pearson_matrix(&columns)?;
    let hash = config_hash(&matched.len());
    let names: Vec<&str> = columns.iter().map(|(n, _)| n.as_str()).collect();
    let mut header = vec![""];
    header.extend(&names);
    let rows: Vec<Vec<String>> = matrix
        .iter()
        .zip(&names)
        .map(|(row, name)| {
            let mut r = vec![name.to_string()];
            r.extend(row.iter().map(|v| fmt(*v)));
            r
        })
        .collect();
    write_csv(out, &hash, &header, &rows)
}

#[allow(clippy::too_many_arguments)]
fn cmd_optimize(
    pipeline_path: &Path,
    n: usize,
    filters: &ScreenFilters,
    uniform: bool,
    rank: RankArg,
    pick: usize,
    out: &Path,
    seed: u64,
) -> Result<(), CliError> {
    let pipeline = load_pipeline(pipeline_path)?;
    let sampling = if uniform { Sampling::Uniform } else { Sampling::LowDiscrepancy };
    #[derive(Serialize)]
    struct Resolved<'a> {
        n: usize,
        filters: &'a ScreenFilters,
        sampling: Sampling,
        rank: RankArg,
        seed: u64,
    }
    let hash = config_hash(&Resolved { n, filters, sampling, rank, seed });
    let set = screen(&pipeline, n, &ParamRanges::campaign(), filters, sampling, seed)?;
    let ranked = rank_by_uncertainty(&set, rank.into()).ok();
    // rank position (1-based) per passing candidate
    let rank_of = |c: &fuselab::optimize::Candidate| -> Option<usize> {
        ranked
            .as_ref()
            .and_then(|r| r.iter().position(|x| x.params == c.params))
            .map(|i| i + 1)
    };
    let mut header = PREDICTION_HEADER.to_vec();
    header.extend(["pass_ved", "pass_ys", "pass_ef", "pass", "rank"]);
    let rows: Vec<Vec<String>> = set
        .candidates
        .iter()
        .map(|c| {
            let mut row = prediction_row(&c.params, &c.prediction);
            row.push(c.pass_ved.to_string());
            row.push(c.pass_ys.to_string());
            row.push(c.pass_ef.to_string());
            row.push(c.passes().to_string());
            row.push(rank_of(c).map_or(String::new(), |r| r.to_string()));
            row
        })
        .collect();
    write_csv(out, &hash, &header, &rows)?;
    match &ranked {
        None => eprintln!("no candidate passed the filters"),
        Some(r) => {
            eprintln!("{} of {} candidates passed", r.len(), set.candidates.len());
            if pick >= 1 && pick <= r.len() {
                let c = &r[pick - 1];
                println!("{}", PREDICTION_HEADER.join(","));
                println!("{}", prediction_row(&c.params, &c.prediction).join(","));
            }
        }
    }
    Ok(())
}

fn cmd_map(
    pipeline_path: &Path,
    free: &str,
    fixed: &str,
    scan_rot: f64,
    res: usize,
    out: &Path,
    iso_out: Option<&Path>,
) -> Result<(), CliError> {
    let pipeline = load_pipeline(pipeline_path)?;
    let free_parts: Vec<&str> = free.split(',').map(str::trim).collect();
    if free_parts.len() != 2 {
        return Err(usage("--free expects two comma-separated parameter names"));
    }
    let fixed_vals: Vec<(String, f64)> = fixed
        .split(',')
        .map(|kv| {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| usage(format!("bad --fixed entry `{kv}` (expected name=value)")))?;
            let num = v
                .trim()
                .parse::<f64>()
                .map_err(|_| usage(format!("`{v}` is not a number in --fixed")))?;
            Ok((k.trim().to_string(), num))
        })
        .collect::<Result<_, CliError>>()?;
    let sr = ScanRotation::from_degrees(scan_rot)?;
    #[derive(Serialize)]
    struct Resolved<'a> {
        free: &'a str,
        fixed: &'a str,
        scan_rot: f64,
        res: usize,
    }
    let hash = config_hash(&Resolved { free, fixed, scan_rot, res });
    let map = design_map(
        &pipeline,
        (free_parts[0], free_parts[1]),
        &fixed_vals,
        sr,
        &ParamRanges::campaign(),
        res,
    )?;
    // long form: one row per grid cell
    let header = vec![
        map.free.0.as_str(),
        map.free.1.as_str(),
        "ys_mean_mpa",
        "ef_mean_pct",
        "ved_j_mm3",
        "objective",
    ];
    let mut rows = Vec::with_capacity(res * res);
    for (i, &a) in map.axis1.iter().enumerate() {
        for (j, &b) in map.axis2.iter().enumerate() {
            rows.push(vec![
                fmt(a),
                fmt(b),
                fmt(map.ys[i][j]),
                fmt(map.ef[i][j]),
                fmt(map.ved[i][j]),
                map.objective[i][j].map_or(String::new(), fmt),
            ]);
        }
    }
    write_csv(out, &hash, &header, &rows)?;
    if let Some(iso_path) = iso_out {
        let header = vec!["level_j_mm3", map.free.0.as_str(), map.free.1.as_str()];
        let rows: Vec<Vec<String>> = map
            .iso_lines
            .iter()
            .flat_map(|(level, pts)| {
                pts.iter().map(move |&(a, b)| vec![fmt(*level), fmt(a), fmt(b)])
            })
            .collect();
        write_csv(iso_path, &hash, &header, &rows)?;
    }
    Ok(())
}

fn cmd_predict(pipeline_path: &Path, params: &[String], out: Option<&Path>) -> Result<(), CliError> {
    let pipeline = load_pipeline(pipeline_path)?;
    let parsed: Vec<ProcessParams> = params
        .iter()
        .map(|raw| parse_params_arg(raw))
        .collect::<Result<_, _>>()?;
    let preds = pipeline.predict_tensile(&parsed)?;
    let hash = config_hash(&params);
    let rows: Vec<Vec<String>> = parsed
        .iter()
        .zip(&preds)
        .map(|(p, pred)| prediction_row(p, pred))
        .collect();
    match out {
        Some(path) => write_csv(path, &hash, &PREDICTION_HEADER, &rows),
        None => {
            println!("{}", PREDICTION_HEADER.join(","));
            for row in rows {
                println!("{}", row.join(","));
            }
            Ok(())
        }
    }
}
