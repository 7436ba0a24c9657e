//! Command-line front end for the blur discretization pipeline.
//!
//! Every subcommand reads an optional JSON config, applies flag overrides on
//! top of it, writes its outputs under a run directory together with a
//! `run.json` fingerprint, and reports failures as a JSON object on stderr.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use blurseg::d2c::{collect_design, fit_class_filters, predict_residual, reconstruct, FilterBank, DEFAULT_PATCH, DEFAULT_RIDGE};
use blurseg::discretize::{
    assemble, deconvolve_class_images, fit_basis_kernels, oracle_assign, BlurSegmentationMap, FitConfig, LogKernelSet,
};
use blurseg::eval::{
    colorize_segmentation, evaluate, large_motion_subset, summarize, EvalInput, Fingerprint, DEFAULT_LARGE_FRACTION, TAG_LARGE, TAG_TOTAL,
};
use blurseg::pipeline::{ablation_sweep, Pair, SweepConfig};
use blurseg::spectral::DEFAULT_EPS_REL;
use blurseg::synth::{make_dataset, SynthConfig};
use blurseg::{load_image, save_image, BasisKernelSet, DatasetManifest, Image};

#[derive(Parser)]
#[command(name = "blurseg", version, about = "Blur pixel discretization for motion deblurring")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic blur/sharp dataset with a manifest.
    Synth(SynthArgs),
    /// Deconvolve with given kernels and emit class images, oracle maps and assembled images.
    Discretize(DiscretizeArgs),
    /// Fit basis kernels by alternating minimization.
    FitKernels(FitArgs),
    /// Fit per-class residual filters.
    D2cFit(D2cFitArgs),
    /// Restore blur images with a filter bank.
    D2cApply(D2cApplyArgs),
    /// Score restored images against the sharp references.
    Eval(EvalArgs),
    /// Run the full pipeline over class counts and lambdas.
    Sweep(SweepArgs),
    /// Render segmentation maps in color.
    Visualize(VisualizeArgs),
}

#[derive(Args)]
struct Common {
    /// JSON config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory receiving all outputs and `run.json`.
    #[arg(long)]
    run_dir: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// JSON dataset config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset root; also the run directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
}

#[derive(Args)]
struct DiscretizeArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    manifest: PathBuf,
    /// Directory of `k{r}.txt` kernel files.
    #[arg(long)]
    kernels: PathBuf,
    #[arg(long)]
    eps_rel: Option<f64>,
    /// Also write every deconvolved class image.
    #[arg(long)]
    class_images: bool,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    manifest: PathBuf,
    /// Directory of `k{r}.txt` files used as the starting basis.
    #[arg(long)]
    init_kernels: Option<PathBuf>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    kernel_size: Option<usize>,
    #[arg(long)]
    alternations: Option<usize>,
    #[arg(long)]
    gradient_steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct D2cFitArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    manifest: PathBuf,
    /// Directory of `{pair id}.png` segmentation maps.
    #[arg(long)]
    maps: PathBuf,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    patch: Option<usize>,
    #[arg(long)]
    ridge: Option<f64>,
}

#[derive(Args)]
struct D2cApplyArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    maps: PathBuf,
    /// Filter bank JSON written by `d2c-fit`.
    #[arg(long)]
    filters: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    manifest: PathBuf,
    /// Directory of `{pair id}.pfm` restorations.
    #[arg(long)]
    restored: PathBuf,
    #[arg(long)]
    large_fraction: Option<f64>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    init_kernels: Option<PathBuf>,
    /// Comma-separated class counts.
    #[arg(long, value_delimiter = ',')]
    classes: Option<Vec<usize>>,
    /// Comma-separated lambda values.
    #[arg(long, value_delimiter = ',')]
    lambdas: Option<Vec<f64>>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct VisualizeArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    maps: PathBuf,
    #[arg(long)]
    classes: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct DiscretizeConfig {
    eps_rel: f64,
}

impl Default for DiscretizeConfig {
    fn default() -> Self {
        DiscretizeConfig { eps_rel: DEFAULT_EPS_REL }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct D2cConfig {
    classes: usize,
    patch: usize,
    ridge: f64,
}

impl Default for D2cConfig {
    fn default() -> Self {
        D2cConfig { classes: 8, patch: DEFAULT_PATCH, ridge: DEFAULT_RIDGE }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct EvalConfig {
    large_fraction: f64,
    /// Copied into every record.
    fingerprint: Fingerprint,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { large_fraction: DEFAULT_LARGE_FRACTION, fingerprint: Fingerprint::default() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct VisualizeConfig {
    classes: usize,
}

impl Default for VisualizeConfig {
    fn default() -> Self {
        VisualizeConfig { classes: 8 }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.downcast_ref::<blurseg::Error>().map_or("error", blurseg::Error::kind);
            let report = json!({ "error": { "kind": kind, "message": message(&e) } });
            eprintln!("{report}");
            ExitCode::FAILURE
        }
    }
}

/// The error chain joined with `: `, skipping links already quoted by an outer one.
fn message(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for link in e.chain() {
        let text = link.to_string();
        if !msg.contains(&text) {
            if !msg.is_empty() {
                msg.push_str(": ");
            }
            msg.push_str(&text);
        }
    }
    msg
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Discretize(a) => discretize(a),
        Command::FitKernels(a) => fit_kernels(a),
        Command::D2cFit(a) => d2c_fit(a),
        Command::D2cApply(a) => d2c_apply(a),
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => sweep(a),
        Command::Visualize(a) => visualize(a),
    }
}

/// Loads `path` (or `{}`), sets every present override (dotted keys reach
/// into nested objects) and deserializes the result.
fn resolve<T: DeserializeOwned>(path: Option<&Path>, overrides: &[(&str, Option<Value>)]) -> Result<T> {
    let mut root = match path {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?)
            .with_context(|| format!("parsing config {}", p.display()))?,
        None => Value::Object(Map::new()),
    };
    for (key, value) in overrides {
        let Some(value) = value else { continue };
        let mut node = &mut root;
        let parts: Vec<&str> = key.split('.').collect();
        for part in &parts[..parts.len() - 1] {
            let obj = node.as_object_mut().context("config must be a JSON object")?;
            node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
        }
        node.as_object_mut().context("config must be a JSON object")?.insert(parts[parts.len() - 1].to_string(), value.clone());
    }
    serde_json::from_value(root).map_err(blurseg::Error::from).context("invalid config")
}

fn val<T: Serialize>(v: Option<T>) -> Option<Value> {
    v.map(|v| serde_json::to_value(v).expect("plain values serialize"))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_run(dir: &Path, command: &str, config: &impl Serialize, inputs: Value) -> Result<()> {
    let run = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "config": config,
        "inputs": inputs,
    });
    let path = dir.join("run.json");
    std::fs::write(&path, serde_json::to_string_pretty(&run)?).with_context(|| format!("writing {}", path.display()))
}

fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let m = DatasetManifest::load(path)?;
    m.validate()?;
    Ok(m)
}

fn load_pairs(m: &DatasetManifest) -> Result<Vec<Pair>> {
    let pairs = (0..m.len())
        .into_par_iter()
        .map(|i| m.load_pair(i).map(|(blur, sharp)| Pair { id: m.pair_id(i), blur, sharp }))
        .collect::<blurseg::Result<Vec<_>>>()?;
    Ok(pairs)
}

/// Reads `k1.txt`, `k2.txt`, ... until the first missing index.
fn load_kernel_dir(dir: &Path) -> Result<BasisKernelSet> {
    let paths: Vec<PathBuf> = (1..).map(|r| dir.join(format!("k{r}.txt"))).take_while(|p| p.exists()).collect();
    if paths.is_empty() {
        bail!("no k1.txt in {}", dir.display());
    }
    Ok(BasisKernelSet::load_files(&paths)?)
}

fn load_maps(dir: &Path, pairs: &[Pair], classes: usize) -> Result<Vec<BlurSegmentationMap>> {
    pairs
        .iter()
        .map(|p| {
            let path = dir.join(format!("{}.png", p.id));
            let map = BlurSegmentationMap::load_png(&path, classes).with_context(|| format!("loading map {}", path.display()))?;
            if map.dims() != p.blur.dims() {
                return Err(
                    blurseg::Error::Dimension(format!("map {} is {:?}, image {:?}", path.display(), map.dims(), p.blur.dims())).into()
                );
            }
            Ok(map)
        })
        .collect()
}

fn synth(a: SynthArgs) -> Result<()> {
    let cfg: SynthConfig = resolve(
        a.config.as_deref(),
        &[
            ("output_dir", val(a.output_dir)),
            ("pairs", val(a.pairs)),
            ("seed", val(a.seed)),
            ("height", val(a.height)),
            ("width", val(a.width)),
            ("channels", val(a.channels)),
        ],
    )?;
    let manifest = make_dataset(&cfg)?;
    write_run(&cfg.output_dir, "synth", &cfg, json!({ "pairs": manifest.len() }))?;
    Ok(())
}

fn discretize(a: DiscretizeArgs) -> Result<()> {
    let cfg: DiscretizeConfig = resolve(a.common.config.as_deref(), &[("eps_rel", val(a.eps_rel))])?;
    let manifest = load_manifest(&a.manifest)?;
    let kernels = load_kernel_dir(&a.kernels)?;
    let dir = &a.common.run_dir;
    for sub in ["maps", "assembled"] {
        create_dir(&dir.join(sub))?;
    }
    (0..manifest.len()).into_par_iter().try_for_each(|i| -> Result<()> {
        let (y, x) = manifest.load_pair(i)?;
        let id = manifest.pair_id(i);
        let lk = LogKernelSet::from_kernels(&kernels, y.dims(), cfg.eps_rel)?;
        let nu = deconvolve_class_images(&y, &lk)?;
        let rho = oracle_assign(&nu, &x)?;
        rho.save_png(&dir.join("maps").join(format!("{id}.png")))?;
        save_image(&assemble(&nu, &rho)?, &dir.join("assembled").join(format!("{id}.pfm")))?;
        if a.class_images {
            let d = dir.join("classes").join(&id);
            create_dir(&d)?;
            for (r, plane) in nu.planes().iter().enumerate() {
                save_image(plane, &d.join(format!("class{}.pfm", r + 1)))?;
            }
        }
        Ok(())
    })?;
    write_run(dir, "discretize", &cfg, json!({ "manifest": a.manifest, "kernels": a.kernels, "classes": kernels.len() }))
}

fn fit_kernels(a: FitArgs) -> Result<()> {
    let cfg: FitConfig = resolve(
        a.common.config.as_deref(),
        &[
            ("classes", val(a.classes)),
            ("lambda", val(a.lambda)),
            ("kernel_size", val(a.kernel_size)),
            ("alternations", val(a.alternations)),
            ("gradient_steps", val(a.gradient_steps)),
            ("seed", val(a.seed)),
        ],
    )?;
    let manifest = load_manifest(&a.manifest)?;
    let init = a.init_kernels.as_deref().map(load_kernel_dir).transpose()?;
    let out = fit_basis_kernels(&manifest, &cfg, init.as_ref())?;
    let dir = &a.common.run_dir;
    create_dir(&dir.join("maps"))?;
    out.kernels.shadow().save_dir(&dir.join("kernels"))?;
    for (i, m) in out.maps.iter().enumerate() {
        m.save_png(&dir.join("maps").join(format!("{}.png", manifest.pair_id(i))))?;
    }
    std::fs::write(dir.join("fit_report.json"), out.report.to_json()?)?;
    write_run(dir, "fit-kernels", &cfg, json!({ "manifest": a.manifest, "init_kernels": a.init_kernels }))
}

fn d2c_fit(a: D2cFitArgs) -> Result<()> {
    let cfg: D2cConfig =
        resolve(a.common.config.as_deref(), &[("classes", val(a.classes)), ("patch", val(a.patch)), ("ridge", val(a.ridge))])?;
    let manifest = load_manifest(&a.manifest)?;
    let pairs = load_pairs(&manifest)?;
    let maps = load_maps(&a.maps, &pairs, cfg.classes)?;
    let samples: Vec<_> = pairs.iter().zip(&maps).map(|(p, m)| (&p.blur, &p.sharp, m)).collect();
    let acc = collect_design(&samples, cfg.classes, cfg.patch)?;
    let bank = fit_class_filters(&acc, cfg.ridge)?;
    create_dir(&a.common.run_dir)?;
    bank.save(&a.common.run_dir.join("filters.json"))?;
    write_run(&a.common.run_dir, "d2c-fit", &cfg, json!({ "manifest": a.manifest, "maps": a.maps, "pixels_per_class": acc.pixel_counts() }))
}

fn d2c_apply(a: D2cApplyArgs) -> Result<()> {
    let cfg: Value = resolve(a.common.config.as_deref(), &[])?;
    let manifest = load_manifest(&a.manifest)?;
    let bank = FilterBank::load(&a.filters)?;
    let pairs = load_pairs(&manifest)?;
    let maps = load_maps(&a.maps, &pairs, bank.class_count())?;
    let out = a.common.run_dir.join("restored");
    create_dir(&out)?;
    pairs.par_iter().zip(&maps).try_for_each(|(p, m)| -> Result<()> {
        let restored = reconstruct(&p.blur, &predict_residual(&p.blur, m, &bank)?)?;
        save_image(&restored, &out.join(format!("{}.pfm", p.id)))?;
        Ok(())
    })?;
    write_run(&a.common.run_dir, "d2c-apply", &cfg, json!({ "manifest": a.manifest, "maps": a.maps, "filters": a.filters }))
}

fn eval(a: EvalArgs) -> Result<()> {
    let cfg: EvalConfig = resolve(a.common.config.as_deref(), &[("large_fraction", val(a.large_fraction))])?;
    let manifest = load_manifest(&a.manifest)?;
    let pairs = load_pairs(&manifest)?;
    let restored = pairs
        .iter()
        .map(|p| load_image(&a.restored.join(format!("{}.pfm", p.id))).map_err(anyhow::Error::from))
        .collect::<Result<Vec<Image>>>()?;
    let refs: Vec<_> = pairs.iter().map(|p| (p.id.as_str(), &p.blur, &p.sharp)).collect();
    let large = large_motion_subset(&refs, cfg.large_fraction)?;
    let inputs: Vec<_> = pairs
        .iter()
        .zip(&restored)
        .zip(&large)
        .map(|((p, r), &l)| EvalInput { pair_id: &p.id, restored: r, sharp: &p.sharp, large: l })
        .collect();
    let records = evaluate(&inputs, &cfg.fingerprint)?;
    let summary: Vec<Value> = [TAG_TOTAL, TAG_LARGE]
        .iter()
        .filter_map(|t| summarize(&records, t).map(|(p, s)| json!({ "tag": t, "psnr": p, "ssim": s })))
        .collect();
    create_dir(&a.common.run_dir)?;
    std::fs::write(
        a.common.run_dir.join("records.json"),
        serde_json::to_string_pretty(&json!({ "records": records, "summary": summary }))?,
    )?;
    write_run(&a.common.run_dir, "eval", &cfg, json!({ "manifest": a.manifest, "restored": a.restored }))
}

fn sweep(a: SweepArgs) -> Result<()> {
    let cfg: SweepConfig =
        resolve(a.common.config.as_deref(), &[("classes", val(a.classes)), ("lambdas", val(a.lambdas)), ("fit.seed", val(a.seed))])?;
    let train = load_pairs(&load_manifest(&a.train)?)?;
    let test = load_pairs(&load_manifest(&a.test)?)?;
    let init = a.init_kernels.as_deref().map(load_kernel_dir).transpose()?;
    let out = ablation_sweep(&train, &test, &cfg, init.as_ref())?;
    out.write(&a.common.run_dir)?;
    write_run(&a.common.run_dir, "sweep", &cfg, json!({ "train": a.train, "test": a.test, "init_kernels": a.init_kernels }))
}

fn visualize(a: VisualizeArgs) -> Result<()> {
    let cfg: VisualizeConfig = resolve(a.common.config.as_deref(), &[("classes", val(a.classes))])?;
    let out = a.common.run_dir.join("colored");
    create_dir(&out)?;
    let mut names: Vec<PathBuf> = std::fs::read_dir(&a.maps)
        .with_context(|| format!("listing {}", a.maps.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    names.retain(|p| p.extension().is_some_and(|e| e == "png"));
    names.sort();
    for p in &names {
        let map = BlurSegmentationMap::load_png(p, cfg.classes)?;
        let name = p.file_name().expect("listed files have names");
        save_image(&colorize_segmentation(&map)?, &out.join(name))?;
    }
    write_run(&a.common.run_dir, "visualize", &cfg, json!({ "maps": a.maps, "count": names.len() }))
}
