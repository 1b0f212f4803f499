//! `usln`: train, run, score and inspect the USLN enhancement network.
//!
//! Exit codes: 0 ok, 1 some files failed, 2 configuration or weights,
//! 3 data, 4 numerical abort.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Deserialize;
use usln::data::{image_id, load_image, load_rgb8, read_manifest, resize_bilinear, save_image, PairDataset};
use usln::losses::{FeatureExtractor, IdentityExtractor, LinearExtractor};
use usln::metrics::{evaluate_image, MetricReport, PatchLayout};
use usln::model::usln_forward;
use usln::model::weights::FORMAT_VERSION;
use usln::train::{fit, TrainConfig};
use usln::{Architecture, Error, Tensor, WeightSet};

#[derive(Parser)]
#[command(name = "usln", version, about = "Lightweight underwater image enhancement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write freshly initialized weights.
    Init {
        #[arg(long, short)]
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Standard deviation of gaussian noise added to the initial weights.
        #[arg(long, default_value_t = 0.0)]
        jitter: f64,
    },
    /// Train from a TOML run file.
    Train {
        config: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        /// Use only the first N training pairs.
        #[arg(long)]
        limit: Option<usize>,
        /// Checkpoint weight file to continue from.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Overrides `output_dir` from the run file.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Enhance an image or every image in a directory.
    Enhance {
        #[arg(long, short)]
        weights: PathBuf,
        input: PathBuf,
        #[arg(long, short)]
        output: PathBuf,
        /// Also write every intermediate module output.
        #[arg(long)]
        trace: bool,
        /// Resize inputs to SIZE x SIZE before enhancement.
        #[arg(long, value_name = "SIZE")]
        resize: Option<usize>,
        #[arg(long, default_value = "full")]
        architecture: String,
    },
    /// Score enhanced images and write a CSV report.
    Eval {
        predictions: PathBuf,
        /// Directory of reference images or a manifest with reference paths.
        #[arg(long, short, required_unless_present = "no_reference")]
        reference: Option<PathBuf>,
        #[arg(long, conflicts_with = "reference")]
        no_reference: bool,
        /// Patch layout file for color-checker scoring.
        #[arg(long, value_name = "LAYOUT")]
        colorchecker: Option<PathBuf>,
        #[arg(long, default_value = "report.csv")]
        report: PathBuf,
    },
    /// Print parameter counts of a weight file.
    Inspect { weights: PathBuf },
}

struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn new(code: u8, msg: impl ToString) -> Self {
        Failure {
            code,
            msg: msg.to_string(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::WeightFile { .. } => 2,
            Error::NonFinite { .. } => 4,
            _ => 3,
        };
        Failure::new(code, e)
    }
}

type Outcome = Result<ExitCode, Failure>;

fn load_weights(path: &Path) -> Result<WeightSet, Failure> {
    WeightSet::load(path).map_err(|e| Failure::new(2, e))
}

fn architecture(name: &str) -> Result<Architecture, Failure> {
    Architecture::variant(name).ok_or_else(|| Failure::new(2, format!("unknown architecture {name:?}")))
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum ExtractorSpec {
    Identity,
    Linear { weight: [[f64; 3]; 3], bias: [f64; 3] },
}

/// Run file for `usln train`. Relative paths are resolved against the
/// directory holding the file.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RunFile {
    manifest: PathBuf,
    output_dir: PathBuf,
    #[serde(default = "default_split")]
    split: String,
    /// Square training size; 0 keeps the original dimensions.
    #[serde(default = "default_size")]
    size: usize,
    #[serde(default)]
    feature_extractor: Option<ExtractorSpec>,
    #[serde(default)]
    train: TrainConfig,
}

fn default_split() -> String {
    "train".into()
}

fn default_size() -> usize {
    256
}

fn extractor(spec: Option<ExtractorSpec>) -> Result<Option<Box<dyn FeatureExtractor>>, Failure> {
    Ok(match spec {
        None => None,
        Some(ExtractorSpec::Identity) => Some(Box::new(IdentityExtractor)),
        Some(ExtractorSpec::Linear { weight, bias }) => {
            let w = Tensor::new(vec![3, 3], weight.concat()).map_err(|e| Failure::new(2, e))?;
            let b = Tensor::new(vec![3], bias.to_vec()).map_err(|e| Failure::new(2, e))?;
            Some(Box::new(LinearExtractor::new(w, b).map_err(|e| Failure::new(2, e))?))
        }
    })
}

fn train(
    config: &Path,
    epochs: Option<usize>,
    limit: Option<usize>,
    resume: Option<&Path>,
    output: Option<PathBuf>,
) -> Outcome {
    let text = std::fs::read_to_string(config).map_err(|e| Failure::new(2, format!("{}: {e}", config.display())))?;
    let run: RunFile = toml::from_str(&text).map_err(|e| Failure::new(2, format!("{}: {e}", config.display())))?;
    let base = config.parent().unwrap_or(Path::new(""));
    let mut cfg = run.train;
    if let Some(n) = epochs {
        cfg.epochs = n;
    }
    cfg.validate()?;
    let fx = extractor(run.feature_extractor)?;
    let out_dir = output.unwrap_or_else(|| base.join(&run.output_dir));

    let manifest_path = base.join(&run.manifest);
    let manifest = read_manifest(&manifest_path)?;
    let size = (run.size > 0).then_some(run.size);
    let data = PairDataset::from_manifest(&manifest, Some(&run.split), limit, size)?;
    if data.is_empty() {
        return Err(Failure::new(
            3,
            format!(
                "{}: no paired records in split {:?}",
                manifest_path.display(),
                run.split
            ),
        ));
    }
    eprintln!("training on {} pairs for {} epochs", data.len(), cfg.epochs);
    let outcome = fit(&cfg, &data, &out_dir, resume, fx.as_deref())?;
    if let Some(last) = outcome.history.last() {
        println!("epoch={} loss={:.6}", last.epoch, last.loss.total);
    }
    println!("weights={}", outcome.weights_path.display());
    Ok(ExitCode::SUCCESS)
}

fn is_image(path: &Path) -> bool {
    path.is_file()
        && path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let entries = std::fs::read_dir(dir).map_err(|e| Failure::new(3, format!("{}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| is_image(p))
        .collect();
    files.sort();
    Ok(files)
}

fn enhance_one(
    path: &Path,
    weights: &WeightSet,
    arch: &Architecture,
    out_dir: &Path,
    trace: bool,
    resize: Option<usize>,
) -> usln::Result<()> {
    let mut x = load_image(path)?;
    if let Some(s) = resize {
        x = resize_bilinear(&x, s, s)?;
    }
    let id = image_id(path);
    let f = usln_forward(&x, weights, arch, trace)?;
    save_image(&f.clamped(), out_dir.join(format!("{id}.png")))?;
    if let Some(t) = f.trace {
        let dir = out_dir.join(format!("{id}_trace"));
        std::fs::create_dir_all(&dir).map_err(|e| Error::Data(format!("{}: {e}", dir.display())))?;
        for (k, (name, stage)) in t.stages.iter().enumerate() {
            save_image(&stage.clamp01(), dir.join(format!("{k:02}_{name}.png")))?;
        }
    }
    Ok(())
}

fn enhance(weights: &Path, input: &Path, out_dir: &Path, trace: bool, resize: Option<usize>, arch: &str) -> Outcome {
    let arch = architecture(arch)?;
    if resize == Some(0) {
        return Err(Failure::new(2, "--resize must be at least 1"));
    }
    let weights = load_weights(weights)?;
    let files = if input.is_dir() {
        list_images(input)?
    } else if input.is_file() {
        vec![input.to_path_buf()]
    } else {
        return Err(Failure::new(
            3,
            format!("{}: no such file or directory", input.display()),
        ));
    };
    std::fs::create_dir_all(out_dir).map_err(|e| Failure::new(3, format!("{}: {e}", out_dir.display())))?;
    let mut failed = 0;
    for f in &files {
        if let Err(e) = enhance_one(f, &weights, &arch, out_dir, trace, resize) {
            eprintln!("error: {e}");
            failed += 1;
        }
    }
    println!("enhanced={} failed={}", files.len() - failed, failed);
    Ok(if failed > 0 {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    })
}

/// Reference image for each image id.
fn reference_index(reference: &Path) -> Result<BTreeMap<String, PathBuf>, Failure> {
    if reference.is_dir() {
        return Ok(list_images(reference)?.into_iter().map(|p| (image_id(&p), p)).collect());
    }
    let manifest = read_manifest(reference)?;
    Ok(manifest
        .paired()
        .filter_map(|r| r.reference_path.clone().map(|p| (image_id(&r.raw_path), p)))
        .collect())
}

fn eval(predictions: &Path, reference: Option<&Path>, layout: Option<&Path>, report_path: &Path) -> Outcome {
    let layout = layout
        .map(PatchLayout::load)
        .transpose()
        .map_err(|e| Failure::new(2, e))?;
    let preds = if predictions.is_dir() {
        list_images(predictions)?
    } else {
        vec![predictions.to_path_buf()]
    };
    let refs = reference.map(reference_index).transpose()?;
    if let Some(refs) = &refs {
        let unmatched: Vec<String> = preds
            .iter()
            .filter(|p| !refs.contains_key(&image_id(p)))
            .map(|p| p.display().to_string())
            .collect();
        if !unmatched.is_empty() {
            for u in &unmatched {
                eprintln!("no reference for {u}");
            }
            return Err(Failure::new(
                3,
                format!("{} predictions have no reference", unmatched.len()),
            ));
        }
    }
    let mut report = MetricReport::default();
    for p in &preds {
        let id = image_id(p);
        let pred = load_rgb8(p)?;
        let r = match &refs {
            Some(refs) => Some(load_rgb8(&refs[&id])?),
            None => None,
        };
        report
            .rows
            .push(evaluate_image(&id, &pred, r.as_ref(), layout.as_ref())?);
    }
    report.write_csv(report_path)?;
    let header = report.header();
    if let Some(mean) = report.mean() {
        println!("{}", header.join(","));
        println!("{}", report.record(&mean).join(","));
    }
    Ok(ExitCode::SUCCESS)
}

fn inspect(path: &Path) -> Outcome {
    let w = load_weights(path)?;
    let g = w.group_counts();
    println!("format_version={FORMAT_VERSION}");
    println!("tensors={}", w.len());
    println!("dsbm={}", g.dsbm);
    println!("mcsm={}", g.mcsm);
    println!("rem={}", g.rem);
    println!("total={}", g.total);
    println!("finite={}", w.all_finite());
    Ok(if g.matches_reference() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Init { output, seed, jitter } => {
            if !(jitter >= 0.0 && jitter.is_finite()) {
                return Err(Failure::new(2, "--jitter must be non-negative"));
            }
            WeightSet::init(seed, jitter).save(&output)?;
            println!("weights={}", output.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Train {
            config,
            epochs,
            limit,
            resume,
            output,
        } => train(&config, epochs, limit, resume.as_deref(), output),
        Command::Enhance {
            weights,
            input,
            output,
            trace,
            resize,
            architecture,
        } => enhance(&weights, &input, &output, trace, resize, &architecture),
        Command::Eval {
            predictions,
            reference,
            no_reference: _,
            colorchecker,
            report,
        } => eval(&predictions, reference.as_deref(), colorchecker.as_deref(), &report),
        Command::Inspect { weights } => inspect(&weights),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
