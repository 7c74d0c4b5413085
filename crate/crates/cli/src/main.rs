mod overlay;
mod run_config;

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use amseg::data::{
    generate_synthetic, image_tensor, kfold_split, read_gray_png, write_gray_png, write_synthetic, Dataset, Manifest,
    SyntheticSpec, MANIFEST_FILE,
};
use amseg::model::{EncoderKind, Model, ModelConfig};
use amseg::train::{
    cross_validate, evaluate, fit, Checkpoint, Control, EvalReport, TrainConfig, TrainState, THRESHOLD,
};
use amseg::{Error, Result, Scalar};
use clap::{Parser, Subcommand, ValueEnum};
use image::{imageops, GrayImage};

use run_config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "amseg", version, about = "Anterior-mediastinum segmentation: data, training, evaluation")]
struct Cli {
    /// Worker threads (cross-validation folds run concurrently).
    #[arg(long, global = true, env = "AMSEG_THREADS")]
    threads: Option<usize>,
    /// Floating-point precision for model math.
    #[arg(long, global = true, value_enum, default_value_t = Precision::F32)]
    precision: Precision,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset with a v1 manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train one model, optionally on a single cross-validation fold.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        fold: Option<usize>,
        /// Output directory (overrides `output_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from a checkpoint written by a previous run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Patient-grouped k-fold cross-validation.
    Cv {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a checkpoint on a manifest.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Require the checkpoint to match this run config's model.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Segment one image; writes a 0/255 mask and a side-by-side overlay.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Ground-truth mask to outline in the overlay.
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Overlay path (default: `<out stem>_overlay.png`).
        #[arg(long)]
        overlay: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Print the shape trace and parameter breakdown.
    Inspect {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        encoder: Option<Encoder>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Encoder {
    Expanding,
    Ccb,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Text,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.precision {
        Precision::F32 => run::<f32>(&cli),
        Precision::F64 => run::<f64>(&cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run<T: Scalar>(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth { out, count, size, seed } => synth(out, *count, *size, *seed),
        Command::Train {
            config,
            fold,
            out,
            resume,
        } => train::<T>(&load_config(config, cli.threads)?, *fold, out.as_deref(), resume.as_deref()),
        Command::Cv { config, out } => cv::<T>(&load_config(config, cli.threads)?, out.as_deref()),
        Command::Eval {
            checkpoint,
            manifest,
            config,
            json,
        } => eval::<T>(checkpoint, manifest, config.as_deref(), *json),
        Command::Predict {
            checkpoint,
            image,
            out,
            mask,
            overlay,
            config,
        } => predict::<T>(checkpoint, image, out, mask.as_deref(), overlay.as_deref(), config.as_deref()),
        Command::Inspect { config, encoder, format } => inspect(config.as_deref(), *encoder, *format),
    }
}

fn load_config(path: &Path, threads: Option<usize>) -> Result<RunConfig> {
    let mut rc = RunConfig::read(path)?;
    if let Some(t) = threads {
        rc.train.threads = t;
        rc.train.validate()?;
    }
    Ok(rc)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn output_dir(rc: &RunConfig, flag: Option<&Path>) -> Result<PathBuf> {
    let dir = flag
        .map(Path::to_path_buf)
        .or_else(|| rc.output_dir.clone())
        .ok_or_else(|| Error::Usage("no output directory: pass --out or set `output_dir`".into()))?;
    create_dir(&dir)?;
    Ok(dir)
}

fn synth(out: &Path, count: usize, size: usize, seed: u64) -> Result<()> {
    let spec = SyntheticSpec {
        image_size: size,
        seed,
        ..SyntheticSpec::default()
    };
    let samples = generate_synthetic(&spec, count)?;
    let manifest = write_synthetic(out, &samples)?;
    println!("wrote {} samples to {}", manifest.len(), out.join(MANIFEST_FILE).display());
    Ok(())
}

fn load_dataset<T: Scalar>(path: &Path, model: &ModelConfig) -> Result<Dataset<T>> {
    let manifest = Manifest::read(path)?;
    Dataset::from_manifest(&manifest, Some(model.input_size))
}

fn json<S: serde::Serialize>(value: &S) -> String {
    serde_json::to_string_pretty(value).expect("serializable")
}

fn train<T: Scalar>(rc: &RunConfig, fold: Option<usize>, out: Option<&Path>, resume: Option<&Path>) -> Result<()> {
    let out = output_dir(rc, out)?;
    let manifest_path = rc.require_manifest()?;
    let manifest = Manifest::read(manifest_path)?;
    let data = Dataset::<T>::from_manifest(&manifest, Some(rc.model.input_size))?;
    let (train, val, seed) = match fold {
        Some(f) => {
            let folds = kfold_split(&manifest, rc.train.folds, rc.train.seed)?;
            let split = folds
                .get(f)
                .ok_or_else(|| Error::Usage(format!("fold {f} out of range for {} folds", folds.len())))?;
            (
                data.subset(&split.train),
                Some(data.subset(&split.validation)),
                rc.train.seed.wrapping_add(f as u64),
            )
        }
        None => {
            let val = rc
                .validation_manifest
                .as_deref()
                .map(|p| load_dataset::<T>(p, &rc.model))
                .transpose()?;
            (data, val, rc.train.seed)
        }
    };
    let mut model = Model::<T>::build(rc.model.clone(), seed)?;
    let mut state = TrainState::new(&model, seed);
    if let Some(path) = resume {
        let ck = Checkpoint::load(path)?;
        ck.load_into(&mut model)?;
        state = TrainState::from_checkpoint(&ck, &model)?;
    }
    let outcome = fit(&mut model, &train, val.as_ref(), &rc.train, &mut state, &mut |_, r| {
        let v = r.validation.map_or(String::new(), |m| format!(" val_dice={:.4}", m.dice));
        eprintln!("epoch {} lr={:e} loss={:.5} steps={}{v}", r.epoch, r.lr, r.train_loss, r.steps);
        Control::Continue
    })?;
    write(&out.join("history.json"), &json(&outcome.history))?;
    Checkpoint::capture(&model, Some(&state.optim), Some(&state.rng), state.epoch).save(&out.join("last.ckpt"))?;
    if let Some(best) = &outcome.best {
        best.save(&out.join("best.ckpt"))?;
        best.load_into(&mut model)?;
    }
    let scored = val.as_ref().filter(|v| !v.is_empty()).unwrap_or(&train);
    let counts = evaluate(&model, scored, rc.train.batch_size)?;
    let report = EvalReport {
        metrics: counts.summary()?,
        counts,
        samples: scored.len(),
        params_total: model.count_params().total,
    };
    write(&out.join("report.txt"), &report.to_kv())?;
    write(&out.join("report.json"), &report.to_json())?;
    print!("{}", report.to_kv());
    Ok(())
}

fn cv<T: Scalar>(rc: &RunConfig, out: Option<&Path>) -> Result<()> {
    let out = output_dir(rc, out)?;
    let data = load_dataset::<T>(rc.require_manifest()?, &rc.model)?;
    let result = cross_validate(&data, &rc.model, &rc.train)?;
    for f in &result.folds {
        let i = f.row.fold;
        write(&out.join(format!("fold{i}_history.json")), &json(&f.history))?;
        if let Some(ck) = &f.checkpoint {
            ck.save(&out.join(format!("fold{i}.ckpt")))?;
        }
    }
    let text = result.report.to_kv();
    write(&out.join("cv_report.txt"), &text)?;
    write(&out.join("cv_report.json"), &result.report.to_json())?;
    print!("{text}");
    Ok(())
}

/// Model from a checkpoint, optionally required to match a run config.
fn restore<T: Scalar>(checkpoint: &Path, config: Option<&Path>) -> Result<(Model<T>, Option<RunConfig>)> {
    let ck = Checkpoint::load(checkpoint)?;
    match config {
        Some(path) => {
            let rc = RunConfig::read(path)?;
            let mut model = Model::build(rc.model.clone(), 0)?;
            ck.load_into(&mut model)?;
            Ok((model, Some(rc)))
        }
        None => Ok((ck.restore_model()?, None)),
    }
}

fn eval<T: Scalar>(checkpoint: &Path, manifest: &Path, config: Option<&Path>, as_json: bool) -> Result<()> {
    let (model, rc) = restore::<T>(checkpoint, config)?;
    let data = load_dataset::<T>(manifest, model.config())?;
    let batch = rc.map_or(TrainConfig::default().batch_size, |r| r.train.batch_size);
    let counts = evaluate(&model, &data, batch)?;
    let report = EvalReport {
        metrics: counts.summary()?,
        counts,
        samples: data.len(),
        params_total: model.count_params().total,
    };
    if as_json {
        println!("{}", report.to_json());
    } else {
        print!("{}", report.to_kv());
    }
    Ok(())
}

fn png_bytes(img: &image::RgbImage, path: &Path) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png).map_err(|e| Error::Corrupt {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(buf.into_inner())
}

fn predict<T: Scalar>(
    checkpoint: &Path,
    image: &Path,
    out: &Path,
    mask: Option<&Path>,
    overlay: Option<&Path>,
    config: Option<&Path>,
) -> Result<()> {
    let (model, _) = restore::<T>(checkpoint, config)?;
    let input = read_gray_png(image)?;
    let (w, h) = input.dimensions();
    let s = model.config().input_size;
    let x = image_tensor::<T>(&input, Some(s));
    let mut shape = vec![1];
    shape.extend_from_slice(x.shape());
    let prob = model.predict(&x.reshape(&shape)?)?;
    let thr = T::of(THRESHOLD);
    let pixels: Vec<u8> = prob.data().iter().map(|&p| if p >= thr { 255 } else { 0 }).collect();
    let mut pred = GrayImage::from_raw(s as u32, s as u32, pixels).expect("prediction fills the raster");
    if (w, h) != (s as u32, s as u32) {
        pred = imageops::resize(&pred, w, h, imageops::FilterType::Nearest);
    }
    write_gray_png(out, w as usize, h as usize, pred.as_raw())?;

    let truth = mask.map(read_gray_png).transpose()?;
    if let Some(t) = &truth {
        if t.dimensions() != (w, h) {
            return Err(Error::Validation(format!(
                "mask {} is {:?} but image is {:?}",
                mask.expect("mask path").display(),
                t.dimensions(),
                (w, h)
            )));
        }
    }
    let overlay_path = overlay.map(Path::to_path_buf).unwrap_or_else(|| {
        let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        out.with_file_name(format!("{stem}_overlay.png"))
    });
    let rendered = overlay::render(&input, &pred, truth.as_ref());
    fs::write(&overlay_path, png_bytes(&rendered, &overlay_path)?).map_err(|e| Error::io(&overlay_path, e))?;
    let fg = pred.pixels().filter(|p| p[0] == 255).count();
    println!("mask={} overlay={} foreground_pixels={fg}", out.display(), overlay_path.display());
    Ok(())
}

fn inspect(config: Option<&Path>, encoder: Option<Encoder>, format: Format) -> Result<()> {
    let mut cfg = match config {
        Some(p) => RunConfig::read(p)?.model,
        None => ModelConfig::default(),
    };
    if let Some(e) = encoder {
        cfg.encoder = match e {
            Encoder::Expanding => EncoderKind::Expanding,
            Encoder::Ccb => EncoderKind::Ccb,
        };
        cfg.validate()?;
    }
    let model = Model::<f32>::build(cfg.clone(), 0)?;
    let trace = model.trace_shapes()?;
    let breakdown = model.count_params();
    match format {
        Format::Json => {
            let config: serde_json::Map<String, serde_json::Value> =
                cfg.to_kv().into_iter().map(|(k, v)| (k, v.into())).collect();
            let value = serde_json::json!({
                "config": config,
                "trace": trace.rows,
                "params_total": breakdown.total,
                "params_by_module": breakdown.modules,
            });
            println!("{}", json(&value));
        }
        Format::Text => {
            println!("{trace}");
            println!();
            for (module, n) in &breakdown.modules {
                println!("{module:<10} {n:>10}");
            }
            println!("{:<10} {:>10}", "params", breakdown.total);
        }
    }
    Ok(())
}
