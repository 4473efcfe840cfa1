//! `scope`: command-line entry point for the SCOPE reference implementation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scope_core::autodiff::OpKind;
use scope_core::config::RunConfig;
use scope_core::container::Container;
use scope_core::data::{generate_dataset, load_image, read_manifest, save_image, write_manifest, Dataset, ManifestEntry};
use scope_core::gradsuite::{run_suite, SuiteGroup};
use scope_core::ops::ConvParams;
use scope_core::reassembly::{reassemble, reassemble_tiled, KernelField};
use scope_core::sde::{sde_decompose, SdeParams};
use scope_core::tensor::{Shape, Tensor};
use scope_core::training::{evaluate_checkpoint, train_run, CHECKPOINT_FILE};
use scope_core::Error;

/// Largest tolerated naive/tiled disagreement in `bench`.
const BENCH_AGREEMENT: f64 = 1e-5;

#[derive(Parser)]
#[command(name = "scope", version, about = "Subtle-cue extraction and refinement toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Fixed reduction order (execution is sequential, so always reproducible).
    #[arg(long, global = true)]
    deterministic: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Split an image into SDE smooth, detail and enhanced maps.
    DemoSde {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out_prefix: String,
        /// Container holding `sde.encoder.weight` and `sde.encoder.bias`.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        k: usize,
    },
    /// Train on the synthetic dataset described by a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory, overriding `out_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Top-1 accuracy of a checkpoint on a manifest of images.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Double-precision central-difference gradient checks.
    Gradcheck {
        #[arg(long, default_value = "all")]
        module: String,
        /// Corrupts the backward rule of one operator.
        #[arg(long, hide = true)]
        corrupt: Option<String>,
    },
    /// Naive versus row-tiled reassembly timing.
    Bench {
        #[arg(long, default_value = "1,64,64,64")]
        shape: String,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 10)]
        iters: usize,
    },
    /// Writes the synthetic dataset as PPM files plus train/val manifests.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

enum Failure {
    /// A check ran and did not pass.
    Check(String),
    /// Bad flags, files or configuration.
    Input(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Input(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::DemoSde {
            image,
            out_prefix,
            weights,
            k,
        } => demo_sde(&image, &out_prefix, weights.as_deref(), k, &cli.common),
        Command::Train { config, out } => train(&config, out, &cli.common),
        Command::Eval { checkpoint, data } => eval(&checkpoint, &data),
        Command::Gradcheck { module, corrupt } => gradcheck(&module, corrupt.as_deref()),
        Command::Bench { shape, k, iters } => bench(&shape, k, iters, &cli.common),
        Command::GenData { out, config } => gen_data(&out, config.as_deref(), &cli.common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(msg)) => {
            eprintln!("scope: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Input(msg)) => {
            eprintln!("scope: {msg}");
            ExitCode::from(2)
        }
    }
}

fn sde_weights(path: &Path, k: usize) -> Result<SdeParams<f32>, Error> {
    let c = Container::load(path)?;
    let get = |name: &str| {
        c.get(name)
            .map(|t| t.to_tensor::<f32>())
            .ok_or_else(|| Error::Format(format!("{}: missing tensor `{name}`", path.display())))
    };
    let weight = get("sde.encoder.weight")?;
    let bias = get("sde.encoder.bias")?;
    let encoder = ConvParams::new(weight, bias, scope_core::ops::ConvGeometry::same(3))?;
    SdeParams::new(encoder, k)
}

fn demo_sde(image: &Path, prefix: &str, weights: Option<&Path>, k: usize, common: &Common) -> Outcome {
    if k % 2 == 0 {
        return Err(Failure::Input(format!("--k {k} is not odd")));
    }
    let img = load_image(image)?;
    let params = match weights {
        Some(w) => sde_weights(w, k)?,
        None => SdeParams::init(3, k, &mut ChaCha8Rng::seed_from_u64(common.seed.unwrap_or(0))),
    };
    let out = sde_decompose(&img, &params)?;
    let max = out.detail.max_abs();
    let detail = if max > 0.0 {
        out.detail.map(|d| 0.5 + d / (2.0 * max))
    } else {
        out.detail.map(|_| 0.5)
    };
    save_image(format!("{prefix}_smooth.ppm"), &out.smooth)?;
    save_image(format!("{prefix}_detail.ppm"), &detail)?;
    save_image(format!("{prefix}_enhanced.ppm"), &out.enhanced)?;
    println!("max |detail| {max:.6}");
    Ok(())
}

fn load_config(path: &Path, common: &Common) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
    }
    if common.deterministic {
        cfg.train.deterministic = true;
    }
    Ok(cfg)
}

fn train(config: &Path, out: Option<PathBuf>, common: &Common) -> Outcome {
    let mut cfg = load_config(config, common)?;
    if out.is_some() {
        cfg.out_dir = out;
    }
    println!("epoch\ttrain_loss\tval_acc");
    let outcome = train_run(&cfg, |m| println!("{}", m.to_line()))?;
    println!("best_epoch\t{}", outcome.best_epoch);
    println!("best_val_acc\t{:.6}", outcome.best_val_acc);
    if let Some(dir) = &cfg.out_dir {
        println!("checkpoint\t{}", dir.join(CHECKPOINT_FILE).display());
    }
    Ok(())
}

fn eval(checkpoint: &Path, manifest: &Path) -> Outcome {
    let mut data = Dataset::default();
    for entry in read_manifest(manifest)? {
        data.push(load_image(&entry.path)?, entry.label);
    }
    let acc = evaluate_checkpoint(checkpoint, &data)?;
    println!("samples\t{}", data.len());
    println!("val_acc\t{acc:.6}");
    Ok(())
}

fn gradcheck(module: &str, corrupt: Option<&str>) -> Outcome {
    let group: SuiteGroup = module.parse()?;
    let fault = corrupt.map(str::parse::<OpKind>).transpose()?;
    let results = run_suite(group, fault)?;
    let mut failed = 0;
    for r in &results {
        let verdict = if r.passed() { "ok" } else { "FAIL" };
        println!("{:<24}{:>12.3e}  tol {:.0e}  {verdict}", r.name, r.report.max_relative_error, r.tolerance);
        failed += usize::from(!r.passed());
    }
    if failed > 0 {
        return Err(Failure::Check(format!("{failed} of {} gradient checks failed", results.len())));
    }
    println!("all {} gradient checks passed", results.len());
    Ok(())
}

fn parse_shape(text: &str) -> Result<Shape, Failure> {
    let dims: Vec<usize> = text
        .split(',')
        .map(|d| d.trim().parse())
        .collect::<Result<_, _>>()
        .map_err(|_| Failure::Input(format!("--shape `{text}`: expected n,c,h,w")))?;
    match dims[..] {
        [n, c, h, w] if n * c * h * w > 0 => Ok(Shape::new(n, c, h, w)),
        _ => Err(Failure::Input(format!("--shape `{text}`: expected four positive sizes"))),
    }
}

fn median_seconds(iters: usize, mut f: impl FnMut() -> Result<Tensor<f32>, Error>) -> Result<f64, Error> {
    let mut times = Vec::with_capacity(iters);
    for _ in 0..iters {
        let start = Instant::now();
        std::hint::black_box(f()?);
        times.push(start.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    Ok(times[times.len() / 2])
}

fn bench(shape: &str, k: usize, iters: usize, common: &Common) -> Outcome {
    let s = parse_shape(shape)?;
    if k % 2 == 0 || iters == 0 {
        return Err(Failure::Input("--k must be odd and --iters positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(common.seed.unwrap_or(0));
    let features = Tensor::<f32>::from_fn(s, |_, _, _, _| rng.gen_range(-1.0..1.0));
    let logits = Tensor::<f32>::from_fn(Shape::new(s.n, k * k, s.h, s.w), |_, _, _, _| rng.gen_range(-2.0..2.0));
    let kernels = KernelField::from_logits(&logits)?;

    let naive = reassemble(&features, &kernels)?;
    let tiled = reassemble_tiled(&features, &kernels)?;
    let diff = naive.max_abs_diff(&tiled)? as f64;
    if diff > BENCH_AGREEMENT {
        return Err(Failure::Check(format!("naive and tiled disagree by {diff:.3e}")));
    }
    let t_naive = median_seconds(iters, || reassemble(&features, &kernels))?;
    let t_tiled = median_seconds(iters, || reassemble_tiled(&features, &kernels))?;
    println!("shape\t{},{},{},{}\tk\t{k}\titers\t{iters}", s.n, s.c, s.h, s.w);
    println!("max_abs_diff\t{diff:.3e}");
    println!("naive_ms\t{:.3}", t_naive * 1e3);
    println!("tiled_ms\t{:.3}", t_tiled * 1e3);
    println!("speedup\t{:.2}", t_naive / t_tiled);
    Ok(())
}

fn write_split(dir: &Path, name: &str, data: &Dataset) -> Result<(), Error> {
    let sub = dir.join(name);
    std::fs::create_dir_all(&sub)?;
    let mut entries = Vec::with_capacity(data.len());
    for (i, (img, &label)) in data.images.iter().zip(&data.labels).enumerate() {
        let file = format!("{i:05}_c{label}.ppm");
        save_image(sub.join(&file), img)?;
        entries.push(ManifestEntry {
            path: Path::new(name).join(file),
            label,
        });
    }
    write_manifest(dir.join(format!("{name}.tsv")), &entries)
}

fn gen_data(out: &Path, config: Option<&Path>, common: &Common) -> Outcome {
    let mut cfg = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.data.seed = seed;
    }
    cfg.validate()?;
    let (train, val) = generate_dataset(&cfg.data)?;
    write_split(out, "train", &train)?;
    write_split(out, "val", &val)?;
    println!("train\t{}\t{}", train.len(), out.join("train.tsv").display());
    println!("val\t{}\t{}", val.len(), out.join("val.tsv").display());
    Ok(())
}
