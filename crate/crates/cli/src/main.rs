use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use lichi::config::{config_hash, Overrides};
use lichi::iteration::{lichi_run, repeat_internal_adaptation, LichiConfig};
use lichi::metrics::{bias_variance, psnr, BiasVarianceResult};
use lichi::noise::{add_awgn, add_poisson_gaussian, NoiseParams, VstScaling, NOISE_RNG};
use lichi::pilot::{pilot_denoise, pilot_single_estimate};
use lichi::sweep::{self, Method, SweepSpec, TABLE2_SIGMAS};
use lichi::{exec, load_gray, save_gray, Error, Image, PilotMethod};

#[derive(Parser)]
#[command(name = "lichi", version, about = "Unsupervised patch-based image denoising")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Denoise one image.
    Denoise(DenoiseArgs),
    /// Run a method matrix over a directory of images and write a CSV report.
    Eval(EvalArgs),
    /// Write the pilot-comparison or repeated-adaptation curves for a dataset.
    Curves(CurvesArgs),
    /// Monte Carlo bias and variance of the pilot with and without aggregation.
    BiasVariance(BiasVarianceArgs),
}

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML or JSON file with default values for these options.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads (falls back to LICHI_THREADS, then all cores).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Pilot weights: sure, nr2n, avg or noisy.
    #[arg(long)]
    pilot: Option<PilotMethod>,
    /// Extra-noise ratio of the nr2n pilot.
    #[arg(long)]
    alpha: Option<f64>,
    /// Number of iterations M.
    #[arg(long)]
    iters: Option<usize>,
    /// Patch side of the iterations.
    #[arg(long)]
    patch: Option<usize>,
    /// Group size of the iterations.
    #[arg(long)]
    group: Option<usize>,
    #[arg(long)]
    pilot_patch: Option<usize>,
    #[arg(long)]
    pilot_group: Option<usize>,
    /// Search window side.
    #[arg(long)]
    window: Option<usize>,
    /// Reference patch stride.
    #[arg(long)]
    step: Option<usize>,
    /// Re-run block matching every this many iterations.
    #[arg(long)]
    rematch: Option<usize>,
    /// Also report PSNR of the output clamped to [0, 255] and rounded.
    #[arg(long)]
    clamp: bool,
}

#[derive(Args)]
struct DenoiseArgs {
    /// Noisy input (or the clean image with --add-noise).
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Gaussian noise level on the 0-255 scale.
    #[arg(long)]
    sigma: Option<f64>,
    /// Synthesize noise on the ground truth before denoising.
    #[arg(long)]
    add_noise: bool,
    /// Clean reference, used for PSNR and as the source with --add-noise.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Poisson-Gaussian parameters "a,b"; denoise through the Anscombe transform.
    #[arg(long, value_parser = parse_pair, conflicts_with = "vst_file")]
    vst: Option<(f64, f64)>,
    /// JSON file {"a": .., "b": ..} with the Poisson-Gaussian parameters.
    #[arg(long)]
    vst_file: Option<PathBuf>,
    /// Run K steps of naive repeated internal adaptation instead of the iterations.
    #[arg(long, value_name = "K")]
    naive_iterate: Option<usize>,
    /// Also save the synthesized noisy image here.
    #[arg(long)]
    save_noisy: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Preset {
    Table2,
    Fig4,
    Fig2,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Comma-separated noise levels.
    #[arg(long, value_delimiter = ',')]
    sigmas: Vec<f64>,
    /// Comma-separated methods among noisy, pilot, lichi.
    #[arg(long, value_delimiter = ',')]
    methods: Vec<Method>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    reproduce: Option<Preset>,
    /// Adaptation steps for the fig2 preset.
    #[arg(long, default_value_t = 6)]
    steps: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CurveKind {
    Fig4,
    Fig2,
}

#[derive(Args)]
struct CurvesArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum)]
    kind: CurveKind,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',')]
    sigmas: Vec<f64>,
    #[arg(long, default_value_t = 6)]
    steps: usize,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Estimator {
    /// Pilot with aggregation.
    Aggregated,
    /// Pilot keeping one estimate per pixel.
    Single,
    Lichi,
}

#[derive(Args)]
struct BiasVarianceArgs {
    /// Clean image.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    sigma: f64,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, value_delimiter = ',', default_values = ["aggregated", "single"])]
    estimators: Vec<Estimator>,
    /// JSON report path (printed to stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

/// Values accepted from `--config`; flags override them.
#[derive(Debug, Default)]
struct FileConfig {
    seed: Option<u64>,
    threads: Option<usize>,
    sigma: Option<f64>,
    clamp: Option<bool>,
    overrides: Overrides,
}

#[derive(Deserialize)]
struct RunKeys {
    seed: Option<u64>,
    threads: Option<usize>,
    sigma: Option<f64>,
    clamp: Option<bool>,
}

impl FileConfig {
    /// Splits the run-level keys from the algorithm overrides, rejecting
    /// anything neither side knows.
    fn from_value(mut v: serde_json::Value) -> Result<Self, String> {
        let map = v.as_object_mut().ok_or("expected a table of settings")?;
        let mut run = serde_json::Map::new();
        for key in ["seed", "threads", "sigma", "clamp"] {
            if let Some(val) = map.remove(key) {
                run.insert(key.into(), val);
            }
        }
        let keys: RunKeys = serde_json::from_value(run.into()).map_err(|e| e.to_string())?;
        let overrides: Overrides = serde_json::from_value(v).map_err(|e| e.to_string())?;
        Ok(FileConfig {
            seed: keys.seed,
            threads: keys.threads,
            sigma: keys.sigma,
            clamp: keys.clamp,
            overrides,
        })
    }
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("expected \"a,b\", got {s:?}"))?;
    let a = a.trim().parse::<f64>().map_err(|e| format!("bad a: {e}"))?;
    let b = b.trim().parse::<f64>().map_err(|e| format!("bad b: {e}"))?;
    Ok((a, b))
}

fn read_file_config(path: &Path) -> lichi::Result<FileConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let parsed = match path.extension().and_then(|e| e.to_str()) {
        Some("json") => serde_json::from_str(&text).map_err(|e| e.to_string()),
        _ => toml::from_str(&text).map_err(|e| e.to_string()),
    };
    parsed.and_then(FileConfig::from_value).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Common options with the config file folded in underneath the flags.
struct Resolved {
    overrides: Overrides,
    seed: u64,
    threads: Option<usize>,
    clamp: bool,
    file_sigma: Option<f64>,
}

fn resolve_common(c: &Common) -> lichi::Result<Resolved> {
    let file = match &c.config {
        Some(p) => read_file_config(p)?,
        None => FileConfig::default(),
    };
    let flags = Overrides {
        patch: c.patch,
        group: c.group,
        iters: c.iters,
        window: c.window,
        step: c.step,
        rematch: c.rematch,
        tau_scale: None,
        pilot: c.pilot,
        alpha: c.alpha,
        pilot_patch: c.pilot_patch,
        pilot_group: c.pilot_group,
    };
    let env_threads = match std::env::var("LICHI_THREADS") {
        Ok(v) => Some(
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("LICHI_THREADS must be a positive integer, got {v:?}")))?,
        ),
        Err(_) => None,
    };
    let threads = c.threads.or(env_threads).or(file.threads);
    if threads == Some(0) {
        return Err(Error::Config("thread count must be at least 1".into()));
    }
    Ok(Resolved {
        overrides: file.overrides.merge(flags),
        seed: c.seed.or(file.seed).unwrap_or(0),
        threads,
        clamp: c.clamp || file.clamp.unwrap_or(false),
        file_sigma: file.sigma,
    })
}

fn announce<T: Serialize>(config: &T) -> String {
    let hash = config_hash(config);
    let json = serde_json::to_string_pretty(config).expect("configuration serializes");
    eprintln!("config {json}");
    eprintln!("config_hash {hash}");
    hash
}

fn in_pool<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    match threads {
        Some(n) => exec::with_threads(n, f),
        None => f(),
    }
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum NoiseSpec {
    Gaussian { sigma: f64 },
    PoissonGaussian { a: f64, b: f64, stabilized_sigma: f64 },
}

#[derive(Serialize)]
struct DenoiseRecord<'a> {
    input: Option<&'a Path>,
    ground_truth: Option<&'a Path>,
    add_noise: bool,
    noise: &'a NoiseSpec,
    seed: u64,
    rng: &'static str,
    naive_iterate: Option<usize>,
    lichi: &'a LichiConfig,
}

fn write_sidecar<T: Serialize>(out: &Path, hash: &str, config: &T) -> lichi::Result<()> {
    let mut path = out.as_os_str().to_owned();
    path.push(".json");
    let path = PathBuf::from(path);
    let body = serde_json::json!({ "config_hash": hash, "config": config });
    std::fs::write(&path, serde_json::to_string_pretty(&body).expect("serializable"))
        .map_err(|source| Error::Write { path, source })
}

fn cmd_denoise(args: &DenoiseArgs) -> lichi::Result<()> {
    let r = resolve_common(&args.common)?;
    let vst = match (&args.vst, &args.vst_file) {
        (Some((a, b)), _) => Some(VstScaling::new(*a, *b)?),
        (None, Some(p)) => {
            let params = NoiseParams::from_json_file(p)?;
            Some(VstScaling::new(params.a, params.b)?)
        }
        (None, None) => None,
    };
    let sigma_flag = args.sigma.or(r.file_sigma);
    let (noise, sigma) = match &vst {
        Some(v) => (
            NoiseSpec::PoissonGaussian {
                a: v.a,
                b: v.b,
                stabilized_sigma: v.sigma(),
            },
            v.sigma(),
        ),
        None => {
            let s = sigma_flag.ok_or_else(|| Error::Config("--sigma is required without --vst".into()))?;
            if s <= 0.0 || !s.is_finite() {
                return Err(Error::Config("sigma must be positive".into()));
            }
            (NoiseSpec::Gaussian { sigma: s }, s)
        }
    };
    if args.add_noise && args.gt.is_none() {
        return Err(Error::Config("--add-noise needs --gt".into()));
    }
    if !args.add_noise && args.input.is_none() {
        return Err(Error::Config("--in is required unless --add-noise is given".into()));
    }
    if args.naive_iterate == Some(0) {
        return Err(Error::Config("--naive-iterate needs at least one step".into()));
    }
    let cfg = r.overrides.resolve(sigma)?;
    let record = DenoiseRecord {
        input: args.input.as_deref(),
        ground_truth: args.gt.as_deref(),
        add_noise: args.add_noise,
        noise: &noise,
        seed: r.seed,
        rng: NOISE_RNG,
        naive_iterate: args.naive_iterate,
        lichi: &cfg,
    };
    let hash = announce(&record);

    let gt = args.gt.as_ref().map(load_gray).transpose()?;
    let y = if args.add_noise {
        let clean = gt.as_ref().expect("checked above");
        match &vst {
            Some(v) => add_poisson_gaussian(clean, v.a, v.b, r.seed)?,
            None => add_awgn(clean, sigma, r.seed)?,
        }
    } else {
        load_gray(args.input.as_ref().expect("checked above"))?
    };
    if let Some(p) = &args.save_noisy {
        save_gray(&y, p)?;
    }
    if let Some(clean) = &gt {
        if !clean.same_shape(&y) {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", clean.height(), clean.width()),
                actual: format!("{}x{}", y.height(), y.width()),
            });
        }
    }

    let start = Instant::now();
    let run = |u: &Image| -> lichi::Result<Image> {
        match args.naive_iterate {
            Some(k) => Ok(repeat_internal_adaptation(u, sigma, k, &cfg)?
                .steps
                .pop()
                .expect("at least one step")),
            None => Ok(lichi_run(u, sigma, &cfg, None, |m, _| {
                log::info!("iteration {m}/{} done", cfg.iterations);
            })?
            .output),
        }
    };
    let out = in_pool(r.threads, || -> lichi::Result<Image> {
        match &vst {
            Some(v) => v.inverse(&run(&v.forward(&y)?)?),
            None => run(&y),
        }
    })?;
    let wall = start.elapsed().as_secs_f64();

    save_gray(&out, &args.out)?;
    write_sidecar(&args.out, &hash, &record)?;
    println!("denoised in {wall:.2} s -> {}", args.out.display());
    if let Some(clean) = &gt {
        println!("psnr_noisy_db {:.4}", psnr(clean, &y)?);
        println!("psnr_db {:.4}", psnr(clean, &out)?);
        if r.clamp {
            println!("psnr_clamped_db {:.4}", psnr(clean, &out.quantized())?);
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalRecord<'a> {
    dataset: &'a Path,
    preset: Option<Preset>,
    sigmas: &'a [f64],
    methods: &'a [Method],
    overrides: &'a Overrides,
    steps: Option<usize>,
    seed: u64,
    rng: &'static str,
}

fn dataset_name(dir: &Path) -> String {
    dir.components()
        .next_back()
        .map_or_else(|| "dataset".into(), |c| c.as_os_str().to_string_lossy().into_owned())
}

fn cmd_eval(args: &EvalArgs) -> lichi::Result<()> {
    match args.reproduce {
        Some(Preset::Fig4) => {
            return curves(&args.dataset, CurveKind::Fig4, &args.out, &args.sigmas, args.steps, &args.common)
        }
        Some(Preset::Fig2) => {
            return curves(&args.dataset, CurveKind::Fig2, &args.out, &args.sigmas, args.steps, &args.common)
        }
        _ => {}
    }
    let r = resolve_common(&args.common)?;
    let sigmas = if args.sigmas.is_empty() {
        TABLE2_SIGMAS.to_vec()
    } else {
        args.sigmas.clone()
    };
    let methods = if args.methods.is_empty() {
        vec![Method::Lichi]
    } else {
        args.methods.clone()
    };
    let spec = SweepSpec {
        dataset: dataset_name(&args.dataset),
        sigmas,
        methods,
        overrides: r.overrides,
        seed: r.seed,
        clamp: r.clamp,
    };
    spec.validate()?;
    announce(&EvalRecord {
        dataset: &args.dataset,
        preset: args.reproduce,
        sigmas: &spec.sigmas,
        methods: &spec.methods,
        overrides: &spec.overrides,
        steps: None,
        seed: spec.seed,
        rng: NOISE_RNG,
    });
    let report = in_pool(r.threads, || sweep::sweep(&args.dataset, &spec))?;
    for s in &report.skipped {
        eprintln!("skipped {}: {}", s.path.display(), s.reason);
    }
    report.write_csv(&args.out, spec.clamp)?;
    for &sigma in &spec.sigmas {
        for &m in &spec.methods {
            if let Some(p) = report.mean_psnr(m, sigma) {
                println!("sigma {sigma:>5} {m:<6} mean psnr {p:.3} dB");
            }
        }
    }
    println!("{} rows -> {}", report.rows.len(), args.out.display());
    Ok(())
}

fn curves(
    dataset: &Path,
    kind: CurveKind,
    out: &Path,
    sigmas: &[f64],
    steps: usize,
    common: &Common,
) -> lichi::Result<()> {
    let r = resolve_common(common)?;
    let (images, skipped) = sweep::load_dataset(dataset)?;
    for s in &skipped {
        eprintln!("skipped {}: {}", s.path.display(), s.reason);
    }
    match kind {
        CurveKind::Fig4 => {
            let sigmas = if sigmas.is_empty() { TABLE2_SIGMAS.to_vec() } else { sigmas.to_vec() };
            let hash = announce(&EvalRecord {
                dataset,
                preset: Some(Preset::Fig4),
                sigmas: &sigmas,
                methods: &[Method::Pilot, Method::Lichi],
                overrides: &r.overrides,
                steps: None,
                seed: r.seed,
                rng: NOISE_RNG,
            });
            let rows = in_pool(r.threads, || {
                sweep::pilot_curves(&images, &sigmas, &sweep::fig4_pilots(), &r.overrides, r.seed)
            })?;
            sweep::write_pilot_curves(&rows, out, &hash)?;
            for row in &rows {
                println!("sigma {:>5} {:<5} {:<10} {:.3} dB", row.sigma, row.pilot, row.level, row.psnr_db);
            }
            println!("{} rows -> {}", rows.len(), out.display());
        }
        CurveKind::Fig2 => {
            let sigma = match sigmas {
                [] => 25.0,
                [s] => *s,
                _ => return Err(Error::Config("the adaptation curve takes a single sigma".into())),
            };
            let hash = announce(&EvalRecord {
                dataset,
                preset: Some(Preset::Fig2),
                sigmas: &[sigma],
                methods: &[],
                overrides: &r.overrides,
                steps: Some(steps),
                seed: r.seed,
                rng: NOISE_RNG,
            });
            let curve = in_pool(r.threads, || {
                sweep::adaptation_curve(&images, sigma, steps, &r.overrides, r.seed)
            })?;
            sweep::write_adaptation_curve(&curve, out, &hash)?;
            for (step, p) in &curve {
                println!("step {step:>2} {p:.3} dB");
            }
        }
    }
    Ok(())
}

fn cmd_curves(args: &CurvesArgs) -> lichi::Result<()> {
    curves(&args.dataset, args.kind, &args.out, &args.sigmas, args.steps, &args.common)
}

#[derive(Serialize)]
struct BiasVarianceRecord<'a> {
    input: &'a Path,
    sigma: f64,
    trials: usize,
    estimators: &'a [Estimator],
    lichi: &'a LichiConfig,
    seed: u64,
    rng: &'static str,
}

#[derive(Serialize)]
struct BiasVarianceEntry {
    estimator: Estimator,
    #[serde(flatten)]
    result: BiasVarianceResult,
    identity_holds: bool,
}

fn cmd_bias_variance(args: &BiasVarianceArgs) -> lichi::Result<()> {
    let r = resolve_common(&args.common)?;
    let cfg = r.overrides.resolve(args.sigma)?;
    if args.trials < 2 {
        return Err(Error::Config("bias-variance needs at least 2 trials".into()));
    }
    let hash = announce(&BiasVarianceRecord {
        input: &args.input,
        sigma: args.sigma,
        trials: args.trials,
        estimators: &args.estimators,
        lichi: &cfg,
        seed: r.seed,
        rng: NOISE_RNG,
    });
    let x = load_gray(&args.input)?;
    let sigma = args.sigma;
    let entries = in_pool(r.threads, || -> lichi::Result<Vec<BiasVarianceEntry>> {
        args.estimators
            .iter()
            .map(|&est| {
                let result = match est {
                    Estimator::Aggregated => {
                        bias_variance(|y| pilot_denoise(y, sigma, &cfg.pilot), &x, sigma, args.trials, r.seed)?
                    }
                    Estimator::Single => bias_variance(
                        |y| pilot_single_estimate(y, sigma, &cfg.pilot, r.seed),
                        &x,
                        sigma,
                        args.trials,
                        r.seed,
                    )?,
                    Estimator::Lichi => bias_variance(
                        |y| Ok(lichi_run(y, sigma, &cfg, None, |_, _| {})?.output),
                        &x,
                        sigma,
                        args.trials,
                        r.seed,
                    )?,
                };
                Ok(BiasVarianceEntry {
                    estimator: est,
                    identity_holds: result.identity_holds(),
                    result,
                })
            })
            .collect()
    })?;
    let body = serde_json::json!({ "config_hash": hash, "results": entries });
    let text = serde_json::to_string_pretty(&body).expect("serializable");
    match &args.out {
        Some(p) => std::fs::write(p, text).map_err(|source| Error::Write {
            path: p.clone(),
            source,
        })?,
        None => println!("{text}"),
    }
    for e in &entries {
        eprintln!(
            "{:<10} mse {:.3} bias^2 {:.3} variance {:.3}",
            serde_json::to_value(e.estimator).expect("serializable").as_str().unwrap_or("?"),
            e.result.mse,
            e.result.squared_bias,
            e.result.variance
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Denoise(a) => cmd_denoise(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Curves(a) => cmd_curves(a),
        Command::BiasVariance(a) => cmd_bias_variance(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
