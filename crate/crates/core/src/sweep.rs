//! Dataset sweeps and the CSV files they produce.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{config_hash, Overrides};
use crate::error::{Error, Result};
use crate::exec;
use crate::image::{load_gray, Image};
use crate::iteration::{lichi_run, repeat_internal_adaptation};
use crate::metrics::psnr;
use crate::noise::{add_awgn, NOISE_RNG};
use crate::pilot::{group_level_psnr, pilot_denoise};
use crate::weights::PilotMethod;

pub const CSV_HEADER: [&str; 9] = [
    "dataset",
    "image",
    "sigma",
    "method",
    "pilot",
    "iterations",
    "psnr_db",
    "wall_s",
    "config_hash",
];

pub const TABLE2_SIGMAS: [f64; 5] = [5.0, 15.0, 25.0, 35.0, 50.0];

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "pgm", "pnm"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// The noisy input itself.
    Noisy,
    /// The pilot stage alone.
    Pilot,
    Lichi,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Noisy => "noisy",
            Method::Pilot => "pilot",
            Method::Lichi => "lichi",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "noisy" => Ok(Method::Noisy),
            "pilot" => Ok(Method::Pilot),
            "lichi" => Ok(Method::Lichi),
            other => Err(Error::Config(format!(
                "unknown method {other:?} (expected noisy, pilot or lichi)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub dataset: String,
    pub image: String,
    pub sigma: f64,
    pub method: Method,
    pub pilot: String,
    pub iterations: usize,
    pub psnr_db: f64,
    pub psnr_clamped_db: Option<f64>,
    pub wall_s: f64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedImage {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub skipped: Vec<SkippedImage>,
}

impl BenchReport {
    /// Mean of per-image PSNR for one method and noise level.
    pub fn mean_psnr(&self, method: Method, sigma: f64) -> Option<f64> {
        let vals: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.method == method && r.sigma == sigma)
            .map(|r| r.psnr_db)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// Writes the rows; `clamped` appends a `psnr_clamped_db` column.
    pub fn write_csv(&self, path: impl AsRef<Path>, clamped: bool) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv_writer(path)?;
        let io = |e: csv::Error| write_error(path, e);
        let mut header: Vec<&str> = CSV_HEADER.to_vec();
        if clamped {
            header.push("psnr_clamped_db");
        }
        w.write_record(&header).map_err(io)?;
        for r in &self.rows {
            let mut rec = vec![
                r.dataset.clone(),
                r.image.clone(),
                format!("{}", r.sigma),
                r.method.to_string(),
                r.pilot.clone(),
                r.iterations.to_string(),
                format!("{:.4}", r.psnr_db),
                format!("{:.3}", r.wall_s),
                r.config_hash.clone(),
            ];
            if clamped {
                rec.push(r.psnr_clamped_db.map_or(String::new(), |v| format!("{v:.4}")));
            }
            w.write_record(&rec).map_err(io)?;
        }
        w.flush().map_err(|source| Error::Write {
            path: path.to_path_buf(),
            source,
        })
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|source| Error::Write {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(csv::Writer::from_writer(file))
}

fn write_error(path: &Path, e: csv::Error) -> Error {
    Error::Write {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    }
}

/// Noise seed for one image at one noise level, shared by every method.
pub fn noise_seed(run_seed: u64, image: &str, sigma: f64) -> u64 {
    let mut h = Sha256::new();
    h.update(image.as_bytes());
    h.update(sigma.to_bits().to_le_bytes());
    let d = h.finalize();
    let mut b = [0u8; 8];
    b.copy_from_slice(&d[..8]);
    run_seed.wrapping_add(u64::from_le_bytes(b))
}

/// A loaded image with its file stem.
#[derive(Debug, Clone)]
pub struct NamedImage {
    pub name: String,
    pub image: Image,
}

/// Loads every grayscale image in `dir` in file-name order. Files that fail
/// to decode are returned in the skip list instead of aborting the load.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<(Vec<NamedImage>, Vec<SkippedImage>)> {
    let dir = dir.as_ref();
    let entries = std::fs::read_dir(dir).map_err(|source| Error::Read {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| IMAGE_EXTENSIONS.iter().any(|x| e.eq_ignore_ascii_case(x)))
        })
        .collect();
    paths.sort();
    let mut images = Vec::new();
    let mut skipped = Vec::new();
    for p in paths {
        match load_gray(&p) {
            Ok(image) => images.push(NamedImage {
                name: p.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned()),
                image,
            }),
            Err(e) => {
                log::warn!("skipping {}: {e}", p.display());
                skipped.push(SkippedImage {
                    path: p,
                    reason: e.to_string(),
                });
            }
        }
    }
    Ok((images, skipped))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSpec {
    pub dataset: String,
    pub sigmas: Vec<f64>,
    pub methods: Vec<Method>,
    pub overrides: Overrides,
    pub seed: u64,
    pub clamp: bool,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.sigmas.is_empty() || self.methods.is_empty() {
            return Err(Error::Config("a sweep needs at least one sigma and one method".into()));
        }
        for &s in &self.sigmas {
            self.overrides.resolve(s)?;
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct HashedRun<'a> {
    config: &'a crate::iteration::LichiConfig,
    method: Method,
    seed: u64,
    rng: &'static str,
}

/// Runs every method at every noise level on every image of `dir`.
pub fn sweep(dir: impl AsRef<Path>, spec: &SweepSpec) -> Result<BenchReport> {
    spec.validate()?;
    let (images, skipped) = load_dataset(dir)?;
    let rows = sweep_images(&images, spec)?;
    Ok(BenchReport { rows, skipped })
}

/// Same as [`sweep`] on images already in memory. Rows are ordered by image,
/// then noise level, then method.
pub fn sweep_images(images: &[NamedImage], spec: &SweepSpec) -> Result<Vec<BenchRow>> {
    spec.validate()?;
    let per_image = exec::map_range(images.len(), |i| sweep_one(&images[i], spec));
    let mut rows = Vec::new();
    for r in per_image {
        rows.extend(r?);
    }
    Ok(rows)
}

fn sweep_one(img: &NamedImage, spec: &SweepSpec) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &sigma in &spec.sigmas {
        let cfg = spec.overrides.resolve(sigma)?;
        let y = add_awgn(&img.image, sigma, noise_seed(spec.seed, &img.name, sigma))?;
        for &method in &spec.methods {
            let hash = config_hash(&HashedRun {
                config: &cfg,
                method,
                seed: spec.seed,
                rng: NOISE_RNG,
            });
            let start = Instant::now();
            let (out, pilot, iterations) = match method {
                Method::Noisy => (y.clone(), "-".to_string(), 0),
                Method::Pilot => (pilot_denoise(&y, sigma, &cfg.pilot)?, cfg.pilot.method.name().to_string(), 0),
                Method::Lichi => (
                    lichi_run(&y, sigma, &cfg, None, |_, _| {})?.output,
                    cfg.pilot.method.name().to_string(),
                    cfg.iterations,
                ),
            };
            let wall_s = start.elapsed().as_secs_f64();
            let psnr_db = psnr(&img.image, &out)?;
            log::info!("{} sigma={sigma} {method}: {psnr_db:.2} dB in {wall_s:.2} s", img.name);
            rows.push(BenchRow {
                dataset: spec.dataset.clone(),
                image: img.name.clone(),
                sigma,
                method,
                pilot,
                iterations,
                psnr_db,
                psnr_clamped_db: if spec.clamp {
                    Some(psnr(&img.image, &out.quantized())?)
                } else {
                    None
                },
                wall_s,
                config_hash: hash,
            });
        }
    }
    Ok(rows)
}

/// Evaluation point of the pilot comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveLevel {
    /// Denoised similarity matrices against their clean counterparts.
    Group,
    /// Pilot image after aggregation.
    Aggregated,
    /// Output of the full iteration started from that pilot.
    Lichi,
}

impl fmt::Display for CurveLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CurveLevel::Group => "group",
            CurveLevel::Aggregated => "aggregated",
            CurveLevel::Lichi => "lichi",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PilotCurveRow {
    pub sigma: f64,
    pub pilot: String,
    pub level: CurveLevel,
    pub psnr_db: f64,
}

pub fn fig4_pilots() -> [PilotMethod; 4] {
    [
        PilotMethod::Sure,
        PilotMethod::Noisier2Noise { alpha: crate::weights::DEFAULT_ALPHA },
        PilotMethod::Avg,
        PilotMethod::Noisy,
    ]
}

/// Mean PSNR over `images` of every pilot at the three evaluation levels.
pub fn pilot_curves(
    images: &[NamedImage],
    sigmas: &[f64],
    pilots: &[PilotMethod],
    overrides: &Overrides,
    seed: u64,
) -> Result<Vec<PilotCurveRow>> {
    if images.is_empty() {
        return Err(Error::Config("no images to evaluate".into()));
    }
    let mut rows = Vec::new();
    for &sigma in sigmas {
        for pilot in pilots {
            let o = Overrides {
                pilot: Some(*pilot),
                ..*overrides
            };
            let cfg = o.resolve(sigma)?;
            let per_image = exec::map_range(images.len(), |i| -> Result<[f64; 3]> {
                let img = &images[i];
                let y = add_awgn(&img.image, sigma, noise_seed(seed, &img.name, sigma))?;
                let group = group_level_psnr(&y, &img.image, sigma, &cfg.pilot)?;
                let p = pilot_denoise(&y, sigma, &cfg.pilot)?;
                let agg = psnr(&img.image, &p)?;
                let out = lichi_run(&y, sigma, &cfg, Some(p), |_, _| {})?.output;
                Ok([group, agg, psnr(&img.image, &out)?])
            });
            let mut sums = [0.0; 3];
            for v in per_image {
                let v = v?;
                for (s, x) in sums.iter_mut().zip(v) {
                    *s += x;
                }
            }
            for (level, s) in [CurveLevel::Group, CurveLevel::Aggregated, CurveLevel::Lichi]
                .into_iter()
                .zip(sums)
            {
                rows.push(PilotCurveRow {
                    sigma,
                    pilot: pilot.name().to_string(),
                    level,
                    psnr_db: s / images.len() as f64,
                });
            }
        }
    }
    Ok(rows)
}

pub fn write_pilot_curves(rows: &[PilotCurveRow], path: impl AsRef<Path>, hash: &str) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    let io = |e: csv::Error| write_error(path, e);
    w.write_record(["sigma", "pilot", "level", "psnr_db", "config_hash"])
        .map_err(io)?;
    for r in rows {
        w.write_record([
            format!("{}", r.sigma),
            r.pilot.clone(),
            r.level.to_string(),
            format!("{:.4}", r.psnr_db),
            hash.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|source| Error::Write {
        path: path.to_path_buf(),
        source,
    })
}

/// Mean PSNR after each step of repeated internal adaptation; step 0 is the pilot.
pub fn adaptation_curve(
    images: &[NamedImage],
    sigma: f64,
    steps: usize,
    overrides: &Overrides,
    seed: u64,
) -> Result<Vec<(usize, f64)>> {
    if images.is_empty() {
        return Err(Error::Config("no images to evaluate".into()));
    }
    let cfg = overrides.resolve(sigma)?;
    let per_image = exec::map_range(images.len(), |i| -> Result<Vec<f64>> {
        let img = &images[i];
        let y = add_awgn(&img.image, sigma, noise_seed(seed, &img.name, sigma))?;
        let run = repeat_internal_adaptation(&y, sigma, steps, &cfg)?;
        std::iter::once(&run.pilot)
            .chain(run.steps.iter())
            .map(|est| psnr(&img.image, est))
            .collect()
    });
    let mut sums = vec![0.0; steps + 1];
    for v in per_image {
        for (s, x) in sums.iter_mut().zip(v?) {
            *s += x;
        }
    }
    Ok(sums
        .into_iter()
        .enumerate()
        .map(|(j, s)| (j, s / images.len() as f64))
        .collect())
}

pub fn write_adaptation_curve(curve: &[(usize, f64)], path: impl AsRef<Path>, hash: &str) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    let io = |e: csv::Error| write_error(path, e);
    w.write_record(["step", "psnr_db", "config_hash"]).map_err(io)?;
    for (step, p) in curve {
        w.write_record([step.to_string(), format!("{p:.4}"), hash.to_string()])
            .map_err(io)?;
    }
    w.flush().map_err(|source| Error::Write {
        path: path.to_path_buf(),
        source,
    })
}
