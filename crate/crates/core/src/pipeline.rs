//! The five sub-commands behind the `bcdpet` tool, as library calls.
//!
//! All artifacts live under one output directory:
//!
//! ```text
//! manifest.toml                   seeds, files and checksums from `simulate`
//! train/truth.img  train/masks/   train/meas_000.meas ...
//! test/truth.img   test/masks/    test/meas_000.meas ...
//! model.bcdm  loss_curves.csv     from `train`
//! recon/<algorithm>/real_000/     iter_000.img ... final.img trace.csv
//! metrics_<algorithm>.csv         from `evaluate`
//! sweep_<algorithm>.csv           from `sweep-beta`
//! ```
//!
//! Nothing written depends on wall-clock time or thread scheduling, so a
//! rerun with the same configuration and seed reproduces every file byte for
//! byte.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Split};
use crate::denoiser::{load_model, save_model, CidModel};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::io::{self, checksum, csv_opt};
use crate::metrics::{self, RegionSet};
use crate::phantom::{make_phantom, simulate_measurement, Measurement};
use crate::projector::{Geometry, Projector, SystemModel};
use crate::recon::{reconstruct, Algorithm, ReconConfig, ReconTrace};
use crate::rng::{self, Purpose};
use crate::training::{train_bcdnet, TrainingSample};

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const MODEL_FILE: &str = "model.bcdm";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Path relative to the output directory, with `/` separators.
    pub path: String,
    /// CRC-64/XZ of the whole file, as 16 hex digits.
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioEntry {
    pub name: String,
    pub seed: u64,
    pub total_net_trues: f64,
    pub random_fraction: f64,
    pub truth: Artifact,
    pub masks: Vec<Artifact>,
    pub measurements: Vec<Artifact>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    pub geometry: Geometry,
    pub scenarios: Vec<ScenarioEntry>,
}

impl Manifest {
    pub fn scenario(&self, split: Split) -> Result<&ScenarioEntry> {
        self.scenarios
            .iter()
            .find(|s| s.name == split.name())
            .ok_or_else(|| Error::Config(format!("manifest has no '{}' scenario", split.name())))
    }
}

/// Truth, masks and measurements of one scenario, loaded from disk.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub truth: Image,
    pub regions: RegionSet,
    pub measurements: Vec<Measurement>,
}

fn artifact(out: &Path, file: &Path) -> Result<Artifact> {
    let bytes = fs::read(file).map_err(|e| Error::io(file, e))?;
    let rel = file.strip_prefix(out).unwrap_or(file);
    let path = rel
        .components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/");
    Ok(Artifact {
        path,
        checksum: format!("{:016x}", checksum(&bytes)),
    })
}

fn verify_artifact(out: &Path, a: &Artifact) -> Result<PathBuf> {
    let p = out.join(&a.path);
    let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
    let computed = checksum(&bytes);
    let stored = u64::from_str_radix(&a.checksum, 16).map_err(|_| Error::Format {
        path: p.clone(),
        reason: format!("manifest checksum '{}' is not hex", a.checksum),
    })?;
    if stored != computed {
        return Err(Error::Checksum { path: p, stored, computed });
    }
    Ok(p)
}

fn projector_for(cfg: &ExperimentConfig) -> Result<Projector> {
    Projector::new(cfg.geometry)
}

/// Writes truth, masks and every realization for both scenarios, then the
/// manifest. Returns the manifest.
pub fn cmd_simulate(cfg: &ExperimentConfig, out: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let a = projector_for(cfg)?;
    let mut scenarios = Vec::new();
    for split in [Split::Train, Split::Test] {
        let spec = cfg.scenario(split);
        let dir = out.join(split.name());
        let (phantom, regions) = make_phantom(&spec.phantom, &cfg.geometry)?;
        let sim = simulate_measurement(&phantom, &a, &spec)?;
        let truth_path = dir.join("truth.img");
        io::write_image(&sim.truth, &truth_path)?;
        let mask_files = io::write_regions(&regions, cfg.geometry.nx, cfg.geometry.ny, &dir.join("masks"))?;
        let mut measurements = Vec::new();
        for (m, meas) in sim.measurements.iter().enumerate() {
            let p = dir.join(format!("meas_{m:03}.meas"));
            io::write_measurement(meas, &p)?;
            measurements.push(artifact(out, &p)?);
        }
        log::info!(
            "{}: {} realizations, seed {}",
            split.name(),
            spec.n_realizations,
            spec.seed
        );
        scenarios.push(ScenarioEntry {
            name: split.name().to_string(),
            seed: spec.seed,
            total_net_trues: spec.total_net_trues,
            random_fraction: spec.random_fraction,
            truth: artifact(out, &truth_path)?,
            masks: mask_files.iter().map(|p| artifact(out, p)).collect::<Result<_>>()?,
            measurements,
        });
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        seed: cfg.seed,
        geometry: cfg.geometry,
        scenarios,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    io::write_text(&out.join(MANIFEST_FILE), &text)?;
    Ok(manifest)
}

/// Reads the manifest and checks every listed file against its checksum.
pub fn load_manifest(out: &Path) -> Result<Manifest> {
    let p = out.join(MANIFEST_FILE);
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let manifest: Manifest =
        toml::from_str(&text).map_err(|e| Error::Format { path: p.clone(), reason: e.to_string() })?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::Version {
            path: p,
            found: manifest.version,
            expected: MANIFEST_VERSION,
        });
    }
    for s in &manifest.scenarios {
        for a in std::iter::once(&s.truth).chain(&s.masks).chain(&s.measurements) {
            verify_artifact(out, a)?;
        }
    }
    Ok(manifest)
}

fn check_geometry(cfg: &ExperimentConfig, manifest: &Manifest) -> Result<()> {
    if cfg.geometry != manifest.geometry {
        return Err(Error::mismatch(
            format!("{:?} (config)", cfg.geometry),
            format!("{:?} (manifest)", manifest.geometry),
        ));
    }
    Ok(())
}

pub fn load_scenario(out: &Path, manifest: &Manifest, split: Split) -> Result<LoadedScenario> {
    let s = manifest.scenario(split)?;
    let truth = io::read_image(&out.join(&s.truth.path))?;
    let regions = io::read_regions(&out.join(split.name()).join("masks"))?;
    let measurements = s
        .measurements
        .iter()
        .map(|a| io::read_measurement(&out.join(&a.path)))
        .collect::<Result<Vec<_>>>()?;
    if measurements.is_empty() {
        return Err(Error::Config(format!("scenario '{}' has no measurements", s.name)));
    }
    Ok(LoadedScenario {
        truth,
        regions,
        measurements,
    })
}

/// Stage-wise training on the train scenario. Writes the model and a
/// `stage,seed,epoch,loss` CSV of the loss curves; returns the model path.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    let manifest = load_manifest(out)?;
    check_geometry(cfg, &manifest)?;
    let train = load_scenario(out, &manifest, Split::Train)?;
    let a = projector_for(cfg)?;
    let samples: Vec<TrainingSample> = train
        .measurements
        .into_iter()
        .map(|measurement| TrainingSample {
            measurement,
            truth: train.truth.clone(),
        })
        .collect();
    let mut den = cfg.denoiser.clone();
    den.train.seed = rng::derive_seed(cfg.seed, Purpose::FilterInit, den.train.seed);
    let recon = ReconConfig {
        iterations: den.stages,
        ..cfg.recon.clone()
    };
    let model = train_bcdnet(&samples, &a, &den, &recon, |_, _| {})?;

    let model_path = out.join(MODEL_FILE);
    save_model(&model, &model_path)?;
    let mut csv = String::from("stage,seed,epoch,loss\n");
    for (n, (curve, seed)) in model.metadata.loss_curves.iter().zip(&model.metadata.seeds).enumerate() {
        for (e, l) in curve.iter().enumerate() {
            writeln!(csv, "{},{seed},{e},{l}", n + 1).expect("write to String");
        }
    }
    io::write_text(&out.join("loss_curves.csv"), &csv)?;
    Ok(model_path)
}

/// Runs `f` over `items` on scoped threads, keeping input order.
fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(items.len().max(1));
    let chunk = items.len().div_ceil(workers).max(1);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(|| c.iter().map(&f).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker thread panicked"))
            .collect()
    })
}

/// Where one reconstruction's outputs go.
pub fn recon_dir(out: &Path, algorithm: Algorithm, name: &str) -> PathBuf {
    out.join("recon").join(algorithm.name()).join(name)
}

fn write_recon(dir: &Path, trace: &ReconTrace, truth: Option<(&Image, &RegionSet)>) -> Result<()> {
    for (n, x) in trace.snapshots.iter().enumerate() {
        io::write_image(x, &dir.join(format!("iter_{n:03}.img")))?;
    }
    let last = trace.last().ok_or_else(|| Error::Degenerate("empty trace".into()))?;
    io::write_image(last, &dir.join("final.img"))?;
    io::write_text(&dir.join("trace.csv"), &trace.to_csv(truth)?)
}

fn model_for(algorithm: Algorithm, out: &Path, model: Option<&Path>) -> Result<Option<CidModel>> {
    if algorithm != Algorithm::Bcdnet {
        return Ok(None);
    }
    let p = model.map(Path::to_path_buf).unwrap_or_else(|| out.join(MODEL_FILE));
    if !p.exists() {
        return Err(Error::Config(format!(
            "bcdnet needs a model; {} does not exist (run train first)",
            p.display()
        )));
    }
    load_model(&p).map(Some)
}

/// Reconstructs either the given measurement file or every test realization.
/// Returns the output directories, one per measurement.
pub fn cmd_reconstruct(
    cfg: &ExperimentConfig,
    out: &Path,
    algorithm: Algorithm,
    measurement: Option<&Path>,
    model: Option<&Path>,
) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let a = projector_for(cfg)?;
    let model = model_for(algorithm, out, model)?;
    let recon = ReconConfig {
        algorithm,
        ..cfg.recon.clone()
    };

    let (jobs, truth): (Vec<(String, Measurement)>, Option<(Image, RegionSet)>) = match measurement {
        Some(p) => {
            let name = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "measurement".into());
            (vec![(name, io::read_measurement(p)?)], None)
        }
        None => {
            let manifest = load_manifest(out)?;
            check_geometry(cfg, &manifest)?;
            let test = load_scenario(out, &manifest, Split::Test)?;
            let jobs = test
                .measurements
                .into_iter()
                .enumerate()
                .map(|(m, meas)| (format!("real_{m:03}"), meas))
                .collect();
            (jobs, Some((test.truth, test.regions)))
        }
    };
    for (name, m) in &jobs {
        m.check_model(&a).map_err(|e| Error::Config(format!("{name}: {e}")))?;
    }

    let results = par_map(&jobs, |(_, m)| reconstruct(m, &a, &recon, model.as_ref()));
    let mut dirs = Vec::new();
    for ((name, _), res) in jobs.iter().zip(results) {
        let (_, trace) = res?;
        let dir = recon_dir(out, algorithm, name);
        write_recon(&dir, &trace, truth.as_ref().map(|(t, r)| (t, r)))?;
        log::info!("{}: {} iterations -> {}", name, trace.len() - 1, dir.display());
        dirs.push(dir);
    }
    Ok(dirs)
}

/// Reconstructions of one algorithm: `sets[m][n]` is iteration `n` of
/// realization `m`.
pub fn evaluate_sets(
    scenario: &str,
    algorithm: &str,
    truth: &Image,
    regions: &RegionSet,
    sets: &[Vec<Image>],
) -> Result<String> {
    let mut csv = String::from("scenario,algorithm,realization,iteration,cr_cold,cr_hot,rmse,cnr,fov_bias,noise\n");
    let n_iter = sets.iter().map(Vec::len).min().unwrap_or(0);
    let want_noise = sets.len() >= 2;
    if want_noise && regions.background.is_empty() {
        log::warn!("no background mask: noise column omitted");
    }
    for n in 0..n_iter {
        let mut reports = Vec::with_capacity(sets.len());
        for (m, set) in sets.iter().enumerate() {
            let r = metrics::evaluate(&set[n], truth, regions)?;
            writeln!(
                csv,
                "{scenario},{algorithm},{m},{n},{},{},{},{},{},",
                csv_opt(r.cr_cold),
                csv_opt(r.cr_hot),
                r.rmse,
                csv_opt(r.cnr),
                r.fov_bias
            )
            .expect("write to String");
            reports.push(r);
        }
        if want_noise {
            let images: Vec<Image> = sets.iter().map(|s| s[n].clone()).collect();
            let noise = if regions.background.is_empty() {
                None
            } else {
                Some(metrics::noise_across_realizations(&images, truth, &regions.background)?)
            };
            let mean = |f: &dyn Fn(&metrics::MetricsReport) -> Option<f64>| -> Option<f64> {
                let v: Option<Vec<f64>> = reports.iter().map(f).collect();
                v.map(|v| v.iter().sum::<f64>() / v.len() as f64)
            };
            writeln!(
                csv,
                "{scenario},{algorithm},mean,{n},{},{},{},{},{},{}",
                csv_opt(mean(&|r| r.cr_cold)),
                csv_opt(mean(&|r| r.cr_hot)),
                csv_opt(mean(&|r| Some(r.rmse))),
                csv_opt(mean(&|r| r.cnr)),
                csv_opt(mean(&|r| Some(r.fov_bias))),
                csv_opt(noise)
            )
            .expect("write to String");
        }
    }
    Ok(csv)
}

fn sorted_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    v.sort();
    Ok(v)
}

fn iterates_in(dir: &Path) -> Result<Vec<Image>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("iter_") && n.ends_with(".img"))
        })
        .collect();
    files.sort();
    files.iter().map(|p| io::read_image(p)).collect()
}

/// Scores the test-scenario reconstructions of `algorithm` (all per-iteration
/// images of every realization) and writes `metrics_<algorithm>.csv`.
pub fn cmd_evaluate(cfg: &ExperimentConfig, out: &Path, algorithm: Algorithm) -> Result<PathBuf> {
    cfg.validate()?;
    let manifest = load_manifest(out)?;
    check_geometry(cfg, &manifest)?;
    let s = manifest.scenario(Split::Test)?;
    let truth = io::read_image(&out.join(&s.truth.path))?;
    let regions = io::read_regions(&out.join(Split::Test.name()).join("masks"))?;
    let base = out.join("recon").join(algorithm.name());
    if !base.is_dir() {
        return Err(Error::Config(format!(
            "no reconstructions in {} (run reconstruct first)",
            base.display()
        )));
    }
    let sets = sorted_dirs(&base)?
        .iter()
        .map(|d| iterates_in(d))
        .collect::<Result<Vec<_>>>()?;
    for set in &sets {
        for x in set {
            truth.same_shape(x)?;
        }
    }
    let csv = evaluate_sets(Split::Test.name(), algorithm.name(), &truth, &regions, &sets)?;
    let p = out.join(format!("metrics_{}.csv", algorithm.name()));
    io::write_text(&p, &csv)?;
    Ok(p)
}

/// Final RMSE/CNR/NLL per β on one test measurement (the first realization
/// unless `measurement` is given). Writes `sweep_<algorithm>.csv`.
pub fn cmd_sweep_beta(
    cfg: &ExperimentConfig,
    out: &Path,
    algorithm: Algorithm,
    measurement: Option<&Path>,
    model: Option<&Path>,
) -> Result<PathBuf> {
    cfg.validate()?;
    if algorithm == Algorithm::Em {
        return Err(Error::Config("em has no regularization parameter to sweep".into()));
    }
    let grid = cfg.sweep.grid();
    if grid.is_empty() {
        return Err(Error::Config("empty beta grid".into()));
    }
    let a = projector_for(cfg)?;
    let model = model_for(algorithm, out, model)?;
    let manifest = load_manifest(out)?;
    check_geometry(cfg, &manifest)?;
    let test = load_scenario(out, &manifest, Split::Test)?;
    let m = match measurement {
        Some(p) => io::read_measurement(p)?,
        None => test.measurements[0].clone(),
    };
    m.check_model(&a)?;

    let results = par_map(&grid, |&beta| {
        let mut rc = ReconConfig {
            algorithm,
            ..cfg.recon.clone()
        };
        match algorithm {
            Algorithm::TvPdhg => rc.tv.beta = beta,
            Algorithm::NlmAdmm => rc.nlm.beta = beta,
            Algorithm::Bcdnet => rc.beta_fixed = Some(beta),
            Algorithm::Em => unreachable!(),
        }
        reconstruct(&m, &a, &rc, model.as_ref())
    });
    let mut csv = String::from("beta,rmse,cnr,nll,objective\n");
    for (beta, res) in grid.iter().zip(results) {
        let (x, trace) = res?;
        let r = metrics::evaluate(&x, &test.truth, &test.regions)?;
        writeln!(
            csv,
            "{beta},{},{},{},{}",
            r.rmse,
            csv_opt(r.cnr),
            trace.nll.last().copied().unwrap_or(f64::NAN),
            trace.objective.last().copied().unwrap_or(f64::NAN)
        )
        .expect("write to String");
    }
    let p = out.join(format!("sweep_{}.csv", algorithm.name()));
    io::write_text(&p, &csv)?;
    Ok(p)
}

/// Reads every image of a reconstruction directory in iteration order.
pub fn load_iterates(dir: &Path) -> Result<Vec<Image>> {
    iterates_in(dir)
}

/// The system model a configuration describes.
pub fn system_model(cfg: &ExperimentConfig) -> Result<impl SystemModel> {
    projector_for(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn par_map_keeps_order() {
        let v: Vec<u32> = (0..37).collect();
        assert_eq!(par_map(&v, |x| x * 2), v.iter().map(|x| x * 2).collect::<Vec<_>>());
        assert!(par_map(&Vec::<u32>::new(), |x| *x).is_empty());
    }

    #[test]
    fn artifact_paths_are_relative() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a").join("b.txt");
        io::write_text(&p, "hi").unwrap();
        let a = artifact(dir.path(), &p).unwrap();
        assert_eq!(a.path, "a/b.txt");
        assert_eq!(verify_artifact(dir.path(), &a).unwrap(), p);
        io::write_text(&p, "ho").unwrap();
        assert!(matches!(verify_artifact(dir.path(), &a), Err(Error::Checksum { .. })));
    }

    #[test]
    fn evaluating_truth_against_itself() {
        let g = Geometry::square(16, 8);
        let (truth, regions) = make_phantom(&crate::phantom::PhantomSpec::preset_test(), &g).unwrap();
        let sets = vec![vec![truth.clone()], vec![truth.clone()]];
        let csv = evaluate_sets("test", "em", &truth, &regions, &sets).unwrap();
        let rows: Vec<&str> = csv.lines().collect();
        assert_eq!(rows.len(), 4);
        let f: Vec<&str> = rows[1].split(',').collect();
        assert_eq!(f[6], "0");
        assert_eq!(f[8], "0");
        // Identical realizations have zero spread.
        assert_eq!(rows[3].split(',').last().unwrap(), "0");
    }
}
