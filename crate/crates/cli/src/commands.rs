use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use mcu_core::baselines::{fcls_solve, make_guidance, sivm_extract, default_delta};
use mcu_core::hsi::{AbundanceMatrix, EndmemberMatrix, Guidance, HsiCube};
use mcu_core::io;
use mcu_core::metrics::{score, Scores};
use mcu_core::nets::{NbaParams, NetShape};
use mcu_core::red::{nbared_run, write_outer_trace, OuterRecord};
use mcu_core::reference::{admm_ae, admm_ee, ConvDictionary1D, ConvDictionary2D};
use mcu_core::rng::{substream, Stream};
use mcu_core::synth::{generate, realized_snr_db};
use mcu_core::train::{write_trace, EpochRecord, Trainer};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Mode {
    Nba,
    Nbared,
    AdmmRef,
    Baseline,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Nba => "nba",
            Mode::Nbared => "nbared",
            Mode::AdmmRef => "admm-ref",
            Mode::Baseline => "baseline",
        }
    }
}

/// Observation plus optional ground truth.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub y: HsiCube<f64>,
    pub truth: Option<(EndmemberMatrix<f64>, AbundanceMatrix<f64>)>,
    pub snr_db: f64,
}

/// Written next to the synthetic data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub config_hash: String,
    pub bands: usize,
    pub height: usize,
    pub width: usize,
    pub endmembers: usize,
    pub snr_target_db: f64,
    pub snr_realized_db: f64,
}

pub const CUBE_FILE: &str = "y.hcub";
pub const CLEAN_FILE: &str = "y_clean.hcub";
pub const ENDMEMBERS_FILE: &str = "endmembers.hmat";
pub const ABUNDANCES_FILE: &str = "abundances.hmat";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const CONFIG_FILE: &str = "config.toml";
pub const REPORT_FILE: &str = "report.csv";

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn synthesize(cfg: &ExperimentConfig) -> Result<(mcu_core::synth::SynthData, f64), CliError> {
    let library = match &cfg.data.library {
        Some(p) => Some(io::load_library(p)?),
        None => None,
    };
    let sc = cfg.synth_config(library)?;
    let data = generate(&sc)?;
    Ok((data, sc.snr_db))
}

/// Generates a synthetic scene and writes it to `out`.
pub fn cmd_synth(cfg: &ExperimentConfig, out: &Path) -> Result<Manifest, CliError> {
    let (data, target) = synthesize(cfg)?;
    create_dir(out)?;
    io::save_cube(&out.join(CUBE_FILE), &data.y)?;
    io::save_cube(&out.join(CLEAN_FILE), &data.y_clean)?;
    io::save_matrix(&out.join(ENDMEMBERS_FILE), data.endmembers.matrix())?;
    io::save_matrix(&out.join(ABUNDANCES_FILE), data.abundances.matrix())?;
    let manifest = Manifest {
        seed: cfg.seed,
        config_hash: cfg.hash(),
        bands: data.y.bands(),
        height: data.y.height(),
        width: data.y.width(),
        endmembers: data.endmembers.count(),
        snr_target_db: target,
        snr_realized_db: data.realized_snr_db,
    };
    write_text(&out.join(MANIFEST_FILE), &toml::to_string(&manifest).expect("serializable"))?;
    write_text(&out.join(CONFIG_FILE), &cfg.to_toml())?;
    log::info!("wrote {}×{}×{} cube to {}", manifest.bands, manifest.height, manifest.width, out.display());
    Ok(manifest)
}

/// Loads a data directory written by `synth`. Ground truth is optional.
pub fn load_dataset(dir: &Path) -> Result<Dataset, CliError> {
    let y: HsiCube<f64> = io::load_cube(&dir.join(CUBE_FILE))?;
    let e_path = dir.join(ENDMEMBERS_FILE);
    let a_path = dir.join(ABUNDANCES_FILE);
    let truth = if e_path.exists() && a_path.exists() {
        let e = EndmemberMatrix::new(io::load_matrix(&e_path)?);
        let a = AbundanceMatrix::new(io::load_matrix(&a_path)?, y.height(), y.width())?;
        Some((e, a))
    } else {
        None
    };
    let clean = dir.join(CLEAN_FILE);
    let snr_db = if clean.exists() {
        let c = io::load_cube(&clean)?;
        realized_snr_db(&c, &y)
    } else {
        f64::NAN
    };
    Ok(Dataset { y, truth, snr_db })
}

/// The dataset a run works on: an explicit data directory, the configured
/// cube file, or a freshly generated synthetic scene.
pub fn resolve_dataset(cfg: &ExperimentConfig, data_dir: Option<&Path>) -> Result<Dataset, CliError> {
    if let Some(dir) = data_dir {
        return load_dataset(dir);
    }
    if let Some(cube) = &cfg.data.cube {
        let y = io::load_cube(cube)?;
        return Ok(Dataset { y, truth: None, snr_db: f64::NAN });
    }
    let (data, target) = synthesize(cfg)?;
    Ok(Dataset { y: data.y, truth: Some((data.endmembers, data.abundances)), snr_db: target })
}

/// Everything a run produces.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub mode: Mode,
    pub endmembers: EndmemberMatrix<f64>,
    pub abundances: AbundanceMatrix<f64>,
    pub guidance: Guidance<f64>,
    pub trace: Vec<EpochRecord>,
    pub outer: Vec<OuterRecord>,
    pub params: Option<NbaParams<f64>>,
    pub param_count: usize,
    pub scores: Option<Scores>,
    pub guidance_scores: Option<Scores>,
    pub objectives: Option<(f64, f64)>,
}

pub fn net_shape(cfg: &ExperimentConfig, y: &HsiCube<f64>, r: usize) -> NetShape {
    let n = &cfg.network;
    NetShape {
        bands: y.bands(),
        height: y.height(),
        width: y.width(),
        endmembers: r,
        layers_e: n.layers_e,
        layers_a: n.layers_a,
        kernels_e: n.kernels_e,
        kernels_a: n.kernels_a,
        ksize_e: n.ksize_e,
        ksize_a: n.ksize_a,
    }
}

/// Runs one pipeline on a dataset.
pub fn execute(cfg: &ExperimentConfig, mode: Mode, data: &Dataset) -> Result<RunResult, CliError> {
    let r = data.truth.as_ref().map_or(cfg.data.endmembers, |(e, _)| e.count());
    let y = &data.y;
    let guidance = make_guidance(y, r)?;
    let score_of = |e: &EndmemberMatrix<f64>, a: &AbundanceMatrix<f64>| -> Result<Option<Scores>, CliError> {
        match &data.truth {
            Some((te, ta)) => Ok(Some(score(te, ta, e, a)?)),
            None => Ok(None),
        }
    };
    let guidance_scores = score_of(&guidance.endmembers, &guidance.abundances)?;
    if let Some(s) = &guidance_scores {
        log::info!("guidance RMSE {:.4} SAD {:.3}", s.rmse, s.sad_mean);
    }

    let mut result = RunResult {
        mode,
        endmembers: guidance.endmembers.clone(),
        abundances: guidance.abundances.clone(),
        guidance: guidance.clone(),
        trace: Vec::new(),
        outer: Vec::new(),
        params: None,
        param_count: 0,
        scores: guidance_scores.clone(),
        guidance_scores,
        objectives: None,
    };
    match mode {
        Mode::Baseline => {
            let sivm = sivm_extract(y, r)?;
            let a = fcls_solve(y, &sivm.endmembers, default_delta(&sivm.endmembers))?;
            result.scores = score_of(&sivm.endmembers, &a)?;
            result.endmembers = sivm.endmembers;
            result.abundances = a;
        }
        Mode::AdmmRef => {
            let admm = cfg.admm_config();
            let ee = admm_ee(y, &guidance.abundances, &ConvDictionary1D::delta(cfg.reference.ksize_e)?, &admm)?;
            let ae = admm_ae(y, &guidance.endmembers, &ConvDictionary2D::delta(cfg.reference.ksize_a)?, &admm)?;
            result.scores = score_of(&ee.endmembers, &ae.abundances)?;
            result.objectives = Some((ee.objective, ae.objective));
            result.endmembers = ee.endmembers;
            result.abundances = ae.abundances;
        }
        Mode::Nba | Mode::Nbared => {
            let shape = net_shape(cfg, y, r);
            let params = NbaParams::<f64>::init(&shape, &mut substream(cfg.seed, Stream::Init))?;
            result.param_count = params.param_count();
            log::info!("{} learnable parameters", result.param_count);
            let mut trainer = Trainer::new(y.clone(), guidance, params, cfg.train_config())?;
            if let Some((e, a)) = &data.truth {
                trainer = trainer.with_truth(e.clone(), a.clone());
            }
            let outputs = if mode == Mode::Nba {
                result.trace = trainer.train(cfg.training.epochs, None)?;
                trainer.outputs()?
            } else {
                let run = nbared_run(&mut trainer, &cfg.red_config(), &cfg.red_config().nlm)?;
                result.trace = run.epochs;
                result.outer = run.outer;
                run.outputs
            };
            result.scores = score_of(&outputs.endmembers, &outputs.abundances)?;
            result.endmembers = outputs.endmembers;
            result.abundances = outputs.abundances;
            result.params = Some(trainer.params().clone());
        }
    }
    if let Some(s) = &result.scores {
        log::info!("{} RMSE {:.4} AAD {:.3} SAD {:.3}", mode.name(), s.rmse, s.aad, s.sad_mean);
    }
    Ok(result)
}

/// One metric-report row.
pub fn report_row(method: &str, seed: u64, snr: f64, s: &Scores) -> Vec<String> {
    let mut row = vec![method.to_string(), seed.to_string(), fmt_f(snr), fmt_f(s.rmse), fmt_f(s.aad)];
    row.extend(s.sad_per_endmember.iter().map(|v| fmt_f(*v)));
    row.push(fmt_f(s.sad_mean));
    row
}

pub fn report_header(r: usize) -> Vec<String> {
    let mut h: Vec<String> = ["method", "seed", "SNR", "RMSE", "AAD"].iter().map(|s| s.to_string()).collect();
    h.extend((1..=r).map(|i| format!("SAD_{i}")));
    h.push("SAD_mean".into());
    h
}

fn fmt_f(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v}")
    }
}

pub fn write_report(path: &Path, rows: &[Vec<String>], r: usize) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Io(e.to_string()))?;
    w.write_record(report_header(r)).map_err(|e| CliError::Io(e.to_string()))?;
    for row in rows {
        w.write_record(row).map_err(|e| CliError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))
}

fn write_with<F>(path: &Path, f: F) -> Result<(), CliError>
where
    F: FnOnce(&mut std::io::BufWriter<fs::File>) -> mcu_core::Result<()>,
{
    let file = fs::File::create(path).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
    let mut w = std::io::BufWriter::new(file);
    f(&mut w)?;
    w.flush().map_err(|e| CliError::Io(e.to_string()))
}

/// Writes the outputs of [`execute`] into `out`.
pub fn write_run(cfg: &ExperimentConfig, data: &Dataset, res: &RunResult, out: &Path) -> Result<(), CliError> {
    create_dir(out)?;
    io::save_matrix(&out.join("endmembers.hmat"), res.endmembers.matrix())?;
    io::save_matrix(&out.join("abundances.hmat"), res.abundances.matrix())?;
    let yh = mcu_core::hsi::lmm_forward(&res.endmembers, &res.abundances)?;
    io::save_cube(&out.join("reconstruction.hcub"), &yh)?;
    io::save_guidance(&out.join("guidance.hckp"), &res.guidance)?;
    write_text(&out.join(CONFIG_FILE), &cfg.to_toml())?;
    if let Some(p) = &res.params {
        io::save_params(&out.join("params.hckp"), p)?;
        write_text(&out.join("param_count.txt"), &format!("{}\n", res.param_count))?;
    }
    if !res.trace.is_empty() {
        write_with(&out.join("trace.csv"), |w| write_trace(w, &res.trace))?;
    }
    if !res.outer.is_empty() {
        write_with(&out.join("outer_trace.csv"), |w| write_outer_trace(w, &res.outer))?;
    }
    if let Some((ee, ae)) = res.objectives {
        write_text(&out.join("objectives.csv"), &format!("problem,objective\nendmember,{ee}\nabundance,{ae}\n"))?;
    }
    let r = res.endmembers.count();
    let mut rows = Vec::new();
    if let Some(s) = &res.scores {
        rows.push(report_row(res.mode.name(), cfg.seed, data.snr_db, s));
    }
    if let (Some(s), false) = (&res.guidance_scores, res.mode == Mode::Baseline) {
        rows.push(report_row("guidance", cfg.seed, data.snr_db, s));
    }
    if !rows.is_empty() {
        write_report(&out.join(REPORT_FILE), &rows, r)?;
    }
    Ok(())
}

pub fn cmd_run(cfg: &ExperimentConfig, mode: Mode, data_dir: Option<&Path>, out: &Path) -> Result<RunResult, CliError> {
    let data = resolve_dataset(cfg, data_dir)?;
    let res = execute(cfg, mode, &data)?;
    write_run(cfg, &data, &res, out)?;
    Ok(res)
}

/// Scores an estimate directory against a ground-truth directory.
pub fn cmd_eval(est: &Path, gt: &Path, out: Option<&Path>) -> Result<Scores, CliError> {
    let truth = load_dataset(gt)?;
    let (te, ta) = truth
        .truth
        .ok_or_else(|| CliError::Config(format!("{} holds no ground truth", gt.display())))?;
    let e = EndmemberMatrix::new(io::load_matrix(&est.join(ENDMEMBERS_FILE))?);
    let a = AbundanceMatrix::new(io::load_matrix(&est.join(ABUNDANCES_FILE))?, ta.height(), ta.width())?;
    let s = score(&te, &ta, &e, &a)?;
    let path: PathBuf = out.map_or_else(|| est.join(REPORT_FILE), Path::to_path_buf);
    let method = est.file_name().map_or_else(|| "estimate".to_string(), |n| n.to_string_lossy().into_owned());
    let seed = read_seed(est).unwrap_or(0);
    write_report(&path, &[report_row(&method, seed, truth.snr_db, &s)], te.count())?;
    Ok(s)
}

fn read_seed(dir: &Path) -> Option<u64> {
    let text = fs::read_to_string(dir.join(CONFIG_FILE)).ok()?;
    ExperimentConfig::parse(&text).ok().map(|c| c.seed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Axis {
    Snr,
    Alpha,
}

/// One sweep cell.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub label: String,
    pub seed: u64,
    pub outcome: Result<(Scores, Option<Scores>), String>,
}

/// Configs of every sweep cell, in output order.
pub fn sweep_cells(
    base: &ExperimentConfig,
    axis: Axis,
    values: &[f64],
    seeds: &[u64],
) -> Result<Vec<(String, ExperimentConfig)>, CliError> {
    if values.is_empty() || seeds.is_empty() {
        return Err(CliError::Config("sweep needs at least one value and one seed".into()));
    }
    let points: Vec<(String, Box<dyn Fn(&mut ExperimentConfig)>)> = match axis {
        Axis::Snr => values
            .iter()
            .map(|&v| (fmt_f(v), Box::new(move |c: &mut ExperimentConfig| c.data.snr_db = v) as Box<dyn Fn(&mut _)>))
            .collect(),
        Axis::Alpha => values
            .iter()
            .flat_map(|&a1| values.iter().map(move |&a2| (a1, a2)))
            .map(|(a1, a2)| {
                let f = move |c: &mut ExperimentConfig| {
                    c.loss.alpha1 = a1;
                    c.loss.alpha2 = a2;
                };
                (format!("{a1}:{a2}"), Box::new(f) as Box<dyn Fn(&mut _)>)
            })
            .collect(),
    };
    let mut cells = Vec::new();
    for (label, apply) in &points {
        for &seed in seeds {
            let mut c = base.clone();
            apply(&mut c);
            c.seed = seed;
            c.validate()?;
            cells.push((label.clone(), c));
        }
    }
    Ok(cells)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64;
    (m, var.sqrt())
}

/// Runs every cell (failures are recorded, not fatal) and writes
/// `sweep_runs.csv` and `sweep_summary.csv`.
pub fn cmd_sweep(
    base: &ExperimentConfig,
    axis: Axis,
    values: &[f64],
    seeds: &[u64],
    mode: Mode,
    data_dir: Option<&Path>,
    out: &Path,
) -> Result<Vec<Cell>, CliError> {
    let cells = sweep_cells(base, axis, values, seeds)?;
    create_dir(out)?;
    let mut done = Vec::with_capacity(cells.len());
    for (label, cfg) in cells {
        log::info!("sweep cell {label} seed {}", cfg.seed);
        let data_dir = if axis == Axis::Snr { None } else { data_dir };
        let outcome = resolve_dataset(&cfg, data_dir)
            .and_then(|d| execute(&cfg, mode, &d))
            .map_err(|e| e.to_string())
            .and_then(|r| r.scores.map(|s| (s, r.guidance_scores)).ok_or_else(|| "no ground truth".to_string()));
        if let Err(e) = &outcome {
            log::warn!("cell {label} seed {} failed: {e}", cfg.seed);
        }
        done.push(Cell { label, seed: cfg.seed, outcome });
    }

    let io_err = |e: csv::Error| CliError::Io(e.to_string());
    let axis_name = match axis {
        Axis::Snr => "snr_db",
        Axis::Alpha => "alpha1:alpha2",
    };
    let mut w = csv::Writer::from_path(out.join("sweep_runs.csv")).map_err(io_err)?;
    w.write_record([axis_name, "seed", "status", "RMSE", "AAD", "SAD_mean", "guidance_RMSE"]).map_err(io_err)?;
    for c in &done {
        let rec: Vec<String> = match &c.outcome {
            Ok((s, g)) => vec![
                c.label.clone(),
                c.seed.to_string(),
                "ok".into(),
                fmt_f(s.rmse),
                fmt_f(s.aad),
                fmt_f(s.sad_mean),
                g.as_ref().map_or(String::new(), |g| fmt_f(g.rmse)),
            ],
            Err(e) => vec![c.label.clone(), c.seed.to_string(), format!("error: {e}"), String::new(), String::new(), String::new(), String::new()],
        };
        w.write_record(rec).map_err(io_err)?;
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))?;

    let mut w = csv::Writer::from_path(out.join("sweep_summary.csv")).map_err(io_err)?;
    w.write_record([axis_name, "runs", "failed", "RMSE_mean", "RMSE_std", "AAD_mean", "AAD_std", "SAD_mean", "SAD_std"])
        .map_err(io_err)?;
    let mut labels: Vec<&str> = Vec::new();
    for c in &done {
        if !labels.contains(&c.label.as_str()) {
            labels.push(&c.label);
        }
    }
    for label in labels {
        let group: Vec<&Cell> = done.iter().filter(|c| c.label == label).collect();
        let ok: Vec<&Scores> = group.iter().filter_map(|c| c.outcome.as_ref().ok().map(|(s, _)| s)).collect();
        let (rm, rs) = mean_std(&ok.iter().map(|s| s.rmse).collect::<Vec<_>>());
        let (am, as_) = mean_std(&ok.iter().map(|s| s.aad).collect::<Vec<_>>());
        let (sm, ss) = mean_std(&ok.iter().map(|s| s.sad_mean).collect::<Vec<_>>());
        w.write_record([
            label.to_string(),
            ok.len().to_string(),
            (group.len() - ok.len()).to_string(),
            fmt_f(rm),
            fmt_f(rs),
            fmt_f(am),
            fmt_f(as_),
            fmt_f(sm),
            fmt_f(ss),
        ])
        .map_err(io_err)?;
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))?;
    Ok(done)
}
