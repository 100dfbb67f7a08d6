//! Pipeline stages behind the `roughflow` binary. Each stage reads the
//! artifacts of the one before it from a run directory, writes its own
//! artifacts plus a manifest stamped with the config hash, and is skipped
//! when that manifest already matches the config.
//!
//! Run directory layout:
//!
//! ```text
//! run.cfg                  canonical config
//! surface/  profile.csv mask.txt manifest.txt
//! sim/      snap_<t>.rfs ... manifest.txt
//! data/     dataset.csv collocation.csv manifest.txt
//! model/    model.rfp model.model history.csv manifest.txt
//! eval/     report.csv manifest.txt
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::autodiff::Activation;
use crate::datastore::config::{override_key, Viscosity};
use crate::datastore::{
    self, encode_collocation, encode_dataset, parse_collocation, parse_config, parse_dataset,
    resolve_entry, serialize, ConfigError, DatastoreError, Manifest, RunConfig,
};
use crate::grid::SolidMask;
use crate::lbm::{run_simulation, FieldSnapshot, LatticeSpec, LbmError, Schedule};
use crate::metrics::{self, DerivedFields, MetricsError, MetricsReport};
use crate::pinn::loss::pde_residuals;
use crate::pinn::train::history_csv;
use crate::pinn::{
    predict_fields, probe_points, sample_collocation, train, LabeledDataset, PinnError, PinnModel,
    Strategy, TildeBox,
};
use crate::surface::{channel_walls, rasterize_walls, roughness_stats, SurfaceError, WallProfile};

/// Residual probe size used by `evaluate`.
pub const PROBE_POINTS: usize = 4096;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Datastore(#[from] DatastoreError),
    #[error(transparent)]
    Surface(#[from] SurfaceError),
    #[error(transparent)]
    Lbm(#[from] LbmError),
    #[error(transparent)]
    Pinn(#[from] PinnError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{0}")]
    Input(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Surface,
    Simulate,
    Sample,
    Train,
    Evaluate,
}

impl Stage {
    pub const PIPELINE: [Stage; 5] = [
        Stage::Surface,
        Stage::Simulate,
        Stage::Sample,
        Stage::Train,
        Stage::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Surface => "surface",
            Stage::Simulate => "simulate",
            Stage::Sample => "sample",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
        }
    }

    pub fn dir(self) -> &'static str {
        match self {
            Stage::Surface => "surface",
            Stage::Simulate => "sim",
            Stage::Sample => "data",
            Stage::Train => "model",
            Stage::Evaluate => "eval",
        }
    }
}

pub const MANIFEST: &str = "manifest.txt";

pub fn manifest_path(run: &Path, stage: Stage) -> PathBuf {
    run.join(stage.dir()).join(MANIFEST)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageResult {
    pub stage: Stage,
    pub manifest: PathBuf,
    pub skipped: bool,
    pub summary: String,
    pub warnings: Vec<String>,
}

pub fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfig, CliError> {
    let mut cfg = parse_config(&datastore::read_text(path)?)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// Wall profiles and the rasterized mask of `cfg`.
pub fn geometry(cfg: &RunConfig) -> Result<(WallProfile, WallProfile, SolidMask), CliError> {
    let (top, bottom) = channel_walls(&cfg.surface, cfg.lattice.nx)?;
    let mask = rasterize_walls(
        &top,
        &bottom,
        cfg.lattice.nx,
        cfg.lattice.ny,
        cfg.lattice.mean_gap,
    )?;
    Ok((top, bottom, mask))
}

/// True when the stage manifest carries `hash` and every entry exists.
pub fn up_to_date(manifest: &Path, hash: u64) -> bool {
    match datastore::read_manifest(manifest) {
        Ok(m) => {
            m.config_hash == hash
                && m.entries
                    .iter()
                    .all(|e| resolve_entry(manifest, e).exists())
        }
        Err(_) => false,
    }
}

fn header(m: &Manifest, key: &str, path: &Path) -> Result<String, CliError> {
    m.header
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.clone())
        .ok_or_else(|| CliError::Input(format!("{}: missing `{key}` header", path.display())))
}

fn hash_warning(path: &Path, found: u64, expected: u64) -> Option<String> {
    (found != expected).then(|| {
        format!(
            "{}: produced by config {found:016x}, current config is {expected:016x}",
            path.display()
        )
    })
}

/// Reads an upstream manifest, requiring it to exist.
fn upstream(
    path: &Path,
    cfg_hash: u64,
    needed_by: Stage,
    warnings: &mut Vec<String>,
) -> Result<Manifest, CliError> {
    if !path.exists() {
        return Err(CliError::Input(format!(
            "{}: not found (run the previous stage before `{}`)",
            path.display(),
            needed_by.name()
        )));
    }
    let m = datastore::read_manifest(path)?;
    warnings.extend(hash_warning(path, m.config_hash, cfg_hash));
    Ok(m)
}

fn begin(
    run: &Path,
    stage: Stage,
    cfg: &RunConfig,
    force: bool,
) -> Result<Option<StageResult>, CliError> {
    let manifest = manifest_path(run, stage);
    if !force && up_to_date(&manifest, cfg.hash()) {
        return Ok(Some(StageResult {
            stage,
            manifest,
            skipped: true,
            summary: "up to date".into(),
            warnings: Vec::new(),
        }));
    }
    datastore::write_atomic(&run.join("run.cfg"), serialize(cfg).as_bytes())?;
    Ok(None)
}

pub fn mask_text(mask: &SolidMask) -> String {
    let mut s = String::with_capacity((mask.nx() + 1) * mask.ny());
    for j in (0..mask.ny()).rev() {
        for i in 0..mask.nx() {
            s.push(if mask.is_solid(i, j) { '#' } else { '.' });
        }
        s.push('\n');
    }
    s
}

pub fn run_surface(cfg: &RunConfig, run: &Path, force: bool) -> Result<StageResult, CliError> {
    if let Some(r) = begin(run, Stage::Surface, cfg, force)? {
        return Ok(r);
    }
    let (top, bottom, mask) = geometry(cfg)?;
    let dir = run.join(Stage::Surface.dir());
    let mut profile = String::from("i,bottom,top\n");
    for (i, (b, t)) in bottom.elevations().iter().zip(top.elevations()).enumerate() {
        let _ = writeln!(profile, "{i},{b:?},{t:?}");
    }
    datastore::write_atomic(&dir.join("profile.csv"), profile.as_bytes())?;
    datastore::write_atomic(&dir.join("mask.txt"), mask_text(&mask).as_bytes())?;
    let (sb, st) = (roughness_stats(&bottom), roughness_stats(&top));
    let manifest = manifest_path(run, Stage::Surface);
    datastore::write_manifest(
        &manifest,
        &Manifest {
            config_hash: cfg.hash(),
            header: vec![
                ("stage".into(), "surface".into()),
                ("bottom_h_avg".into(), format!("{:?}", sb.h_avg)),
                ("bottom_h_max".into(), format!("{:?}", sb.h_max)),
                ("top_h_avg".into(), format!("{:?}", st.h_avg)),
                ("top_h_max".into(), format!("{:?}", st.h_max)),
                ("fluid_nodes".into(), mask.fluid_count().to_string()),
            ],
            entries: vec!["profile.csv".into(), "mask.txt".into()],
        },
    )?;
    Ok(StageResult {
        stage: Stage::Surface,
        manifest,
        skipped: false,
        summary: format!(
            "{}x{} lattice, {} fluid nodes, h_avg = {:e} / {:e}",
            mask.nx(),
            mask.ny(),
            mask.fluid_count(),
            sb.h_avg,
            st.h_avg
        ),
        warnings: Vec::new(),
    })
}

pub fn snapshot_name(t: u64) -> String {
    format!("snap_{t:08}.rfs")
}

pub fn run_simulate(cfg: &RunConfig, run: &Path, force: bool) -> Result<StageResult, CliError> {
    if let Some(r) = begin(run, Stage::Simulate, cfg, force)? {
        return Ok(r);
    }
    let (_, _, mask) = geometry(cfg)?;
    let params = cfg.flow_params()?;
    let schedule = Schedule {
        total_steps: cfg.flow.steps,
        interval: cfg.flow.interval,
    };
    let dir = run.join(Stage::Simulate.dir());
    let hash = cfg.hash();
    let mut entries = Vec::new();
    for snap in run_simulation(LatticeSpec::channel(mask), params, schedule)? {
        let snap = snap?;
        let name = snapshot_name(snap.t);
        datastore::write_snapshot(&dir.join(&name), &snap, hash)?;
        entries.push(name);
    }
    let manifest = manifest_path(run, Stage::Simulate);
    datastore::write_manifest(
        &manifest,
        &Manifest {
            config_hash: hash,
            header: vec![
                ("stage".into(), "simulate".into()),
                ("tau".into(), format!("{:?}", params.tau)),
                ("reynolds".into(), format!("{:?}", cfg.reynolds())),
            ],
            entries: entries.clone(),
        },
    )?;
    Ok(StageResult {
        stage: Stage::Simulate,
        manifest,
        skipped: false,
        summary: format!(
            "{} snapshots to t = {}, tau = {}",
            entries.len(),
            cfg.flow.steps,
            params.tau
        ),
        warnings: Vec::new(),
    })
}

/// The training split of a run: the last `snapshots + 1` snapshots with the
/// middle one held out.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: Vec<FieldSnapshot>,
    pub holdout: FieldSnapshot,
    pub holdout_entry: String,
    pub window: (f64, f64),
}

pub fn split_snapshots(
    cfg: &RunConfig,
    manifest: &Manifest,
    manifest_path: &Path,
    warnings: &mut Vec<String>,
) -> Result<Split, CliError> {
    let need = cfg.data.snapshots + 1;
    if manifest.entries.len() < need {
        return Err(CliError::Input(format!(
            "{}: {} snapshots, need {need} ({} for training plus one held out)",
            manifest_path.display(),
            manifest.entries.len(),
            cfg.data.snapshots
        )));
    }
    let chosen = &manifest.entries[manifest.entries.len() - need..];
    let mid = need / 2;
    let mut train = Vec::with_capacity(cfg.data.snapshots);
    let mut holdout = None;
    for (k, e) in chosen.iter().enumerate() {
        let p = resolve_entry(manifest_path, e);
        let (s, h) = datastore::read_snapshot_expect(&p, cfg.lattice.nx, cfg.lattice.ny)?;
        warnings.extend(hash_warning(&p, h, manifest.config_hash));
        if k == mid {
            holdout = Some(s);
        } else {
            train.push(s);
        }
    }
    let holdout = holdout.expect("need >= 2");
    let window = (train[0].t as f64, train[train.len() - 1].t as f64);
    Ok(Split {
        train,
        holdout,
        holdout_entry: chosen[mid].clone(),
        window,
    })
}

pub fn run_sample(
    cfg: &RunConfig,
    run: &Path,
    force: bool,
    source: Option<&Path>,
) -> Result<StageResult, CliError> {
    if let Some(r) = begin(run, Stage::Sample, cfg, force)? {
        return Ok(r);
    }
    let hash = cfg.hash();
    let mut warnings = Vec::new();
    let sim_path = source.map_or_else(|| manifest_path(run, Stage::Simulate), Path::to_path_buf);
    let sim = upstream(&sim_path, hash, Stage::Sample, &mut warnings)?;
    let split = split_snapshots(cfg, &sim, &sim_path, &mut warnings)?;
    let (_, _, mask) = geometry(cfg)?;
    let scales = cfg.scales();
    let mut dataset =
        LabeledDataset::from_snapshots(&split.train, &mask, &scales, cfg.data.samples, cfg.seed)?;
    // Paths inside the run directory are stored relative to `data/` so that
    // identical configs give identical bytes wherever the run lives.
    let (sim_ref, holdout) = match source {
        None => (
            format!("../{}/{MANIFEST}", Stage::Simulate.dir()),
            format!("../{}/{}", Stage::Simulate.dir(), split.holdout_entry),
        ),
        Some(_) => {
            let abs = |p: PathBuf| std::path::absolute(&p).unwrap_or(p).display().to_string();
            (
                abs(sim_path.clone()),
                abs(resolve_entry(&sim_path, &split.holdout_entry)),
            )
        }
    };
    dataset.manifest = Some(sim_ref);
    let colloc = sample_collocation(
        &mask,
        &scales,
        split.window,
        Some(&split.train[0]),
        &cfg.sampling_config(),
    )?;
    let dir = run.join(Stage::Sample.dir());
    datastore::write_atomic(
        &dir.join("dataset.csv"),
        encode_dataset(&dataset).as_bytes(),
    )?;
    datastore::write_atomic(
        &dir.join("collocation.csv"),
        encode_collocation(&colloc).as_bytes(),
    )?;
    let manifest = manifest_path(run, Stage::Sample);
    datastore::write_manifest(
        &manifest,
        &Manifest {
            config_hash: hash,
            header: vec![
                ("stage".into(), "sample".into()),
                ("holdout".into(), holdout),
                ("holdout_t".into(), split.holdout.t.to_string()),
                (
                    "window".into(),
                    format!("{:?},{:?}", split.window.0, split.window.1),
                ),
            ],
            entries: vec!["dataset.csv".into(), "collocation.csv".into()],
        },
    )?;
    Ok(StageResult {
        stage: Stage::Sample,
        manifest,
        skipped: false,
        summary: format!(
            "{} labeled points from {} snapshots, {} collocation ({} in wall band), {} boundary; holdout t = {}",
            dataset.len(),
            split.train.len(),
            colloc.interior.len(),
            colloc.band_count(),
            colloc.boundary.len(),
            split.holdout.t
        ),
        warnings,
    })
}

fn window_of(m: &Manifest, path: &Path) -> Result<(f64, f64), CliError> {
    let w = header(m, "window", path)?;
    let bad = || CliError::Input(format!("{}: bad window `{w}`", path.display()));
    let (a, b) = w.split_once(',').ok_or_else(bad)?;
    Ok((a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?))
}

pub fn run_train(
    cfg: &RunConfig,
    run: &Path,
    force: bool,
    data: Option<&Path>,
) -> Result<StageResult, CliError> {
    if let Some(r) = begin(run, Stage::Train, cfg, force)? {
        return Ok(r);
    }
    let hash = cfg.hash();
    let mut warnings = Vec::new();
    let data_path = data.map_or_else(|| manifest_path(run, Stage::Sample), Path::to_path_buf);
    let dm = upstream(&data_path, hash, Stage::Train, &mut warnings)?;
    let window = window_of(&dm, &data_path)?;
    let find = |name: &str| {
        dm.entries
            .iter()
            .find(|e| e.ends_with(name))
            .map(|e| resolve_entry(&data_path, e))
            .ok_or_else(|| CliError::Input(format!("{}: no {name} entry", data_path.display())))
    };
    let dataset = parse_dataset(&datastore::read_text(&find("dataset.csv")?)?)?;
    let colloc = parse_collocation(&datastore::read_text(&find("collocation.csv")?)?)?;
    let scales = cfg.scales();
    let domain = TildeBox::lattice(cfg.lattice.nx, cfg.lattice.ny, window.0, window.1, &scales);
    let mut model = PinnModel::new(
        cfg.architecture(),
        cfg.model_options(),
        scales,
        domain,
        dataset.output_stats(),
    )?;
    let report = train(&mut model, &dataset, &colloc, &cfg.train_config())?;
    let dir = run.join(Stage::Train.dir());
    let model_path = dir.join("model.rfp");
    datastore::write_model(&model_path, &model, hash)?;
    datastore::write_atomic(
        &dir.join("history.csv"),
        history_csv(&report.history).as_bytes(),
    )?;
    let l = &report.final_loss;
    let mut header = vec![
        ("stage".into(), "train".into()),
        ("window".into(), format!("{:?},{:?}", window.0, window.1)),
        ("final_loss".into(), format!("{:e}", l.total)),
        ("final_data".into(), format!("{:e}", l.data)),
        ("final_mom".into(), format!("{:e}", l.mom)),
        ("final_cont".into(), format!("{:e}", l.cont)),
        ("final_bc".into(), format!("{:e}", l.bc)),
        ("lbfgs_fallbacks".into(), report.fallbacks().to_string()),
    ];
    if let Some(o) = &report.lbfgs {
        header.push(("lbfgs_iterations".into(), o.iterations.to_string()));
        header.push(("lbfgs_stop".into(), format!("{:?}", o.stop)));
    }
    let manifest = manifest_path(run, Stage::Train);
    datastore::write_manifest(
        &manifest,
        &Manifest {
            config_hash: hash,
            header,
            entries: vec![
                "model.rfp".into(),
                "model.model".into(),
                "history.csv".into(),
            ],
        },
    )?;
    Ok(StageResult {
        stage: Stage::Train,
        manifest,
        skipped: false,
        summary: format!(
            "{} iterations, final loss {:e}, {} L-BFGS fallbacks",
            report.history.len(),
            l.total,
            report.fallbacks()
        ),
        warnings,
    })
}

/// Mean |residual| of `(continuity, x-momentum, y-momentum)` at `points`.
pub fn mean_residuals(model: &PinnModel, points: &[[f64; 3]]) -> Result<[f64; 3], CliError> {
    let r = pde_residuals(model, points)?;
    let n = r.len().max(1) as f64;
    let mut acc = [0.0; 3];
    for row in &r {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v.abs();
        }
    }
    Ok(acc.map(|a| a / n))
}

/// Evaluation of a trained model against its held-out snapshot.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: MetricsReport,
    /// Mean |R| over a fresh uniform probe: continuity, x- and y-momentum.
    pub residuals: [f64; 3],
    /// Same, restricted to the wall band.
    pub band_residuals: [f64; 3],
    /// Turns a tilde continuity residual into lattice units (1/step).
    pub to_lattice: f64,
    pub prediction: FieldSnapshot,
}

impl Evaluation {
    pub fn rows(&self) -> Vec<(String, String, String)> {
        let mut rows = self.report.rows();
        let names = ["mean_abs_cont", "mean_abs_mom_x", "mean_abs_mom_y"];
        for (prefix, r) in [("", &self.residuals), ("band_", &self.band_residuals)] {
            for (n, v) in names.iter().zip(r.iter()) {
                rows.push(("pde".into(), format!("{prefix}{n}"), format!("{v:e}")));
            }
            rows.push((
                "pde".into(),
                format!("{prefix}mean_abs"),
                format!("{:e}", r.iter().sum::<f64>() / 3.0),
            ));
            rows.push((
                "pde".into(),
                format!("{prefix}mean_abs_cont_lattice"),
                format!("{:e}", r[0] * self.to_lattice),
            ));
        }
        rows
    }
}

pub fn evaluate_model(
    cfg: &RunConfig,
    model: &PinnModel,
    mask: &SolidMask,
    reference: &FieldSnapshot,
    window: (f64, f64),
) -> Result<Evaluation, CliError> {
    let prediction = predict_fields(model, mask, reference.t)?;
    let derived = DerivedFields {
        omega: Some(metrics::model_vorticity(model, mask, reference.t)?),
        continuity: Some(metrics::model_continuity(model, mask, reference.t)?),
    };
    let report = MetricsReport::compare(&prediction, reference, derived)?;
    let scales = cfg.scales();
    let probe = probe_points(mask, &scales, window, PROBE_POINTS, cfg.seed, None)?;
    let band = cfg.sampling.band_width * scales.length;
    let band_probe = probe_points(
        mask,
        &scales,
        window,
        PROBE_POINTS,
        cfg.seed ^ 1,
        Some(band),
    )?;
    Ok(Evaluation {
        report,
        residuals: mean_residuals(model, &probe)?,
        band_residuals: mean_residuals(model, &band_probe)?,
        to_lattice: scales.gradient_to_lattice(),
        prediction,
    })
}

fn rows_csv(rows: &[(String, String, String)]) -> String {
    let mut s = String::from("field,metric,value\n");
    for (f, m, v) in rows {
        let _ = writeln!(s, "{f},{m},{v}");
    }
    s
}

pub fn run_evaluate(
    cfg: &RunConfig,
    run: &Path,
    force: bool,
    report_out: Option<&Path>,
) -> Result<StageResult, CliError> {
    if let Some(r) = begin(run, Stage::Evaluate, cfg, force)? {
        return Ok(r);
    }
    let hash = cfg.hash();
    let mut warnings = Vec::new();
    let data_path = manifest_path(run, Stage::Sample);
    let dm = upstream(&data_path, hash, Stage::Evaluate, &mut warnings)?;
    let model_manifest = manifest_path(run, Stage::Train);
    let mm = upstream(&model_manifest, hash, Stage::Evaluate, &mut warnings)?;
    let (model, _, w) = datastore::read_model(&resolve_entry(&model_manifest, "model.rfp"))?;
    warnings.extend(w);
    let holdout = resolve_entry(&data_path, &header(&dm, "holdout", &data_path)?);
    let (reference, h) = datastore::read_snapshot_expect(&holdout, cfg.lattice.nx, cfg.lattice.ny)?;
    warnings.extend(hash_warning(&holdout, h, hash));
    let (_, _, mask) = geometry(cfg)?;
    let eval = evaluate_model(cfg, &model, &mask, &reference, window_of(&dm, &data_path)?)?;
    let mut rows = eval.rows();
    for key in ["final_loss", "lbfgs_fallbacks"] {
        if let Ok(v) = header(&mm, key, &model_manifest) {
            rows.push(("training".into(), key.into(), v));
        }
    }
    let csv = rows_csv(&rows);
    let dir = run.join(Stage::Evaluate.dir());
    datastore::write_atomic(&dir.join("report.csv"), csv.as_bytes())?;
    if let Some(p) = report_out {
        datastore::write_atomic(p, csv.as_bytes())?;
    }
    let manifest = manifest_path(run, Stage::Evaluate);
    datastore::write_manifest(
        &manifest,
        &Manifest {
            config_hash: hash,
            header: vec![
                ("stage".into(), "evaluate".into()),
                ("holdout_t".into(), reference.t.to_string()),
            ],
            entries: vec!["report.csv".into()],
        },
    )?;
    let r = &eval.report;
    Ok(StageResult {
        stage: Stage::Evaluate,
        manifest,
        skipped: false,
        summary: format!(
            "t = {}: relL2(u) = {:e}, MAE(u) = {:e}, mean |R_cont| = {:e}",
            reference.t,
            r.u.rel_l2.unwrap_or(f64::NAN),
            r.u.mae.unwrap_or(f64::NAN),
            eval.residuals[0]
        ),
        warnings,
    })
}

/// Compares two snapshot files directly; vorticity of both comes from
/// finite differences.
pub fn compare_snapshot_files(pred: &Path, reference: &Path) -> Result<String, CliError> {
    let (p, _) = datastore::read_snapshot(pred)?;
    let (r, _) = datastore::read_snapshot(reference)?;
    Ok(MetricsReport::compare(&p, &r, DerivedFields::default())?.to_csv())
}

pub fn run_stage(
    stage: Stage,
    cfg: &RunConfig,
    run: &Path,
    force: bool,
) -> Result<StageResult, CliError> {
    match stage {
        Stage::Surface => run_surface(cfg, run, force),
        Stage::Simulate => run_simulate(cfg, run, force),
        Stage::Sample => run_sample(cfg, run, force, None),
        Stage::Train => run_train(cfg, run, force, None),
        Stage::Evaluate => run_evaluate(cfg, run, force, None),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Re,
    Amplitude,
    CollocationCount,
    Activation,
    LearningRate,
    Strategy,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 6] = [
        SweepAxis::Re,
        SweepAxis::Amplitude,
        SweepAxis::CollocationCount,
        SweepAxis::Activation,
        SweepAxis::LearningRate,
        SweepAxis::Strategy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Re => "Re",
            SweepAxis::Amplitude => "amplitude",
            SweepAxis::CollocationCount => "collocation_count",
            SweepAxis::Activation => "activation",
            SweepAxis::LearningRate => "learning_rate",
            SweepAxis::Strategy => "strategy",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }

    fn key(self) -> &'static str {
        match self {
            SweepAxis::Re => "flow.Re",
            SweepAxis::Amplitude => "surface.amplitude",
            SweepAxis::CollocationCount => "sampling.n_points",
            SweepAxis::Activation => "network.activation",
            SweepAxis::LearningRate => "training.learning_rate",
            SweepAxis::Strategy => "sampling.strategy",
        }
    }

    /// `base` with this axis set to `value`, validated like any config.
    pub fn apply(self, base: &RunConfig, value: &str) -> Result<RunConfig, CliError> {
        let mut text = serialize(base);
        if self == SweepAxis::Re {
            text = text
                .lines()
                .filter(|l| !l.trim_start().starts_with("flow.nu"))
                .map(|l| format!("{l}\n"))
                .collect();
        }
        let cfg = parse_config(&override_key(&text, self.key(), value))?;
        if self == SweepAxis::Activation
            && Activation::parse(value).is_some_and(|a| !a.twice_differentiable())
        {
            return Err(CliError::Input(format!(
                "activation `{value}` has no second derivative for the momentum residual"
            )));
        }
        if self == SweepAxis::Strategy && Strategy::parse(value).is_none() {
            return Err(CliError::Input(format!("unknown strategy `{value}`")));
        }
        debug_assert!(self != SweepAxis::Re || matches!(cfg.flow.viscosity, Viscosity::Re(_)));
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<String>,
    /// Stop after `simulate` and report only the converged flow.
    pub lbm_only: bool,
    pub parallel: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepLeg {
    pub value: String,
    pub dir: PathBuf,
    /// `(field, metric, value)` rows, or the stage and error of a failed leg.
    pub outcome: Result<Vec<(String, String, String)>, (Stage, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub axis: SweepAxis,
    pub legs: Vec<SweepLeg>,
    /// Least-squares `(slope, intercept)` of MAE_ω against amplitude.
    pub fit: Option<(f64, f64)>,
}

pub const SWEEP_HEADER: &str = "axis,axis_value,field,metric,value";

fn csv_cell(s: &str) -> String {
    s.replace([',', '\n', '\r'], ";")
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{SWEEP_HEADER}\n");
        let axis = self.axis.name();
        for leg in &self.legs {
            match &leg.outcome {
                Ok(rows) => {
                    for (f, m, v) in rows {
                        let _ = writeln!(s, "{axis},{},{f},{m},{v}", leg.value);
                    }
                }
                Err((stage, e)) => {
                    let _ = writeln!(
                        s,
                        "{axis},{},error,{},{}",
                        leg.value,
                        stage.name(),
                        csv_cell(e)
                    );
                }
            }
        }
        s
    }

    pub fn fit_csv(&self) -> Option<String> {
        self.fit
            .map(|(m, b)| format!("quantity,value\nslope,{m:e}\nintercept,{b:e}\n"))
    }

    /// Numeric value of one report metric for each successful leg.
    pub fn column(&self, field: &str, metric: &str) -> Vec<(String, f64)> {
        self.legs
            .iter()
            .filter_map(|leg| {
                let rows = leg.outcome.as_ref().ok()?;
                let (_, _, v) = rows.iter().find(|(f, m, _)| f == field && m == metric)?;
                Some((leg.value.clone(), v.parse().ok()?))
            })
            .collect()
    }
}

/// Ordinary least squares `y = slope·x + intercept`.
pub fn least_squares(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

fn leg_dir(out: &Path, k: usize, value: &str) -> PathBuf {
    let clean: String = value
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect();
    out.join(format!("leg{k:02}_{clean}"))
}

fn run_leg(
    cfg: &RunConfig,
    dir: &Path,
    force: bool,
    lbm_only: bool,
) -> Result<Vec<(String, String, String)>, (Stage, String)> {
    let stages: &[Stage] = if lbm_only {
        &[Stage::Surface, Stage::Simulate]
    } else {
        &Stage::PIPELINE
    };
    for &stage in stages {
        run_stage(stage, cfg, dir, force).map_err(|e| (stage, e.to_string()))?;
    }
    if lbm_only {
        let sim = manifest_path(dir, Stage::Simulate);
        let read = || -> Result<Vec<(String, String, String)>, CliError> {
            let m = datastore::read_manifest(&sim)?;
            let last = m
                .entries
                .last()
                .ok_or_else(|| CliError::Input("no snapshots".into()))?;
            let (snap, _) = datastore::read_snapshot(&resolve_entry(&sim, last))?;
            let omega = metrics::vorticity(&snap);
            Ok(vec![
                (
                    "omega".into(),
                    "max_abs_ref".into(),
                    format!("{:e}", omega.max_abs()),
                ),
                (
                    "omega".into(),
                    "max_abs_ref_interior".into(),
                    format!("{:e}", omega.max_abs_interior(metrics::OPEN_EDGE_MARGIN)),
                ),
                ("omega".into(), "t".into(), snap.t.to_string()),
            ])
        };
        return read().map_err(|e| (Stage::Simulate, e.to_string()));
    }
    let report = manifest_path(dir, Stage::Evaluate);
    let text = datastore::read_text(&resolve_entry(&report, "report.csv"))
        .map_err(|e| (Stage::Evaluate, e.to_string()))?;
    Ok(text
        .lines()
        .skip(1)
        .filter_map(|l| {
            let mut it = l.splitn(3, ',');
            Some((
                it.next()?.to_string(),
                it.next()?.to_string(),
                it.next()?.to_string(),
            ))
        })
        .collect())
}

/// Runs one pipeline per value under `out/legNN_<value>`. Values are all
/// validated before any leg starts; a leg that fails later is recorded in
/// the report and the sweep carries on.
pub fn run_sweep(
    base: &RunConfig,
    spec: &SweepSpec,
    out: &Path,
    force: bool,
) -> Result<SweepReport, CliError> {
    if spec.values.is_empty() {
        return Err(CliError::Input("sweep needs at least one value".into()));
    }
    let mut legs = Vec::with_capacity(spec.values.len());
    for (k, v) in spec.values.iter().enumerate() {
        if spec.values[..k].contains(v) {
            return Err(CliError::Input(format!("sweep value `{v}` appears twice")));
        }
        let cfg = spec.axis.apply(base, v)?;
        legs.push((v.clone(), leg_dir(out, k, v), cfg));
    }
    let mut dirs: Vec<&PathBuf> = legs.iter().map(|l| &l.1).collect();
    dirs.sort();
    dirs.dedup();
    if dirs.len() != legs.len() {
        return Err(CliError::Input(
            "sweep legs must write to distinct directories".into(),
        ));
    }
    let run = |(value, dir, cfg): &(String, PathBuf, RunConfig)| SweepLeg {
        value: value.clone(),
        dir: dir.clone(),
        outcome: run_leg(cfg, dir, force, spec.lbm_only),
    };
    let legs: Vec<SweepLeg> = if spec.parallel {
        legs.par_iter().map(run).collect()
    } else {
        legs.iter().map(run).collect()
    };
    let mut report = SweepReport {
        axis: spec.axis,
        legs,
        fit: None,
    };
    if spec.axis == SweepAxis::Amplitude && !spec.lbm_only {
        let pts: Vec<(f64, f64)> = report
            .column("omega", "mae")
            .into_iter()
            .filter_map(|(h, m)| Some((h.parse().ok()?, m)))
            .collect();
        report.fit = least_squares(&pts);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn least_squares_recovers_a_line() {
        let pts: Vec<(f64, f64)> = [5.0, 10.0, 15.0, 20.0]
            .iter()
            .map(|&h| (h, 1.2e-3 + 1.1e-4 * h))
            .collect();
        let (m, b) = least_squares(&pts).unwrap();
        assert!((m - 1.1e-4).abs() < 1e-15);
        assert!((b - 1.2e-3).abs() < 1e-15);
        assert_eq!(least_squares(&pts[..1]), None);
        assert_eq!(least_squares(&[(1.0, 2.0), (1.0, 3.0)]), None);
    }

    #[test]
    fn axis_names_round_trip() {
        for a in SweepAxis::ALL {
            assert_eq!(SweepAxis::parse(a.name()), Some(a));
        }
        assert_eq!(SweepAxis::parse("tau"), None);
    }

    #[test]
    fn axis_application_validates_values() {
        let base = RunConfig::default();
        let c = SweepAxis::Re.apply(&base, "20").unwrap();
        assert_eq!(c.reynolds(), 20.0);
        let nu_base = SweepAxis::Re.apply(&base, "10").unwrap();
        assert!(SweepAxis::Re.apply(&nu_base, "-1").is_err());
        assert_eq!(
            SweepAxis::Amplitude
                .apply(&base, "15")
                .unwrap()
                .surface
                .amplitude,
            15.0
        );
        assert_eq!(
            SweepAxis::CollocationCount
                .apply(&base, "1024")
                .unwrap()
                .sampling
                .n_points,
            1024
        );
        assert!(SweepAxis::Activation.apply(&base, "relu").is_err());
        assert_eq!(
            SweepAxis::Activation
                .apply(&base, "gelu")
                .unwrap()
                .network
                .activation,
            Activation::Gelu
        );
        assert!(SweepAxis::Strategy.apply(&base, "clustered").is_err());
        assert!(SweepAxis::LearningRate.apply(&base, "abc").is_err());
    }

    #[test]
    fn failed_legs_are_reported_inline() {
        let r = SweepReport {
            axis: SweepAxis::Amplitude,
            legs: vec![
                SweepLeg {
                    value: "5".into(),
                    dir: "a".into(),
                    outcome: Ok(vec![("omega".into(), "mae".into(), "1e-3".into())]),
                },
                SweepLeg {
                    value: "20".into(),
                    dir: "b".into(),
                    outcome: Err((Stage::Surface, "pinch-off, column 3".into())),
                },
            ],
            fit: None,
        };
        assert_eq!(
            r.to_csv(),
            format!("{SWEEP_HEADER}\namplitude,5,omega,mae,1e-3\namplitude,20,error,surface,pinch-off; column 3\n")
        );
        assert_eq!(r.column("omega", "mae"), vec![("5".to_string(), 1e-3)]);
    }
}
