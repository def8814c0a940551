//! The `init`, `optimize`, `export`, `schedule` and `audit` commands.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use fenwarp_core::distill::{
    normalize_weight, AnnealSchedule, GaussianOracle, GuidanceOracle, Latent, LatentLayout, PointMassOracle,
};
use fenwarp_core::optim::{
    assemble_latent, finite_diff_audit, AuditLoss, MetricsRow, ObjectState, SceneState, Trainer,
};
use fenwarp_core::skinning::{deform_mesh, ControlLayer};

use crate::config::{OracleSpec, RunConfig};
use crate::error::{CliError, Result};
use crate::formats::{self, metrics, replay::ReplayOracle};

/// Loads every mesh of the scene and initializes its point sets and layers.
pub fn init_scene(cfg: &RunConfig) -> Result<SceneState> {
    if cfg.scene.is_empty() {
        return Err(CliError::Config("scene lists no objects".into()));
    }
    let init = cfg.init_config();
    let objects = cfg
        .scene
        .iter()
        .map(|o| {
            let path = cfg.resolve(&o.mesh);
            let mesh = formats::load_mesh(&path)?;
            ObjectState::from_mesh(mesh, &init).map_err(|e| CliError::Format {
                path,
                msg: e.to_string(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SceneState::new(objects)?)
}

pub fn cmd_init(config: &Path, out: &Path) -> Result<SceneState> {
    let cfg = RunConfig::load(config)?;
    let state = init_scene(&cfg)?;
    formats::save_checkpoint(out, &state)?;
    Ok(state)
}

fn check_layout(what: &str, found: &LatentLayout, expected: &LatentLayout) -> Result<()> {
    if found != expected {
        return Err(CliError::Config(format!(
            "{what} has {} frames and samples {:?}, scene has {} frames and samples {:?}",
            found.frames, found.samples, expected.frames, expected.samples
        )));
    }
    Ok(())
}

/// Builds the configured oracle and checks it against the scene before any
/// step runs.
pub fn build_oracle(cfg: &RunConfig, state: &SceneState) -> Result<Box<dyn GuidanceOracle>> {
    let layout = state.layout();
    let spec = cfg
        .oracle
        .as_ref()
        .ok_or_else(|| CliError::Config("no [oracle] section".into()))?;
    Ok(match spec {
        OracleSpec::Pointmass { target } => {
            let t = formats::load_tracks(&cfg.resolve(target))?;
            check_layout("oracle target", &t.layout, &layout)?;
            Box::new(PointMassOracle { target: t.z })
        }
        OracleSpec::Gaussian { mean, sigma } => {
            let t = formats::load_tracks(&cfg.resolve(mean))?;
            check_layout("oracle mean", &t.layout, &layout)?;
            Box::new(GaussianOracle::new(t.z, *sigma)?)
        }
        OracleSpec::Replay { path } => {
            let path = cfg.resolve(path);
            let o = ReplayOracle::new(formats::load_replay(&path)?);
            let t = &cfg.train;
            o.check_shape(t.iterations, t.batch, layout.len())
                .map_err(|m| CliError::Config(format!("{}: {m}", path.display())))?;
            Box::new(o)
        }
    })
}

/// Runs the configured schedule, streaming one metrics row per step.
pub fn optimize<W: Write>(
    state: SceneState,
    cfg: &RunConfig,
    oracle: &dyn GuidanceOracle,
    log: &mut W,
) -> Result<(SceneState, Vec<MetricsRow>)> {
    let mut trainer = Trainer::new(state, cfg.train_config()).map_err(|e| CliError::Config(e.to_string()))?;
    metrics::write_header(log).map_err(|e| CliError::io(Path::new("<metrics>"), e))?;
    let mut io_err = None;
    let rows = trainer
        .run(oracle, |_, d| {
            if io_err.is_none() {
                io_err = metrics::write_row(log, &d.metrics).err();
            }
        })?;
    if let Some(e) = io_err {
        return Err(CliError::io(Path::new("<metrics>"), e));
    }
    Ok((trainer.into_state(), rows))
}

pub struct OptimizePaths {
    pub checkpoint: PathBuf,
    pub out: PathBuf,
    pub metrics: PathBuf,
    pub tracks: PathBuf,
}

pub fn cmd_optimize(config: &Path, paths: &OptimizePaths) -> Result<SceneState> {
    let cfg = RunConfig::load(config)?;
    let state = formats::load_checkpoint(&paths.checkpoint)?;
    let oracle = build_oracle(&cfg, &state)?;
    if let Some(dir) = paths.metrics.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let file = File::create(&paths.metrics).map_err(|e| CliError::io(&paths.metrics, e))?;
    let mut log = BufWriter::new(file);
    let (state, _) = optimize(state, &cfg, oracle.as_ref(), &mut log)?;
    log.flush().map_err(|e| CliError::io(&paths.metrics, e))?;
    formats::save_checkpoint(&paths.out, &state)?;
    formats::save_tracks(&paths.tracks, &assemble_latent(&state)?)?;
    Ok(state)
}

pub fn frame_file(dir: &Path, object: usize, frame: usize) -> PathBuf {
    dir.join(format!("object{object}_frame{frame:03}.ply"))
}

/// Writes one PLY per object and frame in `from..=to` plus `tracks.ptrk`.
pub fn cmd_export(checkpoint: &Path, out_dir: &Path, from: Option<usize>, to: Option<usize>) -> Result<Vec<PathBuf>> {
    let state = formats::load_checkpoint(checkpoint)?;
    let (from, to) = (from.unwrap_or(1), to.unwrap_or(state.frames));
    if from == 0 || from > to || to > state.frames {
        return Err(CliError::Config(format!(
            "frame range {from}..={to} outside 1..={}",
            state.frames
        )));
    }
    let mut written = Vec::new();
    for (o, obj) in state.objects.iter().enumerate() {
        for t in from..=to {
            let mesh = deform_mesh(&obj.mesh, &obj.model, t)?;
            let path = frame_file(out_dir, o, t);
            formats::write_bytes(&path, &formats::mesh::encode_ply_mesh(&mesh))?;
            written.push(path);
        }
    }
    let path = out_dir.join("tracks.ptrk");
    formats::save_tracks(&path, &assemble_latent(&state)?)?;
    written.push(path);
    Ok(written)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleRow {
    pub iter: usize,
    pub tau: f64,
    pub lr_fenwick: f64,
    pub lr_rot: f64,
    pub cfg: f64,
    pub temporal_weight: f64,
    pub arap_weight: f64,
}

pub fn schedule(cfg: &RunConfig) -> Result<Vec<ScheduleRow>> {
    let t = cfg.train_config();
    let pdf = normalize_weight(t.noise_weight).map_err(|e| CliError::Config(e.to_string()))?;
    let s = AnnealSchedule::new(&pdf, t.iterations)?;
    Ok((1..=t.iterations)
        .map(|i| ScheduleRow {
            iter: i,
            tau: s.tau(i),
            lr_fenwick: t.lr_fenwick_at(i),
            lr_rot: t.lr_rot_at(i),
            cfg: t.cfg_at(i),
            temporal_weight: t.temporal_weight_at(i),
            arap_weight: t.arap_weight_at(i),
        })
        .collect())
}

pub fn write_schedule<W: Write>(w: &mut W, rows: &[ScheduleRow]) -> std::io::Result<()> {
    writeln!(w, "iter\ttau\tlr_fenwick\tlr_rot\tcfg\tw_temporal\tw_arap")?;
    for r in rows {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.iter, r.tau, r.lr_fenwick, r.lr_rot, r.cfg, r.temporal_weight, r.arap_weight
        )?;
    }
    Ok(())
}

/// One line of an audit report.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub value: f64,
    pub limit: f64,
    pub note: String,
}

impl Check {
    fn at_most(name: &'static str, value: f64, limit: f64) -> Check {
        Check {
            name,
            pass: value <= limit,
            value,
            limit,
            note: String::new(),
        }
    }

    fn failed(name: &'static str, limit: f64, note: String) -> Check {
        Check {
            name,
            pass: false,
            value: f64::NAN,
            limit,
            note,
        }
    }
}

pub const TEMPORAL_TOL: f64 = 1e-5;
pub const ARAP_TOL: f64 = 1e-4;
pub const RFSDS_TOL: f64 = 1e-4;
pub const AUDIT_TAU: f64 = 0.5;

fn layers(state: &SceneState) -> impl Iterator<Item = &ControlLayer> {
    state.objects.iter().flat_map(|o| [&o.model.coarse, &o.model.fine])
}

/// Invariant checks and gradient audits on a loaded scene.
pub fn audit(state: &SceneState, samples: usize, seed: u64) -> Vec<Check> {
    let mut out = Vec::new();
    let node1 = layers(state)
        .flat_map(|l| l.points.iter())
        .flat_map(|cp| cp.seq.node(1).to_array())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    out.push(Check::at_most("first_frame_identity", node1, 0.0));
    let finite = layers(state)
        .flat_map(|l| l.to_flat())
        .all(f64::is_finite);
    out.push(Check::at_most("finite_parameters", if finite { 0.0 } else { f64::INFINITY }, 0.0));
    let norm = layers(state)
        .flat_map(|l| l.points.iter())
        .map(|cp| (cp.cov_rot.raw().norm() - 1.0).abs())
        .fold(0.0f64, f64::max);
    out.push(Check::at_most("cov_rotation_unit", norm, 1e-6));
    let min_scale = layers(state)
        .flat_map(|l| l.points.iter())
        .flat_map(|cp| [cp.cov_scale.x, cp.cov_scale.y, cp.cov_scale.z])
        .fold(f64::INFINITY, f64::min);
    out.push(Check {
        name: "cov_scale_positive",
        pass: min_scale > 0.0,
        value: min_scale,
        limit: 0.0,
        note: String::new(),
    });

    let target = assemble_latent(state).map(|l| perturbed_target(&l));
    let oracle = target.map(|target| PointMassOracle { target });
    let losses: [(&'static str, f64, Option<AuditLoss>); 3] = [
        ("gradient_temporal", TEMPORAL_TOL, Some(AuditLoss::Temporal)),
        ("gradient_arap", ARAP_TOL, Some(AuditLoss::Arap)),
        (
            "gradient_rfsds",
            RFSDS_TOL,
            oracle.as_ref().ok().map(|o| AuditLoss::Rfsds {
                oracle: o,
                tau: AUDIT_TAU,
            }),
        ),
    ];
    for (name, tol, loss) in losses {
        let res = match loss {
            Some(l) => finite_diff_audit(state, l, samples, seed),
            None => Err(oracle.as_ref().err().cloned().expect("oracle error")),
        };
        out.push(match res {
            Ok(r) => Check::at_most(name, r.max_rel_err, tol),
            Err(e) => Check::failed(name, tol, e.to_string()),
        });
    }
    out
}

/// The current tracks shifted by a smooth, deterministic offset.
fn perturbed_target(l: &Latent) -> Vec<f64> {
    l.z.iter()
        .enumerate()
        .map(|(i, v)| v + 0.01 * (0.37 * i as f64).sin())
        .collect()
}

pub fn write_audit<W: Write>(w: &mut W, checks: &[Check]) -> std::io::Result<()> {
    writeln!(w, "check\tresult\tvalue\tlimit\tnote")?;
    for c in checks {
        writeln!(
            w,
            "{}\t{}\t{:e}\t{:e}\t{}",
            c.name,
            if c.pass { "pass" } else { "fail" },
            c.value,
            c.limit,
            c.note
        )?;
    }
    Ok(())
}
