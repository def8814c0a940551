//! Training: schedules, Adam, scene state and the distillation loop.

use alloc::string::String;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::distill::{
    draw_noise, normalize_weight, rfsds_residual, AnnealSchedule, GuidanceOracle, Latent, LatentLayout, NoiseWeight, OracleCall,
};
use crate::error::{check_range, Error, Result};
use crate::geom::{
    interior_centers, sdf_from_mesh, shell_centers, shell_padding, voxel_size_search, TriMesh, Vec3,
};
use crate::regularizers::{arap_loss_fixed, arap_rotations, temporal_flow_loss, NeighborGraph, Tracks, DEFAULT_ARAP_NEIGHBORS};
use crate::skinning::{
    block_len, group_of, init_layer, BoundPoints, BoundWeights, ControlLayer, DeformModel, LayerGrad, LayerSel, ModelPoses, ParamGroup,
    ParamId, DEFAULT_COARSE_COUNT, DEFAULT_FINE_COUNT, DEFAULT_NEIGHBORS,
};

pub const DEFAULT_FRAMES: usize = 41;
pub const DEFAULT_SHELL_TARGET: usize = 7500;
pub const DEFAULT_TAU_FACTOR: f64 = 0.5;

/// A decaying hyperparameter, `start` at the first step and `end` at the last.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Range {
    pub start: f64,
    pub end: f64,
}

impl Range {
    pub const fn new(start: f64, end: f64) -> Range {
        Range { start, end }
    }

    /// Geometric interpolation; the endpoints are returned exactly.
    pub fn log_lerp(&self, frac: f64) -> f64 {
        if frac <= 0.0 || self.start == self.end {
            self.start
        } else if frac >= 1.0 {
            self.end
        } else {
            libm::exp(libm::log(self.start) + frac * (libm::log(self.end) - libm::log(self.start)))
        }
    }

    pub fn lerp(&self, frac: f64) -> f64 {
        if frac <= 0.0 {
            self.start
        } else if frac >= 1.0 {
            self.end
        } else {
            self.start + frac * (self.end - self.start)
        }
    }
}

/// Log-linear learning rate at step `i` of `total` (fraction `i / total`).
pub fn lr_at(range: Range, i: usize, total: usize) -> f64 {
    if total == 0 {
        return range.start;
    }
    range.log_lerp(i as f64 / total as f64)
}

/// Position of 1-based step `i` in a run of `total`: 0 at the first step, 1 at the last.
pub fn step_fraction(i: usize, total: usize) -> f64 {
    if total <= 1 {
        0.0
    } else {
        (i.saturating_sub(1)) as f64 / (total - 1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments with a step count per parameter, so resetting one entry
/// restarts its bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub steps: Vec<u32>,
}

impl AdamState {
    pub fn new(n: usize) -> AdamState {
        AdamState {
            m: alloc::vec![0.0; n],
            v: alloc::vec![0.0; n],
            steps: alloc::vec![0; n],
        }
    }

    pub fn update(&mut self, idx: usize, grad: f64, lr: f64, p: &AdamParams, param: &mut f64) {
        let t = self.steps[idx] + 1;
        self.steps[idx] = t;
        let m = p.beta1 * self.m[idx] + (1.0 - p.beta1) * grad;
        let v = p.beta2 * self.v[idx] + (1.0 - p.beta2) * grad * grad;
        self.m[idx] = m;
        self.v[idx] = v;
        let mh = m / (1.0 - libm::pow(p.beta1, t as f64));
        let vh = v / (1.0 - libm::pow(p.beta2, t as f64));
        *param -= lr * mh / (libm::sqrt(vh) + p.eps);
    }

    pub fn reset(&mut self, idx: usize) {
        self.m[idx] = 0.0;
        self.v[idx] = 0.0;
        self.steps[idx] = 0;
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch: usize,
    /// Fenwick nodes and covariance scales.
    pub lr_fenwick: Range,
    /// Covariance rotations.
    pub lr_rot: Range,
    pub cfg: Range,
    pub temporal_weight: Range,
    pub arap_weight: Range,
    /// Fraction of the run after which the fine layer trains.
    pub fine_start: f64,
    pub split_iter: usize,
    pub clamp_frame: usize,
    pub seed: u64,
    pub noise_weight: NoiseWeight,
    pub cond: String,
    pub adam: AdamParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 2000,
            batch: 4,
            lr_fenwick: Range::new(0.006, 0.00006),
            lr_rot: Range::new(0.003, 0.00003),
            cfg: Range::new(25.0, 12.0),
            temporal_weight: Range::new(9.6, 1.6),
            arap_weight: Range::new(3000.0, 300.0),
            fine_start: 0.5,
            split_iter: 100,
            clamp_frame: 30,
            seed: 0,
            noise_weight: NoiseWeight::default(),
            cond: String::new(),
            adam: AdamParams::default(),
        }
    }
}

fn positive_range(what: &'static str, r: &Range) -> Result<()> {
    if r.start > 0.0 && r.end > 0.0 && r.start.is_finite() && r.end.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(alloc::format!("{what} range must be positive")))
    }
}

/// Both endpoints positive, or both zero to switch the term off.
fn weight_range(what: &'static str, r: &Range) -> Result<()> {
    if r.start == 0.0 && r.end == 0.0 {
        Ok(())
    } else {
        positive_range(what, r)
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::InvalidArgument("batch must be at least 1".into()));
        }
        positive_range("lr_fenwick", &self.lr_fenwick)?;
        positive_range("lr_rot", &self.lr_rot)?;
        if !(self.cfg.start >= 0.0 && self.cfg.end >= 0.0 && self.cfg.start.is_finite() && self.cfg.end.is_finite()) {
            return Err(Error::InvalidArgument("cfg range must be non-negative".into()));
        }
        weight_range("temporal weight", &self.temporal_weight)?;
        weight_range("arap weight", &self.arap_weight)?;
        if !(0.0..=1.0).contains(&self.fine_start) {
            return Err(Error::InvalidArgument("fine_start must lie in [0, 1]".into()));
        }
        if let NoiseWeight::LogitNormal { loc, scale } = self.noise_weight {
            if !(loc.is_finite() && scale > 0.0 && scale.is_finite()) {
                return Err(Error::InvalidArgument("logit-normal scale must be positive".into()));
            }
        }
        if self.clamp_frame == 0 {
            return Err(Error::InvalidArgument("clamp frame must be at least 1".into()));
        }
        let p = &self.adam;
        if !(p.beta1 >= 0.0 && p.beta1 < 1.0 && p.beta2 >= 0.0 && p.beta2 < 1.0 && p.eps > 0.0) {
            return Err(Error::InvalidArgument("invalid Adam parameters".into()));
        }
        Ok(())
    }

    fn frac(&self, i: usize) -> f64 {
        step_fraction(i, self.iterations)
    }

    pub fn lr_fenwick_at(&self, i: usize) -> f64 {
        self.lr_fenwick.log_lerp(self.frac(i))
    }

    pub fn lr_rot_at(&self, i: usize) -> f64 {
        self.lr_rot.log_lerp(self.frac(i))
    }

    pub fn cfg_at(&self, i: usize) -> f64 {
        self.cfg.lerp(self.frac(i))
    }

    pub fn temporal_weight_at(&self, i: usize) -> f64 {
        self.temporal_weight.log_lerp(self.frac(i))
    }

    pub fn arap_weight_at(&self, i: usize) -> f64 {
        self.arap_weight.log_lerp(self.frac(i))
    }

    /// Last step with the fine layer frozen.
    pub fn fine_start_iter(&self) -> usize {
        libm::floor(self.fine_start * self.iterations as f64) as usize
    }

    pub fn fine_active(&self, i: usize) -> bool {
        i > self.fine_start_iter()
    }
}

/// Settings for turning a mesh into an [`ObjectState`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitConfig {
    pub frames: usize,
    pub shell_target: usize,
    pub tau_factor: f64,
    pub coarse: usize,
    pub fine: usize,
    pub k: usize,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            frames: DEFAULT_FRAMES,
            shell_target: DEFAULT_SHELL_TARGET,
            tau_factor: DEFAULT_TAU_FACTOR,
            coarse: DEFAULT_COARSE_COUNT,
            fine: DEFAULT_FINE_COUNT,
            k: DEFAULT_NEIGHBORS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectState {
    pub mesh: TriMesh,
    /// Near-surface samples: the observable and the ARAP domain.
    pub shell: Vec<Vec3>,
    pub interior: Vec<Vec3>,
    pub model: DeformModel,
}

impl ObjectState {
    /// Voxelizes the mesh, extracts shell and interior centers and places
    /// both control layers.
    pub fn from_mesh(mesh: TriMesh, cfg: &InitConfig) -> Result<ObjectState> {
        mesh.validate()?;
        let s = voxel_size_search(&mesh, cfg.shell_target, cfg.tau_factor)?;
        let grid = sdf_from_mesh(&mesh, s, shell_padding(s, cfg.tau_factor))?;
        let shell = shell_centers(&grid, cfg.tau_factor * s)?.points;
        let interior = interior_centers(&grid)?.points;
        let coarse = init_layer(&interior, cfg.coarse, cfg.k, cfg.frames)?;
        let fine = init_layer(&interior, cfg.fine, cfg.k, cfg.frames)?;
        Ok(ObjectState {
            mesh,
            shell,
            interior,
            model: DeformModel::new(coarse, fine)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneState {
    pub frames: usize,
    pub objects: Vec<ObjectState>,
}

impl SceneState {
    pub fn new(objects: Vec<ObjectState>) -> Result<SceneState> {
        let frames = objects
            .first()
            .map(|o| o.model.frame_count())
            .ok_or_else(|| Error::InvalidArgument("a scene needs at least one object".into()))?;
        if objects.iter().any(|o| o.model.frame_count() != frames) {
            return Err(Error::InvalidArgument("objects disagree on frame count".into()));
        }
        Ok(SceneState { frames, objects })
    }

    pub fn from_meshes(meshes: Vec<TriMesh>, cfg: &InitConfig) -> Result<SceneState> {
        let objects = meshes
            .into_iter()
            .map(|m| ObjectState::from_mesh(m, cfg))
            .collect::<Result<Vec<_>>>()?;
        SceneState::new(objects)
    }

    pub fn layout(&self) -> LatentLayout {
        LatentLayout {
            frames: self.frames,
            samples: self.objects.iter().map(|o| o.shell.len()).collect(),
        }
    }

    /// Node 1 of every sequence is still zero.
    pub fn first_frame_frozen(&self) -> bool {
        self.objects.iter().all(|o| {
            [&o.model.coarse, &o.model.fine]
                .iter()
                .all(|l| l.points.iter().all(|cp| cp.seq.first_frame_frozen()))
        })
    }
}

/// Positions of bound points over all frames.
pub fn tracks_from(model: &DeformModel, pts: &BoundPoints, w: &BoundWeights, poses: &ModelPoses) -> Tracks {
    let n = pts.len();
    let frames = model.frame_count();
    let mut pos = Vec::with_capacity(n * frames);
    for t in 1..=frames {
        for i in 0..n {
            pos.push(model.position(pts, w, poses, i, t));
        }
    }
    Tracks { samples: n, frames, pos }
}

pub fn object_tracks(model: &DeformModel, pts: &BoundPoints) -> Result<Tracks> {
    let w = model.weights(pts);
    let poses = model.poses()?;
    Ok(tracks_from(model, pts, &w, &poses))
}

fn push_tracks(z: &mut Vec<f64>, tracks: &Tracks) {
    for p in &tracks.pos {
        z.extend_from_slice(&[p.x, p.y, p.z]);
    }
}

/// The point-track observable of the whole scene.
pub fn assemble_latent(state: &SceneState) -> Result<Latent> {
    let layout = state.layout();
    let mut z = Vec::with_capacity(layout.len());
    for o in &state.objects {
        let pts = o.model.bind(&o.shell);
        push_tracks(&mut z, &object_tracks(&o.model, &pts)?);
    }
    Ok(Latent { layout, z })
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub iter: usize,
    pub tau: f64,
    pub lr_fenwick: f64,
    pub lr_rot: f64,
    pub cfg: f64,
    /// Root mean square of the batch-averaged residual.
    pub rfsds_norm: f64,
    /// Mean squared per-sample flow.
    pub temporal: f64,
    /// Mean squared ARAP residual; NaN when the term is switched off.
    pub arap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    pub metrics: MetricsRow,
    pub grad_norm: f64,
    pub fine_active: bool,
    pub weight_fallbacks: usize,
    pub degenerate_fits: usize,
}

struct ObjectCache {
    pts: BoundPoints,
    graph: NeighborGraph,
    adam: [AdamState; 2],
}

/// Normalizers turning summed losses into means.
struct LossScale {
    points: f64,
    flows: f64,
    pairs: f64,
}

impl LossScale {
    fn of(state: &SceneState, graphs: &[&NeighborGraph]) -> LossScale {
        let samples: usize = state.objects.iter().map(|o| o.shell.len()).sum();
        let pairs: usize = state
            .objects
            .iter()
            .zip(graphs)
            .map(|(o, g)| o.shell.len() * g.k)
            .sum();
        LossScale {
            points: (samples * state.frames).max(1) as f64,
            flows: (samples * state.frames.saturating_sub(1)).max(1) as f64,
            pairs: (pairs * state.frames).max(1) as f64,
        }
    }
}

/// Stepwise trainer holding the scene, per-object caches and optimizer state.
pub struct Trainer {
    config: TrainConfig,
    state: SceneState,
    caches: Vec<ObjectCache>,
    schedule: AnnealSchedule,
    latent: Vec<f64>,
}

impl Trainer {
    pub fn new(state: SceneState, config: TrainConfig) -> Result<Trainer> {
        config.validate()?;
        let pdf = normalize_weight(config.noise_weight)?;
        let schedule = AnnealSchedule::new(&pdf, config.iterations)?;
        let caches = state
            .objects
            .iter()
            .map(|o| {
                let n = |l: &ControlLayer| l.len() * block_len(l.frame_count());
                Ok(ObjectCache {
                    pts: o.model.bind(&o.shell),
                    graph: NeighborGraph::build(&o.shell, DEFAULT_ARAP_NEIGHBORS)?,
                    adam: [AdamState::new(n(&o.model.coarse)), AdamState::new(n(&o.model.fine))],
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Trainer {
            config,
            state,
            caches,
            schedule,
            latent: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn state(&self) -> &SceneState {
        &self.state
    }

    pub fn into_state(self) -> SceneState {
        self.state
    }

    pub fn schedule(&self) -> &AnnealSchedule {
        &self.schedule
    }

    /// Observable evaluated by the most recent step, before its update.
    pub fn latent(&self) -> &[f64] {
        &self.latent
    }

    pub fn adam(&self, object: usize, layer: LayerSel) -> &AdamState {
        &self.caches[object].adam[layer as usize]
    }

    /// One distillation step at 1-based iteration `i`.
    pub fn step<O: GuidanceOracle + ?Sized>(&mut self, oracle: &O, i: usize) -> Result<StepDiagnostics> {
        let cfg = &self.config;
        check_range("iteration", i, 1, cfg.iterations)?;
        let fine_active = cfg.fine_active(i);
        for o in &mut self.state.objects {
            o.model.fine_enabled = fine_active;
        }

        let mut evals = Vec::with_capacity(self.state.objects.len());
        let mut z = Vec::with_capacity(self.state.layout().len());
        let mut weight_fallbacks = 0;
        for (o, c) in self.state.objects.iter().zip(&self.caches) {
            let w = o.model.weights(&c.pts);
            weight_fallbacks += w.fallbacks();
            let poses = o.model.poses()?;
            let tracks = tracks_from(&o.model, &c.pts, &w, &poses);
            push_tracks(&mut z, &tracks);
            evals.push((w, poses, tracks));
        }

        let tau = self.schedule.tau(i);
        let cfg_scale = cfg.cfg_at(i);
        let mut rbar = alloc::vec![0.0; z.len()];
        for b in 0..cfg.batch {
            let eps = if oracle.needs_noise() {
                draw_noise(cfg.seed, i, b, z.len())
            } else {
                Vec::new()
            };
            let call = OracleCall {
                iteration: i,
                slot: b,
                cond: &cfg.cond,
            };
            let r = rfsds_residual(oracle, &z, tau, &eps, &call, cfg_scale)?;
            for (a, v) in rbar.iter_mut().zip(&r) {
                *a += v;
            }
        }
        let inv_b = 1.0 / cfg.batch as f64;
        rbar.iter_mut().for_each(|a| *a *= inv_b);
        let rfsds_norm = libm::sqrt(rbar.iter().map(|a| a * a).sum::<f64>() / rbar.len().max(1) as f64);

        let graphs: Vec<&NeighborGraph> = self.caches.iter().map(|c| &c.graph).collect();
        let scale = LossScale::of(&self.state, &graphs);
        let (wt, wa) = (cfg.temporal_weight_at(i), cfg.arap_weight_at(i));
        let (mut l_temp, mut l_arap) = (0.0, 0.0);
        let mut degenerate_fits = 0;
        let mut grads = Vec::with_capacity(evals.len());
        let mut offset = 0;
        for ((o, c), (w, poses, tracks)) in self.state.objects.iter().zip(&self.caches).zip(&evals) {
            let mut g: Vec<Vec3> = rbar[offset..offset + 3 * tracks.pos.len()]
                .chunks(3)
                .map(|r| Vec3::new(r[0], r[1], r[2]) * (1.0 / scale.points))
                .collect();
            offset += 3 * tracks.pos.len();
            let (lt, gt) = temporal_flow_loss(tracks);
            l_temp += lt;
            if wt > 0.0 {
                let s = wt / scale.flows;
                g.iter_mut().zip(&gt).for_each(|(a, b)| *a += *b * s);
            }
            if wa > 0.0 {
                let (rots, deg) = arap_rotations(&o.shell, &c.graph, tracks);
                degenerate_fits += deg;
                let (la, ga) = arap_loss_fixed(&o.shell, &c.graph, tracks, &rots);
                l_arap += la;
                let s = wa / scale.pairs;
                g.iter_mut().zip(&ga).for_each(|(a, b)| *a += *b * s);
            }
            let mg = o.model.backprop_positions(&c.pts, w, poses, &g);
            grads.push(mg);
        }

        let mut sq = 0.0;
        for mg in &grads {
            for (sel, lg) in [(LayerSel::Coarse, &mg.coarse), (LayerSel::Fine, &mg.fine)] {
                if sel == LayerSel::Fine && !fine_active {
                    continue;
                }
                for v in lg.to_flat() {
                    if !v.is_finite() {
                        return Err(Error::NonFinite("parameter gradient"));
                    }
                    sq += v * v;
                }
            }
        }

        let (lr_f, lr_r) = (cfg.lr_fenwick_at(i), cfg.lr_rot_at(i));
        let params = cfg.adam;
        for ((o, c), mg) in self.state.objects.iter_mut().zip(&mut self.caches).zip(&grads) {
            adam_layer(&mut o.model.coarse, &mg.coarse, &mut c.adam[0], lr_f, lr_r, &params)?;
            if fine_active {
                adam_layer(&mut o.model.fine, &mg.fine, &mut c.adam[1], lr_f, lr_r, &params)?;
            }
        }

        let metrics = MetricsRow {
            iter: i,
            tau,
            lr_fenwick: lr_f,
            lr_rot: lr_r,
            cfg: cfg_scale,
            rfsds_norm,
            temporal: l_temp / scale.flows,
            arap: if wa > 0.0 { l_arap / scale.pairs } else { f64::NAN },
        };
        self.latent = z;
        if i == self.config.split_iter {
            self.apply_split()?;
        }
        Ok(StepDiagnostics {
            metrics,
            grad_norm: libm::sqrt(sq),
            fine_active,
            weight_fallbacks,
            degenerate_fits,
        })
    }

    /// Holds every frame after the clamp frame at its deformation and clears
    /// the optimizer moments of the rewritten nodes.
    pub fn apply_split(&mut self) -> Result<()> {
        let t0 = self.config.clamp_frame;
        if t0 >= self.state.frames {
            return Ok(());
        }
        apply_split(&mut self.state, t0)?;
        let frames = self.state.frames;
        let bl = block_len(frames);
        for (o, c) in self.state.objects.iter().zip(&mut self.caches) {
            for (li, layer) in [&o.model.coarse, &o.model.fine].into_iter().enumerate() {
                for p in 0..layer.len() {
                    for off in 7 * t0..7 * frames {
                        c.adam[li].reset(p * bl + off);
                    }
                }
            }
        }
        Ok(())
    }

    /// Runs every step, calling `observe` after each.
    pub fn run<O: GuidanceOracle + ?Sized, F: FnMut(&Trainer, &StepDiagnostics)>(
        &mut self,
        oracle: &O,
        mut observe: F,
    ) -> Result<Vec<MetricsRow>> {
        let mut rows = Vec::with_capacity(self.config.iterations);
        for i in 1..=self.config.iterations {
            let d = self.step(oracle, i)?;
            observe(self, &d);
            rows.push(d.metrics);
        }
        Ok(rows)
    }
}

fn adam_layer(layer: &mut ControlLayer, grad: &LayerGrad, st: &mut AdamState, lr_f: f64, lr_r: f64, p: &AdamParams) -> Result<()> {
    let frames = layer.frame_count();
    let bl = block_len(frames);
    let mut flat = layer.to_flat();
    let g = grad.to_flat();
    for (idx, (x, &gi)) in flat.iter_mut().zip(&g).enumerate() {
        let off = idx % bl;
        if off < 7 {
            continue;
        }
        let lr = match group_of(off, frames) {
            ParamGroup::CovRot => lr_r,
            _ => lr_f,
        };
        st.update(idx, gi, lr, p, x);
    }
    layer.set_flat(&flat)
}

/// `clamp_after(t0)` on every control point of every object.
pub fn apply_split(state: &mut SceneState, t0: usize) -> Result<()> {
    if t0 >= state.frames {
        return Ok(());
    }
    for o in &mut state.objects {
        for layer in [&mut o.model.coarse, &mut o.model.fine] {
            for cp in &mut layer.points {
                cp.seq = cp.seq.clamp_after(t0)?;
            }
        }
    }
    Ok(())
}

/// Runs the full schedule and returns the trained scene with its log.
pub fn train<O: GuidanceOracle + ?Sized>(state: SceneState, oracle: &O, config: &TrainConfig) -> Result<(SceneState, Vec<MetricsRow>)> {
    let mut trainer = Trainer::new(state, config.clone())?;
    let rows = trainer.run(oracle, |_, _| {})?;
    Ok((trainer.into_state(), rows))
}

/// Objective checked by [`finite_diff_audit`].
pub enum AuditLoss<'a> {
    Temporal,
    /// ARAP with the local rotations frozen at the audited state.
    Arap,
    /// `⟨r, z(θ)⟩ / N` with the residual `r` frozen at the audited state.
    Rfsds { oracle: &'a dyn GuidanceOracle, tau: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditSample {
    pub object: usize,
    pub param: ParamId,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub max_rel_err: f64,
    pub samples: Vec<AuditSample>,
}

pub const AUDIT_STEP: f64 = 1e-5;

/// Compares analytic parameter gradients with central differences (step
/// `1e-5`) on `samples` randomly chosen parameters whose gradient is at
/// least 1e-3 of the largest one. Node 1 is frozen and never chosen.
pub fn finite_diff_audit(state: &SceneState, loss: AuditLoss, samples: usize, seed: u64) -> Result<AuditReport> {
    let caches: Vec<(BoundPoints, NeighborGraph)> = state
        .objects
        .iter()
        .map(|o| Ok((o.model.bind(&o.shell), NeighborGraph::build(&o.shell, DEFAULT_ARAP_NEIGHBORS)?)))
        .collect::<Result<_>>()?;
    let graphs: Vec<&NeighborGraph> = caches.iter().map(|c| &c.1).collect();
    let scale = LossScale::of(state, &graphs);

    let base: Vec<Tracks> = state
        .objects
        .iter()
        .zip(&caches)
        .map(|(o, c)| object_tracks(&o.model, &c.0))
        .collect::<Result<_>>()?;
    let frozen_rots: Vec<Vec<crate::geom::Mat3>> = match loss {
        AuditLoss::Arap => state
            .objects
            .iter()
            .zip(&caches)
            .zip(&base)
            .map(|((o, c), t)| arap_rotations(&o.shell, &c.1, t).0)
            .collect(),
        _ => Vec::new(),
    };
    let residual: Vec<f64> = match &loss {
        AuditLoss::Rfsds { oracle, tau } => {
            let mut z = Vec::new();
            for t in &base {
                push_tracks(&mut z, t);
            }
            let eps = if oracle.needs_noise() { draw_noise(seed, 0, 0, z.len()) } else { Vec::new() };
            let call = OracleCall {
                iteration: 0,
                slot: 0,
                cond: "",
            };
            rfsds_residual(*oracle, &z, *tau, &eps, &call, 1.0)?
        }
        _ => Vec::new(),
    };
    let starts: Vec<usize> = {
        let layout = state.layout();
        (0..state.objects.len()).map(|o| layout.object_start(o)).collect()
    };

    // value and position gradient of one object's share of the objective
    let eval = |o: usize, tracks: &Tracks| -> (f64, Vec<Vec3>) {
        match loss {
            AuditLoss::Temporal => {
                let (l, g) = temporal_flow_loss(tracks);
                (l / scale.flows, g.into_iter().map(|v| v * (1.0 / scale.flows)).collect())
            }
            AuditLoss::Arap => {
                let (l, g) = arap_loss_fixed(&state.objects[o].shell, &caches[o].1, tracks, &frozen_rots[o]);
                (l / scale.pairs, g.into_iter().map(|v| v * (1.0 / scale.pairs)).collect())
            }
            AuditLoss::Rfsds { .. } => {
                let r = &residual[starts[o]..starts[o] + 3 * tracks.pos.len()];
                let mut l = 0.0;
                let g = r
                    .chunks(3)
                    .zip(&tracks.pos)
                    .map(|(r, p)| {
                        let v = Vec3::new(r[0], r[1], r[2]) * (1.0 / scale.points);
                        l += v.dot(*p);
                        v
                    })
                    .collect();
                (l, g)
            }
        }
    };

    let mut candidates: Vec<(usize, ParamId, f64)> = Vec::new();
    for (o, obj) in state.objects.iter().enumerate() {
        let model = &obj.model;
        let pts = &caches[o].0;
        let (_, g) = eval(o, &base[o]);
        let w = model.weights(pts);
        let poses = model.poses()?;
        let mg = model.backprop_positions(pts, &w, &poses, &g);
        let bl = block_len(state.frames);
        for (sel, lg, layer) in [(LayerSel::Coarse, &mg.coarse, &model.coarse), (LayerSel::Fine, &mg.fine, &model.fine)] {
            if sel == LayerSel::Fine && !model.fine_enabled {
                continue;
            }
            for point in 0..layer.len() {
                for offset in 7..bl {
                    candidates.push((o, ParamId { layer: sel, point, offset }, lg.get(point, offset)));
                }
            }
        }
    }
    let gmax = candidates.iter().fold(0.0f64, |m, c| m.max(libm::fabs(c.2)));
    candidates.retain(|c| libm::fabs(c.2) >= 1e-3 * gmax && c.2 != 0.0);
    if candidates.is_empty() {
        return Ok(AuditReport {
            max_rel_err: 0.0,
            samples: Vec::new(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(samples);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let (o, id, analytic) = candidates[(rng.next_u64() % candidates.len() as u64) as usize];
        let model = &state.objects[o].model;
        let pts = &caches[o].0;
        let v = model.param(id);
        let value = |x: f64| -> Result<f64> {
            let mut m = model.clone();
            m.set_param(id, x)?;
            Ok(eval(o, &object_tracks(&m, pts)?).0)
        };
        let numeric = (value(v + AUDIT_STEP)? - value(v - AUDIT_STEP)?) / (2.0 * AUDIT_STEP);
        let rel_err = libm::fabs(numeric - analytic) / libm::fabs(numeric).max(libm::fabs(analytic));
        worst = worst.max(rel_err);
        out.push(AuditSample {
            object: o,
            param: id,
            analytic,
            numeric,
            rel_err,
        });
    }
    Ok(AuditReport {
        max_rel_err: worst,
        samples: out,
    })
}
