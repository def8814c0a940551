//! Acceptance suite: one line per criterion, non-zero exit on any failure.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::*;
use fenwarp_core::distill::{
    cdf_inverse, normalize_weight, rfsds_residual, AnnealSchedule, NoiseWeight, OracleCall, PointMassOracle,
};
use fenwarp_core::fenwick::{coverage, FenwickSeq, RigidDelta};
use fenwarp_core::geom::{quat_normalize, RawQuat, TriMesh, UnitQuat, Vec3};
use fenwarp_core::optim::{
    apply_split, assemble_latent, finite_diff_audit, AuditLoss, InitConfig, ObjectState, Range, SceneState, TrainConfig,
    Trainer,
};
use fenwarp_core::regularizers::{arap_loss, NeighborGraph, Tracks, DEFAULT_ARAP_NEIGHBORS};
use fenwarp_core::skinning::deform_full;
use rand_core::RngCore;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

/// Prefix of frame `t` from the binary digits of `t`: one block per set bit,
/// highest first, each block ending at the node that covers it.
fn digit_prefix(seq: &FenwickSeq, t: usize) -> RigidDelta {
    let mut acc = RigidDelta::new(RawQuat::IDENTITY, Vec3::ZERO);
    let mut start = 0;
    for b in (0..usize::BITS).rev() {
        let len = 1usize << b;
        if t & len != 0 {
            let end = start + len;
            assert_eq!(coverage(end), (start + 1, end));
            acc.rot = acc.rot + seq.node(end).rot;
            acc.trans = acc.trans + seq.node(end).trans;
            start = end;
        }
    }
    assert_eq!(start, t);
    acc
}

fn a1() -> Outcome {
    let t0 = Instant::now();
    let mut r = rng(101);
    let (mut rot_err, mut trans_exact, mut checked): (f64, bool, usize) = (0.0, true, 0);
    for frames in [41usize, 64] {
        for _ in 0..100 {
            let mut seq = FenwickSeq::new(frames);
            for j in 2..=frames {
                let dy = |r: &mut rand_chacha::ChaCha8Rng| ((r.next_u32() % 2049) as f64 - 1024.0) / 1024.0;
                let q = RawQuat::new(uni(&mut r, -0.3, 0.3), uni(&mut r, -0.3, 0.3), uni(&mut r, -0.3, 0.3), uni(&mut r, -0.3, 0.3));
                *seq.node_mut(j) = RigidDelta::new(q, Vec3::new(dy(&mut r), dy(&mut r), dy(&mut r)));
            }
            for t in 1..=frames {
                let want = digit_prefix(&seq, t);
                let (rot, trans) = seq.query(t).unwrap();
                trans_exact &= trans == want.trans;
                let w = quat_normalize(want.rot).unwrap();
                let d = rot.to_array().iter().zip(w.to_array()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                rot_err = rot_err.max(d);
                checked += 1;
            }
        }
    }
    let el = t0.elapsed();
    outcome(
        trans_exact && rot_err <= 1e-12 && within(el, 1.0),
        format!("{checked} frame queries, translations exact: {trans_exact}, max rotation diff {rot_err:.2e} (<= 1e-12), {el:.2?} (< 1 s)"),
    )
}

fn a2() -> Outcome {
    let t0 = Instant::now();
    let pdf = normalize_weight(NoiseWeight::Uniform).unwrap();
    let mut worst: f64 = 0.0;
    for iters in [1usize, 3, 10, 2000] {
        let s = AnnealSchedule::new(&pdf, iters).unwrap();
        for i in 1..=iters {
            worst = worst.max((s.tau(i) - (1.0 - i as f64 / (iters + 1) as f64)).abs());
        }
    }
    let c = TrainConfig::default();
    let n = c.iterations;
    let exact = c.lr_fenwick_at(1) == 0.006
        && c.lr_fenwick_at(n) == 0.00006
        && c.lr_rot_at(1) == 0.003
        && c.lr_rot_at(n) == 0.00003
        && c.cfg_at(1) == 25.0
        && c.cfg_at(n) == 12.0;
    let reg = [
        (c.temporal_weight_at(1), 9.6),
        (c.temporal_weight_at(n), 1.6),
        (c.arap_weight_at(1), 3000.0),
        (c.arap_weight_at(n), 300.0),
    ]
    .iter()
    .map(|(a, b)| (a - b).abs())
    .fold(0.0, f64::max);
    let el = t0.elapsed();
    outcome(
        worst <= 1e-8 && exact && reg <= 1e-12 && within(el, 1.0),
        format!("max |tau_i - (1 - i/(I+1))| {worst:.1e} (<= 1e-8), lr/cfg endpoints exact: {exact}, weight endpoint error {reg:.1e}, {el:.2?} (< 1 s)"),
    )
}

fn a3_target(p: Vec3, s: f64) -> Vec3 {
    let twist = UnitQuat::from_axis_angle(Vec3::new(0.0, 1.0, 0.0), 0.6 * s * p.y);
    twist.rotate(p) + Vec3::new(0.3 * s, 0.15 * (std::f64::consts::PI * s).sin(), 0.0)
}

fn target_latent(state: &SceneState, motion: fn(Vec3, f64) -> Vec3) -> (Vec<f64>, f64) {
    let frames = state.frames;
    let mut z = Vec::new();
    let (mut disp, mut n) = (0.0, 0usize);
    for o in &state.objects {
        for t in 1..=frames {
            let s = (t - 1) as f64 / (frames - 1) as f64;
            for &p in &o.shell {
                let q = motion(p, s);
                disp += q.dist(p);
                n += 1;
                z.extend_from_slice(&[q.x, q.y, q.z]);
            }
        }
    }
    (z, disp / n as f64)
}

fn mean_error(a: &[f64], b: &[f64]) -> f64 {
    a.chunks(3)
        .zip(b.chunks(3))
        .map(|(x, y)| ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2) + (x[2] - y[2]).powi(2)).sqrt())
        .sum::<f64>()
        / (a.len() / 3) as f64
}

fn a3() -> (Outcome, SceneState) {
    let t0 = Instant::now();
    let mesh = TriMesh::icosphere(Vec3::ZERO, 1.0, 4);
    let state = SceneState::new(vec![ObjectState::from_mesh(mesh, &InitConfig::default()).unwrap()]).unwrap();
    let shell = state.objects[0].shell.len();
    let (target, disp) = target_latent(&state, a3_target);
    let oracle = PointMassOracle { target: target.clone() };
    let cfg = TrainConfig {
        iterations: 1000,
        temporal_weight: Range::new(0.0, 0.0),
        arap_weight: Range::new(0.0, 0.0),
        ..TrainConfig::default()
    };
    let mut tr = Trainer::new(state, cfg).unwrap();
    let mut errs = Vec::with_capacity(1000);
    tr.run(&oracle, |t, _| errs.push(mean_error(t.latent(), &target))).unwrap();
    let state = tr.into_state();
    let fin = mean_error(&assemble_latent(&state).unwrap().z, &target);
    let rel = fin / disp;
    let tail = &errs[errs.len() - 100..];
    let smooth: Vec<f64> = tail.windows(20).map(|w| w.iter().sum::<f64>() / 20.0).collect();
    let rises = smooth.windows(2).filter(|p| p[1] > p[0]).count();
    let el = t0.elapsed();
    (
        outcome(
            rel <= 0.05 && rises == 0 && within(el, 600.0),
            format!(
                "shell {shell}, final error {fin:.4e} = {:.2}% of mean displacement {disp:.4} (<= 5%), smoothed rises in last 100 iterations: {rises}, {el:.1?} (<= 10 min)",
                100.0 * rel
            ),
        ),
        state,
    )
}

fn a4() -> Outcome {
    let mut r = rng(404);
    let n = 3000;
    let z: Vec<f64> = (0..n).map(|_| uni(&mut r, -2.0, 2.0)).collect();
    let star: Vec<f64> = (0..n).map(|_| uni(&mut r, -2.0, 2.0)).collect();
    let oracle = PointMassOracle { target: star.clone() };
    let (mut identical, mut worst) = (true, 0.0f64);
    for &tau in &[0.02, 0.3, 0.5, 0.97] {
        let mut first: Option<Vec<f64>> = None;
        for d in 0..100 {
            let eps: Vec<f64> = (0..n).map(|_| uni(&mut r, -4.0, 4.0)).collect();
            let call = OracleCall { iteration: 1, slot: d, cond: "" };
            let res = rfsds_residual(&oracle, &z, tau, &eps, &call, 25.0).unwrap();
            for ((v, a), b) in res.iter().zip(&z).zip(&star) {
                worst = worst.max((v - (a - b) / tau).abs());
            }
            match &first {
                None => first = Some(res),
                Some(f) => identical &= f.iter().zip(&res).all(|(a, b)| a.to_bits() == b.to_bits()),
            }
        }
    }
    outcome(
        identical && worst <= 1e-10,
        format!("bit-identical over 100 draws at 4 noise levels: {identical}, max |r - (z - z*)/tau| {worst:.1e} (<= 1e-10)"),
    )
}

fn a5() -> Outcome {
    let t0 = Instant::now();
    let mesh = TriMesh::icosphere(Vec3::ZERO, 1.0, 3);
    let init = InitConfig {
        frames: 11,
        shell_target: 1500,
        coarse: 16,
        fine: 64,
        ..InitConfig::default()
    };
    let mut state = SceneState::new(vec![ObjectState::from_mesh(mesh, &init).unwrap()]).unwrap();
    randomize(&mut state, 55, 0.08);
    let lat = assemble_latent(&state).unwrap();
    let target: Vec<f64> = lat.z.iter().enumerate().map(|(i, v)| v + 0.05 * (0.61 * i as f64).sin()).collect();
    let oracle = PointMassOracle { target };
    let samples = 200;
    let t = finite_diff_audit(&state, AuditLoss::Temporal, samples, 1).unwrap();
    let a = finite_diff_audit(&state, AuditLoss::Arap, samples, 2).unwrap();
    let r = finite_diff_audit(&state, AuditLoss::Rfsds { oracle: &oracle, tau: 0.35 }, samples, 3).unwrap();
    let el = t0.elapsed();
    let counts = t.samples.len().min(a.samples.len()).min(r.samples.len());
    outcome(
        t.max_rel_err <= 1e-5 && a.max_rel_err <= 1e-4 && r.max_rel_err <= 1e-4 && counts >= 200 && within(el, 120.0),
        format!(
            "{counts} parameters each: temporal {:.1e} (<= 1e-5), ARAP {:.1e} (<= 1e-4), RFSDS {:.1e} (<= 1e-4), {el:.1?} (< 2 min)",
            t.max_rel_err, a.max_rel_err, r.max_rel_err
        ),
    )
}

fn a6(trained: Option<&SceneState>) -> Outcome {
    let mut r = rng(606);
    let shell: Vec<Vec3> = (0..400).map(|_| Vec3::new(uni(&mut r, -1.0, 1.0), uni(&mut r, -1.0, 1.0), uni(&mut r, -1.0, 1.0))).collect();
    let graph = NeighborGraph::build(&shell, DEFAULT_ARAP_NEIGHBORS).unwrap();
    let frames = 6;
    let mut pos = Vec::new();
    for t in 0..frames {
        let q = UnitQuat::from_axis_angle(Vec3::new(0.3, -1.0, 0.5), 0.7 * t as f64);
        let tr = Vec3::new(t as f64, -2.0 * t as f64, 0.5);
        pos.extend(shell.iter().map(|p| q.rotate(*p) + tr));
    }
    let (arap, _) = arap_loss(&shell, &graph, &Tracks::new(shell.len(), frames, pos).unwrap()).unwrap();

    let mut st = sphere_scene(5);
    let rot = UnitQuat::from_axis_angle(Vec3::new(1.0, 2.0, -0.5), 1.1);
    let trans = Vec3::new(-0.4, 0.9, 1.5);
    global_rigid(&mut st, rot, trans);
    let o = &st.objects[0];
    let mut lbs: f64 = 0.0;
    for &p in o.shell.iter().chain(&o.mesh.vertices) {
        let (x, _) = deform_full(p, UnitQuat::IDENTITY, &o.model, 5).unwrap();
        lbs = lbs.max(x.dist(rot.rotate(p) + trans));
    }

    let frame1 = trained.map(|s| {
        s.first_frame_frozen()
            && s.objects.iter().all(|o| {
                o.shell.iter().all(|&p| {
                    let (x, q) = deform_full(p, UnitQuat::IDENTITY, &o.model, 1).unwrap();
                    x == p && q == UnitQuat::IDENTITY
                })
            })
    });
    outcome(
        arap <= 1e-9 && lbs <= 1e-9 && frame1 == Some(true),
        format!(
            "ARAP under rigid motion {arap:.1e} (<= 1e-9), uniform LBS vs rigid map {lbs:.1e} (<= 1e-9), frame 1 identity after A3 run: {}",
            frame1.map_or("not run".to_string(), |b| b.to_string())
        ),
    )
}

fn a7() -> Outcome {
    let mut st = sphere_scene(41);
    randomize(&mut st, 77, 0.1);
    let before = st.clone();
    apply_split(&mut st, 30).unwrap();
    let (mut tail, mut head_exact) = (0.0f64, true);
    for (o0, o1) in before.objects.iter().zip(&st.objects) {
        for (l0, l1) in [(&o0.model.coarse, &o1.model.coarse), (&o0.model.fine, &o1.model.fine)] {
            for (a, b) in l0.points.iter().zip(&l1.points) {
                for t in 1..=30 {
                    head_exact &= a.seq.query(t).unwrap().1 == b.seq.query(t).unwrap().1;
                }
                let (q30, t30) = b.seq.query(30).unwrap();
                for t in 31..=41 {
                    let (q, tr) = b.seq.query(t).unwrap();
                    tail = tail.max(tr.dist(t30)).max(q.angle_dist(q30));
                }
            }
        }
    }
    outcome(
        tail <= 1e-9 && head_exact,
        format!("max deviation of frames 31..41 from frame 30 {tail:.1e} (<= 1e-9), translations of frames 1..30 bit-exact: {head_exact}"),
    )
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

fn a8() -> Outcome {
    let t0 = Instant::now();
    let pdf = normalize_weight(NoiseWeight::default()).unwrap();
    let mut r = rng(808);
    let n = 10_000;
    let mut draws: Vec<f64> = (0..n)
        .map(|_| cdf_inverse(&pdf, (r.next_u64() >> 11) as f64 / (1u64 << 53) as f64).unwrap())
        .collect();
    draws.sort_by(f64::total_cmp);
    let ks = |cdf: &dyn Fn(f64) -> f64| {
        draws
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = cdf(x);
                (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
            })
            .fold(0.0, f64::max)
    };
    let d_quad = ks(&|x| pdf.cdf(x));
    let d_closed = ks(&|x: f64| normal_cdf((x / (1.0 - x)).ln()));
    let crit = 1.628 / (n as f64).sqrt();

    // gradient of <r, a> for z = z* + theta a with the residual (z - z*)/tau
    let m = 100_000;
    let theta = 0.3;
    let g = |tau: f64| theta / tau;
    let stats = |xs: &[f64]| {
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        (mean, (var / xs.len() as f64).sqrt())
    };
    let weighted: Vec<f64> = (0..m)
        .map(|_| {
            let tau = ((r.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64;
            pdf.pdf(tau) * g(tau)
        })
        .collect();
    let sampled: Vec<f64> = (0..m)
        .map(|_| g(cdf_inverse(&pdf, (r.next_u64() >> 11) as f64 / (1u64 << 53) as f64).unwrap()))
        .collect();
    let (mw, sw) = stats(&weighted);
    let (ms, ss) = stats(&sampled);
    let sigma = (sw * sw + ss * ss).sqrt();
    let el = t0.elapsed();
    outcome(
        d_quad < crit && d_closed < crit && (mw - ms).abs() <= 3.0 * sigma,
        format!(
            "KS D {d_quad:.4} vs quadrature CDF, {d_closed:.4} vs closed form (critical {crit:.4}); weighted mean {mw:.5} vs sampled {ms:.5}, gap {:.2} sigma (<= 3), {el:.1?}",
            (mw - ms).abs() / sigma
        ),
    )
}

fn a9_target(p: Vec3, s: f64) -> Vec3 {
    let c = Vec3::new(0.0, 0.0, 1.0);
    let d = p.dist(c);
    let dent = 0.3 * s * (-(d * d) / (2.0 * 0.25 * 0.25)).exp();
    let q = p - p.normalized() * dent;
    UnitQuat::from_axis_angle(Vec3::new(0.0, 1.0, 0.0), 0.8 * s).rotate(q)
}

fn a9() -> Outcome {
    let t0 = Instant::now();
    let mesh = TriMesh::icosphere(Vec3::ZERO, 1.0, 4);
    let init = InitConfig {
        shell_target: 3000,
        ..InitConfig::default()
    };
    let state = SceneState::new(vec![ObjectState::from_mesh(mesh, &init).unwrap()]).unwrap();
    let (target, _) = target_latent(&state, a9_target);
    let oracle = PointMassOracle { target: target.clone() };
    let run = |fine_start: f64| {
        let cfg = TrainConfig {
            iterations: 400,
            fine_start,
            temporal_weight: Range::new(0.0, 0.0),
            arap_weight: Range::new(0.0, 0.0),
            ..TrainConfig::default()
        };
        let mut tr = Trainer::new(state.clone(), cfg).unwrap();
        tr.run(&oracle, |_, _| {}).unwrap();
        mean_error(&assemble_latent(tr.state()).unwrap().z, &target)
    };
    let coarse = run(1.0);
    let both = run(0.5);
    let gain = 1.0 - both / coarse;
    let el = t0.elapsed();
    outcome(
        gain >= 0.2,
        format!("coarse only {coarse:.4e}, coarse + fine {both:.4e}, reduction {:.1}% (>= 20%), {el:.1?}", 100.0 * gain),
    )
}

fn guarded<T>(f: impl FnOnce() -> T) -> Result<T, String> {
    catch_unwind(AssertUnwindSafe(f)).map_err(|e| {
        e.downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into())
    })
}

fn main() {
    let mut failed = 0;
    let mut report = |id: &str, name: &str, r: Result<Outcome, String>| {
        let (pass, detail) = match r {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("panicked: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!("{id} {} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    };
    report("A1", "Fenwick equivalence", guarded(a1));
    report("A2", "schedule reproduction", guarded(a2));
    let (a3_out, trained) = match guarded(a3) {
        Ok((o, s)) => (Ok(o), Some(s)),
        Err(e) => (Err(e), None),
    };
    report("A3", "end-to-end distillation recovery", a3_out);
    report("A4", "noise cancellation", guarded(a4));
    report("A5", "gradient audits", guarded(a5));
    report("A6", "rigidity invariances", guarded(|| a6(trained.as_ref())));
    report("A7", "split schedule contract", guarded(a7));
    report("A8", "sampling correctness", guarded(a8));
    report("A9", "coarse-to-fine effect", guarded(a9));
    println!("acceptance: {} of 9 criteria passed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
