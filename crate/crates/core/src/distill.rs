//! Rectified-flow score distillation: noise-level weighting and annealing,
//! the noisy interpolation, velocity oracles and the distillation residual.
//!
//! Data sits at `τ = 0` and noise at `τ = 1`: `z_τ = (1 - τ) z + τ ε`, and a
//! velocity oracle predicts `ε - z`. The residual `v̂(z_τ) - ε + z` is the
//! per-element gradient handed to the deformation adjoint.

use alloc::string::ToString;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Densities are evaluated on `[δ, 1 - δ]`; values outside are clamped in.
pub const QUAD_DELTA: f64 = 1e-6;
/// Required accuracy of `h(τ) = u` when inverting the CDF.
pub const CDF_TOL: f64 = 1e-8;
const QUAD_EPS: f64 = 1e-13;
const QUAD_MIN_DEPTH: u32 = 4;
const QUAD_MAX_DEPTH: u32 = 48;
const MIN_TAU: f64 = 1e-9;

/// Unnormalized weight `w(τ)` over noise levels.
#[derive(Debug, Clone, Copy)]
pub enum NoiseWeight {
    Uniform,
    LogitNormal { loc: f64, scale: f64 },
    Custom(fn(f64) -> f64),
}

impl Default for NoiseWeight {
    fn default() -> Self {
        NoiseWeight::LogitNormal { loc: 0.0, scale: 1.0 }
    }
}

impl NoiseWeight {
    pub fn eval(&self, tau: f64) -> f64 {
        let t = tau.clamp(QUAD_DELTA, 1.0 - QUAD_DELTA);
        match *self {
            NoiseWeight::Uniform => 1.0,
            NoiseWeight::LogitNormal { loc, scale } => {
                let l = libm::log(t / (1.0 - t));
                let z = (l - loc) / scale;
                libm::exp(-0.5 * z * z) / (scale * libm::sqrt(2.0 * core::f64::consts::PI) * t * (1.0 - t))
            }
            NoiseWeight::Custom(f) => f(t),
        }
    }
}

fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let c = 0.5 * (a + b);
    let (fa, fb, fc) = (f(a), f(b), f(c));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fc + fb);
    simpson_rec(f, a, b, fa, fb, fc, whole, QUAD_EPS, 0)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fb: f64, fc: f64, whole: f64, eps: f64, depth: u32) -> f64 {
    let c = 0.5 * (a + b);
    let (d, e) = (0.5 * (a + c), 0.5 * (c + b));
    let (fd, fe) = (f(d), f(e));
    let left = (c - a) / 6.0 * (fa + 4.0 * fd + fc);
    let right = (b - c) / 6.0 * (fc + 4.0 * fe + fb);
    let diff = left + right - whole;
    let tol = 15.0 * eps.max(4.0 * f64::EPSILON * libm::fabs(left + right));
    if !diff.is_finite() || depth >= QUAD_MAX_DEPTH || (depth >= QUAD_MIN_DEPTH && libm::fabs(diff) <= tol) {
        return left + right + diff / 15.0;
    }
    simpson_rec(f, a, c, fa, fc, fd, left, 0.5 * eps, depth + 1) + simpson_rec(f, c, b, fc, fb, fe, right, 0.5 * eps, depth + 1)
}

/// Normalized density `ŵ = w / ∫w` with its CDF `h`.
#[derive(Debug, Clone, Copy)]
pub struct WeightPdf {
    pub weight: NoiseWeight,
    pub total: f64,
}

/// Normalizes `w` by adaptive quadrature and checks the result integrates to one.
pub fn normalize_weight(weight: NoiseWeight) -> Result<WeightPdf> {
    let f = |t: f64| weight.eval(t);
    let total = simpson(&f, 0.0, 1.0);
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::DegenerateWeight(total));
    }
    let pdf = WeightPdf { weight, total };
    // independent check on a different split of the domain
    let mass = pdf.integral(0.0, 0.3) + pdf.integral(0.3, 1.0);
    if libm::fabs(mass - 1.0) > 1e-6 {
        return Err(Error::DegenerateWeight(mass));
    }
    Ok(pdf)
}

impl WeightPdf {
    pub fn pdf(&self, tau: f64) -> f64 {
        self.weight.eval(tau) / self.total
    }

    /// `∫_a^b ŵ`.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        simpson(&|t: f64| self.pdf(t), a, b)
    }

    pub fn cdf(&self, tau: f64) -> f64 {
        self.integral(0.0, tau.clamp(0.0, 1.0))
    }

    /// `h⁻¹(u)`, see [`cdf_inverse`].
    pub fn inverse(&self, u: f64) -> Result<f64> {
        cdf_inverse(self, u)
    }
}

/// Solves `h(τ) = u` by bisection, integrating only the newly halved piece at each step.
pub fn cdf_inverse(pdf: &WeightPdf, u: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::InvalidArgument("CDF level must lie in (0, 1)".to_string()));
    }
    let (mut lo, mut hi, mut h_lo) = (0.0, 1.0, 0.0);
    let mut best = (f64::INFINITY, 0.5);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let h_mid = h_lo + pdf.integral(lo, mid);
        let err = libm::fabs(h_mid - u);
        if err < best.0 {
            best = (err, mid);
        }
        if err <= 1e-3 * CDF_TOL || hi - lo <= 4.0 * f64::EPSILON {
            break;
        }
        if h_mid < u {
            lo = mid;
            h_lo = h_mid;
        } else {
            hi = mid;
        }
    }
    if best.0 > CDF_TOL {
        return Err(Error::Oracle("CDF inversion did not converge".to_string()));
    }
    Ok(best.1)
}

/// Annealed noise levels `τ_i = h⁻¹(1 - i / (I + 1))`, tabulated once.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnealSchedule {
    taus: Vec<f64>,
}

impl AnnealSchedule {
    pub fn new(pdf: &WeightPdf, iterations: usize) -> Result<AnnealSchedule> {
        let taus = (1..=iterations)
            .map(|i| cdf_inverse(pdf, 1.0 - i as f64 / (iterations as f64 + 1.0)))
            .collect::<Result<Vec<_>>>()?;
        Ok(AnnealSchedule { taus })
    }

    /// `τ_i` for 1-based `i`.
    pub fn tau(&self, i: usize) -> f64 {
        self.taus[i - 1]
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    pub fn len(&self) -> usize {
        self.taus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taus.is_empty()
    }
}

pub fn tau_at(pdf: &WeightPdf, iterations: usize, i: usize) -> Result<f64> {
    crate::error::check_range("iteration", i, 1, iterations)?;
    cdf_inverse(pdf, 1.0 - i as f64 / (iterations as f64 + 1.0))
}

/// Shape of the point-track observable: object-major, then frame, sample and axis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatentLayout {
    pub frames: usize,
    pub samples: Vec<usize>,
}

impl LatentLayout {
    pub fn len(&self) -> usize {
        3 * self.frames * self.samples.iter().sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// First element of object `o`.
    pub fn object_start(&self, o: usize) -> usize {
        3 * self.frames * self.samples[..o].iter().sum::<usize>()
    }

    /// Index of the x coordinate of sample `i` of object `o` at frame `t` (1-based).
    pub fn index(&self, o: usize, t: usize, i: usize) -> usize {
        self.object_start(o) + 3 * ((t - 1) * self.samples[o] + i)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    pub layout: LatentLayout,
    pub z: Vec<f64>,
}

fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::ShapeMismatch { expected, found });
    }
    Ok(())
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidTau(tau));
    }
    Ok(())
}

/// `(1 - τ) z + τ ε`.
pub fn noisy(z: &[f64], tau: f64, eps: &[f64]) -> Result<Vec<f64>> {
    check_len(z.len(), eps.len())?;
    Ok(z.iter().zip(eps).map(|(a, e)| (1.0 - tau) * a + tau * e).collect())
}

/// `v_u + s (v_c - v_u)`.
pub fn cfg_combine(v_cond: &[f64], v_uncond: &[f64], scale: f64) -> Result<Vec<f64>> {
    check_len(v_cond.len(), v_uncond.len())?;
    Ok(v_cond.iter().zip(v_uncond).map(|(c, u)| u + scale * (c - u)).collect())
}

/// Which optimization step and batch slot a query belongs to, plus the
/// conditioning text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleCall<'a> {
    pub iteration: usize,
    pub slot: usize,
    pub cond: &'a str,
}

/// A velocity predictor `v̂(z_τ; τ, y)`.
pub trait GuidanceOracle: Sync {
    fn velocity(&self, x: &[f64], tau: f64, call: &OracleCall) -> Result<Vec<f64>>;

    /// Unconditional prediction for guidance; `None` disables it.
    fn unconditional(&self, _x: &[f64], _tau: f64, _call: &OracleCall) -> Result<Option<Vec<f64>>> {
        Ok(None)
    }

    /// False when the residual does not depend on the noise draw.
    fn needs_noise(&self) -> bool {
        true
    }

    fn residual(&self, z: &[f64], tau: f64, eps: &[f64], call: &OracleCall, cfg_scale: f64) -> Result<Vec<f64>> {
        direct_residual(self, z, tau, eps, call, cfg_scale)
    }
}

/// `v̂(noisy(z, τ, ε)) - ε + z`, with guidance when the oracle offers an
/// unconditional branch.
pub fn direct_residual<O: GuidanceOracle + ?Sized>(oracle: &O, z: &[f64], tau: f64, eps: &[f64], call: &OracleCall, cfg_scale: f64) -> Result<Vec<f64>> {
    let x = noisy(z, tau, eps)?;
    let mut v = oracle.velocity(&x, tau, call)?;
    check_len(z.len(), v.len())?;
    if let Some(u) = oracle.unconditional(&x, tau, call)? {
        v = cfg_combine(&v, &u, cfg_scale)?;
    }
    Ok(v.iter().zip(eps).zip(z).map(|((v, e), z)| v - e + z).collect())
}

/// The distillation residual, validated.
pub fn rfsds_residual<O: GuidanceOracle + ?Sized>(oracle: &O, z: &[f64], tau: f64, eps: &[f64], call: &OracleCall, cfg_scale: f64) -> Result<Vec<f64>> {
    check_tau(tau)?;
    if oracle.needs_noise() {
        check_len(z.len(), eps.len())?;
    }
    let r = oracle.residual(z, tau, eps, call, cfg_scale)?;
    check_len(z.len(), r.len())?;
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("distillation residual"));
    }
    Ok(r)
}

/// `(x - z*) / τ`: the exact velocity when all data mass sits at `z*`.
pub fn pointmass_velocity(x: &[f64], tau: f64, z_star: &[f64]) -> Result<Vec<f64>> {
    if !(tau > MIN_TAU) {
        return Err(Error::InvalidTau(tau));
    }
    check_len(z_star.len(), x.len())?;
    Ok(x.iter().zip(z_star).map(|(x, s)| (x - s) / tau).collect())
}

/// `E[ε - x₀ | x_τ]` for data `x₀ ~ N(mean, σ² I)`:
/// `-m + (τ - (1-τ)σ²) / ((1-τ)²σ² + τ²) · (x - (1-τ) m)`.
pub fn gaussian_velocity(x: &[f64], tau: f64, mean: &[f64], sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument("sigma must be positive".to_string()));
    }
    check_tau(tau)?;
    check_len(mean.len(), x.len())?;
    let a = 1.0 - tau;
    let s2 = sigma * sigma;
    let k = (tau - a * s2) / (a * a * s2 + tau * tau);
    Ok(x.iter().zip(mean).map(|(x, m)| -m + k * (x - a * m)).collect())
}

/// Oracle for a single target latent.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMassOracle {
    pub target: Vec<f64>,
}

impl GuidanceOracle for PointMassOracle {
    fn velocity(&self, x: &[f64], tau: f64, _call: &OracleCall) -> Result<Vec<f64>> {
        pointmass_velocity(x, tau, &self.target)
    }

    fn needs_noise(&self) -> bool {
        false
    }

    /// The noise cancels analytically: `(z - z*) / τ`.
    fn residual(&self, z: &[f64], tau: f64, _eps: &[f64], _call: &OracleCall, _cfg: f64) -> Result<Vec<f64>> {
        check_len(self.target.len(), z.len())?;
        if !(tau > MIN_TAU) {
            return Err(Error::InvalidTau(tau));
        }
        Ok(z.iter().zip(&self.target).map(|(z, s)| (z - s) / tau).collect())
    }
}

/// Oracle for isotropic Gaussian data.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianOracle {
    pub mean: Vec<f64>,
    pub sigma: f64,
}

impl GaussianOracle {
    pub fn new(mean: Vec<f64>, sigma: f64) -> Result<GaussianOracle> {
        if !(sigma > 0.0) {
            return Err(Error::InvalidArgument("sigma must be positive".to_string()));
        }
        Ok(GaussianOracle { mean, sigma })
    }
}

impl GuidanceOracle for GaussianOracle {
    fn velocity(&self, x: &[f64], tau: f64, _call: &OracleCall) -> Result<Vec<f64>> {
        gaussian_velocity(x, tau, &self.mean, self.sigma)
    }
}

/// Standard normal noise for one `(iteration, slot)` pair, independent of
/// draw order elsewhere.
pub fn draw_noise(seed: u64, iteration: usize, slot: usize, len: usize) -> Vec<f64> {
    let mut rng = noise_rng(seed, iteration, slot);
    (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
}

pub fn noise_rng(seed: u64, iteration: usize, slot: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((iteration as u64) << 20) | slot as u64);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;
    use rand_core::RngCore;

    const CALL: OracleCall<'static> = OracleCall {
        iteration: 1,
        slot: 0,
        cond: "",
    };

    fn uniform() -> WeightPdf {
        normalize_weight(NoiseWeight::Uniform).unwrap()
    }

    fn logit() -> WeightPdf {
        normalize_weight(NoiseWeight::default()).unwrap()
    }

    fn linear() -> WeightPdf {
        normalize_weight(NoiseWeight::Custom(|t| t)).unwrap()
    }

    #[test]
    fn normalized_densities() {
        assert_eq!(uniform().pdf(0.3), 1.0);
        let l = linear();
        for &t in &[0.1, 0.5, 0.9] {
            assert!((l.pdf(t) - 2.0 * t).abs() < 1e-9);
        }
        let g = logit();
        assert!((g.cdf(1.0) - 1.0).abs() < 1e-6);
        assert!(normalize_weight(NoiseWeight::Custom(|_| 0.0)).is_err());
        assert!(normalize_weight(NoiseWeight::Custom(|_| f64::NAN)).is_err());
    }

    #[test]
    fn logit_normal_mass_matches_trapezoid_oracle() {
        // composite trapezoid in logit space, where the density is a plain Gaussian
        let n = 200_000;
        let (a, b) = (-12.0f64, 12.0f64);
        let h = (b - a) / n as f64;
        let mut s = 0.0;
        for k in 0..=n {
            let l = a + k as f64 * h;
            let w = if k == 0 || k == n { 0.5 } else { 1.0 };
            s += w * libm::exp(-0.5 * l * l);
        }
        let mass = s * h / libm::sqrt(2.0 * core::f64::consts::PI);
        assert!((mass - 1.0).abs() < 1e-6);
        assert!((logit().total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn inverse_examples() {
        assert_eq!(cdf_inverse(&uniform(), 0.75).unwrap(), 0.75);
        assert!((cdf_inverse(&linear(), 0.25).unwrap() - 0.5).abs() < 1e-8);
        assert!((cdf_inverse(&logit(), 0.5).unwrap() - 0.5).abs() < 1e-8);
        for u in [0.0, 1.0, -0.1, f64::NAN] {
            assert!(cdf_inverse(&uniform(), u).is_err());
        }
    }

    #[test]
    fn uniform_schedule_is_closed_form() {
        let s = AnnealSchedule::new(&uniform(), 3).unwrap();
        assert_eq!(s.taus(), &[0.75, 0.5, 0.25]);
        let big = AnnealSchedule::new(&uniform(), 2000).unwrap();
        assert!((big.tau(1) - 2000.0 / 2001.0).abs() < 1e-8);
        assert!((big.tau(2000) - 1.0 / 2001.0).abs() < 1e-8);
        assert!((big.tau(1) - 0.9995).abs() < 1e-4);
        assert!((big.tau(2000) - 0.0005).abs() < 1e-4);
        assert_eq!(tau_at(&uniform(), 3, 2).unwrap(), 0.5);
        assert!(tau_at(&uniform(), 3, 0).is_err());
        assert!(tau_at(&uniform(), 3, 4).is_err());
    }

    #[test]
    fn logit_normal_schedule_is_monotone() {
        let s = AnnealSchedule::new(&logit(), 200).unwrap();
        for w in s.taus().windows(2) {
            assert!(w[1] <= w[0]);
        }
        for &t in s.taus() {
            assert!(t > 0.0 && t < 1.0);
        }
        let pdf = logit();
        for (i, &t) in s.taus().iter().enumerate() {
            assert!((pdf.cdf(t) - (1.0 - (i + 1) as f64 / 201.0)).abs() <= CDF_TOL);
        }
    }

    #[test]
    fn noisy_examples() {
        assert_eq!(noisy(&[0.0, 0.0], 0.3, &[1.0, -2.0]).unwrap(), vec![0.3, -0.6]);
        let z = [0.7, -1.2];
        let x = noisy(&z, 1e-9, &[3.0, 4.0]).unwrap();
        assert!((x[0] - z[0]).abs() < 1e-8 && (x[1] - z[1]).abs() < 1e-8);
        assert_eq!(noisy(&[1.0, 1.0], 0.5, &[-1.0, 1.0]).unwrap(), vec![0.0, 1.0]);
        assert!(noisy(&[1.0], 0.5, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn cfg_examples() {
        assert_eq!(cfg_combine(&[2.0, -1.0], &[0.5, 3.0], 1.0).unwrap(), vec![2.0, -1.0]);
        assert_eq!(cfg_combine(&[2.0, -1.0], &[0.5, 3.0], 0.0).unwrap(), vec![0.5, 3.0]);
        assert_eq!(cfg_combine(&[2.0], &[0.0], 12.0).unwrap(), vec![24.0]);
    }

    #[test]
    fn pointmass_examples() {
        assert_eq!(pointmass_velocity(&[1.0, 2.0], 0.4, &[1.0, 2.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(pointmass_velocity(&[0.5, 0.0], 0.5, &[1.0, 0.0]).unwrap(), vec![-1.0, 0.0]);
        assert!(pointmass_velocity(&[0.0], 1e-10, &[0.0]).is_err());
        let zs = [0.3, -0.8, 1.1];
        let eps = draw_noise(1, 1, 0, 3);
        let x = noisy(&zs, 0.37, &eps).unwrap();
        let v = pointmass_velocity(&x, 0.37, &zs).unwrap();
        for k in 0..3 {
            assert!((v[k] - (eps[k] - zs[k])).abs() < 1e-14);
        }
    }

    #[test]
    fn pointmass_residual_ignores_noise() {
        let oracle = PointMassOracle { target: vec![0.5, -0.25, 2.0, 1.0] };
        let z = [1.0, 0.0, 1.5, 1.0];
        let tau = 0.3;
        let want: Vec<f64> = z.iter().zip(&oracle.target).map(|(a, b)| (a - b) / tau).collect();
        let first = rfsds_residual(&oracle, &z, tau, &draw_noise(0, 0, 0, 4), &CALL, 1.0).unwrap();
        assert_eq!(first, want);
        for k in 0..100 {
            let eps = draw_noise(9, k, 0, 4);
            assert_eq!(rfsds_residual(&oracle, &z, tau, &eps, &CALL, 1.0).unwrap(), first);
            let direct = direct_residual(&oracle, &z, tau, &eps, &CALL, 1.0).unwrap();
            for (a, b) in direct.iter().zip(&want) {
                assert!((a - b).abs() <= 1e-10);
            }
        }
        let at_target = rfsds_residual(&oracle, &oracle.target.clone(), tau, &[], &CALL, 1.0).unwrap();
        assert!(at_target.iter().all(|&v| v == 0.0));
        assert!(rfsds_residual(&oracle, &z, 1.0, &[], &CALL, 1.0).is_err());
    }

    #[test]
    fn gaussian_limits() {
        let m = [0.4, -1.0];
        let x = [0.1, 0.2];
        let g = gaussian_velocity(&x, 0.3, &m, 1e-4).unwrap();
        let p = pointmass_velocity(&x, 0.3, &m).unwrap();
        for k in 0..2 {
            assert!((g[k] - p[k]).abs() < 1e-6);
        }
        assert!(gaussian_velocity(&x, 0.3, &m, 0.0).is_err());
        assert!(GaussianOracle::new(m.to_vec(), -1.0).is_err());
        // on the mode path x = (1 - τ) m the correction term vanishes
        let tau = 0.6;
        let on_path: Vec<f64> = m.iter().map(|v| (1.0 - tau) * v).collect();
        let g = gaussian_velocity(&on_path, tau, &m, 0.7).unwrap();
        assert_eq!(g, vec![-m[0], -m[1]]);
    }

    #[test]
    fn gaussian_matches_monte_carlo_posterior() {
        // estimate E[ε - x₀ | x_τ ≈ x] by regressing over joint draws
        let (m, s, tau) = (0.0f64, 1.0f64, 0.4f64);
        let mut rng = noise_rng(3, 0, 0);
        let n = 100_000;
        let (mut sx, mut sv, mut sxx, mut sxv) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let x0: f64 = m + s * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
            let e: f64 = StandardNormal.sample(&mut rng);
            let x = (1.0 - tau) * x0 + tau * e;
            let v = e - x0;
            sx += x;
            sv += v;
            sxx += x * x;
            sxv += x * v;
        }
        let nf = n as f64;
        let slope = (sxv / nf - sx * sv / (nf * nf)) / (sxx / nf - sx * sx / (nf * nf));
        let a = 1.0 - tau;
        let want = (tau - a * s * s) / (a * a * s * s + tau * tau);
        assert!((slope - want).abs() <= 1e-2 * want.abs());
        let g = gaussian_velocity(&[1.0], tau, &[m], s).unwrap();
        assert!((g[0] - want).abs() < 1e-15);
    }

    #[test]
    fn noise_streams_are_addressed_by_counter() {
        let a = draw_noise(5, 17, 2, 8);
        let _ = draw_noise(5, 3, 1, 100);
        assert_eq!(draw_noise(5, 17, 2, 8), a);
        assert_ne!(draw_noise(5, 17, 3, 8), a);
        assert_ne!(draw_noise(5, 18, 2, 8), a);
        assert_ne!(draw_noise(6, 17, 2, 8), a);
    }

    #[test]
    fn ks_test_on_logit_normal_draws() {
        let pdf = logit();
        let mut rng = noise_rng(11, 0, 0);
        let n = 2000;
        let mut draws: Vec<f64> = (0..n)
            .map(|_| {
                let u = ((rng.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64;
                cdf_inverse(&pdf, u).unwrap()
            })
            .collect();
        draws.sort_by(f64::total_cmp);
        let mut d: f64 = 0.0;
        for (k, &t) in draws.iter().enumerate() {
            let f = pdf.cdf(t);
            d = d.max(f - k as f64 / n as f64).max((k + 1) as f64 / n as f64 - f);
        }
        assert!(d < 1.628 / libm::sqrt(n as f64));
    }

    proptest! {
        #[test]
        fn schedules_are_non_increasing(loc in -1.5f64..1.5, scale in 0.3f64..2.0, iters in 1usize..40) {
            let pdf = normalize_weight(NoiseWeight::LogitNormal { loc, scale }).unwrap();
            let s = AnnealSchedule::new(&pdf, iters).unwrap();
            for w in s.taus().windows(2) {
                prop_assert!(w[1] <= w[0]);
            }
        }

        #[test]
        fn inverse_round_trips(u in 0.001f64..0.999) {
            let pdf = logit();
            let t = cdf_inverse(&pdf, u).unwrap();
            prop_assert!((pdf.cdf(t) - u).abs() <= CDF_TOL);
        }
    }
}
