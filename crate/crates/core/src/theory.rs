//! Rate constants, convergence envelopes and Monte Carlo certificates of the
//! unified second-moment / inner-product assumption
//!
//! ```text
//! E[gamma_xi^2 ||g||^2] <= 2A P + C ||x - x*||^2 + D1,
//! P >= rho ||x - x*||^2 + B G - D2,      P = E[gamma_xi <g, x - x*>].
//! ```

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::operators::{FiniteSumOperator, Point};
use crate::par::{self, Execution};
use crate::sampling::{Sample, SchemeAnalysis, SchemeConstants};
use crate::solvers::rng_for;

/// Relative slack for rounding when comparing against a stepsize cap.
const CAP_SLACK: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnifiedParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d1: f64,
    pub d2: f64,
    pub rho: f64,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 0.25) {
        return Err(Error::Inapplicable(format!("rate theory needs 0 < alpha <= 1/4, got {alpha}")));
    }
    Ok(())
}

/// Same-sample SEG constants: `A = 2 alpha`, `C = 0`, `B = 1/2`,
/// `D1 = 6 alpha^2 sigma_AS^2`, `D2 = 3 alpha sigma_AS^2 / 2`,
/// `rho = alpha gamma mu_bar / 2` with `sigma_AS^2 = gamma^2 sigma_*^2`.
pub fn sseg_params(consts: &SchemeConstants, gamma: f64, alpha: f64) -> Result<UnifiedParams> {
    check_alpha(alpha)?;
    if gamma > consts.cap_raw * (1.0 + CAP_SLACK) {
        return Err(Error::StepsizeCap {
            gamma,
            cap: consts.cap_raw,
        });
    }
    if consts.mu_bar < 0.0 {
        return Err(Error::Inapplicable(format!("weighted mu aggregate is negative ({})", consts.mu_bar)));
    }
    let sigma_as = gamma * gamma * consts.sigma_star_sq;
    Ok(UnifiedParams {
        a: 2.0 * alpha,
        b: 0.5,
        c: 0.0,
        d1: 6.0 * alpha * alpha * sigma_as,
        d2: 1.5 * alpha * sigma_as,
        rho: alpha * gamma * consts.mu_bar / 2.0,
    })
}

/// Noise model of the independent-sample method.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsegProblem {
    pub mu: f64,
    pub l: f64,
    pub delta: f64,
    pub sigma_sq: f64,
    pub batch: usize,
}

impl IsegProblem {
    fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.mu < 0.0 || self.l < 0.0 || self.delta < 0.0 || self.sigma_sq < 0.0 {
            return Err(invalid("I-SEG problem needs b >= 1 and non-negative mu, L, delta, sigma^2"));
        }
        Ok(())
    }
}

/// `min{ mu b / (18 delta), 1 / (4 mu + sqrt(6 (L^2 + 2 delta / b))) }`.
pub fn iseg_cap(p: &IsegProblem) -> f64 {
    let b = p.batch as f64;
    let second = 1.0 / (4.0 * p.mu + (6.0 * (p.l * p.l + 2.0 * p.delta / b)).sqrt());
    if p.delta > 0.0 {
        (p.mu * b / (18.0 * p.delta)).min(second)
    } else {
        second
    }
}

/// Independent-sample SEG constants: `A = 2 alpha`, `C = 9 delta alpha^2 gamma^2 / b`,
/// `B = alpha gamma^2 / 4`, `D1 = 6 alpha^2 gamma^2 sigma^2 / b`,
/// `D2 = 6 alpha gamma^2 sigma^2 / b`, `rho = alpha gamma mu / 4`.
pub fn iseg_params(p: &IsegProblem, gamma: f64, alpha: f64) -> Result<UnifiedParams> {
    p.validate()?;
    check_alpha(alpha)?;
    let cap = iseg_cap(p);
    if gamma > cap * (1.0 + CAP_SLACK) {
        return Err(Error::StepsizeCap { gamma, cap });
    }
    let b = p.batch as f64;
    let g2 = gamma * gamma;
    Ok(UnifiedParams {
        a: 2.0 * alpha,
        b: alpha * g2 / 4.0,
        c: 9.0 * p.delta * alpha * alpha * g2 / b,
        d1: 6.0 * alpha * alpha * g2 * p.sigma_sq / b,
        d2: 6.0 * alpha * g2 * p.sigma_sq / b,
        rho: alpha * gamma * p.mu / 4.0,
    })
}

/// Evaluable bound `k -> value`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RateBound {
    /// `factor^k r0_sq + plateau`.
    Linear { factor: f64, r0_sq: f64, plateau: f64 },
    /// Bound on the running average of `G`: `r0_sq / (b (K+1)) + noise / b`.
    Averaged { r0_sq: f64, b: f64, noise: f64 },
    /// `c_exp exp(-rate K) + c_var / K` (infinite at `K = 0`).
    Decreasing { c_exp: f64, rate: f64, c_var: f64 },
}

impl RateBound {
    pub fn eval(&self, k: usize) -> f64 {
        let kf = k as f64;
        match *self {
            RateBound::Linear { factor, r0_sq, plateau } => factor.powf(kf) * r0_sq + plateau,
            RateBound::Averaged { r0_sq, b, noise } => r0_sq / (b * (kf + 1.0)) + noise / b,
            RateBound::Decreasing { c_exp, rate, c_var } => {
                if k == 0 {
                    f64::INFINITY
                } else {
                    c_exp * (-rate * kf).exp() + c_var / kf
                }
            }
        }
    }

    /// The value the bound tends to as `k -> infinity`.
    pub fn limit(&self) -> f64 {
        match *self {
            RateBound::Linear { plateau, .. } => plateau,
            RateBound::Averaged { b, noise, .. } => noise / b,
            RateBound::Decreasing { .. } => 0.0,
        }
    }
}

/// The general linear-to-neighborhood bound when `rho > C`, or the averaged
/// bound when `rho = C = 0` and `B > 0`.
pub fn envelope(params: &UnifiedParams, r0_sq: f64) -> Result<RateBound> {
    if params.a > 0.5 * (1.0 + CAP_SLACK) {
        return Err(Error::Inapplicable(format!("A = {} exceeds 1/2", params.a)));
    }
    if params.rho > params.c {
        return Ok(RateBound::Linear {
            factor: 1.0 + params.c - params.rho,
            r0_sq,
            plateau: (params.d1 + params.d2) / (params.rho - params.c),
        });
    }
    if params.rho == 0.0 && params.c == 0.0 && params.b > 0.0 {
        return Ok(RateBound::Averaged {
            r0_sq,
            b: params.b,
            noise: params.d1 + params.d2,
        });
    }
    Err(Error::Inapplicable(format!("rho = {} must exceed C = {} or both vanish", params.rho, params.c)))
}

/// Same-sample bound `(1 - rho)^k R0^2 + 3 alpha (4 alpha + 1) sigma_AS^2 / (2 rho)`.
pub fn sseg_envelope(consts: &SchemeConstants, gamma: f64, alpha: f64, r0_sq: f64) -> Result<RateBound> {
    let params = sseg_params(consts, gamma, alpha)?;
    if params.rho <= 0.0 {
        return Err(Error::Inapplicable("rho must be positive for a linear rate".into()));
    }
    let sigma_as = gamma * gamma * consts.sigma_star_sq;
    Ok(RateBound::Linear {
        factor: 1.0 - params.rho,
        r0_sq,
        plateau: 3.0 * alpha * (4.0 * alpha + 1.0) * sigma_as / (2.0 * params.rho),
    })
}

/// Independent-sample bound `(1 - alpha gamma mu / 8)^k R0^2 + 48 (alpha + 1) gamma sigma^2 / (mu b)`.
pub fn iseg_envelope(p: &IsegProblem, gamma: f64, alpha: f64, r0_sq: f64) -> Result<RateBound> {
    iseg_params(p, gamma, alpha)?;
    if p.mu <= 0.0 {
        return Err(Error::Inapplicable("mu must be positive for a linear rate".into()));
    }
    Ok(RateBound::Linear {
        factor: 1.0 - alpha * gamma * p.mu / 8.0,
        r0_sq,
        plateau: 48.0 * (alpha + 1.0) * gamma * p.sigma_sq / (p.mu * p.batch as f64),
    })
}

/// Decreasing-schedule bound `32 R0^2 / rho~ exp(-rho~ K / 2) + 27 sigma_AS^2 / (rho~^2 K)`
/// for same-sample SEG with `alpha = 1/4`.
pub fn decreasing_bound_sseg(r0_sq: f64, rho_tilde: f64, sigma_as_sq: f64) -> Result<RateBound> {
    if !(rho_tilde > 0.0) {
        return Err(Error::Inapplicable(format!("rho_tilde must be positive, got {rho_tilde}")));
    }
    Ok(RateBound::Decreasing {
        c_exp: 32.0 * r0_sq / rho_tilde,
        rate: rho_tilde / 2.0,
        c_var: 27.0 * sigma_as_sq / (rho_tilde * rho_tilde),
    })
}

/// Decreasing-schedule bound at the closed-form cap `gamma = 1/(6 L_eff)`:
/// `1536 L_eff / mu_bar R0^2 exp(-mu_bar K / (96 L_eff)) + 1728 sigma_*^2 / (mu_bar^2 K)`.
pub fn scheme_decreasing_bound(consts: &SchemeConstants, r0_sq: f64) -> Result<RateBound> {
    if !(consts.mu_bar > 0.0) {
        return Err(Error::Inapplicable(format!("mu_bar must be positive, got {}", consts.mu_bar)));
    }
    let (l, m) = (consts.l_eff, consts.mu_bar);
    Ok(RateBound::Decreasing {
        c_exp: 1536.0 * l / m * r0_sq,
        rate: m / (96.0 * l),
        c_var: 1728.0 * consts.sigma_star_sq / (m * m),
    })
}

/// Independent-sample decreasing-schedule bound
/// `1024 R0^2 / (gamma mu) exp(-gamma mu K / 64) + 69120 sigma^2 / (mu^2 b K)`.
pub fn decreasing_bound_iseg(p: &IsegProblem, gamma: f64, r0_sq: f64) -> Result<RateBound> {
    p.validate()?;
    if !(p.mu > 0.0) {
        return Err(Error::Inapplicable("mu must be positive".into()));
    }
    let gm = gamma * p.mu;
    Ok(RateBound::Decreasing {
        c_exp: 1024.0 * r0_sq / gm,
        rate: gm / 64.0,
        c_var: 69120.0 * p.sigma_sq / (p.mu * p.mu * p.batch as f64),
    })
}

/// `max{ delta / (mu^2 b), (L + sqrt(delta / b)) / mu }`.
pub fn kappa(p: &IsegProblem) -> f64 {
    let b = p.batch as f64;
    (p.delta / (p.mu * p.mu * b)).max((p.l + (p.delta / b).sqrt()) / p.mu)
}

/// Averaged bound on `||F(x^k)||^2` for same-sample SEG when `rho = 0`, with
/// `alpha = 1/4`: `16 R0^2 / (gamma^2 (K+1)) + 12 sigma_*^2`, where
/// `sigma_*^2` is the (batched) scheme's `E[w^2 ||F_xi(x*)||^2]`.
pub fn sseg_rho_zero_bound(gamma: f64, sigma_star_sq: f64, r0_sq: f64) -> RateBound {
    let b = gamma * gamma / 16.0;
    RateBound::Averaged {
        r0_sq,
        b,
        noise: 12.0 * sigma_star_sq * b,
    }
}

/// Closed-form bound for `r_{k+1} <= (1 - a beta_k) r_k + c beta_k^2`
/// under the horizon-aware schedule with `h = 1`.
pub fn recursion_bound(a: f64, c: f64, r0: f64, k: usize) -> f64 {
    let kf = k as f64;
    32.0 * r0 / a * (-a * kf / 2.0).exp() + 36.0 * c / (a * a * kf)
}

/// Noise constants of uniform-with-replacement component sampling.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteSumNoise {
    /// `delta` such that `E||F_i(x) - F(x)||^2 <= delta ||x - x*||^2 + sigma_sq`.
    pub delta: f64,
    pub sigma_sq: f64,
    /// `(1/n) sum ||F_i(x*)||^2`, the variance at the solution alone.
    pub sigma_star_sq: f64,
}

/// For affine components, `E||F_i(x) - F(x)||^2 = e'Qe + 2 e'v + sigma_*^2`
/// with `e = x - x*`. Young's inequality with weight `lambda_max(Q)` gives
/// `delta = 2 lambda_max(Q)` and `sigma^2 = sigma_*^2 + ||v||^2 / lambda_max(Q)`.
pub fn finite_sum_noise(op: &FiniteSumOperator, x_star: &Point) -> Result<FiniteSumNoise> {
    let n = op.n() as f64;
    let mbar = op.mean_matrix(op.all_indices())?;
    let mut q = DMatrix::zeros(op.dim(), op.dim());
    let mut v = Point::zeros(op.dim());
    let mut s = 0.0;
    for i in 0..op.n() {
        let di = op.mean_matrix(&[i])? - &mbar;
        let fi = op.eval_component(i, x_star)?;
        q += di.transpose() * &di;
        v += di.transpose() * &fi;
        s += fi.norm_squared();
    }
    q /= n;
    v /= n;
    let sigma_star_sq = s / n;
    let lmax = q.symmetric_eigenvalues().iter().fold(0.0_f64, |a, &e| a.max(e));
    if lmax <= 0.0 {
        return Ok(FiniteSumNoise {
            delta: 0.0,
            sigma_sq: sigma_star_sq,
            sigma_star_sq,
        });
    }
    Ok(FiniteSumNoise {
        delta: 2.0 * lmax,
        sigma_sq: sigma_star_sq + v.norm_squared() / lmax,
        sigma_star_sq,
    })
}

/// `x* + r u` with `u` uniform on the unit sphere and `r` log-uniform in
/// `[1e-2, 10]`.
pub fn probe_points(x_star: &Point, count: usize, seed: u64) -> Vec<Point> {
    let mut rng = rng_for(seed, u64::MAX);
    (0..count)
        .map(|_| {
            let mut u = Point::from_fn(x_star.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
            let norm = u.norm();
            if norm > 0.0 {
                u /= norm;
            }
            let r = 10f64.powf(rng.random_range(-2.0..=1.0));
            x_star + r * u
        })
        .collect()
}

/// Which method a certificate samples.
pub enum CertMethod<'a> {
    Sseg(&'a SchemeAnalysis<'a>),
    /// Independent uniform batches (the full set when `batch == n`).
    Iseg { batch: usize },
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    /// Mean absolute summand, used for rounding slack.
    pub scale: f64,
}

impl Estimate {
    fn from_samples(values: &[f64]) -> Self {
        let m = values.len() as f64;
        let mean = values.iter().sum::<f64>() / m;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0)
        } else {
            0.0
        };
        let scale = values.iter().map(|v| v.abs()).sum::<f64>() / m;
        Estimate {
            mean,
            stderr: (var / m).sqrt(),
            scale,
        }
    }

    /// `mean <= z * stderr` up to rounding.
    pub fn within(&self, z: f64) -> bool {
        self.mean <= z * self.stderr + 1e-10 * self.scale.max(f64::MIN_POSITIVE)
    }
}

/// Margins (LHS - RHS, nonpositive when the inequality holds) at one point.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PointCertificate {
    pub dist_sq: f64,
    pub second_moment: Estimate,
    pub inner_product: Estimate,
    pub one_step: Estimate,
    pub ok: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CertificateReport {
    pub method: String,
    pub params: UnifiedParams,
    pub gamma: f64,
    pub alpha: f64,
    pub samples_per_point: usize,
    pub z: f64,
    pub points: Vec<PointCertificate>,
    pub violations: usize,
}

impl CertificateReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CertConfig {
    pub samples: usize,
    /// Allowed margin in standard errors.
    pub z: f64,
    pub seed: u64,
    pub exec: Execution,
}

impl Default for CertConfig {
    fn default() -> Self {
        CertConfig {
            samples: 10_000,
            z: 3.0,
            seed: 0,
            exec: Execution::Parallel,
        }
    }
}

struct Terms {
    second: f64,
    inner: f64,
    next: f64,
}

fn sample_terms<R: Rng>(op: &FiniteSumOperator, x_star: &Point, method: &CertMethod<'_>, params: &UnifiedParams, gamma: f64, alpha: f64, x: &Point, rng: &mut R, s: &mut Sample, s2: &mut Sample) -> Terms {
    let e = x - x_star;
    let d = e.norm_squared();
    let mut f = Point::zeros(op.dim());
    let (g, step, big_g) = match method {
        CertMethod::Sseg(an) => {
            an.scheme().draw_into(rng, s);
            if s.indices.is_empty() {
                return Terms {
                    second: -params.c * d - params.d1,
                    inner: params.rho * d - params.d2,
                    next: d - (1.0 + params.c - params.rho) * d - params.d1 - params.d2,
                };
            }
            let g1 = gamma * s.weight;
            op.mean_into(&s.indices, x, &mut f);
            let fx_sq = f.norm_squared();
            let xt = x - g1 * &f;
            op.mean_into(&s.indices, &xt, &mut f);
            let (l, mu) = an.spectrum(&s.indices);
            let b_hat = 1.0 - 4.0 * mu.abs() * g1 - 2.0 * l * l * g1 * g1;
            (f, alpha * g1, alpha * g1 * g1 * b_hat * fx_sq)
        }
        CertMethod::Iseg { batch } => {
            let n = op.n();
            let mut draw = |buf: &mut Sample| {
                buf.indices.clear();
                if *batch == n {
                    buf.indices.extend(0..n);
                } else {
                    buf.indices.extend((0..*batch).map(|_| rng.random_range(0..n)));
                }
            };
            draw(s);
            draw(s2);
            op.mean_into(&s.indices, x, &mut f);
            let fx_sq = f.norm_squared();
            let xt = x - gamma * &f;
            op.mean_into(&s2.indices, &xt, &mut f);
            (f, alpha * gamma, fx_sq)
        }
    };
    let ip = g.dot(&e);
    let next = (x - step * &g - x_star).norm_squared();
    Terms {
        second: step * step * g.norm_squared() - 2.0 * params.a * step * ip - params.c * d - params.d1,
        inner: params.rho * d + params.b * big_g - params.d2 - step * ip,
        next: next - (1.0 + params.c - params.rho) * d - params.d1 - params.d2,
    }
}

/// Monte Carlo margins of both inequalities and of the one-step recursion
/// `E||x+ - x*||^2 <= (1 + C - rho) ||x - x*||^2 + D1 + D2` at one point.
#[allow(clippy::too_many_arguments)]
pub fn certify_point<R: Rng>(op: &FiniteSumOperator, x_star: &Point, method: &CertMethod<'_>, params: &UnifiedParams, gamma: f64, alpha: f64, x: &Point, samples: usize, z: f64, rng: &mut R) -> PointCertificate {
    let samples = samples.max(1);
    let mut s = Sample::default();
    let mut s2 = Sample::default();
    let mut second = Vec::with_capacity(samples);
    let mut inner = Vec::with_capacity(samples);
    let mut next = Vec::with_capacity(samples);
    for _ in 0..samples {
        let t = sample_terms(op, x_star, method, params, gamma, alpha, x, rng, &mut s, &mut s2);
        second.push(t.second);
        inner.push(t.inner);
        next.push(t.next);
    }
    let (second, inner, one_step) = (Estimate::from_samples(&second), Estimate::from_samples(&inner), Estimate::from_samples(&next));
    PointCertificate {
        dist_sq: (x - x_star).norm_squared(),
        ok: second.within(z) && inner.within(z) && one_step.within(z),
        second_moment: second,
        inner_product: inner,
        one_step,
    }
}

/// Certifies the unified assumption at each of `points`, one RNG stream per
/// point.
#[allow(clippy::too_many_arguments)]
pub fn certify_unified(op: &FiniteSumOperator, x_star: &Point, method: &CertMethod<'_>, params: &UnifiedParams, gamma: f64, alpha: f64, points: &[Point], cfg: &CertConfig) -> Result<CertificateReport> {
    for p in points {
        if p.len() != op.dim() {
            return Err(Error::DimensionMismatch {
                expected: op.dim(),
                got: p.len(),
            });
        }
    }
    let certs = par::map_indices(cfg.exec, points.len(), |i| {
        let mut rng = rng_for(cfg.seed, i as u64);
        certify_point(op, x_star, method, params, gamma, alpha, &points[i], cfg.samples, cfg.z, &mut rng)
    });
    let violations = certs.iter().filter(|c| !c.ok).count();
    let label = match method {
        CertMethod::Sseg(an) => format!("sseg-{}", an.scheme().label()),
        CertMethod::Iseg { batch } => format!("iseg(b={batch})"),
    };
    Ok(CertificateReport {
        method: label,
        params: *params,
        gamma,
        alpha,
        samples_per_point: cfg.samples,
        z: cfg.z,
        points: certs,
        violations,
    })
}

/// Constants describing one (game, scheme, stepsize) configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TheoryReport {
    pub n: usize,
    pub dim: usize,
    pub l_max: f64,
    pub l_bar: f64,
    pub mu_min: f64,
    /// Constants of the averaged operator.
    pub l_full: f64,
    pub mu_full: f64,
    pub scheme: SchemeConstants,
    pub gamma: f64,
    pub alpha: f64,
    pub params: Option<UnifiedParams>,
    pub rho_tilde: f64,
    pub plateau: Option<f64>,
    pub r0_sq: Option<f64>,
    pub decreasing_bound: Option<RateBound>,
    pub iseg: IsegReport,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IsegReport {
    pub batch: usize,
    pub noise: FiniteSumNoise,
    /// Cap and constants with the measured `delta`, `sigma^2`.
    pub cap: f64,
    pub params: Option<UnifiedParams>,
    pub kappa: f64,
}

/// Collects the constants for a configuration. `gamma` defaults to the
/// scheme's closed-form cap.
pub fn theory_report(op: &FiniteSumOperator, x_star: &Point, analysis: &SchemeAnalysis<'_>, gamma: Option<f64>, alpha: f64, r0_sq: Option<f64>, iseg_batch: usize) -> Result<TheoryReport> {
    let consts = analysis.constants(x_star)?;
    let comp = analysis.component_constants();
    let l_max = comp.iter().map(|c| c.0).fold(0.0, f64::max);
    let l_bar = comp.iter().map(|c| c.0).sum::<f64>() / comp.len() as f64;
    let mu_min = comp.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    let (l_full, mu_full) = op.full_constants()?;
    let gamma = gamma.unwrap_or(consts.cap);
    let mut notes = Vec::new();
    let params = match sseg_params(&consts, gamma, alpha) {
        Ok(p) => Some(p),
        Err(e) => {
            notes.push(format!("same-sample constants unavailable: {e}"));
            None
        }
    };
    let plateau = params.and_then(|p| envelope(&p, 0.0).ok()).map(|b| b.limit());
    let rho_tilde = gamma * consts.mu_bar / 8.0;
    let decreasing_bound = r0_sq.and_then(|r| decreasing_bound_sseg(r, rho_tilde, gamma * gamma * consts.sigma_star_sq).ok());
    if consts.mu_bar_stderr.is_some() {
        notes.push("mu_bar estimated by Monte Carlo; envelopes are approximate".into());
    }
    if consts.spectra == crate::sampling::SpectraMode::Bounds {
        notes.push("per-sample constants use member-average bounds".into());
    }

    let noise = finite_sum_noise(op, x_star)?;
    let problem = IsegProblem {
        mu: mu_full.max(0.0),
        l: l_full,
        delta: noise.delta,
        sigma_sq: noise.sigma_sq,
        batch: iseg_batch,
    };
    let cap = iseg_cap(&problem);
    notes.push("I-SEG cap uses sqrt(6 (L^2 + 2 delta / b)); a variant with delta / b under the root also circulates".into());
    let iseg = IsegReport {
        batch: iseg_batch,
        noise,
        cap,
        params: iseg_params(&problem, cap, 0.25).ok(),
        kappa: kappa(&problem),
    };
    Ok(TheoryReport {
        n: op.n(),
        dim: op.dim(),
        l_max,
        l_bar,
        mu_min,
        l_full,
        mu_full,
        scheme: consts,
        gamma,
        alpha,
        params,
        rho_tilde,
        plateau,
        r0_sq,
        decreasing_bound,
        iseg,
        notes,
    })
}
