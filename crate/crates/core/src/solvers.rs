//! Extragradient iterations.
//!
//! Every method runs through the same kernel: evaluate a sample mean at `x`,
//! extrapolate, evaluate a sample mean at the extrapolated point, update.
//! Full-batch S-SEG, full-batch I-SEG and EG therefore produce bit-identical
//! trajectories.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::operators::{FiniteSumOperator, Point};
use crate::sampling::{Sample, SamplingScheme};
use crate::schedule::StepsizePolicy;

/// Divergence guard: squared distance may not exceed this multiple of the
/// initial one.
pub const DIVERGENCE_FACTOR: f64 = 1e12;

/// Stochastic oracle used by I-SEG.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IsegOracle {
    /// Batches of `b` i.i.d. uniform components; `b == n` means the full set.
    FiniteSum,
    /// `F(x)` plus Gaussian noise of total variance `delta ||x - x*||^2 + sigma_sq`
    /// per draw, averaged over the batch.
    Additive { delta: f64, sigma_sq: f64 },
}

#[derive(Clone, Debug)]
pub enum Method {
    /// Same-sample SEG under an arbitrary sampling scheme.
    Sseg(SamplingScheme),
    /// Independent-sample SEG with batch size `batch`.
    Iseg { batch: usize, oracle: IsegOracle },
    /// Deterministic extragradient.
    Eg,
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::Sseg(s) => format!("sseg-{}", s.label()),
            Method::Iseg { batch, .. } => format!("iseg(b={batch})"),
            Method::Eg => "eg".into(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolverConfig {
    pub method: Method,
    pub policy: StepsizePolicy,
    pub iterations: usize,
    pub record_every: usize,
    pub seed: u64,
    /// Independent RNG stream index, e.g. the run number within a sweep.
    pub stream: u64,
    /// Record `||F(x^k)||^2` at checkpoints (costs one full evaluation each).
    pub record_op_norm: bool,
    /// Keep the running average of `||F(x^j)||^2` over all iterations (costs one
    /// full evaluation per iteration). Used when no linear rate applies.
    pub track_avg_op_norm: bool,
}

impl SolverConfig {
    pub fn new(method: Method, policy: StepsizePolicy, iterations: usize) -> Self {
        SolverConfig {
            method,
            policy,
            iterations,
            record_every: default_stride(iterations),
            seed: 0,
            stream: 0,
            record_op_norm: true,
            track_avg_op_norm: false,
        }
    }

    pub fn seed(mut self, seed: u64, stream: u64) -> Self {
        self.seed = seed;
        self.stream = stream;
        self
    }

    pub fn record_every(mut self, stride: usize) -> Self {
        self.record_every = stride.max(1);
        self
    }

    pub fn record_op_norm(mut self, on: bool) -> Self {
        self.record_op_norm = on;
        self
    }

    pub fn track_avg_op_norm(mut self, on: bool) -> Self {
        self.track_avg_op_norm = on;
        self
    }

    fn validate(&self, op: &FiniteSumOperator) -> Result<()> {
        match &self.method {
            Method::Sseg(s) if s.n() != op.n() => Err(invalid("scheme size does not match the operator")),
            Method::Iseg { batch, .. } if *batch == 0 => Err(invalid("I-SEG batch must be >= 1")),
            Method::Iseg {
                oracle: IsegOracle::FiniteSum,
                batch,
            } if *batch > op.n() => Err(invalid("finite-sum I-SEG batch must be <= n")),
            Method::Iseg {
                oracle: IsegOracle::Additive { delta, sigma_sq },
                ..
            } if *delta < 0.0 || *sigma_sq < 0.0 => Err(invalid("noise parameters must be non-negative")),
            _ => Ok(()),
        }
    }
}

/// `ceil(K / 100)`, at least 1.
pub fn default_stride(iterations: usize) -> usize {
    iterations.div_ceil(100).max(1)
}

/// RNG for run `stream` of an experiment seeded with `seed`.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `N(0, scale^2 I)` drawn from its own stream.
pub fn gaussian_point(dim: usize, scale: f64, seed: u64, stream: u64) -> Point {
    let mut rng = rng_for(seed, stream);
    Point::from_fn(dim, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub k: usize,
    pub dist_sq: f64,
    pub op_norm_sq: Option<f64>,
    /// Stepsize multiplier applied at iteration `k`.
    pub beta: f64,
    pub avg_op_norm_sq: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub records: Vec<Record>,
    pub final_x: Point,
}

impl Trajectory {
    pub fn last(&self) -> &Record {
        self.records.last().expect("trajectory has the k = 0 record")
    }
}

struct Workspace {
    f: Point,
    xt: Point,
    s1: Sample,
    s2: Sample,
}

impl Workspace {
    fn new(dim: usize) -> Self {
        Workspace {
            f: Point::zeros(dim),
            xt: Point::zeros(dim),
            s1: Sample::default(),
            s2: Sample::default(),
        }
    }
}

/// `x~ = x - s1 F_{idx1}(x)`, `x <- x - s2 F_{idx2}(x~)`.
#[inline]
fn extragradient(op: &FiniteSumOperator, idx1: &[usize], idx2: &[usize], s1: f64, s2: f64, x: &mut Point, ws: &mut Workspace) {
    op.mean_into(idx1, x, &mut ws.f);
    ws.xt.copy_from(x);
    ws.xt.axpy(-s1, &ws.f, 1.0);
    op.mean_into(idx2, &ws.xt, &mut ws.f);
    x.axpy(-s2, &ws.f, 1.0);
}

fn noisy_full<R: Rng>(op: &FiniteSumOperator, x: &Point, x_star: &Point, batch: usize, delta: f64, sigma_sq: f64, rng: &mut R, out: &mut Point) {
    op.mean_into(op.all_indices(), x, out);
    let var = (delta * (x - x_star).norm_squared() + sigma_sq) / (batch as f64 * x.len() as f64);
    let sd = var.sqrt();
    for v in out.iter_mut() {
        *v += sd * rng.sample::<f64, _>(StandardNormal);
    }
}

fn full_norm_sq(op: &FiniteSumOperator, x: &Point, full: &mut Point) -> f64 {
    op.mean_into(op.all_indices(), x, full);
    full.norm_squared()
}

fn check_point(op: &FiniteSumOperator, x: &Point) -> Result<()> {
    if x.len() != op.dim() {
        return Err(Error::DimensionMismatch {
            expected: op.dim(),
            got: x.len(),
        });
    }
    Ok(())
}

fn finite_or_diverged(x: &Point, k: usize) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Diverged { k })
    }
}

/// One S-SEG step with sample `s`: effective stepsizes `beta gamma w` and
/// `alpha beta gamma w`. An empty sample (weight 0) leaves `x` unchanged.
pub fn sseg_step(op: &FiniteSumOperator, s: &Sample, x: &Point, gamma: f64, alpha: f64, beta: f64) -> Result<Point> {
    check_point(op, x)?;
    if s.indices.is_empty() {
        return Ok(x.clone());
    }
    if let Some(&i) = s.indices.iter().find(|&&i| i >= op.n()) {
        return Err(Error::IndexOutOfRange { index: i, n: op.n() });
    }
    let g1 = beta * gamma * s.weight;
    let mut ws = Workspace::new(op.dim());
    let mut out = x.clone();
    extragradient(op, &s.indices, &s.indices, g1, alpha * g1, &mut out, &mut ws);
    finite_or_diverged(&out, 1)?;
    Ok(out)
}

/// One I-SEG step on the finite-sum oracle with independent uniform batches
/// of size `b` (the full set when `b == n`).
pub fn iseg_step<R: Rng>(op: &FiniteSumOperator, x: &Point, b: usize, gamma1: f64, alpha: f64, rng: &mut R) -> Result<Point> {
    check_point(op, x)?;
    if b == 0 || b > op.n() {
        return Err(invalid("batch must satisfy 1 <= b <= n"));
    }
    let mut ws = Workspace::new(op.dim());
    let mut out = x.clone();
    if b == op.n() {
        extragradient(op, op.all_indices(), op.all_indices(), gamma1, alpha * gamma1, &mut out, &mut ws);
    } else {
        let draw = |rng: &mut R| (0..b).map(|_| rng.random_range(0..op.n())).collect::<Vec<_>>();
        let (i1, i2) = (draw(rng), draw(rng));
        extragradient(op, &i1, &i2, gamma1, alpha * gamma1, &mut out, &mut ws);
    }
    finite_or_diverged(&out, 1)?;
    Ok(out)
}

/// One deterministic EG step.
pub fn eg_step(op: &FiniteSumOperator, x: &Point, gamma1: f64, alpha: f64) -> Result<Point> {
    check_point(op, x)?;
    let mut ws = Workspace::new(op.dim());
    let mut out = x.clone();
    extragradient(op, op.all_indices(), op.all_indices(), gamma1, alpha * gamma1, &mut out, &mut ws);
    finite_or_diverged(&out, 1)?;
    Ok(out)
}

/// Runs `cfg.iterations` steps from `x0`, recording distances to `x_star`
/// at `k = 0`, every `record_every` iterations and at `K`.
pub fn run(op: &FiniteSumOperator, x0: &Point, x_star: &Point, cfg: &SolverConfig) -> Result<Trajectory> {
    check_point(op, x0)?;
    check_point(op, x_star)?;
    cfg.validate(op)?;
    let mut rng = rng_for(cfg.seed, cfg.stream);
    let mut ws = Workspace::new(op.dim());
    let mut x = x0.clone();
    let d0 = (&x - x_star).norm_squared();
    let limit = DIVERGENCE_FACTOR * d0.max(1.0);
    let stride = cfg.record_every.max(1);
    let k_total = cfg.iterations;

    let mut full = Point::zeros(op.dim());
    let mut avg_sum = 0.0;
    let mut avg_count = 0usize;
    if cfg.track_avg_op_norm {
        avg_sum += full_norm_sq(op, &x, &mut full);
        avg_count = 1;
    }

    let mut records = Vec::with_capacity(k_total / stride + 2);
    let record = |k: usize, x: &Point, full: &mut Point, avg_sum: f64, avg_count: usize| -> Result<Record> {
        Ok(Record {
            k,
            dist_sq: (x - x_star).norm_squared(),
            op_norm_sq: cfg.record_op_norm.then(|| full_norm_sq(op, x, full)),
            beta: cfg.policy.beta(k)?,
            avg_op_norm_sq: cfg.track_avg_op_norm.then(|| avg_sum / avg_count as f64),
        })
    };
    records.push(record(0, &x, &mut full, avg_sum, avg_count)?);

    for k in 0..k_total {
        let (g1, g2) = cfg.policy.steps(k)?;
        match &cfg.method {
            Method::Eg => extragradient(op, op.all_indices(), op.all_indices(), g1, g2, &mut x, &mut ws),
            Method::Sseg(scheme) => {
                scheme.draw_into(&mut rng, &mut ws.s1);
                if !ws.s1.indices.is_empty() {
                    let w = ws.s1.weight;
                    let idx = std::mem::take(&mut ws.s1.indices);
                    extragradient(op, &idx, &idx, g1 * w, g2 * w, &mut x, &mut ws);
                    ws.s1.indices = idx;
                }
            }
            Method::Iseg {
                batch,
                oracle: IsegOracle::FiniteSum,
            } => {
                if *batch == op.n() {
                    extragradient(op, op.all_indices(), op.all_indices(), g1, g2, &mut x, &mut ws);
                } else {
                    let n = op.n();
                    let mut i1 = std::mem::take(&mut ws.s1.indices);
                    let mut i2 = std::mem::take(&mut ws.s2.indices);
                    i1.clear();
                    i2.clear();
                    i1.extend((0..*batch).map(|_| rng.random_range(0..n)));
                    i2.extend((0..*batch).map(|_| rng.random_range(0..n)));
                    extragradient(op, &i1, &i2, g1, g2, &mut x, &mut ws);
                    ws.s1.indices = i1;
                    ws.s2.indices = i2;
                }
            }
            Method::Iseg {
                batch,
                oracle: IsegOracle::Additive { delta, sigma_sq },
            } => {
                noisy_full(op, &x, x_star, *batch, *delta, *sigma_sq, &mut rng, &mut ws.f);
                ws.xt.copy_from(&x);
                ws.xt.axpy(-g1, &ws.f, 1.0);
                noisy_full(op, &ws.xt, x_star, *batch, *delta, *sigma_sq, &mut rng, &mut ws.f);
                x.axpy(-g2, &ws.f, 1.0);
            }
        }
        let step = k + 1;
        let d = (&x - x_star).norm_squared();
        if !d.is_finite() || d > limit {
            return Err(Error::Diverged { k: step });
        }
        if cfg.track_avg_op_norm {
            avg_sum += full_norm_sq(op, &x, &mut full);
            avg_count += 1;
        }
        if step % stride == 0 || step == k_total {
            records.push(record(step, &x, &mut full, avg_sum, avg_count)?);
        }
    }
    Ok(Trajectory { records, final_x: x })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::Component;
    use approx::assert_abs_diff_eq;
    use nalgebra::{dmatrix, dvector};

    fn identity_op() -> FiniteSumOperator {
        FiniteSumOperator::new(vec![Component::affine(dmatrix![1.0], dvector![0.0]).unwrap()]).unwrap()
    }

    #[test]
    fn scalar_sseg_step() {
        let s = Sample {
            indices: vec![0],
            weight: 1.0,
        };
        let x = sseg_step(&identity_op(), &s, &dvector![1.0], 0.1, 0.25, 1.0).unwrap();
        assert_abs_diff_eq!(x[0], 0.9775, epsilon = 1e-15);
    }

    #[test]
    fn scalar_iseg_step() {
        let mut rng = rng_for(0, 0);
        let x = iseg_step(&identity_op(), &dvector![1.0], 1, 0.1, 0.25, &mut rng).unwrap();
        assert_abs_diff_eq!(x[0], 0.9775, epsilon = 1e-15);
    }

    #[test]
    fn empty_sample_is_a_no_op() {
        let s = Sample {
            indices: vec![],
            weight: 0.0,
        };
        let x = dvector![0.7];
        assert_eq!(sseg_step(&identity_op(), &s, &x, 0.1, 0.25, 1.0).unwrap(), x);
    }

    #[test]
    fn fixed_point_at_interpolating_root() {
        let op = FiniteSumOperator::new(vec![
            Component::affine(dmatrix![2.0], dvector![-2.0]).unwrap(),
            Component::affine(dmatrix![3.0], dvector![-3.0]).unwrap(),
        ])
        .unwrap();
        let xs = dvector![1.0];
        let s = Sample {
            indices: vec![1],
            weight: 1.0,
        };
        assert_eq!(sseg_step(&op, &s, &xs, 0.1, 0.25, 1.0).unwrap(), xs);
        let mut rng = rng_for(1, 0);
        assert_eq!(iseg_step(&op, &xs, 1, 0.1, 0.25, &mut rng).unwrap(), xs);
    }

    #[test]
    fn zero_iterations_records_start() {
        let op = identity_op();
        let policy = StepsizePolicy::constant(1.0 / 6.0, 0.25).unwrap();
        let cfg = SolverConfig::new(Method::Eg, policy, 0);
        let t = run(&op, &dvector![2.0], &dvector![0.0], &cfg).unwrap();
        assert_eq!(t.records.len(), 1);
        assert_eq!(t.records[0].k, 0);
        assert_eq!(t.records[0].dist_sq, 4.0);
        assert_eq!(t.records[0].op_norm_sq, Some(4.0));
    }

    #[test]
    fn eg_scalar_closed_form() {
        let op = identity_op();
        let gamma = 1.0 / 6.0;
        let policy = StepsizePolicy::constant(gamma, 0.25).unwrap();
        let cfg = SolverConfig::new(Method::Eg, policy, 40).record_every(1);
        let t = run(&op, &dvector![1.0], &dvector![0.0], &cfg).unwrap();
        let factor: f64 = 1.0 - 5.0 / 144.0;
        for r in &t.records {
            assert_abs_diff_eq!(r.dist_sq, factor.powi(2 * r.k as i32), epsilon = 1e-14);
            assert!(r.dist_sq <= (1.0 - 1.0 / 48.0f64).powi(r.k as i32));
        }
    }

    #[test]
    fn divergence_guard_trips() {
        let op = FiniteSumOperator::new(vec![Component::affine(dmatrix![-1.0], dvector![0.0]).unwrap()]).unwrap();
        let policy = StepsizePolicy::constant(1.0, 1.0).unwrap();
        let cfg = SolverConfig::new(Method::Eg, policy, 10_000);
        assert!(matches!(run(&op, &dvector![1.0], &dvector![0.0], &cfg), Err(Error::Diverged { .. })));
    }

    #[test]
    fn recording_stride() {
        let op = identity_op();
        let policy = StepsizePolicy::constant(0.1, 0.25).unwrap();
        let cfg = SolverConfig::new(Method::Eg, policy, 250).record_every(100);
        let ks: Vec<usize> = run(&op, &dvector![1.0], &dvector![0.0], &cfg).unwrap().records.iter().map(|r| r.k).collect();
        assert_eq!(ks, vec![0, 100, 200, 250]);
        assert_eq!(default_stride(100_000), 1000);
        assert_eq!(default_stride(0), 1);
    }

    #[test]
    fn average_tracking() {
        let op = identity_op();
        let policy = StepsizePolicy::constant(0.1, 0.25).unwrap();
        let cfg = SolverConfig::new(Method::Eg, policy, 3).record_every(1).track_avg_op_norm(true);
        let t = run(&op, &dvector![1.0], &dvector![0.0], &cfg).unwrap();
        let f = 0.9775f64;
        let expect = (1.0 + f.powi(2) + f.powi(4)) / 3.0;
        assert_abs_diff_eq!(t.records[2].avg_op_norm_sq.unwrap(), expect, epsilon = 1e-14);
    }

    #[test]
    fn config_validation() {
        let op = identity_op();
        let policy = StepsizePolicy::constant(0.1, 0.25).unwrap();
        let bad = SolverConfig::new(
            Method::Iseg {
                batch: 2,
                oracle: IsegOracle::FiniteSum,
            },
            policy,
            1,
        );
        assert!(run(&op, &dvector![1.0], &dvector![0.0], &bad).is_err());
        let wrong = SolverConfig::new(Method::Sseg(SamplingScheme::uniform(3, 1).unwrap()), policy, 1);
        assert!(run(&op, &dvector![1.0], &dvector![0.0], &wrong).is_err());
        let ok = SolverConfig::new(Method::Eg, policy, 1);
        assert!(run(&op, &dvector![1.0, 2.0], &dvector![0.0], &ok).is_err());
    }
}
