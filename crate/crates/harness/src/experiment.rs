//! Multi-seed sweeps: prepares each method, runs every (method, seed) pair,
//! and aggregates trajectories into mean / standard-error series.

use anyhow::{Context, Result};
use serde::Serialize;

use seg_core::operators::ROOT_TOL;
use seg_core::par::{self, Execution};
use seg_core::quadgame::{generate_game, QuadraticGame};
use seg_core::sampling::SchemeAnalysis;
use seg_core::schedule::{rho_tilde_iseg, rho_tilde_sseg, PolicyKind, StepsizePolicy};
use seg_core::solvers::{gaussian_point, run, IsegOracle, Method, SolverConfig, Trajectory};
use seg_core::theory::{self, IsegProblem, RateBound};
use seg_core::{FiniteSumOperator, Point};

use crate::config::{ExperimentConfig, GameSource, GammaRule, GammaSpec, MethodName, MethodSpec, Schedule};

/// Stream reserved for the shared initial point.
const INIT_STREAM: u64 = u64::MAX - 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Row {
    pub k: usize,
    pub mean_sq_dist: f64,
    pub stderr: f64,
    pub envelope: Option<f64>,
    pub beta_k: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Series {
    /// `<group>_<label>`, also the CSV file stem.
    pub name: String,
    pub metadata: Vec<(String, String)>,
    pub rows: Vec<Row>,
}

impl Series {
    pub fn r0_sq(&self) -> Option<f64> {
        self.rows.first().map(|r| r.mean_sq_dist)
    }

    /// First recorded `k` with mean squared distance at most `frac * R0^2`.
    pub fn time_to_threshold(&self, frac: f64) -> Option<usize> {
        let target = frac * self.r0_sq()?;
        self.rows.iter().find(|r| r.mean_sq_dist <= target).map(|r| r.k)
    }

    /// Mean of `mean_sq_dist` over rows with `k >= from`, and its standard error
    /// from the per-row errors (rows treated as independent).
    pub fn tail_mean(&self, from: usize) -> (f64, f64) {
        let tail: Vec<&Row> = self.rows.iter().filter(|r| r.k >= from).collect();
        let m = tail.len() as f64;
        let mean = tail.iter().map(|r| r.mean_sq_dist).sum::<f64>() / m;
        let se = tail.iter().map(|r| r.stderr * r.stderr).sum::<f64>().sqrt() / m;
        (mean, se)
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

/// A game with its solution and the shared starting point.
pub struct Instance {
    pub op: FiniteSumOperator,
    pub x_star: Point,
    pub x0: Point,
    pub description: String,
}

pub fn load_game(src: &GameSource) -> Result<QuadraticGame> {
    match src {
        GameSource::Generate(c) => Ok(generate_game(c)?),
        GameSource::File(p) => QuadraticGame::load(p).with_context(|| format!("loading {}", p.display())),
    }
}

fn describe(src: &GameSource) -> String {
    match src {
        GameSource::Generate(c) => serde_json::to_string(c).expect("config serializes"),
        GameSource::File(p) => p.display().to_string(),
    }
}

pub fn instance(src: &GameSource, init_scale: f64, seed: u64) -> Result<Instance> {
    let op = load_game(src)?.to_operator()?;
    let x_star = op.solve_root(ROOT_TOL)?;
    let x0 = gaussian_point(op.dim(), init_scale, seed, INIT_STREAM);
    Ok(Instance {
        op,
        x_star,
        x0,
        description: describe(src),
    })
}

/// A method resolved against a game: solver settings plus its envelope.
pub struct Prepared {
    pub label: String,
    pub solver: SolverConfig,
    pub gamma: f64,
    pub envelope: Envelope,
    pub metadata: Vec<(String, String)>,
}

/// Which theoretical bound fills the envelope column.
#[derive(Clone, Copy, Debug, Default)]
pub struct Envelope {
    /// Valid at every `k` reached with `beta = 1` throughout.
    pub constant_phase: Option<RateBound>,
    /// Valid only at the horizon `k = K`.
    pub at_horizon: Option<RateBound>,
}

impl Envelope {
    pub fn value(&self, policy: &StepsizePolicy, k: usize, total: usize) -> Option<f64> {
        if k == total {
            if let Some(b) = self.at_horizon {
                return Some(b.eval(k));
            }
        }
        let unit_so_far = k == 0 || policy.beta(k - 1).map(|b| b == 1.0).unwrap_or(false);
        match policy.kind {
            PolicyKind::DoubleDecay => None,
            _ if unit_so_far => self.constant_phase.map(|b| b.eval(k)),
            _ => None,
        }
    }

    fn kind(&self) -> &'static str {
        match (self.constant_phase.is_some(), self.at_horizon.is_some()) {
            (true, true) => "constant-phase linear bound; decreasing-schedule bound at k = K",
            (true, false) => "linear bound",
            (false, true) => "decreasing-schedule bound at k = K",
            (false, false) => "none",
        }
    }
}

fn fmt_f(v: f64) -> String {
    format!("{v}")
}

pub fn prepare(spec: &MethodSpec, inst: &Instance, iterations: usize, record_every: Option<usize>) -> Result<Prepared> {
    let op = &inst.op;
    let r0_sq = (&inst.x0 - &inst.x_star).norm_squared();
    let l_max = op.lipschitz()?.into_iter().fold(0.0, f64::max);
    let (l_full, mu_full) = op.full_constants()?;
    let mut meta: Vec<(String, String)> = Vec::new();
    let mut env = Envelope::default();
    let alpha = spec.alpha;
    let rule_gamma = |cap: f64, raw: f64| match spec.gamma {
        GammaSpec::Value(g) => g,
        GammaSpec::Rule(GammaRule::Cap) => cap,
        GammaSpec::Rule(GammaRule::RawCap) => raw,
        GammaSpec::Rule(GammaRule::HalfInvLmax) => 1.0 / (2.0 * l_max),
    };
    let theory_alpha = alpha <= 0.25;

    let (method, gamma, policy) = match spec.method {
        MethodName::Sseg => {
            let scheme = spec.scheme_spec()?.build(op)?;
            let an = SchemeAnalysis::new(&scheme, op)?;
            let consts = an.constants(&inst.x_star)?;
            let gamma = rule_gamma(consts.cap, consts.cap_raw);
            meta.push(("scheme".into(), scheme.label()));
            meta.push(("mu_bar".into(), fmt_f(consts.mu_bar)));
            meta.push(("sigma_star_sq".into(), fmt_f(consts.sigma_star_sq)));
            meta.push(("l_eff".into(), fmt_f(consts.l_eff)));
            meta.push(("gamma_cap".into(), fmt_f(consts.cap)));
            if let Some(se) = consts.mu_bar_stderr {
                meta.push(("mu_bar_stderr".into(), fmt_f(se)));
            }
            let policy = match spec.schedule {
                Schedule::Constant => StepsizePolicy::constant(gamma, alpha)?,
                Schedule::DoubleDecay => StepsizePolicy::double_decay(gamma, alpha)?,
                Schedule::Decreasing => match rho_tilde_sseg(&consts, gamma) {
                    Ok(rt) if rt > 0.0 => {
                        meta.push(("rho_tilde".into(), fmt_f(rt)));
                        if alpha == 0.25 {
                            env.at_horizon = theory::decreasing_bound_sseg(r0_sq, rt, gamma * gamma * consts.sigma_star_sq).ok();
                        }
                        StepsizePolicy::decreasing(gamma, alpha, iterations, rt)?
                    }
                    _ => {
                        meta.push(("fallback".into(), "rho_tilde <= 0: constant stepsize, averaged operator norm tracked".into()));
                        StepsizePolicy::constant(gamma, alpha)?
                    }
                },
            };
            if theory_alpha && spec.schedule != Schedule::DoubleDecay {
                env.constant_phase = theory::sseg_envelope(&consts, gamma, alpha, r0_sq).ok();
            }
            (Method::Sseg(scheme), gamma, policy)
        }
        MethodName::Iseg => {
            let noise = theory::finite_sum_noise(op, &inst.x_star)?;
            // Finite-sum convention for the envelope: delta = 0, sigma^2 = sigma_US^2.
            let prob = IsegProblem {
                mu: mu_full.max(0.0),
                l: l_full,
                delta: 0.0,
                sigma_sq: noise.sigma_star_sq,
                batch: spec.batch,
            };
            let cap = theory::iseg_cap(&prob);
            let gamma = rule_gamma(cap, cap);
            meta.push(("batch".into(), spec.batch.to_string()));
            meta.push(("mu".into(), fmt_f(mu_full)));
            meta.push(("L".into(), fmt_f(l_full)));
            meta.push(("sigma_sq".into(), fmt_f(noise.sigma_star_sq)));
            meta.push(("noise_convention".into(), "delta = 0, sigma^2 = sigma_US*^2".into()));
            meta.push(("gamma_cap".into(), fmt_f(cap)));
            let policy = match spec.schedule {
                Schedule::Constant => StepsizePolicy::constant(gamma, alpha)?,
                Schedule::DoubleDecay => StepsizePolicy::double_decay(gamma, alpha)?,
                Schedule::Decreasing => {
                    let rt = rho_tilde_iseg(prob.mu, gamma);
                    if rt > 0.0 {
                        meta.push(("rho_tilde".into(), fmt_f(rt)));
                        if alpha == 0.25 {
                            env.at_horizon = theory::decreasing_bound_iseg(&prob, gamma, r0_sq).ok();
                        }
                        StepsizePolicy::decreasing(gamma, alpha, iterations, rt)?
                    } else {
                        meta.push(("fallback".into(), "rho_tilde <= 0: constant stepsize, averaged operator norm tracked".into()));
                        StepsizePolicy::constant(gamma, alpha)?
                    }
                }
            };
            if theory_alpha && spec.schedule != Schedule::DoubleDecay {
                env.constant_phase = theory::iseg_envelope(&prob, gamma, alpha, r0_sq).ok();
            }
            let method = Method::Iseg {
                batch: spec.batch,
                oracle: IsegOracle::FiniteSum,
            };
            (method, gamma, policy)
        }
        MethodName::Eg => {
            let cap = 1.0 / (6.0 * l_full);
            let raw = 1.0 / (4.0 * mu_full.abs() + std::f64::consts::SQRT_2 * l_full);
            let gamma = rule_gamma(cap, raw);
            meta.push(("mu".into(), fmt_f(mu_full)));
            meta.push(("L".into(), fmt_f(l_full)));
            let policy = match spec.schedule {
                Schedule::DoubleDecay => StepsizePolicy::double_decay(gamma, alpha)?,
                _ => StepsizePolicy::constant(gamma, alpha)?,
            };
            if theory_alpha && spec.schedule != Schedule::DoubleDecay && gamma <= raw && mu_full > 0.0 {
                env.constant_phase = Some(RateBound::Linear {
                    factor: 1.0 - alpha * gamma * mu_full / 2.0,
                    r0_sq,
                    plateau: 0.0,
                });
            }
            (Method::Eg, gamma, policy)
        }
    };

    let fallback = meta.iter().any(|(k, _)| k == "fallback");
    let mut solver = SolverConfig::new(method, policy, iterations).track_avg_op_norm(fallback).record_op_norm(false);
    if let Some(s) = record_every {
        solver = solver.record_every(s);
    }
    let label = spec.label();
    let mut metadata = vec![
        ("method".into(), solver.method.label()),
        ("schedule".into(), format!("{:?}", spec.schedule).to_lowercase()),
        ("gamma".into(), fmt_f(gamma)),
        ("alpha".into(), fmt_f(alpha)),
        ("iterations".into(), iterations.to_string()),
        ("record_every".into(), solver.record_every.to_string()),
        ("r0_sq".into(), fmt_f(r0_sq)),
    ];
    metadata.extend(meta);
    metadata.push(("envelope".into(), env.kind().into()));
    Ok(Prepared {
        label,
        solver,
        gamma,
        envelope: env,
        metadata,
    })
}

/// Mean and standard error across seeds, row by row.
pub fn aggregate(trajs: &[Trajectory], prepared: &Prepared) -> Series {
    let s = trajs.len() as f64;
    let first = &trajs[0].records;
    let total = prepared.solver.iterations;
    let rows = first
        .iter()
        .enumerate()
        .map(|(j, rec)| {
            let vals: Vec<f64> = trajs.iter().map(|t| t.records[j].dist_sq).collect();
            let mean = vals.iter().sum::<f64>() / s;
            let stderr = if trajs.len() > 1 {
                (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (s - 1.0) / s).sqrt()
            } else {
                0.0
            };
            Row {
                k: rec.k,
                mean_sq_dist: mean,
                stderr,
                envelope: prepared.envelope.value(&prepared.solver.policy, rec.k, total),
                beta_k: rec.beta,
            }
        })
        .collect();
    let mut metadata = prepared.metadata.clone();
    let avgs: Option<Vec<f64>> = trajs.iter().map(|t| t.last().avg_op_norm_sq).collect();
    if let Some(a) = avgs {
        metadata.push(("final_avg_op_norm_sq".into(), fmt_f(a.iter().sum::<f64>() / s)));
    }
    Series {
        name: String::new(),
        metadata,
        rows,
    }
}

/// Runs every configured (group, method, seed) and returns one series per
/// (group, method), in configuration order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<Series>> {
    cfg.validate()?;
    par::with_jobs(cfg.jobs, || run_inner(cfg))
}

fn run_inner(cfg: &ExperimentConfig) -> Result<Vec<Series>> {
    let mut units = Vec::new();
    let mut instances = Vec::new();
    for (gi, group) in cfg.groups.iter().enumerate() {
        let inst = instance(&group.game, cfg.init_scale, cfg.base_seed).with_context(|| format!("group '{}'", group.name))?;
        for spec in &group.methods {
            let p = prepare(spec, &inst, cfg.iterations, cfg.record_every).with_context(|| format!("method '{}'", spec.label()))?;
            units.push((gi, p));
        }
        instances.push(inst);
    }

    let jobs: Vec<(usize, usize)> = (0..units.len()).flat_map(|u| (0..cfg.seeds).map(move |s| (u, s))).collect();
    let results = par::map_indices(Execution::Parallel, jobs.len(), |j| {
        let (u, s) = jobs[j];
        let (gi, p) = &units[u];
        let inst = &instances[*gi];
        let solver = p.solver.clone().seed(cfg.base_seed, ((u as u64) << 32) | s as u64);
        run(&inst.op, &inst.x0, &inst.x_star, &solver)
    });

    let mut out = Vec::with_capacity(units.len());
    let mut it = results.into_iter();
    for (gi, p) in &units {
        let trajs = it
            .by_ref()
            .take(cfg.seeds)
            .collect::<std::result::Result<Vec<_>, _>>()
            .with_context(|| format!("method '{}'", p.label))?;
        let group = &cfg.groups[*gi];
        let mut series = aggregate(&trajs, p);
        series.name = sanitize(&format!("{}_{}", group.name, p.label));
        let mut meta = vec![
            ("preset".to_string(), cfg.preset.name().to_string()),
            ("series".to_string(), series.name.clone()),
            ("group".to_string(), group.name.clone()),
            ("label".to_string(), p.label.clone()),
            ("seeds".to_string(), cfg.seeds.to_string()),
            ("base_seed".to_string(), cfg.base_seed.to_string()),
            ("init_scale".to_string(), fmt_f(cfg.init_scale)),
            ("game".to_string(), instances[*gi].description.clone()),
        ];
        meta.append(&mut series.metadata);
        series.metadata = meta;
        out.push(series);
    }
    Ok(out)
}

fn sanitize(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '-' }).collect()
}
