//! Arbitrary sampling: index distributions with sample-dependent stepsize
//! multipliers `w = gamma_{1,xi} / gamma`.
//!
//! Expectations over a scheme are computed by exhaustive enumeration when the
//! number of outcomes is at most [`ENUMERATION_LIMIT`], otherwise by a closed
//! form or Monte Carlo with a reported standard error.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::operators::{affine_constants, FiniteSumOperator, Point};

/// Outcome count up to which expectations are enumerated exactly.
pub const ENUMERATION_LIMIT: f64 = 1e6;
/// Outcome count up to which per-sample spectra are computed exactly from the
/// averaged sample matrix instead of bounded by component constants.
pub const SPECTRAL_LIMIT: f64 = 1e4;
/// Monte Carlo draws used when enumeration is infeasible.
pub const MC_DRAWS: usize = 100_000;
const MC_SEED: u64 = 0x5e9_c0de;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SchemeKind {
    /// `b` i.i.d. uniform indices.
    Uniform { b: usize },
    /// One index with probability proportional to `L_i`.
    Importance { lipschitz: Vec<f64> },
    /// Uniform `b`-subset without replacement.
    BNice { b: usize },
    /// `b` i.i.d. indices from `probs`.
    IndepWithReplacement { b: usize, probs: Vec<f64> },
    /// Each index included independently with probability `probs[i]`.
    Iswor { probs: Vec<f64> },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Sample {
    pub indices: Vec<usize>,
    pub weight: f64,
}

#[derive(Clone, Debug)]
pub struct SamplingScheme {
    n: usize,
    kind: SchemeKind,
    table: Option<WeightedIndex<f64>>,
    // Per-index weight factors: for Importance the weight itself, for
    // with-replacement draws 1/(n p_i), for ISWOR the included/excluded
    // factors 1/(2 p_i) and 1/(2 (1 - p_i)).
    inc: Vec<f64>,
    exc: Vec<f64>,
}

fn check_probs(probs: &[f64], sum_to_one: bool) -> Result<()> {
    if probs.is_empty() {
        return Err(invalid("probability vector is empty"));
    }
    if probs.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
        return Err(invalid("probabilities must lie in (0, 1]"));
    }
    if sum_to_one {
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("probabilities sum to {s}, not 1")));
        }
    }
    Ok(())
}

fn check_batch(n: usize, b: usize) -> Result<()> {
    if n == 0 || b == 0 || b > n {
        return Err(invalid(format!("batch size must satisfy 1 <= b <= n, got b = {b}, n = {n}")));
    }
    Ok(())
}

impl SamplingScheme {
    pub fn uniform(n: usize, b: usize) -> Result<Self> {
        check_batch(n, b)?;
        Ok(Self::bare(n, SchemeKind::Uniform { b }))
    }

    pub fn importance(lipschitz: &[f64]) -> Result<Self> {
        let n = lipschitz.len();
        if n == 0 || lipschitz.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(invalid("importance sampling needs positive finite L_i"));
        }
        let l_bar = lipschitz.iter().sum::<f64>() / n as f64;
        let mut s = Self::bare(
            n,
            SchemeKind::Importance {
                lipschitz: lipschitz.to_vec(),
            },
        );
        s.table = Some(WeightedIndex::new(lipschitz).map_err(|e| invalid(e.to_string()))?);
        s.inc = lipschitz.iter().map(|&l| l_bar / l).collect();
        Ok(s)
    }

    pub fn b_nice(n: usize, b: usize) -> Result<Self> {
        check_batch(n, b)?;
        Ok(Self::bare(n, SchemeKind::BNice { b }))
    }

    pub fn indep_with_replacement(b: usize, probs: &[f64]) -> Result<Self> {
        check_probs(probs, true)?;
        let n = probs.len();
        check_batch(n, b)?;
        let mut s = Self::bare(
            n,
            SchemeKind::IndepWithReplacement {
                b,
                probs: probs.to_vec(),
            },
        );
        s.table = Some(WeightedIndex::new(probs).map_err(|e| invalid(e.to_string()))?);
        s.inc = probs.iter().map(|&p| 1.0 / (n as f64 * p)).collect();
        Ok(s)
    }

    pub fn iswor(probs: &[f64]) -> Result<Self> {
        check_probs(probs, false)?;
        let mut s = Self::bare(
            probs.len(),
            SchemeKind::Iswor {
                probs: probs.to_vec(),
            },
        );
        s.inc = probs.iter().map(|&p| 0.5 / p).collect();
        s.exc = probs.iter().map(|&p| 0.5 / (1.0 - p)).collect();
        Ok(s)
    }

    fn bare(n: usize, kind: SchemeKind) -> Self {
        SamplingScheme {
            n,
            kind,
            table: None,
            inc: Vec::new(),
            exc: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> &SchemeKind {
        &self.kind
    }

    /// Short label such as `us(b=1)` or `nice(b=4)`.
    pub fn label(&self) -> String {
        match &self.kind {
            SchemeKind::Uniform { b } => format!("us(b={b})"),
            SchemeKind::Importance { .. } => "is".into(),
            SchemeKind::BNice { b } => format!("nice(b={b})"),
            SchemeKind::IndepWithReplacement { b, .. } => format!("iwr(b={b})"),
            SchemeKind::Iswor { .. } => "iswor".into(),
        }
    }

    /// True when every draw is the full index set `0..n` with weight 1.
    pub fn is_full_batch(&self) -> bool {
        matches!(self.kind, SchemeKind::BNice { b } if b == self.n)
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Sample {
        let mut s = Sample::default();
        self.draw_into(rng, &mut s);
        s
    }

    /// Draws into a reusable buffer.
    pub fn draw_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Sample) {
        out.indices.clear();
        let n = self.n;
        match &self.kind {
            SchemeKind::Uniform { b } => {
                out.indices.extend((0..*b).map(|_| rng.random_range(0..n)));
                out.weight = 1.0;
            }
            SchemeKind::Importance { .. } => {
                let i = self.table.as_ref().expect("importance table").sample(rng);
                out.indices.push(i);
                out.weight = self.inc[i];
            }
            SchemeKind::BNice { b } => {
                if *b == n {
                    out.indices.extend(0..n);
                } else {
                    out.indices.extend(rand::seq::index::sample(rng, n, *b).iter());
                    out.indices.sort_unstable();
                }
                out.weight = 1.0;
            }
            SchemeKind::IndepWithReplacement { b, .. } => {
                let table = self.table.as_ref().expect("iwr table");
                let mut w = 1.0;
                for _ in 0..*b {
                    let i = table.sample(rng);
                    w *= self.inc[i];
                    out.indices.push(i);
                }
                out.weight = w;
            }
            SchemeKind::Iswor { probs } => {
                let mut w = 1.0;
                for (i, &p) in probs.iter().enumerate() {
                    if rng.random::<f64>() < p {
                        out.indices.push(i);
                        w *= self.inc[i];
                    } else {
                        w *= self.exc[i];
                    }
                }
                out.weight = if out.indices.is_empty() {
                    0.0
                } else {
                    2.0 * w * out.indices.len() as f64 / n as f64
                };
            }
        }
    }

    /// Number of distinct outcomes the enumerator visits (tuples for
    /// with-replacement schemes, subsets otherwise).
    pub fn outcome_count(&self) -> f64 {
        let n = self.n as f64;
        match &self.kind {
            SchemeKind::Uniform { b } | SchemeKind::IndepWithReplacement { b, .. } => n.powi(*b as i32),
            SchemeKind::Importance { .. } => n,
            SchemeKind::BNice { b } => binomial(self.n, *b),
            SchemeKind::Iswor { .. } => 2f64.powi(self.n as i32),
        }
    }

    pub fn enumerable(&self) -> bool {
        self.outcome_count() <= ENUMERATION_LIMIT
    }

    /// Visits every outcome as `(indices, probability, weight)`, skipping
    /// outcomes of probability zero. Returns `false` without visiting anything
    /// when the outcome count exceeds `limit`.
    pub fn for_each_outcome(&self, limit: f64, mut f: impl FnMut(&[usize], f64, f64)) -> bool {
        if self.outcome_count() > limit {
            return false;
        }
        let n = self.n;
        match &self.kind {
            SchemeKind::Uniform { b } => {
                let p = (n as f64).powi(-(*b as i32));
                for_each_tuple(n, *b, |t| f(t, p, 1.0));
            }
            SchemeKind::Importance { lipschitz } => {
                let total: f64 = lipschitz.iter().sum();
                for i in 0..n {
                    f(&[i], lipschitz[i] / total, self.inc[i]);
                }
            }
            SchemeKind::BNice { b } => {
                let p = 1.0 / binomial(n, *b);
                for_each_combination(n, *b, |c| f(c, p, 1.0));
            }
            SchemeKind::IndepWithReplacement { b, probs } => {
                for_each_tuple(n, *b, |t| {
                    let p: f64 = t.iter().map(|&i| probs[i]).product();
                    let w: f64 = t.iter().map(|&i| self.inc[i]).product();
                    f(t, p, w)
                });
            }
            SchemeKind::Iswor { probs } => {
                let mut idx = Vec::with_capacity(n);
                for mask in 0u64..(1u64 << n) {
                    idx.clear();
                    let mut p = 1.0;
                    let mut w = 1.0;
                    for (i, &pi) in probs.iter().enumerate() {
                        if mask >> i & 1 == 1 {
                            idx.push(i);
                            p *= pi;
                            w *= self.inc[i];
                        } else {
                            p *= 1.0 - pi;
                            w *= self.exc[i];
                        }
                    }
                    if p == 0.0 {
                        continue;
                    }
                    let w = if idx.is_empty() { 0.0 } else { 2.0 * w * idx.len() as f64 / n as f64 };
                    f(&idx, p, w);
                }
            }
        }
        true
    }

    /// Largest multiplier any realizable sample can carry.
    pub fn max_weight(&self) -> f64 {
        match &self.kind {
            SchemeKind::Uniform { .. } | SchemeKind::BNice { .. } => 1.0,
            SchemeKind::Importance { .. } => self.inc.iter().fold(0.0, |a, &w| a.max(w)),
            SchemeKind::IndepWithReplacement { b, .. } => self.inc.iter().fold(0.0_f64, |a, &w| a.max(w)).powi(*b as i32),
            SchemeKind::Iswor { .. } => {
                let mut best = 0.0_f64;
                if self.for_each_outcome(ENUMERATION_LIMIT, |_, _, w| best = best.max(w)) {
                    best
                } else {
                    // |S| <= n, and each index contributes its larger factor.
                    2.0 * self.inc.iter().zip(&self.exc).map(|(a, b)| a.max(*b)).product::<f64>()
                }
            }
        }
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64).round()
}

fn for_each_tuple(n: usize, b: usize, mut f: impl FnMut(&[usize])) {
    let mut t = vec![0usize; b];
    loop {
        f(&t);
        let mut pos = b;
        loop {
            if pos == 0 {
                return;
            }
            pos -= 1;
            t[pos] += 1;
            if t[pos] < n {
                break;
            }
            t[pos] = 0;
        }
    }
}

fn for_each_combination(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    let mut c: Vec<usize> = (0..k).collect();
    loop {
        f(&c);
        let mut i = k;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if c[i] < n - k + i {
                break;
            }
            if i == 0 {
                return;
            }
        }
        c[i] += 1;
        for j in i + 1..k {
            c[j] = c[j - 1] + 1;
        }
    }
}

/// `mu * 1{mu >= 0} + 4 mu * 1{mu < 0}`.
#[inline]
pub fn indicator_weighted(mu: f64) -> f64 {
    if mu >= 0.0 {
        mu
    } else {
        4.0 * mu
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectraMode {
    /// Per-sample `L_xi`, `mu_xi` from the spectrum of the averaged matrix.
    Exact,
    /// Mean of member `L_i` (upper bound) and of member `mu_i` (lower bound).
    Bounds,
}

/// Per-sample constants of a scheme on an operator.
#[derive(Debug)]
pub struct SchemeAnalysis<'a> {
    scheme: &'a SamplingScheme,
    op: &'a FiniteSumOperator,
    consts: Vec<(f64, f64)>,
    exact: Option<HashMap<Vec<usize>, (f64, f64)>>,
}

fn sorted_key(indices: &[usize]) -> Vec<usize> {
    let mut k = indices.to_vec();
    k.sort_unstable();
    k
}

impl<'a> SchemeAnalysis<'a> {
    pub fn new(scheme: &'a SamplingScheme, op: &'a FiniteSumOperator) -> Result<Self> {
        if scheme.n() != op.n() {
            return Err(invalid(format!("scheme is for n = {}, operator has n = {}", scheme.n(), op.n())));
        }
        let consts = op.constants()?;
        let single = matches!(scheme.kind(), SchemeKind::Importance { .. } | SchemeKind::Uniform { b: 1 });
        let affine = op.components().iter().all(|c| c.is_affine());
        let exact = if !single && affine && scheme.outcome_count() <= SPECTRAL_LIMIT {
            let mut keys = Vec::new();
            let mut seen = std::collections::HashSet::new();
            scheme.for_each_outcome(SPECTRAL_LIMIT, |idx, _, _| {
                if idx.is_empty() {
                    return;
                }
                let k = sorted_key(idx);
                if seen.insert(k.clone()) {
                    keys.push(k);
                }
            });
            let spectra = crate::par::map_indices(crate::par::Execution::Parallel, keys.len(), |j| {
                let k = &keys[j];
                if k.iter().all(|&i| i == k[0]) {
                    Ok(consts[k[0]])
                } else {
                    op.mean_matrix(k).map(|m| affine_constants(&m))
                }
            });
            let mut map = HashMap::with_capacity(keys.len());
            for (k, s) in keys.into_iter().zip(spectra) {
                map.insert(k, s?);
            }
            Some(map)
        } else {
            None
        };
        Ok(SchemeAnalysis {
            scheme,
            op,
            consts,
            exact,
        })
    }

    pub fn scheme(&self) -> &SamplingScheme {
        self.scheme
    }

    pub fn component_constants(&self) -> &[(f64, f64)] {
        &self.consts
    }

    pub fn spectra_mode(&self) -> SpectraMode {
        let single = matches!(self.scheme.kind(), SchemeKind::Importance { .. } | SchemeKind::Uniform { b: 1 });
        if single || self.exact.is_some() {
            SpectraMode::Exact
        } else {
            SpectraMode::Bounds
        }
    }

    /// `(L_xi, mu_xi)` for a sample.
    pub fn spectrum(&self, indices: &[usize]) -> (f64, f64) {
        if indices.len() == 1 {
            return self.consts[indices[0]];
        }
        if let Some(map) = &self.exact {
            if let Some(&s) = map.get(&sorted_key(indices)) {
                return s;
            }
        }
        bound_spectrum(&self.consts, indices)
    }

    /// `E[w mu_xi (1{mu_xi >= 0} + 4 1{mu_xi < 0})]`, with a standard error
    /// when estimated by Monte Carlo.
    pub fn mu_bar(&self) -> (f64, Option<f64>) {
        weighted_mu_aggregate(self.scheme, &self.consts, |idx| self.spectrum(idx))
    }

    /// `max_xi w_xi L_xi`, the Lipschitz scale in the closed-form cap.
    pub fn l_eff(&self) -> f64 {
        let ls: Vec<f64> = self.consts.iter().map(|c| c.0).collect();
        let l_max = ls.iter().fold(0.0_f64, |a, &l| a.max(l));
        match self.scheme.kind() {
            SchemeKind::Uniform { .. } => l_max,
            SchemeKind::Importance { lipschitz } => lipschitz.iter().sum::<f64>() / lipschitz.len() as f64,
            kind => {
                let mut best = 0.0_f64;
                let done = self.scheme.for_each_outcome(ENUMERATION_LIMIT, |idx, _, w| {
                    if !idx.is_empty() {
                        best = best.max(w * self.spectrum(idx).0);
                    }
                });
                if done {
                    return best;
                }
                match kind {
                    SchemeKind::BNice { b } => {
                        let mut sorted = ls.clone();
                        sorted.sort_by(|a, b| b.total_cmp(a));
                        sorted[..*b].iter().sum::<f64>() / *b as f64
                    }
                    SchemeKind::IndepWithReplacement { .. } => self.scheme.max_weight() * l_max,
                    SchemeKind::Iswor { .. } => iswor_greedy_l_eff(self.scheme, &ls),
                    _ => unreachable!(),
                }
            }
        }
    }

    /// `1 / (6 L_eff)`: the closed-form base stepsize cap.
    pub fn cap(&self) -> f64 {
        1.0 / (6.0 * self.l_eff())
    }

    /// Largest base stepsize for which every realizable sample satisfies
    /// `w gamma <= 1 / (4 |mu_xi| + sqrt(2) L_xi)`.
    pub fn cap_raw(&self) -> f64 {
        let s2 = std::f64::consts::SQRT_2;
        let per = |(l, mu): (f64, f64)| 4.0 * mu.abs() + s2 * l;
        let worst = match self.scheme.kind() {
            SchemeKind::Uniform { .. } => self.consts.iter().map(|&c| per(c)).fold(0.0, f64::max),
            SchemeKind::Importance { .. } => self
                .consts
                .iter()
                .zip(&self.scheme.inc)
                .map(|(&c, &w)| w * per(c))
                .fold(0.0, f64::max),
            _ => {
                let mut worst = 0.0_f64;
                let done = self.scheme.for_each_outcome(ENUMERATION_LIMIT, |idx, _, w| {
                    if !idx.is_empty() {
                        worst = worst.max(w * per(self.spectrum(idx)));
                    }
                });
                if done {
                    worst
                } else {
                    // |mu_S| <= L_S <= max L_i for averaged samples.
                    let l_max = self.consts.iter().map(|c| c.0).fold(0.0, f64::max);
                    self.scheme.max_weight() * (4.0 + s2) * l_max
                }
            }
        };
        if worst == 0.0 {
            f64::INFINITY
        } else {
            1.0 / worst
        }
    }

    /// `E[w^2 ||F_xi(x*)||^2]`, exact for every scheme.
    pub fn sigma_star_sq(&self, x_star: &Point) -> Result<f64> {
        check_root(self.op, x_star)?;
        let fs = component_values(self.op, x_star);
        Ok(sigma_from_values(self.scheme, &fs))
    }

    pub fn constants(&self, x_star: &Point) -> Result<SchemeConstants> {
        let (mu_bar, mu_bar_stderr) = self.mu_bar();
        let l_eff = self.l_eff();
        Ok(SchemeConstants {
            scheme: self.scheme.label(),
            mu_bar,
            mu_bar_stderr,
            sigma_star_sq: self.sigma_star_sq(x_star)?,
            l_eff,
            cap: 1.0 / (6.0 * l_eff),
            cap_raw: self.cap_raw(),
            spectra: self.spectra_mode(),
        })
    }

    /// Checks unbiasedness at `x*` and nonnegativity of the weighted mu
    /// aggregate.
    pub fn verify_conditions(&self, x_star: &Point) -> Result<ConditionReport> {
        check_dim(self.op, x_star)?;
        let fs = component_values(self.op, x_star);
        let (mean, exact) = match expectation_from_values(self.scheme, &fs) {
            Some(m) => (m, true),
            // Every scheme here is unbiased by construction, so the weighted
            // expectation equals F(x*).
            None => (self.op.eval_full(x_star)?, false),
        };
        let scale = fs.iter().map(|f| f.norm()).fold(0.0, f64::max) * self.scheme.max_weight().max(1.0);
        let residual = mean.norm();
        let (mu_bar, se) = self.mu_bar();
        Ok(ConditionReport {
            scheme: self.scheme.label(),
            unbiased_residual: residual,
            unbiased_tolerance: 1e-9 * scale.max(1.0),
            unbiased_holds: residual <= 1e-9 * scale.max(1.0),
            unbiased_exact: exact,
            mu_bar,
            mu_bar_stderr: se,
            mu_bar_holds: mu_bar >= 0.0,
        })
    }
}

fn bound_spectrum(consts: &[(f64, f64)], indices: &[usize]) -> (f64, f64) {
    let k = indices.len() as f64;
    let (l, mu) = indices
        .iter()
        .fold((0.0, 0.0), |(l, m), &i| (l + consts[i].0, m + consts[i].1));
    (l / k, mu / k)
}

fn weighted_mu_aggregate(scheme: &SamplingScheme, consts: &[(f64, f64)], spectrum: impl Fn(&[usize]) -> (f64, f64)) -> (f64, Option<f64>) {
    let mut acc = 0.0;
    let done = scheme.for_each_outcome(ENUMERATION_LIMIT, |idx, p, w| {
        if !idx.is_empty() {
            acc += p * w * indicator_weighted(spectrum(idx).1);
        }
    });
    if done {
        return (acc, None);
    }
    if consts.iter().all(|c| c.1 >= 0.0) {
        // With nonnegative member constants the subset-mean bound is
        // nonnegative, and unbiasedness of the weights gives the plain mean.
        let m = consts.iter().map(|c| c.1).sum::<f64>() / consts.len() as f64;
        return (m, None);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(MC_SEED);
    let mut s = Sample::default();
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..MC_DRAWS {
        scheme.draw_into(&mut rng, &mut s);
        let v = if s.indices.is_empty() {
            0.0
        } else {
            s.weight * indicator_weighted(spectrum(&s.indices).1)
        };
        sum += v;
        sum_sq += v * v;
    }
    let m = MC_DRAWS as f64;
    let mean = sum / m;
    let var = (sum_sq / m - mean * mean).max(0.0) * m / (m - 1.0);
    (mean, Some((var / m).sqrt()))
}

fn iswor_greedy_l_eff(scheme: &SamplingScheme, ls: &[f64]) -> f64 {
    let n = ls.len();
    let ratio: Vec<f64> = scheme.inc.iter().zip(&scheme.exc).map(|(a, b)| a / b).collect();
    let base: f64 = 2.0 * scheme.exc.iter().product::<f64>() / n as f64;
    let objective = |set: &[bool]| {
        let (mut sl, mut prod) = (0.0, 1.0);
        for i in 0..n {
            if set[i] {
                sl += ls[i];
                prod *= ratio[i];
            }
        }
        base * sl * prod
    };
    let mut set: Vec<bool> = ratio.iter().map(|&r| r >= 1.0).collect();
    if !set.iter().any(|&s| s) {
        let best = (0..n)
            .max_by(|&a, &b| (ls[a] * ratio[a]).total_cmp(&(ls[b] * ratio[b])))
            .expect("n >= 1");
        set[best] = true;
    }
    let mut value = objective(&set);
    loop {
        let mut improved = None;
        for i in 0..n {
            if !set[i] {
                set[i] = true;
                let v = objective(&set);
                set[i] = false;
                if v > value && improved.is_none_or(|(_, bv)| v > bv) {
                    improved = Some((i, v));
                }
            }
        }
        match improved {
            Some((i, v)) => {
                set[i] = true;
                value = v;
            }
            None => return value,
        }
    }
}

fn component_values(op: &FiniteSumOperator, x: &Point) -> Vec<Point> {
    op.components().iter().map(|c| c.eval(x)).collect()
}

fn check_dim(op: &FiniteSumOperator, x: &Point) -> Result<()> {
    if x.len() != op.dim() {
        return Err(Error::DimensionMismatch {
            expected: op.dim(),
            got: x.len(),
        });
    }
    Ok(())
}

fn check_root(op: &FiniteSumOperator, x_star: &Point) -> Result<()> {
    check_dim(op, x_star)?;
    let fs = component_values(op, x_star);
    let scale = fs.iter().map(|f| f.norm()).fold(1.0, f64::max);
    let r = op.eval_full(x_star)?.norm();
    if r > 1e-8 * scale {
        return Err(Error::NotARoot(r));
    }
    Ok(())
}

fn mean_of(fs: &[Point], idx: &[usize]) -> Point {
    let mut acc = Point::zeros(fs[0].len());
    for &i in idx {
        acc += &fs[i];
    }
    acc / idx.len() as f64
}

/// `E[w F_xi]` by enumeration, given precomputed component values.
fn expectation_from_values(scheme: &SamplingScheme, fs: &[Point]) -> Option<Point> {
    let mut acc = Point::zeros(fs[0].len());
    let done = scheme.for_each_outcome(ENUMERATION_LIMIT, |idx, p, w| {
        if !idx.is_empty() {
            acc.axpy(p * w, &mean_of(fs, idx), 1.0);
        }
    });
    done.then_some(acc)
}

/// `E[w F_xi(x)]` by exhaustive enumeration; `None` when the scheme has too
/// many outcomes.
pub fn weighted_expectation(scheme: &SamplingScheme, op: &FiniteSumOperator, x: &Point) -> Result<Option<Point>> {
    check_dim(op, x)?;
    Ok(expectation_from_values(scheme, &component_values(op, x)))
}

/// `E[w^2 ||F_xi||^2]` by exhaustive enumeration.
pub fn weighted_second_moment(scheme: &SamplingScheme, op: &FiniteSumOperator, x: &Point) -> Result<Option<f64>> {
    check_dim(op, x)?;
    let fs = component_values(op, x);
    let mut acc = 0.0;
    let done = scheme.for_each_outcome(ENUMERATION_LIMIT, |idx, p, w| {
        if !idx.is_empty() {
            acc += p * w * w * mean_of(&fs, idx).norm_squared();
        }
    });
    Ok(done.then_some(acc))
}

/// `E[w^2 ||F_xi(x)||^2]` from its closed form at any `x`.
pub fn weighted_second_moment_closed(scheme: &SamplingScheme, op: &FiniteSumOperator, x: &Point) -> Result<f64> {
    check_dim(op, x)?;
    Ok(sigma_from_values(scheme, &component_values(op, x)))
}

/// Closed forms of `E[w^2 ||F_xi||^2]` in terms of the component values.
fn sigma_from_values(scheme: &SamplingScheme, fs: &[Point]) -> f64 {
    let n = fs.len();
    let sq: Vec<f64> = fs.iter().map(|f| f.norm_squared()).collect();
    let us = sq.iter().sum::<f64>() / n as f64;
    match scheme.kind() {
        SchemeKind::Uniform { b } => {
            // Cross terms reduce to ||F(x)||^2, which is kept for generality.
            let fbar = mean_of(fs, &(0..n).collect::<Vec<_>>()).norm_squared();
            let b = *b as f64;
            us / b + (1.0 - 1.0 / b) * fbar
        }
        SchemeKind::Importance { .. } => sq.iter().zip(&scheme.inc).map(|(s, w)| w * s).sum::<f64>() / n as f64,
        SchemeKind::BNice { b } => {
            let fbar = mean_of(fs, &(0..n).collect::<Vec<_>>()).norm_squared();
            if *b == n {
                return fbar;
            }
            let (b, nf) = (*b as f64, n as f64);
            // Pairwise expansion over uniformly random b-subsets.
            let factor = (nf - b) / (b * (nf - 1.0));
            factor * us + (1.0 - factor) * fbar
        }
        SchemeKind::IndepWithReplacement { b, probs } => {
            let nf = n as f64;
            let q: Vec<f64> = probs.iter().map(|&p| 1.0 / (nf * nf * p)).collect();
            let qs: f64 = q.iter().sum();
            let s1: f64 = q.iter().zip(&sq).map(|(a, s)| a * s).sum();
            let mut v = Point::zeros(fs[0].len());
            for (qi, f) in q.iter().zip(fs) {
                v.axpy(*qi, f, 1.0);
            }
            let b = *b as i32;
            let bf = b as f64;
            (bf * qs.powi(b - 1) * s1 + bf * (bf - 1.0) * qs.powi(b - 2) * v.norm_squared()) / (bf * bf)
        }
        SchemeKind::Iswor { probs } => {
            let nf = n as f64;
            // E = (prod_k t_k / 4^(n-1)) / n^2 * [sum u(1-u)||F_i||^2 + ||sum u F_i||^2]
            // with t_k = 1/p_k + 1/(1-p_k) and u_k = (1/p_k) / t_k.
            let mut scale = 4.0 / (nf * nf);
            let mut u = Vec::with_capacity(n);
            for &p in probs {
                let a = 1.0 / p;
                let c = if p < 1.0 { 1.0 / (1.0 - p) } else { 0.0 };
                scale *= (a + c) / 4.0;
                u.push(a / (a + c));
            }
            let mut v = Point::zeros(fs[0].len());
            let mut diag = 0.0;
            for ((ui, f), s) in u.iter().zip(fs).zip(&sq) {
                v.axpy(*ui, f, 1.0);
                diag += ui * (1.0 - ui) * s;
            }
            scale * (diag + v.norm_squared())
        }
    }
}

/// Everything about a scheme that enters the rate constants.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SchemeConstants {
    pub scheme: String,
    /// `E[w mu_xi (1{mu_xi >= 0} + 4 1{mu_xi < 0})]`.
    pub mu_bar: f64,
    pub mu_bar_stderr: Option<f64>,
    /// `E[w^2 ||F_xi(x*)||^2]`; multiply by `gamma^2` for the stepsize-weighted variance.
    pub sigma_star_sq: f64,
    pub l_eff: f64,
    pub cap: f64,
    pub cap_raw: f64,
    pub spectra: SpectraMode,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConditionReport {
    pub scheme: String,
    /// `||E[w F_xi(x*)]||`; the unbiasedness condition asks for zero.
    pub unbiased_residual: f64,
    pub unbiased_tolerance: f64,
    pub unbiased_holds: bool,
    /// False when the expectation was taken from the closed form instead of
    /// enumeration.
    pub unbiased_exact: bool,
    /// Weighted mu aggregate per unit base stepsize; must be nonnegative.
    pub mu_bar: f64,
    pub mu_bar_stderr: Option<f64>,
    pub mu_bar_holds: bool,
}

impl ConditionReport {
    pub fn all_hold(&self) -> bool {
        self.unbiased_holds && self.mu_bar_holds
    }
}

/// Weighted mu aggregate from component constants alone; subset samples use
/// the mean of their members' mu_i.
pub fn mu_bar(scheme: &SamplingScheme, mus: &[f64]) -> Result<f64> {
    if mus.len() != scheme.n() {
        return Err(Error::DimensionMismatch {
            expected: scheme.n(),
            got: mus.len(),
        });
    }
    let consts: Vec<(f64, f64)> = mus.iter().map(|&m| (m.abs(), m)).collect();
    Ok(weighted_mu_aggregate(scheme, &consts, |idx| bound_spectrum(&consts, idx)).0)
}

pub fn sigma_star_sq(scheme: &SamplingScheme, op: &FiniteSumOperator, x_star: &Point) -> Result<f64> {
    SchemeAnalysis::new(scheme, op)?.sigma_star_sq(x_star)
}

pub fn verify_conditions(scheme: &SamplingScheme, op: &FiniteSumOperator, x_star: &Point) -> Result<ConditionReport> {
    SchemeAnalysis::new(scheme, op)?.verify_conditions(x_star)
}

pub fn stepsize_cap(scheme: &SamplingScheme, op: &FiniteSumOperator) -> Result<f64> {
    Ok(SchemeAnalysis::new(scheme, op)?.cap())
}

pub fn stepsize_cap_raw(scheme: &SamplingScheme, op: &FiniteSumOperator) -> Result<f64> {
    Ok(SchemeAnalysis::new(scheme, op)?.cap_raw())
}

/// Parsed form of the CLI scheme strings `us:b=1`, `is`, `nice:b=16`,
/// `iwr:b=4` and `iswor:p=0.3`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SchemeSpec {
    Uniform { b: usize },
    Importance,
    BNice { b: usize },
    /// Probabilities proportional to `L_i`.
    IndepWithReplacement { b: usize },
    Iswor { p: f64 },
}

impl SchemeSpec {
    pub fn build(&self, op: &FiniteSumOperator) -> Result<SamplingScheme> {
        let n = op.n();
        match *self {
            SchemeSpec::Uniform { b } => SamplingScheme::uniform(n, b),
            SchemeSpec::Importance => SamplingScheme::importance(&op.lipschitz()?),
            SchemeSpec::BNice { b } => SamplingScheme::b_nice(n, b),
            SchemeSpec::IndepWithReplacement { b } => {
                let ls = op.lipschitz()?;
                let total: f64 = ls.iter().sum();
                let probs: Vec<f64> = ls.iter().map(|l| l / total).collect();
                SamplingScheme::indep_with_replacement(b, &probs)
            }
            SchemeSpec::Iswor { p } => SamplingScheme::iswor(&vec![p; n]),
        }
    }
}

impl fmt::Display for SchemeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchemeSpec::Uniform { b } => write!(f, "us:b={b}"),
            SchemeSpec::Importance => write!(f, "is"),
            SchemeSpec::BNice { b } => write!(f, "nice:b={b}"),
            SchemeSpec::IndepWithReplacement { b } => write!(f, "iwr:b={b}"),
            SchemeSpec::Iswor { p } => write!(f, "iswor:p={p}"),
        }
    }
}

impl FromStr for SchemeSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, params) = s.split_once(':').unwrap_or((s, ""));
        let mut b = None;
        let mut p = None;
        for kv in params.split(',').filter(|t| !t.is_empty()) {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| invalid(format!("expected key=value in scheme parameter '{kv}'")))?;
            match k.trim() {
                "b" => b = Some(v.trim().parse::<usize>().map_err(|e| invalid(format!("b: {e}")))?),
                "p" => p = Some(v.trim().parse::<f64>().map_err(|e| invalid(format!("p: {e}")))?),
                other => return Err(invalid(format!("unknown scheme parameter '{other}'"))),
            }
        }
        let need_b = |b: Option<usize>| b.ok_or_else(|| invalid(format!("scheme '{name}' needs b=<batch>")));
        let spec = match name.trim() {
            "us" => SchemeSpec::Uniform { b: b.unwrap_or(1) },
            "is" => SchemeSpec::Importance,
            "nice" => SchemeSpec::BNice { b: need_b(b)? },
            "iwr" => SchemeSpec::IndepWithReplacement { b: need_b(b)? },
            "iswor" => SchemeSpec::Iswor {
                p: p.ok_or_else(|| invalid("scheme 'iswor' needs p=<probability>"))?,
            },
            other => return Err(invalid(format!("unknown scheme '{other}'"))),
        };
        Ok(spec)
    }
}
