//! Random quadratic min-max games
//!
//! `min_{x1} max_{x2} (1/n) sum_i  x1'A_i x1/2 + x1'B_i x2 - x2'C_i x2/2 + a_i'x1 - c_i'x2`
//!
//! whose operator is `F_i(x1, x2) = (A_i x1 + B_i x2 + a_i, -B_i' x1 + C_i x2 + c_i)`.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::operators::{affine_constants, Component, FiniteSumOperator};

const MAGIC: &[u8] = b"QGAME\n";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmaxOverride {
    pub index: usize,
    pub l_max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameGenConfig {
    pub n: usize,
    pub d: usize,
    pub p: usize,
    pub mu_a: f64,
    pub l_a: f64,
    pub mu_c: f64,
    pub l_c: f64,
    pub mu_b: f64,
    pub l_b: f64,
    pub seed: u64,
    /// Scale of the Gaussian offsets `a_i`, `c_i` (0 gives a homogeneous game).
    #[serde(default = "one")]
    pub bias_scale: f64,
    #[serde(default)]
    pub lmax_override: Option<LmaxOverride>,
    #[serde(default)]
    pub negative_mu_component: Option<usize>,
}

fn one() -> f64 {
    1.0
}

impl Default for GameGenConfig {
    fn default() -> Self {
        GameGenConfig {
            n: 100,
            d: 100,
            p: 100,
            mu_a: 0.1,
            l_a: 1.0,
            mu_c: 0.1,
            l_c: 1.0,
            mu_b: 0.0,
            l_b: 1.0,
            seed: 0,
            bias_scale: 1.0,
            lmax_override: None,
            negative_mu_component: None,
        }
    }
}

impl GameGenConfig {
    /// Small games for quick runs: n = 20, d = p = 10.
    pub fn desk(seed: u64) -> Self {
        GameGenConfig {
            n: 20,
            d: 10,
            p: 10,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 || self.p == 0 {
            return Err(invalid("n, d and p must be positive"));
        }
        let bands = [
            ("A", self.mu_a, self.l_a),
            ("C", self.mu_c, self.l_c),
            ("B", self.mu_b, self.l_b),
        ];
        for (name, lo, hi) in bands {
            if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) {
                return Err(invalid(format!("spectrum band for {name} must satisfy 0 <= mu <= L, got [{lo}, {hi}]")));
            }
        }
        if !self.bias_scale.is_finite() || self.bias_scale < 0.0 {
            return Err(invalid("bias_scale must be finite and non-negative"));
        }
        if let Some(o) = self.lmax_override {
            if o.index >= self.n || !(o.l_max.is_finite() && o.l_max > 0.0) {
                return Err(invalid("lmax_override needs index < n and L_max > 0"));
            }
        }
        if let Some(j) = self.negative_mu_component {
            if j >= self.n {
                return Err(invalid("negative_mu_component must be < n"));
            }
            if self.mu_a == 0.0 && self.l_a == 0.0 {
                return Err(invalid("negative_mu_component needs a nonzero A spectrum"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticGame {
    pub n: usize,
    pub d: usize,
    pub p: usize,
    pub a_mats: Vec<DMatrix<f64>>,
    pub b_mats: Vec<DMatrix<f64>>,
    pub c_mats: Vec<DMatrix<f64>>,
    pub a_offsets: Vec<DVector<f64>>,
    pub c_offsets: Vec<DVector<f64>>,
    pub config: Option<GameGenConfig>,
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn gaussian_vector(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(len, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

/// Orthogonal factor of a Gaussian matrix, with columns flipped so that
/// `R` has a positive diagonal.
fn random_orthogonal(rng: &mut ChaCha8Rng, dim: usize) -> DMatrix<f64> {
    let qr = gaussian_matrix(rng, dim, dim).qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Entries uniform in `[lo, hi]`; `force_lo` / `force_hi` pin entries to the
/// band edges.
fn band_diagonal(rng: &mut ChaCha8Rng, len: usize, lo: f64, hi: f64, force_lo: Option<usize>, force_hi: Option<usize>) -> Vec<f64> {
    let mut diag: Vec<f64> = (0..len).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect();
    if let Some(j) = force_lo {
        diag[j] = lo;
    }
    if let Some(j) = force_hi {
        diag[j] = hi;
    }
    diag
}

fn symmetric_from(q: &DMatrix<f64>, diag: &[f64]) -> DMatrix<f64> {
    let d = DMatrix::from_diagonal(&DVector::from_column_slice(diag));
    let m = q * d * q.transpose();
    (&m + m.transpose()) * 0.5
}

/// Which entry of which component gets pinned to the band edges: the low
/// edge on entry 0 of component 0, the high edge on entry 1 of component 0,
/// or entry 0 of component 1 when the matrices are 1x1.
fn edge_slots(i: usize, len: usize) -> (Option<usize>, Option<usize>) {
    let lo = (i == 0).then_some(0);
    let hi = if len > 1 {
        (i == 0).then_some(1)
    } else {
        (i == 1).then_some(0)
    };
    (lo, hi)
}

struct Draw {
    qa: DMatrix<f64>,
    da: Vec<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    a_off: DVector<f64>,
    c_off: DVector<f64>,
}

fn draw_component(rng: &mut ChaCha8Rng, cfg: &GameGenConfig, i: usize) -> Draw {
    let (d, p) = (cfg.d, cfg.p);
    let qa = random_orthogonal(rng, d);
    let (lo, hi) = edge_slots(i, d);
    let da = band_diagonal(rng, d, cfg.mu_a, cfg.l_a, lo, hi);

    let qc = random_orthogonal(rng, p);
    let (lo, hi) = edge_slots(i, p);
    let dc = band_diagonal(rng, p, cfg.mu_c, cfg.l_c, lo, hi);

    let r = d.min(p);
    let u = random_orthogonal(rng, d);
    let v = random_orthogonal(rng, p);
    let (lo, hi) = edge_slots(i, r);
    let sb = band_diagonal(rng, r, cfg.mu_b, cfg.l_b, lo, hi);
    let sigma = DMatrix::from_diagonal(&DVector::from_column_slice(&sb));
    let b = u.columns(0, r) * sigma * v.columns(0, r).transpose();

    let a_off = gaussian_vector(rng, d, cfg.bias_scale);
    let c_off = gaussian_vector(rng, p, cfg.bias_scale);
    Draw {
        c: symmetric_from(&qc, &dc),
        qa,
        da,
        b,
        a_off,
        c_off,
    }
}

/// Indicator-weighted aggregate: nonnegative constants count once, negative ones
/// four times.
pub(crate) fn weighted_mu_mean(mus: &[f64]) -> f64 {
    let s: f64 = mus.iter().map(|&m| if m >= 0.0 { m } else { 4.0 * m }).sum();
    s / mus.len() as f64
}

fn min_eig(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .fold(f64::INFINITY, |a, &e| a.min(e))
}

/// Generates a game. Pure function of `cfg` (including its seed).
pub fn generate_game(cfg: &GameGenConfig) -> Result<QuadraticGame> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut g = QuadraticGame {
        n: cfg.n,
        d: cfg.d,
        p: cfg.p,
        a_mats: Vec::with_capacity(cfg.n),
        b_mats: Vec::with_capacity(cfg.n),
        c_mats: Vec::with_capacity(cfg.n),
        a_offsets: Vec::with_capacity(cfg.n),
        c_offsets: Vec::with_capacity(cfg.n),
        config: Some(cfg.clone()),
    };
    let mut negative_seed = None;
    for i in 0..cfg.n {
        let draw = draw_component(&mut rng, cfg, i);
        g.a_mats.push(symmetric_from(&draw.qa, &draw.da));
        g.b_mats.push(draw.b);
        g.c_mats.push(draw.c);
        g.a_offsets.push(draw.a_off);
        g.c_offsets.push(draw.c_off);
        if cfg.negative_mu_component == Some(i) {
            negative_seed = Some((draw.qa, draw.da));
        }
    }
    if let (Some(j), Some((qa, da))) = (cfg.negative_mu_component, negative_seed) {
        make_nonmonotone(&mut g, j, &qa, &da)?;
    }
    if let Some(o) = cfg.lmax_override {
        rescale_lipschitz(&mut g, o);
    }
    Ok(g)
}

/// Negates the smallest eigenvalue of `A_j`, halving its magnitude until the
/// weighted aggregate of the mu_i and the averaged operator stay positive.
fn make_nonmonotone(g: &mut QuadraticGame, j: usize, qa: &DMatrix<f64>, da: &[f64]) -> Result<()> {
    let (k, &smallest) = da
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("d >= 1");
    let others: Vec<f64> = crate::par::map_indices(crate::par::Execution::Parallel, g.n, |i| {
        if i == j {
            0.0
        } else {
            affine_constants(&g.block_matrix(i)).1
        }
    });
    let a_rest: DMatrix<f64> = g
        .a_mats
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != j)
        .fold(DMatrix::zeros(g.d, g.d), |acc, (_, m)| acc + m);
    let c_bar = g.c_mats.iter().fold(DMatrix::zeros(g.p, g.p), |acc, m| acc + m) / g.n as f64;
    let c_min = min_eig(&c_bar);
    let mut magnitude = if smallest > 0.0 { smallest } else { 0.1 * da.iter().fold(0.0_f64, |a, &v| a.max(v)) };
    for _ in 0..30 {
        let mut diag = da.to_vec();
        diag[k] = -magnitude;
        let a_j = symmetric_from(qa, &diag);
        let mut mus = others.clone();
        mus[j] = min_eig(&a_j).min(min_eig(&g.c_mats[j]));
        let a_bar = (&a_rest + &a_j) / g.n as f64;
        if weighted_mu_mean(&mus) > 0.0 && min_eig(&a_bar).min(c_min) > 0.0 {
            g.a_mats[j] = a_j;
            return Ok(());
        }
        magnitude *= 0.5;
    }
    Err(invalid("could not make a component non-monotone while keeping the aggregate positive"))
}

fn rescale_lipschitz(g: &mut QuadraticGame, o: LmaxOverride) {
    let ls: Vec<f64> = crate::par::map_indices(crate::par::Execution::Parallel, g.n, |i| affine_constants(&g.block_matrix(i)).0);
    for (i, &l) in ls.iter().enumerate() {
        if l == 0.0 {
            continue;
        }
        let target = if i == o.index { o.l_max } else { 1.0 };
        let s = target / l;
        g.a_mats[i] *= s;
        g.b_mats[i] *= s;
        g.c_mats[i] *= s;
        g.a_offsets[i] *= s;
        g.c_offsets[i] *= s;
    }
}

impl QuadraticGame {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 || self.p == 0 {
            return Err(invalid("game dimensions n, d, p must be positive"));
        }
        let lens = [
            self.a_mats.len(),
            self.b_mats.len(),
            self.c_mats.len(),
            self.a_offsets.len(),
            self.c_offsets.len(),
        ];
        if lens.iter().any(|&l| l != self.n) {
            return Err(invalid("per-component arrays must all have length n"));
        }
        for i in 0..self.n {
            let ok = self.a_mats[i].shape() == (self.d, self.d)
                && self.b_mats[i].shape() == (self.d, self.p)
                && self.c_mats[i].shape() == (self.p, self.p)
                && self.a_offsets[i].len() == self.d
                && self.c_offsets[i].len() == self.p;
            if !ok {
                return Err(invalid(format!("component {i} has inconsistent shapes")));
            }
        }
        Ok(())
    }

    /// `M_i = [[A_i, B_i], [-B_i', C_i]]`.
    pub fn block_matrix(&self, i: usize) -> DMatrix<f64> {
        let (d, p) = (self.d, self.p);
        let mut m = DMatrix::zeros(d + p, d + p);
        m.view_mut((0, 0), (d, d)).copy_from(&self.a_mats[i]);
        m.view_mut((0, d), (d, p)).copy_from(&self.b_mats[i]);
        m.view_mut((d, 0), (p, d)).copy_from(&(-self.b_mats[i].transpose()));
        m.view_mut((d, d), (p, p)).copy_from(&self.c_mats[i]);
        m
    }

    pub fn offset(&self, i: usize) -> DVector<f64> {
        let mut b = DVector::zeros(self.d + self.p);
        b.rows_mut(0, self.d).copy_from(&self.a_offsets[i]);
        b.rows_mut(self.d, self.p).copy_from(&self.c_offsets[i]);
        b
    }

    pub fn to_operator(&self) -> Result<FiniteSumOperator> {
        self.validate()?;
        let comps = (0..self.n)
            .map(|i| Component::affine(self.block_matrix(i), self.offset(i)))
            .collect::<Result<Vec<_>>>()?;
        FiniteSumOperator::new(comps)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.validate()?;
        let header = Header {
            version: FORMAT_VERSION,
            n: self.n,
            d: self.d,
            p: self.p,
            config: self.config.clone(),
        };
        let json = serde_json::to_string(&header).map_err(|e| invalid(e.to_string()))?;
        let mut buf = Vec::with_capacity(MAGIC.len() + json.len() + 1 + 8 * self.float_count());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(json.as_bytes());
        buf.push(b'\n');
        for i in 0..self.n {
            push_row_major(&mut buf, &self.a_mats[i]);
            push_row_major(&mut buf, &self.b_mats[i]);
            push_row_major(&mut buf, &self.c_mats[i]);
            push_floats(&mut buf, self.a_offsets[i].iter());
            push_floats(&mut buf, self.c_offsets[i].iter());
        }
        let mut f = fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let rest = bytes
            .strip_prefix(MAGIC)
            .ok_or_else(|| Error::Malformed("missing QGAME magic".into()))?;
        let nl = rest
            .iter()
            .position(|&c| c == b'\n')
            .ok_or_else(|| Error::Malformed("unterminated header".into()))?;
        let header: Header = serde_json::from_slice(&rest[..nl]).map_err(|e| Error::Malformed(format!("header: {e}")))?;
        if header.version != FORMAT_VERSION {
            return Err(Error::Version(header.version));
        }
        let (n, d, p) = (header.n, header.d, header.p);
        if n == 0 || d == 0 || p == 0 {
            return Err(invalid("game dimensions n, d, p must be positive"));
        }
        let per = d * d + d * p + p * p + d + p;
        let expected = n
            .checked_mul(per)
            .and_then(|c| c.checked_mul(8))
            .ok_or_else(|| Error::Malformed("dimensions overflow".into()))?;
        let data = &rest[nl + 1..];
        if data.len() != expected {
            return Err(Error::Malformed(format!("expected {expected} data bytes, found {}", data.len())));
        }
        let mut floats = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")));
        let mut take_matrix = |r: usize, c: usize| DMatrix::from_row_iterator(r, c, floats.by_ref().take(r * c));
        let mut g = QuadraticGame {
            n,
            d,
            p,
            a_mats: Vec::with_capacity(n),
            b_mats: Vec::with_capacity(n),
            c_mats: Vec::with_capacity(n),
            a_offsets: Vec::with_capacity(n),
            c_offsets: Vec::with_capacity(n),
            config: header.config,
        };
        for _ in 0..n {
            g.a_mats.push(take_matrix(d, d));
            g.b_mats.push(take_matrix(d, p));
            g.c_mats.push(take_matrix(p, p));
            g.a_offsets.push(take_matrix(d, 1).column(0).into_owned());
            g.c_offsets.push(take_matrix(p, 1).column(0).into_owned());
        }
        Ok(g)
    }

    fn float_count(&self) -> usize {
        let (d, p) = (self.d, self.p);
        self.n * (d * d + d * p + p * p + d + p)
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    n: usize,
    d: usize,
    p: usize,
    config: Option<GameGenConfig>,
}

fn push_floats<'a>(buf: &mut Vec<u8>, it: impl Iterator<Item = &'a f64>) {
    for v in it {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn push_row_major(buf: &mut Vec<u8>, m: &DMatrix<f64>) {
    for r in 0..m.nrows() {
        push_floats(buf, m.row(r).iter());
    }
}
