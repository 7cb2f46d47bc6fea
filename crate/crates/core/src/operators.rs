//! Finite-sum operators `F(x) = (1/n) sum_i F_i(x)`.

use std::fmt;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Point = DVector<f64>;

/// Default residual tolerance for [`FiniteSumOperator::solve_root`].
pub const ROOT_TOL: f64 = 1e-10;

type Callable = Arc<dyn Fn(&Point) -> Point + Send + Sync>;

#[derive(Clone)]
pub enum ComponentKind {
    Affine { m: DMatrix<f64>, b: DVector<f64> },
    Callable { dim: usize, f: Callable },
}

/// A single `F_i` with its Lipschitz constant `L_i` and (possibly negative)
/// quasi-strong-monotonicity constant `mu_i`.
#[derive(Clone)]
pub struct Component {
    kind: ComponentKind,
    constants: OnceLock<(f64, f64)>,
}

impl fmt::Debug for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ComponentKind::Affine { m, .. } => {
                write!(f, "Component::Affine({}x{})", m.nrows(), m.ncols())
            }
            ComponentKind::Callable { dim, .. } => write!(f, "Component::Callable({dim})"),
        }
    }
}

/// `L = sigma_max(M)` and `mu = lambda_min((M + M^T)/2)`, clamped so that
/// `|mu| <= L` survives rounding.
pub fn affine_constants(m: &DMatrix<f64>) -> (f64, f64) {
    if m.is_empty() {
        return (0.0, 0.0);
    }
    let l = m
        .clone()
        .singular_values()
        .iter()
        .fold(0.0_f64, |acc, &s| acc.max(s));
    let sym = (m + m.transpose()) * 0.5;
    let mu = sym
        .symmetric_eigenvalues()
        .iter()
        .fold(f64::INFINITY, |acc, &e| acc.min(e));
    (l, mu.clamp(-l, l))
}

impl Component {
    pub fn affine(m: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                got: m.ncols(),
            });
        }
        if b.len() != m.nrows() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                got: b.len(),
            });
        }
        Ok(Component {
            kind: ComponentKind::Affine { m, b },
            constants: OnceLock::new(),
        })
    }

    /// Black-box component. Constants relative to the intended solution must
    /// be supplied for anything beyond evaluation.
    pub fn callable<F>(dim: usize, f: F, constants: Option<(f64, f64)>) -> Self
    where
        F: Fn(&Point) -> Point + Send + Sync + 'static,
    {
        let cell = OnceLock::new();
        if let Some(c) = constants {
            let _ = cell.set(c);
        }
        Component {
            kind: ComponentKind::Callable {
                dim,
                f: Arc::new(f),
            },
            constants: cell,
        }
    }

    pub fn kind(&self) -> &ComponentKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            ComponentKind::Affine { b, .. } => b.len(),
            ComponentKind::Callable { dim, .. } => *dim,
        }
    }

    pub fn is_affine(&self) -> bool {
        matches!(self.kind, ComponentKind::Affine { .. })
    }

    /// `(L_i, mu_i)`, computed from the spectrum on first use for affine
    /// components.
    pub fn constants(&self) -> Option<(f64, f64)> {
        match &self.kind {
            ComponentKind::Affine { m, .. } => Some(*self.constants.get_or_init(|| affine_constants(m))),
            ComponentKind::Callable { .. } => self.constants.get().copied(),
        }
    }

    /// `acc += F_i(x)`.
    #[inline]
    pub fn add_eval(&self, x: &Point, acc: &mut Point) {
        match &self.kind {
            ComponentKind::Affine { m, b } => {
                acc.gemv(1.0, m, x, 1.0);
                *acc += b;
            }
            ComponentKind::Callable { f, .. } => *acc += f(x),
        }
    }

    pub fn eval(&self, x: &Point) -> Point {
        let mut out = Point::zeros(self.dim());
        self.add_eval(x, &mut out);
        out
    }
}

/// `F(x) = (1/n) sum_i F_i(x)` over components of a common dimension.
#[derive(Debug, Clone)]
pub struct FiniteSumOperator {
    components: Vec<Component>,
    dim: usize,
    all: Vec<usize>,
    solution: OnceLock<Point>,
}

impl FiniteSumOperator {
    pub fn new(components: Vec<Component>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::Invalid("a finite-sum operator needs n >= 1".into()))?;
        let dim = first.dim();
        for c in &components {
            if c.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: c.dim(),
                });
            }
        }
        let all = (0..components.len()).collect();
        Ok(FiniteSumOperator {
            components,
            dim,
            all,
            solution: OnceLock::new(),
        })
    }

    pub fn n(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    /// `0..n` in order; the full-batch sample.
    pub fn all_indices(&self) -> &[usize] {
        &self.all
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.n() {
            return Err(Error::IndexOutOfRange { index: i, n: self.n() });
        }
        Ok(())
    }

    fn check_dim(&self, x: &Point) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn eval_component(&self, i: usize, x: &Point) -> Result<Point> {
        self.check_index(i)?;
        self.check_dim(x)?;
        Ok(self.components[i].eval(x))
    }

    /// Writes the average of `F_i(x)` over `indices` (with multiplicity) into
    /// `out`. Every solver path goes through this routine, which is what makes
    /// full-batch runs of different methods bit-identical.
    ///
    /// Indices and dimensions are only checked in debug builds.
    #[inline]
    pub fn mean_into(&self, indices: &[usize], x: &Point, out: &mut Point) {
        debug_assert!(!indices.is_empty());
        debug_assert_eq!(x.len(), self.dim);
        out.fill(0.0);
        for &i in indices {
            self.components[i].add_eval(x, out);
        }
        *out /= indices.len() as f64;
    }

    /// Checked version of [`mean_into`](Self::mean_into).
    pub fn eval_mean(&self, indices: &[usize], x: &Point) -> Result<Point> {
        if indices.is_empty() {
            return Err(Error::EmptySample);
        }
        for &i in indices {
            self.check_index(i)?;
        }
        self.check_dim(x)?;
        let mut out = Point::zeros(self.dim);
        self.mean_into(indices, x, &mut out);
        Ok(out)
    }

    pub fn eval_full(&self, x: &Point) -> Result<Point> {
        self.eval_mean(&self.all, x)
    }

    pub fn component_constants(&self, i: usize) -> Result<(f64, f64)> {
        self.check_index(i)?;
        self.components[i]
            .constants()
            .ok_or(Error::MissingConstants(i))
    }

    /// `(L_i, mu_i)` for every component. Spectra of affine components are
    /// computed in parallel on first use.
    pub fn constants(&self) -> Result<Vec<(f64, f64)>> {
        let exec = crate::par::Execution::Parallel;
        crate::par::map_indices(exec, self.n(), |i| self.component_constants(i))
            .into_iter()
            .collect()
    }

    pub fn lipschitz(&self) -> Result<Vec<f64>> {
        Ok(self.constants()?.into_iter().map(|c| c.0).collect())
    }

    pub fn mus(&self) -> Result<Vec<f64>> {
        Ok(self.constants()?.into_iter().map(|c| c.1).collect())
    }

    /// Average of the component matrices over `indices`, when all of them are
    /// affine.
    pub fn mean_matrix(&self, indices: &[usize]) -> Result<DMatrix<f64>> {
        if indices.is_empty() {
            return Err(Error::EmptySample);
        }
        let mut acc = DMatrix::zeros(self.dim, self.dim);
        for &i in indices {
            self.check_index(i)?;
            match &self.components[i].kind {
                ComponentKind::Affine { m, .. } => acc += m,
                ComponentKind::Callable { .. } => return Err(Error::NotAffine(i)),
            }
        }
        Ok(acc / indices.len() as f64)
    }

    fn mean_offset(&self) -> Result<DVector<f64>> {
        let mut acc = DVector::zeros(self.dim);
        for (i, c) in self.components.iter().enumerate() {
            match &c.kind {
                ComponentKind::Affine { b, .. } => acc += b,
                ComponentKind::Callable { .. } => return Err(Error::NotAffine(i)),
            }
        }
        Ok(acc / self.n() as f64)
    }

    /// `(L, mu)` of the full operator, from the averaged matrix.
    pub fn full_constants(&self) -> Result<(f64, f64)> {
        Ok(affine_constants(&self.mean_matrix(&self.all)?))
    }

    /// Solves `Mbar x = -bbar` by LU factorization and caches the result.
    pub fn solve_root(&self, tol: f64) -> Result<Point> {
        if let Some(x) = self.solution.get() {
            return Ok(x.clone());
        }
        let m = self.mean_matrix(&self.all)?;
        let b = self.mean_offset()?;
        let lu = m.clone().lu();
        let mut x = lu.solve(&(-&b)).ok_or(Error::Singular)?;
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Singular);
        }
        // One round of iterative refinement is enough for well-conditioned games.
        let r = &m * &x + &b;
        if let Some(dx) = lu.solve(&(-&r)) {
            x += dx;
        }
        let residual = self.eval_full(&x)?.norm();
        if residual > tol {
            return Err(Error::RootTolerance { residual, tol });
        }
        Ok(self.solution.get_or_init(|| x).clone())
    }

    pub fn solution(&self) -> Option<&Point> {
        self.solution.get()
    }

    /// Records a known solution, e.g. for black-box operators. Fails when the
    /// point is not a root to within `tol` or a different solution is cached.
    pub fn set_solution(&self, x: Point, tol: f64) -> Result<()> {
        let residual = self.eval_full(&x)?.norm();
        if residual > tol {
            return Err(Error::NotARoot(residual));
        }
        let _ = self.solution.set(x);
        Ok(())
    }
}
