//! Gauss–Newton reconstruction of quasi-local stiffness matrices.
//!
//! With `G = R^T S_0^{-1} R` and predictions `L` (one column per boundary
//! datum), the derivative with respect to free entry `s_i` is
//! `-G B_i L`, where `B_i` is the symmetric unit matrix of the entry. The
//! normal-equation matrix therefore has the closed form
//! `H[i, i'] = sum Q[p, p'] W[q, q']` over the index pairs of both entries,
//! with `Q = G G` and `W = L L^T`, and `J^T r = -sum Z[p, q]` with
//! `Z = G Res L^T`. The Jacobian itself is only formed in tests.

use faer::linalg::solvers::{Llt, Solve};
use faer::{MatRef, Side};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::effective::DirichletSolver;
use crate::error::{check_dim, Error, Result};
use crate::pattern::SparsityPattern;

/// Coarse measurements: boundary data (columns of `boundary`, `n x q`) and
/// the observed coarse solutions (`m x q`) for a fixed load `M_H f_H`.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementSet {
    pub boundary: DMatrix<f64>,
    pub observed: DMatrix<f64>,
    pub load: DVector<f64>,
    pub noise: f64,
}

impl MeasurementSet {
    pub fn new(boundary: DMatrix<f64>, observed: DMatrix<f64>, load: DVector<f64>, noise: f64) -> Result<Self> {
        check_dim(boundary.ncols(), observed.ncols())?;
        check_dim(observed.nrows(), load.len())?;
        if boundary.ncols() == 0 {
            return Err(Error::InvalidArgument("measurement set is empty".into()));
        }
        Ok(Self { boundary, observed, load, noise })
    }

    pub fn len(&self) -> usize {
        self.boundary.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, columns: &[usize]) -> MeasurementSet {
        MeasurementSet {
            boundary: self.boundary.select_columns(columns),
            observed: self.observed.select_columns(columns),
            load: self.load.clone(),
            noise: self.noise,
        }
    }
}

/// Diagonal shift of the normal equations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shift {
    Absolute(f64),
    /// Multiple of `trace(J^T J) / mu`.
    Relative(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Armijo {
    pub c1: f64,
    pub rho: f64,
    pub initial_step: f64,
    pub max_backtracks: usize,
}

impl Default for Armijo {
    fn default() -> Self {
        Self { c1: 1e-4, rho: 0.5, initial_step: 1.0, max_backtracks: 30 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InversionConfig {
    pub ell: usize,
    pub shift: Shift,
    pub gamma: f64,
    pub max_iters: usize,
    pub armijo: Armijo,
    /// Fraction of measurements used for each search direction.
    pub randomized: Option<f64>,
    pub seed: u64,
    pub stagnation_tol: f64,
    pub stagnation_window: usize,
    /// Largest `mu` for which the normal equations are formed densely.
    pub dense_limit: usize,
    pub cg_tol: f64,
    pub cg_max_iters: usize,
    /// Keep every accepted parameter vector in the trace.
    pub record_iterates: bool,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            ell: 0,
            shift: Shift::Relative(1e-8),
            gamma: 0.0,
            max_iters: 20,
            armijo: Armijo::default(),
            randomized: None,
            seed: 0,
            stagnation_tol: 1e-10,
            stagnation_window: 3,
            dense_limit: 12_000,
            cg_tol: 1e-10,
            cg_max_iters: 2_000,
            record_iterates: false,
        }
    }
}

impl InversionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.into()));
        let shift = match self.shift {
            Shift::Absolute(v) | Shift::Relative(v) => v,
        };
        if !(shift >= 0.0) {
            return bad("shift must be nonnegative");
        }
        if !(self.gamma >= 0.0) {
            return bad("gamma must be nonnegative");
        }
        let a = &self.armijo;
        if !(a.rho > 0.0 && a.rho < 1.0) || !(a.c1 > 0.0 && a.c1 < 1.0) || !(a.initial_step > 0.0) {
            return bad("armijo parameters out of range");
        }
        if let Some(f) = self.randomized {
            if !(f > 0.0 && f <= 1.0) {
                return bad("randomized fraction must lie in (0, 1]");
            }
        }
        Ok(())
    }
}

/// Least-squares objective over a pattern, optionally with a Tikhonov term
/// `gamma/2 |s - s_reg|^2`.
#[derive(Clone, Debug)]
pub struct Objective<'a> {
    pub pattern: &'a SparsityPattern,
    pub data: &'a MeasurementSet,
    gamma: f64,
    s_reg: DVector<f64>,
    scale: f64,
}

/// State at one parameter vector.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub s: DVector<f64>,
    pub solver: DirichletSolver,
    pub predicted: DMatrix<f64>,
    pub residual: DMatrix<f64>,
    pub j: f64,
}

impl<'a> Objective<'a> {
    pub fn new(pattern: &'a SparsityPattern, data: &'a MeasurementSet) -> Result<Self> {
        check_dim(pattern.dim(), data.observed.nrows())?;
        let n = pattern.mesh().classify_nodes().boundary.len();
        check_dim(n, data.boundary.nrows())?;
        let norm2 = data.observed.norm_squared();
        if norm2 == 0.0 {
            return Err(Error::InvalidArgument("measurement matrix is zero".into()));
        }
        Ok(Self { pattern, data, gamma: 0.0, s_reg: DVector::zeros(pattern.mu()), scale: 1.0 / norm2 })
    }

    pub fn with_regularization(mut self, gamma: f64, s_reg: Option<DVector<f64>>) -> Result<Self> {
        if let Some(r) = s_reg {
            check_dim(self.pattern.mu(), r.len())?;
            self.s_reg = r;
        }
        self.gamma = gamma;
        Ok(self)
    }

    /// `|L~|_F^-2`.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn evaluate(&self, s: &[f64]) -> Result<Evaluation> {
        let matrix = self.pattern.unpack(s)?;
        let solver = DirichletSolver::new(self.pattern.mesh(), &matrix)?;
        let predicted = solver.solve_many(&self.data.boundary, self.data.load.as_slice())?;
        let residual = &self.data.observed - &predicted;
        let s = DVector::from_column_slice(s);
        let reg = &s - &self.s_reg;
        let j = 0.5 * self.scale * residual.norm_squared() + 0.5 * self.gamma * reg.norm_squared();
        Ok(Evaluation { s, solver, predicted, residual, j })
    }

    pub fn value(&self, s: &[f64]) -> Result<f64> {
        Ok(self.evaluate(s)?.j)
    }

    /// Gradient of the objective at an evaluated point.
    pub fn gradient_at(&self, eval: &Evaluation) -> DVector<f64> {
        let g = eval.solver.embedded_inverse();
        let jtr = self.jt_residual(&g, &eval.predicted, &eval.residual);
        -jtr * self.scale + (&eval.s - &self.s_reg) * self.gamma
    }

    pub fn gradient(&self, s: &[f64]) -> Result<DVector<f64>> {
        Ok(self.gradient_at(&self.evaluate(s)?))
    }

    /// `J^T r` for predictions `l` and residual `res` (same columns).
    fn jt_residual(&self, g: &DMatrix<f64>, l: &DMatrix<f64>, res: &DMatrix<f64>) -> DVector<f64> {
        let z = g * res * l.transpose();
        self.pair_sums(&z)
    }

    fn pair_sums(&self, z: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.pattern.mu(),
            self.pattern.pairs().iter().map(|&(a, b)| if a == b { -z[(a, a)] } else { -(z[(a, b)] + z[(b, a)]) }),
        )
    }

    /// Explicit Jacobian of the stacked predictions (column-major over
    /// measurements), `(m q) x mu`.
    pub fn jacobian(&self, eval: &Evaluation) -> DMatrix<f64> {
        let g = eval.solver.embedded_inverse();
        let l = &eval.predicted;
        let (m, q) = (l.nrows(), l.ncols());
        let mut jac = DMatrix::zeros(m * q, self.pattern.mu());
        for (i, &(a, b)) in self.pattern.pairs().iter().enumerate() {
            for k in 0..q {
                for p in 0..m {
                    let v = if a == b { g[(p, a)] * l[(a, k)] } else { g[(p, a)] * l[(b, k)] + g[(p, b)] * l[(a, k)] };
                    jac[(k * m + p, i)] = -v;
                }
            }
        }
        jac
    }

    /// Dense `J^T J` (column-major, `mu x mu`) and `J^T r` over the given
    /// measurement columns.
    pub fn normal_equations(&self, eval: &Evaluation, columns: &[usize]) -> (Vec<f64>, DVector<f64>) {
        let (_, q_mat, w, jtr) = self.normal_factors(eval, columns);
        let pairs = self.pattern.pairs();
        let mu = pairs.len();
        let mut h = vec![0.0; mu * mu];
        h.par_chunks_mut(mu).enumerate().for_each(|(col, out)| {
            let (c, d) = pairs[col];
            for (row, slot) in out.iter_mut().enumerate() {
                *slot = pair_product(&q_mat, &w, pairs[row], (c, d));
            }
        });
        (h, jtr)
    }

    fn normal_factors(
        &self,
        eval: &Evaluation,
        columns: &[usize],
    ) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
        let g = eval.solver.embedded_inverse();
        let l = eval.predicted.select_columns(columns);
        let res = eval.residual.select_columns(columns);
        let q_mat = &g * &g;
        let w = &l * l.transpose();
        let jtr = self.jt_residual(&g, &l, &res);
        (g, q_mat, w, jtr)
    }

    /// Gauss–Newton direction for the given measurement columns.
    pub fn direction(&self, eval: &Evaluation, columns: &[usize], config: &InversionConfig) -> Result<DVector<f64>> {
        let mu = self.pattern.mu();
        let reg = self.gamma / self.scale;
        let reg_rhs = (&eval.s - &self.s_reg) * reg;
        if mu <= config.dense_limit {
            let (mut h, jtr) = self.normal_equations(eval, columns);
            let trace: f64 = (0..mu).map(|i| h[i * mu + i]).sum();
            let eta = match config.shift {
                Shift::Absolute(v) => v,
                Shift::Relative(v) => v * trace / mu as f64,
            };
            for i in 0..mu {
                h[i * mu + i] += eta + reg;
            }
            gauss_newton_solve(&h, mu, &(jtr - reg_rhs))
        } else {
            let (g, q_mat, w, jtr) = self.normal_factors(eval, columns);
            let trace: f64 = self.pattern.pairs().iter().map(|&p| pair_product(&q_mat, &w, p, p)).sum();
            let eta = match config.shift {
                Shift::Absolute(v) => v,
                Shift::Relative(v) => v * trace / mu as f64,
            };
            let l = eval.predicted.select_columns(columns);
            let op = |v: &DVector<f64>| -> DVector<f64> {
                let vm = self.pattern.unpack_dense(v.as_slice()).expect("length checked");
                let jv = -(&g * vm * &l);
                let back = self.pair_sums(&(&g * jv * l.transpose()));
                back + v * (eta + reg)
            };
            conjugate_gradient(op, &(jtr - reg_rhs), config.cg_tol, config.cg_max_iters)
        }
    }
}

/// `sum_{(p,q) in pairs(i)} sum_{(p',q') in pairs(i')} Q[p,p'] W[q,q']`.
fn pair_product(q: &DMatrix<f64>, w: &DMatrix<f64>, (a, b): (usize, usize), (c, d): (usize, usize)) -> f64 {
    let term = |p: usize, r: usize, pp: usize, rr: usize| q[(p, pp)] * w[(r, rr)];
    match (a == b, c == d) {
        (true, true) => term(a, a, c, c),
        (true, false) => term(a, a, c, d) + term(a, a, d, c),
        (false, true) => term(a, b, c, c) + term(b, a, c, c),
        (false, false) => term(a, b, c, d) + term(a, b, d, c) + term(b, a, c, d) + term(b, a, d, c),
    }
}

/// Solves the (already shifted) dense normal equations `h p = rhs`.
pub fn gauss_newton_solve(h: &[f64], mu: usize, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim(mu * mu, h.len())?;
    check_dim(mu, rhs.len())?;
    if mu == 0 {
        return Ok(DVector::zeros(0));
    }
    let hm = MatRef::from_column_major_slice(h, mu, mu);
    let llt = Llt::new(hm, Side::Lower).map_err(|_| Error::SingularNormalEquations)?;
    let l = llt.L();
    // pivots at roundoff level of the diagonal mean a numerically singular system
    if (0..mu).any(|i| l[(i, i)] * l[(i, i)] <= 1e-14 * h[i * mu + i].abs()) {
        return Err(Error::SingularNormalEquations);
    }
    let b = faer::Mat::<f64>::from_fn(mu, 1, |i, _| rhs[i]);
    let x = llt.solve(&b);
    let out = DVector::from_fn(mu, |i, _| x[(i, 0)]);
    if out.iter().all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(Error::SingularNormalEquations)
    }
}

/// Shifted normal equations from an explicit Jacobian and residual vector.
pub fn gauss_newton_step(jacobian: &DMatrix<f64>, residual: &DVector<f64>, eta: f64) -> Result<DVector<f64>> {
    check_dim(jacobian.nrows(), residual.len())?;
    let mu = jacobian.ncols();
    let mut h = jacobian.transpose() * jacobian;
    for i in 0..mu {
        h[(i, i)] += eta;
    }
    let rhs = jacobian.transpose() * residual;
    gauss_newton_solve(h.as_slice(), mu, &rhs)
}

fn conjugate_gradient(
    op: impl Fn(&DVector<f64>) -> DVector<f64>,
    b: &DVector<f64>,
    tol: f64,
    max_iters: usize,
) -> Result<DVector<f64>> {
    let mut x = DVector::zeros(b.len());
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rr = r.norm_squared();
    let target = tol * tol * rr;
    for _ in 0..max_iters {
        if rr <= target || rr == 0.0 {
            break;
        }
        let ap = op(&p);
        let pap = p.dot(&ap);
        if !(pap > 0.0) {
            return Err(Error::SingularNormalEquations);
        }
        let alpha = rr / pap;
        x += &p * alpha;
        r -= &ap * alpha;
        let next = r.norm_squared();
        p = &r + &p * (next / rr);
        rr = next;
    }
    Ok(x)
}

/// Uniform subset of `ceil(fraction * q)` distinct indices, sorted.
pub fn randomized_subset(q: usize, fraction: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let k = ((fraction * q as f64).ceil() as usize).clamp(1, q);
    let mut idx = rand::seq::index::sample(rng, q, k).into_vec();
    idx.sort_unstable();
    idx
}

/// Outcome of the backtracking search.
#[derive(Clone, Debug)]
pub struct LineSearchResult {
    pub step: f64,
    pub backtracks: usize,
    pub eval: Evaluation,
}

/// Armijo backtracking along `direction`; trial points whose interior block
/// is not positive definite count as failed trials.
pub fn line_search(
    objective: &Objective,
    current: &Evaluation,
    gradient: &DVector<f64>,
    direction: &DVector<f64>,
    armijo: &Armijo,
) -> Result<LineSearchResult> {
    let slope = gradient.dot(direction);
    let mut step = armijo.initial_step;
    for backtracks in 0..=armijo.max_backtracks {
        let trial = &current.s + direction * step;
        match objective.evaluate(trial.as_slice()) {
            Ok(eval) if eval.j.is_finite() && eval.j <= current.j + armijo.c1 * step * slope => {
                return Ok(LineSearchResult { step, backtracks, eval });
            }
            Ok(_) => {}
            Err(e) if e.is_numeric() => {}
            Err(e) => return Err(e),
        }
        step *= armijo.rho;
    }
    Err(Error::LineSearchFailed { backtracks: armijo.max_backtracks })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Initial,
    Accepted,
    Converged,
    Stagnated,
    LineSearchFailed,
    MaxIterations,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub j: f64,
    pub step: f64,
    pub grad_norm: f64,
    pub backtracks: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subset: Option<Vec<usize>>,
    pub status: StepStatus,
}

#[derive(Clone, Debug)]
pub struct InversionTrace {
    pub records: Vec<IterationRecord>,
    pub parameters: DVector<f64>,
    /// Accepted iterates, starting point first; empty unless requested.
    pub iterates: Vec<DVector<f64>>,
}

impl InversionTrace {
    pub fn final_j(&self) -> f64 {
        self.records.last().map(|r| r.j).unwrap_or(f64::NAN)
    }

    pub fn j_values(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.j).collect()
    }

    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
            .collect()
    }
}

/// Gauss–Newton iteration from `s0`. Numeric failures inside the loop end the
/// run and are recorded in the last trace entry.
pub fn run_inversion(objective: &Objective, config: &InversionConfig, s0: &[f64]) -> Result<InversionTrace> {
    config.validate()?;
    let q = objective.data.len();
    let all: Vec<usize> = (0..q).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut eval = objective.evaluate(s0)?;
    let mut gradient = objective.gradient_at(&eval);
    let mut records = vec![IterationRecord {
        iter: 0,
        j: eval.j,
        step: 0.0,
        grad_norm: gradient.norm(),
        backtracks: 0,
        subset: None,
        status: StepStatus::Initial,
    }];
    let mut iterates = Vec::new();
    if config.record_iterates {
        iterates.push(eval.s.clone());
    }
    for iter in 1..=config.max_iters {
        if eval.j == 0.0 || gradient.norm() == 0.0 {
            records.last_mut().unwrap().status = StepStatus::Converged;
            break;
        }
        let subset = config.randomized.map(|f| randomized_subset(q, f, &mut rng));
        let columns = subset.as_deref().unwrap_or(&all);
        let direction = match objective.direction(&eval, columns, config) {
            Ok(d) => d,
            Err(e) if e.is_numeric() => {
                records.last_mut().unwrap().status = StepStatus::LineSearchFailed;
                break;
            }
            Err(e) => return Err(e),
        };
        // the randomized direction need not descend on the full objective
        let direction = if gradient.dot(&direction) < 0.0 { direction } else { -&gradient };
        match line_search(objective, &eval, &gradient, &direction, &config.armijo) {
            Ok(found) => {
                eval = found.eval;
                if config.record_iterates {
                    iterates.push(eval.s.clone());
                }
                gradient = objective.gradient_at(&eval);
                records.push(IterationRecord {
                    iter,
                    j: eval.j,
                    step: found.step,
                    grad_norm: gradient.norm(),
                    backtracks: found.backtracks,
                    subset,
                    status: StepStatus::Accepted,
                });
            }
            Err(Error::LineSearchFailed { backtracks }) => {
                records.push(IterationRecord {
                    iter,
                    j: eval.j,
                    step: 0.0,
                    grad_norm: gradient.norm(),
                    backtracks,
                    subset,
                    status: StepStatus::LineSearchFailed,
                });
                break;
            }
            Err(e) => return Err(e),
        }
        let w = config.stagnation_window;
        if records.len() > w {
            let old = records[records.len() - 1 - w].j;
            if old > 0.0 && (old - eval.j) / old < config.stagnation_tol {
                records.last_mut().unwrap().status = StepStatus::Stagnated;
                break;
            }
        }
        if iter == config.max_iters {
            records.last_mut().unwrap().status = StepStatus::MaxIterations;
        }
    }
    Ok(InversionTrace { records, parameters: eval.s, iterates })
}
