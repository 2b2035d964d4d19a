//! Empirical-risk oracles and the error measures computed from a run:
//! tracking error, instantaneous and dynamic regret, optimum drift, and
//! log-log rate fits.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::learner::ProjectionSet;
use crate::objectives::{sigmoid, Loss, ProblemSpec, Sample};

/// Optimality residual accepted from the iterative solvers.
pub const ORACLE_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum OracleMethod {
    ClosedFormRidge,
    ProjectedGradient { tol: f64, max_iters: usize },
}

/// Result of an iterative constrained minimization.
#[derive(Clone, Debug, PartialEq)]
pub struct Minimizer {
    pub x: Vec<f64>,
    /// `|x - Proj(x - eta grad F(x))|` at the returned point.
    pub residual: f64,
    pub iterations: usize,
}

/// Accelerated projected gradient with adaptive restart, stopped on the
/// fixed-point residual of the projected step.
pub fn projected_gradient<G>(grad: G, lipschitz: f64, domain: &ProjectionSet, x0: &[f64], tol: f64, max_iters: usize) -> Result<Minimizer>
where
    G: Fn(&[f64]) -> Vec<f64>,
{
    check_dim(domain.dim(), x0.len())?;
    if !(lipschitz > 0.0 && lipschitz.is_finite()) {
        return Err(Error::InvalidParameter(format!("step constant {lipschitz} must be positive")));
    }
    let eta = 1.0 / lipschitz;
    let mut x = domain.project(x0)?;
    let mut y = x.clone();
    let mut k = 1.0f64;
    let step = |p: &[f64]| -> Vec<f64> {
        let g = grad(p);
        let mut z: Vec<f64> = p.iter().zip(&g).map(|(a, b)| a - eta * b).collect();
        domain.project_in_place(&mut z);
        z
    };
    let residual = |p: &[f64]| -> f64 { step(p).iter().zip(p).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() };
    for it in 0..max_iters {
        let res = residual(&x);
        if res <= tol {
            return Ok(Minimizer { x, residual: res, iterations: it });
        }
        let next = step(&y);
        let k_next = 0.5 * (1.0 + (1.0 + 4.0 * k * k).sqrt());
        // restart momentum when it points uphill
        let uphill: f64 = y.iter().zip(&next).zip(next.iter().zip(&x)).map(|((yi, ni), (nj, xi))| (yi - ni) * (nj - xi)).sum();
        if uphill > 0.0 {
            k = 1.0;
            y = x.clone();
            continue;
        }
        y = next.iter().zip(&x).map(|(n, xo)| n + (k - 1.0) / k_next * (n - xo)).collect();
        x = next;
        k = k_next;
    }
    let res = residual(&x);
    Ok(Minimizer { x, residual: res, iterations: max_iters })
}

/// Running sums `sum x x^T`, `sum x y`, `sum y^2` of a ridge stream.
#[derive(Clone, Debug, PartialEq)]
pub struct RidgeStats {
    alpha: f64,
    sxx: DMatrix<f64>,
    sxy: DVector<f64>,
    syy: f64,
    count: usize,
}

impl RidgeStats {
    pub fn new(dim: usize, alpha: f64) -> Self {
        RidgeStats { alpha, sxx: DMatrix::zeros(dim, dim), sxy: DVector::zeros(dim), syy: 0.0, count: 0 }
    }

    pub fn add(&mut self, s: &Sample) -> Result<()> {
        check_dim(self.sxy.len(), s.dim())?;
        let x = DVector::from_column_slice(&s.x);
        self.sxx.ger(1.0, &x, &x, 1.0);
        self.sxy.axpy(s.y, &x, 1.0);
        self.syy += s.y * s.y;
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    fn hessian_half(&self) -> DMatrix<f64> {
        let n = self.sxy.len();
        (&self.sxx + DMatrix::identity(n, n) * (self.count as f64 * self.alpha)) / self.count as f64
    }

    /// Empirical risk: mean loss over every sample added.
    pub fn objective(&self, theta: &[f64]) -> f64 {
        let th = DVector::from_column_slice(theta);
        let k = self.count as f64;
        (th.dot(&(&self.sxx * &th)) - 2.0 * th.dot(&self.sxy) + self.syy) / k + self.alpha * th.dot(&th)
    }

    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let th = DVector::from_column_slice(theta);
        let g = (self.hessian_half() * th - &self.sxy / self.count as f64) * 2.0;
        g.iter().copied().collect()
    }

    /// Normal-equation residual `|A theta - b| / |b|` of the unconstrained problem.
    pub fn normal_residual(&self, theta: &[f64]) -> f64 {
        let a = &self.sxx + DMatrix::identity(theta.len(), theta.len()) * (self.count as f64 * self.alpha);
        let r = a * DVector::from_column_slice(theta) - &self.sxy;
        r.norm() / self.sxy.norm().max(f64::MIN_POSITIVE)
    }

    /// Constrained minimizer: linear solve, then projected-gradient polish
    /// when the unconstrained solution leaves the domain.
    pub fn solve(&self, domain: &ProjectionSet, method: OracleMethod) -> Result<Vec<f64>> {
        if self.count == 0 {
            return Err(Error::EmptyMemory);
        }
        let h = self.hessian_half();
        let lip = 2.0 * h.clone().symmetric_eigenvalues().max();
        let start = match method {
            OracleMethod::ClosedFormRidge => {
                let chol = h
                    .clone()
                    .cholesky()
                    .ok_or_else(|| Error::Singular("ridge normal equations are not positive definite".into()))?;
                let sol = chol.solve(&(&self.sxy / self.count as f64));
                let sol: Vec<f64> = sol.iter().copied().collect();
                if domain.contains(&sol, 0.0) {
                    return Ok(sol);
                }
                domain.project(&sol)?
            }
            OracleMethod::ProjectedGradient { .. } => domain.project(&vec![0.0; self.sxy.len()])?,
        };
        let (tol, iters) = match method {
            OracleMethod::ProjectedGradient { tol, max_iters } => (tol, max_iters),
            OracleMethod::ClosedFormRidge => (ORACLE_TOL, 1_000_000),
        };
        let m = projected_gradient(|t| self.gradient(t), lip, domain, &start, tol, iters)?;
        Ok(m.x)
    }
}

/// Empirical risk over a retained sample set.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRisk {
    pub loss: Loss,
    pub samples: Vec<Sample>,
}

impl SampleRisk {
    pub fn objective(&self, theta: &[f64]) -> Result<f64> {
        if self.samples.is_empty() {
            return Err(Error::EmptyMemory);
        }
        let mut s = 0.0;
        for x in &self.samples {
            s += self.loss.value(theta, x)?;
        }
        Ok(s / self.samples.len() as f64)
    }

    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; theta.len()];
        let w = 1.0 / self.samples.len() as f64;
        for x in &self.samples {
            self.loss.add_gradient(theta, x, w, &mut g);
        }
        g
    }

    fn logistic_newton(&self, r: f64, start: &[f64], tol: f64) -> Option<Vec<f64>> {
        let n = start.len();
        let k = self.samples.len() as f64;
        let mut th = DVector::from_column_slice(start);
        for _ in 0..100 {
            let mut h = DMatrix::identity(n, n) * r;
            let mut g = th.clone() * r;
            for s in &self.samples {
                let a = DVector::from_column_slice(&s.x);
                let p = sigmoid(a.dot(&th));
                g.axpy((p - s.y) / k, &a, 1.0);
                h.ger(p * (1.0 - p) / k, &a, &a, 1.0);
            }
            if g.norm() <= tol {
                return Some(th.iter().copied().collect());
            }
            let step = h.cholesky()?.solve(&g);
            let f0 = self.objective(th.as_slice()).ok()?;
            let slope = g.dot(&step);
            let mut t = 1.0;
            loop {
                let cand = &th - &step * t;
                if self.objective(cand.as_slice()).ok()? <= f0 - 0.25 * t * slope || t < 1e-12 {
                    th = cand;
                    break;
                }
                t *= 0.5;
            }
        }
        None
    }

    /// Constrained minimizer. For the logistic loss a damped Newton solve is
    /// tried first and kept when it lands inside the domain; otherwise, and
    /// for every other loss, projected gradient runs to `tol`.
    pub fn solve(&self, domain: &ProjectionSet, lipschitz: f64, warm: Option<&[f64]>, tol: f64) -> Result<Vec<f64>> {
        if self.samples.is_empty() {
            return Err(Error::EmptyMemory);
        }
        let zero = vec![0.0; domain.dim()];
        let start = warm.unwrap_or(&zero);
        if let Loss::Logistic { r } = self.loss {
            if r > 0.0 {
                if let Some(x) = self.logistic_newton(r, start, tol * 1e-3) {
                    if domain.contains(&x, 0.0) {
                        return Ok(x);
                    }
                }
            }
        }
        let m = projected_gradient(|t| self.gradient(t), lipschitz, domain, start, tol, 5_000_000)?;
        Ok(m.x)
    }
}

/// Pooled empirical risk of all learners, maintained incrementally.
#[derive(Clone, Debug)]
pub enum ErmOracle {
    Ridge { stats: RidgeStats, domain: ProjectionSet },
    Samples { risk: SampleRisk, domain: ProjectionSet, lipschitz: f64, tol: f64, last: Option<Vec<f64>> },
}

impl ErmOracle {
    pub fn new(spec: &ProblemSpec) -> Self {
        match spec.loss {
            Loss::Ridge { alpha } => ErmOracle::Ridge { stats: RidgeStats::new(spec.dim(), alpha), domain: spec.domain.clone() },
            loss => ErmOracle::Samples {
                risk: SampleRisk { loss, samples: Vec::new() },
                domain: spec.domain.clone(),
                lipschitz: spec.lipschitz,
                tol: 1e-9,
                last: None,
            },
        }
    }

    pub fn add(&mut self, s: &Sample) -> Result<()> {
        match self {
            ErmOracle::Ridge { stats, .. } => stats.add(s),
            ErmOracle::Samples { risk, .. } => {
                check_dim(risk.samples.first().map_or(s.dim(), |x| x.dim()), s.dim())?;
                risk.samples.push(s.clone());
                Ok(())
            }
        }
    }

    pub fn optimum(&mut self) -> Result<Vec<f64>> {
        match self {
            ErmOracle::Ridge { stats, domain } => stats.solve(domain, OracleMethod::ClosedFormRidge),
            ErmOracle::Samples { risk, domain, lipschitz, tol, last } => {
                let x = risk.solve(domain, *lipschitz, last.as_deref(), *tol)?;
                *last = Some(x.clone());
                Ok(x)
            }
        }
    }

    pub fn objective(&self, theta: &[f64]) -> Result<f64> {
        match self {
            ErmOracle::Ridge { stats, .. } => Ok(stats.objective(theta)),
            ErmOracle::Samples { risk, .. } => risk.objective(theta),
        }
    }
}

/// Minimizer of the pooled empirical risk of `samples` over `domain`.
pub fn erm_optimum(samples: &[Sample], spec: &ProblemSpec, method: OracleMethod) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::EmptyMemory);
    }
    match (spec.loss, method) {
        (Loss::Ridge { alpha }, _) => {
            let mut st = RidgeStats::new(spec.dim(), alpha);
            for s in samples {
                st.add(s)?;
            }
            st.solve(&spec.domain, method)
        }
        (loss, OracleMethod::ProjectedGradient { tol, .. }) => {
            SampleRisk { loss, samples: samples.to_vec() }.solve(&spec.domain, spec.lipschitz, None, tol)
        }
        (loss, OracleMethod::ClosedFormRidge) => {
            SampleRisk { loss, samples: samples.to_vec() }.solve(&spec.domain, spec.lipschitz, None, 1e-9)
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Largest per-learner mean over replicates; `values[r][i]`.
pub fn max_of_means(values: &[Vec<f64>]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let m = values[0].len();
    (0..m)
        .map(|i| values.iter().map(|row| row[i]).sum::<f64>() / values.len() as f64)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `max_i mean_r |theta[r][i] - optimum[r]|^2`.
pub fn tracking_error(theta: &[Vec<Vec<f64>>], optimum: &[Vec<f64>]) -> Result<f64> {
    if theta.len() != optimum.len() {
        return Err(Error::InvalidParameter("replicate counts differ".into()));
    }
    let sq: Vec<Vec<f64>> = theta
        .iter()
        .zip(optimum)
        .map(|(learners, opt)| learners.iter().map(|th| sq_dist(th, opt)).collect())
        .collect();
    Ok(max_of_means(&sq))
}

/// `max_i mean_r [F_r(theta[r][i]) - F_r(optimum[r])]`, with `objective(r, theta)`
/// evaluating replicate `r`'s empirical risk.
pub fn instantaneous_regret<F>(theta: &[Vec<Vec<f64>>], optimum: &[Vec<f64>], objective: F) -> Result<f64>
where
    F: Fn(usize, &[f64]) -> Result<f64>,
{
    if theta.len() != optimum.len() {
        return Err(Error::InvalidParameter("replicate counts differ".into()));
    }
    let mut gaps = Vec::with_capacity(theta.len());
    for (r, (learners, opt)) in theta.iter().zip(optimum).enumerate() {
        let f_star = objective(r, opt)?;
        gaps.push(learners.iter().map(|th| objective(r, th).map(|f| f - f_star)).collect::<Result<Vec<f64>>>()?);
    }
    Ok(max_of_means(&gaps))
}

/// Cumulative `sum_t sum_i [l(theta_t^i, xi_t^i) - l(theta*_t, xi_t^i)]` for
/// every prefix; `theta[t][i]`, `optimum[t]`, `samples[t][i]`.
pub fn dynamic_regret(loss: &Loss, theta: &[Vec<Vec<f64>>], optimum: &[Vec<f64>], samples: &[Vec<Sample>]) -> Result<Vec<f64>> {
    if theta.len() != optimum.len() || theta.len() != samples.len() {
        return Err(Error::InvalidParameter("per-round losses not recorded for every round".into()));
    }
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(theta.len());
    for ((ths, opt), xs) in theta.iter().zip(optimum).zip(samples) {
        if ths.len() != xs.len() {
            return Err(Error::InvalidParameter("one sample per learner per round expected".into()));
        }
        for (th, x) in ths.iter().zip(xs) {
            acc += loss.value(th, x)? - loss.value(opt, x)?;
        }
        out.push(acc);
    }
    Ok(out)
}

/// `16 (kappa^2 + D^2) (2/mu^2 + 1/L^2)`: bound on `(t+1)^2 |theta*_{t+1} - theta*_t|^2`.
pub fn drift_constant(spec: &ProblemSpec) -> f64 {
    16.0 * (spec.noise_var + spec.grad_bound * spec.grad_bound) * (2.0 / (spec.mu * spec.mu) + 1.0 / (spec.lipschitz * spec.lipschitz))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    /// `max_t (t+1)^2 |theta*_{t+1} - theta*_t|^2` over the window.
    pub sup_scaled: f64,
    /// Log-log slope of the drift over the window, when enough positive values exist.
    pub fit: Option<RateFit>,
}

/// Drift of an optimum sequence given as `(t, theta*_t)` at consecutive rounds.
pub fn drift_check(optima: &[(usize, Vec<f64>)], window: (f64, f64)) -> DriftReport {
    let mut sup: f64 = 0.0;
    let mut pts = Vec::new();
    for pair in optima.windows(2) {
        let (t, a) = (&pair[0].0, &pair[0].1);
        let (t1, b) = (&pair[1].0, &pair[1].1);
        if *t1 != t + 1 {
            continue;
        }
        let d = sq_dist(a, b);
        let tf = *t as f64;
        if tf >= window.0 && tf <= window.1 {
            sup = sup.max((tf + 1.0).powi(2) * d);
            if d > 0.0 && tf > 0.0 {
                pts.push((tf, d));
            }
        }
    }
    let fit = rate_fit(&pts, window).ok();
    DriftReport { sup_scaled: sup, fit }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub std_err: f64,
    /// 95% half-width, `1.96 * std_err`.
    pub half_width: f64,
    pub points: usize,
}

/// Least-squares slope of `log value` against `log t` over `window`.
pub fn rate_fit(series: &[(f64, f64)], window: (f64, f64)) -> Result<RateFit> {
    let pts: Vec<(f64, f64)> = series.iter().copied().filter(|(t, _)| *t >= window.0 && *t <= window.1).collect();
    if pts.len() < 5 {
        return Err(Error::InvalidParameter(format!("rate fit needs at least 5 points, got {}", pts.len())));
    }
    if let Some((t, v)) = pts.iter().find(|(t, v)| !(*v > 0.0) || !(*t > 0.0)) {
        return Err(Error::InvalidParameter(format!("non-positive value {v} at t = {t}")));
    }
    let xs: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let std_err = (sse / (n - 2.0) / sxx).sqrt();
    Ok(RateFit { slope, intercept, std_err, half_width: 1.96 * std_err, points: pts.len() })
}
