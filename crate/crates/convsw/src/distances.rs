//! Distance estimators between empirical measures of images.
//!
//! Monte Carlo estimators (`sw`, `csw`) average closed-form 1D transport
//! costs over random projections; ascent estimators (`max_sw`, `max_csw`,
//! `prw`, `cprw`) maximize the projected cost by projected gradient
//! ascent and report the best iterate seen. All estimators are
//! deterministic given a seed and bit-identical under any thread count.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ot::{abs_pow, assignment_cost_matrix, hungarian, wasserstein1d_pp, PointCloudK};
use crate::rng::{sample_unit_vector, RandomSource};
use crate::slicer::{
    apply_slicer_with_grad, apply_slicer_with_grad_multi, make_k_schedule, sample_kernel_stack,
    KernelStack, SlicerSchedule, SlicerVariant,
};
use crate::tensor::{vectorize, EmpiricalMeasure, Tensor3};

const ASSIGNMENT_CAPACITY: usize = 512;

/// Estimator selector, parsed from strings like `csw-s` or `max-csw-d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Sw,
    Csw { variant: SlicerVariant, nonlinear: bool },
    MaxSw,
    MaxCsw { variant: SlicerVariant },
    Prw,
    Cprw { variant: SlicerVariant },
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let suffix = |v: SlicerVariant| match v {
            SlicerVariant::Base => "b",
            SlicerVariant::Stride => "s",
            SlicerVariant::Dilation => "d",
        };
        match self {
            Method::Sw => write!(f, "sw"),
            Method::Csw { variant, nonlinear: false } => write!(f, "csw-{}", suffix(*variant)),
            Method::Csw { variant, nonlinear: true } => write!(f, "ncsw-{}", suffix(*variant)),
            Method::MaxSw => write!(f, "max-sw"),
            Method::MaxCsw { variant } => write!(f, "max-csw-{}", suffix(*variant)),
            Method::Prw => write!(f, "prw"),
            Method::Cprw { variant } => write!(f, "cprw-{}", suffix(*variant)),
        }
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let variant = |tag: &str| tag.parse::<SlicerVariant>();
        if let Some(tag) = s.strip_prefix("ncsw-") {
            return Ok(Method::Csw { variant: variant(tag)?, nonlinear: true });
        }
        if let Some(tag) = s.strip_prefix("max-csw-") {
            return Ok(Method::MaxCsw { variant: variant(tag)? });
        }
        if let Some(tag) = s.strip_prefix("csw-") {
            return Ok(Method::Csw { variant: variant(tag)?, nonlinear: false });
        }
        if let Some(tag) = s.strip_prefix("cprw-") {
            return Ok(Method::Cprw { variant: variant(tag)? });
        }
        match s {
            "sw" => Ok(Method::Sw),
            "max-sw" => Ok(Method::MaxSw),
            "prw" => Ok(Method::Prw),
            other => Err(Error::InvalidArgument(format!("unknown method '{other}'"))),
        }
    }
}

impl Method {
    pub fn is_monte_carlo(&self) -> bool {
        matches!(self, Method::Sw | Method::Csw { .. })
    }

    pub fn variant(&self) -> Option<SlicerVariant> {
        match self {
            Method::Csw { variant, .. }
            | Method::MaxCsw { variant }
            | Method::Cprw { variant } => Some(*variant),
            _ => None,
        }
    }

    pub fn nonlinear(&self) -> bool {
        matches!(self, Method::Csw { nonlinear: true, .. })
    }
}

/// Full estimator configuration. Identical specs (including `seed`)
/// produce bit-identical results.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodSpec {
    pub method: Method,
    pub p: f64,
    pub projections: usize,
    pub k: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl MethodSpec {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            p: 2.0,
            projections: 100,
            k: 2,
            steps: 100,
            learning_rate: 0.01,
            seed: 42,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.p < 1.0 {
            return Err(Error::InvalidArgument(format!("p must be >= 1, got {}", self.p)));
        }
        if self.method.is_monte_carlo() && self.projections < 1 {
            return Err(Error::InvalidArgument("L must be >= 1".into()));
        }
        if !self.method.is_monte_carlo() {
            if self.steps < 1 {
                return Err(Error::InvalidArgument("steps must be >= 1".into()));
            }
            if !(self.learning_rate > 0.0) {
                return Err(Error::InvalidArgument("learning rate must be > 0".into()));
            }
        }
        if self.k < 1 {
            return Err(Error::InvalidArgument("k must be >= 1".into()));
        }
        Ok(())
    }

    /// Kernel entries stored per projection for this spec on `c x d x d`
    /// inputs (the projection memory footprint).
    pub fn param_count(&self, channels: usize, dim: usize) -> Result<usize> {
        match self.method {
            Method::Sw | Method::MaxSw => Ok(channels * dim * dim),
            Method::Prw => Ok(channels * dim * dim * self.k),
            Method::Csw { variant, .. } | Method::MaxCsw { variant } => {
                Ok(SlicerSchedule::new(variant, channels, dim, 1, false)?.param_count())
            }
            Method::Cprw { variant } => {
                Ok(make_k_schedule(variant, channels, dim, self.k)?.param_count())
            }
        }
    }

    /// Runs the configured estimator.
    pub fn evaluate(&self, mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64> {
        self.validate()?;
        let src = RandomSource::new(self.seed);
        match self.method {
            Method::Sw => sw(mu, nu, self.p, self.projections, &src),
            Method::Csw { variant, nonlinear } => {
                csw(mu, nu, variant, nonlinear, self.p, self.projections, &src)
            }
            Method::MaxSw => max_sw(mu, nu, self.p, self.steps, self.learning_rate, &src),
            Method::MaxCsw { variant } => {
                max_csw(mu, nu, variant, self.p, self.steps, self.learning_rate, &src)
            }
            Method::Prw => prw(mu, nu, self.k, self.p, self.steps, self.learning_rate, &src),
            Method::Cprw { variant } => {
                cprw(mu, nu, variant, self.k, self.p, self.steps, self.learning_rate, &src)
            }
        }
    }
}

fn check_pair(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, p: f64) -> Result<()> {
    if mu.channels() != nu.channels() || mu.dim() != nu.dim() {
        return Err(Error::InvalidShape(format!(
            "measure shapes differ: {}x{} vs {}x{}",
            mu.channels(),
            mu.dim(),
            nu.channels(),
            nu.dim()
        )));
    }
    if mu.len() != nu.len() {
        return Err(Error::InvalidArgument(format!(
            "support counts differ: {} vs {}",
            mu.len(),
            nu.len()
        )));
    }
    if p < 1.0 {
        return Err(Error::InvalidArgument(format!("p must be >= 1, got {p}")));
    }
    Ok(())
}

fn project_all(stack: &KernelStack, m: &EmpiricalMeasure) -> Result<Vec<f64>> {
    m.supports()
        .iter()
        .map(|x| crate::slicer::apply_slicer_scalar(stack, x))
        .collect()
}

/// Per-projection `W_p^p` values for `L` independent kernel stacks drawn
/// from substreams `0..L`; order matches the substream index.
fn csw_wpp_values(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    schedule: &SlicerSchedule,
    p: f64,
    projections: usize,
    src: &RandomSource,
) -> Result<Vec<f64>> {
    check_pair(mu, nu, p)?;
    if projections < 1 {
        return Err(Error::InvalidArgument("L must be >= 1".into()));
    }
    if schedule.k() != 1 {
        return Err(Error::InvalidArgument("Monte Carlo slicing requires k = 1".into()));
    }
    // ordered collect keeps the final reduction sequential and
    // schedule-independent
    (0..projections as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = src.substream(i);
            let stack = sample_kernel_stack(schedule, &mut rng)?;
            let xs = project_all(&stack, mu)?;
            let ys = project_all(&stack, nu)?;
            wasserstein1d_pp(&xs, &ys, p)
        })
        .collect()
}

fn mc_root(values: &[f64], p: f64) -> f64 {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    mean.powf(1.0 / p)
}

/// Monte Carlo estimate against an explicit schedule:
/// `((1/L) sum_i W_p^p(S_i # mu, S_i # nu))^(1/p)`.
pub fn csw_with_schedule(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    schedule: &SlicerSchedule,
    p: f64,
    projections: usize,
    src: &RandomSource,
) -> Result<f64> {
    let values = csw_wpp_values(mu, nu, schedule, p, projections, src)?;
    Ok(mc_root(&values, p))
}

/// Per-projection `W_p` values (p-th roots), for bound checking against
/// exact transport costs.
pub fn csw_projections(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    schedule: &SlicerSchedule,
    p: f64,
    projections: usize,
    src: &RandomSource,
) -> Result<Vec<f64>> {
    let values = csw_wpp_values(mu, nu, schedule, p, projections, src)?;
    Ok(values.into_iter().map(|v| v.powf(1.0 / p)).collect())
}

/// Convolution sliced Wasserstein estimate over `L` random kernel stacks.
pub fn csw(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    variant: SlicerVariant,
    nonlinear: bool,
    p: f64,
    projections: usize,
    src: &RandomSource,
) -> Result<f64> {
    check_pair(mu, nu, p)?;
    let schedule = SlicerSchedule::new(variant, mu.channels(), mu.dim(), 1, nonlinear)?;
    csw_with_schedule(mu, nu, &schedule, p, projections, src)
}

/// Sliced Wasserstein baseline: uniform unit directions in `R^(c*d*d)`,
/// realized as a degenerate one-layer slicer so it consumes the random
/// stream exactly like `csw` with the same substreams.
pub fn sw(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    p: f64,
    projections: usize,
    src: &RandomSource,
) -> Result<f64> {
    check_pair(mu, nu, p)?;
    let schedule = SlicerSchedule::single_full(mu.channels(), mu.dim())?;
    csw_with_schedule(mu, nu, &schedule, p, projections, src)
}

/// Best-so-far values after initialization and after each ascent step;
/// nondecreasing by construction.
#[derive(Debug, Clone)]
pub struct AscentTrace {
    pub best: f64,
    pub history: Vec<f64>,
}

/// Sorted-coupling `W_p^p` of two equal-length samples plus its gradient
/// coefficients with respect to each sample value (frozen permutation,
/// ties broken by support index).
fn sorted_wpp_with_coeffs(xs: &[f64], ys: &[f64], p: f64) -> (f64, Vec<f64>, Vec<f64>) {
    let n = xs.len();
    let order = |vals: &[f64]| {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        idx
    };
    let (ox, oy) = (order(xs), order(ys));
    let mut wpp = 0.0;
    let mut cx = vec![0.0; n];
    let mut cy = vec![0.0; n];
    for r in 0..n {
        let delta = xs[ox[r]] - ys[oy[r]];
        wpp += abs_pow(delta, p);
        // d|delta|^p / d delta; zero at delta = 0
        let coef = if delta == 0.0 {
            0.0
        } else {
            p * abs_pow(delta, p - 1.0) * delta.signum()
        };
        cx[ox[r]] += coef / n as f64;
        cy[oy[r]] -= coef / n as f64;
    }
    (wpp / n as f64, cx, cy)
}

fn add_scaled(acc: &mut [Vec<Tensor3>], grads: &[Vec<Tensor3>], scale: f64) {
    for (al, gl) in acc.iter_mut().zip(grads) {
        for (a, g) in al.iter_mut().zip(gl) {
            for (av, gv) in a.data_mut().iter_mut().zip(g.data()) {
                *av += scale * gv;
            }
        }
    }
}

fn zero_like(stack: &KernelStack) -> Vec<Vec<Tensor3>> {
    stack
        .kernels()
        .iter()
        .map(|ks| ks.iter().map(|t| Tensor3::zeros(t.channels(), t.dim())).collect())
        .collect()
}

fn ascend_kernels(stack: &mut KernelStack, grad: &[Vec<Tensor3>], lr: f64) {
    for (kl, gl) in stack.kernels_mut().iter_mut().zip(grad) {
        for (k, g) in kl.iter_mut().zip(gl) {
            for (kv, gv) in k.data_mut().iter_mut().zip(g.data()) {
                *kv += lr * gv;
            }
        }
    }
    stack.renormalize();
}

/// Projected gradient ascent over a scalar kernel stack, maximizing the
/// sorted-coupling `W_p^p`.
fn max_slicer_ascent(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    schedule: &SlicerSchedule,
    p: f64,
    steps: usize,
    lr: f64,
    src: &RandomSource,
) -> Result<AscentTrace> {
    check_pair(mu, nu, p)?;
    // gradient accumulation visits mu-side then nu-side terms, so swapped
    // arguments would change the floating summation order
    let (mu, nu) = canonical_order(mu, nu);
    if steps < 1 || !(lr > 0.0) {
        return Err(Error::InvalidArgument("steps >= 1 and lr > 0 required".into()));
    }
    let mut stack = sample_kernel_stack(schedule, &mut src.substream(0))?;

    let objective = |stack: &KernelStack| -> Result<(f64, Vec<Vec<Tensor3>>)> {
        let mu_evals: Vec<_> = mu
            .supports()
            .iter()
            .map(|x| apply_slicer_with_grad(stack, x))
            .collect::<Result<_>>()?;
        let nu_evals: Vec<_> = nu
            .supports()
            .iter()
            .map(|y| apply_slicer_with_grad(stack, y))
            .collect::<Result<_>>()?;
        let xs: Vec<f64> = mu_evals.iter().map(|(v, _)| *v).collect();
        let ys: Vec<f64> = nu_evals.iter().map(|(v, _)| *v).collect();
        let (wpp, cx, cy) = sorted_wpp_with_coeffs(&xs, &ys, p);
        let mut grad = zero_like(stack);
        for ((_, g), &c) in mu_evals.iter().zip(&cx) {
            add_scaled(&mut grad, g, c);
        }
        for ((_, g), &c) in nu_evals.iter().zip(&cy) {
            add_scaled(&mut grad, g, c);
        }
        Ok((wpp, grad))
    };

    let (mut wpp, mut grad) = objective(&stack)?;
    let mut best = wpp;
    let mut history = Vec::with_capacity(steps + 1);
    history.push(best.powf(1.0 / p));
    for _ in 0..steps {
        ascend_kernels(&mut stack, &grad, lr);
        (wpp, grad) = objective(&stack)?;
        best = best.max(wpp);
        history.push(best.powf(1.0 / p));
    }
    Ok(AscentTrace { best: best.powf(1.0 / p), history })
}

/// Max convolution sliced Wasserstein with trace.
pub fn max_csw_detailed(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    variant: SlicerVariant,
    p: f64,
    steps: usize,
    lr: f64,
    src: &RandomSource,
) -> Result<AscentTrace> {
    let schedule = SlicerSchedule::new(variant, mu.channels(), mu.dim(), 1, false)?;
    max_slicer_ascent(mu, nu, &schedule, p, steps, lr, src)
}

/// Max convolution sliced Wasserstein: maximize the 1D transport cost
/// over kernel stacks, reporting the best iterate seen.
pub fn max_csw(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    variant: SlicerVariant,
    p: f64,
    steps: usize,
    lr: f64,
    src: &RandomSource,
) -> Result<f64> {
    Ok(max_csw_detailed(mu, nu, variant, p, steps, lr, src)?.best)
}

/// Max sliced Wasserstein with trace.
pub fn max_sw_detailed(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    p: f64,
    steps: usize,
    lr: f64,
    src: &RandomSource,
) -> Result<AscentTrace> {
    let schedule = SlicerSchedule::single_full(mu.channels(), mu.dim())?;
    max_slicer_ascent(mu, nu, &schedule, p, steps, lr, src)
}

/// Max sliced Wasserstein: ascend over unit directions (a one-layer
/// full-kernel slicer), best iterate reported.
pub fn max_sw(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    p: f64,
    steps: usize,
    lr: f64,
    src: &RandomSource,
) -> Result<f64> {
    Ok(max_sw_detailed(mu, nu, p, steps, lr, src)?.best)
}

/// A `(c*d*d) x k` matrix with orthonormal columns; the projection frame
/// for `prw`.
#[derive(Debug, Clone)]
pub struct StiefelFrame {
    rows: usize,
    k: usize,
    /// column-major: `cols[j]` is the j-th direction
    cols: Vec<Vec<f64>>,
}

impl StiefelFrame {
    /// Orthonormalizes arbitrary columns by modified Gram-Schmidt with
    /// positive diagonal; errors on rank deficiency.
    pub fn from_columns(cols: Vec<Vec<f64>>) -> Result<Self> {
        let k = cols.len();
        if k == 0 {
            return Err(Error::InvalidShape("frame needs at least one column".into()));
        }
        let rows = cols[0].len();
        if rows < k || cols.iter().any(|c| c.len() != rows) {
            return Err(Error::InvalidShape(format!(
                "cannot build {rows}x{k} orthonormal frame"
            )));
        }
        let mut frame = Self { rows, k, cols };
        frame.retract()?;
        Ok(frame)
    }

    /// Draws a random frame from `rng` (Gaussian columns, orthonormalized).
    pub fn random(rows: usize, k: usize, rng: &mut crate::rng::Substream) -> Result<Self> {
        let cols = (0..k)
            .map(|_| sample_unit_vector(rows, rng))
            .collect::<Result<Vec<_>>>()?;
        Self::from_columns(cols)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.cols
    }

    /// QR retraction: modified Gram-Schmidt, which fixes the positive-
    /// diagonal sign convention since each pivot is a norm.
    pub fn retract(&mut self) -> Result<()> {
        for j in 0..self.k {
            for i in 0..j {
                let dot: f64 = self.cols[i]
                    .iter()
                    .zip(&self.cols[j])
                    .map(|(a, b)| a * b)
                    .sum();
                let (head, tail) = self.cols.split_at_mut(j);
                for (cj, ci) in tail[0].iter_mut().zip(&head[i]) {
                    *cj -= dot * ci;
                }
            }
            let norm: f64 = self.cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-12 {
                return Err(Error::InvalidArgument("rank-deficient frame".into()));
            }
            for v in &mut self.cols[j] {
                *v /= norm;
            }
        }
        Ok(())
    }

    /// Largest deviation of the Gram matrix from the identity.
    pub fn orthonormality_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.k {
            for j in 0..self.k {
                let dot: f64 = self.cols[i]
                    .iter()
                    .zip(&self.cols[j])
                    .map(|(a, b)| a * b)
                    .sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }

    /// `U^T v` for a vectorized image.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        self.cols
            .iter()
            .map(|c| c.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Orders a measure pair canonically (lexicographic on raw support
/// bits). The assignment solver accumulates sums in row order, so a
/// transposed cost matrix can differ in the last ulp; evaluating the
/// canonical orientation makes D(mu,nu) == D(nu,mu) bit-exact.
fn canonical_order<'a>(
    mu: &'a EmpiricalMeasure,
    nu: &'a EmpiricalMeasure,
) -> (&'a EmpiricalMeasure, &'a EmpiricalMeasure) {
    let bits = |m: &'a EmpiricalMeasure| {
        m.supports()
            .iter()
            .flat_map(|t| t.data().iter().map(|v| v.to_bits()))
    };
    if bits(mu).cmp(bits(nu)) == std::cmp::Ordering::Greater {
        (nu, mu)
    } else {
        (mu, nu)
    }
}

/// Optimal assignment cost in `R^k` plus the matched pairing.
fn assignment_wpp(
    a: &PointCloudK,
    b: &PointCloudK,
    p: f64,
) -> Result<(f64, Vec<usize>)> {
    let cost = assignment_cost_matrix(a, b, p);
    let (assign, total) = hungarian(&cost);
    Ok((total / a.len() as f64, assign))
}

fn check_capacity(n: usize) -> Result<()> {
    if n > ASSIGNMENT_CAPACITY {
        return Err(Error::Capacity(format!(
            "assignment solver limited to n <= {ASSIGNMENT_CAPACITY}, got {n}"
        )));
    }
    Ok(())
}

/// Projected robust Wasserstein with trace: ascend over orthonormal
/// `k`-frames, exact transport in `R^k` inside.
pub fn prw_detailed(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    k: usize,
    p: f64,
    steps: usize,
    lr: f64,
    src: &RandomSource,
) -> Result<AscentTrace> {
    check_pair(mu, nu, p)?;
    let (mu, nu) = canonical_order(mu, nu);
    check_capacity(mu.len())?;
    if k < 1 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if steps < 1 || !(lr > 0.0) {
        return Err(Error::InvalidArgument("steps >= 1 and lr > 0 required".into()));
    }
    let rows = mu.channels() * mu.dim() * mu.dim();
    if k > rows {
        return Err(Error::InvalidArgument(format!("k = {k} exceeds ambient dim {rows}")));
    }
    let xv: Vec<Vec<f64>> = mu.supports().iter().map(vectorize).collect();
    let yv: Vec<Vec<f64>> = nu.supports().iter().map(vectorize).collect();
    let mut frame = StiefelFrame::random(rows, k, &mut src.substream(0))?;
    let n = xv.len();

    // W_p^p under the frozen optimal assignment plus the Euclidean
    // gradient dW/dU = (1/n) sum_i p |r_i|^(p-2) delta_i r_i^T with
    // delta_i = x_i - y_(pi(i)) and r_i = U^T delta_i
    let objective = |frame: &StiefelFrame| -> Result<(f64, Vec<Vec<f64>>)> {
        let a = PointCloudK::new(xv.iter().map(|v| frame.project(v)).collect())?;
        let b = PointCloudK::new(yv.iter().map(|v| frame.project(v)).collect())?;
        let (wpp, assign) = assignment_wpp(&a, &b, p)?;
        let mut grad = vec![vec![0.0; rows]; k];
        for (i, &j) in assign.iter().enumerate() {
            let r: Vec<f64> = a.points()[i]
                .iter()
                .zip(&b.points()[j])
                .map(|(u, v)| u - v)
                .collect();
            let rn = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if rn == 0.0 {
                continue;
            }
            let coef = p * rn.powf(p - 2.0) / n as f64;
            for (col, &rc) in grad.iter_mut().zip(&r) {
                let w = coef * rc;
                for ((g, xi), yi) in col.iter_mut().zip(&xv[i]).zip(&yv[j]) {
                    *g += w * (xi - yi);
                }
            }
        }
        Ok((wpp, grad))
    };

    let (mut wpp, mut grad) = objective(&frame)?;
    let mut best = wpp;
    let mut history = Vec::with_capacity(steps + 1);
    history.push(best.powf(1.0 / p));
    for _ in 0..steps {
        for (col, gcol) in frame.cols.iter_mut().zip(&grad) {
            for (c, g) in col.iter_mut().zip(gcol) {
                *c += lr * g;
            }
        }
        frame.retract()?;
        (wpp, grad) = objective(&frame)?;
        best = best.max(wpp);
        history.push(best.powf(1.0 / p));
    }
    Ok(AscentTrace { best: best.powf(1.0 / p), history })
}

/// Projected robust Wasserstein: best `W_p` over orthonormal `k`-frames
/// found by gradient ascent with QR retraction.
pub fn prw(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    k: usize,
    p: f64,
    steps: usize,
    lr: f64,
    src: &RandomSource,
) -> Result<f64> {
    Ok(prw_detailed(mu, nu, k, p, steps, lr, src)?.best)
}

/// Convolution projected robust Wasserstein with trace: ascend over
/// `k`-output kernel stacks, exact transport in `R^k` inside.
pub fn cprw_detailed(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    variant: SlicerVariant,
    k: usize,
    p: f64,
    steps: usize,
    lr: f64,
    src: &RandomSource,
) -> Result<AscentTrace> {
    check_pair(mu, nu, p)?;
    let (mu, nu) = canonical_order(mu, nu);
    check_capacity(mu.len())?;
    if steps < 1 || !(lr > 0.0) {
        return Err(Error::InvalidArgument("steps >= 1 and lr > 0 required".into()));
    }
    let schedule = make_k_schedule(variant, mu.channels(), mu.dim(), k)?;
    let mut stack = sample_kernel_stack(&schedule, &mut src.substream(0))?;
    let n = mu.len();

    let objective = |stack: &KernelStack| -> Result<(f64, Vec<Vec<Tensor3>>)> {
        let mu_evals: Vec<_> = mu
            .supports()
            .iter()
            .map(|x| apply_slicer_with_grad_multi(stack, x))
            .collect::<Result<_>>()?;
        let nu_evals: Vec<_> = nu
            .supports()
            .iter()
            .map(|y| apply_slicer_with_grad_multi(stack, y))
            .collect::<Result<_>>()?;
        let a = PointCloudK::new(mu_evals.iter().map(|g| g.value.clone()).collect())?;
        let b = PointCloudK::new(nu_evals.iter().map(|g| g.value.clone()).collect())?;
        let (wpp, assign) = assignment_wpp(&a, &b, p)?;
        let mut grad = zero_like(stack);
        for (i, &j) in assign.iter().enumerate() {
            let r: Vec<f64> = a.points()[i]
                .iter()
                .zip(&b.points()[j])
                .map(|(u, v)| u - v)
                .collect();
            let rn = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if rn == 0.0 {
                continue;
            }
            let coef = p * rn.powf(p - 2.0) / n as f64;
            for (comp, &rc) in r.iter().enumerate() {
                add_scaled(&mut grad, &mu_evals[i].grads[comp], coef * rc);
                add_scaled(&mut grad, &nu_evals[j].grads[comp], -coef * rc);
            }
        }
        Ok((wpp, grad))
    };

    let (mut wpp, mut grad) = objective(&stack)?;
    let mut best = wpp;
    let mut history = Vec::with_capacity(steps + 1);
    history.push(best.powf(1.0 / p));
    for _ in 0..steps {
        ascend_kernels(&mut stack, &grad, lr);
        (wpp, grad) = objective(&stack)?;
        best = best.max(wpp);
        history.push(best.powf(1.0 / p));
    }
    Ok(AscentTrace { best: best.powf(1.0 / p), history })
}

/// Convolution projected robust Wasserstein: best `W_p` over `k`-output
/// kernel stacks found by gradient ascent.
pub fn cprw(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    variant: SlicerVariant,
    k: usize,
    p: f64,
    steps: usize,
    lr: f64,
    src: &RandomSource,
) -> Result<f64> {
    Ok(cprw_detailed(mu, nu, variant, k, p, steps, lr, src)?.best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::sample_unit_tensor;

    fn gaussian_measure(n: usize, c: usize, d: usize, src: &RandomSource, stream: u64) -> EmpiricalMeasure {
        let mut rng = src.substream(stream);
        let supports = (0..n)
            .map(|_| {
                let mut t = sample_unit_tensor(c, d, &mut rng).unwrap();
                t.scale(3.0);
                t
            })
            .collect();
        EmpiricalMeasure::new(supports).unwrap()
    }

    fn dirac(t: Tensor3) -> EmpiricalMeasure {
        EmpiricalMeasure::new(vec![t]).unwrap()
    }

    fn l2(a: &Tensor3, b: &Tensor3) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }

    #[test]
    fn method_strings_round_trip() {
        for s in [
            "sw", "csw-b", "csw-s", "csw-d", "ncsw-b", "ncsw-s", "ncsw-d", "max-sw",
            "max-csw-b", "max-csw-s", "max-csw-d", "prw", "cprw-b", "cprw-s", "cprw-d",
        ] {
            let m: Method = s.parse().unwrap();
            assert_eq!(m.to_string(), s);
        }
        assert!("csw-x".parse::<Method>().is_err());
        assert!("".parse::<Method>().is_err());
    }

    #[test]
    fn identical_measures_give_zero() {
        let src = RandomSource::new(1);
        let mu = gaussian_measure(8, 1, 4, &src, 0);
        assert_eq!(sw(&mu, &mu, 2.0, 10, &src).unwrap(), 0.0);
        for v in [SlicerVariant::Base, SlicerVariant::Stride, SlicerVariant::Dilation] {
            assert_eq!(csw(&mu, &mu, v, false, 2.0, 10, &src).unwrap(), 0.0);
            assert_eq!(csw(&mu, &mu, v, true, 2.0, 10, &src).unwrap(), 0.0);
        }
        assert_eq!(max_sw(&mu, &mu, 2.0, 5, 0.01, &src).unwrap(), 0.0);
        assert_eq!(
            max_csw(&mu, &mu, SlicerVariant::Stride, 2.0, 5, 0.01, &src).unwrap(),
            0.0
        );
        assert_eq!(prw(&mu, &mu, 2, 2.0, 5, 0.01, &src).unwrap(), 0.0);
        assert_eq!(
            cprw(&mu, &mu, SlicerVariant::Stride, 2, 2.0, 5, 0.01, &src).unwrap(),
            0.0
        );
    }

    #[test]
    fn sw_between_diracs_bounded_by_euclidean() {
        let src = RandomSource::new(7);
        let mut rng = src.substream(99);
        for seed in 0..5u64 {
            let x = sample_unit_tensor(1, 4, &mut rng).unwrap();
            let y = sample_unit_tensor(1, 4, &mut rng).unwrap();
            let bound = l2(&x, &y);
            let v = sw(&dirac(x), &dirac(y), 2.0, 50, &RandomSource::new(seed)).unwrap();
            assert!(v <= bound + 1e-12, "{v} > {bound}");
        }
    }

    #[test]
    fn sw_equals_degenerate_csw_bitwise() {
        let src = RandomSource::new(10);
        let mu = gaussian_measure(6, 1, 4, &src, 0);
        let nu = gaussian_measure(6, 1, 4, &src, 1);
        let a = sw(&mu, &nu, 2.0, 25, &src).unwrap();
        let schedule = SlicerSchedule::single_full(1, 4).unwrap();
        let b = csw_with_schedule(&mu, &nu, &schedule, 2.0, 25, &src).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn estimators_are_symmetric_with_shared_seed() {
        let src = RandomSource::new(13);
        let mu = gaussian_measure(6, 1, 4, &src, 0);
        let nu = gaussian_measure(6, 1, 4, &src, 1);
        assert_eq!(sw(&mu, &nu, 2.0, 20, &src).unwrap(), sw(&nu, &mu, 2.0, 20, &src).unwrap());
        for v in [SlicerVariant::Base, SlicerVariant::Stride, SlicerVariant::Dilation] {
            assert_eq!(
                csw(&mu, &nu, v, true, 1.5, 20, &src).unwrap(),
                csw(&nu, &mu, v, true, 1.5, 20, &src).unwrap()
            );
        }
        assert_eq!(
            max_csw(&mu, &nu, SlicerVariant::Stride, 2.0, 10, 0.05, &src).unwrap(),
            max_csw(&nu, &mu, SlicerVariant::Stride, 2.0, 10, 0.05, &src).unwrap()
        );
        assert_eq!(
            prw(&mu, &nu, 2, 2.0, 10, 0.05, &src).unwrap(),
            prw(&nu, &mu, 2, 2.0, 10, 0.05, &src).unwrap()
        );
        assert_eq!(
            cprw(&mu, &nu, SlicerVariant::Dilation, 2, 2.0, 5, 0.05, &src).unwrap(),
            cprw(&nu, &mu, SlicerVariant::Dilation, 2, 2.0, 5, 0.05, &src).unwrap()
        );
    }

    #[test]
    fn max_sw_recovers_dirac_distance() {
        let src = RandomSource::new(19);
        let mut rng = src.substream(0);
        let x = sample_unit_tensor(1, 3, &mut rng).unwrap();
        let mut y = sample_unit_tensor(1, 3, &mut rng).unwrap();
        y.scale(2.0);
        let bound = l2(&x, &y);
        let v = max_sw(&dirac(x), &dirac(y), 2.0, 200, 0.1, &RandomSource::new(3)).unwrap();
        assert!((v - bound).abs() < 1e-6, "{v} vs {bound}");
        assert!(v <= bound + 1e-9);
    }

    #[test]
    fn prw_recovers_dirac_distance() {
        let src = RandomSource::new(23);
        let mut rng = src.substream(0);
        let x = sample_unit_tensor(1, 3, &mut rng).unwrap();
        let y = sample_unit_tensor(1, 3, &mut rng).unwrap();
        let bound = l2(&x, &y);
        for k in [1usize, 2, 3] {
            let v = prw(&dirac(x.clone()), &dirac(y.clone()), k, 2.0, 200, 0.1, &RandomSource::new(4))
                .unwrap();
            assert!((v - bound).abs() < 1e-6, "k={k}: {v} vs {bound}");
        }
    }

    #[test]
    fn max_csw_dominates_initialization_slice() {
        let src = RandomSource::new(29);
        let mu = gaussian_measure(8, 1, 4, &src, 0);
        let nu = gaussian_measure(8, 1, 4, &src, 1);
        for variant in [SlicerVariant::Base, SlicerVariant::Stride, SlicerVariant::Dilation] {
            let trace = max_csw_detailed(&mu, &nu, variant, 2.0, 20, 0.05, &src).unwrap();
            // history[0] is the value at the initialization stack (L=1 slice)
            assert!(trace.best >= trace.history[0]);
            for w in trace.history.windows(2) {
                assert!(w[1] >= w[0] - 1e-12);
            }
        }
    }

    #[test]
    fn ascent_traces_are_nondecreasing() {
        let src = RandomSource::new(31);
        let mu = gaussian_measure(6, 1, 4, &src, 0);
        let nu = gaussian_measure(6, 1, 4, &src, 1);
        let traces = [
            max_sw_detailed(&mu, &nu, 2.0, 15, 0.05, &src).unwrap(),
            prw_detailed(&mu, &nu, 2, 2.0, 15, 0.05, &src).unwrap(),
            cprw_detailed(&mu, &nu, SlicerVariant::Stride, 2, 2.0, 15, 0.05, &src).unwrap(),
        ];
        for trace in traces {
            assert_eq!(trace.history.len(), 16);
            for w in trace.history.windows(2) {
                assert!(w[1] >= w[0]);
            }
            assert_eq!(trace.best, *trace.history.last().unwrap());
        }
    }

    #[test]
    fn cprw_at_k1_equals_max_csw() {
        let src = RandomSource::new(37);
        let mu = gaussian_measure(6, 1, 4, &src, 0);
        let nu = gaussian_measure(6, 1, 4, &src, 1);
        let a = cprw(&mu, &nu, SlicerVariant::Stride, 1, 2.0, 10, 0.05, &src).unwrap();
        let b = max_csw(&mu, &nu, SlicerVariant::Stride, 2.0, 10, 0.05, &src).unwrap();
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn stride_projections_bounded_by_exact_transport() {
        let src = RandomSource::new(41);
        let mu = gaussian_measure(16, 1, 4, &src, 0);
        let nu = gaussian_measure(16, 1, 4, &src, 1);
        let exact = crate::ot::exact_wasserstein_assignment(
            &PointCloudK::new(mu.supports().iter().map(vectorize).collect()).unwrap(),
            &PointCloudK::new(nu.supports().iter().map(vectorize).collect()).unwrap(),
            2.0,
        )
        .unwrap();
        for variant in [SlicerVariant::Stride, SlicerVariant::Dilation] {
            let schedule = SlicerSchedule::new(variant, 1, 4, 1, false).unwrap();
            for w in csw_projections(&mu, &nu, &schedule, 2.0, 50, &src).unwrap() {
                assert!(w <= exact + 1e-9, "{variant}: {w} > {exact}");
            }
        }
    }

    #[test]
    fn fixed_kernel_triangle_inequality() {
        let src = RandomSource::new(43);
        let m1 = gaussian_measure(6, 1, 4, &src, 0);
        let m2 = gaussian_measure(6, 1, 4, &src, 1);
        let m3 = gaussian_measure(6, 1, 4, &src, 2);
        let shared = RandomSource::new(999);
        for variant in [SlicerVariant::Base, SlicerVariant::Stride, SlicerVariant::Dilation] {
            let d = |a: &EmpiricalMeasure, b: &EmpiricalMeasure| {
                csw(a, b, variant, false, 2.0, 30, &shared).unwrap()
            };
            assert!(d(&m1, &m3) <= d(&m1, &m2) + d(&m2, &m3) + 1e-9);
        }
    }

    #[test]
    fn determinism_across_thread_counts() {
        let src = RandomSource::new(47);
        let mu = gaussian_measure(8, 1, 8, &src, 0);
        let nu = gaussian_measure(8, 1, 8, &src, 1);
        let run = || {
            csw(&mu, &nu, SlicerVariant::Stride, false, 2.0, 64, &RandomSource::new(5)).unwrap()
        };
        let baseline = run();
        for threads in [1usize, 2, 7] {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            let v = pool.install(run);
            assert_eq!(v.to_bits(), baseline.to_bits(), "threads = {threads}");
        }
    }

    #[test]
    fn method_spec_validation() {
        let src = RandomSource::new(0);
        let mu = gaussian_measure(4, 1, 4, &src, 0);
        let mut spec = MethodSpec::new(Method::Sw);
        spec.projections = 0;
        assert!(spec.evaluate(&mu, &mu).is_err());
        let mut spec = MethodSpec::new(Method::MaxSw);
        spec.learning_rate = 0.0;
        assert!(spec.evaluate(&mu, &mu).is_err());
        let mut spec = MethodSpec::new(Method::Csw { variant: SlicerVariant::Stride, nonlinear: false });
        spec.p = 0.5;
        assert!(spec.evaluate(&mu, &mu).is_err());
        let nu = gaussian_measure(5, 1, 4, &src, 1);
        assert!(sw(&mu, &nu, 2.0, 5, &src).is_err());
    }

    #[test]
    fn frame_stays_orthonormal() {
        let src = RandomSource::new(53);
        let mut frame = StiefelFrame::random(10, 3, &mut src.substream(0)).unwrap();
        assert!(frame.orthonormality_defect() < 1e-10);
        // perturb and retract
        for col in &mut frame.cols {
            for v in col.iter_mut() {
                *v += 0.3;
            }
        }
        frame.retract().unwrap();
        assert!(frame.orthonormality_defect() < 1e-10);
    }

    #[test]
    fn param_counts_by_method() {
        let spec = |m: &str| MethodSpec::new(m.parse().unwrap());
        assert_eq!(spec("sw").param_count(1, 28).unwrap(), 784);
        assert_eq!(spec("csw-b").param_count(1, 28).unwrap(), 338);
        assert_eq!(spec("csw-s").param_count(1, 28).unwrap(), 57);
        assert_eq!(spec("csw-d").param_count(1, 28).unwrap(), 57);
        assert_eq!(spec("prw").param_count(1, 28).unwrap(), 1568);
        assert_eq!(spec("cprw-s").param_count(1, 28).unwrap(), 8 + 16 + 196);
    }
}
