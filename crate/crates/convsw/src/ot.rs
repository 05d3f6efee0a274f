//! Exact Wasserstein solvers: the 1D closed form (equal and general
//! weights) and assignment-based exact `W_p` in `R^k` for small
//! equal-size instances. These are the verification oracles for the
//! sliced estimators.

use crate::error::{Error, Result};

/// `|x|^p` with exact arithmetic for the common integer orders.
pub(crate) fn abs_pow(x: f64, p: f64) -> f64 {
    let a = x.abs();
    if p == 1.0 {
        a
    } else if p == 2.0 {
        a * a
    } else if p.fract() == 0.0 && p <= 16.0 {
        a.powi(p as i32)
    } else {
        a.powf(p)
    }
}

fn check_order(p: f64) -> Result<()> {
    if !(p >= 1.0) {
        return Err(Error::InvalidArgument(format!("order p must be >= 1, got {p}")));
    }
    Ok(())
}

/// `W_p^p` between two equal-size uniform 1D empirical measures:
/// sort both and average `|x_(i) - y_(i)|^p`.
pub fn wasserstein1d_pp(xs: &[f64], ys: &[f64], p: f64) -> Result<f64> {
    check_order(p)?;
    if xs.len() != ys.len() || xs.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "equal nonzero lengths required, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let mut a = xs.to_vec();
    let mut b = ys.to_vec();
    a.sort_by(|u, v| u.total_cmp(v));
    b.sort_by(|u, v| u.total_cmp(v));
    let n = a.len() as f64;
    Ok(a.iter()
        .zip(b.iter())
        .map(|(x, y)| abs_pow(x - y, p))
        .sum::<f64>()
        / n)
}

/// 1D Wasserstein distance between equal-size uniform empirical measures.
pub fn wasserstein1d_equal(xs: &[f64], ys: &[f64], p: f64) -> Result<f64> {
    Ok(wasserstein1d_pp(xs, ys, p)?.powf(1.0 / p))
}

/// A weighted 1D empirical measure.
#[derive(Debug, Clone)]
pub struct Empirical1D {
    values: Vec<f64>,
    weights: Vec<f64>,
}

impl Empirical1D {
    pub fn new(values: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.len() != weights.len() {
            return Err(Error::InvalidArgument(
                "values and weights must be nonempty and the same length".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite value".into()));
        }
        if weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::InvalidArgument("weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        Ok(Self { values, weights })
    }

    pub fn uniform(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        if n == 0 {
            return Err(Error::InvalidArgument("empty measure".into()));
        }
        let w = vec![1.0 / n as f64; n];
        Self::new(values, w)
    }
}

/// 1D Wasserstein distance for general weighted measures, by merging CDF
/// breakpoints and integrating `|F_mu^{-1} - F_nu^{-1}|^p` piecewise.
pub fn wasserstein1d_general(mu: &Empirical1D, nu: &Empirical1D, p: f64) -> Result<f64> {
    check_order(p)?;
    let sorted = |m: &Empirical1D| {
        let mut idx: Vec<usize> = (0..m.values.len()).collect();
        idx.sort_by(|&i, &j| m.values[i].total_cmp(&m.values[j]));
        idx.into_iter()
            .map(|i| (m.values[i], m.weights[i]))
            .collect::<Vec<_>>()
    };
    let a = sorted(mu);
    let b = sorted(nu);
    let (mut i, mut j) = (0usize, 0usize);
    let (mut ra, mut rb) = (a[0].1, b[0].1); // remaining mass in current atoms
    let mut acc = 0.0;
    loop {
        let m = ra.min(rb);
        acc += m * abs_pow(a[i].0 - b[j].0, p);
        ra -= m;
        rb -= m;
        if ra <= 1e-15 {
            i += 1;
            if i == a.len() {
                break;
            }
            ra = a[i].1;
        }
        if rb <= 1e-15 {
            j += 1;
            if j == b.len() {
                break;
            }
            rb = b[j].1;
        }
    }
    Ok(acc.powf(1.0 / p))
}

/// A cloud of `n` equally weighted points in `R^k`.
#[derive(Debug, Clone)]
pub struct PointCloudK {
    points: Vec<Vec<f64>>,
}

impl PointCloudK {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        let first = points
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty point cloud".into()))?;
        let k = first.len();
        if k == 0 {
            return Err(Error::InvalidArgument("zero-dimensional points".into()));
        }
        if points.iter().any(|q| q.len() != k) {
            return Err(Error::InvalidArgument("mixed point dimensions".into()));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite coordinate".into()));
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }
}

/// O(n^3) minimum-cost perfect matching on a square cost matrix
/// (Jonker-Volgenant style shortest augmenting paths). Returns the
/// column assigned to each row and the total cost.
pub fn hungarian(cost: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let n = cost.len();
    debug_assert!(cost.iter().all(|r| r.len() == n));
    // job[w] = row assigned to column w; column n is a virtual start slot
    let mut job: Vec<Option<usize>> = vec![None; n + 1];
    let mut ys = vec![0.0f64; n];
    let mut yt = vec![0.0f64; n + 1];
    for row in 0..n {
        let mut w_curr = n;
        job[w_curr] = Some(row);
        let mut min_to = vec![f64::INFINITY; n + 1];
        let mut prv: Vec<Option<usize>> = vec![None; n + 1];
        let mut in_z = vec![false; n + 1];
        while let Some(j) = job[w_curr] {
            in_z[w_curr] = true;
            let mut delta = f64::INFINITY;
            let mut w_next = 0;
            for w in 0..n {
                if !in_z[w] {
                    let diff = cost[j][w] - ys[j] - yt[w];
                    if diff < min_to[w] {
                        min_to[w] = diff;
                        prv[w] = Some(w_curr);
                    }
                    if min_to[w] < delta {
                        delta = min_to[w];
                        w_next = w;
                    }
                }
            }
            for w in 0..=n {
                if in_z[w] {
                    if let Some(r) = job[w] {
                        ys[r] += delta;
                    }
                    yt[w] -= delta;
                } else {
                    min_to[w] -= delta;
                }
            }
            w_curr = w_next;
        }
        // augment along the alternating path
        while w_curr != n {
            let w_prev = prv[w_curr].expect("path back to start");
            job[w_curr] = job[w_prev];
            w_curr = w_prev;
        }
    }
    let mut assign = vec![0usize; n];
    let mut total = 0.0;
    for w in 0..n {
        let r = job[w].expect("perfect matching");
        assign[r] = w;
        total += cost[r][w];
    }
    (assign, total)
}

/// Builds the Euclidean `||x_i - y_j||^p` cost matrix for two equal-size
/// clouds.
pub(crate) fn assignment_cost_matrix(x: &PointCloudK, y: &PointCloudK, p: f64) -> Vec<Vec<f64>> {
    x.points()
        .iter()
        .map(|xi| {
            y.points()
                .iter()
                .map(|yj| {
                    let d2: f64 = xi
                        .iter()
                        .zip(yj.iter())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    if p == 2.0 {
                        d2
                    } else {
                        abs_pow(d2.sqrt(), p)
                    }
                })
                .collect()
        })
        .collect()
}

/// Exact `W_p` between equal-size uniform point clouds in `R^k`:
/// `W_p^p = (1/n) * min-cost perfect matching` under the Euclidean
/// `||.||^p` ground cost.
pub fn exact_wasserstein_assignment(x: &PointCloudK, y: &PointCloudK, p: f64) -> Result<f64> {
    check_order(p)?;
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "equal sizes required, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.dim() != y.dim() {
        return Err(Error::InvalidArgument(format!(
            "equal dims required, got {} and {}",
            x.dim(),
            y.dim()
        )));
    }
    if x.len() > 512 {
        return Err(Error::Capacity(format!(
            "assignment solver limited to n <= 512, got {}",
            x.len()
        )));
    }
    let cost = assignment_cost_matrix(x, y, p);
    let (_, total) = hungarian(&cost);
    Ok((total / x.len() as f64).powf(1.0 / p))
}
