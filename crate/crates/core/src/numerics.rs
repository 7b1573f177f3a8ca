//! Weighted least squares and a damped Newton maximizer.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Designs whose weighted Gram matrix has a condition estimate above this are
/// treated as rank deficient.
pub const MAX_GRAM_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct WlsSolution {
    pub coefficients: DVector<f64>,
    /// Unweighted residuals `y - X b`.
    pub residuals: DVector<f64>,
    /// Estimate of cond(Xᵀ W X) after column equilibration; always ≥ 1.
    pub gram_condition_estimate: f64,
}

/// Minimizes `Σ wᵢ (yᵢ − xᵢᵀ b)²` through a column-pivoted Householder QR of
/// the `√W`-scaled, column-equilibrated design.
///
/// On a rank-deficient design the error lists the zero-based indices of the
/// columns the pivoting pushed past the numerical rank, formatted as strings;
/// callers that know the column names map them back.
pub fn solve_wls(design: &DMatrix<f64>, response: &DVector<f64>, weights: &[f64]) -> Result<WlsSolution> {
    let (n, p) = design.shape();
    if response.len() != n || weights.len() != n {
        return Err(Error::Dimension(format!(
            "design has {n} rows, response {}, weights {}",
            response.len(),
            weights.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(Error::Dimension(format!(
            "weight {w} is not a finite nonnegative number"
        )));
    }
    let positive = weights.iter().filter(|&&w| w > 0.0).count();
    if positive == 0 {
        return Err(Error::Dimension("all weights are zero".into()));
    }
    if p > positive {
        return Err(Error::Singular {
            columns: (positive..p).map(|j| j.to_string()).collect(),
            condition: f64::INFINITY,
        });
    }

    let mut a = design.clone();
    let mut b = response.clone();
    for i in 0..n {
        let s = weights[i].sqrt();
        a.row_mut(i).scale_mut(s);
        b[i] *= s;
    }
    let mut scale = vec![0.0; p];
    for (j, slot) in scale.iter_mut().enumerate() {
        let norm = a.column(j).norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::Singular {
                columns: vec![j.to_string()],
                condition: f64::INFINITY,
            });
        }
        *slot = norm;
        a.column_mut(j).unscale_mut(norm);
    }

    let qr = PivotedQr::factor(a, &mut b);
    let r00 = qr.diag[0].abs();
    let condition = |k: usize| {
        let rkk = qr.diag[k].abs();
        if rkk == 0.0 {
            f64::INFINITY
        } else {
            (r00 / rkk).powi(2)
        }
    };
    let too_large = |c: f64| c.is_nan() || c > MAX_GRAM_CONDITION;
    let gram_condition_estimate = condition(p.saturating_sub(1)).max(1.0);
    if too_large(gram_condition_estimate) {
        let first_bad = (0..p).find(|&k| too_large(condition(k))).unwrap_or(p - 1);
        let mut columns: Vec<usize> = qr.perm[first_bad..].to_vec();
        columns.sort_unstable();
        return Err(Error::Singular {
            columns: columns.iter().map(|j| j.to_string()).collect(),
            condition: gram_condition_estimate,
        });
    }

    let z = qr.solve_upper(&b);
    let mut coefficients = DVector::zeros(p);
    for (k, &j) in qr.perm.iter().enumerate() {
        coefficients[j] = z[k] / scale[j];
    }
    let residuals = response - design * &coefficients;
    Ok(WlsSolution {
        coefficients,
        residuals,
        gram_condition_estimate,
    })
}

/// Householder QR with column pivoting on the largest remaining column norm.
/// nalgebra's `ColPivQR` pivots on the largest entry and only solves square
/// systems, so neither rank detection nor least squares come out of it.
struct PivotedQr {
    /// Householder vectors below the diagonal, R on and above it.
    packed: DMatrix<f64>,
    diag: Vec<f64>,
    perm: Vec<usize>,
}

impl PivotedQr {
    /// Factors `a` in place and applies Qᵀ to `rhs`.
    fn factor(mut a: DMatrix<f64>, rhs: &mut DVector<f64>) -> Self {
        let (n, p) = a.shape();
        let mut perm: Vec<usize> = (0..p).collect();
        let mut diag = vec![0.0; p];
        for k in 0..p {
            let pivot = (k..p)
                .map(|j| (j, a.view((k, j), (n - k, 1)).norm_squared()))
                .fold((k, f64::NEG_INFINITY), |best, c| if c.1 > best.1 { c } else { best })
                .0;
            if pivot != k {
                a.swap_columns(k, pivot);
                perm.swap(k, pivot);
            }
            let norm = a.view((k, k), (n - k, 1)).norm();
            if norm == 0.0 {
                diag[k] = 0.0;
                continue;
            }
            let alpha = if a[(k, k)] > 0.0 { -norm } else { norm };
            // v = x - alpha e1, stored in place; normalized so v[0] = 1.
            let v0 = a[(k, k)] - alpha;
            for i in k + 1..n {
                a[(i, k)] /= v0;
            }
            a[(k, k)] = 1.0;
            let tau = -v0 / alpha;
            for j in k + 1..p {
                let dot: f64 = (k..n).map(|i| a[(i, k)] * a[(i, j)]).sum();
                let f = tau * dot;
                for i in k..n {
                    let vi = a[(i, k)];
                    a[(i, j)] -= f * vi;
                }
            }
            let dot: f64 = (k..n).map(|i| a[(i, k)] * rhs[i]).sum();
            let f = tau * dot;
            for i in k..n {
                rhs[i] -= f * a[(i, k)];
            }
            diag[k] = alpha;
            a[(k, k)] = alpha;
        }
        PivotedQr { packed: a, diag, perm }
    }

    fn solve_upper(&self, qtb: &DVector<f64>) -> DVector<f64> {
        let p = self.diag.len();
        let mut z = DVector::zeros(p);
        for k in (0..p).rev() {
            let mut s = qtb[k];
            for j in k + 1..p {
                s -= self.packed[(k, j)] * z[j];
            }
            z[k] = s / self.diag[k];
        }
        z
    }
}

/// Objective value with its first and second derivatives at a point.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonResult {
    pub argmax: DVector<f64>,
    pub objective_at_argmax: f64,
    pub iterations: usize,
    pub converged: bool,
    pub final_gradient_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    /// Stop once the gradient ∞-norm is at most this, or the Newton
    /// decrement `gᵀ(−H)⁻¹g` is below `max(tol², 64 ε |f|)`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol: 1e-8,
            max_iter: 50,
        }
    }
}

const MAX_HALVINGS: usize = 30;
const DIVERGENCE_NORM: f64 = 1e6;

/// Damped Newton ascent. Each step solves `(−H) d = g` and is halved (up to
/// 30 times) until the objective does not decrease.
pub fn newton_maximize<F>(mut objective: F, init: DVector<f64>, options: NewtonOptions) -> Result<NewtonResult>
where
    F: FnMut(&DVector<f64>) -> Evaluation,
{
    let mut x = init;
    let mut current = objective(&x);
    if !is_finite(&current) {
        return Err(Error::NonFinite("objective at the initial point".into()));
    }
    let mut grad_norm = current.gradient.amax();
    if options.max_iter == 0 {
        return Ok(NewtonResult {
            argmax: x,
            objective_at_argmax: current.value,
            iterations: 0,
            converged: false,
            final_gradient_norm: grad_norm,
        });
    }

    let mut iterations = 0;
    let mut converged = grad_norm <= options.tol;
    while !converged && iterations < options.max_iter {
        let (direction, newton) = ascent_direction(&current);
        // Predicted gain of a full Newton step.
        let decrement = direction.dot(&current.gradient);
        if newton && decrement <= resolution(current.value, options.tol) {
            // Take the final step unconditionally: the line search cannot
            // see changes this small.
            let candidate = &x + &direction;
            let eval = objective(&candidate);
            if is_finite(&eval) {
                x = candidate;
                grad_norm = eval.gradient.amax();
                current = eval;
                iterations += 1;
            }
            converged = true;
            break;
        }
        let slack = 16.0 * f64::EPSILON * current.value.abs();
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let candidate = &x + &direction * step;
            let eval = objective(&candidate);
            if is_finite(&eval) && eval.value >= current.value - slack {
                accepted = Some((candidate, eval));
                break;
            }
            step *= 0.5;
        }
        iterations += 1;
        let Some((next, eval)) = accepted else {
            // No ascent available along the Newton direction: numerically at
            // the optimum, or stuck.
            break;
        };
        let norm = next.amax();
        if norm > DIVERGENCE_NORM {
            return Err(Error::Divergence { iterations, norm });
        }
        x = next;
        current = eval;
        grad_norm = current.gradient.amax();
        converged = grad_norm <= options.tol;
    }

    Ok(NewtonResult {
        argmax: x,
        objective_at_argmax: current.value,
        iterations,
        converged,
        final_gradient_norm: grad_norm,
    })
}

fn is_finite(e: &Evaluation) -> bool {
    e.value.is_finite() && e.gradient.iter().all(|g| g.is_finite())
}

fn resolution(value: f64, tol: f64) -> f64 {
    (tol * tol).max(64.0 * f64::EPSILON * value.abs())
}

/// Newton direction when `−H` is usable, else the gradient; the flag says
/// which.
fn ascent_direction(e: &Evaluation) -> (DVector<f64>, bool) {
    let neg_h = -&e.hessian;
    if let Some(chol) = neg_h.clone().cholesky() {
        return (chol.solve(&e.gradient), true);
    }
    if let Some(d) = neg_h.lu().solve(&e.gradient) {
        if d.dot(&e.gradient) > 0.0 && d.iter().all(|v| v.is_finite()) {
            return (d, true);
        }
    }
    (e.gradient.clone(), false)
}

/// Checks that the Gram matrix `Xᵀ X` of `design` is numerically full rank,
/// returning the indices of offending columns otherwise.
pub(crate) fn check_full_rank(design: &DMatrix<f64>) -> std::result::Result<(), (Vec<usize>, f64)> {
    let ones = vec![1.0; design.nrows()];
    let y = DVector::zeros(design.nrows());
    match solve_wls(design, &y, &ones) {
        Ok(_) => Ok(()),
        Err(Error::Singular { columns, condition }) => {
            Err((columns.iter().filter_map(|c| c.parse().ok()).collect(), condition))
        }
        Err(_) => Err(((0..design.ncols()).collect(), f64::INFINITY)),
    }
}
