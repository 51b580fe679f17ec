//! Classic solvers for the multi-network Sylvester fixed-point equation
//! `X = alpha * A1 X A2^T + (1 - alpha) * H` with symmetrically normalized
//! adjacency matrices, plus rating calibration for the resulting scores.
//!
//! `H` and `X` share the n1 x n2 orientation, with the first network acting
//! on the left.

use crate::data::PriorAssociation;
use crate::sparse::CsrMatrix;
use crate::Mat;
use ndarray::Array2;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SylvesterError {
    #[error("invalid solver config: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("problem has {unknowns} unknowns, direct solve capped at {cap}")]
    SizeCap { unknowns: usize, cap: usize },
    #[error("linear system is singular")]
    Singular,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverConfig {
    /// Contraction weight in (0, 1).
    pub alpha: f64,
    /// Stop when the Frobenius norm of successive iterates differs by at most this.
    pub tol: f64,
    pub max_iter: usize,
}

impl SolverConfig {
    pub fn new(alpha: f64, tol: f64, max_iter: usize) -> Result<Self, SylvesterError> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(SylvesterError::Config(format!("alpha must be in (0,1), got {alpha}")));
        }
        if tol <= 0.0 {
            return Err(SylvesterError::Config(format!("tol must be positive, got {tol}")));
        }
        if max_iter == 0 {
            return Err(SylvesterError::Config("max_iter must be at least 1".into()));
        }
        Ok(Self { alpha, tol, max_iter })
    }

    pub fn with_alpha(alpha: f64) -> Result<Self, SylvesterError> {
        Self::new(alpha, 1e-9, 10_000)
    }
}

/// Converged (or best-effort) solution of the fixed-point equation.
#[derive(Debug, Clone)]
pub struct SolutionX {
    pub x: Mat,
    pub iterations: usize,
    /// Frobenius norm of the last successive-iterate difference.
    pub final_residual: f64,
    pub converged: bool,
    /// Successive-difference norms per iteration, for contraction checks.
    pub diff_history: Vec<f64>,
}

fn frob(m: &Mat) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn check_shapes(a1: &CsrMatrix, a2: &CsrMatrix, h: &Mat) -> Result<(), SylvesterError> {
    if a1.rows() != a1.cols() || a2.rows() != a2.cols() {
        return Err(SylvesterError::Shape("adjacency matrices must be square".into()));
    }
    if h.nrows() != a1.rows() || h.ncols() != a2.rows() {
        return Err(SylvesterError::Shape(format!(
            "H is {}x{} but networks have {} and {} nodes",
            h.nrows(),
            h.ncols(),
            a1.rows(),
            a2.rows()
        )));
    }
    Ok(())
}

/// Fixed-point iteration `X <- alpha * A1 X A2^T + (1-alpha) * H` from
/// `X0 = H`. With spectral radii at most one the map is an alpha-contraction,
/// so the successive-difference ratio is bounded by alpha. Hitting `max_iter`
/// returns the best iterate flagged `converged = false`.
pub fn fixed_point_solve(
    a1: &CsrMatrix,
    a2: &CsrMatrix,
    h: &Mat,
    cfg: &SolverConfig,
) -> Result<SolutionX, SylvesterError> {
    check_shapes(a1, a2, h)?;
    let alpha = cfg.alpha;
    let mut x = h.clone();
    let mut diff_history = Vec::new();
    for iter in 1..=cfg.max_iter {
        // A1 * X first, then (.) * A2^T as (A2 * (.)^T)^T without forming A2^T.
        let left = a1.mul_dense(&x);
        let next = alpha * &a2.mul_dense(&left.t().to_owned()).t().to_owned() + (1.0 - alpha) * h;
        let diff = frob(&(&next - &x));
        diff_history.push(diff);
        x = next;
        if diff <= cfg.tol {
            return Ok(SolutionX {
                x,
                iterations: iter,
                final_residual: diff,
                converged: true,
                diff_history,
            });
        }
    }
    let final_residual = diff_history.last().copied().unwrap_or(0.0);
    Ok(SolutionX { x, iterations: cfg.max_iter, final_residual, converged: false, diff_history })
}

/// Default cap on unknowns for the dense direct solve.
pub const DIRECT_SOLVE_CAP: usize = 4096;

/// Solves the vectorized linear system
/// `(I - alpha * (A2 ⊗ A1)) vec(X) = (1 - alpha) vec(H)` by dense LU
/// factorization. Exact up to linear-solver precision; oracle use only.
pub fn kronecker_direct_solve(
    a1: &CsrMatrix,
    a2: &CsrMatrix,
    h: &Mat,
    alpha: f64,
    cap: Option<usize>,
) -> Result<SolutionX, SylvesterError> {
    check_shapes(a1, a2, h)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(SylvesterError::Config(format!("alpha must be in (0,1), got {alpha}")));
    }
    let n1 = a1.rows();
    let n2 = a2.rows();
    let unknowns = n1 * n2;
    let cap = cap.unwrap_or(DIRECT_SOLVE_CAP);
    if unknowns > cap {
        return Err(SylvesterError::SizeCap { unknowns, cap });
    }
    // Column-major flattening: x_{ij} lives at index j * n1 + i.
    let mut m = nalgebra::DMatrix::<f64>::identity(unknowns, unknowns);
    for (j, l, vb) in a2.iter() {
        for (i, k, va) in a1.iter() {
            m[(j * n1 + i, l * n1 + k)] -= alpha * va * vb;
        }
    }
    let mut rhs = nalgebra::DVector::<f64>::zeros(unknowns);
    for ((i, j), &v) in h.indexed_iter() {
        rhs[j * n1 + i] = (1.0 - alpha) * v;
    }
    let lu = m.lu();
    let sol = lu.solve(&rhs).ok_or(SylvesterError::Singular)?;
    let mut x = Array2::zeros((n1, n2));
    for j in 0..n2 {
        for i in 0..n1 {
            x[[i, j]] = sol[j * n1 + i];
        }
    }
    // Residual of the fixed-point form, for reporting.
    let left = a1.mul_dense(&x);
    let recomposed = alpha * &a2.mul_dense(&left.t().to_owned()).t().to_owned() + (1.0 - alpha) * h;
    let residual = frob(&(&recomposed - &x));
    Ok(SolutionX { x, iterations: 1, final_residual: residual, converged: true, diff_history: vec![] })
}

/// How solver scores map to the rating range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Calibration {
    /// Fit scalars (a, b) minimizing train-set squared error of `a*X + b`,
    /// then clip to the class range.
    Affine,
    /// Clip the raw scores only.
    Clip,
}

impl Calibration {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "affine" => Some(Self::Affine),
            "clip" => Some(Self::Clip),
            _ => None,
        }
    }
}

/// Calibrated rating predictions from a solver run.
#[derive(Debug, Clone)]
pub struct SylvesterPrediction {
    pub predictions: Mat,
    pub scale: f64,
    pub shift: f64,
    /// True when X was constant on the train set and the train-mean fallback
    /// was used.
    pub degenerate: bool,
}

/// Maps solver scores to ratings. The affine fit uses only `train_mask`
/// entries; predictions are clipped to the prior's class range. A constant X
/// on the train set falls back to the train-mean predictor.
pub fn sylvester_predict(
    sol: &SolutionX,
    prior: &PriorAssociation,
    train_mask: &Mat,
    calibration: Calibration,
) -> Result<SylvesterPrediction, SylvesterError> {
    if sol.x.dim() != prior.h.dim() || train_mask.dim() != prior.h.dim() {
        return Err(SylvesterError::Shape(format!(
            "X {:?}, H {:?} and train mask {:?} must agree",
            sol.x.dim(),
            prior.h.dim(),
            train_mask.dim()
        )));
    }
    let lo = prior.class_min();
    let hi = prior.class_max();
    let clip = |v: f64| v.clamp(lo, hi);

    let (scale, shift, degenerate) = match calibration {
        Calibration::Clip => (1.0, 0.0, false),
        Calibration::Affine => {
            let mut n = 0.0;
            let (mut sx, mut sh, mut sxx, mut sxh) = (0.0, 0.0, 0.0, 0.0);
            for ((i, j), &m) in train_mask.indexed_iter() {
                if m == 1.0 {
                    let x = sol.x[[i, j]];
                    let hv = prior.h[[i, j]];
                    n += 1.0;
                    sx += x;
                    sh += hv;
                    sxx += x * x;
                    sxh += x * hv;
                }
            }
            if n == 0.0 {
                return Err(SylvesterError::Config("train mask is empty".into()));
            }
            let var = sxx / n - (sx / n) * (sx / n);
            if var <= 1e-12 * (1.0 + sxx / n) {
                log::warn!("sylvester_predict: X constant on train entries, using train-mean fallback");
                (0.0, sh / n, true)
            } else {
                let a = (sxh / n - (sx / n) * (sh / n)) / var;
                let b = sh / n - a * (sx / n);
                (a, b, false)
            }
        }
    };
    let predictions = sol.x.mapv(|v| clip(scale * v + shift));
    Ok(SylvesterPrediction { predictions, scale, shift, degenerate })
}
