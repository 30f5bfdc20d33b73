//! L1-regularized reconstruction solved by a discrete-time projection
//! iteration.
//!
//! The problem is `min_x ½‖Z x − q‖² + λ‖x‖₁`. Its optimality conditions are
//! `H x − c + λ y = 0` and `y = g(y + x)`, where `H = ZᵀZ`, `c = Zᵀq` and `g`
//! clamps onto `[-1, 1]`; `y` is then a subgradient of `‖x‖₁`. The iteration
//!
//! ```text
//! x(k+1) = x(k) − γ̂ (H x(k) − c + λ g(y(k) + x(k)))
//! y(k+1) = g(y(k) + x(k+1))
//! ```
//!
//! has exactly those conditions as its fixed points. With
//! [`GainScaling::Spectral`] the gain is divided by the largest eigenvalue of
//! `H`, which keeps a fixed `γ` stable regardless of how many rows `Z` has;
//! the fixed points do not depend on the gain.
//!
//! Matrix targets are solved column by column against the same `H`.

use ndarray::{Array, Array2, ArrayBase, ArrayView1, ArrayView2, Axis, Data, Dimension, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Box `[lo, hi]` applied componentwise by [`project_g`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClampBounds {
    pub lo: f64,
    pub hi: f64,
}

impl Default for ClampBounds {
    fn default() -> Self {
        Self { lo: -1.0, hi: 1.0 }
    }
}

impl ClampBounds {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::Argument(format!("clamp bounds need lo < hi, got [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    #[inline]
    pub fn clamp(&self, u: f64) -> f64 {
        if u > self.hi {
            self.hi
        } else if u < self.lo {
            self.lo
        } else {
            u
        }
    }
}

/// Piecewise-linear projection onto the box `bounds`.
pub fn project_g<S, D>(u: &ArrayBase<S, D>, bounds: ClampBounds) -> Result<Array<f64, D>>
where
    S: Data<Elem = f64>,
    D: Dimension,
{
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("projection input is not finite".into()));
    }
    Ok(u.mapv(|v| bounds.clamp(v)))
}

/// How the user-facing gain `γ` is turned into the step actually taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GainScaling {
    /// Step `γ` as given.
    Raw,
    /// Step `γ / λ_max(ZᵀZ)`.
    Spectral,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub lambda: f64,
    pub gamma: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub gain_scaling: GainScaling,
    /// Residual level treated as blow-up by the divergence check.
    pub divergence_ceiling: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: 0.01,
            gamma: 0.4,
            max_iters: 500,
            tol: 1e-5,
            gain_scaling: GainScaling::Spectral,
            divergence_ceiling: 1e8,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Argument(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Argument(format!("gamma must be positive, got {}", self.gamma)));
        }
        if self.max_iters == 0 {
            return Err(Error::Argument("max_iters must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Argument(format!("tol must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

/// Consecutive over-ceiling steps that count as divergence.
pub const DIVERGENCE_PATIENCE: usize = 50;

/// `min_x ½‖Z x − q‖² + λ‖x‖₁` over one or more target columns.
#[derive(Debug, Clone)]
pub struct L1LsProblem<'a> {
    design: ArrayView2<'a, f64>,
    target: ArrayView2<'a, f64>,
    lambda: f64,
    gamma: f64,
}

impl<'a> L1LsProblem<'a> {
    pub fn new(
        design: ArrayView2<'a, f64>,
        target: ArrayView2<'a, f64>,
        lambda: f64,
        gamma: f64,
    ) -> Result<Self> {
        if !(lambda > 0.0) || !(gamma > 0.0) {
            return Err(Error::Argument(format!(
                "lambda and gamma must be positive, got {lambda} and {gamma}"
            )));
        }
        if design.nrows() != target.nrows() {
            return Err(Error::Argument(format!(
                "design has {} rows, target has {}",
                design.nrows(),
                target.nrows()
            )));
        }
        if design.iter().chain(target.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Data("problem entries must be finite".into()));
        }
        Ok(Self {
            design,
            target,
            lambda,
            gamma,
        })
    }

    /// Single-column target.
    pub fn with_vector(
        design: ArrayView2<'a, f64>,
        target: ArrayView1<'a, f64>,
        lambda: f64,
        gamma: f64,
    ) -> Result<Self> {
        let n = target.len();
        let target = target
            .into_shape_with_order((n, 1))
            .map_err(|e| Error::Argument(e.to_string()))?;
        Self::new(design, target, lambda, gamma)
    }

    pub fn design(&self) -> ArrayView2<'a, f64> {
        self.design
    }

    pub fn target(&self) -> ArrayView2<'a, f64> {
        self.target
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn unknowns(&self) -> usize {
        self.design.ncols()
    }

    /// `ZᵀZ` and `Zᵀq`.
    pub fn normal_equations(&self) -> (Array2<f64>, Array2<f64>) {
        let zt = self.design.t();
        (zt.dot(&self.design), zt.dot(&self.target))
    }

    /// Objective value per target column.
    pub fn objective(&self, x: ArrayView2<'_, f64>) -> Vec<f64> {
        let resid = self.design.dot(&x) - self.target;
        resid
            .axis_iter(Axis(1))
            .zip(x.axis_iter(Axis(1)))
            .map(|(r, xc)| 0.5 * r.dot(&r) + self.lambda * xc.iter().map(|v| v.abs()).sum::<f64>())
            .collect()
    }
}

/// Final iterate of [`solve`].
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    /// State, one column per target column.
    pub x: Array2<f64>,
    /// Output (subgradient estimate), same shape as `x`.
    pub y: Array2<f64>,
    pub iteration: usize,
    /// Max-norm change of `x` in the last step.
    pub residual: f64,
    pub converged: bool,
}

/// Runs the projection iteration from `x = y = 0` until the step residual
/// drops below `tol` or `max_iters` steps have been taken.
pub fn solve(problem: &L1LsProblem<'_>, max_iters: usize, tol: f64) -> Result<SolverState> {
    let config = SolverConfig {
        lambda: problem.lambda,
        gamma: problem.gamma,
        max_iters,
        tol,
        ..SolverConfig::default()
    };
    solve_with(problem, &config)
}

/// [`solve`] with every knob taken from `config` (its `lambda` and `gamma`
/// are ignored in favour of the problem's).
pub fn solve_with(problem: &L1LsProblem<'_>, config: &SolverConfig) -> Result<SolverState> {
    if config.max_iters == 0 {
        return Err(Error::Argument("max_iters must be at least 1".into()));
    }
    if !(config.tol > 0.0) {
        return Err(Error::Argument(format!("tol must be positive, got {}", config.tol)));
    }
    let (h, c) = problem.normal_equations();
    iterate(h.view(), c.view(), problem.lambda, problem.gamma, config)
}

/// The iteration on precomputed normal equations `H = ZᵀZ`, `c = Zᵀq`.
pub fn iterate(
    h: ArrayView2<'_, f64>,
    c: ArrayView2<'_, f64>,
    lambda: f64,
    gamma: f64,
    config: &SolverConfig,
) -> Result<SolverState> {
    let bounds = ClampBounds::default();
    let step = match config.gain_scaling {
        GainScaling::Raw => gamma,
        GainScaling::Spectral => {
            let l = linalg::spectral_norm_psd(h);
            if l > 0.0 {
                gamma / l
            } else {
                gamma
            }
        }
    };

    let mut x = Array2::<f64>::zeros(c.raw_dim());
    let mut y = Array2::<f64>::zeros(c.raw_dim());
    let mut residual = f64::INFINITY;
    let mut over_ceiling = 0usize;
    let mut iteration = 0usize;
    let mut converged = false;

    while iteration < config.max_iters {
        iteration += 1;
        // grad = H x − c + λ g(y + x)
        let mut grad = h.dot(&x);
        Zip::from(&mut grad)
            .and(&c)
            .and(&x)
            .and(&y)
            .for_each(|g, &ci, &xi, &yi| *g += lambda * bounds.clamp(yi + xi) - ci);

        residual = 0.0;
        Zip::from(&mut x).and(&mut y).and(&grad).for_each(|xi, yi, &g| {
            let dx = step * g;
            *xi -= dx;
            *yi = bounds.clamp(*yi + *xi);
            residual = f64::max(residual, dx.abs());
        });

        if !residual.is_finite() {
            return Err(Error::Divergence {
                gamma,
                iterations: iteration,
                residual,
            });
        }
        if residual > config.divergence_ceiling {
            over_ceiling += 1;
            if over_ceiling >= DIVERGENCE_PATIENCE {
                return Err(Error::Divergence {
                    gamma,
                    iterations: iteration,
                    residual,
                });
            }
        } else {
            over_ceiling = 0;
        }
        if residual < config.tol {
            converged = true;
            break;
        }
    }

    Ok(SolverState {
        x,
        y,
        iteration,
        residual,
        converged,
    })
}

/// Checks both optimality conditions at max-norm tolerance `tol`.
pub fn check_optimality(problem: &L1LsProblem<'_>, state: &SolverState, tol: f64) -> bool {
    let (h, c) = problem.normal_equations();
    let bounds = ClampBounds::default();
    let stationarity = h.dot(&state.x) - &c + &(problem.lambda * &state.y);
    let fixed_point = Zip::from(&state.y)
        .and(&state.x)
        .fold(0.0f64, |m, &yi, &xi| m.max((yi - bounds.clamp(yi + xi)).abs()));
    linalg::max_abs(stationarity.iter().copied()) <= tol && fixed_point <= tol
}
