//! Linear single-head classifier trained with projected gradient steps.
//!
//! `P` is kept equal to `α(AᵀA + αI)⁻¹`, `A` stacking every representation
//! row of the finished tasks, through rank-1 Woodbury updates. Gradient
//! steps are multiplied by `P`, so they stay nearly orthogonal to the row
//! space of earlier tasks and leave those predictions almost unchanged.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::linalg;

/// Projector updates between two re-symmetrizations of `P`.
pub const SYMMETRIZE_EVERY: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadConfig {
    pub mu: f64,
    pub eta: f64,
    pub alpha: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Share of task-1 training rows used by the closed-form initialization.
    pub init_fraction: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            mu: 2f64.powi(-30),
            eta: 0.01,
            alpha: 0.1,
            batch_size: 64,
            epochs: 5,
            init_fraction: 0.2,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::Argument(format!("mu must be non-negative, got {}", self.mu)));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Argument(format!("eta must be positive, got {}", self.eta)));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Argument(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.batch_size == 0 {
            return Err(Error::Argument("batch size must be positive".into()));
        }
        if !(self.init_fraction > 0.0 && self.init_fraction <= 1.0) {
            return Err(Error::Argument(format!(
                "init fraction must lie in (0, 1], got {}",
                self.init_fraction
            )));
        }
        Ok(())
    }
}

/// Ridge solution `(VᵀV + μI)⁻¹VᵀY`, computed in the dual form
/// `Vᵀ(VVᵀ + μI)⁻¹Y` when `V` has fewer rows than columns.
pub fn init_closed_form(v: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, mu: f64) -> Result<Array2<f64>> {
    if v.nrows() == 0 {
        return Err(Error::Argument("closed-form init needs at least one row".into()));
    }
    if v.nrows() != y.nrows() {
        return Err(Error::Argument(format!("V has {} rows, Y has {}", v.nrows(), y.nrows())));
    }
    let singular = |e: Error| Error::Numerical(format!("closed-form init: {e}"));
    if v.nrows() >= v.ncols() {
        let mut g = v.t().dot(&v);
        g.diag_mut().mapv_inplace(|d| d + mu);
        linalg::solve_spd(g.view(), v.t().dot(&y).view()).map_err(singular)
    } else {
        let mut g = v.dot(&v.t());
        g.diag_mut().mapv_inplace(|d| d + mu);
        let a = linalg::solve_spd(g.view(), y).map_err(singular)?;
        Ok(v.t().dot(&a))
    }
}

/// Per-parameter importance and the anchor weights it protects.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherState {
    /// Elementwise square root of the accumulated Fisher estimate.
    pub q: Array2<f64>,
    pub beta_anchor: Array2<f64>,
}

impl FisherState {
    pub fn new(width: usize, classes: usize) -> Self {
        Self {
            q: Array2::zeros((width, classes)),
            beta_anchor: Array2::zeros((width, classes)),
        }
    }

    /// Adds the empirical Fisher of the squared-error loss at `beta`: the
    /// mean over rows of the squared per-sample gradient `vᵀ(vβ − y)`.
    pub fn accumulate(&mut self, v: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, beta: ArrayView2<'_, f64>) {
        if v.nrows() == 0 {
            return;
        }
        let resid = v.dot(&beta) - y;
        let f = v.mapv(|x| x * x).t().dot(&resid.mapv(|r| r * r)) / v.nrows() as f64;
        Zip::from(&mut self.q).and(&f).for_each(|q, &fi| *q = (*q * *q + fi).sqrt());
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputHead {
    beta: Array2<f64>,
    p: Array2<f64>,
    mu: f64,
    eta: f64,
    alpha: f64,
    tasks_seen: usize,
    projector_updates: u64,
}

impl OutputHead {
    /// Zero weights over all `classes` columns and `P = I`.
    pub fn new(width: usize, classes: usize, config: &HeadConfig) -> Result<Self> {
        config.validate()?;
        if width == 0 || classes == 0 {
            return Err(Error::Argument(format!("head shape {width}x{classes} is empty")));
        }
        Ok(Self {
            beta: Array2::zeros((width, classes)),
            p: Array2::eye(width),
            mu: config.mu,
            eta: config.eta,
            alpha: config.alpha,
            tasks_seen: 0,
            projector_updates: 0,
        })
    }

    pub fn beta(&self) -> ArrayView2<'_, f64> {
        self.beta.view()
    }

    pub fn projector(&self) -> ArrayView2<'_, f64> {
        self.p.view()
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn tasks_seen(&self) -> usize {
        self.tasks_seen
    }

    pub fn width(&self) -> usize {
        self.beta.nrows()
    }

    pub fn classes(&self) -> usize {
        self.beta.ncols()
    }

    pub fn set_beta(&mut self, beta: Array2<f64>) -> Result<()> {
        if beta.dim() != self.beta.dim() {
            return Err(Error::Argument(format!(
                "beta must be {:?}, got {:?}",
                self.beta.dim(),
                beta.dim()
            )));
        }
        if beta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("beta has non-finite entries".into()));
        }
        self.beta = beta;
        Ok(())
    }

    /// Overwrites `P`; intended for tests that need a specific projector.
    pub fn set_projector(&mut self, p: Array2<f64>) -> Result<()> {
        if p.dim() != self.p.dim() {
            return Err(Error::Argument(format!("P must be {:?}, got {:?}", self.p.dim(), p.dim())));
        }
        self.p = p;
        Ok(())
    }

    /// Rank-1 Woodbury update `P ← P − P vᵀ v P / (α + v P vᵀ)`.
    pub fn update_projector(&mut self, v: ArrayView1<'_, f64>) -> Result<()> {
        if v.len() != self.width() {
            return Err(Error::Argument(format!("row has width {}, head has {}", v.len(), self.width())));
        }
        let pv: Array1<f64> = self.p.dot(&v);
        let denom = self.alpha + v.dot(&pv);
        if !(denom > 0.0) {
            return Err(Error::Numerical(format!("projector update denominator {denom} is not positive")));
        }
        let scale = 1.0 / denom;
        for (i, mut row) in self.p.axis_iter_mut(Axis(0)).enumerate() {
            let a = pv[i] * scale;
            if a != 0.0 {
                row.scaled_add(-a, &pv);
            }
        }
        self.projector_updates += 1;
        if self.projector_updates.is_multiple_of(SYMMETRIZE_EVERY as u64) {
            linalg::symmetrize(&mut self.p);
        }
        Ok(())
    }

    fn check_batch(&self, v: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Result<()> {
        if v.ncols() != self.width() || y.ncols() != self.classes() || v.nrows() != y.nrows() {
            return Err(Error::Argument(format!(
                "batch shapes {:?} and {:?} do not fit a {}x{} head",
                v.dim(),
                y.dim(),
                self.width(),
                self.classes()
            )));
        }
        if v.nrows() == 0 {
            return Err(Error::Argument("empty batch".into()));
        }
        Ok(())
    }

    /// Least-squares gradient `(1/N) Vᵀ(Vβ − Y)`.
    fn gradient(&self, v: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Array2<f64> {
        let resid = v.dot(&self.beta) - y;
        v.t().dot(&resid) / v.nrows() as f64
    }

    fn apply(&mut self, delta: Array2<f64>, projected: bool) -> Result<()> {
        let step = if projected { self.p.dot(&delta) } else { delta };
        self.beta.scaled_add(-self.eta, &step);
        if self.beta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "output weights became non-finite (eta = {})",
                self.eta
            )));
        }
        Ok(())
    }

    /// `β ← β − η P Δβ`.
    pub fn sgd_step_orthogonal(&mut self, v: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Result<()> {
        self.check_batch(v, y)?;
        let delta = self.gradient(v, y);
        self.apply(delta, true)
    }

    /// `β ← β − η Δβ`, ignoring `P`.
    pub fn sgd_step_plain(&mut self, v: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Result<()> {
        self.check_batch(v, y)?;
        let delta = self.gradient(v, y);
        self.apply(delta, false)
    }

    /// Projected step on the least-squares loss plus
    /// `(μ/2) Σ Q² ⊙ (β − β_anchor)²`.
    pub fn sgd_step_ewc(&mut self, fisher: &FisherState, v: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Result<()> {
        self.check_batch(v, y)?;
        if fisher.q.dim() != self.beta.dim() || fisher.beta_anchor.dim() != self.beta.dim() {
            return Err(Error::Argument("Fisher state does not match the head shape".into()));
        }
        let mut delta = self.gradient(v, y);
        if self.mu != 0.0 {
            let mu = self.mu;
            Zip::from(&mut delta)
                .and(&fisher.q)
                .and(&self.beta)
                .and(&fisher.beta_anchor)
                .for_each(|d, &q, &b, &a| *d += mu * (q * q) * (b - a));
        }
        self.apply(delta, true)
    }

    /// Folds every row of the finished task into `P`, accumulates its Fisher
    /// estimate, moves the anchor to the current weights and counts the task.
    pub fn finish_task(&mut self, fisher: &mut FisherState, v: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Result<()> {
        if v.nrows() > 0 {
            self.check_batch(v, y)?;
            for row in v.rows() {
                self.update_projector(row)?;
            }
            fisher.accumulate(v, y, self.beta.view());
            fisher.beta_anchor.assign(&self.beta);
        }
        self.tasks_seen += 1;
        Ok(())
    }

    /// Raw scores `Vβ`.
    pub fn scores(&self, v: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if v.ncols() != self.width() {
            return Err(Error::Argument(format!("rows have width {}, head has {}", v.ncols(), self.width())));
        }
        Ok(v.dot(&self.beta))
    }

    /// Highest-scoring class per row; ties go to the lowest index.
    pub fn predict(&self, v: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        Ok(argmax_rows(self.scores(v)?.view()))
    }

    /// Checkpoint blob, optionally carrying the Fisher state.
    pub fn to_bytes(&self, fisher: Option<&FisherState>) -> Vec<u8> {
        let mut w = Writer::new(HEAD_MAGIC, HEAD_VERSION);
        w.f64(self.mu);
        w.f64(self.eta);
        w.f64(self.alpha);
        w.usize(self.tasks_seen);
        w.u64(self.projector_updates);
        w.usize(self.width());
        w.usize(self.classes());
        w.f64s(self.beta.iter());
        w.f64s(self.p.iter());
        match fisher {
            Some(f) => {
                w.u8(1);
                w.f64s(f.q.iter());
                w.f64s(f.beta_anchor.iter());
            }
            None => w.u8(0),
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, Option<FisherState>)> {
        let (mut r, version) = Reader::open(bytes, HEAD_MAGIC, "head")?;
        if version != HEAD_VERSION {
            return Err(Error::Format(format!("unsupported head version {version}")));
        }
        let mu = r.f64()?;
        let eta = r.f64()?;
        let alpha = r.f64()?;
        let tasks_seen = r.usize()?;
        let projector_updates = r.u64()?;
        let width = r.usize()?;
        let classes = r.usize()?;
        let n = width
            .checked_mul(classes)
            .ok_or_else(|| Error::Format("head shape overflows".into()))?;
        let matrix = |r: &mut Reader<'_>, rows: usize, cols: usize| -> Result<Array2<f64>> {
            let n = rows
                .checked_mul(cols)
                .ok_or_else(|| Error::Format("head shape overflows".into()))?;
            Array2::from_shape_vec((rows, cols), r.f64s(n)?).map_err(|e| Error::Format(e.to_string()))
        };
        let beta = matrix(&mut r, width, classes)?;
        let p = matrix(&mut r, width, width)?;
        let fisher = match r.u8()? {
            0 => None,
            1 => Some(FisherState {
                q: matrix(&mut r, width, classes)?,
                beta_anchor: matrix(&mut r, width, classes)?,
            }),
            c => return Err(Error::Format(format!("bad Fisher flag {c}"))),
        };
        r.finish()?;
        debug_assert_eq!(beta.len(), n);
        Ok((
            Self {
                beta,
                p,
                mu,
                eta,
                alpha,
                tasks_seen,
                projector_updates,
            },
            fisher,
        ))
    }
}

const HEAD_MAGIC: &[u8; 4] = b"IF2H";
const HEAD_VERSION: u32 = 1;

/// Column index of each row's maximum, first index on ties.
pub fn argmax_rows(scores: ArrayView2<'_, f64>) -> Vec<usize> {
    scores
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
