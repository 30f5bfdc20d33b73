//! Continual-learning scores and the Rademacher complexity estimate.

use ndarray::{Array1, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::output_head::init_closed_form;

/// Lower-triangular accuracy matrix: `rows[i][j]` is the test accuracy on
/// task `j` after training task `i` (`j ≤ i`).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    rows: Vec<Vec<f64>>,
    /// Accuracy of an independently trained model on each task.
    #[serde(default)]
    r_ind: Option<Vec<f64>>,
}

fn check_unit(v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Argument(format!("accuracy {v} outside [0, 1]")));
    }
    Ok(())
}

impl AccuracyMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a matrix from complete lower-triangular rows.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut m = Self::new();
        for r in rows {
            m.push_row(r)?;
        }
        Ok(m)
    }

    /// Appends the row measured after the next task; it must hold one entry
    /// per task seen so far.
    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        if row.len() != self.rows.len() + 1 {
            return Err(Error::Argument(format!(
                "row {} needs {} entries, got {}",
                self.rows.len(),
                self.rows.len() + 1,
                row.len()
            )));
        }
        row.iter().try_for_each(|&v| check_unit(v))?;
        self.rows.push(row);
        Ok(())
    }

    pub fn set_independent(&mut self, r_ind: Vec<f64>) -> Result<()> {
        r_ind.iter().try_for_each(|&v| check_unit(v))?;
        self.r_ind = Some(r_ind);
        Ok(())
    }

    pub fn independent(&self) -> Option<&[f64]> {
        self.r_ind.as_deref()
    }

    pub fn num_tasks(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.rows.get(i).and_then(|r| r.get(j)).copied()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.rows.iter().enumerate().map(|(i, r)| r[i]).collect()
    }

    pub fn last_row(&self) -> Option<&[f64]> {
        self.rows.last().map(|r| r.as_slice())
    }
}

/// Mean accuracy over all tasks after the last one is trained.
pub fn acc(r: &AccuracyMatrix) -> Result<f64> {
    let last = r
        .last_row()
        .ok_or_else(|| Error::Argument("ACC needs at least one task".into()))?;
    Ok(last.iter().sum::<f64>() / last.len() as f64)
}

/// Mean change of each earlier task's accuracy between just after it was
/// learned and the end of the sequence.
pub fn bwt(r: &AccuracyMatrix) -> Result<f64> {
    let t = r.num_tasks();
    if t < 2 {
        return Err(Error::Argument(format!("BWT needs at least two tasks, got {t}")));
    }
    let last = &r.rows[t - 1];
    let sum: f64 = (0..t - 1).map(|k| last[k] - r.rows[k][k]).sum();
    Ok(sum / (t - 1) as f64)
}

/// Mean gain of each later task's accuracy over an independently trained
/// model on that task.
pub fn fwt(r: &AccuracyMatrix) -> Result<f64> {
    let t = r.num_tasks();
    if t < 2 {
        return Err(Error::Argument(format!("FWT needs at least two tasks, got {t}")));
    }
    let ind = r
        .r_ind
        .as_ref()
        .ok_or_else(|| Error::Argument("FWT needs independent-model accuracies".into()))?;
    if ind.len() < t {
        return Err(Error::Argument(format!(
            "FWT needs {t} independent accuracies, got {}",
            ind.len()
        )));
    }
    let sum: f64 = (1..t).map(|k| r.rows[k][k] - ind[k]).sum();
    Ok(sum / (t - 1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RademacherEstimate {
    /// Estimate on each task's representations alone.
    pub per_task_values: Vec<f64>,
    pub num_draws: usize,
    pub label_seed: u64,
}

impl RademacherEstimate {
    /// Running sum over tasks: the value after each training session.
    pub fn accumulated(&self) -> Vec<f64> {
        self.per_task_values
            .iter()
            .scan(0.0, |acc, v| {
                *acc += v;
                Some(*acc)
            })
            .collect()
    }
}

/// Empirical Rademacher complexity per task.
///
/// For each draw a sign vector `ε ∈ {−1, +1}^m` is sampled, `head_builder`
/// fits a function to it on `V` and returns its values `h(x_i)`, and
/// `|(1/m) Σ h(x_i) ε_i|` is recorded. Draws are averaged.
pub fn rademacher_estimate<F>(
    head_builder: F,
    v_tasks: &[ArrayView2<'_, f64>],
    num_draws: usize,
    label_seed: u64,
) -> Result<RademacherEstimate>
where
    F: Fn(ArrayView2<'_, f64>, ArrayView1<'_, f64>) -> Result<Array1<f64>>,
{
    if num_draws == 0 {
        return Err(Error::Argument("need at least one draw".into()));
    }
    if v_tasks.is_empty() {
        return Err(Error::Argument("no representations given".into()));
    }
    let mut per_task_values = Vec::with_capacity(v_tasks.len());
    for (t, v) in v_tasks.iter().enumerate() {
        let m = v.nrows();
        if m == 0 {
            return Err(Error::Argument(format!("task {t} has no rows")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(label_seed);
        rng.set_stream(t as u64);
        let mut total = 0.0;
        for _ in 0..num_draws {
            let eps = Array1::from_shape_simple_fn(m, || if rng.random_bool(0.5) { 1.0 } else { -1.0 });
            let h = head_builder(*v, eps.view())?;
            if h.len() != m {
                return Err(Error::Argument(format!(
                    "head builder returned {} values for {m} rows",
                    h.len()
                )));
            }
            total += (h.dot(&eps) / m as f64).abs();
        }
        per_task_values.push(total / num_draws as f64);
    }
    Ok(RademacherEstimate {
        per_task_values,
        num_draws,
        label_seed,
    })
}

/// Head builder fitting a single ridge output to the signs.
pub fn ridge_sign_fit(mu: f64) -> impl Fn(ArrayView2<'_, f64>, ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    move |v, eps| {
        let m = eps.len();
        let y = eps.into_shape_with_order((m, 1)).map_err(|e| Error::Argument(e.to_string()))?;
        let beta = init_closed_form(v, y, mu)?;
        Ok(v.dot(&beta).column(0).to_owned())
    }
}
