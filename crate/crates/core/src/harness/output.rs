use std::fs;
use std::path::{Path, PathBuf};

use super::ablation::{BlockAblationRow, InitAblationRow, RademacherCurve};
use super::experiment::RunResult;
use crate::error::{Error, Result};

pub const SUMMARY_HEADER: [&str; 8] = [
    "variant",
    "run",
    "weight_seed",
    "ordering_seed",
    "shuffle_seed",
    "acc",
    "bwt",
    "fwt",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn with_path<T>(path: &Path, r: std::result::Result<T, csv::Error>) -> Result<T> {
    r.map_err(|e| Error::from(e).context(format!("writing {}", path.display())))
}

pub fn r_matrix_file_name(r: &RunResult) -> String {
    format!("R_matrix_{}_run{}.csv", r.variant, r.run_index)
}

/// Writes `results.json`, `summary.csv` and one `R_matrix_*.csv` per run
/// into `out_dir`, creating it if needed. Returns the written paths.
pub fn emit_results(results: &[RunResult], out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    let json_path = dir.join("results.json");
    let json = serde_json::to_vec_pretty(results)?;
    fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
    written.push(json_path);

    let summary_path = dir.join("summary.csv");
    let mut w = csv_writer(&summary_path)?;
    with_path(&summary_path, w.write_record(SUMMARY_HEADER))?;
    for r in results {
        with_path(
            &summary_path,
            w.write_record([
                r.variant.to_string(),
                r.run_index.to_string(),
                r.seeds.weight_seed.to_string(),
                r.seeds.ordering_seed.to_string(),
                r.seeds.shuffle_seed.to_string(),
                r.acc.to_string(),
                opt(r.bwt),
                opt(r.fwt),
            ]),
        )?;
    }
    w.flush().map_err(|e| Error::io(&summary_path, e))?;
    written.push(summary_path);

    for r in results {
        let path = dir.join(r_matrix_file_name(r));
        let t = r.accuracy.num_tasks();
        let mut w = csv_writer(&path)?;
        let header: Vec<String> = std::iter::once("after_task".to_string())
            .chain((0..t).map(|j| format!("task_{j}")))
            .collect();
        with_path(&path, w.write_record(&header))?;
        for (i, row) in r.accuracy.rows().iter().enumerate() {
            let cells: Vec<String> = std::iter::once(i.to_string())
                .chain((0..t).map(|j| row.get(j).map(|v| v.to_string()).unwrap_or_default()))
                .collect();
            with_path(&path, w.write_record(&cells))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

/// Reads back a `results.json` written by [`emit_results`].
pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<RunResult>> {
    let path = path.as_ref();
    let text = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&text)?)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_vec_pretty(value)?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

/// `blocks.json` plus `blocks.csv` (one row per layout, best ACC first).
pub fn emit_block_ablation(rows: &[BlockAblationRow], out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json_path = dir.join("blocks.json");
    write_json(&json_path, &rows)?;
    let csv_path = dir.join("blocks.csv");
    let mut w = csv_writer(&csv_path)?;
    with_path(
        &csv_path,
        w.write_record(["n_blocks", "block_size", "acc_mean", "acc_std", "bwt_mean", "bwt_std", "fwt_mean", "fwt_std"]),
    )?;
    for r in rows {
        with_path(
            &csv_path,
            w.write_record([
                r.n_blocks.to_string(),
                r.block_size.to_string(),
                r.acc.mean.to_string(),
                r.acc.std.to_string(),
                r.bwt.mean.to_string(),
                r.bwt.std.to_string(),
                r.fwt.mean.to_string(),
                r.fwt.std.to_string(),
            ]),
        )?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    Ok(vec![json_path, csv_path])
}

/// `init.json` plus `init.csv`.
pub fn emit_init_ablation(rows: &[InitAblationRow], out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json_path = dir.join("init.json");
    write_json(&json_path, &rows)?;
    let csv_path = dir.join("init.csv");
    let mut w = csv_writer(&csv_path)?;
    with_path(
        &csv_path,
        w.write_record(["setting", "eta", "epochs", "loss_task1", "acc_task1", "acc_all"]),
    )?;
    for r in rows {
        with_path(
            &csv_path,
            w.write_record([
                r.setting.clone(),
                r.eta.to_string(),
                r.epochs.to_string(),
                r.task1_loss.mean.to_string(),
                r.task1_acc.mean.to_string(),
                r.acc_all.mean.to_string(),
            ]),
        )?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    Ok(vec![json_path, csv_path])
}

/// `rademacher.csv` with one row per run and session.
pub fn emit_rademacher(curves: &[RademacherCurve], out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("rademacher.csv");
    let mut w = csv_writer(&path)?;
    with_path(&path, w.write_record(["run", "label_seed", "session", "task_value", "accumulated"]))?;
    for c in curves {
        for (s, (v, a)) in c.per_task.iter().zip(&c.accumulated).enumerate() {
            with_path(
                &path,
                w.write_record([
                    c.run_index.to_string(),
                    c.label_seed.to_string(),
                    (s + 1).to_string(),
                    v.to_string(),
                    a.to_string(),
                ]),
            )?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(vec![path])
}
