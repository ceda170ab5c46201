use std::fs;
use std::path::{Path, PathBuf};

use super::run::{EpochRow, RunRecord};
use super::HarnessError;

fn header(k: usize) -> Vec<String> {
    let mut h: Vec<String> = ["epoch", "reward", "reward_norm", "reward_smooth"].map(String::from).to_vec();
    h.extend((1..=k).map(|i| format!("x_{i}")));
    h.extend((1..=k).map(|i| format!("z_{i}")));
    h.extend(["drops", "epsilon", "mean_abs_td"].map(String::from));
    h
}

/// Per-epoch CSV: `epoch, reward, reward_norm, reward_smooth, x_1..x_K`
/// (Mbps), `z_1..z_K` (ms), `drops, epsilon, mean_abs_td`. Floats use the
/// shortest representation that parses back exactly.
pub fn export_csv(record: &RunRecord, path: impl AsRef<Path>) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header(record.session_count()))?;
    for r in &record.rows {
        let mut row = vec![r.epoch.to_string(), r.reward.to_string(), r.reward_norm.to_string(), r.reward_smooth.to_string()];
        row.extend(r.throughput_mbps.iter().map(f64::to_string));
        row.extend(r.delay_ms.iter().map(f64::to_string));
        row.extend([r.drops.to_string(), r.epsilon.to_string(), r.mean_abs_td.to_string()]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a file written by [`export_csv`].
pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<EpochRow>, HarnessError> {
    let mut rd = csv::Reader::from_path(path)?;
    let cols = rd.headers()?.len();
    if cols < 7 || (cols - 7) % 2 != 0 {
        return Err(HarnessError::Config(format!("unexpected column count {cols}")));
    }
    let k = (cols - 7) / 2;
    let bad = |e: &dyn std::fmt::Display| HarnessError::Config(format!("malformed CSV field: {e}"));
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let f = |i: usize| rec[i].parse::<f64>().map_err(|e| bad(&e));
        rows.push(EpochRow {
            epoch: rec[0].parse().map_err(|e| bad(&e))?,
            reward: f(1)?,
            reward_norm: f(2)?,
            reward_smooth: f(3)?,
            throughput_mbps: (4..4 + k).map(f).collect::<Result<_, _>>()?,
            delay_ms: (4 + k..4 + 2 * k).map(f).collect::<Result<_, _>>()?,
            drops: rec[4 + 2 * k].parse().map_err(|e| bad(&e))?,
            epsilon: f(5 + 2 * k)?,
            mean_abs_td: f(6 + 2 * k)?,
        });
    }
    Ok(rows)
}

/// Cross-run summary table, one row per record.
pub fn export_summary(records: &[RunRecord], path: impl AsRef<Path>) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "arm",
        "seed",
        "window_lo_mbps",
        "window_hi_mbps",
        "eval_epochs",
        "mean_utility",
        "mean_throughput_mbps",
        "mean_delay_ms",
        "total_drops",
    ])?;
    for r in records {
        let s = &r.summary;
        w.write_record([
            r.spec.arm.label().to_string(),
            r.spec.seed.to_string(),
            (r.spec.window.lo / 1e6).to_string(),
            (r.spec.window.hi / 1e6).to_string(),
            s.eval_epochs.to_string(),
            s.mean_utility.to_string(),
            s.mean_throughput_mbps.to_string(),
            s.mean_delay_ms.to_string(),
            s.total_drops.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `<arm>_w<window>_s<seed>.csv`, e.g. `drl-te_w0_s3.csv`.
pub fn run_file_name(record: &RunRecord) -> String {
    format!(
        "{}_w{}_s{}.csv",
        record.spec.arm.label().to_ascii_lowercase(),
        record.spec.window_index,
        record.spec.seed
    )
}

/// Writes one CSV per run plus `summary.csv` into `dir`; returns the paths.
pub fn write_outputs(records: &[RunRecord], dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, HarnessError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut paths = Vec::with_capacity(records.len() + 1);
    for r in records {
        let p = dir.join(run_file_name(r));
        export_csv(r, &p)?;
        paths.push(p);
    }
    let p = dir.join("summary.csv");
    export_summary(records, &p)?;
    paths.push(p);
    Ok(paths)
}
