//! File writers shared by the commands. Every output is produced from
//! in-memory values with fixed field order, so reruns are byte-identical.

use std::path::Path;

use serde::Serialize;
use talds::episodic::{EvalReport, LossRecord};

use crate::Failure;

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Data(format!("{}: {e}", path.display()))
}

pub fn ensure_dir(path: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(path).map_err(|e| io_failure(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    std::fs::write(path, text).map_err(|e| io_failure(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    write_text(path, &text)
}

pub fn write_rows_csv<R: Serialize>(path: &Path, rows: impl IntoIterator<Item = R>) -> Result<(), Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| io_failure(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| io_failure(path, e))?;
    write_text(path, &String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_loss_csv(path: &Path, records: &[LossRecord]) -> Result<(), Failure> {
    // An empty run still gets a header so downstream tools can parse it.
    if records.is_empty() {
        return write_text(path, "epoch,episode,loss\n");
    }
    write_rows_csv(path, records)
}

#[derive(Serialize)]
struct EpisodeRow {
    episode: usize,
    accuracy: f64,
}

pub fn write_eval_csv(path: &Path, report: &EvalReport) -> Result<(), Failure> {
    write_rows_csv(
        path,
        report
            .per_episode
            .iter()
            .enumerate()
            .map(|(episode, &accuracy)| EpisodeRow { episode, accuracy }),
    )
}
