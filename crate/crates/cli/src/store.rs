//! Output directory: manifest of completed cells, per-experiment cell tables,
//! run metadata.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::Experiment;
use crate::pipelines::Cell;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ExperimentCells {
    pub fingerprint: String,
    /// Keyed by task key.
    pub cells: BTreeMap<String, Cell>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub experiments: BTreeMap<String, ExperimentCells>,
}

impl Manifest {
    /// Completed cells whose experiment is unchanged; anything else is dropped.
    pub fn load(dir: &Path, experiments: &[Experiment]) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let mut m = if path.exists() {
            let text = fs::read_to_string(&path)?;
            serde_json::from_str::<Manifest>(&text)
                .with_context(|| format!("corrupt manifest {}", path.display()))?
        } else {
            Manifest::default()
        };
        m.schema_version = 1;
        m.experiments.retain(|id, cells| {
            experiments
                .iter()
                .any(|e| e.id() == id && e.fingerprint() == cells.fingerprint)
        });
        for e in experiments {
            m.experiments
                .entry(e.id().to_string())
                .or_insert_with(|| ExperimentCells {
                    fingerprint: e.fingerprint(),
                    cells: BTreeMap::new(),
                });
        }
        Ok(m)
    }

    pub fn get(&self, id: &str, key: &str) -> Option<&Cell> {
        self.experiments.get(id).and_then(|e| e.cells.get(key))
    }

    pub fn insert(&mut self, id: &str, cell: Cell) {
        if let Some(e) = self.experiments.get_mut(id) {
            e.cells.insert(cell.task.key(), cell);
        }
    }

    /// Written through a temporary file so an interrupted run leaves the
    /// previous manifest intact.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let tmp = dir.join(format!("{MANIFEST}.tmp"));
        fs::write(&tmp, serde_json::to_string(self)?)?;
        fs::rename(&tmp, dir.join(MANIFEST))?;
        Ok(())
    }
}

/// `<dir>/cells/<id>.csv`: task columns, then every output, then the error.
pub fn write_cells(dir: &Path, id: &str, cells: &[Cell]) -> Result<PathBuf> {
    let cell_dir = dir.join("cells");
    fs::create_dir_all(&cell_dir)?;
    let path = cell_dir.join(format!("{id}.csv"));
    let mut params: Vec<String> = Vec::new();
    let mut outputs: Vec<String> = Vec::new();
    for c in cells {
        for (k, _) in &c.task.params {
            if !params.contains(k) {
                params.push(k.clone());
            }
        }
        for (k, _) in &c.outputs {
            if !outputs.contains(k) {
                outputs.push(k.clone());
            }
        }
    }
    let mut w = csv::Writer::from_path(&path)?;
    let mut header = vec!["role".to_string()];
    header.extend(params.iter().cloned());
    header.push("seed".into());
    header.extend(outputs.iter().cloned());
    header.push("error".into());
    w.write_record(&header)?;
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for c in cells {
        let mut rec = vec![c.task.role.clone()];
        rec.extend(
            params
                .iter()
                .map(|p| fmt(c.task.params.iter().find(|(k, _)| k == p).map(|(_, v)| *v))),
        );
        rec.push(c.task.seed.map(|s| s.to_string()).unwrap_or_default());
        rec.extend(outputs.iter().map(|o| fmt(c.output(o))));
        rec.push(c.error.clone().unwrap_or_default());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(path)
}

#[derive(Debug, Serialize)]
pub struct Metadata {
    pub homlab_version: &'static str,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub elapsed_seconds: f64,
    pub workers: usize,
    pub cells_run: usize,
    pub cells_reused: usize,
}

pub fn write_metadata(dir: &Path, meta: &Metadata) -> Result<()> {
    fs::write(
        dir.join("metadata.json"),
        serde_json::to_string_pretty(meta)? + "\n",
    )?;
    Ok(())
}
