use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataError, Dataset, RelationInstance};

/// Class counts that cannot be read off the files themselves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadConfig {
    /// Pre-defined relation count; inferred as `max label + 1` when absent.
    #[serde(default)]
    pub num_predefined: Option<usize>,
    /// Novel relation count, known a priori.
    pub num_novel: usize,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads one instance per non-blank line.
pub fn read_jsonl(path: &Path) -> Result<Vec<RelationInstance>, DataError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let inst: RelationInstance = serde_json::from_str(&line).map_err(|e| DataError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        inst.validate().map_err(|e| DataError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(inst);
    }
    Ok(out)
}

pub fn write_jsonl(path: &Path, instances: &[RelationInstance]) -> Result<(), DataError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for inst in instances {
        serde_json::to_writer(&mut w, inst).map_err(|e| DataError::Io {
            path: path.to_path_buf(),
            source: e.into(),
        })?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Loads a labeled and an unlabeled JSONL file, preserving file order.
pub fn load_dataset(
    labeled_path: &Path,
    unlabeled_path: &Path,
    config: &LoadConfig,
) -> Result<Dataset, DataError> {
    let labeled = read_jsonl(labeled_path)?;
    let unlabeled = read_jsonl(unlabeled_path)?;
    let num_predefined = match config.num_predefined {
        Some(n) => n,
        None => labeled
            .iter()
            .filter_map(|i| i.label)
            .max()
            .map_or(0, |m| m + 1),
    };
    Dataset::new(labeled, unlabeled, num_predefined, config.num_novel)
}

impl Dataset {
    pub fn save(&self, labeled_path: &Path, unlabeled_path: &Path) -> Result<(), DataError> {
        write_jsonl(labeled_path, &self.labeled)?;
        write_jsonl(unlabeled_path, &self.unlabeled)
    }

    pub fn load_config(&self) -> LoadConfig {
        LoadConfig {
            num_predefined: Some(self.num_predefined),
            num_novel: self.num_novel,
        }
    }
}
