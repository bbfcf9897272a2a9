//! Parameter stores on disk: one tensor file per parameter plus an index.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::vtf;

use super::params::{Param, ParamStore, Partition};

pub const INDEX_FILE: &str = "index.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub file: String,
    pub shape: Vec<usize>,
    pub partition: Partition,
}

fn file_name(name: &str) -> String {
    format!("{name}.vtf")
}

/// Write `store` under `dir`. Every file is written atomically, the index last.
pub fn save_store<T: Scalar>(dir: &Path, store: &ParamStore<T>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut index = BTreeMap::new();
    for (name, p) in store.iter() {
        let file = file_name(name);
        vtf::write_tensor(dir.join(&file), &p.tensor)?;
        index.insert(name.clone(), IndexEntry { file, shape: p.tensor.shape().to_vec(), partition: p.partition });
    }
    let json = serde_json::to_string_pretty(&index).expect("index serializes");
    vtf::write_atomic(&dir.join(INDEX_FILE), json.as_bytes())
}

pub fn load_store<T: Scalar>(dir: &Path) -> Result<ParamStore<T>> {
    let path = dir.join(INDEX_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let index: BTreeMap<String, IndexEntry> =
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let mut store = ParamStore::default();
    for (name, entry) in index {
        let tensor = vtf::read_tensor::<T>(dir.join(&entry.file))
            .map_err(|e| Error::Checkpoint(format!("parameter {name}: {e}")))?;
        if tensor.shape() != entry.shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "parameter {name}: file shape {:?}, index says {:?}",
                tensor.shape(),
                entry.shape
            )));
        }
        store.insert(name, Param { tensor, partition: entry.partition });
    }
    Ok(store)
}
