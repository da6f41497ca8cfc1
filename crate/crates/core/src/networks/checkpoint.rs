//! Parameter checkpoints: a flat little-endian f32 binary plus a JSON
//! index sidecar mapping `store/param` names to byte offsets and shapes.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffcore::Grid;
use crate::error::{Error, Result};
use crate::networks::ParamStore;

#[derive(Debug, Serialize, Deserialize)]
struct IndexEntry {
    offset: u64,
    shape: [usize; 3],
}

/// Write all stores' parameters to `<stem>.bin` with `<stem>.json` as
/// the index. Entries are ordered by store, then store insertion order.
pub fn save_params(stem: &Path, stores: &[(&str, &ParamStore)]) -> Result<()> {
    let mut blob: Vec<u8> = Vec::new();
    let mut index: BTreeMap<String, IndexEntry> = BTreeMap::new();
    for (store_name, store) in stores {
        for (name, grid) in store.iter() {
            let key = format!("{store_name}/{name}");
            let (c, h, w) = grid.shape();
            index.insert(
                key,
                IndexEntry {
                    offset: blob.len() as u64,
                    shape: [c, h, w],
                },
            );
            for v in grid.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let mut bin = fs::File::create(stem.with_extension("bin"))?;
    bin.write_all(&blob)?;
    let json = fs::File::create(stem.with_extension("json"))?;
    serde_json::to_writer_pretty(json, &index)?;
    Ok(())
}

/// Read a checkpoint back as `store/param -> Grid` pairs, sorted by name.
pub fn load_params(stem: &Path) -> Result<Vec<(String, Grid)>> {
    let blob = fs::read(stem.with_extension("bin"))?;
    let index: BTreeMap<String, IndexEntry> =
        serde_json::from_slice(&fs::read(stem.with_extension("json"))?)?;
    let mut out = Vec::with_capacity(index.len());
    for (name, entry) in index {
        let [c, h, w] = entry.shape;
        let count = c * h * w;
        let start = entry.offset as usize;
        let end = start + count * 4;
        if end > blob.len() {
            return Err(Error::arg(format!(
                "checkpoint entry {name} spans past the end of the binary blob"
            )));
        }
        let data: Vec<f32> = blob[start..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        out.push((name, Grid::new(c, h, w, data)?));
    }
    Ok(out)
}
