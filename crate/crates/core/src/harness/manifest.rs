//! Heap manifests: a directory of scene snapshots plus an index file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{mix_seed, HarnessError, HeapRef};
use crate::heapgen::{generate_heap, HeapSpec};
use crate::scene::{SceneSnapshot, SceneState};

pub const MANIFEST_FILE: &str = "manifest.json";
const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeapEntry {
    pub name: String,
    pub n_objects: u32,
    pub seed: u64,
    /// Snapshot path relative to the manifest's directory.
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeapManifest {
    pub schema_version: u32,
    pub heaps: Vec<HeapEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedHeap {
    pub heap: HeapRef,
    pub scene: SceneState,
}

/// Generates `count` heaps for each size in `sizes` and writes their
/// snapshots and a manifest under `out`.
pub fn generate_manifest(sizes: &[u32], count: usize, seed: u64, out: &Path) -> Result<HeapManifest, HarnessError> {
    if sizes.is_empty() || count == 0 {
        return Err(HarnessError::Invalid("need at least one heap size and count > 0".into()));
    }
    fs::create_dir_all(out)?;
    let mut heaps = Vec::with_capacity(sizes.len() * count);
    for &n in sizes {
        for i in 0..count {
            let heap_seed = mix_seed(seed, ((n as u64) << 32) | i as u64);
            let scene = generate_heap(&HeapSpec::new(n as usize, heap_seed))?;
            let name = format!("n{n:02}_{i:04}");
            let file = format!("{name}.json");
            fs::write(out.join(&file), SceneSnapshot::new(scene).to_json()?)?;
            heaps.push(HeapEntry { name, n_objects: n, seed: heap_seed, file });
        }
    }
    let manifest = HeapManifest { schema_version: MANIFEST_SCHEMA_VERSION, heaps };
    fs::write(out.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Reads a manifest (file, or directory containing `manifest.json`) and
/// every snapshot it lists.
pub fn load_manifest(path: &Path) -> Result<Vec<LoadedHeap>, HarnessError> {
    let file: PathBuf = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
    let dir = file.parent().map(Path::to_path_buf).unwrap_or_default();
    let manifest: HeapManifest = serde_json::from_str(&fs::read_to_string(&file)?)?;
    if manifest.schema_version != MANIFEST_SCHEMA_VERSION {
        return Err(HarnessError::Invalid(format!("unsupported manifest schema {}", manifest.schema_version)));
    }
    if manifest.heaps.is_empty() {
        return Err(HarnessError::Invalid("manifest lists no heaps".into()));
    }
    manifest
        .heaps
        .iter()
        .map(|e| {
            let snap = SceneSnapshot::from_json(&fs::read_to_string(dir.join(&e.file))?)?;
            Ok(LoadedHeap { heap: HeapRef { name: e.name.clone(), seed: e.seed, n_objects: e.n_objects }, scene: snap.scene })
        })
        .collect()
}
