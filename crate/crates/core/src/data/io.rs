//! Dataset files: one JSON scene record per line per split, plus a JSON manifest.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{Dataset, DatasetManifest, SceneSample};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SPLIT_FILES: [(&str, &str); 3] = [("train", "train.jsonl"), ("val", "val.jsonl"), ("test", "test.jsonl")];

/// Writes scenes one per line. Empty scenes are rejected before anything is written.
pub fn write_scenes(path: &Path, scenes: &[SceneSample]) -> Result<()> {
    if let Some(s) = scenes.iter().find(|s| s.is_empty()) {
        return Err(Error::EmptyScene(s.id.clone()));
    }
    let mut out = BufWriter::new(File::create(path)?);
    for s in scenes {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_scenes(path: &Path) -> Result<Vec<SceneSample>> {
    let reader = BufReader::new(File::open(path)?);
    let mut scenes = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let scene: SceneSample = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: format!("column {}: {e}", e.column()),
        })?;
        if scene.is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("scene {} has no triplets", scene.id),
            });
        }
        scenes.push(scene);
    }
    Ok(scenes)
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path)?;
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    manifest.validate()?;
    Ok(manifest)
}

pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (name, file) in SPLIT_FILES {
        write_scenes(&dir.join(file), dataset.split(name).expect("known split"))?;
    }
    let mut text = serde_json::to_string_pretty(&dataset.manifest)?;
    text.push('\n');
    fs::write(dir.join(MANIFEST_FILE), text)?;
    Ok(())
}

/// Reads a dataset directory and checks every scene against the manifest.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(&dir.join(MANIFEST_FILE))?;
    let mut splits = SPLIT_FILES.iter().map(|(_, f)| read_scenes(&dir.join(f)));
    let (train, val, test) = (splits.next().unwrap()?, splits.next().unwrap()?, splits.next().unwrap()?);
    for s in train.iter().chain(&val).chain(&test) {
        s.validate(manifest.num_objects, manifest.num_relations)?;
        if s.triplets[0].feature_dim() != manifest.feature_dim {
            return Err(Error::Config(format!("scene {} feature width differs from manifest", s.id)));
        }
    }
    Ok(Dataset {
        train,
        val,
        test,
        manifest,
    })
}
