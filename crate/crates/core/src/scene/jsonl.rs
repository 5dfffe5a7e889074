//! Scene persistence: JSON-lines, one scene per line, floats at 17
//! significant digits so files are byte-stable across runs.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::Scene;
use crate::error::{Error, Result};
use crate::jsonio::to_string_g17;

pub fn scene_to_json_line(scene: &Scene) -> Result<String> {
    to_string_g17(scene)
}

pub fn write_scenes_jsonl(path: &Path, scenes: &[Scene]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for scene in scenes {
        writeln!(w, "{}", scene_to_json_line(scene)?)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scenes_jsonl(path: &Path) -> Result<Vec<Scene>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let scene: Scene = serde_json::from_str(&line)
            .map_err(|e| Error::Serde(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(scene);
    }
    Ok(out)
}
