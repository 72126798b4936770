//! Serialised output: traces, spectra, summary and manifest.
//!
//! Files are first written to a staging directory next to the target and
//! moved in only once everything has been produced, so an aborted run leaves
//! no partial files behind.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, Format};
use crate::runner::Experiment;

pub const MANIFEST: &str = "manifest.json";
pub const SUMMARY: &str = "summary.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
    pub input_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: String,
    pub input_hash: String,
    pub files: Vec<ManifestEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of the run-relevant configuration (the output directory excluded).
pub fn input_hash(config: &ExperimentConfig) -> String {
    let mut c = config.clone();
    c.output.directory = None;
    sha256_hex(c.to_toml_string().as_bytes())
}

#[derive(Debug, thiserror::Error)]
pub enum OutputError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("output directory {0} is not empty and holds no manifest from a previous run")]
    Occupied(PathBuf),
    #[error(transparent)]
    Core(#[from] moire_radiance::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> OutputError + '_ {
    move |source| OutputError::Io {
        path: path.to_path_buf(),
        source,
    }
}

struct Staging {
    root: tempfile::TempDir,
    files: Vec<String>,
}

impl Staging {
    fn write(&mut self, rel: &str, body: impl FnOnce(&mut dyn Write) -> Result<(), OutputError>) -> Result<(), OutputError> {
        let path = self.root.path().join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        let file = fs::File::create(&path).map_err(io_err(&path))?;
        let mut w = BufWriter::new(file);
        body(&mut w)?;
        w.flush().map_err(io_err(&path))?;
        self.files.push(rel.to_string());
        Ok(())
    }
}

/// Write every output of `experiment` into `dir` and return the manifest.
pub fn write_outputs(config: &ExperimentConfig, experiment: &Experiment, dir: &Path) -> Result<Manifest, OutputError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let previous = previous_manifest(dir)?;
    let parent = dir.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let root = tempfile::Builder::new()
        .prefix(".moire-staging-")
        .tempdir_in(parent)
        .map_err(io_err(parent))?;
    let mut stage = Staging { root, files: Vec::new() };
    let hash = &experiment.summary.input_hash;
    let formats = &config.output.formats;

    stage.write("config.toml", |w| {
        w.write_all(config.to_toml_string().as_bytes()).map_err(io_err(Path::new("config.toml")))
    })?;

    if formats.contains(&Format::Csv) {
        for run in &experiment.runs {
            let Ok((trace, spectrum)) = &run.outcome else { continue };
            let id = experiment.points[run.point].id();
            let name = match run.seed {
                Some(seed) => format!("{id}_seed{seed}"),
                None => id.clone(),
            };
            stage.write(&format!("traces/{name}.csv"), |w| Ok(trace.write_csv(w)?))?;
            if let Some(spectrum) = spectrum {
                stage.write(&format!("spectra/{name}.csv"), |w| Ok(spectrum.write_csv(w)?))?;
            }
        }
        for (p, mean) in experiment.means.iter().enumerate() {
            if let Some(mean) = mean {
                let id = experiment.points[p].id();
                stage.write(&format!("traces/{id}_mean.csv"), |w| Ok(mean.write_csv(w)?))?;
            }
        }
    }
    if formats.contains(&Format::Json) {
        stage.write(SUMMARY, |w| {
            serde_json::to_writer_pretty(&mut *w, &experiment.summary)?;
            w.write_all(b"\n").map_err(io_err(Path::new(SUMMARY)))
        })?;
    }

    let mut entries = Vec::with_capacity(stage.files.len());
    for rel in &stage.files {
        let path = stage.root.path().join(rel);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        entries.push(ManifestEntry {
            path: rel.clone(),
            sha256: sha256_hex(&bytes),
            bytes: bytes.len() as u64,
            input_hash: hash.clone(),
        });
    }
    let manifest = Manifest {
        experiment: config.name.clone(),
        input_hash: hash.clone(),
        files: entries,
    };
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    fs::write(stage.root.path().join(MANIFEST), text).map_err(io_err(Path::new(MANIFEST)))?;

    // replace the previous run's files, then move the new ones in
    if let Some(old) = previous {
        for f in &old.files {
            let path = dir.join(&f.path);
            if path.exists() {
                fs::remove_file(&path).map_err(io_err(&path))?;
            }
        }
        let path = dir.join(MANIFEST);
        fs::remove_file(&path).map_err(io_err(&path))?;
        for sub in ["traces", "spectra"] {
            let _ = fs::remove_dir(dir.join(sub));
        }
    }
    for rel in stage.files.iter().map(String::as_str).chain([MANIFEST]) {
        let from = stage.root.path().join(rel);
        let to = dir.join(rel);
        if let Some(p) = to.parent() {
            fs::create_dir_all(p).map_err(io_err(p))?;
        }
        fs::rename(&from, &to).map_err(io_err(&to))?;
    }
    Ok(manifest)
}

/// Fail early if `dir` holds files that a run could not account for.
pub fn check_target(dir: &Path) -> Result<(), OutputError> {
    if dir.exists() {
        previous_manifest(dir)?;
    }
    Ok(())
}

fn previous_manifest(dir: &Path) -> Result<Option<Manifest>, OutputError> {
    let path = dir.join(MANIFEST);
    if path.exists() {
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        return Ok(Some(serde_json::from_str(&text)?));
    }
    let mut entries = fs::read_dir(dir).map_err(io_err(dir))?;
    if entries.next().is_some() {
        return Err(OutputError::Occupied(dir.to_path_buf()));
    }
    Ok(None)
}
