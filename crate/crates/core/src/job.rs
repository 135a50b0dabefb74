//! TOML job files.
//!
//! ```toml
//! [engine]
//! rows = 12
//! cols = 4
//! pipeline = 3
//! protection = "full"
//!
//! [job]
//! m = 12
//! n = 16
//! k = 16
//! mode = "fault_tolerant"
//!
//! [operands]
//! seed = 1            # or: x = "x.bin", w = "w.bin", y = "y.bin"
//! ```
//!
//! Operand files hold row-major elements in the memory image format and are
//! resolved relative to the job file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::{EngineConfig, JobDescriptor, Mode, Protection};
use crate::error::JobError;
use crate::fault::{random_operands, Workload};
use crate::matrix::Matrix;
use crate::memory::image_to_elements;

fn default_watchdog() -> u64 {
    EngineConfig::DEFAULT_WATCHDOG
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineSection {
    pub rows: usize,
    pub cols: usize,
    pub pipeline: usize,
    #[serde(default = "default_watchdog")]
    pub watchdog_factor: u64,
    pub protection: Protection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobSection {
    pub m: u32,
    pub n: u32,
    pub k: u32,
    pub mode: Option<Mode>,
    /// First word of the packed operand layout.
    #[serde(default)]
    pub base: u32,
    /// TCDM size in words; defaults to the job footprint.
    pub memory_words: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OperandSection {
    pub seed: Option<u64>,
    pub x: Option<PathBuf>,
    pub w: Option<PathBuf>,
    pub y: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobFile {
    pub engine: EngineSection,
    pub job: JobSection,
    #[serde(default)]
    pub operands: OperandSection,
    #[serde(skip)]
    dir: PathBuf,
}

impl JobFile {
    pub fn load(path: &Path) -> Result<JobFile, JobError> {
        let text = std::fs::read_to_string(path).map_err(|source| JobError::Io { path: path.display().to_string(), source })?;
        let mut file = JobFile::parse(&text)?;
        file.dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(file)
    }

    pub fn parse(text: &str) -> Result<JobFile, JobError> {
        Ok(toml::from_str(text)?)
    }

    pub fn engine_config(&self) -> EngineConfig {
        let e = &self.engine;
        EngineConfig { watchdog_factor: e.watchdog_factor, ..EngineConfig::new(e.rows, e.cols, e.pipeline, e.protection) }
    }

    /// Mode named in the file, else the variant's default.
    pub fn mode(&self) -> Mode {
        self.job.mode.unwrap_or(self.engine.protection.default_mode())
    }

    /// Build the workload, optionally overriding the mode.
    pub fn workload(&self, mode: Option<Mode>) -> Result<Workload, JobError> {
        let cfg = self.engine_config();
        let j = &self.job;
        let job = JobDescriptor::packed(j.m, j.n, j.k, mode.unwrap_or(self.mode()), j.base);
        let (m, n, k) = (j.m as usize, j.n as usize, j.k as usize);
        let ops = &self.operands;
        let (x, w, y) = match (&ops.x, &ops.w, &ops.y, ops.seed) {
            (Some(x), Some(w), Some(y), None) => {
                (self.read_matrix(x, m, k)?, self.read_matrix(w, k, n)?, self.read_matrix(y, m, n)?)
            }
            (None, None, None, Some(seed)) => random_operands(m, n, k, seed),
            (None, None, None, None) => return Err(JobError::Invalid("[operands] needs `seed` or `x`, `w` and `y`".into())),
            _ => return Err(JobError::Invalid("[operands] takes either `seed` or all of `x`, `w`, `y`".into())),
        };
        Ok(Workload::new(cfg, job, &x, &w, &y, j.memory_words.unwrap_or(0))?)
    }

    fn read_matrix(&self, rel: &Path, rows: usize, cols: usize) -> Result<Matrix, JobError> {
        let path = self.dir.join(rel);
        let bytes = std::fs::read(&path).map_err(|source| JobError::Io { path: path.display().to_string(), source })?;
        let elems = image_to_elements(&bytes)?;
        let len = elems.len();
        Matrix::from_vec(rows, cols, elems)
            .ok_or_else(|| JobError::Invalid(format!("{} holds {len} elements, expected {rows}x{cols}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SEEDED: &str = r#"
        [engine]
        rows = 12
        cols = 4
        pipeline = 3
        protection = "full"

        [job]
        m = 12
        n = 16
        k = 16

        [operands]
        seed = 5
    "#;

    #[test]
    fn parses_seeded_job() {
        let f = JobFile::parse(SEEDED).unwrap();
        assert_eq!(f.mode(), Mode::FaultTolerant);
        assert_eq!(f.engine_config(), EngineConfig::reference(Protection::Full));
        let w = f.workload(Some(Mode::Performance)).unwrap();
        assert_eq!(w.job.mode, Mode::Performance);
        assert_eq!(w.golden.rows(), 12);
    }

    #[test]
    fn rejects_unknown_keys_and_mixed_operands() {
        assert!(matches!(JobFile::parse(&SEEDED.replace("pipeline", "depth")), Err(JobError::Parse(_))));
        let mixed = format!("{SEEDED}\nx = \"x.bin\"\n");
        let f = JobFile::parse(&mixed).unwrap();
        assert!(matches!(f.workload(None), Err(JobError::Invalid(_))));
    }
}
