use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Mean loss parts over the steps of one epoch. Absent parts are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub reconstruction: Option<f64>,
    pub kl: Option<f64>,
    pub classification: Option<f64>,
    pub total: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunLog {
    pub seed: u64,
    pub config_hash: String,
    pub records: Vec<EpochRecord>,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `<path>.timing.csv` next to `path`.
pub fn timing_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".timing.csv");
    path.with_file_name(name)
}

impl RunLog {
    /// Loss columns only; identical runs give identical bytes.
    pub fn to_csv(&self) -> String {
        let mut s = format!(
            "# seed={} config_hash={}\nepoch,recon_loss,kl_loss,cls_loss,total\n",
            self.seed, self.config_hash
        );
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.epoch,
                cell(r.reconstruction),
                cell(r.kl),
                cell(r.classification),
                r.total
            );
        }
        s
    }

    pub fn timing_csv(&self) -> String {
        let mut s = String::from("epoch,seconds\n");
        for r in &self.records {
            let _ = writeln!(s, "{},{:.3}", r.epoch, r.seconds);
        }
        s
    }

    /// Writes the loss CSV to `path` and wall-clock seconds to [`timing_path`].
    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))?;
        let timing = timing_path(path);
        fs::write(&timing, self.timing_csv()).map_err(|e| Error::io(&timing, e))
    }
}
