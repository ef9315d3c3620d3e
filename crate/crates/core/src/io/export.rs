//! Output tables and the run manifest.
//!
//! Every table is built in memory first so that its checksum can be recorded
//! before anything touches the disk. Floats are written with Rust's shortest
//! round-trip formatting: parsing a cell back yields the exact in-memory value.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ensemble::EnsembleStats;
use crate::estimator::CurvePoint;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Round-trip decimal text for a float.
pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

/// Like [`fmt_f64`], empty for `None`.
pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// Deterministic file-name suffix for a trait correlation level:
/// `-1` gives `r-1`, `0.5` gives `r0.5`.
pub fn level_tag(r: f64) -> String {
    format!("r{}", fmt_f64(r))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Small CSV builder; rows are pre-formatted cells.
#[derive(Debug, Default)]
pub struct Table {
    out: Vec<u8>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        let mut t = Self::default();
        t.row(header.iter().map(|s| s.to_string()));
        t
    }

    pub fn row<I: IntoIterator<Item = String>>(&mut self, cells: I) {
        // cells are numbers and fixed identifiers, never needing quotes
        let line: Vec<String> = cells.into_iter().collect();
        self.out.extend_from_slice(line.join(",").as_bytes());
        self.out.push(b'\n');
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.out
    }
}

/// Named output files in creation order.
#[derive(Debug, Default)]
pub struct OutputSet {
    files: Vec<(String, Vec<u8>)>,
}

impl OutputSet {
    pub fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    pub fn files(&self) -> &[(String, Vec<u8>)] {
        &self.files
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.files
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, b)| b.as_slice())
    }

    pub fn checksums(&self) -> BTreeMap<String, String> {
        self.files
            .iter()
            .map(|(n, b)| (n.clone(), sha256_hex(b)))
            .collect()
    }

    pub fn write_to(&self, dir: &Path) -> Result<(), ExportError> {
        let err = |path: &Path| {
            let path = path.to_path_buf();
            move |source| ExportError::Write { path, source }
        };
        std::fs::create_dir_all(dir).map_err(err(dir))?;
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            std::fs::write(&path, bytes).map_err(err(&path))?;
        }
        Ok(())
    }
}

/// Everything needed to reproduce a run. Holds no timestamps, paths or
/// worker counts, so identical inputs give an identical manifest.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest<C: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config: C,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_toml: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub master_seed: Option<u64>,
    /// Aborted paths per output suffix.
    pub aborted_paths: BTreeMap<String, u64>,
    pub checksums: BTreeMap<String, String>,
}

impl<C: Serialize> RunManifest<C> {
    pub fn new(command: &'static str, config: C) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            config,
            config_toml: None,
            master_seed: None,
            aborted_paths: BTreeMap::new(),
            checksums: BTreeMap::new(),
        }
    }

    /// Records the checksums of `outputs` and appends the manifest itself.
    pub fn seal(mut self, outputs: &mut OutputSet) {
        self.checksums = outputs.checksums();
        let mut bytes = serde_json::to_vec_pretty(&self).expect("manifest serialises");
        bytes.push(b'\n');
        outputs.add(MANIFEST_FILE, bytes);
    }
}

pub fn price_stats_table(stats: &EnsembleStats) -> Vec<u8> {
    let mut t = Table::new(&[
        "day",
        "mean_log_price",
        "std_log_return",
        "mean_risk_proxy",
        "predicted_log_price",
    ]);
    for day in 0..stats.mean_log_price.len() {
        t.row([
            day.to_string(),
            fmt_f64(stats.mean_log_price[day]),
            fmt_f64(stats.std_log_return[day]),
            fmt_f64(stats.mean_risk_proxy[day]),
            fmt_f64(stats.predicted_log_price[day]),
        ]);
    }
    t.into_bytes()
}

pub fn wealth_hist_table(stats: &EnsembleStats) -> Vec<u8> {
    let h = &stats.wealth_histogram;
    let mut t = Table::new(&["bin_lo", "bin_hi", "fraction"]);
    for (i, &f) in h.fractions.iter().enumerate() {
        t.row([fmt_f64(h.edges[i]), fmt_f64(h.edges[i + 1]), fmt_f64(f)]);
    }
    t.into_bytes()
}

pub fn trait_corr_table(levels: &[EnsembleStats]) -> Vec<u8> {
    let mut t = Table::new(&["trait_correlation", "corr_wealth_greed", "corr_wealth_fear"]);
    for s in levels {
        t.row([
            fmt_f64(s.trait_correlation),
            fmt_opt(s.corr_wealth_greed),
            fmt_opt(s.corr_wealth_fear),
        ]);
    }
    t.into_bytes()
}

/// Daily closes of one series: `day,price`.
pub fn price_series_table(closes: &[f64]) -> Vec<u8> {
    let mut t = Table::new(&["day", "price"]);
    for (day, &p) in closes.iter().enumerate() {
        t.row([day.to_string(), fmt_f64(p)]);
    }
    t.into_bytes()
}

pub const ESTIMATE_HEADER: [&str; 8] = [
    "tau",
    "gamma",
    "c0",
    "rho",
    "cv_ln_alpha",
    "cv_ln_beta",
    "c0_saturated",
    "status",
];

/// One estimate row; failed grid points keep their place with empty numeric
/// cells and the error tag as status.
pub fn estimate_cells(tau: usize, point: &CurvePoint) -> [String; 8] {
    match &point.estimate {
        Ok(e) => [
            tau.to_string(),
            fmt_f64(point.gamma),
            fmt_f64(e.c0),
            fmt_f64(e.rho),
            fmt_opt(e.cv_ln_alpha),
            fmt_opt(e.cv_ln_beta),
            e.c0_saturated.to_string(),
            "ok".into(),
        ],
        Err(err) => [
            tau.to_string(),
            fmt_f64(point.gamma),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            err.tag().into(),
        ],
    }
}
