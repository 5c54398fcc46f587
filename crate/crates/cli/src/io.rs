//! Output writers and dataset ingestion. Every emitted file starts with a
//! provenance comment (version, config digest, seed), and float formatting
//! is fixed so identical runs are byte-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use nvem_core::Spectrum;

use crate::config::fnv1a64;
use crate::AppError;

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Provenance stamped into every output.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub version: String,
    pub config_digest: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(config_digest: String, seed: u64) -> Self {
        Self {
            version: TOOLKIT_VERSION.to_string(),
            config_digest,
            seed,
        }
    }

    fn comment_line(&self) -> String {
        format!(
            "# nvem {} config={} seed={}\n",
            self.version, self.config_digest, self.seed
        )
    }
}

/// One output file of a run, as recorded in the run record.
#[derive(Debug, Clone, Serialize)]
pub struct OutputRecord {
    pub path: PathBuf,
    pub digest: String,
}

/// Reproducibility record of one command invocation.
#[derive(Debug, Serialize)]
pub struct RunRecord<'a, C: Serialize> {
    pub version: &'a str,
    pub command: &'a str,
    pub config_digest: &'a str,
    pub seeds: &'a [u64],
    pub wall_clock_s: f64,
    pub config: &'a C,
    pub outputs: &'a [OutputRecord],
}

/// Writes a CSV with the provenance comment and a header row; rows format
/// floats with `{:.9e}` so reruns are byte-identical.
pub fn write_csv(
    path: &Path,
    provenance: &Provenance,
    header: &str,
    rows: &[Vec<f64>],
) -> Result<OutputRecord, AppError> {
    let mut text = provenance.comment_line();
    text.push_str(header);
    text.push('\n');
    for row in rows {
        let mut line = String::new();
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            write!(line, "{v:.9e}").expect("string write");
        }
        text.push_str(&line);
        text.push('\n');
    }
    write_bytes(path, text.as_bytes())
}

/// Writes pretty JSON with provenance fields merged into the top level.
pub fn write_json<T: Serialize>(
    path: &Path,
    provenance: &Provenance,
    payload: &T,
) -> Result<OutputRecord, AppError> {
    let mut value = serde_json::to_value(payload)
        .map_err(|e| AppError::data(format!("serialize {}: {e}", path.display())))?;
    if let serde_json::Value::Object(map) = &mut value {
        map.insert(
            "version".into(),
            serde_json::Value::String(provenance.version.clone()),
        );
        map.insert(
            "config_digest".into(),
            serde_json::Value::String(provenance.config_digest.clone()),
        );
        map.insert("seed".into(), serde_json::json!(provenance.seed));
    }
    let text = format!("{:#}\n", value);
    write_bytes(path, text.as_bytes())
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<OutputRecord, AppError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)
                .map_err(|e| AppError::data(format!("mkdir {}: {e}", dir.display())))?;
        }
    }
    fs::write(path, bytes).map_err(|e| AppError::data(format!("write {}: {e}", path.display())))?;
    Ok(OutputRecord {
        path: path.to_path_buf(),
        digest: format!("{:016x}", fnv1a64(bytes)),
    })
}

/// Reads `detuning_ghz,mw_offset_mhz,signal` rows grouped by detuning into
/// per-detuning spectra with canonically sorted grids. Comment lines start
/// with '#'. Duplicate offsets within a detuning group and malformed rows
/// are errors carrying line numbers.
pub fn ingest_spectra(path: &Path) -> Result<Vec<(f64, Spectrum)>, AppError> {
    let text = fs::read_to_string(path)
        .map_err(|e| AppError::data(format!("cannot read {}: {e}", path.display())))?;
    let mut groups: Vec<(f64, Vec<(f64, f64, usize)>)> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if trimmed.starts_with("detuning_ghz") {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 3 {
            return Err(AppError::data(format!(
                "{}:{line_no}: expected 3 columns detuning_ghz,mw_offset_mhz,signal, got {}",
                path.display(),
                fields.len()
            )));
        }
        let parse = |s: &str, name: &str| -> Result<f64, AppError> {
            s.trim().parse::<f64>().map_err(|_| {
                AppError::data(format!(
                    "{}:{line_no}: bad {name} value {s:?}",
                    path.display()
                ))
            })
        };
        let detuning = parse(fields[0], "detuning_ghz")?;
        let offset = parse(fields[1], "mw_offset_mhz")?;
        let signal = parse(fields[2], "signal")?;
        if !signal.is_finite() || !offset.is_finite() || !detuning.is_finite() {
            return Err(AppError::data(format!(
                "{}:{line_no}: non-finite value",
                path.display()
            )));
        }
        match groups.iter_mut().find(|(d, _)| *d == detuning) {
            Some((_, rows)) => rows.push((offset, signal, line_no)),
            None => groups.push((detuning, vec![(offset, signal, line_no)])),
        }
    }
    let mut out = Vec::with_capacity(groups.len());
    for (detuning, mut rows) in groups {
        rows.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for w in rows.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(AppError::data(format!(
                    "{}:{}: duplicate mw_offset {} within detuning {} (first at line {})",
                    path.display(),
                    w[1].2,
                    w[1].0,
                    detuning,
                    w[0].2
                )));
            }
        }
        let (grid, signal): (Vec<f64>, Vec<f64>) =
            rows.into_iter().map(|(o, s, _)| (o, s)).unzip();
        let spectrum = Spectrum::new(grid, signal)
            .map_err(|e| AppError::data(format!("{}: detuning {detuning}: {e}", path.display())))?;
        out.push((detuning, spectrum));
    }
    out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    Ok(out)
}

/// Reads `detuning_ghz,pi_perp_mhz,pi_perp_err_mhz` observation rows.
pub fn read_splitting_data(path: &Path) -> Result<Vec<nvem_core::PeakSummary>, AppError> {
    let text = fs::read_to_string(path)
        .map_err(|e| AppError::data(format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with("detuning_ghz") {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 3 {
            return Err(AppError::data(format!(
                "{}:{line_no}: expected detuning_ghz,pi_perp_mhz,pi_perp_err_mhz",
                path.display()
            )));
        }
        let mut vals = [0.0_f64; 3];
        for (slot, f) in vals.iter_mut().zip(&fields) {
            *slot = f.trim().parse().map_err(|_| {
                AppError::data(format!("{}:{line_no}: bad number {f:?}", path.display()))
            })?;
        }
        out.push(nvem_core::PeakSummary::splitting(vals[0], vals[1], vals[2]));
    }
    Ok(out)
}

/// Reads a `rho_c_ppm,kappa_ih_mhz` systematic grid.
pub fn read_scan_grid(path: &Path) -> Result<Vec<(f64, f64)>, AppError> {
    let text = fs::read_to_string(path)
        .map_err(|e| AppError::data(format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with("rho_c_ppm") {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 2 {
            return Err(AppError::data(format!(
                "{}:{}: expected rho_c_ppm,kappa_ih_mhz",
                path.display(),
                idx + 1
            )));
        }
        let rho = fields[0].trim().parse().map_err(|_| {
            AppError::data(format!("{}:{}: bad rho_c_ppm", path.display(), idx + 1))
        })?;
        let kih = fields[1].trim().parse().map_err(|_| {
            AppError::data(format!("{}:{}: bad kappa_ih_mhz", path.display(), idx + 1))
        })?;
        out.push((rho, kih));
    }
    Ok(out)
}
