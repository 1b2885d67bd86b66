//! Data products: CSV tables, joint grids with JSON sidecars, hashes and the
//! run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use qarrival_core::grid::Capture;
use qarrival_core::{JointDistribution, ProposalTag, ScreenGeometry, Source, SpaceTimeGrid};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Product {
    /// Path relative to the output root.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn fmt(v: f64) -> String {
    format!("{v:.10e}")
}

/// Collects the files a scenario writes under `<root>/<scenario>/`.
pub struct Products {
    root: PathBuf,
    dir: PathBuf,
    pub list: Vec<Product>,
}

impl Products {
    pub fn new(root: &Path, scenario: &str) -> CliResult<Self> {
        let dir = root.join(scenario);
        fs::create_dir_all(&dir)?;
        Ok(Products {
            root: root.to_path_buf(),
            dir,
            list: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Hashes a file already written into the scenario directory.
    pub fn adopt(&mut self, path: &Path) -> CliResult<()> {
        let rel = path.strip_prefix(&self.root).unwrap_or(path);
        self.list.push(Product {
            path: rel.to_string_lossy().replace('\\', "/"),
            sha256: sha256_file(path)?,
            bytes: fs::metadata(path)?.len(),
        });
        Ok(())
    }

    /// Numeric table; `header` names each column with its unit.
    pub fn csv(&mut self, name: &str, header: &[String], rows: impl IntoIterator<Item = Vec<f64>>) -> CliResult<PathBuf> {
        let path = self.path(name);
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(header)?;
        for row in rows {
            debug_assert_eq!(row.len(), header.len());
            w.write_record(row.iter().map(|v| if v.is_nan() { String::new() } else { fmt(*v) }))?;
        }
        w.flush()?;
        drop(w);
        self.adopt(&path)?;
        Ok(path)
    }

    /// Table built from named columns of equal length.
    pub fn columns(&mut self, name: &str, cols: &[(String, &[f64])]) -> CliResult<PathBuf> {
        let n = cols.first().map(|c| c.1.len()).unwrap_or(0);
        let header: Vec<String> = cols.iter().map(|c| c.0.clone()).collect();
        self.csv(name, &header, (0..n).map(|i| cols.iter().map(|c| c.1[i]).collect()))
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<PathBuf> {
        let path = self.path(name);
        fs::write(&path, serde_json::to_string_pretty(value)? + "\n")?;
        self.adopt(&path)?;
        Ok(path)
    }

    /// Writes `<name>.csv` and its `<name>.json` sidecar, decimating both
    /// axes by a common stride so that at most `max_nodes` values are kept.
    pub fn joint(&mut self, name: &str, jd: &JointDistribution, screen: Option<&ScreenGeometry>, max_nodes: usize) -> CliResult<PathBuf> {
        let (nc, nt) = (jd.grid.n_coords(), jd.grid.n_times());
        let mut stride = 1;
        while nc.div_ceil(stride) * nt.div_ceil(stride) > max_nodes {
            stride += 1;
        }
        let rows: Vec<usize> = (0..nc).step_by(stride).collect();
        let cols: Vec<usize> = (0..nt).step_by(stride).collect();
        let coords: Vec<f64> = rows.iter().map(|&i| jd.grid.screen_coords[i]).collect();
        let times: Vec<f64> = cols.iter().map(|&j| jd.grid.times[j]).collect();
        let coord_name = match screen.map(|s| s.label()) {
            Some(l) => format!("{l}_um"),
            None => "s_um".into(),
        };
        let mut header = vec![coord_name];
        header.extend(times.iter().map(|t| format!("t={}ms", fmt(*t))));
        let csv_path = self.csv(
            &format!("{name}.csv"),
            &header,
            rows.iter().map(|&i| {
                let r = jd.row(i);
                std::iter::once(jd.grid.screen_coords[i]).chain(cols.iter().map(|&j| r[j])).collect()
            }),
        )?;
        let sidecar = JointSidecar {
            tag: jd.tag,
            source: jd.source,
            screen: screen.copied(),
            layout: "row-major; one row per screen coordinate, first column is the coordinate".into(),
            coord_axis_um: coords,
            time_axis_ms: times,
            density_unit: "1/(um ms)".into(),
            stride,
            full_shape: [nc, nt],
            capture: jd.capture.clone(),
            raw_mass: jd.raw_mass,
        };
        self.json(&format!("{name}.json"), &sidecar)?;
        Ok(csv_path)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSidecar {
    pub tag: ProposalTag,
    pub source: Source,
    pub screen: Option<ScreenGeometry>,
    pub layout: String,
    pub coord_axis_um: Vec<f64>,
    pub time_axis_ms: Vec<f64>,
    pub density_unit: String,
    pub stride: usize,
    pub full_shape: [usize; 2],
    pub capture: Option<Capture>,
    pub raw_mass: f64,
}

/// Reads a joint CSV and its sidecar back into a normalized distribution.
pub fn load_joint(csv_path: &Path) -> CliResult<(JointDistribution, JointSidecar)> {
    let side_path = csv_path.with_extension("json");
    let text = fs::read_to_string(&side_path).map_err(|e| CliError::Config(format!("{}: {e}", side_path.display())))?;
    let side: JointSidecar =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", side_path.display())))?;
    let mut r = csv::Reader::from_path(csv_path).map_err(|e| CliError::Config(format!("{}: {e}", csv_path.display())))?;
    let nt = side.time_axis_ms.len();
    let mut density = Vec::with_capacity(side.coord_axis_um.len() * nt);
    let mut nrows = 0;
    for rec in r.records() {
        let rec = rec.map_err(|e| CliError::Config(format!("{}: {e}", csv_path.display())))?;
        if rec.len() != nt + 1 {
            return Err(CliError::Config(format!(
                "{}: row {} has {} fields, expected {}",
                csv_path.display(),
                nrows + 1,
                rec.len(),
                nt + 1
            )));
        }
        for f in rec.iter().skip(1) {
            let v: f64 = f
                .parse()
                .map_err(|_| CliError::Config(format!("{}: bad number {f:?}", csv_path.display())))?;
            density.push(v);
        }
        nrows += 1;
    }
    if nrows != side.coord_axis_um.len() {
        return Err(CliError::Config(format!(
            "{}: {nrows} rows but the sidecar lists {} coordinates",
            csv_path.display(),
            side.coord_axis_um.len()
        )));
    }
    let grid = SpaceTimeGrid::new(side.coord_axis_um.clone(), side.time_axis_ms.clone())?;
    let mut jd = JointDistribution::from_unnormalized(grid, density, side.tag, side.source)?;
    jd.capture = side.capture.clone();
    Ok((jd, side))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub kind: String,
    pub exit_code: i32,
    pub message: String,
}

impl From<&CliError> for ErrorRecord {
    fn from(e: &CliError) -> Self {
        ErrorRecord {
            kind: e.kind().into(),
            exit_code: e.exit_code(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub scenario: String,
    pub code_version: String,
    pub config: ExperimentConfig,
    pub threads: usize,
    pub started_unix_s: u64,
    pub wall_clock_s: f64,
    /// Seconds spent per stage.
    pub timings_s: BTreeMap<String, f64>,
    pub products: Vec<Product>,
    pub error: Option<ErrorRecord>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub runs: Vec<RunRecord>,
}

impl RunManifest {
    pub fn load(root: &Path) -> CliResult<Self> {
        let p = root.join("manifest.json");
        if !p.exists() {
            return Ok(RunManifest::default());
        }
        serde_json::from_str(&fs::read_to_string(&p)?).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))
    }

    /// Appends a run to `<root>/manifest.json`.
    pub fn append(root: &Path, rec: RunRecord) -> CliResult<()> {
        fs::create_dir_all(root)?;
        let mut m = Self::load(root)?;
        m.runs.push(rec);
        fs::write(root.join("manifest.json"), serde_json::to_string_pretty(&m)? + "\n")?;
        Ok(())
    }
}

pub fn code_version() -> String {
    format!("qarrival {}", env!("CARGO_PKG_VERSION"))
}
