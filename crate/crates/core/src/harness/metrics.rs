use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str =
    "iteration,L_D,L_G,frechet,precision,recall,density,coverage,covered_modes,hq_fraction,wall_seconds";

/// Header used when the Fréchet column is measured in random-feature space.
pub fn metrics_header(random_features: bool) -> String {
    if random_features {
        METRICS_HEADER.replacen("frechet", "rf_frechet", 1)
    } else {
        METRICS_HEADER.to_string()
    }
}

/// One evaluation row. Empty cells are written for values that do not
/// apply (losses before training, mode counts without known modes).
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub iteration: u64,
    pub l_d: Option<f64>,
    pub l_g: Option<f64>,
    pub frechet: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub density: Option<f64>,
    pub coverage: Option<f64>,
    pub covered_modes: Option<usize>,
    pub hq_fraction: Option<f64>,
    pub wall_seconds: f64,
}

fn cell<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsRecord {
    pub fn to_csv_row(&self) -> String {
        let cells = [
            self.iteration.to_string(),
            cell(self.l_d),
            cell(self.l_g),
            cell(self.frechet),
            cell(self.precision),
            cell(self.recall),
            cell(self.density),
            cell(self.coverage),
            cell(self.covered_modes),
            cell(self.hq_fraction),
            format!("{:.3}", self.wall_seconds),
        ];
        let mut s = cells.join(",");
        s.push('\n');
        s
    }
}

/// Append-only metrics CSV that enforces a non-decreasing iteration column.
#[derive(Debug)]
pub struct MetricsLog {
    path: PathBuf,
    file: File,
    last_iteration: Option<u64>,
}

impl MetricsLog {
    pub fn create(path: &Path, random_features: bool) -> Result<Self> {
        let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
        writeln!(file, "{}", metrics_header(random_features)).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
            last_iteration: None,
        })
    }

    pub fn append(&mut self, r: &MetricsRecord) -> Result<()> {
        if let Some(last) = self.last_iteration {
            if r.iteration < last {
                return Err(Error::contract(format!(
                    "metrics iteration {} precedes {last}",
                    r.iteration
                )));
            }
        }
        self.file
            .write_all(r.to_csv_row().as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|e| Error::io(&self.path, e))?;
        self.last_iteration = Some(r.iteration);
        Ok(())
    }
}

/// Appends one record to an existing CSV, writing the header if the file is
/// new or empty.
pub fn log_metrics_csv(record: &MetricsRecord, path: &Path) -> Result<()> {
    let fresh = std::fs::metadata(path)
        .map(|m| m.len() == 0)
        .unwrap_or(true);
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut s = String::new();
    if fresh {
        s.push_str(METRICS_HEADER);
        s.push('\n');
    }
    s.push_str(&record.to_csv_row());
    f.write_all(s.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Drops the trailing `wall_seconds` column so runs can be compared.
pub fn strip_wall_seconds(csv: &str) -> String {
    csv.lines()
        .map(|l| match l.rfind(',') {
            Some(i) => &l[..i],
            None => l,
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Parses one column of a metrics CSV by header name; empty cells are `None`.
pub fn read_column(csv: &str, name: &str) -> Result<Vec<Option<f64>>> {
    let mut lines = csv.lines();
    let header = lines.next().ok_or_else(|| Error::Parse {
        offset: 0,
        msg: "empty metrics file".into(),
    })?;
    let col = header
        .split(',')
        .position(|h| h == name)
        .ok_or_else(|| Error::Parse {
            offset: 0,
            msg: format!("no column {name:?} in header"),
        })?;
    let mut offset = header.len() + 1;
    let mut out = Vec::new();
    for l in lines {
        let c = l.split(',').nth(col).ok_or_else(|| Error::Parse {
            offset,
            msg: format!("row lacks column {name:?}"),
        })?;
        out.push(if c.is_empty() {
            None
        } else {
            Some(c.parse().map_err(|_| Error::Parse {
                offset,
                msg: format!("bad value {c:?} in column {name:?}"),
            })?)
        });
        offset += l.len() + 1;
    }
    Ok(out)
}
