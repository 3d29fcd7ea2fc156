use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const HEADER: &str = "epoch,split,loss,accuracy,mean_p,wallclock_s";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub split: &'static str,
    pub loss: f64,
    pub accuracy: Option<f64>,
    pub mean_p: Option<f64>,
    pub wallclock_s: Option<f64>,
}

fn field(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.epoch,
            self.split,
            self.loss,
            field(self.accuracy),
            field(self.mean_p),
            field(self.wallclock_s)
        )
    }

    /// Parses one data line; the split name must be known.
    pub fn parse(line: &str) -> Result<Self> {
        let bad = |msg: &str| Error::InvalidArgument(format!("metrics line `{line}`: {msg}"));
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 6 {
            return Err(bad("expected 6 columns"));
        }
        let opt = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| bad("bad number"))
            }
        };
        let split = match cols[1] {
            "train" => "train",
            "valid" => "valid",
            "test" => "test",
            _ => return Err(bad("unknown split")),
        };
        Ok(Self {
            epoch: cols[0].parse().map_err(|_| bad("bad epoch"))?,
            split,
            loss: cols[2].parse().map_err(|_| bad("bad loss"))?,
            accuracy: opt(cols[3])?,
            mean_p: opt(cols[4])?,
            wallclock_s: opt(cols[5])?,
        })
    }
}

/// Reads a metrics CSV written by [`MetricsWriter`].
pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(HEADER) {
        return Err(Error::InvalidArgument("metrics file lacks the expected header".into()));
    }
    lines.map(MetricsRow::parse).collect()
}

pub struct MetricsWriter {
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{HEADER}")?;
        Ok(Self { out })
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        writeln!(self.out, "{}", row.to_csv())?;
        self.out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let row = MetricsRow {
            epoch: 3,
            split: "train",
            loss: 0.125,
            accuracy: None,
            mean_p: Some(0.5),
            wallclock_s: None,
        };
        assert_eq!(row.to_csv(), "3,train,0.125,,0.5,");
        assert_eq!(MetricsRow::parse(&row.to_csv()).unwrap(), row);
        assert!(MetricsRow::parse("1,dev,0,,,").is_err());
    }

    #[test]
    fn write_then_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/m.csv");
        let mut w = MetricsWriter::create(&path).unwrap();
        let row = MetricsRow {
            epoch: 0,
            split: "test",
            loss: 1.0 / 3.0,
            accuracy: Some(0.75),
            mean_p: None,
            wallclock_s: Some(0.01),
        };
        w.write(&row).unwrap();
        drop(w);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(HEADER));
        assert_eq!(read_metrics(&path).unwrap(), vec![row]);
    }
}
