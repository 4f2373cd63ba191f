//! Machine-readable experiment reports.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::OutputFormat;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Numeric table destined for a CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Table {
            name: name.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub experiment: String,
    pub criteria: Vec<Criterion>,
    pub tables: Vec<Table>,
}

impl Report {
    pub fn new(experiment: &str) -> Self {
        Report {
            experiment: experiment.into(),
            criteria: Vec::new(),
            tables: Vec::new(),
        }
    }

    pub fn check(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.criteria.push(Criterion {
            name: name.into(),
            passed,
            detail: detail.into(),
        });
    }

    pub fn passed(&self) -> bool {
        self.criteria.iter().all(|c| c.passed)
    }

    pub fn criterion(&self, name: &str) -> Option<&Criterion> {
        self.criteria.iter().find(|c| c.name == name)
    }

    /// Criteria whose name starts with `prefix`.
    pub fn criteria_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a Criterion> + 'a {
        self.criteria.iter().filter(move |c| c.name.starts_with(prefix))
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    /// Appends another report's criteria and tables, prefixing their names.
    pub fn absorb(&mut self, prefix: &str, other: Report) {
        for mut c in other.criteria {
            c.name = format!("{prefix}{}", c.name);
            self.criteria.push(c);
        }
        for mut t in other.tables {
            t.name = format!("{prefix}{}", t.name);
            self.tables.push(t);
        }
    }

    /// Writes the report into `dir` and returns the files created.
    ///
    /// CSV output produces `<experiment>_criteria.csv` plus one file per
    /// table; JSON output produces a single `<experiment>.json`.
    pub fn write(&self, dir: &Path, format: OutputFormat) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let stem = self.experiment.replace(' ', "_");
        let csv_err = |e: csv::Error| Error::Io(e.to_string());
        match format {
            OutputFormat::Json => {
                let path = dir.join(format!("{stem}.json"));
                let text = serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))?;
                fs::write(&path, text)?;
                Ok(vec![path])
            }
            OutputFormat::Csv => {
                let mut files = Vec::new();
                let path = dir.join(format!("{stem}_criteria.csv"));
                let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
                w.write_record(["name", "passed", "detail"]).map_err(csv_err)?;
                for c in &self.criteria {
                    w.write_record([c.name.as_str(), if c.passed { "true" } else { "false" }, c.detail.as_str()])
                        .map_err(csv_err)?;
                }
                w.flush()?;
                files.push(path);
                for t in &self.tables {
                    let path = dir.join(format!("{stem}_{}.csv", t.name));
                    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
                    w.write_record(&t.header).map_err(csv_err)?;
                    for row in &t.rows {
                        w.write_record(row.iter().map(|v| v.to_string())).map_err(csv_err)?;
                    }
                    w.flush()?;
                    files.push(path);
                }
                Ok(files)
            }
        }
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "experiment {}", self.experiment)?;
        for c in &self.criteria {
            writeln!(f, "  {} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Report {
        let mut r = Report::new("demo");
        r.check("a", true, "fine");
        r.check("b", false, "x = 2");
        let mut t = Table::new("sweep", &["n", "value"]);
        t.push(vec![100.0, 0.5]);
        t.push(vec![200.0, 0.25]);
        r.tables.push(t);
        r
    }

    #[test]
    fn pass_logic_and_lookup() {
        let r = sample();
        assert!(!r.passed());
        assert!(r.criterion("a").unwrap().passed);
        assert_eq!(r.table("sweep").unwrap().column("value"), Some(vec![0.5, 0.25]));
        assert!(Report::new("empty").passed());
    }

    #[test]
    fn writes_both_formats() {
        let dir = std::env::temp_dir().join(format!("zrp-report-{}", std::process::id()));
        let r = sample();
        let files = r.write(&dir, OutputFormat::Csv).unwrap();
        assert_eq!(files.len(), 2);
        let crit = fs::read_to_string(&files[0]).unwrap();
        assert!(crit.contains("b,false,x = 2"));
        let json = r.write(&dir, OutputFormat::Json).unwrap();
        let back: Report = serde_json::from_str(&fs::read_to_string(&json[0]).unwrap()).unwrap();
        assert_eq!(back, r);
        fs::remove_dir_all(dir).unwrap();
    }
}
