//! Report emission: stdout in the requested format, plus `<command>.csv` and
//! `<command>.manifest.json` in the output directory when one is set.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// Result of one subcommand.
#[derive(Debug, Clone)]
pub struct Report {
    pub command: &'static str,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
    /// Inputs that determine the result (spec, seeds, grids, constants).
    pub inputs: Value,
    /// Full structured result.
    pub result: Value,
    pub verdict: Verdict,
}

/// Shortest round-trip representation, always with a decimal point or
/// exponent so that floats stay recognisable in CSV.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

impl Report {
    pub fn new(command: &'static str, columns: Vec<&'static str>) -> Self {
        Self {
            command,
            columns,
            rows: Vec::new(),
            inputs: Value::Null,
            result: Value::Null,
            verdict: Verdict::Pass,
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }

    /// sha256 of the CSV table: independent of host, thread count and wall
    /// clock.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.csv()))
    }

    fn json(&self) -> Value {
        serde_json::json!({
            "command": self.command,
            "verdict": self.verdict,
            "inputs": self.inputs,
            "result": self.result,
            "columns": self.columns,
            "rows": self.rows,
        })
    }

    pub fn print(&self, format: Format, out: &mut impl Write) -> std::io::Result<()> {
        match format {
            Format::Csv => out.write_all(&self.csv()),
            Format::Json => writeln!(
                out,
                "{}",
                serde_json::to_string_pretty(&self.json()).expect("json value")
            ),
        }
    }

    pub fn manifest(&self, argv: &[String], elapsed: Duration) -> Value {
        serde_json::json!({
            "schema_version": MANIFEST_SCHEMA_VERSION,
            "command": self.command,
            "argv": argv,
            "tool_version": env!("CARGO_PKG_VERSION"),
            "inputs": self.inputs,
            "verdict": self.verdict,
            "wall_clock_seconds": elapsed.as_secs_f64(),
            "result_digest": self.digest(),
            "result": self.result,
        })
    }

    pub fn write_artifacts(
        &self,
        dir: &Path,
        argv: &[String],
        elapsed: Duration,
    ) -> std::io::Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir)?;
        let csv_path = dir.join(format!("{}.csv", self.command));
        let manifest_path = dir.join(format!("{}.manifest.json", self.command));
        std::fs::write(&csv_path, self.csv())?;
        let manifest =
            serde_json::to_string_pretty(&self.manifest(argv, elapsed)).expect("json value");
        std::fs::write(&manifest_path, manifest + "\n")?;
        Ok((csv_path, manifest_path))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_covers_the_table_only() {
        let mut a = Report::new("t", vec!["x", "y"]);
        a.push(vec![num(1.0), num(0.1)]);
        let mut b = a.clone();
        b.result = serde_json::json!({"other": 1});
        assert_eq!(a.digest(), b.digest());
        b.push(vec![num(2.0), num(3.0)]);
        assert_ne!(a.digest(), b.digest());
        assert_eq!(String::from_utf8(a.csv()).unwrap(), "x,y\n1.0,0.1\n");
    }

    #[test]
    fn floats_keep_a_decimal_point() {
        assert_eq!(num(5.0), "5.0");
        assert_eq!(num(1e-20), "1e-20");
    }
}
