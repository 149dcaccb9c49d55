//! Output files: `results.csv` (the record of record), `table.txt` (human
//! rendering), and `manifest.json` (run provenance).
//!
//! The CSV schema is fixed, in this column order:
//!
//! ```text
//! model,n,rho,sigma,delta,gamma1,gamma2,coord,level,kind,
//! estimate,halfwidth,covered,coverage,mc_stderr,degenerate,failures
//! ```
//!
//! Missing cells are `NA`. Floats use Rust's shortest round-trip formatting,
//! so a run's bytes depend only on the numbers, never on thread count.

use std::io::Write;
use std::path::Path;

use crate::settings::RunConfig;

pub const CSV_HEADER: &str =
    "model,n,rho,sigma,delta,gamma1,gamma2,coord,level,kind,estimate,halfwidth,covered,coverage,mc_stderr,degenerate,failures";

/// One `results.csv` row. The `estimate` column holds the point estimate for
/// estimate/ci rows and the null value under test for power rows; `coverage`
/// holds a coverage frequency for CI rows and a rejection frequency for test
/// rows.
#[derive(Debug, Clone, Default)]
pub struct ResultRow {
    pub model: String,
    pub n: usize,
    pub rho: Option<f64>,
    pub sigma: Option<f64>,
    pub delta: Option<f64>,
    pub gamma1: Option<f64>,
    pub gamma2: Option<f64>,
    pub coord: usize,
    pub level: f64,
    pub kind: String,
    pub estimate: Option<f64>,
    pub halfwidth: Option<f64>,
    pub covered: Option<bool>,
    pub coverage: Option<f64>,
    pub mc_stderr: Option<f64>,
    pub degenerate: Option<f64>,
    pub failures: usize,
}

fn num(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_nan() => "NA".to_string(),
        Some(x) => format!("{x}"),
        None => "NA".to_string(),
    }
}

impl ResultRow {
    fn to_csv_line(&self) -> String {
        let covered = match self.covered {
            Some(true) => "1".to_string(),
            Some(false) => "0".to_string(),
            None => "NA".to_string(),
        };
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.model,
            self.n,
            num(self.rho),
            num(self.sigma),
            num(self.delta),
            num(self.gamma1),
            num(self.gamma2),
            self.coord,
            self.level,
            self.kind,
            num(self.estimate),
            num(self.halfwidth),
            covered,
            num(self.coverage),
            num(self.mc_stderr),
            num(self.degenerate),
            self.failures
        )
    }
}

pub fn write_results_csv(path: &Path, rows: &[ResultRow]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{CSV_HEADER}")?;
    for row in rows {
        writeln!(f, "{}", row.to_csv_line())?;
    }
    f.flush()
}

pub fn write_table_txt(path: &Path, text: &str) -> std::io::Result<()> {
    std::fs::write(path, text)
}

/// `manifest.json`: the resolved configuration, package version, and wall
/// time.
pub fn write_manifest(
    path: &Path,
    config: &RunConfig,
    wall_seconds: f64,
) -> std::io::Result<()> {
    #[derive(serde::Serialize)]
    struct Manifest<'a> {
        package: &'static str,
        version: &'static str,
        config: &'a RunConfig,
        seed: u64,
        wall_seconds: f64,
    }
    let manifest = Manifest {
        package: "mrgmm-cli",
        version: env!("CARGO_PKG_VERSION"),
        config,
        seed: config.seed,
        wall_seconds,
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(path, text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_line_formats_na_and_flags() {
        let row = ResultRow {
            model: "example1".into(),
            n: 200,
            rho: Some(0.5),
            sigma: Some(1.5),
            delta: Some(-0.6),
            coord: 0,
            level: 0.9,
            kind: "MR*".into(),
            coverage: Some(0.861),
            mc_stderr: Some(0.01),
            degenerate: Some(0.0),
            failures: 2,
            ..Default::default()
        };
        assert_eq!(
            row.to_csv_line(),
            "example1,200,0.5,1.5,-0.6,NA,NA,0,0.9,MR*,NA,NA,NA,0.861,0.01,0,2"
        );
    }
}
