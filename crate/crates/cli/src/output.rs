//! Tables and the summary document.
//!
//! Every table starts with a `#` comment block naming the tool version, the
//! command, the scenario fingerprint, the seed, both tolerances and the units.
//! Numbers carry 12 significant digits.

use serde::Serialize;
use std::fmt::Write as _;

use crate::CliError;

/// Formats `x` with 12 significant digits, trailing zeros removed.
pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.11e}");
    let (mant, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..12).contains(&exp) {
        let rounded: f64 = sci.parse().expect("round trip");
        trim(format!("{rounded:.*}", (11 - exp) as usize))
    } else {
        format!("{}e{exp}", trim(mant.to_string()))
    }
}

fn trim(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// `x` rounded to 12 significant digits; `None` when not finite.
pub fn round12(x: f64) -> Option<f64> {
    x.is_finite().then(|| format!("{x:.11e}").parse().expect("round trip"))
}

/// Display scaling for utility-valued quantities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Units {
    Nats,
    Bits,
}

impl Units {
    pub fn scale(self, x: f64) -> f64 {
        match self {
            Units::Nats => x,
            Units::Bits => x / std::f64::consts::LN_2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Units::Nats => "nats",
            Units::Bits => "bits",
        }
    }
}

/// Context shared by every table of one invocation.
#[derive(Debug, Clone)]
pub struct Header {
    pub command: String,
    pub fingerprint: Option<String>,
    pub seed: u64,
    pub tol_lp: f64,
    pub tol_solver: f64,
    pub units: Units,
}

impl Header {
    fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# maccoop {}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(s, "# command: {}", self.command);
        let _ = writeln!(s, "# fingerprint: {}", self.fingerprint.as_deref().unwrap_or("none"));
        let _ = writeln!(s, "# seed: {}", self.seed);
        let _ = writeln!(s, "# tol_lp: {}", fmt_num(self.tol_lp));
        let _ = writeln!(s, "# tol_solver: {}", fmt_num(self.tol_solver));
        let _ = writeln!(s, "# units: {}", self.units.name());
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Text(String),
    Int(i64),
    Num(f64),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Int(i) => i.to_string(),
            Cell::Num(x) => fmt_num(*x),
        }
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.into())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

impl From<usize> for Cell {
    fn from(i: usize) -> Self {
        Cell::Int(i as i64)
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

/// A named table, written as `<name>.csv`.
#[derive(Debug, Clone)]
pub struct Table {
    pub name: String,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&'static str]) -> Self {
        Self {
            name: name.into(),
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn render(&self, header: &Header) -> Result<String, CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| CliError::User(format!("writing table {}: {e}", self.name));
        w.write_record(&self.columns).map_err(io)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render)).map_err(io)?;
        }
        let body = w
            .into_inner()
            .map_err(|e| CliError::User(format!("writing table {}: {e}", self.name)))?;
        Ok(header.render() + &String::from_utf8(body).expect("csv output is utf-8"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateEntry {
    pub coalition: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateSummary {
    pub margin: Option<f64>,
    pub weights: Vec<CertificateEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Timings {
    pub total_seconds: f64,
}

/// The summary document. Keys are fixed; absent values are `null`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub command: String,
    pub fingerprint: Option<String>,
    pub verdict: Option<String>,
    pub epsilon_star: Option<f64>,
    pub allocation: Option<Vec<Option<f64>>>,
    pub certificate: Option<CertificateSummary>,
    pub timings: Option<Timings>,
}

impl Summary {
    pub fn new(command: &str, fingerprint: Option<String>) -> Self {
        Self {
            command: command.into(),
            fingerprint,
            verdict: None,
            epsilon_star: None,
            allocation: None,
            certificate: None,
            timings: None,
        }
    }

    pub fn render(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary always serializes") + "\n"
    }
}

/// Everything one command produced.
#[derive(Debug, Clone)]
pub struct Report {
    pub header: Header,
    pub tables: Vec<Table>,
    pub summary: Summary,
}

impl Report {
    /// Writes `<dir>/<table>.csv` and `<dir>/summary.json`.
    pub fn write_to(&self, dir: &std::path::Path) -> Result<(), CliError> {
        let io = |p: &std::path::Path, e: std::io::Error| CliError::User(format!("cannot write {}: {e}", p.display()));
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        for t in &self.tables {
            let path = dir.join(format!("{}.csv", t.name));
            std::fs::write(&path, t.render(&self.header)?).map_err(|e| io(&path, e))?;
        }
        let path = dir.join("summary.json");
        std::fs::write(&path, self.summary.render()).map_err(|e| io(&path, e))
    }

    /// Tables, each preceded by a `## <name>.csv` line, then the summary.
    pub fn render_stdout(&self) -> Result<String, CliError> {
        let mut s = String::new();
        for t in &self.tables {
            let _ = writeln!(s, "## {}.csv", t.name);
            s += &t.render(&self.header)?;
            s.push('\n');
        }
        s += &self.summary.render();
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_significant_digits() {
        assert_eq!(fmt_num(19f64.ln() / 3.0), "0.981479659722");
        assert_eq!(fmt_num(1.0), "1");
        assert_eq!(fmt_num(-2.5), "-2.5");
        assert_eq!(fmt_num(1e-9), "1e-9");
        assert_eq!(fmt_num(123456789012345.0), "1.23456789012e14");
        assert_eq!(fmt_num(0.99999999999999), "1");
        assert_eq!(fmt_num(-0.0), "0");
        assert_eq!(fmt_num(f64::NEG_INFINITY), "-inf");
        assert_eq!(round12(1.0 / 3.0), Some(0.333333333333));
        assert_eq!(round12(f64::NAN), None);
    }

    #[test]
    fn bits_divide_by_ln2() {
        assert!((Units::Bits.scale(std::f64::consts::LN_2) - 1.0).abs() < 1e-15);
        assert_eq!(Units::Nats.scale(0.7), 0.7);
    }
}
