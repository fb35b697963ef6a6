//! Report rows and their CSV / JSON-lines serialization.
//!
//! Both formats carry the columns of [`HEADER`]. Floats are printed with 17
//! significant digits in the style of C's `%.17g`, so parsing a report
//! recovers every value bit for bit. Missing values are empty in CSV and
//! `null` in JSON; infinities and NaN print as `inf`, `-inf`, `nan` in CSV and
//! as the strings `"inf"`, `"-inf"`, `"nan"` in JSON.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::scenario::Format;
use crate::verify::Verdict;

pub const HEADER: [&str; 10] = [
    "scenario",
    "job",
    "quantity",
    "estimate",
    "stderr",
    "oracle",
    "paper_value",
    "verdict",
    "seed",
    "detail",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub scenario: String,
    pub job: String,
    pub quantity: String,
    pub estimate: Option<f64>,
    pub stderr: Option<f64>,
    pub oracle: Option<f64>,
    pub paper_value: Option<f64>,
    /// `None` for informational rows.
    pub verdict: Option<Verdict>,
    pub seed: u64,
    pub detail: String,
}

impl Row {
    pub fn new(job: &str, quantity: impl Into<String>) -> Self {
        Row {
            scenario: String::new(),
            job: job.to_string(),
            quantity: quantity.into(),
            estimate: None,
            stderr: None,
            oracle: None,
            paper_value: None,
            verdict: None,
            seed: 0,
            detail: String::new(),
        }
    }

    pub fn estimate(mut self, v: f64) -> Self {
        self.estimate = Some(v);
        self
    }

    pub fn stderr(mut self, v: f64) -> Self {
        self.stderr = Some(v);
        self
    }

    pub fn oracle(mut self, v: Option<f64>) -> Self {
        self.oracle = v;
        self
    }

    pub fn verdict(mut self, v: Verdict) -> Self {
        self.verdict = Some(v);
        self
    }

    pub fn pass_if(self, ok: bool) -> Self {
        self.verdict(Verdict::from_pass(ok))
    }

    pub fn detail(mut self, d: impl Into<String>) -> Self {
        self.detail = d.into();
        self
    }

    /// Informational rows and passing rows are fine; failing and inconclusive
    /// ones are not.
    pub fn is_ok(&self) -> bool {
        matches!(self.verdict, None | Some(Verdict::Pass))
    }
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
}

/// `%.17g`.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{v:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..17).contains(&exp) {
        let decimals = (16 - exp).max(0) as usize;
        strip_zeros(format!("{v:.decimals$}"))
    } else {
        let m = strip_zeros(mantissa.to_string());
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    }
}

fn strip_zeros(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn cell(v: Option<f64>) -> String {
    v.map(format_float).unwrap_or_default()
}

fn json_number(v: Option<f64>) -> String {
    match v {
        None => "null".into(),
        Some(x) if x.is_finite() => format_float(x),
        Some(x) => format!("\"{}\"", format_float(x)),
    }
}

fn json_string(s: &str) -> String {
    serde_json::to_string(s).expect("string serialization")
}

fn verdict_str(v: Option<Verdict>) -> &'static str {
    v.map_or("", |v| v.as_str())
}

pub fn write_csv<W: Write>(rows: &[Row], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER)?;
    for r in rows {
        w.write_record([
            r.scenario.as_str(),
            r.job.as_str(),
            r.quantity.as_str(),
            &cell(r.estimate),
            &cell(r.stderr),
            &cell(r.oracle),
            &cell(r.paper_value),
            verdict_str(r.verdict),
            &r.seed.to_string(),
            r.detail.as_str(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json_lines<W: Write>(rows: &[Row], mut out: W) -> io::Result<()> {
    for r in rows {
        let verdict = match r.verdict {
            Some(v) => json_string(v.as_str()),
            None => "null".into(),
        };
        writeln!(
            out,
            "{{\"scenario\":{},\"job\":{},\"quantity\":{},\"estimate\":{},\"stderr\":{},\"oracle\":{},\"paper_value\":{},\"verdict\":{},\"seed\":{},\"detail\":{}}}",
            json_string(&r.scenario),
            json_string(&r.job),
            json_string(&r.quantity),
            json_number(r.estimate),
            json_number(r.stderr),
            json_number(r.oracle),
            json_number(r.paper_value),
            verdict,
            r.seed,
            json_string(&r.detail),
        )?;
    }
    out.flush()
}

pub fn write_report(rows: &[Row], format: Format, path: &Path) -> Result<(), ReportError> {
    let io_err = |source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err)?;
    }
    let file = BufWriter::new(File::create(path).map_err(io_err)?);
    match format {
        Format::Csv => write_csv(rows, file).map_err(|source| ReportError::Csv {
            path: path.to_path_buf(),
            source,
        }),
        Format::JsonLines => write_json_lines(rows, file).map_err(io_err),
    }
}
