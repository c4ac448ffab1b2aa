//! JSON and CSV report writing.

use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};
use stripwalk::config::{RunConfig, Seeds};

use crate::error::CliError;

/// Pretty JSON with every double written with 17 significant digits, so
/// values survive a text round trip bit for bit.
pub struct FullPrecision<'a>(PrettyFormatter<'a>);

impl Default for FullPrecision<'_> {
    fn default() -> Self {
        Self(PrettyFormatter::with_indent(b"  "))
    }
}

impl Formatter for FullPrecision<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FullPrecision::default());
    value
        .serialize(&mut ser)
        .map_err(|e| CliError::Output(e.to_string()))?;
    buf.push(b'\n');
    String::from_utf8(buf).map_err(|e| CliError::Output(e.to_string()))
}

/// The only part of a report that differs between identical runs.
#[derive(Serialize)]
pub struct Header {
    pub timestamp: String,
    pub tool: &'static str,
    pub version: &'static str,
}

impl Header {
    pub fn now() -> Self {
        Self {
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            tool: "stripwalk",
            version: env!("CARGO_PKG_VERSION"),
        }
    }
}

#[derive(Serialize)]
pub struct Report<'a, T: Serialize> {
    pub header: Header,
    pub command: &'a str,
    pub config: &'a RunConfig,
    pub seeds: Seeds,
    pub result: &'a T,
}

/// A CSV table named after the file it is written to.
pub struct Table {
    pub name: String,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: impl Into<String>, columns: &[&'static str]) -> Self {
        Self {
            name: name.into(),
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String, CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let out = |e: csv::Error| CliError::Output(e.to_string());
        w.write_record(&self.columns).map_err(out)?;
        for r in &self.rows {
            w.write_record(r).map_err(out)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Output(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| CliError::Output(e.to_string()))
    }
}

/// CSV cell for a double, same precision as the JSON output.
pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        String::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum OutputFormat {
    Json,
    Csv,
    Both,
}

impl OutputFormat {
    fn json(self) -> bool {
        matches!(self, Self::Json | Self::Both)
    }

    fn csv(self) -> bool {
        matches!(self, Self::Csv | Self::Both)
    }
}

/// Writes the report as `<command>.json` and `<table>.csv` files in `out`,
/// or to stdout when no directory is given. Returns the files written.
pub fn emit(
    command: &str,
    json: &str,
    tables: &[Table],
    format: OutputFormat,
    out: Option<&Path>,
) -> Result<Vec<PathBuf>, CliError> {
    let mut written = Vec::new();
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| CliError::Output(format!("{}: {e}", dir.display())))?;
            let mut write = |name: String, text: &str| -> Result<(), CliError> {
                let path = dir.join(name);
                std::fs::write(&path, text).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))?;
                written.push(path);
                Ok(())
            };
            if format.json() {
                write(format!("{command}.json"), json)?;
            }
            if format.csv() {
                for t in tables {
                    write(format!("{}.csv", t.name), &t.to_csv()?)?;
                }
            }
        }
        None => {
            let mut stdout = io::stdout().lock();
            let io_err = |e: io::Error| CliError::Output(e.to_string());
            if format.json() {
                stdout.write_all(json.as_bytes()).map_err(io_err)?;
            }
            if format.csv() {
                for t in tables {
                    if format.json() {
                        writeln!(stdout, "# {}.csv", t.name).map_err(io_err)?;
                    }
                    stdout.write_all(t.to_csv()?.as_bytes()).map_err(io_err)?;
                }
            }
        }
    }
    Ok(written)
}
