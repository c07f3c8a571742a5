//! On-disk formats.
//!
//! CSV files open with one `# config_sha256=<hex> seed=<u64>` comment line
//! followed by a header row. JSON records carry the same two fields under
//! `provenance`.

use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_sha256: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(config_sha256: impl Into<String>, seed: u64) -> Self {
        Provenance {
            config_sha256: config_sha256.into(),
            seed,
        }
    }

    pub fn comment_line(&self) -> String {
        format!("# config_sha256={} seed={}", self.config_sha256, self.seed)
    }

    pub fn parse_comment_line(line: &str) -> Result<Self> {
        let bad = || Error::Format {
            format: "csv provenance",
            reason: format!("unrecognised line `{line}`"),
        };
        let rest = line.trim_end().strip_prefix("# ").ok_or_else(bad)?;
        let mut hash = None;
        let mut seed = None;
        for field in rest.split_whitespace() {
            match field.split_once('=') {
                Some(("config_sha256", v)) => hash = Some(v.to_string()),
                Some(("seed", v)) => seed = Some(v.parse::<u64>().map_err(|_| bad())?),
                _ => return Err(bad()),
            }
        }
        Ok(Provenance {
            config_sha256: hash.ok_or_else(bad)?,
            seed: seed.ok_or_else(bad)?,
        })
    }
}

/// A JSON record with provenance fields alongside the payload's own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stamped<T> {
    pub provenance: Provenance,
    #[serde(flatten)]
    pub payload: T,
}

pub fn write_json<T: Serialize, W: Write>(mut w: W, provenance: &Provenance, payload: &T) -> Result<()> {
    #[derive(Serialize)]
    struct Ref<'a, T> {
        provenance: &'a Provenance,
        #[serde(flatten)]
        payload: &'a T,
    }
    serde_json::to_writer_pretty(&mut w, &Ref { provenance, payload })?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>, R: Read>(r: R) -> Result<Stamped<T>> {
    Ok(serde_json::from_reader(r)?)
}

/// CSV writer with the provenance line already emitted.
pub fn csv_writer<W: Write>(mut w: W, provenance: &Provenance) -> Result<csv::Writer<W>> {
    writeln!(w, "{}", provenance.comment_line())?;
    Ok(csv::WriterBuilder::new().has_headers(true).from_writer(w))
}

/// Splits a CSV stream into its provenance and a reader over the table.
pub fn csv_reader<R: BufRead>(mut r: R) -> Result<(Provenance, csv::Reader<R>)> {
    let mut first = String::new();
    r.read_line(&mut first)?;
    let provenance = Provenance::parse_comment_line(&first)?;
    let reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_reader(r);
    Ok((provenance, reader))
}

/// Checks that `headers` equals `expected`.
pub(crate) fn expect_headers(headers: &csv::StringRecord, expected: &[String], format: &'static str) -> Result<()> {
    if headers.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::Format {
            format,
            reason: format!(
                "expected columns {expected:?}, found {:?}",
                headers.iter().collect::<Vec<_>>()
            ),
        });
    }
    Ok(())
}

pub(crate) fn parse_f64(field: &str, format: &'static str) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| Error::Format {
        format,
        reason: format!("not a number: `{field}`"),
    })
}
