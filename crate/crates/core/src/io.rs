//! Small CSV helpers shared by the file loaders.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub(crate) struct CsvInput {
    pub(crate) name: String,
    pub(crate) reader: csv::Reader<File>,
    pub(crate) header: Vec<String>,
}

impl CsvInput {
    pub(crate) fn open(path: &Path) -> Result<Self> {
        let name = path.display().to_string();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(file);
        let header = reader
            .headers()
            .map_err(|e| Error::malformed(&name, 1, e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        Ok(CsvInput {
            name,
            reader,
            header,
        })
    }

    pub(crate) fn expect_header(&self, expected: &[&str]) -> Result<()> {
        if self.header.iter().map(String::as_str).eq(expected.iter().copied()) {
            Ok(())
        } else {
            Err(Error::malformed(
                &self.name,
                1,
                format!(
                    "expected header `{}`, found `{}`",
                    expected.join(","),
                    self.header.join(",")
                ),
            ))
        }
    }

    /// Iterate records as `(line_number, record)`.
    pub(crate) fn rows(&mut self) -> impl Iterator<Item = Result<(usize, csv::StringRecord)>> + '_ {
        let name = self.name.clone();
        self.reader.records().map(move |rec| match rec {
            Ok(r) => {
                let line = r.position().map_or(0, |p| p.line() as usize);
                Ok((line, r))
            }
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line() as usize);
                Err(Error::malformed(&name, line, e.to_string()))
            }
        })
    }
}

pub(crate) fn field<T: std::str::FromStr>(
    file: &str,
    line: usize,
    rec: &csv::StringRecord,
    idx: usize,
    what: &str,
) -> Result<T> {
    let raw = rec
        .get(idx)
        .ok_or_else(|| Error::malformed(file, line, format!("missing column `{what}`")))?;
    raw.parse()
        .map_err(|_| Error::malformed(file, line, format!("cannot parse `{what}` from {raw:?}")))
}

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(BufWriter::new(file))
}

pub(crate) fn finish(path: &Path, mut w: impl Write) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn write_line(path: &Path, w: &mut impl Write, line: std::fmt::Arguments<'_>) -> Result<()> {
    w.write_fmt(line)
        .and_then(|_| w.write_all(b"\n"))
        .map_err(|e| Error::io(path, e))
}
