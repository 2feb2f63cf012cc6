//! CSV emission with a stable byte format: header line first, `.`
//! decimals straight from the shortest-roundtrip float formatter, `\n`
//! line ends. Golden tests diff these bytes, so nothing here may depend
//! on locale or environment.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use anyhow::Context;

pub struct Csv {
    out: BufWriter<Box<dyn Write>>,
}

impl Csv {
    /// Opens the sink (a file, or stdout when no path is given) and writes
    /// the header.
    pub fn open(path: Option<&Path>, header: &str) -> anyhow::Result<Csv> {
        let raw: Box<dyn Write> = match path {
            Some(p) => Box::new(
                File::create(p).with_context(|| format!("creating {}", p.display()))?,
            ),
            None => Box::new(io::stdout()),
        };
        let mut csv = Csv { out: BufWriter::new(raw) };
        csv.line(header)?;
        Ok(csv)
    }

    pub fn line(&mut self, line: &str) -> anyhow::Result<()> {
        self.out.write_all(line.as_bytes())?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn finish(mut self) -> anyhow::Result<()> {
        self.out.flush()?;
        Ok(())
    }
}
