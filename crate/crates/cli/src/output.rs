//! CSV files with `#` metadata headers.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use stochnh::config::RunConfig;
use stochnh::stochastic::GENERATOR_NAME;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Everything needed to rerun a job: command, seed, generator, version and
/// the effective configuration.
pub struct Metadata<'a> {
    pub command: &'a str,
    pub config: Option<&'a RunConfig>,
    pub extra: Vec<(String, String)>,
}

impl Metadata<'_> {
    fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "# stochnh {VERSION}")?;
        writeln!(w, "# command: {}", self.command)?;
        writeln!(w, "# generator: {GENERATOR_NAME}")?;
        if let Some(c) = self.config {
            writeln!(w, "# seed: {}", c.seed())?;
            writeln!(w, "# weight: {}", num(c.weight()))?;
        }
        for (k, v) in &self.extra {
            writeln!(w, "# {k}: {v}")?;
        }
        if let Some(c) = self.config {
            writeln!(w, "# config:")?;
            for line in c.to_toml_string().lines() {
                writeln!(w, "#   {line}")?;
            }
        }
        Ok(())
    }
}

/// Round-trippable number formatting.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&'static str]) -> Self {
        Self { header: header.to_vec(), rows: Vec::new() }
    }

    pub fn push_nums(&mut self, row: &[f64]) {
        self.rows.push(row.iter().map(|&v| num(v)).collect());
    }

    pub fn write(&self, w: impl Write) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(&self.header)?;
        for r in &self.rows {
            csv.write_record(r)?;
        }
        csv.flush()?;
        Ok(())
    }
}

pub fn write_csv(dir: &Path, name: &str, meta: &Metadata, table: &Table) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    meta.write_to(&mut w)?;
    table.write(&mut w)?;
    w.flush()?;
    Ok(path)
}
