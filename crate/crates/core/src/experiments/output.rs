use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array1;
use serde::Serialize;

use super::ExperimentError;
use crate::cli::config::OutputFormat;
use crate::trace::{write_traces_csv, write_traces_json, TraceRecord};

/// Artifact directory of one run.
#[derive(Clone, Debug)]
pub struct OutputDir {
    root: PathBuf,
    format: OutputFormat,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl OutputDir {
    pub fn create(root: &Path, format: OutputFormat) -> Result<Self, ExperimentError> {
        fs::create_dir_all(root).map_err(io_err(root))?;
        Ok(Self {
            root: root.to_path_buf(),
            format,
        })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    fn create_file(&self, name: &str) -> Result<(PathBuf, BufWriter<File>), ExperimentError> {
        let path = self.root.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        let file = File::create(&path).map_err(io_err(&path))?;
        Ok((path, BufWriter::new(file)))
    }

    fn finish(path: &Path, mut w: BufWriter<File>) -> Result<(), ExperimentError> {
        w.flush().map_err(io_err(path))
    }

    /// Writes `<stem>.csv` or `<stem>.json` depending on the format.
    pub fn write_traces(&self, stem: &str, records: &[TraceRecord]) -> Result<PathBuf, ExperimentError> {
        let name = match self.format {
            OutputFormat::Csv => format!("{stem}.csv"),
            OutputFormat::Json => format!("{stem}.json"),
        };
        let (path, mut w) = self.create_file(&name)?;
        match self.format {
            OutputFormat::Csv => write_traces_csv(&mut w, records),
            OutputFormat::Json => write_traces_json(&mut w, records),
        }
        .map_err(io_err(&path))?;
        Self::finish(&path, w)?;
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, ExperimentError> {
        let (path, mut w) = self.create_file(name)?;
        serde_json::to_writer_pretty(&mut w, value)
            .map_err(std::io::Error::other)
            .map_err(io_err(&path))?;
        w.write_all(b"\n").map_err(io_err(&path))?;
        Self::finish(&path, w)?;
        Ok(path)
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<PathBuf, ExperimentError> {
        let (path, mut w) = self.create_file(name)?;
        w.write_all(text.as_bytes()).map_err(io_err(&path))?;
        Self::finish(&path, w)?;
        Ok(path)
    }

    /// `sample_index,label,dim_0..dim_{D-1}` rows.
    pub fn write_embeddings(
        &self,
        name: &str,
        indices: &[usize],
        labels: &[usize],
        embeddings: &[Array1<f64>],
    ) -> Result<PathBuf, ExperimentError> {
        let (path, mut w) = self.create_file(name)?;
        write_embeddings_csv(&mut w, indices, labels, embeddings).map_err(io_err(&path))?;
        Self::finish(&path, w)?;
        Ok(path)
    }

    /// Binary PGM of a `rows x cols` image with values in `[0, 1]`.
    pub fn write_pgm(&self, name: &str, pixels: &[f64], rows: usize, cols: usize) -> Result<PathBuf, ExperimentError> {
        let (path, mut w) = self.create_file(name)?;
        w.write_all(&encode_pgm(pixels, rows, cols)).map_err(io_err(&path))?;
        Self::finish(&path, w)?;
        Ok(path)
    }
}

pub fn write_embeddings_csv<W: Write>(
    mut out: W,
    indices: &[usize],
    labels: &[usize],
    embeddings: &[Array1<f64>],
) -> std::io::Result<()> {
    let dims = embeddings.first().map_or(0, Array1::len);
    write!(out, "sample_index,label")?;
    for d in 0..dims {
        write!(out, ",dim_{d}")?;
    }
    writeln!(out)?;
    for ((i, label), e) in indices.iter().zip(labels).zip(embeddings) {
        write!(out, "{i},{label}")?;
        for v in e {
            write!(out, ",{v:?}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// P5 header then one byte per pixel; values are clipped to `[0, 1]` and
/// rounded to `0..=255`.
pub fn encode_pgm(pixels: &[f64], rows: usize, cols: usize) -> Vec<u8> {
    assert_eq!(pixels.len(), rows * cols, "pixel count must match dimensions");
    let mut bytes = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    bytes.extend(pixels.iter().map(|&p| {
        let p = if p.is_finite() { p.clamp(0.0, 1.0) } else { 0.0 };
        (p * 255.0).round() as u8
    }));
    bytes
}

/// Rescales `values` linearly onto `[0, 1]` (constant input maps to zeros).
pub fn normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    values
        .iter()
        .map(|&v| if span > 0.0 { (v - lo) / span } else { 0.0 })
        .collect()
}
