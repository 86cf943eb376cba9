//! Logged scalars and their CSV/JSON encodings.

use std::fmt;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

/// Closed vocabulary of traced quantities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    Sigma,
    Theta,
    FreeEnergy,
    Accuracy,
    Mse,
    PriorMse,
    PosteriorMse,
    KnnAccuracy,
}

impl Quantity {
    pub fn as_str(self) -> &'static str {
        match self {
            Quantity::Sigma => "sigma",
            Quantity::Theta => "theta",
            Quantity::FreeEnergy => "free_energy",
            Quantity::Accuracy => "accuracy",
            Quantity::Mse => "mse",
            Quantity::PriorMse => "prior_mse",
            Quantity::PosteriorMse => "posterior_mse",
            Quantity::KnnAccuracy => "knn_accuracy",
        }
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One logged value at one step for one layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: u64,
    pub layer: usize,
    pub quantity: Quantity,
    pub value: f64,
}

impl TraceRecord {
    pub fn new(step: u64, layer: usize, quantity: Quantity, value: f64) -> Self {
        Self {
            step,
            layer,
            quantity,
            value,
        }
    }
}

pub const TRACE_CSV_HEADER: &str = "step,layer,quantity,value";

pub fn write_traces_csv<W: Write>(mut out: W, records: &[TraceRecord]) -> io::Result<()> {
    writeln!(out, "{TRACE_CSV_HEADER}")?;
    for r in records {
        // `{:?}` keeps the shortest representation that round-trips exactly.
        writeln!(out, "{},{},{},{:?}", r.step, r.layer, r.quantity, r.value)?;
    }
    Ok(())
}

pub fn write_traces_json<W: Write>(out: W, records: &[TraceRecord]) -> io::Result<()> {
    serde_json::to_writer_pretty(out, records).map_err(io::Error::other)
}

/// Values of `quantity` at `layer`, in step order.
pub fn series(records: &[TraceRecord], layer: usize, quantity: Quantity) -> Vec<f64> {
    records
        .iter()
        .filter(|r| r.layer == layer && r.quantity == quantity)
        .map(|r| r.value)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        write_traces_csv(
            &mut buf,
            &[
                TraceRecord::new(0, 0, Quantity::Sigma, 1.0),
                TraceRecord::new(1, 2, Quantity::FreeEnergy, 0.1),
            ],
        )
        .unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "step,layer,quantity,value\n0,0,sigma,1.0\n1,2,free_energy,0.1\n"
        );
    }

    #[test]
    fn json_uses_vocabulary_names() {
        let mut buf = Vec::new();
        write_traces_json(&mut buf, &[TraceRecord::new(3, 1, Quantity::KnnAccuracy, 0.5)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("\"knn_accuracy\""));
        let back: Vec<TraceRecord> = serde_json::from_str(&text).unwrap();
        assert_eq!(back[0].quantity, Quantity::KnnAccuracy);
    }
}
