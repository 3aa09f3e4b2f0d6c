use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RoundSink;
use crate::tensor::io::format_f64;

pub const CSV_HEADER: &str = "round,f,R,Rc,grad_norm_sq,sigma2_hat,delta_hat,wall_ms";

/// Metrics of one round, taken at the average of the client parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    /// Global objective on the evaluation subset.
    pub f: f64,
    #[serde(rename = "R")]
    pub rate: f64,
    #[serde(rename = "Rc")]
    pub class_rate: f64,
    /// Squared norm of the mean full-batch client gradient.
    pub grad_norm_sq: f64,
    pub sigma2_hat: f64,
    pub delta_hat: f64,
    pub wall_ms: f64,
    /// Whether the clients were averaged at the end of this round.
    pub aggregated: bool,
    /// Minibatch objective of each client's step this round.
    pub client_step_f: Vec<f64>,
    /// Full-batch local objective of each client at the averaged parameters.
    pub client_f: Vec<f64>,
    /// Largest `‖φ_n − φ̄‖²` over clients at the end of the round; exactly 0
    /// after an aggregation.
    pub client_drift: f64,
}

impl RoundLog {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.round,
            format_f64(self.f),
            format_f64(self.rate),
            format_f64(self.class_rate),
            format_f64(self.grad_norm_sq),
            format_f64(self.sigma2_hat),
            format_f64(self.delta_hat),
            format_f64(self.wall_ms),
        )
    }
}

/// Streams round logs to a CSV file and a JSON-lines file.
pub struct RoundWriter {
    csv: BufWriter<File>,
    jsonl: BufWriter<File>,
}

impl RoundWriter {
    pub fn create(csv_path: &Path, jsonl_path: &Path) -> io::Result<Self> {
        let mut csv = BufWriter::new(File::create(csv_path)?);
        writeln!(csv, "{CSV_HEADER}")?;
        let jsonl = BufWriter::new(File::create(jsonl_path)?);
        Ok(Self { csv, jsonl })
    }

    pub fn finish(mut self) -> io::Result<()> {
        self.csv.flush()?;
        self.jsonl.flush()
    }
}

impl RoundSink for RoundWriter {
    fn record(&mut self, log: &RoundLog) -> io::Result<()> {
        writeln!(self.csv, "{}", log.csv_row())?;
        serde_json::to_writer(&mut self.jsonl, log)?;
        writeln!(self.jsonl)?;
        self.csv.flush()?;
        self.jsonl.flush()
    }
}
