use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One row of the loss trace. `step` counts completed updates before this one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub epoch: u64,
    pub l_d1: f64,
    pub l_d2: f64,
    pub l_d3: f64,
    pub l_d4: f64,
    pub l_r1: f64,
    pub l_r2: f64,
    pub l_r3: f64,
    pub l_r4: f64,
    pub d_adv: f64,
    pub d_c: f64,
    pub d_u: f64,
    /// λ-weighted disentanglement objective.
    pub hdn_total: f64,
    /// ω-weighted restoration objective.
    pub restoration_total: f64,
    pub generator_total: f64,
    pub discriminator_total: f64,
}

impl LossRecord {
    pub const HEADER: [&'static str; 17] = [
        "step",
        "epoch",
        "l_d1",
        "l_d2",
        "l_d3",
        "l_d4",
        "l_r1",
        "l_r2",
        "l_r3",
        "l_r4",
        "d_adv",
        "d_c",
        "d_u",
        "hdn_total",
        "restoration_total",
        "generator_total",
        "discriminator_total",
    ];

    /// The eleven individual loss terms, in header order.
    pub fn series(&self) -> [(&'static str, f64); 11] {
        [
            ("l_d1", self.l_d1),
            ("l_d2", self.l_d2),
            ("l_d3", self.l_d3),
            ("l_d4", self.l_d4),
            ("l_r1", self.l_r1),
            ("l_r2", self.l_r2),
            ("l_r3", self.l_r3),
            ("l_r4", self.l_r4),
            ("d_adv", self.d_adv),
            ("d_c", self.d_c),
            ("d_u", self.d_u),
        ]
    }

    pub fn values(&self) -> [f64; 15] {
        [
            self.l_d1,
            self.l_d2,
            self.l_d3,
            self.l_d4,
            self.l_r1,
            self.l_r2,
            self.l_r3,
            self.l_r4,
            self.d_adv,
            self.d_c,
            self.d_u,
            self.hdn_total,
            self.restoration_total,
            self.generator_total,
            self.discriminator_total,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }

    /// Largest absolute elementwise difference of the loss values; steps must agree.
    pub fn max_abs_diff(&self, other: &LossRecord) -> Option<f64> {
        (self.step == other.step)
            .then(|| self.values().iter().zip(other.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    }
}

/// Append-only CSV writer with a fixed header.
pub struct TraceWriter {
    path: PathBuf,
    inner: csv::Writer<File>,
}

impl TraceWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut inner = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        inner.write_record(LossRecord::HEADER).map_err(|e| csv_err(path, e))?;
        inner.flush().map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            inner,
        })
    }

    /// Keeps the rows of an existing trace before `step`, then appends.
    pub fn resume(path: &Path, step: u64) -> Result<Self> {
        if !path.exists() {
            return Self::create(path);
        }
        let kept: Vec<_> = read_trace(path)?.into_iter().filter(|r| r.step < step).collect();
        let mut w = Self::create(path)?;
        for r in &kept {
            w.append(r)?;
        }
        Ok(w)
    }

    pub fn append(&mut self, record: &LossRecord) -> Result<()> {
        self.inner.serialize(record).map_err(|e| csv_err(&self.path, e))?;
        self.inner.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Config(format!("{}: {e}", path.display()))
}

pub fn read_trace(path: &Path) -> Result<Vec<LossRecord>> {
    let file = OpenOptions::new().read(true).open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let header: Vec<String> = rdr.headers().map_err(|e| csv_err(path, e))?.iter().map(String::from).collect();
    if header != LossRecord::HEADER {
        return Err(Error::Config(format!("{}: unexpected trace header {header:?}", path.display())));
    }
    rdr.deserialize().map(|r| r.map_err(|e| csv_err(path, e))).collect()
}
