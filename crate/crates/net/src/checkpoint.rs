//! Versioned binary checkpoints holding the configuration, weights and
//! optimizer state.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use xgen_core::binio::{self, LeReader};

use crate::config::{NetworkConfig, TrainConfig};
use crate::error::{NetError, Result};
use crate::mat::Mat;
use crate::optim::Adam;
use crate::params::ParamStore;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Configuration blob stored as canonical JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointConfig {
    pub network: NetworkConfig,
    pub train: TrainConfig,
    /// Hash of the pipeline configuration that produced the run.
    #[serde(default)]
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: CheckpointConfig,
    pub step: u64,
    pub epoch: u64,
    pub params: ParamStore<f32>,
    pub optimizer: Option<Adam>,
}

fn write_bytes(w: &mut impl Write, b: &[u8]) -> std::io::Result<()> {
    binio::write_u64(w, b.len() as u64)?;
    w.write_all(b)
}

fn write_mat(w: &mut impl Write, m: &Mat<f32>) -> std::io::Result<()> {
    for v in &m.data {
        binio::write_f32(w, *v)?;
    }
    Ok(())
}

fn read_bytes(r: &mut LeReader<impl Read>, field: &str, max: usize) -> Result<Vec<u8>> {
    let n = r.u64(field)? as usize;
    if n > max {
        return Err(r.error(format!("{field} length {n} is implausible")).into());
    }
    let mut b = Vec::with_capacity(n);
    for _ in 0..n {
        b.push(r.u8(field)?);
    }
    Ok(b)
}

fn read_mat(r: &mut LeReader<impl Read>, rows: usize, cols: usize, field: &str) -> Result<Mat<f32>> {
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        data.push(r.f32(field)?);
    }
    Ok(Mat::from_vec(rows, cols, data))
}

impl Checkpoint {
    /// Layout: magic `XGCK`, version u32, config JSON (u64 length + bytes),
    /// step u64, epoch u64, tensor count u32, then per tensor its name
    /// (u64 length + UTF-8), rows u32, cols u32 and f32 data; finally an
    /// optimizer flag u8 and, when set, Adam hyperparameters (f64 bits as
    /// u64), update count u64 and the first and second moments per tensor.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(b"XGCK")?;
        binio::write_u32(w, CHECKPOINT_VERSION)?;
        write_bytes(w, serde_json::to_string(&self.config)?.as_bytes())?;
        binio::write_u64(w, self.step)?;
        binio::write_u64(w, self.epoch)?;
        binio::write_u32(w, self.params.len() as u32)?;
        for (id, name) in self.params.names().iter().enumerate() {
            let m = self.params.value(id);
            write_bytes(w, name.as_bytes())?;
            binio::write_u32(w, m.rows as u32)?;
            binio::write_u32(w, m.cols as u32)?;
            write_mat(w, m)?;
        }
        match &self.optimizer {
            None => binio::write_u8(w, 0)?,
            Some(a) => {
                binio::write_u8(w, 1)?;
                for x in [a.learning_rate, a.beta1, a.beta2, a.epsilon] {
                    binio::write_u64(w, x.to_bits())?;
                }
                binio::write_u64(w, a.t)?;
                for m in a.m.iter().chain(&a.v) {
                    write_mat(w, m)?;
                }
            }
        }
        Ok(())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(xgen_core::write_atomic(path, |w| w.write_all(&buf))?)
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        let mut r = LeReader::new(r, "checkpoint");
        r.magic(b"XGCK")?;
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(NetError::Checkpoint(format!(
                "version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let config: CheckpointConfig = serde_json::from_slice(&read_bytes(&mut r, "config", 1 << 20)?)?;
        config.network.validate()?;
        let step = r.u64("step")?;
        let epoch = r.u64("epoch")?;
        let count = r.u32("tensor count")? as usize;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let name = String::from_utf8(read_bytes(&mut r, "tensor name", 4096)?)
                .map_err(|_| NetError::Checkpoint("tensor name is not UTF-8".into()))?;
            let rows = r.u32("rows")? as usize;
            let cols = r.u32("cols")? as usize;
            if params.id(&name).is_some() {
                return Err(NetError::Checkpoint(format!("duplicate tensor {name}")));
            }
            params.add(name, read_mat(&mut r, rows, cols, "tensor data")?);
        }
        let optimizer = match r.u8("optimizer flag")? {
            0 => None,
            1 => {
                let mut h = [0f64; 4];
                for x in &mut h {
                    *x = f64::from_bits(r.u64("adam hyperparameter")?);
                }
                let t = r.u64("adam step")?;
                let shapes: Vec<(usize, usize)> = params.values().iter().map(|m| (m.rows, m.cols)).collect();
                let mut moments = Vec::with_capacity(2 * shapes.len());
                for &(rows, cols) in shapes.iter().chain(&shapes) {
                    moments.push(read_mat(&mut r, rows, cols, "adam moment")?);
                }
                let v = moments.split_off(shapes.len());
                Some(Adam {
                    learning_rate: h[0],
                    beta1: h[1],
                    beta2: h[2],
                    epsilon: h[3],
                    t,
                    m: moments,
                    v,
                })
            }
            f => return Err(NetError::Checkpoint(format!("bad optimizer flag {f}"))),
        };
        let ck = Self {
            config,
            step,
            epoch,
            params,
            optimizer,
        };
        ck.check_layout()?;
        Ok(ck)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    /// Verifies that the stored tensors match the layout the stored
    /// network configuration defines.
    pub fn check_layout(&self) -> Result<()> {
        let expected: ParamStore<f32> = crate::model::init_params(&self.config.network, 0)?;
        if expected.names() != self.params.names() {
            return Err(NetError::Checkpoint("tensor names do not match the configuration".into()));
        }
        for (id, name) in expected.names().iter().enumerate() {
            let (a, b) = (expected.value(id), self.params.value(id));
            if (a.rows, a.cols) != (b.rows, b.cols) {
                return Err(NetError::Checkpoint(format!(
                    "{name} is {}x{}, configuration expects {}x{}",
                    b.rows, b.cols, a.rows, a.cols
                )));
            }
        }
        Ok(())
    }
}
