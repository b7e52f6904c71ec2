//! Network checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! bytes 0..8     magic "GDPCKPT1"
//! bytes 8..16    u64 header length L
//! next L bytes   UTF-8 JSON header {"m", "d", "kappa", "seed", "step"}
//! then           f64 × (m·d)  W, row-major
//!                f64 × m      w_aug
//!                f64 × m      a
//!                f64 × (m·d)  W(0), row-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{NetError, NetworkState};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"GDPCKPT1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub m: usize,
    pub d: usize,
    pub kappa: f64,
    pub seed: u64,
    pub step: usize,
}

pub fn write_checkpoint<W: Write>(net: &NetworkState, mut out: W) -> Result<(), NetError> {
    let header = CheckpointHeader {
        m: net.m(),
        d: net.d(),
        kappa: net.kappa,
        seed: net.seed,
        step: net.step,
    };
    let json = serde_json::to_vec(&header).map_err(|e| NetError::Checkpoint(e.to_string()))?;
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    for v in net
        .w
        .iter()
        .chain(net.w_aug.iter())
        .chain(net.a.iter())
        .chain(net.w0.iter())
    {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<NetworkState, NetError> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(NetError::Checkpoint("bad magic".into()));
    }
    let mut len = [0u8; 8];
    input.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    if len > 1 << 20 {
        return Err(NetError::Checkpoint(format!("header length {len} is implausible")));
    }
    let mut json = vec![0u8; len];
    input.read_exact(&mut json)?;
    let header: CheckpointHeader =
        serde_json::from_slice(&json).map_err(|e| NetError::Checkpoint(e.to_string()))?;
    let (m, d) = (header.m, header.d);

    let mut take = |count: usize| -> Result<Vec<f64>, NetError> {
        let mut buf = vec![0u8; count * 8];
        input.read_exact(&mut buf)?;
        Ok(buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect())
    };
    let shape_err = |e: ndarray::ShapeError| NetError::Checkpoint(e.to_string());
    let w = Array2::from_shape_vec((m, d), take(m * d)?).map_err(shape_err)?;
    let w_aug = Array1::from(take(m)?);
    let a = Array1::from(take(m)?);
    let w0 = Array2::from_shape_vec((m, d), take(m * d)?).map_err(shape_err)?;
    Ok(NetworkState {
        w,
        w_aug,
        a,
        w0,
        kappa: header.kappa,
        seed: header.seed,
        step: header.step,
    })
}

pub fn save_checkpoint(net: &NetworkState, path: &Path) -> Result<(), NetError> {
    write_checkpoint(net, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint(path: &Path) -> Result<NetworkState, NetError> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
