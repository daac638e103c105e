//! Versioned binary parameter snapshots.
//!
//! Layout: 4-byte magic, format version, topology descriptor, parameter
//! version counter, then the flat parameter array as little-endian f64.
//! Snapshots are loadable across runs for evaluation and freeze-retrain.

use super::{HeadSpec, NetTopology, ParamVector};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

const MAGIC: [u8; 4] = *b"TDLB";
const FORMAT_VERSION: u32 = 1;

const HEAD_DUELING: u8 = 0;
const HEAD_POLICY_VALUE: u8 = 1;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic; not a parameter snapshot")]
    BadMagic,
    #[error("unsupported snapshot format version {0}")]
    BadVersion(u32),
    #[error("corrupt snapshot: {0}")]
    Corrupt(String),
}

pub fn save_params(path: &Path, params: &ParamVector) -> Result<(), SnapshotError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    let topo = &params.topology;
    match &topo.head {
        HeadSpec::DuelingQ { horizons, n_actions } => {
            w.write_all(&[HEAD_DUELING])?;
            write_topology_common(&mut w, topo)?;
            w.write_all(&(*n_actions as u32).to_le_bytes())?;
            w.write_all(&(horizons.len() as u32).to_le_bytes())?;
            for &h in horizons {
                w.write_all(&(h as u32).to_le_bytes())?;
            }
        }
        HeadSpec::PolicyValue { n_actions } => {
            w.write_all(&[HEAD_POLICY_VALUE])?;
            write_topology_common(&mut w, topo)?;
            w.write_all(&(*n_actions as u32).to_le_bytes())?;
        }
    }
    w.write_all(&params.version.to_le_bytes())?;
    w.write_all(&(params.data.len() as u64).to_le_bytes())?;
    for &value in &params.data {
        w.write_all(&value.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn write_topology_common<W: Write>(w: &mut W, topo: &NetTopology) -> Result<(), SnapshotError> {
    w.write_all(&(topo.input_dim as u32).to_le_bytes())?;
    w.write_all(&(topo.hidden.len() as u32).to_le_bytes())?;
    for &width in &topo.hidden {
        w.write_all(&(width as u32).to_le_bytes())?;
    }
    Ok(())
}

pub fn load_params(path: &Path) -> Result<ParamVector, SnapshotError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(SnapshotError::BadMagic);
    }
    let format = read_u32(&mut r)?;
    if format != FORMAT_VERSION {
        return Err(SnapshotError::BadVersion(format));
    }
    let mut kind = [0u8; 1];
    r.read_exact(&mut kind)?;
    let input_dim = read_u32(&mut r)? as usize;
    let n_hidden = read_u32(&mut r)? as usize;
    let mut hidden = Vec::with_capacity(n_hidden);
    for _ in 0..n_hidden {
        hidden.push(read_u32(&mut r)? as usize);
    }
    let head = match kind[0] {
        HEAD_DUELING => {
            let n_actions = read_u32(&mut r)? as usize;
            let n_horizons = read_u32(&mut r)? as usize;
            let mut horizons = Vec::with_capacity(n_horizons);
            for _ in 0..n_horizons {
                horizons.push(read_u32(&mut r)? as usize);
            }
            HeadSpec::DuelingQ { horizons, n_actions }
        }
        HEAD_POLICY_VALUE => HeadSpec::PolicyValue {
            n_actions: read_u32(&mut r)? as usize,
        },
        k => return Err(SnapshotError::Corrupt(format!("unknown head kind {k}"))),
    };
    let topology = NetTopology {
        input_dim,
        hidden,
        head,
    };
    topology
        .validate()
        .map_err(|e| SnapshotError::Corrupt(e.to_string()))?;
    let version = read_u64(&mut r)?;
    let count = read_u64(&mut r)? as usize;
    if count != topology.param_count() {
        return Err(SnapshotError::Corrupt(format!(
            "parameter count {} does not match topology ({})",
            count,
            topology.param_count()
        )));
    }
    let mut data = Vec::with_capacity(count);
    let mut buf = [0u8; 8];
    for _ in 0..count {
        r.read_exact(&mut buf)?;
        data.push(f64::from_le_bytes(buf));
    }
    Ok(ParamVector {
        topology,
        data,
        version,
    })
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, SnapshotError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, SnapshotError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}
