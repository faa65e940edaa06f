//! Versioned binary checkpoint (`PFCK1`): a JSON config echo followed by
//! every named parameter tensor and momentum buffer as little-endian f64,
//! plus the epoch counter. Save/load round-trips bit-exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{JointHeadParams, Mode, TensorRef, TrainConfig};

const MAGIC: &[u8; 5] = b"PFCK1";

/// A full training state snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub mode: Mode,
    pub feature_dim: usize,
    pub epoch: usize,
    pub params: JointHeadParams,
    pub momentum: JointHeadParams,
}

#[derive(Serialize, Deserialize)]
struct ConfigEcho {
    config: TrainConfig,
    mode: Mode,
    feature_dim: usize,
}

fn tensor_shape(tensor: &TensorRef<'_>) -> Vec<u32> {
    match tensor {
        TensorRef::Matrix(m) => vec![m.nrows() as u32, m.ncols() as u32],
        TensorRef::Vector(v) => vec![v.len() as u32],
        TensorRef::Scalar(_) => vec![],
    }
}

fn write_group(
    w: &mut impl Write,
    prefix: &str,
    params: &JointHeadParams,
) -> Result<()> {
    for (name, tensor) in params.tensors() {
        let full = format!("{prefix}{name}");
        w.write_u32::<LittleEndian>(full.len() as u32)?;
        w.write_all(full.as_bytes())?;
        let shape = tensor_shape(&tensor);
        w.write_u32::<LittleEndian>(shape.len() as u32)?;
        for dim in &shape {
            w.write_u32::<LittleEndian>(*dim)?;
        }
        match tensor {
            TensorRef::Matrix(m) => {
                for v in m.iter() {
                    w.write_f64::<LittleEndian>(*v)?;
                }
            }
            TensorRef::Vector(v) => {
                for x in v.iter() {
                    w.write_f64::<LittleEndian>(*x)?;
                }
            }
            TensorRef::Scalar(s) => w.write_f64::<LittleEndian>(*s)?,
        }
    }
    Ok(())
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    let echo = serde_json::to_vec(&ConfigEcho {
        config: checkpoint.config.clone(),
        mode: checkpoint.mode,
        feature_dim: checkpoint.feature_dim,
    })
    .expect("config echo serializes");
    w.write_u32::<LittleEndian>(echo.len() as u32)?;
    w.write_all(&echo)?;
    w.write_u32::<LittleEndian>(checkpoint.epoch as u32)?;
    let n_tensors = checkpoint.params.tensors().len() * 2;
    w.write_u32::<LittleEndian>(n_tensors as u32)?;
    write_group(&mut w, "", &checkpoint.params)?;
    write_group(&mut w, "momentum.", &checkpoint.momentum)?;
    w.flush()?;
    Ok(())
}

fn bad(path: &Path, what: &str) -> Error {
    Error::FileFormat(format!("{}: {what}", path.display()))
}

fn read_group(
    r: &mut impl Read,
    prefix: &str,
    template: &JointHeadParams,
    path: &Path,
) -> Result<JointHeadParams> {
    let mut flat = Vec::with_capacity(template.n_params());
    for (expected_name, tensor) in template.tensors() {
        let name_len = r.read_u32::<LittleEndian>()? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)
            .map_err(|_| bad(path, "truncated tensor name"))?;
        let name = String::from_utf8(name_bytes).map_err(|_| bad(path, "bad tensor name"))?;
        let expected = format!("{prefix}{expected_name}");
        if name != expected {
            return Err(bad(
                path,
                &format!("tensor {name:?} where {expected:?} was expected"),
            ));
        }
        let ndim = r.read_u32::<LittleEndian>()? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(r.read_u32::<LittleEndian>()? as usize);
        }
        if dims != tensor_shape(&tensor).iter().map(|&d| d as usize).collect::<Vec<_>>() {
            return Err(bad(path, &format!("tensor {name} has unexpected shape {dims:?}")));
        }
        for _ in 0..tensor.len() {
            flat.push(
                r.read_f64::<LittleEndian>()
                    .map_err(|_| bad(path, "truncated tensor data"))?,
            );
        }
    }
    template.from_flat(&flat)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)
        .map_err(|_| bad(path, "truncated header"))?;
    if &magic != MAGIC {
        return Err(bad(path, "bad magic"));
    }
    let echo_len = r.read_u32::<LittleEndian>()? as usize;
    let mut echo_bytes = vec![0u8; echo_len];
    r.read_exact(&mut echo_bytes)
        .map_err(|_| bad(path, "truncated config echo"))?;
    let echo: ConfigEcho = serde_json::from_slice(&echo_bytes)
        .map_err(|e| bad(path, &format!("bad config echo: {e}")))?;
    let epoch = r.read_u32::<LittleEndian>()? as usize;
    let n_tensors = r.read_u32::<LittleEndian>()? as usize;

    let template = JointHeadParams::zeros(echo.feature_dim, echo.config.hidden_dim);
    if n_tensors != template.tensors().len() * 2 {
        return Err(bad(path, &format!("expected {} tensors, file has {n_tensors}",
            template.tensors().len() * 2)));
    }
    let params = read_group(&mut r, "", &template, path)?;
    let momentum = read_group(&mut r, "momentum.", &template, path)?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(bad(path, "trailing bytes after payload"));
    }
    params.validate(echo.feature_dim)?;
    Ok(Checkpoint {
        config: echo.config,
        mode: echo.mode,
        feature_dim: echo.feature_dim,
        epoch,
        params,
        momentum,
    })
}
