//! Binary weight serialization with checksums.
//!
//! Format: magic `NNWT`, version u16, tensor count u32, then per tensor a u8
//! rank, u32 dimensions, and little-endian f32 data. Tensors are the
//! persisted tensors of each layer in network order (weights, biases,
//! normalization parameters and running statistics).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{ArrayD, IxDyn};
use sha2::{Digest, Sha256};

use crate::error::NnError;
use crate::network::Network;

const MAGIC: &[u8; 4] = b"NNWT";
const VERSION: u16 = 1;

/// Writes every persisted tensor of the network and returns the SHA-256 hex
/// digest of the resulting file.
pub fn save_weights(path: impl AsRef<Path>, net: &Network) -> Result<String, NnError> {
    let tensors: Vec<&ArrayD<f32>> = net.layers().iter().flat_map(|l| l.persisted()).collect();
    if tensors.len() > u32::MAX as usize {
        return Err(NnError::FormatError("too many tensors".into()));
    }
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    out.write_all(MAGIC)?;
    out.write_u16::<LittleEndian>(VERSION)?;
    out.write_u32::<LittleEndian>(tensors.len() as u32)?;
    for t in tensors {
        if t.ndim() > u8::MAX as usize {
            return Err(NnError::FormatError("tensor rank too large".into()));
        }
        out.write_u8(t.ndim() as u8)?;
        for &d in t.shape() {
            out.write_u32::<LittleEndian>(d as u32)?;
        }
        let std = t.as_standard_layout();
        for &v in std.iter() {
            out.write_f32::<LittleEndian>(v)?;
        }
    }
    out.flush()?;
    drop(out);
    sha256_hex_file(path)
}

/// Loads weights saved by [`save_weights`] into a structurally identical
/// network. Shapes must match tensor for tensor.
pub fn load_weights(path: impl AsRef<Path>, net: &mut Network) -> Result<(), NnError> {
    let mut input = BufReader::new(File::open(path.as_ref())?);
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NnError::FormatError("bad weights magic".into()));
    }
    let version = input.read_u16::<LittleEndian>()?;
    if version != VERSION {
        return Err(NnError::FormatError(format!("unsupported weights version {version}")));
    }
    let count = input.read_u32::<LittleEndian>()? as usize;
    let expected: usize = net.layers().iter().map(|l| l.persisted().len()).sum();
    if count != expected {
        return Err(NnError::FormatError(format!(
            "file holds {count} tensors, network needs {expected}"
        )));
    }
    for layer in net.layers_mut() {
        for slot in layer.persisted_mut() {
            let ndim = input.read_u8()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(input.read_u32::<LittleEndian>()? as usize);
            }
            if shape != slot.shape() {
                return Err(NnError::FormatError(format!(
                    "tensor shape {:?} in file, {:?} in network",
                    shape,
                    slot.shape()
                )));
            }
            let mut data = vec![0f32; shape.iter().product()];
            input.read_f32_into::<LittleEndian>(&mut data)?;
            *slot = ArrayD::from_shape_vec(IxDyn(&shape), data)
                .map_err(|e| NnError::FormatError(e.to_string()))?;
        }
    }
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    hex(&h.finalize())
}

pub fn sha256_hex_file(path: impl AsRef<Path>) -> Result<String, NnError> {
    let mut file = File::open(path.as_ref())?;
    let mut h = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex(&h.finalize()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
