//! Checkpoint format: ASCII header "SLARM-CKPT v1\n", then little-endian
//! binary: u64 param count; per parameter a length-prefixed name, u64 rows,
//! u64 cols and rows*cols f64 values; then the optimizer step counter and,
//! when present, first/second Adam moments in the same parameter order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::adam::Adam;
use super::store::ParameterStore;
use crate::error::{Error, Result};

const MAGIC: &[u8] = b"SLARM-CKPT v1\n";

fn write_u64<W: Write>(w: &mut W, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_f64s<W: Write>(w: &mut W, vs: &[f64]) -> std::io::Result<()> {
    for v in vs {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> std::io::Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    let mut buf = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut buf)?;
        out.push(f64::from_le_bytes(buf));
    }
    Ok(out)
}

pub fn save(path: &Path, store: &ParameterStore, adam: Option<&Adam>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e: std::io::Error| Error::io(path.display().to_string(), e);

    w.write_all(MAGIC).map_err(io_err)?;
    write_u64(&mut w, store.len() as u64).map_err(io_err)?;
    for id in store.ids() {
        let name = store.name(id).as_bytes();
        write_u64(&mut w, name.len() as u64).map_err(io_err)?;
        w.write_all(name).map_err(io_err)?;
        let a = store.value(id);
        write_u64(&mut w, a.rows() as u64).map_err(io_err)?;
        write_u64(&mut w, a.cols() as u64).map_err(io_err)?;
        write_f64s(&mut w, a.data()).map_err(io_err)?;
    }
    match adam {
        Some(adam) => {
            write_u64(&mut w, adam.step).map_err(io_err)?;
            w.write_all(&[1u8]).map_err(io_err)?;
            for arr in adam.m.iter().chain(adam.v.iter()) {
                write_f64s(&mut w, arr.data()).map_err(io_err)?;
            }
        }
        None => {
            write_u64(&mut w, 0).map_err(io_err)?;
            w.write_all(&[0u8]).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

/// Load values (and moments, when stored) into an already-registered store.
/// The store must contain exactly the checkpoint's parameters with matching
/// shapes; names are matched positionally and verified.
pub fn load(path: &Path, store: &mut ParameterStore, adam: Option<&mut Adam>) -> Result<()> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut r = BufReader::new(file);
    let io_err = |e: std::io::Error| Error::io(path.display().to_string(), e);

    let mut magic = vec![0u8; MAGIC.len()];
    r.read_exact(&mut magic).map_err(io_err)?;
    if magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{} is not a SLARM-CKPT v1 file",
            path.display()
        )));
    }
    let n = read_u64(&mut r).map_err(io_err)? as usize;
    if n != store.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {n} parameters, model has {}",
            store.len()
        )));
    }
    let ids: Vec<_> = store.ids().collect();
    for id in &ids {
        let name_len = read_u64(&mut r).map_err(io_err)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(io_err)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
        if name != store.name(*id) {
            return Err(Error::Checkpoint(format!(
                "parameter order mismatch: checkpoint has {name}, model expects {}",
                store.name(*id)
            )));
        }
        let rows = read_u64(&mut r).map_err(io_err)? as usize;
        let cols = read_u64(&mut r).map_err(io_err)? as usize;
        let value = store.value_mut(*id);
        if rows != value.rows() || cols != value.cols() {
            return Err(Error::Checkpoint(format!(
                "shape mismatch for {name}: checkpoint {rows}x{cols}, model {}x{}",
                value.rows(),
                value.cols()
            )));
        }
        let data = read_f64s(&mut r, rows * cols).map_err(io_err)?;
        value.data_mut().copy_from_slice(&data);
    }
    let step = read_u64(&mut r).map_err(io_err)?;
    let mut has_moments = [0u8; 1];
    r.read_exact(&mut has_moments).map_err(io_err)?;
    if let Some(adam) = adam {
        adam.step = step;
        if has_moments[0] == 1 {
            for arr in adam.m.iter_mut().chain(adam.v.iter_mut()) {
                let data = read_f64s(&mut r, arr.len()).map_err(io_err)?;
                arr.data_mut().copy_from_slice(&data);
            }
        }
    }
    Ok(())
}
