//! Versioned binary checkpoints: JSON header (model config, grid, seed)
//! followed by named parameter tensors and optional optimizer state.
//!
//! Unknown versions are rejected, never migrated. Config compatibility is
//! the caller's concern: the header round-trips as typed JSON.

use super::{Adam, AdamConfig, ParamStore};
use crate::error::{CoreError, Result};
use crate::scalar::Scalar;
use ndarray::Array2;
use serde::{de::DeserializeOwned, Serialize};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"TSPICKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn write_array<S: Scalar>(w: &mut impl Write, a: &Array2<S>) -> Result<()> {
    write_u64(w, a.nrows() as u64)?;
    write_u64(w, a.ncols() as u64)?;
    for &v in a.iter() {
        w.write_all(&v.as_f64().to_le_bytes())?;
    }
    Ok(())
}

fn read_array<S: Scalar>(r: &mut impl Read) -> Result<Array2<S>> {
    let rows = read_u64(r)? as usize;
    let cols = read_u64(r)? as usize;
    let mut data = Vec::with_capacity(rows * cols);
    let mut buf = [0u8; 8];
    for _ in 0..rows * cols {
        r.read_exact(&mut buf)?;
        data.push(S::of_f64(f64::from_le_bytes(buf)));
    }
    Array2::from_shape_vec((rows, cols), data)
        .map_err(|e| CoreError::invalid(format!("bad tensor shape in checkpoint: {e}")))
}

/// Write `header` (any serde struct), all parameters, and optionally the
/// Adam state for resumable training.
pub fn save_checkpoint<S: Scalar, H: Serialize>(
    path: impl AsRef<Path>,
    header: &H,
    store: &ParamStore<S>,
    optimizer: Option<&Adam<S>>,
) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let header_json = serde_json::to_vec(header)?;
    write_u64(&mut w, header_json.len() as u64)?;
    w.write_all(&header_json)?;

    write_u64(&mut w, store.len() as u64)?;
    for id in store.ids() {
        let name = store.name(id).as_bytes();
        write_u64(&mut w, name.len() as u64)?;
        w.write_all(name)?;
        w.write_all(&[store.is_trainable(id) as u8])?;
        write_array(&mut w, store.get(id))?;
    }

    match optimizer {
        Some(adam) => {
            w.write_all(&[1u8])?;
            let cfg_json = serde_json::to_vec(&adam.config)?;
            write_u64(&mut w, cfg_json.len() as u64)?;
            w.write_all(&cfg_json)?;
            write_u64(&mut w, adam.step_count)?;
            let state = adam.state();
            write_u64(&mut w, state.len() as u64)?;
            for entry in state {
                match entry {
                    Some((m, v)) => {
                        w.write_all(&[1u8])?;
                        write_array(&mut w, &m)?;
                        write_array(&mut w, &v)?;
                    }
                    None => w.write_all(&[0u8])?,
                }
            }
        }
        None => w.write_all(&[0u8])?,
    }
    w.flush()?;
    Ok(())
}

/// Load a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint<S: Scalar, H: DeserializeOwned>(
    path: impl AsRef<Path>,
) -> Result<(H, ParamStore<S>, Option<Adam<S>>)> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path.as_ref())?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CoreError::ConfigMismatch(format!(
            "{}: not a checkpoint file",
            path.as_ref().display()
        )));
    }
    let mut vbuf = [0u8; 4];
    r.read_exact(&mut vbuf)?;
    let version = u32::from_le_bytes(vbuf);
    if version != CHECKPOINT_VERSION {
        return Err(CoreError::ConfigMismatch(format!(
            "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let hlen = read_u64(&mut r)? as usize;
    let mut hbuf = vec![0u8; hlen];
    r.read_exact(&mut hbuf)?;
    let header: H = serde_json::from_slice(&hbuf)?;

    let n_params = read_u64(&mut r)? as usize;
    let mut store = ParamStore::new();
    for _ in 0..n_params {
        let nlen = read_u64(&mut r)? as usize;
        let mut nbuf = vec![0u8; nlen];
        r.read_exact(&mut nbuf)?;
        let name = String::from_utf8(nbuf)
            .map_err(|e| CoreError::invalid(format!("bad parameter name: {e}")))?;
        let mut tbuf = [0u8; 1];
        r.read_exact(&mut tbuf)?;
        let value: Array2<S> = read_array(&mut r)?;
        store.add(name, value, tbuf[0] != 0);
    }

    let mut obuf = [0u8; 1];
    r.read_exact(&mut obuf)?;
    let optimizer = if obuf[0] == 1 {
        let clen = read_u64(&mut r)? as usize;
        let mut cbuf = vec![0u8; clen];
        r.read_exact(&mut cbuf)?;
        let config: AdamConfig = serde_json::from_slice(&cbuf)?;
        let step_count = read_u64(&mut r)?;
        let n = read_u64(&mut r)? as usize;
        let mut state = Vec::with_capacity(n);
        for _ in 0..n {
            let mut flag = [0u8; 1];
            r.read_exact(&mut flag)?;
            if flag[0] == 1 {
                let m = read_array(&mut r)?;
                let v = read_array(&mut r)?;
                state.push(Some((m, v)));
            } else {
                state.push(None);
            }
        }
        let mut adam = Adam::new(config);
        adam.restore(step_count, state);
        Some(adam)
    } else {
        None
    };
    Ok((header, store, optimizer))
}
