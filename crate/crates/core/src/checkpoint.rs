//! Flat binary checkpoints of a parameter set.
//!
//! Layout, after a one-line ASCII header `graddrop-checkpoint v1\n`:
//! for each parameter, in registration order:
//!
//! ```text
//! name_len:  u32 LE
//! name:      UTF-8 bytes
//! ndim:      u32 LE
//! dims:      ndim × u32 LE
//! values:    product(dims) × f64 LE, row-major
//! ```
//!
//! Loading matches parameters by name into an existing set and insists the
//! file and the set agree exactly on names and shapes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::ParamSet;

const HEADER: &[u8] = b"graddrop-checkpoint v1\n";

pub fn save(params: &ParamSet, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path, e);
    w.write_all(HEADER).map_err(io_err)?;
    for p in params.iter() {
        let name = p.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes()).map_err(io_err)?;
        w.write_all(name).map_err(io_err)?;
        let shape = p.tensor.shape();
        w.write_all(&(shape.len() as u32).to_le_bytes()).map_err(io_err)?;
        for d in &shape {
            w.write_all(&(*d as u32).to_le_bytes()).map_err(io_err)?;
        }
        for v in p.tensor.data().iter() {
            w.write_all(&v.to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

/// Load values into an existing parameter set. Every parameter in the file
/// must exist in the set with the same shape, and vice versa.
pub fn load_into(params: &ParamSet, path: &Path) -> Result<()> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let io_err = |e| Error::io(path, e);

    let mut header = vec![0u8; HEADER.len()];
    r.read_exact(&mut header).map_err(io_err)?;
    if header != HEADER {
        return Err(Error::Input(format!(
            "{} is not a v1 checkpoint",
            path.display()
        )));
    }

    let mut seen = 0usize;
    loop {
        let mut len4 = [0u8; 4];
        match r.read_exact(&mut len4) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(Error::io(path, e)),
        }
        let name_len = u32::from_le_bytes(len4) as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes).map_err(io_err)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Input("checkpoint name is not UTF-8".into()))?;

        r.read_exact(&mut len4).map_err(io_err)?;
        let ndim = u32::from_le_bytes(len4) as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            r.read_exact(&mut len4).map_err(io_err)?;
            shape.push(u32::from_le_bytes(len4) as usize);
        }
        let count: usize = shape.iter().product();
        let mut values = vec![0.0f64; count];
        let mut buf8 = [0u8; 8];
        for v in &mut values {
            r.read_exact(&mut buf8).map_err(io_err)?;
            *v = f64::from_le_bytes(buf8);
        }

        let param = params.by_name(&name).ok_or_else(|| {
            Error::Input(format!("checkpoint parameter {name} not in the model"))
        })?;
        if param.tensor.shape() != shape {
            return Err(Error::Input(format!(
                "checkpoint shape {:?} vs model {:?} for {name}",
                shape,
                param.tensor.shape()
            )));
        }
        param.tensor.set_data(&values)?;
        seen += 1;
    }
    if seen != params.len() {
        return Err(Error::Input(format!(
            "checkpoint holds {seen} parameters, model has {}",
            params.len()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Model, ModelConfig};

    #[test]
    fn roundtrip_restores_every_value() {
        let cfg = ModelConfig {
            embed_dim: 8,
            attn_dim: 4,
            heads: 2,
            head_dim: 4,
            layers: 2,
            vocab: 10,
            max_len: 5,
            classes: 2,
            ff_hidden: 0,
        };
        let a = Model::new(&cfg, 1).unwrap();
        let b = Model::new(&cfg, 2).unwrap();
        let dir = std::env::temp_dir().join("graddrop-ckpt-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.ckpt");
        save(a.params(), &path).unwrap();
        load_into(b.params(), &path).unwrap();
        for (pa, pb) in a.params().iter().zip(b.params().iter()) {
            assert_eq!(pa.tensor.data_vec(), pb.tensor.data_vec(), "{}", pa.name);
        }
        let out_a = a.forward_classify(&[1, 2, 3]).unwrap().data_vec();
        let out_b = b.forward_classify(&[1, 2, 3]).unwrap().data_vec();
        assert_eq!(out_a, out_b);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn wrong_header_rejected() {
        let dir = std::env::temp_dir().join("graddrop-ckpt-hdr");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bogus.ckpt");
        std::fs::write(&path, b"not a checkpoint at all\n").unwrap();
        let cfg = ModelConfig::default();
        let model = Model::new(&cfg, 1).unwrap();
        assert!(load_into(model.params(), &path).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }
}
