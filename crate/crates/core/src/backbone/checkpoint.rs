//! Binary checkpoint: magic `MLLB1`, one kind byte, seven little-endian `u64`
//! fields (`input_dim, width, blocks, embed_dim, grid_side, kernel,
//! param_count`), then `param_count` little-endian `f64` parameters in layout
//! order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{BackboneKind, EmbeddingNetwork, NetworkConfig};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"MLLB1";

pub fn write_checkpoint<W: Write>(net: &EmbeddingNetwork, mut w: W) -> Result<()> {
    let cfg = net.config();
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&[cfg.kind.code()])?;
    for v in [
        cfg.input_dim,
        cfg.width,
        cfg.blocks,
        cfg.embed_dim,
        cfg.grid_side,
        cfg.kernel,
        net.params().len(),
    ] {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    for p in net.params() {
        w.write_all(&p.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<EmbeddingNetwork> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("truncated header".into()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let mut kind = [0u8; 1];
    r.read_exact(&mut kind)
        .map_err(|_| Error::Checkpoint("truncated header".into()))?;
    let kind = BackboneKind::from_code(kind[0])
        .ok_or_else(|| Error::Checkpoint(format!("unknown backbone code {}", kind[0])))?;
    let mut fields = [0usize; 7];
    let mut buf = [0u8; 8];
    for f in &mut fields {
        r.read_exact(&mut buf)
            .map_err(|_| Error::Checkpoint("truncated header".into()))?;
        *f = usize::try_from(u64::from_le_bytes(buf))
            .map_err(|_| Error::Checkpoint("size field overflows usize".into()))?;
    }
    let [input_dim, width, blocks, embed_dim, grid_side, kernel, count] = fields;
    let config = NetworkConfig {
        kind,
        input_dim,
        width,
        blocks,
        embed_dim,
        grid_side,
        kernel,
    };
    config.validate()?;
    if count != config.param_count() {
        return Err(Error::Checkpoint(format!(
            "header declares {count} parameters, layout needs {}",
            config.param_count()
        )));
    }
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut buf)
            .map_err(|_| Error::Checkpoint("truncated parameter array".into()))?;
        params.push(f64::from_le_bytes(buf));
    }
    if r.read(&mut buf)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after parameters".into()));
    }
    EmbeddingNetwork::from_params(config, params)
}

pub fn save_checkpoint(net: &EmbeddingNetwork, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(net, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<EmbeddingNetwork> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
