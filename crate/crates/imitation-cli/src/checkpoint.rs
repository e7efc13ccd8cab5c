//! Binary model checkpoints: layer dimensions plus raw weight bits,
//! round-trip exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use imitation_core::linalg::Matrix;
use imitation_core::net::{DenseLayer, Mlp};

use crate::error::{CliError, Result};

const MAGIC: &[u8; 8] = b"IMNET\0\0\x01";

/// Writes the network to `path`. Little-endian `f64` bit patterns, so the
/// reload is exact.
pub fn save_mlp(path: &Path, net: &Mlp) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&(net.layers().len() as u32).to_le_bytes())?;
    for layer in net.layers() {
        out.write_all(&(layer.out_dim() as u32).to_le_bytes())?;
        out.write_all(&(layer.in_dim() as u32).to_le_bytes())?;
        for &w in layer.weights.data() {
            out.write_all(&w.to_le_bytes())?;
        }
        for &b in &layer.bias {
            out.write_all(&b.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32(reader: &mut impl Read, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    reader
        .read_exact(&mut buf)
        .map_err(|e| CliError::data(format!("checkpoint: {what}: {e}")))?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f64s(reader: &mut impl Read, count: usize, what: &str) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; count * 8];
    reader
        .read_exact(&mut bytes)
        .map_err(|e| CliError::data(format!("checkpoint: {what}: {e}")))?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
        .collect())
}

/// Reads a network written by [`save_mlp`].
pub fn load_mlp(path: &Path) -> Result<Mlp> {
    let mut reader = BufReader::new(
        File::open(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?,
    );
    let mut magic = [0u8; 8];
    reader
        .read_exact(&mut magic)
        .map_err(|e| CliError::data(format!("checkpoint header: {e}")))?;
    if &magic != MAGIC {
        return Err(CliError::data(format!(
            "{}: not an imitation checkpoint (bad magic)",
            path.display()
        )));
    }
    let layer_count = read_u32(&mut reader, "layer count")? as usize;
    let mut layers = Vec::with_capacity(layer_count);
    for l in 0..layer_count {
        let out_dim = read_u32(&mut reader, "out dim")? as usize;
        let in_dim = read_u32(&mut reader, "in dim")? as usize;
        let wdata = read_f64s(&mut reader, out_dim * in_dim, "weights")?;
        let bias = read_f64s(&mut reader, out_dim, "bias")?;
        let weights = Matrix::from_vec(out_dim, in_dim, wdata)
            .map_err(|e| CliError::data(format!("checkpoint layer {l}: {e}")))?;
        layers.push(DenseLayer { weights, bias });
    }
    Mlp::from_layers(layers).map_err(|e| CliError::data(format!("checkpoint: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let net = Mlp::init(&[7, 5, 3], 99).unwrap();
        save_mlp(&path, &net).unwrap();
        let loaded = load_mlp(&path).unwrap();
        assert_eq!(net, loaded);
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("junk.bin");
        std::fs::write(&path, b"definitely not a checkpoint").unwrap();
        assert!(load_mlp(&path).is_err());
    }
}
