//! Binary checkpoint format:
//!
//! ```text
//! b"EBRDNET1" | u32 LE header length | JSON MlpConfig | u64 LE count | count × f64 LE
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{EnergyNet, MlpConfig, ParamVector};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"EBRDNET1";

pub fn write_checkpoint<W: Write>(net: &EnergyNet, mut w: W) -> Result<()> {
    let header = serde_json::to_vec(net.config()).map_err(|e| Error::Checkpoint(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(&header)?;
    w.write_all(&(net.params().len() as u64).to_le_bytes())?;
    for v in net.params().as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<EnergyNet> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let mut len4 = [0u8; 4];
    r.read_exact(&mut len4)?;
    let mut header = vec![0u8; u32::from_le_bytes(len4) as usize];
    r.read_exact(&mut header)?;
    let config: MlpConfig =
        serde_json::from_slice(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut len8 = [0u8; 8];
    r.read_exact(&mut len8)?;
    let count = u64::from_le_bytes(len8) as usize;
    if count != config.param_count() {
        return Err(Error::Checkpoint(format!(
            "header implies {} parameters, file holds {count}",
            config.param_count()
        )));
    }
    let mut params = Vec::with_capacity(count);
    let mut buf = [0u8; 8];
    for _ in 0..count {
        r.read_exact(&mut buf)?;
        params.push(f64::from_le_bytes(buf));
    }
    EnergyNet::from_params(config, ParamVector(params))
}

/// Writes the checkpoint through a temporary file and an atomic rename.
pub fn save_checkpoint(net: &EnergyNet, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    write_checkpoint(net, &mut bytes)?;
    crate::io::write_atomic(path, &bytes)
}

pub fn load_checkpoint(path: &Path) -> Result<EnergyNet> {
    let file = std::fs::File::open(path)?;
    read_checkpoint(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy_net::Activation;

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = MlpConfig::new(3)
            .with_hidden(&[7, 5])
            .with_activation(Activation::Silu)
            .with_seed(31);
        let mut net = EnergyNet::new(cfg).unwrap();
        let mut p = net.params().clone();
        p.as_mut_slice()[0] = 1.0 / 3.0;
        p.as_mut_slice()[1] = -0.0;
        p.as_mut_slice()[2] = f64::MIN_POSITIVE;
        net.set_params(p).unwrap();

        let mut bytes = Vec::new();
        write_checkpoint(&net, &mut bytes).unwrap();
        let back = read_checkpoint(bytes.as_slice()).unwrap();
        assert_eq!(back.config(), net.config());
        let a: Vec<u64> = net.params().as_slice().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = back.params().as_slice().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_garbage() {
        assert!(read_checkpoint(&b"NOTACKPT...."[..]).is_err());
        let net = EnergyNet::new(MlpConfig::new(1).with_hidden(&[2])).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&net, &mut bytes).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(read_checkpoint(bytes.as_slice()).is_err());
    }
}
