use std::path::Path;

use super::adam::{AdamHyper, AdamState};
use super::network::{NetworkConfig, NetworkParams};
use crate::codec::{read_file, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"DGPCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Network parameters with optional optimizer state.
#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub params: NetworkParams<T>,
    pub adam: Option<AdamState<T>>,
}

fn write_tensor(w: &mut ByteWriter, shape: &[usize], data: impl IntoIterator<Item = f64>) {
    w.u32(shape.len() as u32);
    for &d in shape {
        w.u64(d as u64);
    }
    w.f64s(data);
}

fn read_tensor<T: Scalar>(r: &mut ByteReader<'_>, expect: &[usize], what: &str) -> Result<Vec<T>> {
    let ndim = r.u32()? as usize;
    let mut shape = Vec::with_capacity(ndim.min(8));
    for _ in 0..ndim {
        shape.push(r.u64()? as usize);
    }
    if shape != expect {
        return Err(r.corrupt(format!(
            "{what}: stored shape {shape:?}, layout requires {expect:?}"
        )));
    }
    let n: usize = expect.iter().product();
    Ok(r.f64s(n)?.into_iter().map(T::c).collect())
}

/// Serialize parameters (and optimizer state) with the configuration that
/// determines their layout.
pub fn checkpoint_bytes<T: Scalar>(
    params: &NetworkParams<T>,
    adam: Option<&AdamState<T>>,
) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(MAGIC);
    w.u32(CHECKPOINT_VERSION);
    let cfg = serde_json::to_vec(params.config()).expect("config serializes");
    w.block(&cfg);
    let tensors = params.tensors();
    w.u32(tensors.len() as u32);
    for (slot, data) in &tensors {
        write_tensor(&mut w, &slot.shape, data.iter().map(|v| v.as_f64()));
    }
    match adam {
        None => w.u8(0),
        Some(st) => {
            w.u8(1);
            let h = st.hyper;
            w.f64s([h.learning_rate, h.beta1, h.beta2, h.epsilon, h.weight_decay]);
            w.u64(st.step);
            w.u32(st.first_moment.len() as u32);
            for m in st.first_moment.iter().chain(&st.second_moment) {
                write_tensor(&mut w, &[m.len()], m.iter().map(|v| v.as_f64()));
            }
        }
    }
    w.finish()
}

pub fn save_checkpoint<T: Scalar>(
    params: &NetworkParams<T>,
    adam: Option<&AdamState<T>>,
    path: &Path,
) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(params, adam)).map_err(|e| Error::io(path, e))
}

pub fn parse_checkpoint<T: Scalar>(bytes: &[u8], path: &Path) -> Result<Checkpoint<T>> {
    let mut r = ByteReader::new(bytes, path);
    r.expect_magic(MAGIC)?;
    r.expect_version(CHECKPOINT_VERSION)?;
    let cfg_bytes = r.block()?;
    let config: NetworkConfig =
        serde_json::from_slice(cfg_bytes).map_err(|e| r.corrupt(format!("configuration: {e}")))?;
    config
        .validate()
        .map_err(|e| r.corrupt(format!("configuration: {e}")))?;
    let mut params = NetworkParams::<T>::zeros(&config)?;
    let count = r.u32()? as usize;
    {
        let mut slots = params.tensors_mut();
        if count != slots.len() {
            return Err(r.corrupt(format!(
                "{count} tensors stored, configuration has {}",
                slots.len()
            )));
        }
        for (i, (slot, dst)) in slots.iter_mut().enumerate() {
            let v: Vec<T> = read_tensor(&mut r, &slot.shape, &format!("tensor {i}"))?;
            dst.copy_from_slice(&v);
        }
    }
    let adam = match r.u8()? {
        0 => None,
        1 => {
            let h = r.f64s(5)?;
            let hyper = AdamHyper {
                learning_rate: h[0],
                beta1: h[1],
                beta2: h[2],
                epsilon: h[3],
                weight_decay: h[4],
            };
            let step = r.u64()?;
            let n = r.u32()? as usize;
            let lens: Vec<usize> = params.trainable().iter().map(|t| t.len()).collect();
            if n != lens.len() {
                return Err(r.corrupt(format!(
                    "{n} optimizer moments stored, network has {} trainable tensors",
                    lens.len()
                )));
            }
            let mut moments = Vec::with_capacity(2 * n);
            for (i, &len) in lens.iter().chain(&lens).enumerate() {
                moments.push(read_tensor::<T>(&mut r, &[len], &format!("moment {i}"))?);
            }
            let second_moment = moments.split_off(n);
            Some(AdamState {
                step,
                first_moment: moments,
                second_moment,
                hyper,
            })
        }
        b => return Err(r.corrupt(format!("bad optimizer flag {b}"))),
    };
    r.finish()?;
    Ok(Checkpoint { params, adam })
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    parse_checkpoint(&read_file(path)?, path)
}

/// Load and require the stored configuration to equal `expected`.
pub fn load_checkpoint_for<T: Scalar>(
    path: &Path,
    expected: &NetworkConfig,
) -> Result<Checkpoint<T>> {
    let ck = load_checkpoint(path)?;
    if ck.params.config() != expected {
        return Err(Error::ConfigMismatch {
            stored: ck.params.config().describe(),
            expected: expected.describe(),
        });
    }
    Ok(ck)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trained_state(p: &NetworkParams<f64>) -> AdamState<f64> {
        let mut st = AdamState::for_tensors(&p.trainable(), AdamHyper::default());
        st.step = 3;
        for (i, m) in st.first_moment.iter_mut().enumerate() {
            m.iter_mut()
                .enumerate()
                .for_each(|(j, v)| *v = (i * 31 + j) as f64 * 1e-3);
        }
        st
    }

    #[test]
    fn round_trip_is_bitwise() {
        let cfg = NetworkConfig::default();
        let p = NetworkParams::<f64>::init(&cfg, 11).unwrap();
        let st = trained_state(&p);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        save_checkpoint(&p, Some(&st), &path).unwrap();
        let back = load_checkpoint::<f64>(&path).unwrap();
        assert_eq!(back.params, p);
        assert_eq!(back.adam.as_ref(), Some(&st));
        for ((_, a), (_, b)) in back.params.tensors().iter().zip(p.tensors()) {
            assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        save_checkpoint(&p, None, &path).unwrap();
        assert!(load_checkpoint::<f64>(&path).unwrap().adam.is_none());
    }

    #[test]
    fn truncation_and_trailing_bytes_are_corrupt() {
        let p = NetworkParams::<f64>::init(&NetworkConfig::default(), 1).unwrap();
        let bytes = checkpoint_bytes(&p, None);
        let path = Path::new("mem.ckpt");
        for cut in [4, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(
                parse_checkpoint::<f64>(&bytes[..cut], path),
                Err(Error::Corrupt { .. })
            ));
        }
        let mut extra = bytes.clone();
        extra.push(7);
        assert!(matches!(
            parse_checkpoint::<f64>(&extra, path),
            Err(Error::Corrupt { .. })
        ));
        let mut ver = bytes;
        ver[8..12].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            parse_checkpoint::<f64>(&ver, path),
            Err(Error::VersionMismatch {
                found: 2,
                expected: 1,
                ..
            })
        ));
    }

    #[test]
    fn config_mismatch_names_both() {
        let a = NetworkConfig::default();
        let b = NetworkConfig {
            growth_rate: 6,
            ..NetworkConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        save_checkpoint(&NetworkParams::<f64>::init(&a, 1).unwrap(), None, &path).unwrap();
        let err = load_checkpoint_for::<f64>(&path, &b)
            .unwrap_err()
            .to_string();
        assert!(
            err.contains("growth=4") && err.contains("growth=6"),
            "{err}"
        );
    }
}
