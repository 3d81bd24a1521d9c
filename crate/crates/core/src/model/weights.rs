//! Binary weight container.
//!
//! Layout, all integers `u32` little-endian: magic `ENGG`, version, the
//! network config (`input_dim hidden classes n_fc n_lstm batch_size seq_len`,
//! then `dropout_p` as `f32`), the tensor count, and per tensor its name
//! length, UTF-8 name, rank, dims and row-major `f32` data.

use std::io::{Read, Write};

use ndarray::ArrayD;

use super::params::{NetConfig, NetParams};
use crate::error::{Error, Result};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"ENGG";
pub const WEIGHTS_VERSION: u32 = 1;

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::WeightFormat(msg.into())
}

fn put_u32<W: Write>(w: &mut W, v: usize) -> std::io::Result<()> {
    let v = u32::try_from(v).map_err(|_| std::io::Error::other("value exceeds u32"))?;
    w.write_all(&v.to_le_bytes())
}

pub fn write_weights<W: Write>(params: &NetParams, mut w: W) -> Result<()> {
    let io = |e: std::io::Error| fmt_err(e.to_string());
    let c = &params.config;
    w.write_all(WEIGHTS_MAGIC).map_err(io)?;
    w.write_all(&WEIGHTS_VERSION.to_le_bytes()).map_err(io)?;
    for v in [c.input_dim, c.hidden, c.classes, c.n_fc, c.n_lstm, c.batch_size, c.seq_len] {
        put_u32(&mut w, v).map_err(io)?;
    }
    w.write_all(&(c.dropout_p as f32).to_le_bytes()).map_err(io)?;
    let tensors = params.tensors();
    put_u32(&mut w, tensors.len()).map_err(io)?;
    for (name, _, t) in &tensors {
        put_u32(&mut w, name.len()).map_err(io)?;
        w.write_all(name.as_bytes()).map_err(io)?;
        put_u32(&mut w, t.ndim()).map_err(io)?;
        for &d in t.shape() {
            put_u32(&mut w, d).map_err(io)?;
        }
        let mut buf = Vec::with_capacity(4 * t.len());
        for &v in t.iter() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf).map_err(io)?;
    }
    w.flush().map_err(io)
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| fmt_err("unexpected end of file"))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.bytes(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn f32(&mut self) -> Result<f32> {
        let b = self.bytes(4)?;
        Ok(f32::from_le_bytes(b.try_into().expect("4 bytes")))
    }
}

pub fn read_weights<R: Read>(r: R) -> Result<NetParams> {
    let mut r = Reader { inner: r };
    if r.bytes(4)? != WEIGHTS_MAGIC {
        return Err(fmt_err("bad magic"));
    }
    let version = r.u32()? as u32;
    if version != WEIGHTS_VERSION {
        return Err(fmt_err(format!("unsupported version {version}")));
    }
    let config = NetConfig {
        input_dim: r.u32()?,
        hidden: r.u32()?,
        classes: r.u32()?,
        n_fc: r.u32()?,
        n_lstm: r.u32()?,
        batch_size: r.u32()?,
        seq_len: r.u32()?,
        dropout_p: r.f32()? as f64,
    };
    config.validate()?;
    let count = r.u32()?;
    let mut stored = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.u32()?;
        let name = String::from_utf8(r.bytes(len)?).map_err(|_| fmt_err("tensor name is not UTF-8"))?;
        let rank = r.u32()?;
        if rank > 4 {
            return Err(fmt_err(format!("{name}: rank {rank}")));
        }
        let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let data = (0..n).map(|_| r.f32().map(f64::from)).collect::<Result<Vec<_>>>()?;
        stored.push((name, ArrayD::from_shape_vec(dims, data).expect("product of dims")));
    }

    let mut params = NetParams::zeros(&config)?;
    if stored.iter().any(|(n, _)| n.starts_with("head.")) {
        params.head = Some(super::params::Dense::zeros(params.fc_output_dim(), config.classes));
    }
    let names: Vec<String> = params.tensors().into_iter().map(|t| t.0).collect();
    if names.len() != stored.len() {
        return Err(fmt_err(format!(
            "expected {} tensors for this config, found {}",
            names.len(),
            stored.len()
        )));
    }
    for ((name, (_, mut dst)), (sname, src)) in names.iter().zip(params.tensors_mut()).zip(stored) {
        if *name != sname {
            return Err(fmt_err(format!("expected tensor {name}, found {sname}")));
        }
        if dst.shape() != src.shape() {
            return Err(fmt_err(format!(
                "{name}: shape {:?}, expected {:?}",
                src.shape(),
                dst.shape()
            )));
        }
        dst.assign(&src);
    }
    if !params.is_finite() {
        return Err(fmt_err("non-finite weights"));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params() -> NetParams {
        let cfg = NetConfig {
            hidden: 4,
            n_lstm: 2,
            ..NetConfig::default()
        };
        NetParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap()
    }

    #[test]
    fn round_trip_within_f32() {
        let p = params();
        let mut buf = Vec::new();
        write_weights(&p, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"ENGG");
        let q = read_weights(&buf[..]).unwrap();
        assert_eq!(q.config, p.config);
        for ((_, _, a), (_, _, b)) in p.tensors().iter().zip(q.tensors().iter()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(*y, *x as f32 as f64);
            }
        }
    }

    #[test]
    fn rejects_corruption() {
        let mut buf = Vec::new();
        write_weights(&params(), &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_weights(&bad[..]), Err(Error::WeightFormat(_))));
        assert!(read_weights(&buf[..buf.len() - 3]).is_err());
        let mut bad = buf.clone();
        bad[4] = 7;
        assert!(read_weights(&bad[..]).is_err());
    }
}
