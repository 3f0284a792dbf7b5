//! Binary checkpoint format.
//!
//! ```text
//! magic      8 bytes  "PEARLKIT"
//! version    u32
//! config     u32 token_dim, char_dim, char_hidden_dim,
//!            num_token_buckets, num_char_buckets,
//!            ngram count, then each n-gram size
//! weights    token_table, char_table, char_projection, char_bias, type_head
//!            each as rows u32, cols u32, rows*cols f32
//! optimizer  u8 presence flag; when 1, per weight: t u64, m block, v block
//! ```
//!
//! All integers and floats are little-endian.

use std::io::{self, Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{EncoderConfig, ModelState, OptimizerState, ParamId};
use crate::error::{Error, Result};
use crate::numkernel::{AdamState, Matrix};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PEARLKIT";
pub const CHECKPOINT_VERSION: u32 = 1;

fn write_matrix<W: Write>(w: &mut W, m: &Matrix) -> io::Result<()> {
    w.write_u32::<LittleEndian>(m.rows() as u32)?;
    w.write_u32::<LittleEndian>(m.cols() as u32)?;
    write_floats(w, m.data())
}

fn write_floats<W: Write>(w: &mut W, xs: &[f32]) -> io::Result<()> {
    let mut buf = Vec::with_capacity(xs.len() * 4);
    for &x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)
}

fn read_floats<R: Read>(r: &mut R, len: usize) -> Result<Vec<f32>> {
    let mut buf = vec![0u8; len * 4];
    r.read_exact(&mut buf).map_err(truncated)?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn truncated(e: io::Error) -> Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        Error::Format("unexpected end of checkpoint".into())
    } else {
        Error::Io(e)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<usize> {
    Ok(r.read_u32::<LittleEndian>().map_err(truncated)? as usize)
}

fn read_matrix<R: Read>(r: &mut R, expected: (usize, usize), name: &str) -> Result<Matrix> {
    let rows = read_u32(r)?;
    let cols = read_u32(r)?;
    if (rows, cols) != expected {
        return Err(Error::Format(format!(
            "{name}: stored shape {rows}x{cols}, config implies {}x{}",
            expected.0, expected.1
        )));
    }
    let data = read_floats(r, rows * cols)?;
    Matrix::from_vec(rows, cols, data).map_err(|e| Error::Format(format!("{name}: {e}")))
}

pub fn write_checkpoint<W: Write>(w: &mut W, model: &ModelState) -> Result<()> {
    model.check_shapes()?;
    let c = &model.config;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
    for v in [
        c.token_dim,
        c.char_dim,
        c.char_hidden_dim,
        c.num_token_buckets,
        c.num_char_buckets,
        c.char_ngram_sizes.len(),
    ] {
        w.write_u32::<LittleEndian>(v as u32)?;
    }
    for &k in &c.char_ngram_sizes {
        w.write_u32::<LittleEndian>(k as u32)?;
    }
    for id in ParamId::ALL {
        write_matrix(w, model.param(id))?;
    }
    match &model.optimizer {
        None => w.write_u8(0)?,
        Some(opt) => {
            w.write_u8(1)?;
            for id in ParamId::ALL {
                let state = &opt.moments[id as usize];
                let (rows, cols) = model.param(id).shape();
                w.write_u64::<LittleEndian>(state.t)?;
                for block in [&state.m, &state.v] {
                    w.write_u32::<LittleEndian>(rows as u32)?;
                    w.write_u32::<LittleEndian>(cols as u32)?;
                    write_floats(w, block)?;
                }
            }
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<ModelState> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad magic bytes".into()));
    }
    let version = r.read_u32::<LittleEndian>().map_err(truncated)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let token_dim = read_u32(r)?;
    let char_dim = read_u32(r)?;
    let char_hidden_dim = read_u32(r)?;
    let num_token_buckets = read_u32(r)?;
    let num_char_buckets = read_u32(r)?;
    let n_sizes = read_u32(r)?;
    if n_sizes > 64 {
        return Err(Error::Format(format!("implausible n-gram size count {n_sizes}")));
    }
    let char_ngram_sizes = (0..n_sizes).map(|_| read_u32(r)).collect::<Result<Vec<_>>>()?;
    let config = EncoderConfig {
        token_dim,
        char_dim,
        char_ngram_sizes,
        num_token_buckets,
        num_char_buckets,
        char_hidden_dim,
    };
    config
        .validate()
        .map_err(|e| Error::Format(format!("stored config: {e}")))?;

    let mut weights = Vec::with_capacity(5);
    for id in ParamId::ALL {
        let shape = ModelState::expected_shape(&config, id);
        weights.push(read_matrix(r, shape, &format!("{id:?}"))?);
    }
    let mut weights = weights.into_iter();
    let mut model = ModelState {
        config,
        token_table: weights.next().unwrap(),
        char_table: weights.next().unwrap(),
        char_projection: weights.next().unwrap(),
        char_bias: weights.next().unwrap(),
        type_head: weights.next().unwrap(),
        optimizer: None,
    };

    let flag = r.read_u8().map_err(truncated)?;
    match flag {
        0 => {}
        1 => {
            let mut opt = OptimizerState::for_model(&model);
            for id in ParamId::ALL {
                let shape = model.param(id).shape();
                let t = r.read_u64::<LittleEndian>().map_err(truncated)?;
                let m = read_matrix(r, shape, "adam m")?;
                let v = read_matrix(r, shape, "adam v")?;
                opt.moments[id as usize] = AdamState {
                    m: m.data().to_vec(),
                    v: v.data().to_vec(),
                    t,
                };
            }
            model.optimizer = Some(opt);
        }
        other => return Err(Error::Format(format!("bad optimizer presence byte {other}"))),
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Ok(model)
}

impl ModelState {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, self)?;
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        read_checkpoint(&mut &bytes[..])
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = io::BufWriter::new(file);
        write_checkpoint(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        read_checkpoint(&mut io::BufReader::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> EncoderConfig {
        EncoderConfig {
            token_dim: 3,
            char_dim: 2,
            char_ngram_sizes: vec![3, 4],
            num_token_buckets: 8,
            num_char_buckets: 8,
            char_hidden_dim: 4,
        }
    }

    #[test]
    fn header_layout() {
        let bytes = ModelState::init(small(), 1).unwrap().to_bytes().unwrap();
        assert_eq!(&bytes[..8], b"PEARLKIT");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 3);
        // header + 5 config ints + count + 2 sizes, then token_table rows/cols
        let off = 12 + 4 * 8;
        assert_eq!(u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()), 8);
        assert_eq!(*bytes.last().unwrap(), 0);
    }

    #[test]
    fn round_trip_with_and_without_optimizer() {
        let mut m = ModelState::init(small(), 2).unwrap();
        let plain = ModelState::from_bytes(&m.to_bytes().unwrap()).unwrap();
        assert_eq!(plain, m);

        let mut opt = OptimizerState::for_model(&m);
        opt.moments[0].t = 7;
        opt.moments[0].m[3] = 0.25;
        opt.moments[4].v[1] = 1e-9;
        m.optimizer = Some(opt);
        let bytes = m.to_bytes().unwrap();
        let back = ModelState::from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = ModelState::init(small(), 3).unwrap().to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(ModelState::from_bytes(&bad), Err(Error::Format(_))));
        assert!(matches!(
            ModelState::from_bytes(&bytes[..bytes.len() - 10]),
            Err(Error::Format(_))
        ));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(ModelState::from_bytes(&extra), Err(Error::Format(_))));
        let mut flag = bytes;
        *flag.last_mut().unwrap() = 9;
        assert!(matches!(ModelState::from_bytes(&flag), Err(Error::Format(_))));
    }
}
