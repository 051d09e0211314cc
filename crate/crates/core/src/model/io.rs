//! Binary weight files.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "WFNN"            magic
//! u16               format version
//! u8                kind (1 = MLP, 2 = LSTM)
//! dimension header  MLP:  n_inputs u64, n_hidden u64, n_outputs u64, activation u8
//!                   LSTM: vocab u64, embed u64, hidden u64, n_outputs u64, max_len u64 (0 = none)
//! u32               tensor count
//! per tensor        rows u64, cols u64, rows*cols f64 values
//! ```
//!
//! Tensors appear in the architecture's declared order.

use std::fs;
use std::path::Path;

use super::{Activation, Architecture, LstmSpec, MlpSpec, NetworkState};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"WFNN";
pub const FORMAT_VERSION: u16 = 1;

const KIND_MLP: u8 = 1;
const KIND_LSTM: u8 = 2;

pub fn encode_state(state: &NetworkState) -> Result<Vec<u8>> {
    state.validate()?;
    let mut out = Vec::with_capacity(64 + state.parameter_count() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let put = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u64).to_le_bytes());
    match state.arch {
        Architecture::Mlp(s) => {
            out.push(KIND_MLP);
            put(&mut out, s.n_inputs);
            put(&mut out, s.n_hidden);
            put(&mut out, s.n_outputs);
            out.push(match s.activation {
                Activation::Relu => 0,
                Activation::Tanh => 1,
            });
        }
        Architecture::Lstm(s) => {
            out.push(KIND_LSTM);
            put(&mut out, s.vocab_size);
            put(&mut out, s.embed_dim);
            put(&mut out, s.hidden_dim);
            put(&mut out, s.n_outputs);
            put(&mut out, s.max_len.unwrap_or(0));
        }
    }
    out.extend_from_slice(&(state.tensors.len() as u32).to_le_bytes());
    for t in &state.tensors {
        put(&mut out, t.rows);
        put(&mut out, t.cols);
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("weight file truncated at byte {}", self.pos)))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn dim(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| Error::Format(format!("dimension {v} does not fit in memory")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_state(bytes: &[u8]) -> Result<NetworkState> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(Error::Format("missing WFNN magic".into()));
    }
    let version = cur.u16()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format version {version}")));
    }
    let arch = match cur.u8()? {
        KIND_MLP => {
            let (n_inputs, n_hidden, n_outputs) = (cur.dim()?, cur.dim()?, cur.dim()?);
            let activation = match cur.u8()? {
                0 => Activation::Relu,
                1 => Activation::Tanh,
                other => return Err(Error::Format(format!("unknown activation tag {other}"))),
            };
            Architecture::Mlp(MlpSpec {
                n_inputs,
                n_hidden,
                n_outputs,
                activation,
            })
        }
        KIND_LSTM => {
            let (vocab_size, embed_dim, hidden_dim, n_outputs) = (cur.dim()?, cur.dim()?, cur.dim()?, cur.dim()?);
            let max_len = match cur.dim()? {
                0 => None,
                n => Some(n),
            };
            Architecture::Lstm(LstmSpec {
                vocab_size,
                embed_dim,
                hidden_dim,
                n_outputs,
                max_len,
            })
        }
        other => return Err(Error::Format(format!("unknown network kind {other}"))),
    };
    arch.validate().map_err(|e| Error::Format(e.to_string()))?;
    let mut state = NetworkState::zeros(arch)?;
    let count = cur.u32()? as usize;
    if count != state.tensors.len() {
        return Err(Error::Format(format!(
            "expected {} tensors, header declares {count}",
            state.tensors.len()
        )));
    }
    for t in &mut state.tensors {
        let (rows, cols) = (cur.dim()?, cur.dim()?);
        if rows != t.rows || cols != t.cols {
            return Err(Error::Format(format!(
                "tensor `{}` stored as {rows}x{cols}, expected {}x{}",
                t.name, t.rows, t.cols
            )));
        }
        for v in &mut t.data {
            *v = cur.f64()?;
        }
    }
    if cur.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    state.validate().map_err(|e| Error::Format(e.to_string()))?;
    Ok(state)
}

pub fn save_state(state: &NetworkState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_state(state)?).map_err(|e| Error::file(path, e))
}

pub fn load_state(path: impl AsRef<Path>) -> Result<NetworkState> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    decode_state(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let state = NetworkState::initialize(Architecture::Mlp(MlpSpec::new(2, 3, 2)), 1).unwrap();
        let bytes = encode_state(&state).unwrap();
        assert_eq!(&bytes[..4], b"WFNN");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), FORMAT_VERSION);
        assert_eq!(bytes[6], KIND_MLP);
        assert_eq!(u64::from_le_bytes(bytes[7..15].try_into().unwrap()), 2);
        let header = 4 + 2 + 1 + 24 + 1 + 4;
        let tensor_headers = 4 * 16;
        assert_eq!(bytes.len(), header + tensor_headers + state.parameter_count() * 8);
    }

    #[test]
    fn round_trip_both_kinds() {
        for arch in [
            Architecture::Mlp(MlpSpec::new(4, 5, 3)),
            Architecture::Lstm(LstmSpec {
                max_len: Some(9),
                ..LstmSpec::new(12, 3, 4, 2)
            }),
        ] {
            let state = NetworkState::initialize(arch, 42).unwrap();
            let back = decode_state(&encode_state(&state).unwrap()).unwrap();
            assert_eq!(back, state);
            let json = serde_json::to_string(&state).unwrap();
            assert_eq!(serde_json::from_str::<NetworkState>(&json).unwrap(), state);
        }
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let state = NetworkState::initialize(Architecture::Mlp(MlpSpec::new(2, 2, 2)), 0).unwrap();
        let bytes = encode_state(&state).unwrap();
        assert!(matches!(decode_state(&bytes[..bytes.len() - 3]), Err(Error::Format(_))));
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(matches!(decode_state(&wrong), Err(Error::Format(_))));
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(matches!(decode_state(&longer), Err(Error::Format(_))));
    }
}
