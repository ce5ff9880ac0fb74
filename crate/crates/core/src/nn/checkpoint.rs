//! Binary checkpoints.
//!
//! Layout: `u32` little-endian header length, a UTF-8 JSON header, then every
//! parameter as little-endian `f32`. MLP parameters are written layer by
//! layer, weights (row-major) before bias. LSTM cells write `w_x`, `w_h`,
//! `bias`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Activation, DenseLayer, LstmCell, Mlp, NnError, Params, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LayerHeader {
    #[serde(rename = "in")]
    pub in_dim: usize,
    #[serde(rename = "out")]
    pub out_dim: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Header {
    Mlp {
        version: u32,
        layers: Vec<LayerHeader>,
    },
    LstmCell {
        version: u32,
        input_dim: usize,
        hidden_dim: usize,
    },
}

fn write_blob<W: Write>(mut w: W, header: &Header, slices: &[&[f64]]) -> Result<()> {
    let json = serde_json::to_vec(header).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    let len = u32::try_from(json.len()).map_err(|_| NnError::Checkpoint("header too large".into()))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(&json)?;
    for s in slices {
        for v in s.iter() {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_header<R: Read>(r: &mut R) -> Result<Header> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_le_bytes(len) as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    serde_json::from_slice(&json).map_err(|e| NnError::Checkpoint(format!("bad header: {e}")))
}

fn read_f32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf)
        .map_err(|e| NnError::Checkpoint(format!("truncated parameter blob: {e}")))?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

fn expect_eof<R: Read>(r: &mut R) -> Result<()> {
    let mut extra = [0u8; 1];
    match r.read(&mut extra)? {
        0 => Ok(()),
        _ => Err(NnError::Checkpoint("trailing bytes after parameter blob".into())),
    }
}

pub fn write_mlp<W: Write>(w: W, mlp: &Mlp) -> Result<()> {
    let header = Header::Mlp {
        version: FORMAT_VERSION,
        layers: mlp
            .layers()
            .iter()
            .map(|l| LayerHeader {
                in_dim: l.in_dim(),
                out_dim: l.out_dim(),
                activation: l.activation(),
            })
            .collect(),
    };
    write_blob(w, &header, &mlp.param_slices())
}

pub fn read_mlp<R: Read>(mut r: R) -> Result<Mlp> {
    let Header::Mlp { version, layers } = read_header(&mut r)? else {
        return Err(NnError::Checkpoint("expected an mlp checkpoint".into()));
    };
    if version != FORMAT_VERSION {
        return Err(NnError::Checkpoint(format!("unsupported version {version}")));
    }
    let mut built = Vec::with_capacity(layers.len());
    for l in &layers {
        let weights = read_f32s(&mut r, l.in_dim * l.out_dim)?;
        let bias = read_f32s(&mut r, l.out_dim)?;
        built.push(DenseLayer::from_parts(l.in_dim, l.out_dim, l.activation, weights, bias)?);
    }
    expect_eof(&mut r)?;
    Mlp::from_layers(built)
}

pub fn write_lstm<W: Write>(w: W, cell: &LstmCell) -> Result<()> {
    let header = Header::LstmCell {
        version: FORMAT_VERSION,
        input_dim: cell.input_dim(),
        hidden_dim: cell.hidden_dim(),
    };
    write_blob(w, &header, &cell.param_slices())
}

pub fn read_lstm<R: Read>(mut r: R) -> Result<LstmCell> {
    let Header::LstmCell {
        version,
        input_dim,
        hidden_dim,
    } = read_header(&mut r)?
    else {
        return Err(NnError::Checkpoint("expected an lstm_cell checkpoint".into()));
    };
    if version != FORMAT_VERSION {
        return Err(NnError::Checkpoint(format!("unsupported version {version}")));
    }
    let w_x = read_f32s(&mut r, 4 * hidden_dim * input_dim)?;
    let w_h = read_f32s(&mut r, 4 * hidden_dim * hidden_dim)?;
    let bias = read_f32s(&mut r, 4 * hidden_dim)?;
    expect_eof(&mut r)?;
    LstmCell::from_parts(input_dim, hidden_dim, w_x, w_h, bias)
}

pub fn save_mlp(path: impl AsRef<Path>, mlp: &Mlp) -> Result<()> {
    write_mlp(BufWriter::new(File::create(path)?), mlp)
}

pub fn load_mlp(path: impl AsRef<Path>) -> Result<Mlp> {
    let path = path.as_ref();
    let f = File::open(path)
        .map_err(|e| NnError::Checkpoint(format!("cannot open {}: {e}", path.display())))?;
    read_mlp(BufReader::new(f))
}

pub fn save_lstm(path: impl AsRef<Path>, cell: &LstmCell) -> Result<()> {
    write_lstm(BufWriter::new(File::create(path)?), cell)
}

pub fn load_lstm(path: impl AsRef<Path>) -> Result<LstmCell> {
    let path = path.as_ref();
    let f = File::open(path)
        .map_err(|e| NnError::Checkpoint(format!("cannot open {}: {e}", path.display())))?;
    read_lstm(BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn roundtrip(mlp: &Mlp) -> Mlp {
        let mut buf = Vec::new();
        write_mlp(&mut buf, mlp).unwrap();
        read_mlp(buf.as_slice()).unwrap()
    }

    #[test]
    fn header_is_json_after_length_prefix() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mlp = Mlp::new(&[3, 2], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let mut buf = Vec::new();
        write_mlp(&mut buf, &mlp).unwrap();
        let len = u32::from_le_bytes(buf[..4].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&buf[4..4 + len]).unwrap();
        assert_eq!(header["kind"], "mlp");
        assert_eq!(header["layers"][0]["in"], 3);
        assert_eq!(header["layers"][0]["activation"], "identity");
        assert_eq!(buf.len(), 4 + len + 4 * (3 * 2 + 2));
        // first weight, little-endian f32
        let w0 = f32::from_le_bytes(buf[4 + len..8 + len].try_into().unwrap());
        assert_eq!(w0, mlp.layers()[0].weights()[0] as f32);
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mlp = Mlp::new(&[3, 2], Activation::Relu, Activation::Identity, &mut rng).unwrap();
        let mut buf = Vec::new();
        write_mlp(&mut buf, &mlp).unwrap();
        buf.pop();
        assert!(read_mlp(buf.as_slice()).is_err());
    }

    #[test]
    fn lstm_roundtrip_matches_rounded_cell() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cell = LstmCell::new(1, 5, &mut rng).unwrap();
        let mut buf = Vec::new();
        write_lstm(&mut buf, &cell).unwrap();
        let back = read_lstm(buf.as_slice()).unwrap();
        let mut rounded = cell.clone();
        rounded.round_to_f32();
        assert_eq!(back, rounded);
    }

    proptest! {
        #[test]
        fn roundtrip_reproduces_rounded_forward_bitwise(
            seed in any::<u64>(),
            dims in proptest::collection::vec(1usize..7, 2..5),
            x_seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mlp = Mlp::new(&dims, Activation::Tanh, Activation::Identity, &mut rng).unwrap();
            let mut xr = ChaCha8Rng::seed_from_u64(x_seed);
            let x: Vec<f64> = (0..dims[0]).map(|_| rand::Rng::random_range(&mut xr, -2.0..2.0)).collect();

            let loaded = roundtrip(&mlp);
            let mut rounded = mlp.clone();
            rounded.round_to_f32();
            let a = loaded.forward(&x).unwrap();
            let b = rounded.forward(&x).unwrap();
            prop_assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            // a second trip is exact
            let again = roundtrip(&loaded);
            prop_assert_eq!(&again, &loaded);
        }
    }
}
