//! `DIPM` model files.
//!
//! Layout (little-endian): magic `DIPM`, `u16` format version, `u32` input
//! channels, `u32` hidden channels, `u32` inner layer count, 4 x `u32` kernel
//! taps, then for every gated layer the complex kernel real parts, imaginary
//! parts and the gate kernel, then the head real and imaginary parts, all as
//! `f64` arrays in `[tap][in][out]` order. A CRC32 of everything before it
//! closes the file.

use std::fs;
use std::path::Path;

use super::net::{Architecture, DipParams, INPUT_CHANNELS};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"DIPM";
pub const FORMAT_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 * 7;

pub fn encode_model(params: &DipParams) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + params.parameter_count() * 8 + 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let arch = params.arch;
    let header = [
        INPUT_CHANNELS,
        arch.hidden_channels,
        arch.inner_layers,
        arch.taps[0],
        arch.taps[1],
        arch.taps[2],
        arch.taps[3],
    ];
    for v in header {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for block in params.slices() {
        for v in block {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

pub fn decode_model(bytes: &[u8]) -> Result<DipParams> {
    if bytes.len() < HEADER_LEN + 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format("not a DIPM model file".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let header: Vec<usize> = body[6..HEADER_LEN]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect();
    if header[0] != INPUT_CHANNELS {
        return Err(Error::Format(format!(
            "model expects {} input channels, this build uses {INPUT_CHANNELS}",
            header[0]
        )));
    }
    let arch = Architecture {
        hidden_channels: header[1],
        inner_layers: header[2],
        taps: [header[3], header[4], header[5], header[6]],
    };
    if arch.hidden_channels > 4096 || arch.inner_layers > 256 || arch.taps.iter().any(|&t| t > 255)
    {
        return Err(Error::Format(format!(
            "implausible model geometry {arch:?}"
        )));
    }
    let mut params = DipParams::zeros(arch)?;
    let expected = HEADER_LEN + params.parameter_count() * 8;
    if body.len() != expected {
        return Err(Error::Format(format!(
            "model payload has {} bytes, geometry needs {expected}",
            body.len()
        )));
    }
    if crc32fast::hash(body) != stored {
        return Err(Error::Format("model checksum mismatch".into()));
    }
    let mut values = body[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    for block in params.slices_mut() {
        for v in block.iter_mut() {
            *v = values.next().expect("length checked");
        }
    }
    Ok(params)
}

pub fn save_model(params: &DipParams, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_model(params))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<DipParams> {
    decode_model(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> DipParams {
        DipParams::init(
            Architecture {
                hidden_channels: 3,
                inner_layers: 2,
                taps: [3, 3, 1, 1],
            },
            17,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut p = params();
        p.head.re[1] = -0.0;
        p.layers[0].gate.values[3] = 1.0e-300;
        let back = decode_model(&encode_model(&p)).unwrap();
        for (a, b) in p.slices().iter().zip(back.slices()) {
            let bits_a: Vec<u64> = a.iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = b.iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
        assert_eq!(back.arch, p.arch);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let bytes = encode_model(&params());
        for cut in [3, HEADER_LEN, bytes.len() - 1, bytes.len() - 9] {
            assert!(decode_model(&bytes[..cut]).is_err(), "cut at {cut}");
        }
    }

    #[test]
    fn version_mismatch_is_explicit() {
        let mut bytes = encode_model(&params());
        bytes[4] = 9;
        assert!(matches!(
            decode_model(&bytes),
            Err(Error::Version { found: 9, .. })
        ));
    }

    #[test]
    fn corrupted_payload_fails_checksum() {
        let mut bytes = encode_model(&params());
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(decode_model(&bytes).is_err());
    }
}
