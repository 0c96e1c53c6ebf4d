//! Little-endian binary containers.
//!
//! Latents: magic `MLVLAT01`, `u32` frames, `u32` channels, then
//! `frames × channels` `f64` values in row-major order.

use std::io::{self, Read, Write};

use crate::error::MlvError;
use crate::scalar::Scalar;
use crate::tensor::{LatentSequence, Matrix};

pub const LATENT_MAGIC: &[u8; 8] = b"MLVLAT01";

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("{0}")]
    Invalid(#[from] MlvError),
    #[error("trailing bytes after payload")]
    TrailingBytes,
}

pub(crate) fn read_magic(r: &mut impl Read, expected: &[u8; 8]) -> Result<(), FormatError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != expected {
        return Err(FormatError::BadMagic {
            expected: String::from_utf8_lossy(expected).into_owned(),
            found: String::from_utf8_lossy(&magic).into_owned(),
        });
    }
    Ok(())
}

pub(crate) fn read_u32(r: &mut impl Read) -> Result<u32, FormatError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

pub(crate) fn read_f64s(r: &mut impl Read, count: usize) -> Result<Vec<f64>, FormatError> {
    let mut bytes = vec![0u8; count * 8];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

pub(crate) fn write_f64s<S: Scalar>(w: &mut impl Write, values: &[S]) -> io::Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.as_f64().to_le_bytes());
    }
    w.write_all(&bytes)
}

pub(crate) fn expect_eof(r: &mut impl Read) -> Result<(), FormatError> {
    let mut probe = [0u8; 1];
    match r.read(&mut probe)? {
        0 => Ok(()),
        _ => Err(FormatError::TrailingBytes),
    }
}

fn dim_u32(n: usize) -> io::Result<u32> {
    u32::try_from(n)
        .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "dimension exceeds u32"))
}

pub(crate) fn write_dims(w: &mut impl Write, dims: &[usize]) -> io::Result<()> {
    for &d in dims {
        w.write_all(&dim_u32(d)?.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_latent<S: Scalar>(w: &mut impl Write, z: &LatentSequence<S>) -> io::Result<()> {
    w.write_all(LATENT_MAGIC)?;
    write_dims(w, &[z.frames(), z.channels()])?;
    write_f64s(w, z.as_slice())
}

pub fn read_latent<S: Scalar>(r: &mut impl Read) -> Result<LatentSequence<S>, FormatError> {
    read_magic(r, LATENT_MAGIC)?;
    let frames = read_u32(r)? as usize;
    let channels = read_u32(r)? as usize;
    let values = read_f64s(r, frames * channels)?;
    expect_eof(r)?;
    Ok(LatentSequence::new(
        frames,
        channels,
        values.into_iter().map(S::lit).collect(),
    )?)
}

pub fn latent_to_bytes<S: Scalar>(z: &LatentSequence<S>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + z.as_slice().len() * 8);
    write_latent(&mut out, z).expect("writing to Vec cannot fail");
    out
}

pub(crate) fn read_matrix<S: Scalar>(
    r: &mut impl Read,
    rows: usize,
    cols: usize,
) -> Result<Matrix<S>, FormatError> {
    let values = read_f64s(r, rows * cols)?;
    Ok(Matrix::new(
        rows,
        cols,
        values.into_iter().map(S::lit).collect(),
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let z = LatentSequence::<f64>::new(2, 1, vec![1.5, -2.0]).unwrap();
        let bytes = latent_to_bytes(&z);
        assert_eq!(&bytes[..8], b"MLVLAT01");
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &1u32.to_le_bytes());
        assert_eq!(&bytes[16..24], &1.5f64.to_le_bytes());
        assert_eq!(bytes.len(), 16 + 16);
    }

    #[test]
    fn bad_magic_rejected() {
        let mut bytes = latent_to_bytes(&LatentSequence::<f64>::zeros(1, 1).unwrap());
        bytes[0] = b'X';
        assert!(matches!(
            read_latent::<f64>(&mut bytes.as_slice()),
            Err(FormatError::BadMagic { .. })
        ));
    }

    #[test]
    fn truncated_and_trailing() {
        let bytes = latent_to_bytes(&LatentSequence::<f64>::zeros(2, 2).unwrap());
        assert!(matches!(
            read_latent::<f64>(&mut &bytes[..bytes.len() - 1]),
            Err(FormatError::Io(_))
        ));
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(matches!(
            read_latent::<f64>(&mut longer.as_slice()),
            Err(FormatError::TrailingBytes)
        ));
    }

    proptest! {
        #[test]
        fn latent_round_trip(frames in 1usize..6, channels in 1usize..5, seed in any::<u64>()) {
            let vals = crate::rng::SeedSpec::new(seed).normals::<f64>(crate::rng::Purpose::Fixture, 0, frames * channels);
            let z = LatentSequence::new(frames, channels, vals).unwrap();
            let back: LatentSequence<f64> = read_latent(&mut latent_to_bytes(&z).as_slice()).unwrap();
            prop_assert_eq!(back, z);
        }
    }
}
