//! Little-endian helpers shared by the memory wire formats.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("buffer of {len} bytes is not a multiple of the {entry}-byte entry size")]
    Length { len: usize, entry: usize },
    #[error("cluster index {index} outside [0, {limit})")]
    IndexOutOfRange { index: i64, limit: u64 },
    #[error("cluster index {0} appears more than once")]
    DuplicateIndex(i32),
    #[error("entry {entry} carries a non-finite or negative value")]
    InvalidValue { entry: usize },
}

#[inline]
pub(crate) fn put_f32(out: &mut Vec<u8>, v: f32) {
    out.extend_from_slice(&v.to_le_bytes());
}

#[inline]
pub(crate) fn get_f32(chunk: &[u8], at: usize) -> f32 {
    f32::from_le_bytes(chunk[at..at + 4].try_into().expect("4-byte slice"))
}

#[inline]
pub(crate) fn get_i32(chunk: &[u8], at: usize) -> i32 {
    i32::from_le_bytes(chunk[at..at + 4].try_into().expect("4-byte slice"))
}

pub(crate) fn check_len(bytes: &[u8], entry: usize) -> Result<(), WireError> {
    if !bytes.len().is_multiple_of(entry) {
        return Err(WireError::Length { len: bytes.len(), entry });
    }
    Ok(())
}
