//! Binary window cache, little-endian:
//!
//! ```text
//! b"CGWIN001"
//! u32 window_len | u32 channels | u64 count
//! f64 x channels means | f64 x channels stddevs
//! count x { i64 end_timestamp | f64 time_to_leak | u8 is_leaking | f32 x (window_len*channels) }
//! ```

use super::NormStats;
use crate::model::{LabeledWindow, CHANNELS, WINDOW_LEN};
use std::io::{self, Read, Write};
use thiserror::Error;

pub const CACHE_MAGIC: &[u8; 8] = b"CGWIN001";

#[derive(Debug, Error)]
pub enum CacheError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a window cache (bad magic)")]
    Magic,
    #[error("cache shape {window_len}x{channels} does not match {WINDOW_LEN}x{CHANNELS}")]
    Shape { window_len: u32, channels: u32 },
    #[error("window {0} has {1} features")]
    Features(usize, usize),
}

pub fn write_cache<W: Write>(
    mut out: W,
    stats: &NormStats,
    windows: &[LabeledWindow],
) -> Result<(), CacheError> {
    out.write_all(CACHE_MAGIC)?;
    out.write_all(&(WINDOW_LEN as u32).to_le_bytes())?;
    out.write_all(&(CHANNELS as u32).to_le_bytes())?;
    out.write_all(&(windows.len() as u64).to_le_bytes())?;
    for v in stats.mean.iter().chain(&stats.stddev) {
        out.write_all(&v.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(17 + 4 * WINDOW_LEN * CHANNELS);
    for (i, w) in windows.iter().enumerate() {
        if !w.has_shape() {
            return Err(CacheError::Features(i, w.features.len()));
        }
        buf.clear();
        buf.extend_from_slice(&w.end_timestamp.to_le_bytes());
        buf.extend_from_slice(&w.time_to_leak.to_le_bytes());
        buf.push(u8::from(w.is_leaking));
        for f in &w.features {
            buf.extend_from_slice(&f.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    out.flush()?;
    Ok(())
}

fn take<const N: usize>(input: &mut impl Read) -> io::Result<[u8; N]> {
    let mut b = [0u8; N];
    input.read_exact(&mut b)?;
    Ok(b)
}

pub fn read_cache<R: Read>(mut input: R) -> Result<(NormStats, Vec<LabeledWindow>), CacheError> {
    if &take::<8>(&mut input)? != CACHE_MAGIC {
        return Err(CacheError::Magic);
    }
    let window_len = u32::from_le_bytes(take(&mut input)?);
    let channels = u32::from_le_bytes(take(&mut input)?);
    if window_len as usize != WINDOW_LEN || channels as usize != CHANNELS {
        return Err(CacheError::Shape {
            window_len,
            channels,
        });
    }
    let count = u64::from_le_bytes(take(&mut input)?) as usize;
    let mut stats = NormStats {
        mean: [0.0; CHANNELS],
        stddev: [0.0; CHANNELS],
    };
    for v in stats.mean.iter_mut().chain(stats.stddev.iter_mut()) {
        *v = f64::from_le_bytes(take(&mut input)?);
    }
    let mut windows = Vec::with_capacity(count.min(1 << 20));
    let mut raw = vec![0u8; 4 * WINDOW_LEN * CHANNELS];
    for _ in 0..count {
        let end_timestamp = i64::from_le_bytes(take(&mut input)?);
        let time_to_leak = f64::from_le_bytes(take(&mut input)?);
        let is_leaking = take::<1>(&mut input)?[0] != 0;
        input.read_exact(&mut raw)?;
        let features = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        windows.push(LabeledWindow {
            end_timestamp,
            features,
            time_to_leak,
            is_leaking,
        });
    }
    Ok((stats, windows))
}
