//! Binary tag files and CSV interchange.
//!
//! Layout, little-endian throughout:
//!
//! | offset | size | field                       |
//! |--------|------|-----------------------------|
//! | 0      | 8    | magic `QFCTAGS1`            |
//! | 8      | 4    | resolution in ps (always 1) |
//! | 12     | 8    | record count                |
//! | 20     | 9·n  | records: u64 ps, u8 channel |

use crate::output::{write_atomic, OutputError};
use crate::tags::{Channel, TagStream, TimeTagRecord};
use std::io::{BufRead, Write};
use std::path::Path;
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"QFCTAGS1";
pub const HEADER_LEN: usize = 20;
pub const RECORD_LEN: usize = 9;
pub const RESOLUTION_PS: u32 = 1;

#[derive(Debug, Error)]
pub enum TagFileError {
    #[error("bad magic at offset 0: {found:?}")]
    BadMagic { found: Vec<u8> },
    #[error("file ends inside the header at offset {offset}")]
    TruncatedHeader { offset: usize },
    #[error("unsupported resolution {value} ps at offset 8")]
    UnsupportedResolution { value: u32 },
    #[error("truncated record at offset {offset}: header declares {declared} records, {complete} complete")]
    TruncatedRecord { offset: usize, declared: u64, complete: u64 },
    #[error("{extra} unexpected bytes after the last record at offset {offset}")]
    TrailingBytes { offset: usize, extra: usize },
    #[error("timestamp regression at offset {offset}: {timestamp_ps} ps after {previous_ps} ps")]
    TimestampRegression { offset: usize, timestamp_ps: u64, previous_ps: u64 },
    #[error("unknown channel {channel} at offset {offset}")]
    UnknownChannel { offset: usize, channel: u8 },
    #[error("csv line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error("stream not sorted at record {index}")]
    UnsortedStream { index: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Output(#[from] OutputError),
}

impl TagFileError {
    /// True for failures of the file system rather than of the contents.
    pub fn is_io(&self) -> bool {
        match self {
            TagFileError::Io(_) => true,
            TagFileError::Output(e) => e.is_io(),
            _ => false,
        }
    }
}

/// Serializes a sorted stream.
pub fn encode(tags: &TagStream) -> Result<Vec<u8>, TagFileError> {
    if let Some(index) = tags.first_regression() {
        return Err(TagFileError::UnsortedStream { index });
    }
    let mut buf = Vec::with_capacity(HEADER_LEN + RECORD_LEN * tags.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&RESOLUTION_PS.to_le_bytes());
    buf.extend_from_slice(&(tags.len() as u64).to_le_bytes());
    for r in tags {
        buf.extend_from_slice(&r.timestamp_ps.to_le_bytes());
        buf.push(r.channel as u8);
    }
    Ok(buf)
}

pub fn decode(bytes: &[u8]) -> Result<TagStream, TagFileError> {
    if bytes.len() < MAGIC.len() {
        if !MAGIC.starts_with(bytes) {
            return Err(TagFileError::BadMagic { found: bytes.to_vec() });
        }
        return Err(TagFileError::TruncatedHeader { offset: bytes.len() });
    }
    if &bytes[..8] != MAGIC {
        return Err(TagFileError::BadMagic { found: bytes[..8].to_vec() });
    }
    if bytes.len() < HEADER_LEN {
        return Err(TagFileError::TruncatedHeader { offset: bytes.len() });
    }
    let resolution = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if resolution != RESOLUTION_PS {
        return Err(TagFileError::UnsupportedResolution { value: resolution });
    }
    let declared = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let body = &bytes[HEADER_LEN..];
    let complete = (body.len() / RECORD_LEN) as u64;
    if complete < declared {
        return Err(TagFileError::TruncatedRecord {
            offset: HEADER_LEN + complete as usize * RECORD_LEN,
            declared,
            complete,
        });
    }
    let used = declared as usize * RECORD_LEN;
    if body.len() > used {
        return Err(TagFileError::TrailingBytes {
            offset: HEADER_LEN + used,
            extra: body.len() - used,
        });
    }
    let mut records = Vec::with_capacity(declared as usize);
    let mut previous = 0u64;
    for (i, chunk) in body.chunks_exact(RECORD_LEN).enumerate() {
        let offset = HEADER_LEN + i * RECORD_LEN;
        let timestamp_ps = u64::from_le_bytes(chunk[..8].try_into().unwrap());
        let channel = Channel::from_u8(chunk[8]).ok_or(TagFileError::UnknownChannel {
            offset: offset + 8,
            channel: chunk[8],
        })?;
        if timestamp_ps < previous {
            return Err(TagFileError::TimestampRegression { offset, timestamp_ps, previous_ps: previous });
        }
        previous = timestamp_ps;
        records.push(TimeTagRecord { timestamp_ps, channel });
    }
    Ok(TagStream::new(records))
}

pub fn read_tagfile(path: &Path) -> Result<TagStream, TagFileError> {
    decode(&std::fs::read(path)?)
}

pub fn write_tagfile(path: &Path, tags: &TagStream) -> Result<(), TagFileError> {
    let bytes = encode(tags)?;
    write_atomic(path, |w| w.write_all(&bytes))?;
    Ok(())
}

/// Writes `timestamp_ps,channel` rows under a header line.
pub fn write_csv<W: Write>(mut w: W, tags: &TagStream) -> std::io::Result<()> {
    writeln!(w, "timestamp_ps,channel")?;
    for r in tags {
        writeln!(w, "{},{}", r.timestamp_ps, r.channel as u8)?;
    }
    Ok(())
}

/// Reads `timestamp_ps,channel` rows. A non-numeric first line is taken as
/// a header; blank lines and `#` comments are skipped. Rows need not be
/// sorted; they are sorted stably by timestamp.
pub fn read_csv<R: BufRead>(r: R) -> Result<TagStream, TagFileError> {
    let mut records = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let err = |message: String| TagFileError::Csv { line: i + 1, message };
        let mut fields = text.split(',').map(str::trim);
        let (Some(ts), Some(ch), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(err(format!("expected 2 fields, got `{text}`")));
        };
        let Ok(timestamp_ps) = ts.parse::<u64>() else {
            if i == 0 && records.is_empty() {
                continue;
            }
            return Err(err(format!("bad timestamp `{ts}`")));
        };
        let channel = ch
            .parse::<u8>()
            .ok()
            .and_then(Channel::from_u8)
            .ok_or_else(|| err(format!("bad channel `{ch}`")))?;
        records.push(TimeTagRecord { timestamp_ps, channel });
    }
    records.sort_by_key(|r| (r.timestamp_ps, r.channel));
    Ok(TagStream::new(records))
}
