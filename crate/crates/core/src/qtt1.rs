//! QTT1 binary time-tag files.
//!
//! Layout, all integers little-endian:
//!
//! | offset | size | field                          |
//! |--------|------|--------------------------------|
//! | 0      | 4    | magic `QTT1`                   |
//! | 4      | 2    | version (1)                    |
//! | 6      | 2    | channel count                  |
//! | 8      | 8    | duration in ps                 |
//! | 16     | 12n  | records: u64 time, u16 channel, u16 flags |
//!
//! Records are sorted by time within each channel. The writer emits them
//! sorted by time overall.

use std::io::Write;

use crate::error::{Error, Result};
use crate::photonics::{TagStream, TimeTag, NO_PAIR};

pub const MAGIC: [u8; 4] = *b"QTT1";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 16;
pub const RECORD_LEN: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct Qtt1File {
    pub channel_count: u16,
    pub duration_ps: u64,
    pub tags: Vec<TimeTag>,
}

impl Qtt1File {
    /// Merges per-detector streams into one file; the channel count covers
    /// the highest detector id.
    pub fn from_streams(streams: &[&TagStream]) -> Result<Self> {
        let duration_ps = streams.iter().map(|s| s.duration_ps()).max().unwrap_or(0);
        let channel_count = streams.iter().map(|s| s.detector() + 1).max().unwrap_or(0);
        let mut tags: Vec<TimeTag> = streams
            .iter()
            .flat_map(|s| s.tags().iter().copied())
            .collect();
        tags.sort_by_key(|t| (t.time_ps, t.channel));
        Ok(Self {
            channel_count,
            duration_ps,
            tags,
        })
    }

    pub fn channels(&self) -> Vec<u16> {
        let mut ch: Vec<u16> = self.tags.iter().map(|t| t.channel).collect();
        ch.sort_unstable();
        ch.dedup();
        ch
    }

    /// Tags of one channel as a stream.
    pub fn stream(&self, channel: u16) -> Result<TagStream> {
        let tags = self
            .tags
            .iter()
            .filter(|t| t.channel == channel)
            .copied()
            .collect();
        TagStream::new(channel, self.duration_ps, tags)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + RECORD_LEN * self.tags.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.channel_count.to_le_bytes());
        out.extend_from_slice(&self.duration_ps.to_le_bytes());
        for t in &self.tags {
            out.extend_from_slice(&t.time_ps.to_le_bytes());
            out.extend_from_slice(&t.channel.to_le_bytes());
            out.extend_from_slice(&t.flags.to_le_bytes());
        }
        out
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let err = |offset: usize, message: String| Error::Parse {
            offset: offset as u64,
            message,
        };
        if bytes.len() < 4 {
            return Err(err(
                0,
                format!("file is {} bytes, too short for the magic", bytes.len()),
            ));
        }
        if bytes[..4] != MAGIC {
            return Err(err(
                0,
                format!("bad magic {:02x?}, expected \"QTT1\"", &bytes[..4]),
            ));
        }
        if bytes.len() < HEADER_LEN {
            return Err(err(
                bytes.len(),
                format!("truncated header: {} of {HEADER_LEN} bytes", bytes.len()),
            ));
        }
        let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
        let u64_at =
            |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8-byte slice"));
        let version = u16_at(4);
        if version != VERSION {
            return Err(err(4, format!("unsupported version {version}")));
        }
        let channel_count = u16_at(6);
        let duration_ps = u64_at(8);
        let body = bytes.len() - HEADER_LEN;
        if body % RECORD_LEN != 0 {
            let start = HEADER_LEN + body / RECORD_LEN * RECORD_LEN;
            return Err(err(
                start,
                format!(
                    "truncated record: {} of {RECORD_LEN} bytes",
                    body % RECORD_LEN
                ),
            ));
        }
        let n = body / RECORD_LEN;
        let mut tags = Vec::with_capacity(n);
        let mut last = vec![0u64; channel_count as usize];
        for i in 0..n {
            let o = HEADER_LEN + i * RECORD_LEN;
            let time_ps = u64_at(o);
            let channel = u16_at(o + 8);
            let flags = u16_at(o + 10);
            if channel >= channel_count {
                return Err(err(
                    o + 8,
                    format!("channel {channel} outside declared count {channel_count}"),
                ));
            }
            if time_ps >= duration_ps {
                return Err(err(
                    o,
                    format!("time {time_ps} ps not below duration {duration_ps} ps"),
                ));
            }
            if time_ps < last[channel as usize] {
                return Err(err(o, format!("channel {channel} out of time order")));
            }
            last[channel as usize] = time_ps;
            tags.push(TimeTag {
                time_ps,
                channel,
                flags,
                pair: NO_PAIR,
            });
        }
        Ok(Self {
            channel_count,
            duration_ps,
            tags,
        })
    }

    pub fn read(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read(path)?)
    }
}
