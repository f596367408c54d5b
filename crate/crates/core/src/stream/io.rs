//! Stream serialization.
//!
//! CSV: header `timestamp_ns,channel,truth_tag`, tags spelled `signal`,
//! `multiphoton` or `background`.
//!
//! Binary, all integers little-endian:
//!
//! | bytes | content                          |
//! |-------|----------------------------------|
//! | 4     | magic `QDTS`                     |
//! | 2     | format version (1)               |
//! | 2     | channel count                    |
//! | 8     | repetition period, ps (u64)      |
//! | 8     | record count (u64)               |
//! | 10·n  | records: u64 timestamp ps, u8 channel, u8 tag |

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{Event, EventStream, StreamError, TruthTag};

const MAGIC: &[u8; 4] = b"QDTS";
const VERSION: u16 = 1;

#[derive(Serialize, Deserialize)]
struct CsvRow {
    timestamp_ns: f64,
    channel: u8,
    truth_tag: TruthTag,
}

fn format_err(e: impl std::fmt::Display) -> StreamError {
    StreamError::Format(e.to_string())
}

impl EventStream {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), StreamError> {
        let mut wr = csv::Writer::from_writer(w);
        for e in &self.events {
            wr.serialize(CsvRow { timestamp_ns: e.timestamp_ns, channel: e.channel, truth_tag: e.tag })
                .map_err(format_err)?;
        }
        wr.flush().map_err(format_err)
    }

    /// The CSV carries no header metadata, so the repetition period and
    /// channel count are supplied by the caller.
    pub fn read_csv<R: Read>(r: R, channels: u8, rep_period_ns: f64) -> Result<Self, StreamError> {
        let mut rd = csv::Reader::from_reader(r);
        let mut events = Vec::new();
        for (i, rec) in rd.deserialize::<CsvRow>().enumerate() {
            let row = rec.map_err(|e| StreamError::Format(format!("line {}: {e}", i + 2)))?;
            if row.channel >= channels {
                return Err(StreamError::Format(format!("line {}: channel {} out of range", i + 2, row.channel)));
            }
            events.push(Event { timestamp_ns: row.timestamp_ns, channel: row.channel, tag: row.truth_tag });
        }
        let s = Self { events, channels, rep_period_ns };
        if !s.is_sorted() {
            return Err(StreamError::Format("timestamps are not in order".into()));
        }
        Ok(s)
    }

    /// Timestamps are rounded to whole picoseconds.
    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.channels as u16).to_le_bytes())?;
        w.write_all(&to_ps(self.rep_period_ns).to_le_bytes())?;
        w.write_all(&(self.events.len() as u64).to_le_bytes())?;
        for e in &self.events {
            w.write_all(&to_ps(e.timestamp_ns).to_le_bytes())?;
            w.write_all(&[e.channel, e.tag.code()])?;
        }
        w.flush()
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self, StreamError> {
        let mut header = [0u8; 24];
        r.read_exact(&mut header).map_err(|e| StreamError::Format(format!("header: {e}")))?;
        if &header[0..4] != MAGIC {
            return Err(StreamError::Format("bad magic".into()));
        }
        let version = u16::from_le_bytes([header[4], header[5]]);
        if version != VERSION {
            return Err(StreamError::Format(format!("unsupported version {version}")));
        }
        let channels = u16::from_le_bytes([header[6], header[7]]);
        let channels = u8::try_from(channels).map_err(|_| StreamError::Format(format!("{channels} channels")))?;
        let period_ps = u64::from_le_bytes(header[8..16].try_into().expect("8 bytes"));
        let n = u64::from_le_bytes(header[16..24].try_into().expect("8 bytes"));
        let mut events = Vec::with_capacity(n.min(1 << 24) as usize);
        let mut rec = [0u8; 10];
        for i in 0..n {
            r.read_exact(&mut rec).map_err(|e| StreamError::Format(format!("record {i}: {e}")))?;
            let ps = u64::from_le_bytes(rec[0..8].try_into().expect("8 bytes"));
            let tag = TruthTag::from_code(rec[9])
                .ok_or_else(|| StreamError::Format(format!("record {i}: unknown tag {}", rec[9])))?;
            if rec[8] >= channels {
                return Err(StreamError::Format(format!("record {i}: channel {} out of range", rec[8])));
            }
            events.push(Event { timestamp_ns: ps as f64 * 1e-3, channel: rec[8], tag });
        }
        let mut extra = [0u8; 1];
        if r.read(&mut extra).map_err(format_err)? != 0 {
            return Err(StreamError::Format("trailing bytes after last record".into()));
        }
        let s = Self { events, channels, rep_period_ns: period_ps as f64 * 1e-3 };
        if !s.is_sorted() {
            return Err(StreamError::Format("timestamps are not in order".into()));
        }
        Ok(s)
    }
}

fn to_ps(ns: f64) -> u64 {
    (ns * 1e3).round() as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::{simulate_stream, DetectorConfig, SourceConfig};

    fn sample() -> EventStream {
        let source = SourceConfig { multiphoton_prob: 0.1, ..Default::default() };
        let dets = vec![DetectorConfig { dark_count_rate: 1e5, ..Default::default() }; 2];
        simulate_stream(&source, &dets, 2e-5, 9).unwrap()
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let s = sample();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"timestamp_ns,channel,truth_tag\n"));
        let back = EventStream::read_csv(buf.as_slice(), s.channels, s.rep_period_ns).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn binary_round_trip_to_the_picosecond() {
        let s = sample();
        let mut buf = Vec::new();
        s.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 24 + 10 * s.events.len());
        let back = EventStream::read_binary(buf.as_slice()).unwrap();
        assert_eq!(back.events.len(), s.events.len());
        for (a, b) in back.events.iter().zip(&s.events) {
            assert!((a.timestamp_ns - b.timestamp_ns).abs() <= 5e-4);
            assert_eq!((a.channel, a.tag), (b.channel, b.tag));
        }
        buf.push(0);
        assert!(EventStream::read_binary(buf.as_slice()).is_err());
        assert!(EventStream::read_binary(&b"QDTX"[..]).is_err());
    }
}
