// EVF1 container: little-endian, a 4-byte magic, u32 interval count, then
// per interval u64 t_start, u64 t_end, u32 n and n 14-byte records
// {u64 t, u16 x, u16 y, i8 polarity, pad}.

use std::fs;
use std::path::Path;

use super::{Event, EventInterval, Polarity};
use crate::error::{Error, Result};

pub const EVF_MAGIC: &[u8; 4] = b"EVF1";

const RECORD_BYTES: usize = 14;
const INTERVAL_HEADER_BYTES: usize = 20;

pub fn encode_events(intervals: &[EventInterval]) -> Vec<u8> {
    let total: usize = intervals
        .iter()
        .map(|iv| INTERVAL_HEADER_BYTES + RECORD_BYTES * iv.len())
        .sum();
    let mut buf = Vec::with_capacity(8 + total);
    buf.extend_from_slice(EVF_MAGIC);
    buf.extend_from_slice(&(intervals.len() as u32).to_le_bytes());
    for iv in intervals {
        buf.extend_from_slice(&iv.t_start().to_le_bytes());
        buf.extend_from_slice(&iv.t_end().to_le_bytes());
        buf.extend_from_slice(&(iv.len() as u32).to_le_bytes());
        for e in iv.events() {
            buf.extend_from_slice(&e.t.to_le_bytes());
            buf.extend_from_slice(&e.x.to_le_bytes());
            buf.extend_from_slice(&e.y.to_le_bytes());
            buf.push(e.polarity.as_i8() as u8);
            buf.push(0);
        }
    }
    buf
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> std::result::Result<&'a [u8], String> {
        if self.bytes.len() - self.pos < n {
            return Err(format!("truncated while reading {what} at byte {}", self.pos));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Parses an EVF1 byte buffer. A zero-length buffer is an empty sequence.
pub fn decode_events(bytes: &[u8]) -> std::result::Result<Vec<EventInterval>, String> {
    if bytes.is_empty() {
        return Ok(Vec::new());
    }
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "magic")? != EVF_MAGIC {
        return Err("bad magic, expected EVF1".into());
    }
    let count = cur.u32("interval count")?;
    let mut out = Vec::new();
    for k in 0..count {
        let t_start = cur.u64("interval start")?;
        let t_end = cur.u64("interval end")?;
        let n = cur.u32("event count")? as usize;
        if (bytes.len() - cur.pos) / RECORD_BYTES < n {
            return Err(format!("truncated: interval {k} declares {n} events"));
        }
        let mut events = Vec::with_capacity(n);
        for _ in 0..n {
            let r = cur.take(RECORD_BYTES, "event record")?;
            let polarity = Polarity::try_from(r[12] as i8)
                .map_err(|_| format!("interval {k}: polarity byte {} is not +1/-1", r[12] as i8))?;
            events.push(Event {
                t: u64::from_le_bytes(r[0..8].try_into().unwrap()),
                x: u16::from_le_bytes([r[8], r[9]]),
                y: u16::from_le_bytes([r[10], r[11]]),
                polarity,
            });
        }
        let iv = EventInterval::new(t_start, t_end, events).map_err(|e| format!("interval {k}: {e}"))?;
        out.push(iv);
    }
    if cur.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - cur.pos));
    }
    Ok(out)
}

pub fn read_events(path: impl AsRef<Path>) -> Result<Vec<EventInterval>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_events(&bytes).map_err(|reason| Error::format(path, reason))
}

pub fn write_events(intervals: &[EventInterval], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_events(intervals)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<EventInterval> {
        let evs = vec![
            Event::new(10, 1, 2, Polarity::Positive),
            Event::new(10, 3, 0, Polarity::Negative),
            Event::new(99, 65535, 7, Polarity::Positive),
        ];
        vec![
            EventInterval::new(0, 100, evs).unwrap(),
            EventInterval::empty(100, 200).unwrap(),
        ]
    }

    #[test]
    fn round_trip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.evf");
        write_events(&sample(), &path).unwrap();
        assert_eq!(read_events(&path).unwrap(), sample());
        assert_eq!(fs::metadata(&path).unwrap().len(), 8 + 2 * 20 + 3 * 14);
    }

    #[test]
    fn empty_file_is_empty_sequence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.evf");
        fs::write(&path, b"").unwrap();
        assert!(read_events(&path).unwrap().is_empty());
        assert!(decode_events(&encode_events(&[])).unwrap().is_empty());
    }

    #[test]
    fn decreasing_timestamps_are_rejected() {
        let mut bytes = encode_events(&sample());
        // swap the first record's timestamp to come after the second's
        let first = 8 + 20;
        bytes[first..first + 8].copy_from_slice(&50u64.to_le_bytes());
        let err = decode_events(&bytes).unwrap_err();
        assert!(err.contains("precedes"), "{err}");
    }

    #[test]
    fn malformed_inputs_are_rejected() {
        let good = encode_events(&sample());
        assert!(decode_events(&good[..good.len() - 1]).is_err());
        assert!(decode_events(&good[..6]).is_err());
        let mut extra = good.clone();
        extra.push(0);
        assert!(decode_events(&extra).is_err());
        let mut magic = good.clone();
        magic[3] = b'2';
        assert!(decode_events(&magic).is_err());
        let mut pol = good.clone();
        pol[8 + 20 + 12] = 0;
        assert!(decode_events(&pol).unwrap_err().contains("polarity"));
        // huge declared count must not allocate before failing
        let mut huge = good[..8 + 16].to_vec();
        huge.extend_from_slice(&u32::MAX.to_le_bytes());
        assert!(decode_events(&huge).is_err());
    }

    #[test]
    fn file_errors_carry_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.evf");
        fs::write(&path, b"NOPE\0\0\0\0").unwrap();
        match read_events(&path) {
            Err(Error::Format { path: p, .. }) => assert_eq!(p, path),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(read_events(dir.path().join("missing")), Err(Error::Io { .. })));
    }
}
