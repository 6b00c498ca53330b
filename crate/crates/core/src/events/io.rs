//! Binary (`EVT1`) and CSV event files.
//!
//! Binary layout, little-endian:
//!
//! ```text
//! header  (16 B): "EVT1" | u16 width | u16 height | u64 record count
//! record  (16 B): u16 x | u16 y | i8 p (+1/-1) | 3 pad bytes | u64 t_us
//! ```

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{check_sorted, Event, EventError, EventStream, Polarity};

pub const EVENT_MAGIC: &[u8; 4] = b"EVT1";
pub const EVENT_HEADER_LEN: usize = 16;
pub const EVENT_RECORD_LEN: usize = 16;

pub fn encode_events<W: Write>(stream: &EventStream, mut w: W) -> Result<(), EventError> {
    stream.validate()?;
    let mut header = [0u8; EVENT_HEADER_LEN];
    header[0..4].copy_from_slice(EVENT_MAGIC);
    header[4..6].copy_from_slice(&stream.width.to_le_bytes());
    header[6..8].copy_from_slice(&stream.height.to_le_bytes());
    header[8..16].copy_from_slice(&(stream.events.len() as u64).to_le_bytes());
    w.write_all(&header)?;
    let mut rec = [0u8; EVENT_RECORD_LEN];
    for e in &stream.events {
        rec[0..2].copy_from_slice(&e.x.to_le_bytes());
        rec[2..4].copy_from_slice(&e.y.to_le_bytes());
        rec[4] = e.p.sign() as u8;
        rec[5..8].fill(0);
        rec[8..16].copy_from_slice(&e.t.to_le_bytes());
        w.write_all(&rec)?;
    }
    Ok(())
}

pub fn decode_events(bytes: &[u8]) -> Result<EventStream, EventError> {
    if bytes.is_empty() {
        return Ok(EventStream::default());
    }
    if bytes.len() < EVENT_HEADER_LEN {
        return Err(EventError::Malformed {
            offset: bytes.len() as u64,
            msg: "truncated header".into(),
        });
    }
    if &bytes[0..4] != EVENT_MAGIC {
        return Err(EventError::Malformed {
            offset: 0,
            msg: "bad magic, expected EVT1".into(),
        });
    }
    let width = u16::from_le_bytes([bytes[4], bytes[5]]);
    let height = u16::from_le_bytes([bytes[6], bytes[7]]);
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let body = &bytes[EVENT_HEADER_LEN..];
    let expected = count
        .checked_mul(EVENT_RECORD_LEN as u64)
        .filter(|&n| n == body.len() as u64);
    if expected.is_none() {
        let whole = body.len() / EVENT_RECORD_LEN;
        let offset = if (whole as u64) < count {
            (EVENT_HEADER_LEN + whole * EVENT_RECORD_LEN) as u64
        } else {
            (EVENT_HEADER_LEN as u64) + count * EVENT_RECORD_LEN as u64
        };
        return Err(EventError::Malformed {
            offset,
            msg: format!("header declares {count} records but body holds {} bytes", body.len()),
        });
    }
    let mut events = Vec::with_capacity(count as usize);
    let mut prev_t = 0u64;
    for (index, rec) in body.chunks_exact(EVENT_RECORD_LEN).enumerate() {
        let offset = (EVENT_HEADER_LEN + index * EVENT_RECORD_LEN) as u64;
        let x = u16::from_le_bytes([rec[0], rec[1]]);
        let y = u16::from_le_bytes([rec[2], rec[3]]);
        let praw = rec[4] as i8;
        let p = Polarity::from_sign(praw as i64).ok_or(EventError::BadPolarity {
            index,
            offset: offset + 4,
            value: praw as i64,
        })?;
        let t = u64::from_le_bytes(rec[8..16].try_into().unwrap());
        if x >= width || y >= height {
            return Err(EventError::OutOfBounds {
                index,
                x,
                y,
                width,
                height,
            });
        }
        if index > 0 && t < prev_t {
            return Err(EventError::UnorderedStream { index, prev: prev_t, t });
        }
        prev_t = t;
        events.push(Event { x, y, t, p });
    }
    Ok(EventStream { width, height, events })
}

pub fn write_events(path: &Path, stream: &EventStream) -> Result<(), EventError> {
    let f = std::fs::File::create(path)?;
    let mut w = BufWriter::new(f);
    encode_events(stream, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_events(path: &Path) -> Result<EventStream, EventError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_events(&bytes)
}

/// Writes `t,x,y,p` rows with a header line.
pub fn write_events_csv(path: &Path, events: &[Event]) -> Result<(), EventError> {
    check_sorted(events)?;
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "t,x,y,p")?;
    for e in events {
        writeln!(w, "{},{},{},{}", e.t, e.x, e.y, e.p.sign())?;
    }
    w.flush()?;
    Ok(())
}

/// Parses `t,x,y,p` rows (optional header, `#` comments) for a sensor of the given size.
pub fn read_events_csv(path: &Path, width: u16, height: u16) -> Result<EventStream, EventError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    parse_events_csv(reader, width, height)
}

pub(crate) fn parse_events_csv<R: BufRead>(reader: R, width: u16, height: u16) -> Result<EventStream, EventError> {
    let mut events = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with('t') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(EventError::Csv {
                line: line_no,
                msg: format!("expected 4 fields, found {}", fields.len()),
            });
        }
        let bad = |what: &str, e: &dyn std::fmt::Display| EventError::Csv {
            line: line_no,
            msg: format!("bad {what}: {e}"),
        };
        let t: u64 = fields[0].parse().map_err(|e| bad("t", &e))?;
        let x: u16 = fields[1].parse().map_err(|e| bad("x", &e))?;
        let y: u16 = fields[2].parse().map_err(|e| bad("y", &e))?;
        let p: i64 = fields[3].parse().map_err(|e| bad("p", &e))?;
        let p = Polarity::from_sign(p).ok_or(EventError::BadPolarity {
            index: events.len(),
            offset: 0,
            value: p,
        })?;
        events.push(Event { x, y, t, p });
    }
    EventStream::new(width, height, events)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EventStream {
        let events = (0..20u64)
            .map(|i| {
                Event::new(
                    (i % 7) as u16,
                    (i % 5) as u16,
                    i * 3,
                    if i % 3 == 0 {
                        Polarity::Negative
                    } else {
                        Polarity::Positive
                    },
                )
            })
            .collect();
        EventStream::new(8, 6, events).unwrap()
    }

    #[test]
    fn byte_layout_matches_format() {
        let s = EventStream::new(640, 480, vec![Event::new(3, 4, 0x0102, Polarity::Negative)]).unwrap();
        let mut buf = Vec::new();
        encode_events(&s, &mut buf).unwrap();
        assert_eq!(buf.len(), 32);
        assert_eq!(&buf[0..4], b"EVT1");
        assert_eq!(&buf[4..6], &640u16.to_le_bytes());
        assert_eq!(&buf[6..8], &480u16.to_le_bytes());
        assert_eq!(&buf[8..16], &1u64.to_le_bytes());
        assert_eq!(&buf[16..20], &[3, 0, 4, 0]);
        assert_eq!(buf[20], 0xFF);
        assert_eq!(&buf[21..24], &[0, 0, 0]);
        assert_eq!(&buf[24..32], &0x0102u64.to_le_bytes());
    }

    #[test]
    fn empty_input_is_empty_stream() {
        assert!(decode_events(&[]).unwrap().events.is_empty());
        let mut buf = Vec::new();
        encode_events(&EventStream::new(10, 10, vec![]).unwrap(), &mut buf).unwrap();
        let s = decode_events(&buf).unwrap();
        assert!(s.events.is_empty());
        assert_eq!((s.width, s.height), (10, 10));
    }

    #[test]
    fn zero_polarity_names_record_index() {
        let mut buf = Vec::new();
        encode_events(&sample(), &mut buf).unwrap();
        buf[EVENT_HEADER_LEN + 2 * EVENT_RECORD_LEN + 4] = 0;
        match decode_events(&buf) {
            Err(EventError::BadPolarity { index, offset, value }) => {
                assert_eq!(index, 2);
                assert_eq!(offset, 52);
                assert_eq!(value, 0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncated_body_reports_offset() {
        let mut buf = Vec::new();
        encode_events(&sample(), &mut buf).unwrap();
        buf.truncate(buf.len() - 5);
        match decode_events(&buf) {
            Err(EventError::Malformed { offset, .. }) => assert_eq!(offset, (16 + 19 * 16) as u64),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn timestamp_regression_is_unordered() {
        let mut buf = Vec::new();
        encode_events(&sample(), &mut buf).unwrap();
        let off = EVENT_HEADER_LEN + 5 * EVENT_RECORD_LEN + 8;
        buf[off..off + 8].copy_from_slice(&0u64.to_le_bytes());
        let err = decode_events(&buf).unwrap_err();
        assert!(err.to_string().contains("unordered stream"), "{err}");
    }

    #[test]
    fn csv_reader_accepts_header_and_rejects_zero_polarity() {
        let text = "t,x,y,p\n0,1,2,1\n5,3,3,-1\n";
        let s = parse_events_csv(text.as_bytes(), 8, 8).unwrap();
        assert_eq!(s.events.len(), 2);
        assert_eq!(s.events[1].p, Polarity::Negative);
        let text = "0,1,2,1\n5,3,3,0\n";
        assert!(matches!(
            parse_events_csv(text.as_bytes(), 8, 8),
            Err(EventError::BadPolarity { index: 1, .. })
        ));
    }
}
