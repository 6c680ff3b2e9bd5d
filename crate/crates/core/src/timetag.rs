//! Time-tag records and the QTT1 binary container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! header  "QTT1" | version: u32 = 1 | record_count: u64
//! record  time_ps: u64 | channel: u32 | reserved: u32 = 0
//! ```

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"QTT1";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;
pub const RECORD_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum Channel {
    /// Signal detector.
    Signal = 0,
    /// Second detector of a correlation measurement.
    Second = 1,
    /// Excitation pulse marker.
    Sync = 2,
}

impl Channel {
    pub fn from_u32(raw: u32) -> Option<Self> {
        match raw {
            0 => Some(Channel::Signal),
            1 => Some(Channel::Second),
            2 => Some(Channel::Sync),
            _ => None,
        }
    }
}

/// One detection event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TimeTagRecord {
    pub time_ps: u64,
    pub channel: Channel,
}

impl TimeTagRecord {
    pub fn new(channel: Channel, time_ps: u64) -> Self {
        TimeTagRecord { time_ps, channel }
    }

    fn sort_key(&self) -> (u64, u8) {
        (self.time_ps, self.channel as u8)
    }
}

/// Sorts records by time; ties are ordered by channel so the result does not
/// depend on the input order.
pub fn sort_records(tags: &mut [TimeTagRecord]) {
    tags.sort_unstable_by_key(TimeTagRecord::sort_key);
}

pub fn is_time_sorted(tags: &[TimeTagRecord]) -> bool {
    tags.windows(2).all(|w| w[0].time_ps <= w[1].time_ps)
}

/// Times of all records on `channel`, in stream order.
pub fn channel_times(tags: &[TimeTagRecord], channel: Channel) -> Vec<u64> {
    tags.iter()
        .filter(|t| t.channel == channel)
        .map(|t| t.time_ps)
        .collect()
}

pub fn write_timetags<W: Write>(mut out: W, tags: &[TimeTagRecord]) -> Result<()> {
    if let Some(i) = tags.windows(2).position(|w| w[1].time_ps < w[0].time_ps) {
        return Err(Error::format(
            (HEADER_LEN + (i + 1) * RECORD_LEN) as u64,
            "records are not time-sorted",
        ));
    }
    let mut buf = Vec::with_capacity(HEADER_LEN + tags.len() * RECORD_LEN);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(tags.len() as u64).to_le_bytes());
    for tag in tags {
        buf.extend_from_slice(&tag.time_ps.to_le_bytes());
        buf.extend_from_slice(&(tag.channel as u32).to_le_bytes());
        buf.extend_from_slice(&0u32.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn encode_timetags(tags: &[TimeTagRecord]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_timetags(&mut buf, tags)?;
    Ok(buf)
}

pub fn read_timetags<R: Read>(mut input: R) -> Result<Vec<TimeTagRecord>> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    decode_timetags(&bytes)
}

pub fn decode_timetags(bytes: &[u8]) -> Result<Vec<TimeTagRecord>> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(bytes.len() as u64, "truncated header"));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::format(0, "bad magic, expected \"QTT1\""));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let body = &bytes[HEADER_LEN..];
    let expected = count
        .checked_mul(RECORD_LEN as u64)
        .ok_or_else(|| Error::format(8, "record count overflows"))?;
    if (body.len() as u64) < expected {
        let complete = body.len() / RECORD_LEN;
        return Err(Error::format(
            (HEADER_LEN + complete * RECORD_LEN) as u64,
            format!("truncated record {complete} of {count}"),
        ));
    }
    if body.len() as u64 > expected {
        return Err(Error::format(
            HEADER_LEN as u64 + expected,
            "trailing bytes after last record",
        ));
    }

    let mut tags = Vec::with_capacity(count as usize);
    let mut last = 0u64;
    for (i, rec) in body.chunks_exact(RECORD_LEN).enumerate() {
        let offset = (HEADER_LEN + i * RECORD_LEN) as u64;
        let time_ps = u64::from_le_bytes(rec[0..8].try_into().unwrap());
        let raw_channel = u32::from_le_bytes(rec[8..12].try_into().unwrap());
        let reserved = u32::from_le_bytes(rec[12..16].try_into().unwrap());
        let channel = Channel::from_u32(raw_channel)
            .ok_or_else(|| Error::format(offset + 8, format!("invalid channel {raw_channel}")))?;
        if reserved != 0 {
            return Err(Error::format(offset + 12, "reserved field is not zero"));
        }
        if time_ps < last {
            return Err(Error::format(
                offset,
                format!("time regression: {time_ps} ps after {last} ps"),
            ));
        }
        last = time_ps;
        tags.push(TimeTagRecord { time_ps, channel });
    }
    Ok(tags)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_stream_is_header_only() {
        let bytes = encode_timetags(&[]).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN);
        assert_eq!(&bytes[..4], b"QTT1");
        assert!(decode_timetags(&bytes).unwrap().is_empty());
    }

    #[test]
    fn single_record_layout() {
        let bytes = encode_timetags(&[TimeTagRecord::new(Channel::Signal, 1000)]).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + RECORD_LEN);
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(&bytes[8..16], &[1, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&bytes[16..24], &1000u64.to_le_bytes());
        assert_eq!(&bytes[24..32], &[0u8; 8]);
    }

    #[test]
    fn bad_magic_reports_offset_zero() {
        let mut bytes = encode_timetags(&[]).unwrap();
        bytes[0] = b'X';
        match decode_timetags(&bytes) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncated_record_reports_its_offset() {
        let tags = [
            TimeTagRecord::new(Channel::Signal, 1),
            TimeTagRecord::new(Channel::Second, 2),
        ];
        let bytes = encode_timetags(&tags).unwrap();
        match decode_timetags(&bytes[..bytes.len() - 3]) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 32),
            other => panic!("unexpected {other:?}"),
        }
        assert!(decode_timetags(&bytes[..10]).is_err());
    }

    #[test]
    fn time_regression_is_rejected() {
        let mut bytes = encode_timetags(&[
            TimeTagRecord::new(Channel::Signal, 10),
            TimeTagRecord::new(Channel::Signal, 20),
        ])
        .unwrap();
        bytes[32..40].copy_from_slice(&5u64.to_le_bytes());
        match decode_timetags(&bytes) {
            Err(Error::Format { offset, reason }) => {
                assert_eq!(offset, 32);
                assert!(reason.contains("regression"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let unsorted = [
            TimeTagRecord::new(Channel::Signal, 20),
            TimeTagRecord::new(Channel::Signal, 10),
        ];
        assert!(encode_timetags(&unsorted).is_err());
    }

    #[test]
    fn invalid_channel_is_rejected() {
        let mut bytes = encode_timetags(&[TimeTagRecord::new(Channel::Sync, 3)]).unwrap();
        bytes[24] = 7;
        assert!(matches!(
            decode_timetags(&bytes),
            Err(Error::Format { offset: 24, .. })
        ));
    }

    #[test]
    fn million_sorted_records_round_trip() {
        use rand::Rng;
        let mut rng = crate::seed::SeedContract::new(3).rng();
        let mut t = 0u64;
        let tags: Vec<_> = (0..1_000_000)
            .map(|_| {
                t += rng.random_range(0..5_000u64);
                let ch = Channel::from_u32(rng.random_range(0..3)).unwrap();
                TimeTagRecord::new(ch, t)
            })
            .collect();
        let bytes = encode_timetags(&tags).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + RECORD_LEN * tags.len());
        assert_eq!(decode_timetags(&bytes).unwrap(), tags);
    }

    fn arb_stream() -> impl Strategy<Value = Vec<TimeTagRecord>> {
        prop::collection::vec((0u64..1 << 40, 0u32..3), 0..200).prop_map(|mut v| {
            v.sort_by_key(|x| x.0);
            v.into_iter()
                .map(|(t, c)| TimeTagRecord::new(Channel::from_u32(c).unwrap(), t))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn round_trip_is_identity(tags in arb_stream()) {
            let bytes = encode_timetags(&tags).unwrap();
            prop_assert_eq!(read_timetags(&bytes[..]).unwrap(), tags);
        }
    }
}
