//! Binary segment container, following the corpus container conventions.
//!
//! ```text
//! magic        8 bytes  "QFMSEGS\0"
//! version      u32      1
//! count        u32
//! per segment:
//!   subject    u16 length + UTF-8 bytes
//!   t_start_s  f64
//!   n          u32      samples per channel (9000)
//!   channels   u8       (2: PPG then ECG)
//!   per channel:
//!     raw_min  f64      pre-normalization minimum
//!     raw_max  f64      pre-normalization maximum
//!     samples  n x f32  normalized values in [0, 1]
//! ```

use std::path::Path;

use super::Segment;
use crate::binio::{read_file, write_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::SEGMENT_CHANNELS;

const MAGIC: &[u8; 8] = b"QFMSEGS\0";
const VERSION: u32 = 1;

pub fn encode_segments(segments: &[Segment]) -> Result<Vec<u8>> {
    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.u32(
        u32::try_from(segments.len()).map_err(|_| Error::Validation("too many segments".into()))?,
    );
    for s in segments {
        w.string(s.subject_id())?;
        w.f64(s.t_start_s());
        w.u32(s.ppg().len() as u32);
        w.u8(SEGMENT_CHANNELS as u8);
        for c in 0..SEGMENT_CHANNELS {
            let (lo, hi) = s.raw_range(c);
            w.f64(lo);
            w.f64(hi);
            w.f32_slice(s.channel(c));
        }
    }
    Ok(w.into_inner())
}

pub fn decode_segments(bytes: &[u8]) -> Result<Vec<Segment>> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC, VERSION)?;
    let count = r.u32("segment count")?;
    let mut out = Vec::new();
    for _ in 0..count {
        let at = r.offset();
        let subject = r.string("subject id")?;
        let t = r.f64("segment start")?;
        let n = r.u32("segment length")? as usize;
        let ch_at = r.offset();
        let channels = r.u8("channel count")? as usize;
        if channels != SEGMENT_CHANNELS {
            return Err(Error::format(
                ch_at,
                format!("expected {SEGMENT_CHANNELS} channels, found {channels}"),
            ));
        }
        let mut data: [Vec<f32>; SEGMENT_CHANNELS] = Default::default();
        let mut ranges = [(0.0, 0.0); SEGMENT_CHANNELS];
        for c in 0..SEGMENT_CHANNELS {
            ranges[c] = (r.f64("raw min")?, r.f64("raw max")?);
            data[c] = r.f32_vec(n, "segment samples")?;
        }
        let seg =
            Segment::new(subject, t, data, ranges).map_err(|e| Error::format(at, e.to_string()))?;
        out.push(seg);
    }
    r.finish()?;
    Ok(out)
}

pub fn write_segments(segments: &[Segment], path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_segments(segments)?)
}

pub fn read_segments(path: impl AsRef<Path>) -> Result<Vec<Segment>> {
    decode_segments(&read_file(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::SEGMENT_LEN;

    fn seg(sid: &str, t: f64) -> Segment {
        let ppg: Vec<f64> = (0..SEGMENT_LEN)
            .map(|i| (i as f64 * 0.01).sin() + 3.0)
            .collect();
        let ecg: Vec<f64> = (0..SEGMENT_LEN).map(|i| (i as f64 * 0.003).cos()).collect();
        Segment::from_raw(sid, t, &ppg, &ecg).unwrap()
    }

    #[test]
    fn round_trip() {
        let segs = vec![seg("a", 0.0), seg("a", 15.0), seg("b", 7.5)];
        let bytes = encode_segments(&segs).unwrap();
        assert_eq!(decode_segments(&bytes).unwrap(), segs);
        assert!(decode_segments(&encode_segments(&[]).unwrap())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn corrupt_inputs() {
        let bytes = encode_segments(&[seg("a", 0.0)]).unwrap();
        assert!(matches!(
            decode_segments(&bytes[..bytes.len() - 2]),
            Err(Error::Format { .. })
        ));
        let mut bad = bytes.clone();
        // first PPG sample (after header 16, subject 3, t 8, n 4, ch 1, range 16)
        let at = 16 + 3 + 8 + 4 + 1 + 16;
        bad[at..at + 4].copy_from_slice(&2.0f32.to_le_bytes());
        assert!(matches!(
            decode_segments(&bad),
            Err(Error::Format { offset: 16, .. })
        ));
    }
}
