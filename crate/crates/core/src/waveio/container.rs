//! Binary corpus container.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic        8 bytes  "QFMWAVE\0"
//! version      u32      1
//! count        u32      number of records
//! per record:
//!   subject    u16 length + UTF-8 bytes
//!   channel    u8       0 = PPG, 1 = ECG lead II
//!   rate_hz    f64
//!   start_s    f64
//!   length     u64      samples in the record
//!   samples    length x f32
//!   mask       ceil(length / 8) bytes, bit i of the stream = byte[i/8] >> (i%8)
//! ```
//!
//! Unused high bits of the last mask byte must be zero so that every valid
//! file has exactly one encoding.

use std::path::Path;

use super::{Channel, WaveformRecord};
use crate::binio::{pack_bits, read_file, unpack_bits, write_file, Reader, Writer};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"QFMWAVE\0";
const VERSION: u32 = 1;

pub fn encode_corpus(records: &[WaveformRecord]) -> Result<Vec<u8>> {
    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.u32(VERSION);
    let count = u32::try_from(records.len())
        .map_err(|_| Error::Validation("too many records for one corpus".into()))?;
    w.u32(count);
    for r in records {
        w.string(r.subject_id())?;
        w.u8(r.channel().tag());
        w.f64(r.sampling_rate_hz());
        w.f64(r.start_time_s());
        w.u64(r.len() as u64);
        w.f32_slice(r.samples());
        w.bytes(&pack_bits(r.missing_mask()));
    }
    Ok(w.into_inner())
}

pub fn decode_corpus(bytes: &[u8]) -> Result<Vec<WaveformRecord>> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC, VERSION)?;
    let count = r.u32("record count")?;
    let mut records = Vec::new();
    for _ in 0..count {
        let subject = r.string("subject id")?;
        let tag_at = r.offset();
        let tag = r.u8("channel tag")?;
        let channel = Channel::from_tag(tag)
            .ok_or_else(|| Error::format(tag_at, format!("unknown channel tag {tag}")))?;
        let rate_at = r.offset();
        let rate = r.f64("sampling rate")?;
        let start = r.f64("start time")?;
        let len_at = r.offset();
        let len = usize::try_from(r.u64("record length")?)
            .map_err(|_| Error::format(len_at, "record length overflows"))?;
        let samples = r.f32_vec(len, "samples")?;
        let mask_at = r.offset();
        let mask_bytes = r.take(len.div_ceil(8), "missing mask")?;
        if len % 8 != 0 {
            let last = mask_bytes[mask_bytes.len() - 1];
            if last >> (len % 8) != 0 {
                return Err(Error::format(
                    mask_at + mask_bytes.len() as u64 - 1,
                    "non-zero padding bits in missing mask",
                ));
            }
        }
        let mask = unpack_bits(mask_bytes, len);
        let record = WaveformRecord::new(subject, channel, rate, start, samples, mask)
            .map_err(|e| Error::format(rate_at, e.to_string()))?;
        records.push(record);
    }
    r.finish()?;
    Ok(records)
}

pub fn write_corpus(records: &[WaveformRecord], path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_corpus(records)?)
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<WaveformRecord>> {
    decode_corpus(&read_file(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_records() -> Vec<WaveformRecord> {
        vec![
            WaveformRecord::new(
                "s1",
                Channel::Ppg,
                125.0,
                0.0,
                vec![1.0, 2.5, -3.0],
                vec![false, true, false],
            )
            .unwrap(),
            WaveformRecord::complete("s1", Channel::EcgLeadII, 125.0, 0.0, vec![0.25; 17]).unwrap(),
            WaveformRecord::complete("subject-β", Channel::Ppg, 500.0, 1234.5, vec![]).unwrap(),
        ]
    }

    #[test]
    fn three_records_round_trip() {
        let recs = sample_records();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        write_corpus(&recs, &path).unwrap();
        assert_eq!(read_corpus(&path).unwrap(), recs);
    }

    #[test]
    fn empty_corpus_reads_back_empty() {
        let bytes = encode_corpus(&[]).unwrap();
        assert_eq!(bytes.len(), 16);
        assert!(decode_corpus(&bytes).unwrap().is_empty());
    }

    #[test]
    fn truncated_file_is_a_format_error() {
        let bytes = encode_corpus(&sample_records()).unwrap();
        for cut in [3, 12, 20, bytes.len() - 1] {
            match decode_corpus(&bytes[..cut]) {
                Err(Error::Format { .. }) => {}
                other => panic!("cut at {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn unknown_channel_tag_reports_its_offset() {
        let mut bytes = encode_corpus(&sample_records()[..1]).unwrap();
        // header 16 bytes, subject length 2 + "s1"
        let tag_offset = 16 + 2 + 2;
        bytes[tag_offset] = 9;
        match decode_corpus(&bytes) {
            Err(Error::Format { offset, message }) => {
                assert_eq!(offset, tag_offset as u64);
                assert!(message.contains("channel"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_trailing_bytes_rejected() {
        let mut bytes = encode_corpus(&sample_records()).unwrap();
        bytes.push(0);
        assert!(matches!(decode_corpus(&bytes), Err(Error::Format { .. })));
        bytes[0] = b'X';
        assert!(matches!(
            decode_corpus(&bytes),
            Err(Error::Format { offset: 0, .. })
        ));
    }

    #[test]
    fn length_mismatch_in_header_is_detected() {
        let mut bytes = encode_corpus(&sample_records()[..1]).unwrap();
        // length field follows subject (4 bytes), tag (1), rate (8), start (8)
        let len_offset = 16 + 4 + 1 + 16;
        bytes[len_offset] = 200;
        assert!(matches!(decode_corpus(&bytes), Err(Error::Format { .. })));
    }

    fn arb_record() -> impl Strategy<Value = WaveformRecord> {
        (
            "[a-z0-9_-]{0,12}",
            prop::bool::ANY,
            1.0f64..1000.0,
            -1e6f64..1e6,
            prop::collection::vec((any::<f32>(), any::<bool>()), 0..70),
        )
            .prop_map(|(sid, ecg, rate, start, data)| {
                let channel = if ecg {
                    Channel::EcgLeadII
                } else {
                    Channel::Ppg
                };
                let (samples, mask): (Vec<f32>, Vec<bool>) = data.into_iter().unzip();
                WaveformRecord::new(sid, channel, rate, start, samples, mask).unwrap()
            })
    }

    proptest! {
        #[test]
        fn corpus_round_trip_is_bit_exact(recs in prop::collection::vec(arb_record(), 0..5)) {
            let bytes = encode_corpus(&recs).unwrap();
            let back = decode_corpus(&bytes).unwrap();
            prop_assert_eq!(back.len(), recs.len());
            for (a, b) in back.iter().zip(&recs) {
                prop_assert_eq!(a.subject_id(), b.subject_id());
                prop_assert_eq!(a.channel(), b.channel());
                prop_assert_eq!(a.sampling_rate_hz().to_bits(), b.sampling_rate_hz().to_bits());
                prop_assert_eq!(a.start_time_s().to_bits(), b.start_time_s().to_bits());
                let sa: Vec<u32> = a.samples().iter().map(|x| x.to_bits()).collect();
                let sb: Vec<u32> = b.samples().iter().map(|x| x.to_bits()).collect();
                prop_assert_eq!(sa, sb);
                prop_assert_eq!(a.missing_mask(), b.missing_mask());
            }
            prop_assert_eq!(encode_corpus(&back).unwrap(), bytes);
        }
    }
}
