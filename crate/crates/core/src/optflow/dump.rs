//! Feature dump files: a concatenation of records, one per phase per view.
//!
//! ```text
//! id_len   u32, then the UTF-8 sequence id
//! view     u8   (0 = left, 1 = right)
//! phase    u8   (0 = onset_apex, 1 = apex_offset)
//! apex     u32
//! height   u32
//! width    u32
//! values   3 × height × width little-endian f32, channel-major (u, v, m)
//! ```

use std::fmt::Write as _;
use std::path::Path;

use super::apex::MotionFeature;
use crate::error::{Error, Result};
use crate::types::{Phase, View};

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRecord {
    pub sequence_id: String,
    pub view: View,
    pub phase: Phase,
    pub apex: u32,
    pub feature: MotionFeature,
}

pub fn encode_records(records: &[FeatureRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        out.extend_from_slice(&(r.sequence_id.len() as u32).to_le_bytes());
        out.extend_from_slice(r.sequence_id.as_bytes());
        out.push(r.view.tag());
        out.push(r.phase.tag());
        out.extend_from_slice(&r.apex.to_le_bytes());
        out.extend_from_slice(&(r.feature.height as u32).to_le_bytes());
        out.extend_from_slice(&(r.feature.width as u32).to_le_bytes());
        for v in &r.feature.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!(
                "truncated feature record at offset {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_records(buf: &[u8]) -> Result<Vec<FeatureRecord>> {
    let mut cur = Cursor { buf, pos: 0 };
    let mut records = Vec::new();
    while cur.pos < buf.len() {
        let id_len = cur.u32()? as usize;
        let sequence_id = String::from_utf8(cur.take(id_len)?.to_vec())
            .map_err(|_| Error::Format("sequence id is not UTF-8".into()))?;
        let tags = cur.take(2)?;
        let view = View::from_tag(tags[0])
            .filter(|v| *v != View::Dual)
            .ok_or_else(|| Error::Format(format!("bad view tag {}", tags[0])))?;
        let phase = Phase::from_tag(tags[1])
            .ok_or_else(|| Error::Format(format!("bad phase tag {}", tags[1])))?;
        let apex = cur.u32()?;
        let height = cur.u32()? as usize;
        let width = cur.u32()? as usize;
        let raw = cur.take(3 * height * width * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        records.push(FeatureRecord {
            sequence_id,
            view,
            phase,
            apex,
            feature: MotionFeature {
                width,
                height,
                data,
            },
        });
    }
    Ok(records)
}

pub fn write_records(path: &Path, records: &[FeatureRecord]) -> Result<()> {
    std::fs::write(path, encode_records(records)).map_err(|e| Error::io(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<FeatureRecord>> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_records(&buf)
}

/// Human-readable export: one header line per record followed by one line
/// per channel row.
pub fn to_text(records: &[FeatureRecord]) -> String {
    let mut s = String::new();
    for r in records {
        let _ = writeln!(
            s,
            "# {} {} {} apex={} {}x{}",
            r.sequence_id, r.view, r.phase, r.apex, r.feature.height, r.feature.width
        );
        for k in 0..3 {
            let _ = writeln!(s, "channel {}", ["u", "v", "m"][k]);
            for row in r.feature.channel(k).chunks(r.feature.width) {
                let line: Vec<String> = row.iter().map(|v| format!("{v:.4}")).collect();
                let _ = writeln!(s, "{}", line.join(" "));
            }
        }
    }
    s
}
