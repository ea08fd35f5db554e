//! Plain-text pulse tables.
//!
//! ```text
//! # pulse-table columns: time_s,amplitude_Hz,phase_rad,offset_Hz
//! # segment index=0 duration_s=2.4e-1 carrier_offset_Hz=0e0 samples=1200
//! 0.0000000000000000e0,1.5000000000000000e0,...
//! ```
//! One line per envelope sample; time is the sample's start within its
//! segment. Numbers carry 17 significant digits, so import is bit-exact.

use std::io::Write;
use std::path::Path;

use crate::{EnvelopeSample, PulseError, PulseSegment};

const COLUMNS: &str = "# pulse-table columns: time_s,amplitude_Hz,phase_rad,offset_Hz";

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_pulse_table<W: Write>(segments: &[PulseSegment], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{COLUMNS}")?;
    for (i, seg) in segments.iter().enumerate() {
        writeln!(
            w,
            "# segment index={i} duration_s={} carrier_offset_Hz={} samples={}",
            num(seg.duration()),
            num(seg.carrier_offset()),
            seg.envelope().len()
        )?;
        let h = seg.sample_interval();
        for (k, s) in seg.envelope().iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{}",
                num(k as f64 * h),
                num(s.amplitude),
                num(s.phase),
                num(seg.carrier_offset())
            )?;
        }
    }
    Ok(())
}

pub fn export_pulse_table(path: &Path, segments: &[PulseSegment]) -> Result<(), PulseError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_pulse_table(segments, &mut f)?;
    f.flush()?;
    Ok(())
}

pub fn import_pulse_table(path: &Path) -> Result<Vec<PulseSegment>, PulseError> {
    read_pulse_table(&std::fs::read_to_string(path)?)
}

struct Header {
    line: usize,
    duration: f64,
    offset: f64,
    samples: usize,
    env: Vec<EnvelopeSample>,
}

pub fn read_pulse_table(text: &str) -> Result<Vec<PulseSegment>, PulseError> {
    let err = |line: usize, message: String| PulseError::Table { line, message };
    let mut out = Vec::new();
    let mut cur: Option<Header> = None;

    let finish = |h: Header, out: &mut Vec<PulseSegment>| -> Result<(), PulseError> {
        if h.env.len() != h.samples {
            return Err(err(h.line, format!("segment declares {} samples but has {}", h.samples, h.env.len())));
        }
        out.push(PulseSegment::new(h.duration, h.env, h.offset).map_err(|e| err(h.line, e.to_string()))?);
        Ok(())
    };

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let l = raw.trim();
        if l.is_empty() {
            continue;
        }
        if let Some(rest) = l.strip_prefix("# segment") {
            if let Some(h) = cur.take() {
                finish(h, &mut out)?;
            }
            let (mut duration, mut offset, mut samples) = (None, None, None);
            for kv in rest.split_whitespace() {
                let (k, v) = kv.split_once('=').ok_or_else(|| err(line, format!("expected key=value, got '{kv}'")))?;
                let bad = |_| err(line, format!("bad value for {k}: '{v}'"));
                match k {
                    "index" => {}
                    "duration_s" => duration = Some(v.parse::<f64>().map_err(bad)?),
                    "carrier_offset_Hz" => offset = Some(v.parse::<f64>().map_err(bad)?),
                    "samples" => samples = Some(v.parse::<usize>().map_err(|_| err(line, format!("bad sample count '{v}'")))?),
                    _ => return Err(err(line, format!("unknown segment field '{k}'"))),
                }
            }
            let missing = |k: &str| err(line, format!("segment header lacks {k}"));
            cur = Some(Header {
                line,
                duration: duration.ok_or_else(|| missing("duration_s"))?,
                offset: offset.ok_or_else(|| missing("carrier_offset_Hz"))?,
                samples: samples.ok_or_else(|| missing("samples"))?,
                env: Vec::new(),
            });
            continue;
        }
        if l.starts_with('#') {
            continue;
        }
        let h = cur.as_mut().ok_or_else(|| err(line, "sample line before any segment header".into()))?;
        let cols: Vec<f64> = l
            .split(',')
            .map(|c| c.trim().parse::<f64>().map_err(|_| err(line, format!("not a number: '{}'", c.trim()))))
            .collect::<Result<_, _>>()?;
        if cols.len() != 4 {
            return Err(err(line, format!("expected 4 columns, found {}", cols.len())));
        }
        if cols[3] != h.offset {
            return Err(err(line, format!("offset {} differs from the segment's {}", cols[3], h.offset)));
        }
        h.env.push(EnvelopeSample { amplitude: cols[1], phase: cols[2] });
    }
    if let Some(h) = cur.take() {
        finish(h, &mut out)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn malformed_tables_report_lines() {
        let t = "# segment index=0 duration_s=1 carrier_offset_Hz=0 samples=2\n0,1,0,0\n0.5,x,0,0\n";
        match read_pulse_table(t) {
            Err(PulseError::Table { line: 3, .. }) => {}
            other => panic!("{other:?}"),
        }
        let short = "# segment index=0 duration_s=1 carrier_offset_Hz=0 samples=3\n0,1,0,0\n";
        assert!(matches!(read_pulse_table(short), Err(PulseError::Table { line: 1, .. })));
        assert!(matches!(read_pulse_table("0,1,0,0\n"), Err(PulseError::Table { line: 1, .. })));
    }
}
