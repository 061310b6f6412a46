//! Plain-text record and label files.
//!
//! A record file starts with one header line
//! `subject_id,record_id,sampling_rate_hz,ref_sbp,ref_dbp` followed by one
//! cuff-pressure sample (mmHg) per line.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::signal_prep::CuffDeflationRecord;

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Writes samples with round-trip precision.
pub fn write_record<W: Write>(mut w: W, record: &CuffDeflationRecord) -> Result<()> {
    writeln!(
        w,
        "{},{},{:?},{:?},{:?}",
        record.subject_id, record.record_id, record.sampling_rate, record.ref_sbp, record.ref_dbp
    )?;
    for s in &record.samples {
        writeln!(w, "{s:?}")?;
    }
    Ok(())
}

/// Reads a record at its native rate. Errors carry 1-based line numbers.
pub fn read_record<R: BufRead>(r: R) -> Result<CuffDeflationRecord> {
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| parse_err(1, "empty record file"))??;
    let fields: Vec<&str> = header.trim().split(',').map(str::trim).collect();
    if fields.len() != 5 {
        return Err(parse_err(
            1,
            "header must be subject_id,record_id,sampling_rate_hz,ref_sbp,ref_dbp",
        ));
    }
    if fields[0].is_empty() || fields[1].is_empty() {
        return Err(parse_err(1, "empty subject or record id"));
    }
    let num = |i: usize, name: &str| -> Result<f64> {
        fields[i]
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| parse_err(1, format!("{name} is not a number: {:?}", fields[i])))
    };
    let fs = num(2, "sampling_rate_hz")?;
    if fs <= 0.0 {
        return Err(parse_err(1, format!("sampling rate must be positive, got {fs}")));
    }
    let (sbp, dbp) = (num(3, "ref_sbp")?, num(4, "ref_dbp")?);
    let mut samples = Vec::new();
    let mut last_line = 1;
    for (i, line) in lines.enumerate() {
        let n = i + 2;
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        last_line = n;
        let v: f64 = t
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| parse_err(n, format!("sample is not a number: {t:?}")))?;
        samples.push(v);
    }
    let required = (10.0 * fs).ceil() as usize;
    if samples.len() < required {
        return Err(parse_err(
            last_line,
            format!("record has {} samples, needs at least {required}", samples.len()),
        ));
    }
    CuffDeflationRecord::new(fields[0], fields[1], fs, samples, sbp, dbp)
        .map_err(|e| parse_err(1, e.to_string()))
}

/// Reads a record file and resamples it to `working_rate` Hz.
pub fn parse_record(path: &Path, working_rate: f64) -> Result<CuffDeflationRecord> {
    let file = File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_record(BufReader::new(file))?.resampled(working_rate)
}

/// Reference labels of one record.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelRow {
    pub subject_id: String,
    pub record_id: String,
    pub sbp: f64,
    pub dbp: f64,
}

pub const LABEL_HEADER: &str = "subject_id,record_id,sbp,dbp";

pub fn write_labels<W: Write>(mut w: W, rows: &[LabelRow]) -> Result<()> {
    writeln!(w, "{LABEL_HEADER}")?;
    for r in rows {
        writeln!(w, "{},{},{:?},{:?}", r.subject_id, r.record_id, r.sbp, r.dbp)?;
    }
    Ok(())
}

pub fn read_labels<R: BufRead>(r: R) -> Result<Vec<LabelRow>> {
    let mut rows = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let n = i + 1;
        let line = line?;
        if n == 1 {
            if line.trim() != LABEL_HEADER {
                return Err(parse_err(1, "unexpected label header"));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 4 {
            return Err(parse_err(n, "expected 4 fields"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| parse_err(n, format!("bad number {s:?}")));
        rows.push(LabelRow {
            subject_id: f[0].to_string(),
            record_id: f[1].to_string(),
            sbp: num(f[2])?,
            dbp: num(f[3])?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record() -> CuffDeflationRecord {
        let samples = (0..1000).map(|i| 180.0 - 0.03 * i as f64 + (i as f64 * 0.1).sin() / 7.0).collect();
        CuffDeflationRecord::new("S01", "R1", 100.0, samples, 121.5, 79.25).unwrap()
    }

    #[test]
    fn round_trip() {
        let rec = record();
        let mut buf = Vec::new();
        write_record(&mut buf, &rec).unwrap();
        let back = read_record(&buf[..]).unwrap();
        assert_eq!(back.subject_id, "S01");
        assert_eq!((back.ref_sbp, back.ref_dbp), (121.5, 79.25));
        assert!(back.samples.iter().zip(&rec.samples).all(|(a, b)| (a - b).abs() <= 1e-9));
    }

    #[test]
    fn zero_sampling_rate_is_rejected() {
        let text = format!("S,R,0,120,80\n{}", "100\n".repeat(20));
        assert!(matches!(read_record(text.as_bytes()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn bad_sample_cites_its_line() {
        let mut text = String::from("S,R,1,120,80\n");
        for i in 0..20 {
            text.push_str(if i == 10 { "abc\n" } else { "100\n" });
        }
        assert!(matches!(read_record(text.as_bytes()), Err(Error::Parse { line: 12, .. })));
    }

    #[test]
    fn malformed_header_and_short_body() {
        assert!(matches!(read_record("S,R,100\n".as_bytes()), Err(Error::Parse { line: 1, .. })));
        let text = format!("S,R,100,120,80\n{}", "100\n".repeat(50));
        assert!(matches!(read_record(text.as_bytes()), Err(Error::Parse { line: 51, .. })));
        assert!(matches!(read_record("".as_bytes()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn parse_record_resamples() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.txt");
        let mut rec = record();
        rec.sampling_rate = 200.0;
        rec.samples.extend(rec.samples.clone());
        write_record(File::create(&path).unwrap(), &rec).unwrap();
        let back = parse_record(&path, 100.0).unwrap();
        assert_eq!(back.sampling_rate, 100.0);
        assert_eq!(back.samples.len(), 1000);
        assert_eq!(back.samples[10], rec.samples[20]);
        assert!(matches!(parse_record(&dir.path().join("missing"), 100.0), Err(Error::Io(_))));
    }

    #[test]
    fn labels_round_trip() {
        let rows = vec![LabelRow {
            subject_id: "S1".into(),
            record_id: "R1".into(),
            sbp: 130.25,
            dbp: 85.0,
        }];
        let mut buf = Vec::new();
        write_labels(&mut buf, &rows).unwrap();
        assert_eq!(read_labels(&buf[..]).unwrap(), rows);
    }
}
