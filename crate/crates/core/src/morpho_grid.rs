//! Fixed-size pressure × morphology grid built from cleaned pulses.
//!
//! Columns are integer cuff pressures `p_min + 1 ..= p_max` (215 columns for
//! the default 20–235 mmHg range); rows are the pulse resampled to as many
//! samples as there are columns. Columns that receive no pulse are filled
//! row-wise by linear interpolation between, or extrapolation from, the
//! nearest columns that did.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal_prep::PulseSegment;

pub const DEFAULT_GRID_SIZE: usize = 215;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Original,
    Interpolated,
    Extrapolated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub p_min: i32,
    pub p_max: i32,
    /// Clamp extrapolated values to the per-row range of original columns.
    pub clamp_extrapolation: bool,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            p_min: 20,
            p_max: 235,
            clamp_extrapolation: false,
        }
    }
}

impl GridConfig {
    pub fn size(&self) -> usize {
        (self.p_max - self.p_min).max(0) as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.p_max - self.p_min < 2 {
            return Err(Error::InvalidConfig(format!(
                "grid pressure range [{}, {}] must span at least 2 mmHg",
                self.p_min, self.p_max
            )));
        }
        Ok(())
    }
}

/// Square grid, rows = morphology sample, columns = cuff pressure.
#[derive(Debug, Clone, PartialEq)]
pub struct MorphoTemporalGrid {
    size: usize,
    /// Row-major `size × size`.
    values: Vec<f64>,
    column_pressure: Vec<i32>,
    provenance: Vec<Provenance>,
}

impl MorphoTemporalGrid {
    /// Wraps row-major values; every column is tagged original.
    pub fn from_rows(size: usize, values: Vec<f64>, first_pressure: i32) -> Result<Self> {
        if size == 0 || values.len() != size * size {
            return Err(Error::Shape(format!(
                "grid of size {size} needs {} values, got {}",
                size * size,
                values.len()
            )));
        }
        Ok(Self {
            size,
            values,
            column_pressure: (0..size as i32).map(|j| first_pressure + j).collect(),
            provenance: vec![Provenance::Original; size],
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.size + col]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.size).map(|r| self.get(r, col)).collect()
    }

    pub fn column_pressure(&self) -> &[i32] {
        &self.column_pressure
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    /// Column index whose pressure is nearest `pressure` (ties → lower).
    pub fn column_for(&self, pressure: f64) -> usize {
        nearest_column(self.column_pressure[0], self.size, pressure)
    }

    /// Grid with columns in reverse pressure order.
    pub fn reversed_columns(&self) -> Self {
        let n = self.size;
        let mut values = vec![0.0; n * n];
        for r in 0..n {
            for c in 0..n {
                values[r * n + c] = self.values[r * n + (n - 1 - c)];
            }
        }
        Self {
            size: n,
            values,
            column_pressure: self.column_pressure.iter().rev().copied().collect(),
            provenance: self.provenance.iter().rev().copied().collect(),
        }
    }

    /// One header line `subject_id,record_id,p_min,p_max`, then one CSV line
    /// per column (column-major values).
    pub fn write_csv<W: Write>(&self, mut w: W, subject_id: &str, record_id: &str) -> Result<()> {
        let p_min = self.column_pressure[0] - 1;
        let p_max = self.column_pressure[self.size - 1];
        writeln!(w, "{subject_id},{record_id},{p_min},{p_max}")?;
        let mut line = String::new();
        for c in 0..self.size {
            line.clear();
            for r in 0..self.size {
                if r > 0 {
                    line.push(',');
                }
                line.push_str(&format!("{}", self.get(r, c)));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    /// Inverse of [`MorphoTemporalGrid::write_csv`]. Provenance is not
    /// serialized and reads back as original.
    pub fn read_csv<R: BufRead>(r: R) -> Result<(String, String, Self)> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or(Error::Parse {
                line: 1,
                message: "missing header".into(),
            })??;
        let fields: Vec<&str> = header.trim().split(',').collect();
        if fields.len() != 4 || fields[0].is_empty() || fields[1].is_empty() {
            return Err(Error::Parse {
                line: 1,
                message: "expected subject_id,record_id,p_min,p_max".into(),
            });
        }
        let parse_i = |s: &str| {
            s.trim().parse::<i32>().map_err(|e| Error::Parse {
                line: 1,
                message: format!("bad pressure {s:?}: {e}"),
            })
        };
        let (p_min, p_max) = (parse_i(fields[2])?, parse_i(fields[3])?);
        if p_max - p_min < 1 {
            return Err(Error::Parse {
                line: 1,
                message: "p_max must exceed p_min".into(),
            });
        }
        let n = (p_max - p_min) as usize;
        let mut values = vec![0.0; n * n];
        let mut cols = 0;
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let lineno = i + 2;
            if cols == n {
                return Err(Error::Parse {
                    line: lineno,
                    message: "too many columns".into(),
                });
            }
            let mut count = 0;
            for (r, tok) in line.split(',').enumerate() {
                if r >= n {
                    return Err(Error::Parse {
                        line: lineno,
                        message: format!("expected {n} values"),
                    });
                }
                values[r * n + cols] = tok.trim().parse::<f64>().map_err(|e| Error::Parse {
                    line: lineno,
                    message: format!("bad value {tok:?}: {e}"),
                })?;
                count += 1;
            }
            if count != n {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("expected {n} values, got {count}"),
                });
            }
            cols += 1;
        }
        if cols != n {
            return Err(Error::Parse {
                line: cols + 2,
                message: format!("expected {n} columns, got {cols}"),
            });
        }
        let grid = Self::from_rows(n, values, p_min + 1)?;
        Ok((fields[0].to_string(), fields[1].to_string(), grid))
    }
}

fn nearest_column(first_pressure: i32, size: usize, pressure: f64) -> usize {
    // Ties round towards the lower pressure.
    let offset = (pressure - first_pressure as f64 - 0.5).ceil();
    offset.clamp(0.0, (size - 1) as f64) as usize
}

/// Cuff pressure at which a pulse occurred: the slow component at its peak.
pub fn pulse_pressure(pulse: &PulseSegment, slow: &[f64]) -> f64 {
    slow[pulse.peak_index]
}

/// Linear-interpolation resampling onto `n` equally spaced points spanning
/// the pulse; endpoints are reproduced exactly.
pub fn resample_pulse(samples: &[f64], n: usize) -> Result<Vec<f64>> {
    let m = samples.len();
    if m < 2 {
        return Err(Error::DegeneratePulse(m));
    }
    if n < 2 {
        return Err(Error::InvalidConfig(format!("cannot resample to {n} points")));
    }
    if m == n {
        return Ok(samples.to_vec());
    }
    let span = (m - 1) as f64;
    let denom = (n - 1) as f64;
    Ok((0..n)
        .map(|j| {
            if j == n - 1 {
                return samples[m - 1];
            }
            let pos = j as f64 * span / denom;
            let i = pos.floor() as usize;
            let frac = pos - i as f64;
            if frac == 0.0 {
                samples[i]
            } else {
                samples[i] + (samples[i + 1] - samples[i]) * frac
            }
        })
        .collect())
}

/// Places each non-outlier pulse in its nearest pressure column (row-wise
/// mean when several share a column) and fills the remaining columns.
pub fn build_grid(
    pulses: &[PulseSegment],
    omw: &[f64],
    slow: &[f64],
    config: &GridConfig,
) -> Result<MorphoTemporalGrid> {
    config.validate()?;
    let n = config.size();
    let first = config.p_min + 1;
    let kept: Vec<&PulseSegment> = pulses.iter().filter(|p| !p.is_outlier).collect();
    if kept.len() < 2 {
        return Err(Error::InsufficientPulses {
            found: kept.len(),
            required: 2,
        });
    }

    let mut sums = vec![vec![0.0; n]; n]; // per column
    let mut counts = vec![0usize; n];
    let mut placed: Vec<(usize, Vec<f64>)> = Vec::with_capacity(kept.len());
    for p in &kept {
        let col = nearest_column(first, n, pulse_pressure(p, slow));
        placed.push((col, resample_pulse(p.samples(omw), n)?));
    }
    // Summation order must not depend on pulse order.
    placed.sort_by(|a, b| {
        a.0.cmp(&b.0).then_with(|| {
            a.1.iter()
                .zip(&b.1)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    for (col, column) in placed {
        if counts[col] == 0 {
            sums[col] = column;
        } else {
            for (s, v) in sums[col].iter_mut().zip(&column) {
                *s += v;
            }
        }
        counts[col] += 1;
    }
    let originals: Vec<usize> = (0..n).filter(|&c| counts[c] > 0).collect();
    let mut columns: Vec<Vec<f64>> = sums;
    for &c in &originals {
        if counts[c] > 1 {
            let k = counts[c] as f64;
            columns[c].iter_mut().for_each(|v| *v /= k);
        }
    }

    let mut provenance = vec![Provenance::Interpolated; n];
    for &c in &originals {
        provenance[c] = Provenance::Original;
    }

    if originals.len() == 1 {
        // One occupied column: constant continuation in both directions.
        let c0 = originals[0];
        for c in 0..n {
            if c != c0 {
                columns[c] = columns[c0].clone();
                provenance[c] = Provenance::Extrapolated;
            }
        }
    } else {
        let (lo, hi) = (originals[0], originals[originals.len() - 1]);
        for pair in originals.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let width = (b - a) as f64;
            for c in a + 1..b {
                let (wa, wb) = ((b - c) as f64, (c - a) as f64);
                columns[c] = (0..n)
                    .map(|r| (wa * columns[a][r] + wb * columns[b][r]) / width)
                    .collect();
            }
        }
        let extrapolate = |anchor: usize, other: usize, c: usize, cols: &Vec<Vec<f64>>| {
            let step = (c as f64 - anchor as f64) / (anchor as f64 - other as f64);
            (0..n)
                .map(|r| cols[anchor][r] + (cols[anchor][r] - cols[other][r]) * step)
                .collect::<Vec<f64>>()
        };
        for c in 0..lo {
            columns[c] = extrapolate(lo, originals[1], c, &columns);
            provenance[c] = Provenance::Extrapolated;
        }
        for c in hi + 1..n {
            columns[c] = extrapolate(hi, originals[originals.len() - 2], c, &columns);
            provenance[c] = Provenance::Extrapolated;
        }
    }

    if config.clamp_extrapolation {
        for r in 0..n {
            let (min, max) = originals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |m, &c| {
                (m.0.min(columns[c][r]), m.1.max(columns[c][r]))
            });
            for c in 0..n {
                if provenance[c] == Provenance::Extrapolated {
                    columns[c][r] = columns[c][r].clamp(min, max);
                }
            }
        }
    }

    let mut values = vec![0.0; n * n];
    for (c, column) in columns.iter().enumerate() {
        for (r, v) in column.iter().enumerate() {
            values[r * n + c] = *v;
        }
    }
    Ok(MorphoTemporalGrid {
        size: n,
        values,
        column_pressure: (0..n as i32).map(|j| first + j).collect(),
        provenance,
    })
}
