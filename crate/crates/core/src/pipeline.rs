//! Record-to-grid chain shared by the command line and the tests.

use crate::error::Result;
use crate::morpho_grid::{build_grid, GridConfig, MorphoTemporalGrid};
use crate::signal_prep::{preprocess, CuffDeflationRecord, PrepConfig, PreparedWaveform};
use crate::trainer::LabeledGrid;

/// Preprocesses a record and builds its grid.
pub fn represent(
    record: &CuffDeflationRecord,
    prep: &PrepConfig,
    grid: &GridConfig,
) -> Result<(PreparedWaveform, MorphoTemporalGrid)> {
    let prepared = preprocess(record, prep)?;
    let g = build_grid(
        &prepared.pulses,
        &prepared.omw.samples,
        &prepared.omw.slow_component,
        grid,
    )?;
    Ok((prepared, g))
}

/// Grids for a set of records, labeled with their reference pressures.
pub fn labeled_grids(
    records: &[CuffDeflationRecord],
    prep: &PrepConfig,
    grid: &GridConfig,
) -> Result<Vec<LabeledGrid>> {
    records
        .iter()
        .map(|r| {
            let (_, g) = represent(r, prep, grid)?;
            Ok(LabeledGrid {
                subject_id: r.subject_id.clone(),
                record_id: r.record_id.clone(),
                sbp: r.ref_sbp,
                dbp: r.ref_dbp,
                grid: g,
            })
        })
        .collect()
}
