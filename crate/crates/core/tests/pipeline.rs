//! Record-to-prediction chain across module boundaries.

use morphobp::bp_model::{BpRegressor, ModelConfig, Target};
use morphobp::io::{parse_record, write_record};
use morphobp::morpho_grid::{GridConfig, MorphoTemporalGrid};
use morphobp::pipeline::{labeled_grids, represent};
use morphobp::signal_prep::PrepConfig;
use morphobp::synth_oscillometry::{generate_cohort, generate_record, SyntheticCohortConfig};
use morphobp::trainer::{predict, run_experiment, Optimizer, TrainingConfig};

fn small_model() -> ModelConfig {
    ModelConfig {
        n_kernels: 2,
        kernel_width: 9,
        lstm_layers: 1,
        lstm_hidden: 2,
        dense_widths: vec![8],
        grid_size: 215,
        reverse_sequence: false,
    }
}

#[test]
fn synthetic_record_becomes_a_full_grid() {
    let config = SyntheticCohortConfig {
        noise_sd: 0.05,
        ..SyntheticCohortConfig::default()
    };
    let (record, truth) = generate_record(&config, 3).unwrap();
    let (prep, grid) = represent(&record, &PrepConfig::default(), &GridConfig::default()).unwrap();
    assert_eq!(grid.size(), 215);
    assert!(grid.values().iter().all(|v| v.is_finite()));
    assert!(prep.pulses.len().abs_diff(truth.beat_times.len()) <= 2);
    assert_eq!(grid.column_pressure()[0], 21);
    assert_eq!(grid.column_pressure()[214], 235);
}

#[test]
fn record_file_feeds_the_same_grid() {
    let (record, _) = generate_record(&SyntheticCohortConfig::default(), 8).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rec.csv");
    let mut bytes = Vec::new();
    write_record(&mut bytes, &record).unwrap();
    std::fs::write(&path, bytes).unwrap();
    let parsed = parse_record(&path, 100.0).unwrap();
    let prep = PrepConfig::default();
    let (_, a) = represent(&record, &prep, &GridConfig::default()).unwrap();
    let (_, b) = represent(&parsed, &prep, &GridConfig::default()).unwrap();
    let worst = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-6, "grids differ by {worst}");
}

#[test]
fn grid_csv_round_trip() {
    let (record, _) = generate_record(&SyntheticCohortConfig::default(), 12).unwrap();
    let (_, grid) = represent(&record, &PrepConfig::default(), &GridConfig::default()).unwrap();
    let mut bytes = Vec::new();
    grid.write_csv(&mut bytes, &record.subject_id, &record.record_id).unwrap();
    let (s, r, back) = MorphoTemporalGrid::read_csv(bytes.as_slice()).unwrap();
    assert_eq!((s.as_str(), r.as_str()), (record.subject_id.as_str(), record.record_id.as_str()));
    assert_eq!(back.values(), grid.values());
    assert_eq!(back.column_pressure(), grid.column_pressure());
}

#[test]
fn tiny_experiment_checkpoints_reload_to_the_same_predictions() {
    let cohort = generate_cohort(&SyntheticCohortConfig {
        n_subjects: 4,
        records_per_subject: 2,
        seed: 21,
        ..SyntheticCohortConfig::default()
    })
    .unwrap();
    let data = labeled_grids(&cohort.records, &PrepConfig::default(), &GridConfig::default()).unwrap();
    let config = TrainingConfig {
        max_epochs: 3,
        optimizer: Optimizer::Adam,
        seed: 4,
        ..TrainingConfig::default()
    };
    let exp = run_experiment(&data, &small_model(), &config, &[Target::Dbp], 2).unwrap();
    assert_eq!(exp.predictions.len(), 2 * data.len());
    assert_eq!(exp.folds.len(), 2 * 4);
    for fr in &exp.folds {
        let mut bytes = Vec::new();
        fr.model.save(&mut bytes, fr.target).unwrap();
        let (model, target) = BpRegressor::load(bytes.as_slice()).unwrap();
        assert_eq!(target, Target::Dbp);
        let grids: Vec<&MorphoTemporalGrid> = data
            .iter()
            .filter(|d| d.subject_id == fr.fold.test_subject)
            .map(|d| &d.grid)
            .collect();
        assert_eq!(predict(&model, &grids).unwrap(), predict(&fr.model, &grids).unwrap());
    }
}
