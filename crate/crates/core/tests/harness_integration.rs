use std::fs;
use std::path::Path;

use sdge::cluster::Partition;
use sdge::graph::load_labels;
use sdge::harness::generate::SbmConfig;
use sdge::harness::{
    evaluate, run_experiment, write_aggregate_csv, Ablation, AggregateRow, DatasetSpec, ExperimentConfig, MetricsReport,
    RunReport, RunTimings,
};
use sdge::training::SpectralSchedule;

fn small_config(dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        name: "small".into(),
        dataset: DatasetSpec::Sbm {
            sbm: SbmConfig { blocks: 2, block_size: 15, p_in: 0.5, p_out: 0.05 },
            seed: 4,
        },
        output_dir: dir.to_path_buf(),
        ..Default::default()
    };
    cfg.train.epochs = 3;
    cfg.train.order = 2;
    cfg.train.kmeans_restarts = 2;
    cfg
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> T {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn aggregate_matches_per_run_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let outcome = run_experiment(&cfg).unwrap();
    assert_eq!(outcome.runs.len(), 3);

    let g = cfg.dataset.load().unwrap();
    let mut reloaded = Vec::new();
    for seed in [1u64, 2, 3] {
        let dir = tmp.path().join(format!("seed-{seed}"));
        for file in ["metrics.json", "timing.json", "history.csv", "embedding.csv", "partition.txt"] {
            assert!(dir.join(file).is_file(), "missing {file} for seed {seed}");
        }
        let metrics: MetricsReport = read_json(&dir.join("metrics.json"));
        let timings: RunTimings = read_json(&dir.join("timing.json"));

        let partition = Partition::from_labels(&load_labels(&dir.join("partition.txt")).unwrap()).unwrap();
        assert_eq!(evaluate(&g, &partition).unwrap(), metrics);

        reloaded.push(RunReport {
            seed,
            dir,
            metrics,
            timings,
            epochs_run: 0,
            initial_loss: None,
            final_loss: None,
        });
    }

    let recomputed = tmp.path().join("recomputed.csv");
    write_aggregate_csv(&recomputed, &[AggregateRow::from_runs("small", &reloaded)]).unwrap();
    let written = fs::read_to_string(tmp.path().join("aggregate.csv")).unwrap();
    assert_eq!(written, fs::read_to_string(recomputed).unwrap());
    assert_eq!(written.lines().count(), 2);
}

#[test]
fn disabled_propagation_reports_zero_spectral_time() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config(tmp.path());
    cfg.seeds = vec![5];
    cfg.ablation = Ablation { no_spectral: true, ..Default::default() };
    assert_eq!(cfg.ablation.apply(&cfg.train).spectral_schedule, SpectralSchedule::Off);
    let outcome = run_experiment(&cfg).unwrap();
    assert_eq!(outcome.runs[0].timings.spectral, 0.0);
    let timings: RunTimings = read_json(&tmp.path().join("seed-5/timing.json"));
    assert_eq!(timings.spectral, 0.0);
}
