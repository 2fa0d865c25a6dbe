//! Replays the checked-in fuzz seeds through the parser entry points.

use std::fs;
use std::path::PathBuf;

use hypoc::config::TrainConfig;
use hypoc::data::{self, SyntheticSpec};
use hypoc::metrics::MetricReport;
use hypoc::trainer::Checkpoint;

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut out: Vec<(String, Vec<u8>)> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    out.sort();
    assert!(!out.is_empty());
    out
}

fn text(bytes: &[u8]) -> &str {
    std::str::from_utf8(bytes).unwrap()
}

#[test]
fn feature_csv_seeds() {
    for (name, bytes) in seeds("feature_csv") {
        let parsed = data::parse_features(bytes.as_slice());
        let valid = matches!(name.as_str(), "two_rows.csv" | "golden_head.csv");
        assert_eq!(parsed.is_ok(), valid, "{name}");
        if let Ok(batch) = parsed {
            let mut out = Vec::new();
            data::write_features(&batch, &mut out).unwrap();
            assert_eq!(data::parse_features(out.as_slice()).unwrap(), batch);
        }
    }
}

#[test]
fn train_config_seeds() {
    for (name, bytes) in seeds("train_config") {
        let parsed = TrainConfig::from_json_str(text(&bytes));
        assert_eq!(parsed.is_ok(), name != "odd_batch.json", "{name}");
        if let Ok(cfg) = parsed {
            assert_eq!(TrainConfig::from_json_str(&cfg.to_json()).unwrap(), cfg);
        }
    }
}

#[test]
fn checkpoint_seeds() {
    for (name, bytes) in seeds("checkpoint") {
        let parsed = Checkpoint::from_json_str(text(&bytes));
        assert_eq!(parsed.is_ok(), name == "tiny.json", "{name}");
        if let Ok(cp) = parsed {
            assert_eq!(cp.to_json(), text(&bytes));
        }
    }
}

#[test]
fn synthetic_spec_seeds() {
    for (name, bytes) in seeds("synthetic_spec") {
        assert_eq!(
            SyntheticSpec::from_json_str(text(&bytes)).is_ok(),
            name == "golden.json",
            "{name}"
        );
    }
}

#[test]
fn metric_report_seeds() {
    for (name, bytes) in seeds("metric_report") {
        assert_eq!(
            MetricReport::from_text(text(&bytes)).is_ok(),
            name == "golden.txt",
            "{name}"
        );
    }
}
