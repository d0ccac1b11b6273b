//! On-disk format fidelity and command-line behavior: binary image batches,
//! CSV vector files, report files, exit codes, and machine-readable stdout.

use std::path::Path;
use std::process::Command;

use incrlearn_bench::{
    load_dataset, load_report_json, read_cifar_file, read_csv_vectors, report_to_csv,
    run_protocol, write_csv_vectors, CifarVariant, DatasetSpec, Method, MixtureSpec,
    ProtocolConfig, ReportFormat, CSV_HEADER,
};

const PIXELS: usize = 3 * 32 * 32;

/// Deterministic but non-trivial pixel bytes.
fn fill_pixels(bytes: &mut Vec<u8>, salt: usize) {
    bytes.extend((0..PIXELS).map(|i| ((i * 31 + salt * 97) % 256) as u8));
}

#[test]
fn cifar10_bytes_survive_the_value_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data_batch_1.bin");
    let mut original = Vec::new();
    for (i, label) in [0u8, 3, 9, 7].iter().enumerate() {
        original.push(*label);
        fill_pixels(&mut original, i);
    }
    std::fs::write(&path, &original).unwrap();

    let batch = read_cifar_file(&path, CifarVariant::Cifar10).unwrap();
    assert_eq!(batch.len(), 4);
    assert_eq!(batch.labels(), &[1, 4, 10, 8]);

    // Values are bytes scaled into [0, 1]; scaling back must reproduce the
    // file bitwise.
    let mut rebuilt = Vec::with_capacity(original.len());
    for i in 0..batch.len() {
        rebuilt.push(batch.labels()[i] as u8 - 1);
        for v in batch.row(i) {
            rebuilt.push((v * 255.0).round() as u8);
        }
    }
    assert_eq!(rebuilt, original, "byte-for-byte round trip");
}

#[test]
fn cifar100_reads_the_fine_label_and_whole_directories_load() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["train.bin", "test.bin"] {
        let mut bytes = Vec::new();
        for (i, fine) in [2u8, 5].iter().enumerate() {
            bytes.push(19); // coarse label, ignored
            bytes.push(*fine);
            fill_pixels(&mut bytes, i);
        }
        std::fs::write(dir.path().join(name), &bytes).unwrap();
    }
    let spec = DatasetSpec::CifarBinary {
        dir: dir.path().to_path_buf(),
        variant: CifarVariant::Cifar100Fine,
    };
    let (train, test) = load_dataset(&spec).unwrap();
    assert_eq!(train.labels(), &[3, 6]);
    assert_eq!(test.labels(), &[3, 6]);
}

#[test]
fn truncated_cifar_files_name_the_bad_offset() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data_batch_1.bin");
    let mut bytes = vec![1u8];
    fill_pixels(&mut bytes, 0);
    bytes.extend([9u8, 9, 9]); // trailing garbage
    std::fs::write(&path, &bytes).unwrap();

    let err = read_cifar_file(&path, CifarVariant::Cifar10).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("3073"), "record size absent from: {msg}");
    assert!(msg.contains("offset 3073"), "offset absent from: {msg}");
}

fn quick_report() -> incrlearn_bench::ExperimentReport {
    let mut spec = MixtureSpec::new(4, 6);
    spec.train_per_class = 24;
    spec.test_per_class = 10;
    let mut cfg = ProtocolConfig::new(Method::Finetune, 4, 2, 6);
    cfg.epochs = 5;
    cfg.hidden = vec![12];
    run_protocol(&cfg, &DatasetSpec::GaussianMixture(spec))
        .unwrap()
        .report
}

#[test]
fn report_json_file_round_trip_is_exact() {
    let report = quick_report();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.json");
    incrlearn_bench::emit_report(&report, ReportFormat::Json, &path).unwrap();
    let back = load_report_json(&path).unwrap();
    assert_eq!(report, back, "every field including floats and confusions");
}

#[test]
fn report_csv_emission_matches_the_in_memory_rendering() {
    let report = quick_report();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.csv");
    incrlearn_bench::emit_report(&report, ReportFormat::Csv, &path).unwrap();
    let on_disk = std::fs::read_to_string(&path).unwrap();
    assert_eq!(on_disk, report_to_csv(&report));
    let mut lines = on_disk.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    assert_eq!(lines.count(), report.increments.len());
}

mod csv_vectors {
    use super::*;
    use incrlearn_core::{LabeledBatch, SourceTag};
    use proptest::prelude::*;

    /// Equal-width rows of arbitrary finite doubles (subnormals, negative
    /// zero, huge magnitudes included).
    fn rows_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
        let finite = any::<f64>().prop_filter("finite", |v| v.is_finite());
        (1usize..4).prop_flat_map(move |dim| {
            prop::collection::vec(prop::collection::vec(finite.clone(), dim), 1..8)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn arbitrary_finite_values_round_trip_bitwise(
            rows in rows_strategy(),
            labels_seed in any::<u64>(),
        ) {
            let labels: Vec<usize> = (0..rows.len())
                .map(|i| 1 + ((labels_seed as usize).wrapping_add(i) % 5))
                .collect();
            let batch =
                LabeledBatch::from_rows(&rows, labels.clone(), SourceTag::NewData).unwrap();

            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("v.csv");
            write_csv_vectors(&batch, &path).unwrap();
            let back = read_csv_vectors(&path).unwrap();

            prop_assert_eq!(back.labels(), batch.labels());
            let a: Vec<u64> = batch.inputs().to_vec().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = back.inputs().to_vec().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b, "bit patterns must survive the text format");
        }
    }
}

mod cli {
    use super::*;

    fn bin() -> Command {
        Command::new(env!("CARGO_BIN_EXE_incrlearn"))
    }

    fn tiny_protocol_args(cmd: &mut Command) {
        cmd.args([
            "--classes",
            "4",
            "--parts",
            "2",
            "--epochs",
            "5",
            "--hidden",
            "12",
            "--train-per-class",
            "20",
            "--test-per-class",
            "8",
        ]);
    }

    #[test]
    fn unknown_method_is_a_usage_error() {
        let out = bin().args(["run", "--method", "nope"]).output().unwrap();
        assert_eq!(out.status.code(), Some(1));
        let stderr = String::from_utf8_lossy(&out.stderr);
        assert!(stderr.contains("method"), "stderr: {stderr}");
    }

    #[test]
    fn missing_config_file_maps_to_io_exit_code() {
        let out = bin()
            .args(["run", "--config", "/nonexistent/config.toml"])
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(2));
    }

    #[test]
    fn unknown_config_key_is_rejected_with_location() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bench.conf");
        std::fs::write(&path, "method = finetune\nbogus_knob = 3\n").unwrap();
        let out = bin()
            .args(["run", "--config"])
            .arg(&path)
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(2));
        let stderr = String::from_utf8_lossy(&out.stderr);
        assert!(stderr.contains("bogus_knob"), "stderr: {stderr}");
        assert!(stderr.contains("bench.conf:2"), "stderr: {stderr}");
    }

    #[test]
    fn auto_beta_without_memory_is_a_contract_error() {
        let mut cmd = bin();
        cmd.args(["run", "--method", "finetune", "--beta", "auto"]);
        tiny_protocol_args(&mut cmd);
        let out = cmd.output().unwrap();
        assert_eq!(out.status.code(), Some(1));
    }

    #[test]
    fn run_writes_a_loadable_json_report() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.json");
        let mut cmd = bin();
        cmd.args(["run", "--method", "finetune", "--seed", "1"]);
        tiny_protocol_args(&mut cmd);
        cmd.args(["--format", "json", "--out"]).arg(&path);
        let out = cmd.output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

        let report = load_report_json(&path).unwrap();
        assert_eq!(report.method, "finetune");
        assert_eq!(report.increments.len(), 2);
    }

    #[test]
    fn generated_csv_datasets_feed_back_into_runs() {
        let dir = tempfile::tempdir().unwrap();
        let gen = bin()
            .args([
                "dataset-gen",
                "--classes",
                "4",
                "--train-per-class",
                "16",
                "--test-per-class",
                "6",
                "--seed",
                "2",
                "--out",
            ])
            .arg(dir.path())
            .output()
            .unwrap();
        assert!(gen.status.success(), "{}", String::from_utf8_lossy(&gen.stderr));
        assert!(dir.path().join("train.csv").is_file());
        assert!(dir.path().join("test.csv").is_file());

        let mut cmd = bin();
        cmd.args([
            "run",
            "--method",
            "finetune",
            "--dataset",
            &format!("csv:{}", dir.path().display()),
            "--classes",
            "4",
            "--parts",
            "2",
            "--epochs",
            "4",
            "--hidden",
            "8",
        ]);
        let out = cmd.output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let stdout = String::from_utf8_lossy(&out.stdout);
        assert!(
            stdout.starts_with(CSV_HEADER),
            "default output is the report CSV, got: {stdout}"
        );
    }

    #[test]
    fn beta_sweep_prints_one_best_row() {
        let mut cmd = bin();
        cmd.args([
            "sweep-beta",
            "--method",
            "ours-real",
            "--memory-size",
            "16",
            "--seed",
            "3",
        ]);
        tiny_protocol_args(&mut cmd);
        let out = cmd.output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let stdout = String::from_utf8_lossy(&out.stdout);
        let mut lines = stdout.lines();
        assert_eq!(lines.next(), Some("beta,validation_top1,test_top1,is_best"));
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), 11, "0.0 through 1.0 in steps of 0.1");
        assert_eq!(rows.iter().filter(|r| r.ends_with("true")).count(), 1);
    }
}

/// Keep `Path` in the public-interface smoke imports honest.
#[test]
fn dataset_specs_name_their_sources() {
    let spec = DatasetSpec::CsvVectors {
        dir: Path::new("/tmp/x").to_path_buf(),
    };
    match spec {
        DatasetSpec::CsvVectors { dir } => assert!(dir.ends_with("x")),
        _ => unreachable!(),
    }
}
