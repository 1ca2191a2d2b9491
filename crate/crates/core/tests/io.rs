mod common;

use std::fs;

use common::{random_tensor, rng};
use gbtd::io::{
    decode_container, encode_container, export_table, export_trace, load_container, load_labeled,
    load_model, median_trace, read_table_csv, save_container, save_model, synth_generate, Cell,
    ContainerMetadata, ExperimentConfig, ExportFormat, IoError, LabelsManifest,
};
use gbtd::optim::IterRecord;
use gbtd::{ConstraintScheme, ConvergenceTrace, DenseTensor, GroupFlavor, Method, ResidualState};

#[test]
fn container_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng(1);
    let mut t = random_tensor(&[3, 4, 5], &mut r);
    t.set(&[0, 0, 0], -0.0);
    t.set(&[1, 0, 0], f64::MIN_POSITIVE / 3.0);
    let path = dir.path().join("t.gbtd");
    save_container(&path, &t, None).unwrap();
    let (back, meta) = load_container(&path).unwrap();
    assert!(meta.is_none());
    assert_eq!(back.dims(), t.dims());
    let bits = |x: &DenseTensor| x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&back), bits(&t));
}

#[test]
fn corrupt_files_give_distinct_errors() {
    let dir = tempfile::tempdir().unwrap();
    let t = DenseTensor::from_fn(&[2, 3], |i| i[0] as f64 + 0.5 * i[1] as f64).unwrap();
    let bytes = encode_container(&t, None).unwrap();
    let trunc = dir.path().join("trunc.gbtd");
    fs::write(&trunc, &bytes[..bytes.len() - 8]).unwrap();
    assert!(matches!(load_container(&trunc), Err(IoError::TruncatedPayload { .. })));
    let magic = dir.path().join("magic.gbtd");
    fs::write(&magic, b"NOPE0000000000000000").unwrap();
    let err = load_container(&magic).unwrap_err();
    assert_eq!(err.to_string(), "not a GBTD container");
    let mut v9 = bytes.clone();
    v9[4..8].copy_from_slice(&9u32.to_le_bytes());
    assert!(matches!(decode_container(&v9), Err(IoError::UnsupportedVersion(9))));
    let mut elem = bytes.clone();
    elem[8] = 7;
    assert!(matches!(decode_container(&elem), Err(IoError::UnsupportedElementType(7))));
    assert!(matches!(
        load_container(dir.path().join("missing.gbtd")),
        Err(IoError::File { .. })
    ));
}

/// Two 2x2 RGB frames packed by hand: frame-major index, then the pixel
/// index of the column-major vectorized image, then the colour channel.
#[test]
fn hand_packed_image_fixture_matches_loader() {
    let frames = [
        [[[0u8, 10, 20], [30, 40, 50]], [[60, 70, 80], [90, 100, 110]]],
        [[[255, 0, 5], [1, 2, 3]], [[4, 5, 6], [7, 8, 9]]],
    ];
    // image[row][col][channel]; pixel index = row + 2 * col
    let mut bytes = b"GBTD".to_vec();
    bytes.extend_from_slice(&1u32.to_le_bytes());
    bytes.push(0);
    bytes.extend_from_slice(&3u32.to_le_bytes());
    for n in [2u64, 4, 3] {
        bytes.extend_from_slice(&n.to_le_bytes());
    }
    for channel in 0..3 {
        for col in 0..2 {
            for row in 0..2 {
                for frame in &frames {
                    let v = frame[row][col][channel] as f64 / 255.0;
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
    let (t, _) = decode_container(&bytes).unwrap();
    assert_eq!(t.dims(), &[2, 4, 3]);
    for (f, frame) in frames.iter().enumerate() {
        for row in 0..2 {
            for col in 0..2 {
                for ch in 0..3 {
                    let v = t.get(&[f, row + 2 * col, ch]);
                    assert_eq!(v, frame[row][col][ch] as f64 / 255.0);
                    assert_eq!((v * 255.0).round() as u8, frame[row][col][ch]);
                }
            }
        }
    }
    assert_eq!(encode_container(&t, None).unwrap(), bytes);
}

#[test]
fn labels_manifest_and_embedded_labels_load() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng(2);
    let mut manifest = LabelsManifest::default();
    for (i, class) in ["pear", "apple", "pear", "apple"].iter().enumerate() {
        let name = format!("obj{i}.gbtd");
        save_container(dir.path().join(&name), &random_tensor(&[3, 2], &mut r), None).unwrap();
        manifest.labels.insert(name, class.to_string());
    }
    manifest
        .extra
        .insert("intensity_scaling".into(), serde_json::json!("x / 255"));
    let path = dir.path().join("labels.json");
    fs::write(&path, serde_json::to_string(&manifest).unwrap()).unwrap();
    let ds = load_labeled(&path).unwrap();
    assert_eq!(ds.class_names, vec!["apple", "pear"]);
    assert_eq!(ds.labels, vec![1, 0, 1, 0]);
    assert_eq!(ds.instances.len(), 4);

    let stacked = random_tensor(&[3, 2, 3], &mut r);
    let meta = ContainerMetadata {
        labels: Some(vec!["b".into(), "a".into(), "b".into()]),
        ..Default::default()
    };
    let p = dir.path().join("stacked.gbtd");
    save_container(&p, &stacked, Some(&meta)).unwrap();
    let ds = load_labeled(&p).unwrap();
    assert_eq!(ds.labels, vec![1, 0, 1]);
    assert_eq!(ds.instances[2].data(), &stacked.data()[12..18]);

    save_container(&p, &stacked, None).unwrap();
    assert!(matches!(load_labeled(&p), Err(IoError::MissingLabels(_))));
}

fn trace(values: &[f64], kkt: bool) -> ConvergenceTrace {
    let mut t = ConvergenceTrace::new(Method::Gd);
    for (i, &v) in values.iter().enumerate() {
        t.push(IterRecord {
            iter: i,
            objective: v,
            grad_norm: v * 2.0,
            step_norm: 0.1,
            time_s: 0.001 * i as f64,
            inner_iters: 0,
            relative_residual: v.sqrt(),
            kkt_residual: kkt.then_some(v / 3.0),
        });
    }
    t
}

#[test]
fn median_aggregation_is_elementwise() {
    let traces = [
        trace(&[3.0, 2.0, 1.0], false),
        trace(&[1.0, 5.0, 0.5], false),
        trace(&[2.0, 4.0, 0.25], false),
    ];
    let table = median_trace(&traces);
    let obj: Vec<f64> = table
        .column("objective")
        .unwrap()
        .iter()
        .map(|c| c.as_f64().unwrap())
        .collect();
    assert_eq!(obj, vec![2.0, 4.0, 0.5]);
    let short = [trace(&[3.0], false), trace(&[1.0, 0.0], false)];
    let obj = median_trace(&short).column("objective").unwrap();
    assert_eq!(obj[1], Cell::Num(1.5));
}

#[test]
fn csv_export_round_trips_at_full_precision() {
    let dir = tempfile::tempdir().unwrap();
    let t = trace(&[1.0 / 3.0, 0.1, 2.0f64.sqrt() * 1e-13], true);
    let path = dir.path().join("trace.csv");
    export_trace(&t, &path, ExportFormat::Csv).unwrap();
    let back = read_table_csv(&path).unwrap();
    assert_eq!(back.columns.last().unwrap(), "kkt_residual");
    for (row, rec) in back.rows.iter().zip(&t.records) {
        assert_eq!(row[1].as_f64().unwrap(), rec.objective);
        assert_eq!(row[6].as_f64().unwrap(), rec.relative_residual);
        assert_eq!(row[7].as_f64().unwrap(), rec.kkt_residual.unwrap());
    }
    let json = dir.path().join("trace.json");
    export_trace(&t, &json, ExportFormat::Json).unwrap();
    let parsed: gbtd::io::Table = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(parsed.rows.len(), 3);
}

#[test]
fn empty_trace_exports_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.csv");
    export_trace(&ConvergenceTrace::new(Method::Als), &path, ExportFormat::Csv).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("iter,objective"));
    let empty = gbtd::io::Table::new(&["a", "b"]);
    export_table(&empty, &path, ExportFormat::Csv).unwrap();
    assert_eq!(fs::read_to_string(&path).unwrap(), "a,b\n");
}

#[test]
fn synthetic_generation_is_deterministic_and_exact() {
    let cfg = ExperimentConfig::unconstrained_benchmark();
    let (t1, m1) = synth_generate(&cfg, 4).unwrap();
    let (t2, m2) = synth_generate(&cfg, 4).unwrap();
    assert_eq!(t1, t2);
    assert_eq!(m1, m2);
    let s = ResidualState::new(m1, t1).unwrap();
    assert!(s.relative_residual() < 1e-14);

    let cfg = ExperimentConfig::group_benchmark(GroupFlavor::Gtld, ConstraintScheme::Projected);
    let (_, truth) = synth_generate(&cfg, 1).unwrap();
    assert!(gbtd::constraints::separation_violation(&truth) < 1e-10);
    let p = truth.group_weights().unwrap();
    assert!((p.sum() - 5.0).abs() < 1e-12);

    let mut noisy = ExperimentConfig::unconstrained_benchmark();
    noisy.noise_snr = Some(10.0);
    let (t, m) = synth_generate(&noisy, 4).unwrap();
    let rel = ResidualState::new(m, t.clone()).unwrap().relative_residual();
    let expected = 0.1 / (1.0f64 + 0.01).sqrt();
    assert!((rel - expected).abs() < 0.01, "{rel}");
}

#[test]
fn saved_models_reload_to_the_same_residual() {
    let dir = tempfile::tempdir().unwrap();
    for (i, cfg) in [
        ExperimentConfig::unconstrained_benchmark(),
        ExperimentConfig::group_benchmark(GroupFlavor::Glro, ConstraintScheme::Projected),
        ExperimentConfig::group_benchmark(GroupFlavor::Gtld, ConstraintScheme::Lagrange),
    ]
    .into_iter()
    .enumerate()
    {
        let (target, truth) = synth_generate(&cfg, 9).unwrap();
        let model = gbtd::init_random(&truth, 3, 1.0);
        let out = dir.path().join(format!("m{i}"));
        save_model(&model, &out).unwrap();
        let back = load_model(&out).unwrap();
        assert_eq!(back, model);
        let a = ResidualState::new(model, target.clone()).unwrap().relative_residual();
        let b = ResidualState::new(back, target).unwrap().relative_residual();
        assert!((a - b).abs() <= 1e-12);
    }
}
