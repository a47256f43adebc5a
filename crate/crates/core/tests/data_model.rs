mod common;

use std::fs;
use std::path::Path;

use lse_core::data::{assemble_dataset, encode_matrix, load_matrix, save_matrix, write_dataset, Manifest};
use lse_core::lse::{encode_model, load_model, save_model};
use lse_core::{train, ErrorClass, Hyperparams, ModalityMatrix};
use nalgebra::DMatrix;
use proptest::prelude::*;

const MINIMAL: &str = r#"
labels = "labels.txt"

[split]
seen = [0, 1]
unseen = [2]

[[modalities]]
name = "visual"
path = "visual.lsem"
kind = "visual"

[[modalities]]
name = "attr"
path = "attr.lsem"
kind = "semantic"

[[prototypes]]
modality_name = "attr"
path = "attr_protos.lsem"
class_ids = [0, 1, 2]

[class_names]
0 = "zebra"
2 = "okapi"
"#;

fn save(dir: &Path, name: &str, m: DMatrix<f64>) {
    save_matrix(&ModalityMatrix::new(name, m).unwrap(), dir.join(name)).unwrap();
}

/// Writes the minimal consistent dataset files; `manifest` replaces the
/// default manifest text.
fn minimal_dir(manifest: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("labels.txt"), "0\n0\n1\n1\n").unwrap();
    save(p, "visual.lsem", DMatrix::from_fn(3, 4, |i, j| (i * 4 + j) as f64 + 0.5));
    save(p, "visual5.lsem", DMatrix::from_fn(3, 5, |i, j| (i + j) as f64));
    save(p, "attr.lsem", DMatrix::from_fn(2, 4, |i, j| (i as f64) - (j as f64)));
    save(p, "attr_protos.lsem", DMatrix::from_fn(2, 3, |i, j| (i * 3 + j) as f64 + 1.0));
    save(p, "attr_protos01.lsem", DMatrix::from_fn(2, 2, |i, j| (i + j) as f64 + 1.0));
    save(p, "attr_protos_wide.lsem", DMatrix::from_fn(3, 3, |i, j| (i + j) as f64 + 1.0));
    fs::write(p.join("manifest.toml"), manifest).unwrap();
    dir
}

fn assemble_err(manifest: &str) -> String {
    let dir = minimal_dir(manifest);
    match assemble_dataset(dir.path().join("manifest.toml")) {
        Ok(_) => panic!("manifest was accepted:\n{manifest}"),
        Err(e) => {
            assert_eq!(e.class(), ErrorClass::Validation, "{e}");
            e.to_string()
        }
    }
}

#[test]
fn minimal_manifest_assembles() {
    let dir = minimal_dir(MINIMAL);
    let ds = assemble_dataset(dir.path()).unwrap();
    assert_eq!(ds.num_instances(), 4);
    assert_eq!(ds.labels().as_slice(), &[0, 0, 1, 1]);
    assert_eq!(ds.split().seen(), &[0, 1]);
    assert_eq!(ds.split().unseen(), &[2]);
    assert_eq!(ds.visual().values()[(1, 2)], 6.5);
    assert_eq!(ds.semantic_names(), vec!["attr"]);
    assert_eq!(ds.class_names().get(&2).map(String::as_str), Some("okapi"));
    // assembly is deterministic
    assert_eq!(assemble_dataset(dir.path()).unwrap(), ds);
}

#[test]
fn manifest_path_may_omit_extension() {
    let dir = minimal_dir(MINIMAL);
    let a = assemble_dataset(dir.path().join("manifest")).unwrap();
    let b = assemble_dataset(dir.path().join("manifest.toml")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn missing_prototype_is_rejected() {
    let m = MINIMAL
        .replace("attr_protos.lsem", "attr_protos01.lsem")
        .replace("class_ids = [0, 1, 2]", "class_ids = [0, 1]");
    assert!(assemble_err(&m).contains("missing prototype"));
}

#[test]
fn instance_misalignment_is_rejected() {
    let m = MINIMAL.replace("\"visual.lsem\"", "\"visual5.lsem\"");
    assert!(assemble_err(&m).contains("instance misalignment"));
}

#[test]
fn split_overlap_is_rejected() {
    let m = MINIMAL.replace("unseen = [2]", "unseen = [1, 2]");
    assert!(assemble_err(&m).contains("seen/unseen overlap: class 1"));
}

#[test]
fn every_constructible_violation_is_rejected() {
    let mutations: Vec<(&str, String)> = vec![
        ("label outside split", MINIMAL.replace("seen = [0, 1]", "seen = [0]")),
        ("overlap", MINIMAL.replace("unseen = [2]", "unseen = [0, 2]")),
        ("prototype dimension", MINIMAL.replace("attr_protos.lsem", "attr_protos_wide.lsem")),
        ("unknown prototype modality", MINIMAL.replace("modality_name = \"attr\"", "modality_name = \"words\"")),
        ("visual without path", MINIMAL.replace("path = \"visual.lsem\"\n", "")),
        ("semantic first", MINIMAL.replace("kind = \"visual\"", "kind = \"semantic\"")),
        ("duplicate modality", MINIMAL.replace("name = \"attr\"\npath", "name = \"visual\"\npath")),
        ("unknown key", MINIMAL.replace("[split]", "colour = \"red\"\n[split]")),
        ("missing file", MINIMAL.replace("attr.lsem", "absent.lsem")),
        ("class name key", MINIMAL.replace("0 = \"zebra\"", "zero = \"zebra\"")),
        ("duplicate prototype id", MINIMAL.replace("class_ids = [0, 1, 2]", "class_ids = [0, 1, 1]")),
        ("empty prototype list", MINIMAL.replace("[[prototypes]]\nmodality_name = \"attr\"\npath = \"attr_protos.lsem\"\nclass_ids = [0, 1, 2]\n", "")),
    ];
    for (what, m) in mutations {
        assert_ne!(m, MINIMAL, "mutation `{what}` did not apply");
        let dir = minimal_dir(&m);
        assert!(assemble_dataset(dir.path()).is_err(), "mutation `{what}` accepted");
    }
}

#[test]
fn bad_label_line_is_located() {
    let dir = minimal_dir(MINIMAL);
    fs::write(dir.path().join("labels.txt"), "0\n0\nbird\n1\n").unwrap();
    let e = assemble_dataset(dir.path()).unwrap_err().to_string();
    assert!(e.contains("line 3"), "{e}");
}

#[test]
fn written_dataset_reassembles_identically() {
    let mut r = common::rng(4);
    let ds = common::prototype_dataset(&mut r, 5, 2, 3, 6, &[4, 3]);
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_dataset(&ds, dir.path()).unwrap();
    let back = assemble_dataset(&manifest).unwrap();
    assert_eq!(back, ds);
    // expanded semantic modalities are stored through their prototypes only
    let text = fs::read_to_string(&manifest).unwrap();
    let parsed = Manifest::from_toml(&text, &manifest).unwrap();
    assert!(parsed.modalities.iter().skip(1).all(|m| m.path.is_none()));

    let ds = common::random_dataset(&mut r, 5, 2, 3, 6, &[4]);
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(assemble_dataset(write_dataset(&ds, dir.path()).unwrap()).unwrap(), ds);
}

#[test]
fn matrix_file_size_and_csv_fallback() {
    let dir = tempfile::tempdir().unwrap();
    let m = DMatrix::from_row_slice(2, 3, &[1.0, -2.5, 3.0, 0.0, 1e-300, -0.0]);
    save(dir.path(), "m.lsem", m.clone());
    assert_eq!(fs::metadata(dir.path().join("m.lsem")).unwrap().len(), 24 + 8 * 6);
    assert_eq!(encode_matrix(&m).len(), 24 + 8 * 6);
    let back = load_matrix(dir.path().join("m.lsem")).unwrap();
    assert_eq!(back.values(), &m);

    fs::write(dir.path().join("m.csv"), "1, -2.5, 3\n0, 1e-300, -0\n").unwrap();
    assert_eq!(load_matrix(dir.path().join("m.csv")).unwrap().values(), &m);
}

#[test]
fn model_file_round_trip() {
    let mut r = common::rng(8);
    let ds = common::random_dataset(&mut r, 6, 0, 4, 7, &[5, 3]);
    let model = train(&ds, Hyperparams::new(0.3, 3).unwrap()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.lse");
    save_model(&model, &path).unwrap();
    let bytes = fs::read(&path).unwrap();
    assert_eq!(bytes, encode_model(&model));
    let back = load_model(&path).unwrap();
    assert_eq!(back, model);
    assert_eq!(encode_model(&back), bytes);
}

#[test]
fn truncated_model_file_is_a_format_error() {
    let mut r = common::rng(9);
    let ds = common::random_dataset(&mut r, 4, 0, 3, 5, &[3]);
    let model = train(&ds, Hyperparams::new(0.1, 2).unwrap()).unwrap();
    let bytes = encode_model(&model);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cut.lse");
    for cut in [3, 8, bytes.len() / 2, bytes.len() - 1] {
        fs::write(&path, &bytes[..cut]).unwrap();
        let e = load_model(&path).unwrap_err();
        assert_eq!(e.class(), ErrorClass::Validation, "cut {cut}: {e}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matrix_files_round_trip_bitwise(
        rows in 1usize..6,
        cols in 1usize..6,
        seed in any::<u64>(),
    ) {
        let mut r = common::rng(seed);
        let m = common::gaussian(&mut r, rows, cols).map(|v| v * 1e3f64.powf(v));
        let dir = tempfile::tempdir().unwrap();
        save(dir.path(), "x.lsem", m.clone());
        let back = load_matrix(dir.path().join("x.lsem")).unwrap();
        for (a, b) in back.values().iter().zip(m.iter()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
