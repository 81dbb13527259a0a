use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use acs_core::fixture::{generate_release, oracle_tables, FixtureSpec};
use acs_core::pipeline::{build_release, BuildOptions};

fn tree_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    out
}

#[test]
fn default_fixture_round_trips_byte_for_byte() {
    let spec = FixtureSpec::default();
    let src = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let summary = generate_release(&spec, src.path()).unwrap();
    assert_eq!((summary.geo_files, summary.sequences, summary.data_pairs), (3, 2, 6));

    let report = build_release(src.path(), out.path(), spec.release, &BuildOptions::default()).unwrap();
    assert_eq!(report.tables.len(), 10);
    let truth = tree_bytes(&summary.truth_dir);
    assert_eq!(truth.len(), 11);
    let built = tree_bytes(&report.release_dir.join("tables"));
    assert_eq!(built.len(), 10);
    for (name, bytes) in &built {
        assert!(truth[name] == *bytes, "{name} differs from ground truth");
    }
    assert_eq!(fs::read(&report.dictionary_path).unwrap(), truth["dictionary.json"]);

    // National stacking and conservation.
    for t in &report.tables {
        assert_eq!(t.state_rows.values().sum::<usize>(), t.rows);
        assert_eq!(t.rows, 600);
    }
    let wide = report
        .tables
        .iter()
        .find(|t| t.table_id == "B01005")
        .unwrap();
    assert_eq!(wide.numeric_cells + wide.jam_cells, 600 * 2 * 526);
    let header = fs::read_to_string(&wide.path).unwrap();
    let header = header.lines().next().unwrap();
    assert_eq!(header.split(',').count(), 4 + 1052);

    // Idempotent rebuild.
    let again = build_release(
        src.path(),
        out.path(),
        spec.release,
        &BuildOptions {
            overwrite: true,
            jobs: 2,
            ..BuildOptions::default()
        },
    )
    .unwrap();
    assert_eq!(tree_bytes(&again.release_dir), tree_bytes(&report.release_dir));
}

#[test]
fn annotated_build_matches_annotated_oracle() {
    let spec = FixtureSpec {
        column_counts: vec![2, 3, 7],
        geos_per_state: 15,
        jam_density: 0.3,
        ..FixtureSpec::default()
    };
    let src = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    generate_release(&spec, src.path()).unwrap();
    let report = build_release(
        src.path(),
        out.path(),
        spec.release,
        &BuildOptions {
            annotations: true,
            ..BuildOptions::default()
        },
    )
    .unwrap();
    let truth = oracle_tables(&spec, true).unwrap();
    for t in &report.tables {
        let name = t.path.file_name().unwrap().to_str().unwrap();
        assert_eq!(fs::read_to_string(&t.path).unwrap(), truth.tables[name], "{name}");
    }
}

#[test]
fn generation_is_deterministic() {
    let spec = FixtureSpec {
        geos_per_state: 30,
        ..FixtureSpec::default()
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    generate_release(&spec, a.path()).unwrap();
    generate_release(&spec, b.path()).unwrap();
    assert_eq!(tree_bytes(a.path()), tree_bytes(b.path()));

    let other = tempfile::tempdir().unwrap();
    generate_release(&FixtureSpec { seed: 7, ..spec }, other.path()).unwrap();
    assert_ne!(tree_bytes(a.path()), tree_bytes(other.path()));
}

#[test]
fn planted_tokens_appear_verbatim_in_source() {
    let spec = FixtureSpec {
        geos_per_state: 10,
        ..FixtureSpec::default()
    };
    let src = tempfile::tempdir().unwrap();
    let summary = generate_release(&spec, src.path()).unwrap();
    // Table 5 (B08001) starts after 4 + 10 + 26 + 100 + 526 cells of sequence 1;
    // line 3 is six key fields plus 666 + 2 cells in.
    let est = fs::read_to_string(summary.release_dir.join("data/e20145aa0001000.txt")).unwrap();
    let moe = fs::read_to_string(summary.release_dir.join("data/m20145aa0001000.txt")).unwrap();
    let field = |text: &str| text.lines().nth(7).unwrap().split(',').nth(6 + 666 + 2).unwrap().to_string();
    assert_eq!((field(&est), field(&moe)), ("60".to_string(), "48".to_string()));
}

#[test]
fn oracle_jam_density_extremes() {
    let base = FixtureSpec {
        column_counts: vec![3],
        geos_per_state: 10,
        planted_cells: vec![],
        ..FixtureSpec::default()
    };
    let clean = oracle_tables(&FixtureSpec { jam_density: 0.0, ..base.clone() }, true).unwrap();
    for text in clean.tables.values() {
        for line in text.lines().skip(1) {
            let fields: Vec<&str> = line.rsplitn(13, ',').collect();
            // Value fields come in groups of four: est, moe, est_ann, moe_ann.
            for (i, f) in fields.iter().rev().skip(1).enumerate() {
                assert_eq!(f.is_empty(), i % 4 >= 2, "{line}");
            }
        }
    }
    let jammed = oracle_tables(&FixtureSpec { jam_density: 1.0, ..base }, true).unwrap();
    for text in jammed.tables.values() {
        for line in text.lines().skip(1) {
            let fields: Vec<&str> = line.rsplitn(13, ',').collect();
            for (i, f) in fields.iter().rev().skip(1).enumerate() {
                assert_eq!(f.is_empty(), i % 4 < 2, "{line}");
            }
        }
    }
}
