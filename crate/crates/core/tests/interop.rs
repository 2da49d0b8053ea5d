//! Flow files written by an external extractor (`mode: step-span`, extra
//! metadata fields) go through loading, batch assembly and analysis.

use std::path::{Path, PathBuf};

use flowgeom::analysis::{pairwise_matrix, AlignmentPolicy, Measure};
use flowgeom::corpus::{build_index, load_corpus};
use flowgeom::flow::{batch_build, flow_path, load_flows, FlowOptions, FlowSource};
use flowgeom::provider::{read_flow, synth_embedding};

fn sample_corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/sample_corpus.jsonl")
}

/// Bytes as a foreign writer would lay them out, with no knowledge of our
/// serializer: header, f32 rows, u64 length, JSON.
fn foreign_bytes(rows: &[Vec<f32>], meta: &serde_json::Value) -> Vec<u8> {
    let mut b = b"RFLW".to_vec();
    b.extend_from_slice(&1u32.to_le_bytes());
    b.extend_from_slice(&(rows[0].len() as u32).to_le_bytes());
    b.extend_from_slice(&(rows.len() as u32).to_le_bytes());
    for r in rows {
        for x in r {
            b.extend_from_slice(&x.to_le_bytes());
        }
    }
    let json = serde_json::to_vec(meta).unwrap();
    b.extend_from_slice(&(json.len() as u64).to_le_bytes());
    b.extend_from_slice(&json);
    b
}

/// Writes one step-span flow per carrier record of the sample corpus.
fn write_foreign_flows(dir: &Path) -> usize {
    let (records, errors) = load_corpus(&sample_corpus()).unwrap();
    assert!(errors.is_empty());
    let mut n = 0;
    for rec in records.iter().filter(|r| r.topic != "abstract") {
        let rows: Vec<Vec<f32>> = rec
            .steps
            .iter()
            .map(|s| synth_embedding(&s.raw, 32, 3).iter().map(|&x| x as f32).collect())
            .collect();
        let meta = serde_json::json!({
            "logic_id": rec.logic_id,
            "topic": rec.topic,
            "language": rec.language,
            "mode": "step-span",
            "model": "some-decoder",
            "layer": -1,
        });
        let path = dir.join(flow_path(&rec.logic_id, &rec.topic, &rec.language));
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, foreign_bytes(&rows, &meta)).unwrap();
        n += 1;
    }
    n
}

#[test]
fn foreign_step_span_files_load_and_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let n = write_foreign_flows(dir.path());
    assert_eq!(n, 8);

    let flows = load_flows(dir.path()).unwrap();
    assert_eq!(flows.len(), n);
    for f in &flows {
        assert_eq!(f.meta.pooling, "step-span");
        assert_eq!(f.meta.extra["layer"], serde_json::json!(-1));
        assert_eq!(f.dim(), 32);
    }

    for measure in Measure::ALL {
        let m = pairwise_matrix(&flows, measure, measure.default_policy()).unwrap();
        assert_eq!(m.ids.len(), n);
        for i in 0..n {
            for j in 0..n {
                assert_eq!(m.values[i][j], m.values[j][i]);
            }
        }
    }
    let m = pairwise_matrix(&flows, Measure::Position, AlignmentPolicy::nearest()).unwrap();
    for i in 0..n {
        let v = m.values[i][i].unwrap();
        assert!((v - 1.0).abs() < 1e-6, "{v}");
    }
}

#[test]
fn batch_build_takes_prebuilt_files() {
    let src = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let n = write_foreign_flows(src.path());
    let (records, _) = load_corpus(&sample_corpus()).unwrap();
    let index = build_index(records).unwrap();
    let manifest = batch_build(&index, FlowSource::Files(src.path()), &FlowOptions::default(), out.path()).unwrap();
    assert_eq!(manifest.flows.len(), n);
    assert!(manifest.failures.is_empty());
    assert!(manifest.flows.iter().all(|e| e.pooling == "step-span"));
    let copied = read_flow(&out.path().join(&manifest.flows[0].file)).unwrap();
    assert_eq!(copied.meta.extra["model"], serde_json::json!("some-decoder"));
}

#[test]
fn prebuilt_length_mismatch_is_a_listed_failure() {
    let src = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    write_foreign_flows(src.path());
    let (records, _) = load_corpus(&sample_corpus()).unwrap();
    let victim = records.iter().find(|r| r.topic != "abstract").unwrap();
    let path = src.path().join(flow_path(&victim.logic_id, &victim.topic, &victim.language));
    let meta = serde_json::json!({"logic_id": victim.logic_id, "topic": victim.topic, "language": victim.language});
    std::fs::write(&path, foreign_bytes(&vec![vec![0.5; 32]; 2], &meta)).unwrap();

    let index = build_index(records.clone()).unwrap();
    let manifest = batch_build(&index, FlowSource::Files(src.path()), &FlowOptions::default(), out.path()).unwrap();
    assert_eq!(manifest.failures.len(), 1);
    assert_eq!(manifest.failures[0].id, victim.key());
}
