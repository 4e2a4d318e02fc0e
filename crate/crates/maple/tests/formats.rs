mod common;

use std::fs;

use maple::checkpoint::{load_checkpoint, read_head, read_head_from, save_checkpoint, write_head_to, Sidecar};
use maple::emb::EmbeddingFile;
use maple::manifest::{load_corpus, write_corpus};
use maple::MapleError;
use maple_core::fusion::init_params;
use maple_core::{Checkpoint, Corpus, HeadConfig, SyntheticSpec};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn emb1_byte_layout() {
    let mut f = EmbeddingFile::new(2);
    f.push("essay:a", vec![1.0, -2.5]).unwrap();
    let mut bytes = Vec::new();
    f.write_to(&mut bytes).unwrap();
    let mut expected = b"EMB1".to_vec();
    expected.extend(1u32.to_le_bytes());
    expected.extend(2u32.to_le_bytes());
    expected.extend(7u16.to_le_bytes());
    expected.extend(b"essay:a");
    expected.extend(1.0f32.to_le_bytes());
    expected.extend((-2.5f32).to_le_bytes());
    assert_eq!(bytes, expected);
    assert_eq!(EmbeddingFile::read_from(&bytes[..]).unwrap(), f);
}

#[test]
fn emb1_rejects_malformed_input() {
    let mut f = EmbeddingFile::new(3);
    f.push("k", vec![1.0, 2.0, 3.0]).unwrap();
    let mut bytes = Vec::new();
    f.write_to(&mut bytes).unwrap();
    for cut in [0, 3, 9, 13, bytes.len() - 1] {
        assert!(matches!(EmbeddingFile::read_from(&bytes[..cut]), Err(MapleError::Data(_))), "cut {cut}");
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(EmbeddingFile::read_from(&bad[..]).is_err());
    let mut trailing = bytes.clone();
    trailing.push(0);
    assert!(EmbeddingFile::read_from(&trailing[..]).is_err());
    assert!(f.push("k", vec![0.0; 3]).is_err());
    assert!(f.push("j", vec![0.0; 2]).is_err());
}

proptest! {
    #[test]
    fn emb1_round_trip_is_bit_exact(
        d in 1usize..6,
        raw in prop::collection::vec(("[a-z:é]{0,12}", prop::collection::vec(any::<u32>(), 6)), 0..12),
    ) {
        let mut f = EmbeddingFile::new(d);
        for (i, (key, bits)) in raw.iter().enumerate() {
            let v: Vec<f32> = bits[..d].iter().map(|&b| f32::from_bits(b)).collect();
            f.push(format!("{key}#{i}"), v).unwrap();
        }
        let mut bytes = Vec::new();
        f.write_to(&mut bytes).unwrap();
        let back = EmbeddingFile::read_from(&bytes[..]).unwrap();
        prop_assert_eq!(back.len(), f.len());
        for ((k1, v1), (k2, v2)) in f.records().iter().zip(back.records()) {
            prop_assert_eq!(k1, k2);
            let b1: Vec<u32> = v1.iter().map(|x| x.to_bits()).collect();
            let b2: Vec<u32> = v2.iter().map(|x| x.to_bits()).collect();
            prop_assert_eq!(b1, b2);
        }
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        prop_assert_eq!(again, bytes);
    }
}

#[test]
fn mhd1_round_trip_and_layout() {
    let head = HeadConfig { d: 3, d_u: 2, use_context: true, dropout_rate: 0.5 };
    let params = init_params(&head, &mut ChaCha8Rng::seed_from_u64(4));
    let mut bytes = Vec::new();
    write_head_to(&mut bytes, &head, &params).unwrap();
    assert_eq!(&bytes[..4], b"MHD1");
    let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let header: serde_json::Value = serde_json::from_slice(&bytes[8..8 + hlen]).unwrap();
    assert_eq!(header, serde_json::json!({"d": 3, "d_u": 2, "use_context": true, "dropout_rate": 0.5}));
    assert_eq!(bytes.len() - 8 - hlen, head.param_count() * 8);
    let first = f64::from_le_bytes(bytes[8 + hlen..16 + hlen].try_into().unwrap());
    assert_eq!(first.to_bits(), params.w_z()[0].to_bits());
    let (h2, p2) = read_head_from(&bytes[..]).unwrap();
    assert_eq!(h2, head);
    assert_eq!(p2, params);
    assert!(read_head_from(&bytes[..bytes.len() - 8]).is_err());
}

#[test]
fn checkpoint_sidecar_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let head = HeadConfig { d: 2, d_u: 0, use_context: false, dropout_rate: 0.1 };
    let ckpt = Checkpoint {
        params: init_params(&head, &mut ChaCha8Rng::seed_from_u64(1)),
        head,
        dev_qwk: Some(0.75),
        tasks_seen: 96,
        config_hash: 0xabcdef,
    };
    let side = Sidecar {
        fold: 2,
        test_prompts: vec!["P3".into()],
        regime: "binary-1P".into(),
        dev_qwk: Some(0.75),
        tasks_seen: 96,
        config_hash: format!("{:016x}", 0xabcdefu64),
    };
    let path = dir.path().join("c.mhd1");
    save_checkpoint(&path, &ckpt, &side).unwrap();
    let (back, s) = load_checkpoint(&path).unwrap();
    assert_eq!(back, ckpt);
    assert_eq!(s, Some(side));
    fs::remove_file(dir.path().join("c.json")).unwrap();
    let (bare, s) = load_checkpoint(&path).unwrap();
    assert_eq!(s, None);
    assert_eq!(bare.params, ckpt.params);
    assert!(read_head(&dir.path().join("missing.mhd1")).is_err());
}

#[test]
fn loads_tiny_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let path = common::tiny_corpus(dir.path(), &common::TINY_LABELS);
    let c = load_corpus(&path).unwrap();
    assert_eq!(c.d, 4);
    assert_eq!(c.essays.len(), 6);
    assert_eq!(c.prompts.len(), 2);
    assert!(c.has_context());
    assert_eq!(c.essays[2].level(0), Some(8));
    assert_eq!(c.essays[4].level(0), None);
    assert_eq!(c.essays[1].embedding, vec![1.0, f64::from(0.1f32), -0.5, f64::from(1e-3f32)]);
}

fn data_error(r: maple::Result<Corpus>) -> String {
    match r {
        Err(e) => {
            assert_eq!(e.exit_code(), 3, "{e}");
            e.to_string()
        }
        Ok(_) => panic!("expected a data error"),
    }
}

#[test]
fn ingestion_errors_name_the_culprit() {
    let dir = tempfile::tempdir().unwrap();
    let mut labels = common::TINY_LABELS;
    labels[3] = "3.25";
    let path = common::tiny_corpus(dir.path(), &labels);
    let msg = data_error(load_corpus(&path));
    assert!(msg.contains("e3") && msg.contains("3.25"), "{msg}");

    let missing = dir.path().join("nope/manifest.json");
    let msg = data_error(load_corpus(&missing));
    assert!(msg.contains("nope/manifest.json"), "{msg}");

    let path = common::tiny_corpus(dir.path(), &common::TINY_LABELS);
    let text = fs::read_to_string(dir.path().join("labels.csv")).unwrap();
    fs::write(dir.path().join("labels.csv"), text.replace("e5,", "e4,")).unwrap();
    let msg = data_error(load_corpus(&path));
    assert!(msg.contains("e4"), "{msg}");

    let path = common::tiny_corpus(dir.path(), &common::TINY_LABELS);
    let m = fs::read_to_string(&path).unwrap().replace("\"d\": 4", "\"d\": 5");
    fs::write(&path, m).unwrap();
    let msg = data_error(load_corpus(&path));
    assert!(msg.contains("dimension"), "{msg}");

    let path = common::tiny_corpus(dir.path(), &common::TINY_LABELS);
    let m = fs::read_to_string(&path).unwrap().replace("prompt:P1", "prompt:P9");
    fs::write(&path, m).unwrap();
    let msg = data_error(load_corpus(&path));
    assert!(msg.contains("prompt:P9"), "{msg}");
}

#[test]
fn shift_to_zero_from_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let path = common::tiny_corpus(dir.path(), &["2", "12", "7", "1", "2", "3"]);
    let m = fs::read_to_string(&path)
        .unwrap()
        .replace("\"shift_policy\": \"none\"", "\"shift_policy\": \"shift_to_zero\"")
        .replace(
            r#""scale": {"min": 1.0, "max": 5.0, "step": 0.5}"#,
            r#""prompt_scales": {"P1": {"min": 2, "max": 12, "step": 1}, "P2": {"values": [1, 2, 3]}}"#,
        );
    fs::write(&path, m).unwrap();
    let c = load_corpus(&path).unwrap();
    let t = &c.traits[0];
    assert_eq!(t.scales[0].as_ref().unwrap().values(), (0..=10).map(f64::from).collect::<Vec<_>>().as_slice());
    assert_eq!(t.offsets, vec![2.0, 1.0]);
    assert_eq!(c.essays[1].labels[0].unwrap().value, 10.0);
    assert_eq!(t.reported_value(0, c.essays[1].level(0).unwrap()), 12.0);
    assert_eq!(c.original_label(3, 0), Some(1.0));

    let out = tempfile::tempdir().unwrap();
    let again = load_corpus(&write_corpus(&c, out.path()).unwrap()).unwrap();
    for e in 0..c.essays.len() {
        assert_eq!(again.essays[e].level(0), c.essays[e].level(0));
        assert_eq!(again.original_label(e, 0), c.original_label(e, 0));
    }
}

#[test]
fn corpus_round_trip_is_exact() {
    let spec = SyntheticSpec { prompts: 3, essays_per_prompt: 10, d_u: 3, ..SyntheticSpec::default() };
    let mut raw = spec.generate().unwrap();
    // embeddings travel as f32
    for e in &mut raw.essays {
        e.embedding.iter_mut().for_each(|x| *x = f64::from(*x as f32));
    }
    for p in &mut raw.prompts {
        p.embedding.iter_mut().flatten().for_each(|x| *x = f64::from(*x as f32));
    }
    for t in &mut raw.traits {
        t.rubric_embedding.iter_mut().flatten().for_each(|x| *x = f64::from(*x as f32));
    }
    let c = Corpus::build(raw).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let back = load_corpus(&write_corpus(&c, dir.path()).unwrap()).unwrap();
    assert_eq!(back.essays.len(), c.essays.len());
    for (a, b) in c.essays.iter().zip(&back.essays) {
        assert_eq!(a.id, b.id);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.embedding), bits(&b.embedding));
        assert_eq!(bits(a.features.as_ref().unwrap()), bits(b.features.as_ref().unwrap()));
        assert_eq!(a.labels, b.labels);
    }
    for (a, b) in c.prompts.iter().zip(&back.prompts) {
        assert_eq!(a.embedding, b.embedding);
    }
    for (a, b) in c.traits.iter().zip(&back.traits) {
        assert_eq!(a.rubric_embedding, b.rubric_embedding);
        assert_eq!(a.levels, b.levels);
    }
}
