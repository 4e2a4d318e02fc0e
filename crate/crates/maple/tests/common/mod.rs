#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use maple::emb::{essay_key, prompt_key, rubric_key, EmbeddingFile};

/// Two prompts with three essays each, d = 4, trait COH on 1..5 by 0.5.
/// `labels` overrides the COH column, row by row.
pub fn tiny_corpus(dir: &Path, labels: &[&str]) -> PathBuf {
    fs::create_dir_all(dir).unwrap();
    let mut emb = EmbeddingFile::new(4);
    emb.push(rubric_key("COH"), vec![0.5, 0.25, -1.0, 2.0]).unwrap();
    for p in ["P1", "P2"] {
        emb.push(prompt_key(p), vec![1.0, 0.0, 0.0, 0.0]).unwrap();
    }
    let mut csv = String::from("essay_id,prompt_id,COH\n");
    for i in 0..6 {
        let id = format!("e{i}");
        let prompt = if i < 3 { "P1" } else { "P2" };
        emb.push(essay_key(&id), vec![i as f32, 0.1 * i as f32, -0.5, 1e-3]).unwrap();
        csv.push_str(&format!("{id},{prompt},{}\n", labels[i]));
    }
    emb.write(&dir.join("vecs.emb1")).unwrap();
    fs::write(dir.join("labels.csv"), csv).unwrap();
    let manifest = r#"{
  "dataset_name": "tiny",
  "d": 4,
  "shift_policy": "none",
  "traits": [{"trait_id": "COH", "rubric_vec_key": "rubric:COH", "scale": {"min": 1.0, "max": 5.0, "step": 0.5}}],
  "prompts": [{"prompt_id": "P1", "prompt_vec_key": "prompt:P1"}, {"prompt_id": "P2"}],
  "labels_csv": "labels.csv",
  "embeddings_file": "vecs.emb1"
}"#;
    let path = dir.join("manifest.json");
    fs::write(&path, manifest).unwrap();
    path
}

pub const TINY_LABELS: [&str; 6] = ["1.0", "2.5", "5", "3.5", "", "4.0"];
