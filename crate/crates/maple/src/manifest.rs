//! Corpus manifests: JSON pointing at a labels CSV, an optional features CSV
//! and an `EMB1` embeddings file. Relative paths resolve against the
//! manifest's directory.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use maple_core::corpus::{CorpusSpec, RawEssay, RawPrompt, RawTrait};
use maple_core::{Corpus, ScoreScale, ShiftPolicy};
use serde::{Deserialize, Serialize};

use crate::emb::{essay_key, prompt_key, rubric_key, EmbeddingFile};
use crate::error::{MapleError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub dataset_name: String,
    pub d: usize,
    #[serde(default)]
    pub d_u: usize,
    #[serde(default)]
    pub shift_policy: ShiftPolicy,
    pub traits: Vec<TraitEntry>,
    pub prompts: Vec<PromptEntry>,
    pub labels_csv: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features_csv: Option<PathBuf>,
    pub embeddings_file: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraitEntry {
    pub trait_id: String,
    /// Defaults to `rubric:<trait_id>`; the vector may be absent from the
    /// embeddings file when context is not used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rubric_vec_key: Option<String>,
    /// Scale for every prompt without an entry in `prompt_scales`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<ScaleDecl>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub prompt_scales: BTreeMap<String, ScaleDecl>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptEntry {
    pub prompt_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_vec_key: Option<String>,
}

/// `{"min": 1, "max": 5, "step": 0.5}` or `{"values": [0, 1, 2]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum ScaleDecl {
    Stepped { min: f64, max: f64, step: f64 },
    Values { values: Vec<f64> },
}

impl ScaleDecl {
    pub fn resolve(&self) -> maple_core::Result<ScoreScale> {
        match self {
            ScaleDecl::Stepped { min, max, step } => ScoreScale::stepped(*min, *max, *step),
            ScaleDecl::Values { values } => ScoreScale::new(values.clone()),
        }
    }
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| MapleError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| MapleError::data(path, e))
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| f64::from(x)).collect()
}

fn context_vector(emb: &EmbeddingFile, explicit: Option<&str>, default: String, path: &Path) -> Result<Option<Vec<f64>>> {
    match explicit {
        Some(key) => emb
            .get(key)
            .map(|v| Some(widen(v)))
            .ok_or_else(|| MapleError::data(path, format!("embedding key {key} not found"))),
        None => Ok(emb.get(&default).map(widen)),
    }
}

fn read_features(path: &Path, d_u: usize) -> Result<HashMap<String, Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| csv_error(path, e))?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.get(0) != Some("essay_id") {
        return Err(MapleError::data(path, "first column must be essay_id"));
    }
    if headers.len() - 1 != d_u {
        return Err(MapleError::data(path, format!("manifest d_u is {d_u} but the file has {} feature columns", headers.len() - 1)));
    }
    let mut out = HashMap::new();
    for row in rdr.records() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let id = row[0].to_string();
        let values = row
            .iter()
            .skip(1)
            .map(|s| s.parse::<f64>().map_err(|_| MapleError::data(path, format!("essay {id}: bad feature value {s:?}"))))
            .collect::<Result<Vec<_>>>()?;
        if out.insert(id.clone(), values).is_some() {
            return Err(MapleError::data(path, format!("duplicate essay_id {id}")));
        }
    }
    Ok(out)
}

fn csv_error(path: &Path, e: csv::Error) -> MapleError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => MapleError::io(path, io),
        other => MapleError::data(path, format!("{other:?}")),
    }
}

/// Loads and validates a corpus from its manifest.
pub fn load_corpus(manifest_path: &Path) -> Result<Corpus> {
    let manifest = Manifest::read(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let emb_path = resolve(base, &manifest.embeddings_file);
    let emb = EmbeddingFile::read(&emb_path)?;
    if emb.d() != manifest.d {
        return Err(MapleError::data(&emb_path, format!("dimension {} does not match manifest d = {}", emb.d(), manifest.d)));
    }

    let mut traits = Vec::with_capacity(manifest.traits.len());
    for t in &manifest.traits {
        let scale = t.scale.as_ref().map(ScaleDecl::resolve).transpose().map_err(|e| MapleError::data(manifest_path, format!("trait {}: {e}", t.trait_id)))?;
        let prompt_scales = t
            .prompt_scales
            .iter()
            .map(|(p, s)| Ok((p.clone(), s.resolve().map_err(|e| MapleError::data(manifest_path, format!("trait {} prompt {p}: {e}", t.trait_id)))?)))
            .collect::<Result<Vec<_>>>()?;
        traits.push(RawTrait {
            id: t.trait_id.clone(),
            rubric_embedding: context_vector(&emb, t.rubric_vec_key.as_deref(), rubric_key(&t.trait_id), &emb_path)?,
            scale,
            prompt_scales,
        });
    }
    let prompts = manifest
        .prompts
        .iter()
        .map(|p| {
            Ok(RawPrompt {
                id: p.prompt_id.clone(),
                embedding: context_vector(&emb, p.prompt_vec_key.as_deref(), prompt_key(&p.prompt_id), &emb_path)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let features = match &manifest.features_csv {
        Some(f) => Some(read_features(&resolve(base, f), manifest.d_u)?),
        None => None,
    };

    let labels_path = resolve(base, &manifest.labels_csv);
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(&labels_path).map_err(|e| csv_error(&labels_path, e))?;
    let headers = rdr.headers().map_err(|e| csv_error(&labels_path, e))?.clone();
    if headers.get(0) != Some("essay_id") || headers.get(1) != Some("prompt_id") {
        return Err(MapleError::data(&labels_path, "header must start with essay_id,prompt_id"));
    }
    let trait_cols: Vec<String> = headers.iter().skip(2).map(str::to_string).collect();
    for c in &trait_cols {
        if !manifest.traits.iter().any(|t| &t.trait_id == c) {
            return Err(MapleError::data(&labels_path, format!("column {c} is not a declared trait")));
        }
    }
    let mut essays = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| csv_error(&labels_path, e))?;
        let id = row[0].to_string();
        let mut labels = Vec::new();
        for (col, cell) in trait_cols.iter().zip(row.iter().skip(2)) {
            if cell.is_empty() {
                continue;
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| MapleError::data(&labels_path, format!("essay {id}, trait {col}: bad score {cell:?}")))?;
            labels.push((col.clone(), v));
        }
        let embedding = emb
            .get(&essay_key(&id))
            .map(widen)
            .ok_or_else(|| MapleError::data(&emb_path, format!("no embedding for essay {id}")))?;
        let feats = match &features {
            Some(f) => Some(f.get(&id).cloned().ok_or_else(|| MapleError::Data(format!("no feature vector for essay {id}")))?),
            None => None,
        };
        essays.push(RawEssay { id, prompt_id: row[1].to_string(), embedding, features: feats, labels });
    }

    let spec = CorpusSpec {
        name: manifest.dataset_name.clone(),
        d: manifest.d,
        d_u: if features.is_some() { manifest.d_u } else { 0 },
        shift: manifest.shift_policy,
        traits,
        prompts,
        essays,
    };
    Corpus::build(spec).map_err(|e| MapleError::data(manifest_path, e))
}

/// Writes `corpus` as manifest + CSVs + `EMB1` under `dir`; returns the
/// manifest path. Embeddings are narrowed to f32.
pub fn write_corpus(corpus: &Corpus, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| MapleError::io(dir, e))?;
    let mut emb = EmbeddingFile::new(corpus.d);
    let narrow = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
    for t in &corpus.traits {
        if let Some(r) = &t.rubric_embedding {
            emb.push(rubric_key(&t.id), narrow(r))?;
        }
    }
    for p in &corpus.prompts {
        if let Some(v) = &p.embedding {
            emb.push(prompt_key(&p.id), narrow(v))?;
        }
    }
    for e in &corpus.essays {
        emb.push(essay_key(&e.id), narrow(&e.embedding))?;
    }
    emb.write(&dir.join("embeddings.emb1"))?;

    let labels_path = dir.join("labels.csv");
    let mut w = csv::Writer::from_path(&labels_path).map_err(|e| csv_error(&labels_path, e))?;
    let mut header = vec!["essay_id".to_string(), "prompt_id".to_string()];
    header.extend(corpus.traits.iter().map(|t| t.id.clone()));
    w.write_record(&header).map_err(|e| csv_error(&labels_path, e))?;
    for (i, e) in corpus.essays.iter().enumerate() {
        let mut row = vec![e.id.clone(), corpus.prompts[e.prompt].id.clone()];
        row.extend((0..corpus.traits.len()).map(|t| corpus.original_label(i, t).map(|v| v.to_string()).unwrap_or_default()));
        w.write_record(&row).map_err(|e| csv_error(&labels_path, e))?;
    }
    w.flush().map_err(|e| MapleError::io(&labels_path, e))?;

    let features_csv = if corpus.has_features() {
        let path = dir.join("features.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
        let mut header = vec!["essay_id".to_string()];
        header.extend((0..corpus.d_u).map(|j| format!("f{j}")));
        w.write_record(&header).map_err(|e| csv_error(&path, e))?;
        for e in &corpus.essays {
            let mut row = vec![e.id.clone()];
            row.extend(e.features.iter().flatten().map(f64::to_string));
            w.write_record(&row).map_err(|e| csv_error(&path, e))?;
        }
        w.flush().map_err(|e| MapleError::io(&path, e))?;
        Some(PathBuf::from("features.csv"))
    } else {
        None
    };

    let manifest = Manifest {
        dataset_name: corpus.name.clone(),
        d: corpus.d,
        d_u: corpus.d_u,
        shift_policy: corpus.shift,
        traits: (0..corpus.traits.len()).map(|t| trait_entry(corpus, t)).collect(),
        prompts: corpus.prompts.iter().map(|p| PromptEntry { prompt_id: p.id.clone(), prompt_vec_key: None }).collect(),
        labels_csv: PathBuf::from("labels.csv"),
        features_csv,
        embeddings_file: PathBuf::from("embeddings.emb1"),
    };
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json + "\n").map_err(|e| MapleError::io(&path, e))?;
    Ok(path)
}

fn trait_entry(corpus: &Corpus, t: usize) -> TraitEntry {
    let scales: Vec<(String, ScoreScale)> = (0..corpus.prompts.len())
        .filter_map(|p| corpus.original_scale(t, p).map(|s| (corpus.prompts[p].id.clone(), s)))
        .collect();
    let decl = |s: &ScoreScale| ScaleDecl::Values { values: s.values().to_vec() };
    let shared = scales.len() == corpus.prompts.len() && scales.windows(2).all(|w| w[0].1 == w[1].1);
    TraitEntry {
        trait_id: corpus.traits[t].id.clone(),
        rubric_vec_key: None,
        scale: if shared { scales.first().map(|(_, s)| decl(s)) } else { None },
        prompt_scales: if shared { BTreeMap::new() } else { scales.iter().map(|(p, s)| (p.clone(), decl(s))).collect() },
    }
}
