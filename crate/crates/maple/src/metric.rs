//! Standalone QWK over prediction and gold CSV files.

use std::collections::HashMap;
use std::path::Path;

use maple_core::{qwk, ScoreScale};

use crate::error::{MapleError, Result};

/// `essay_id -> score` from the first column and the named (or second) column.
pub fn read_scores(path: &Path, column: Option<&str>) -> Result<Vec<(String, f64)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| MapleError::data(path, e))?;
    let headers = rdr.headers().map_err(|e| MapleError::data(path, e))?.clone();
    let col = match column {
        Some(name) => headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| MapleError::data(path, format!("no column {name}")))?,
        None if headers.len() >= 2 => 1,
        None => return Err(MapleError::data(path, "need at least two columns")),
    };
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| MapleError::data(path, e))?;
        let cell = row.get(col).unwrap_or("");
        if cell.is_empty() {
            continue;
        }
        let v = cell
            .parse()
            .map_err(|_| MapleError::data(path, format!("essay {}: bad score {cell:?}", &row[0])))?;
        out.push((row[0].to_string(), v));
    }
    Ok(out)
}

/// QWK of `pred` against `gold`, matched on essay id. Gold may cover more
/// essays than `pred`; every prediction needs a gold score. Without `scale`,
/// the level grid is the sorted set of matched scores.
pub fn qwk_from_pairs(pred: &[(String, f64)], gold: &[(String, f64)], scale: Option<&ScoreScale>) -> Result<f64> {
    let gold_map: HashMap<&str, f64> = gold.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    let mut seen = std::collections::HashSet::new();
    let mut pairs = Vec::with_capacity(pred.len());
    for (id, p) in pred {
        if !seen.insert(id.as_str()) {
            return Err(MapleError::Data(format!("essay {id} predicted twice")));
        }
        let g = gold_map.get(id.as_str()).ok_or_else(|| MapleError::Data(format!("essay {id} has no gold score")))?;
        pairs.push((*g, *p));
    }
    if pairs.is_empty() {
        return Err(MapleError::Data("no predictions".into()));
    }
    let grid = match scale {
        Some(s) => s.clone(),
        None => {
            let mut values: Vec<f64> = pairs.iter().flat_map(|&(g, p)| [g, p]).collect();
            values.sort_by(f64::total_cmp);
            values.dedup_by(|a, b| (*a - *b).abs() <= maple_core::corpus::SCORE_TOLERANCE);
            if values.len() == 1 {
                // any single value agrees with itself
                return Ok(1.0);
            }
            ScoreScale::new(values)?
        }
    };
    let gold_levels = pairs.iter().map(|&(g, _)| grid.level_of(g)).collect::<maple_core::Result<Vec<_>>>()?;
    let pred_levels = pairs.iter().map(|&(_, p)| grid.level_of(p)).collect::<maple_core::Result<Vec<_>>>()?;
    Ok(qwk(&gold_levels, &pred_levels, grid.len())?)
}
