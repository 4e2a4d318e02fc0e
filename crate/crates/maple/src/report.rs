//! Report, log, prediction and episode-dump writers.

use std::fmt::Write as _;
use std::io::Write;

use maple_core::episodes::ClassDescriptor;
use maple_core::eval::FoldAudit;
use maple_core::trainer::LogRow;
use maple_core::{Corpus, Episode, EvalReport, TaskScore};
use serde_json::{json, Value};

fn num(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Matrix CSV: one row per tested prompt, one column per trait, plus
/// averages. Absent cells are empty.
pub fn write_report_csv(report: &EvalReport, mut w: impl Write) -> std::io::Result<()> {
    let mut out = csv::Writer::from_writer(&mut w);
    let mut header = vec!["prompt".to_string()];
    header.extend(report.traits.iter().cloned());
    header.push("avg".into());
    out.write_record(&header)?;
    for p in report.tested_prompts() {
        let mut row = vec![report.prompts[p].clone()];
        row.extend(report.cells[p].iter().map(|&c| num(c)));
        row.push(num(report.prompt_average(p)));
        out.write_record(&row)?;
    }
    let mut avg = vec!["avg".to_string()];
    avg.extend((0..report.traits.len()).map(|t| num(report.trait_average(t))));
    avg.push(num(report.grand_average()));
    out.write_record(&avg)?;
    if let Some(h) = report.holistic {
        let mut row = vec![format!("avg_without_{}", report.traits[h])];
        row.extend(std::iter::repeat_n(String::new(), report.traits.len()));
        row.push(num(report.average_without_holistic()));
        out.write_record(&row)?;
    }
    out.flush()
}

/// Fixed-width table with three decimals; `-` marks absent cells.
pub fn render_text(report: &EvalReport) -> String {
    let cell = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"));
    let mut header = vec!["Prompt".to_string()];
    header.extend(report.traits.iter().cloned());
    header.push("Avg".into());
    let mut rows = vec![header];
    for p in report.tested_prompts() {
        let mut row = vec![report.prompts[p].clone()];
        row.extend(report.cells[p].iter().map(|&c| cell(c)));
        row.push(cell(report.prompt_average(p)));
        rows.push(row);
    }
    let mut avg = vec!["Avg".to_string()];
    avg.extend((0..report.traits.len()).map(|t| cell(report.trait_average(t))));
    avg.push(cell(report.grand_average()));
    rows.push(avg);
    let widths: Vec<usize> =
        (0..rows[0].len()).map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0)).collect();
    let mut s = String::new();
    for (i, row) in rows.iter().enumerate() {
        if i + 1 == rows.len() {
            let rule: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
            s.push_str(&"-".repeat(rule));
            s.push('\n');
        }
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (v, &w))| if c == 0 { format!("{v:<w$}") } else { format!("{v:>w$}") })
            .collect();
        s.push_str(line.join("  ").trim_end());
        s.push('\n');
        if i == 0 {
            let rule: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
            s.push_str(&"-".repeat(rule));
            s.push('\n');
        }
    }
    if let Some(h) = report.holistic {
        let _ = writeln!(s, "Avg without {}: {}", report.traits[h], cell(report.average_without_holistic()));
    }
    s
}

pub fn write_audit_jsonl<'a>(audits: impl IntoIterator<Item = &'a FoldAudit>, mut w: impl Write) -> std::io::Result<()> {
    for a in audits {
        serde_json::to_writer(&mut w, a)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn write_predictions_csv(corpus: &Corpus, scores: &[TaskScore], mut w: impl Write) -> std::io::Result<()> {
    let mut out = csv::Writer::from_writer(&mut w);
    out.write_record(["essay_id", "prompt_id", "trait_id", "gold_score", "predicted_score", "gold_level", "predicted_level"])?;
    for s in scores {
        for (i, &e) in s.essays.iter().enumerate() {
            out.write_record([
                corpus.essays[e].id.clone(),
                corpus.prompts[s.query_prompt].id.clone(),
                corpus.traits[s.trait_idx].id.clone(),
                num(corpus.original_label(e, s.trait_idx)),
                s.predicted_scores[i].to_string(),
                s.gold_levels[i].to_string(),
                s.predicted_levels[i].to_string(),
            ])?;
        }
    }
    out.flush()
}

pub fn write_train_log(log: &[LogRow], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "step,tasks_seen,batch_loss,dev_qwk_avg")?;
    for r in log {
        writeln!(w, "{},{},{},{}", r.step, r.tasks_seen, num(r.batch_loss), num(r.dev_qwk_avg))?;
    }
    w.flush()
}

/// One line of the episode dump.
pub fn episode_json(corpus: &Corpus, fold: usize, index: usize, e: &Episode) -> Value {
    let ids = |xs: &[usize]| xs.iter().map(|&x| corpus.essays[x].id.clone()).collect::<Vec<_>>();
    let classes: Vec<Value> = e
        .classes
        .iter()
        .map(|c| match c {
            ClassDescriptor::Level(l) => json!({ "level": l }),
            ClassDescriptor::AllExcept(l) => json!({ "all_except": l }),
        })
        .collect();
    json!({
        "fold": fold,
        "index": index,
        "regime": e.regime.label(),
        "trait_id": corpus.traits[e.trait_idx].id,
        "query_prompt": corpus.prompts[e.query_prompt].id,
        "support_prompts": e.support_prompts(corpus).iter().map(|&p| corpus.prompts[p].id.clone()).collect::<Vec<_>>(),
        "classes": classes,
        "support": e.support.iter().map(|c| ids(c)).collect::<Vec<_>>(),
        "query": e.query.iter().map(|c| ids(c)).collect::<Vec<_>>(),
    })
}
