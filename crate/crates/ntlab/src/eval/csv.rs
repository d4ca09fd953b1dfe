//! Plain-text report emitters: one CSV per figure analog plus a full
//! JSON dump. Values use Rust's shortest round-trip float formatting,
//! so identical reports serialize to identical bytes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use super::grid::{MetricReport, MlmCell};
use crate::error::Result;

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `temperature,model,accuracy` — the temperature-sweep accuracy
/// curve, one row per report.
pub fn write_fig2_accuracy(path: &Path, reports: &[MetricReport]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "temperature,model,accuracy")?;
    for r in reports {
        writeln!(w, "{},{},{}", r.temperature, r.model, r.mean_accuracy)?;
    }
    Ok(w.flush()?)
}

/// `temperature,model,kl` — the matching divergence curve.
pub fn write_fig2_kl(path: &Path, reports: &[MetricReport]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "temperature,model,kl")?;
    for r in reports {
        writeln!(w, "{},{},{}", r.temperature, r.model, r.mean_kl)?;
    }
    Ok(w.flush()?)
}

/// Per-word precision/recall/F1 table of one report, already ordered
/// by true frequency. Undefined scores become empty cells.
pub fn write_fig4_prf1(path: &Path, report: &MetricReport) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "word,true_count,pred_count,tp,fp,fn,precision,recall,f1")?;
    for row in &report.prf1 {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            row.word,
            row.true_count,
            row.pred_count,
            row.scores.tp,
            row.scores.fp,
            row.scores.fn_,
            opt(row.scores.precision),
            opt(row.scores.recall),
            opt(row.scores.f1),
        )?;
    }
    Ok(w.flush()?)
}

/// Dense confusion matrix, one row per (true class, predicted class).
pub fn write_fig5_confusion(path: &Path, report: &MetricReport) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "true,pred,count,fraction")?;
    let cm = &report.confusion;
    for (i, label_t) in cm.labels.iter().enumerate() {
        for (j, label_p) in cm.labels.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{}",
                label_t, label_p, cm.counts[i][j], cm.matrix[i][j]
            )?;
        }
    }
    Ok(w.flush()?)
}

/// The two prime-error distributions, marked by direction.
pub fn write_fig6_prime_profile(path: &Path, report: &MetricReport) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "direction,word,fraction")?;
    for (word, frac) in &report.prime_profile.predicted_at_true_prime {
        writeln!(w, "predicted_at_true_prime,{word},{frac}")?;
    }
    for (word, frac) in &report.prime_profile.true_at_predicted_prime {
        writeln!(w, "true_at_predicted_prime,{word},{frac}")?;
    }
    Ok(w.flush()?)
}

/// The full (p_m, T) lattice of masked-model token accuracies.
pub fn write_fig7_grid(path: &Path, cells: &[MlmCell]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "mask_prob,temperature,masked_accuracy,full_accuracy,m")?;
    for c in cells {
        writeln!(
            w,
            "{},{},{},{},{}",
            c.mask_prob, c.temperature, c.masked_accuracy, c.full_accuracy, c.m
        )?;
    }
    Ok(w.flush()?)
}

/// Pretty-printed JSON dump of any serializable report collection.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(w.flush()?)
}
