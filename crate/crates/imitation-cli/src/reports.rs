//! CSV and manifest outputs. All floats print through `Display` (shortest
//! round-trip form), so identical runs produce byte-identical files.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use imitation_core::data::EmbeddingMap;
use imitation_core::engine::{PseudoExample, TrainReport};
use imitation_core::linalg::Matrix;

use crate::error::Result;

/// One benchmark run's outcome.
#[derive(Debug, Clone)]
pub struct RunRow {
    pub seed: u64,
    pub strategy: String,
    pub labels_per_class: usize,
    pub accuracy: f64,
}

pub fn write_runs_csv(path: &Path, rows: &[RunRow]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "seed,strategy,labels_per_class,accuracy")?;
    for r in rows {
        writeln!(out, "{},{},{},{}", r.seed, r.strategy, r.labels_per_class, r.accuracy)?;
    }
    Ok(())
}

/// Aggregated accuracy per (strategy, labels_per_class) cell.
#[derive(Debug, Clone)]
pub struct AggregateRow {
    pub strategy: String,
    pub labels_per_class: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub seeds: usize,
}

/// Mean/std over per-seed rows, grouped in the declared strategy and label
/// order.
#[must_use]
pub fn aggregate(rows: &[RunRow]) -> Vec<AggregateRow> {
    let mut groups: Vec<(String, usize, Vec<f64>)> = Vec::new();
    for r in rows {
        match groups
            .iter_mut()
            .find(|(s, l, _)| *s == r.strategy && *l == r.labels_per_class)
        {
            Some((_, _, accs)) => accs.push(r.accuracy),
            None => groups.push((r.strategy.clone(), r.labels_per_class, vec![r.accuracy])),
        }
    }
    groups
        .into_iter()
        .map(|(strategy, labels_per_class, accs)| {
            let n = accs.len() as f64;
            let mean = accs.iter().sum::<f64>() / n;
            let var = accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
            AggregateRow {
                strategy,
                labels_per_class,
                mean_accuracy: mean,
                std_accuracy: var.sqrt(),
                seeds: accs.len(),
            }
        })
        .collect()
}

pub fn write_aggregate_csv(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "strategy,labels_per_class,mean_accuracy,std_accuracy,seeds")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.strategy, r.labels_per_class, r.mean_accuracy, r.std_accuracy, r.seeds
        )?;
    }
    Ok(())
}

/// Strategy-by-label-count table of mean accuracies (percent), the Table-1
/// shape. Columns are total labeled counts.
pub fn write_table1_csv(
    path: &Path,
    strategies: &[String],
    labels_per_class: &[usize],
    class_count: usize,
    agg: &[AggregateRow],
) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let header: Vec<String> = labels_per_class
        .iter()
        .map(|l| (l * class_count).to_string())
        .collect();
    writeln!(out, "strategy,{}", header.join(","))?;
    for s in strategies {
        let mut cells = Vec::with_capacity(labels_per_class.len());
        for l in labels_per_class {
            let cell = agg
                .iter()
                .find(|a| &a.strategy == s && a.labels_per_class == *l)
                .map_or_else(String::new, |a| format!("{:.1}", a.mean_accuracy * 100.0));
            cells.push(cell);
        }
        writeln!(out, "{s},{}", cells.join(","))?;
    }
    Ok(())
}

pub fn write_report_csv(path: &Path, report: &TrainReport) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "step,epoch,hard_loss,soft_loss,current_size,test_accuracy")?;
    for e in &report.epochs {
        let acc = e.test_accuracy.map_or_else(String::new, |a| a.to_string());
        writeln!(
            out,
            "{},{},{},{},{},{acc}",
            e.step, e.epoch, e.hard_loss, e.soft_loss, e.current_size
        )?;
    }
    Ok(())
}

/// Class-1 probability on a 2-d grid: `x,y,p_class1`.
pub fn write_grid_csv(path: &Path, grid: &Matrix, probs_class1: &[f64]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "x,y,p_class1")?;
    for (i, p) in probs_class1.iter().enumerate() {
        writeln!(out, "{},{},{p}", grid.get(i, 0), grid.get(i, 1))?;
    }
    Ok(())
}

/// Snapshot of a pseudo set in 2-d plotting coordinates. Points living in an
/// embedded space are projected back through the embedding's least-squares
/// preimage.
pub fn write_pseudo_snapshot_csv(
    path: &Path,
    step: usize,
    examples: &[PseudoExample],
    embedding: Option<&EmbeddingMap>,
) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "step,index,x,y,ref_argmax,sigma,weight")?;
    for (i, p) in examples.iter().enumerate() {
        let coords = match embedding {
            Some(map) => map
                .project_back(&p.x)
                .map_err(|e| crate::error::CliError::Numeric(e.to_string()))?,
            None => p.x.clone(),
        };
        let (x, y) = (coords[0], *coords.get(1).unwrap_or(&0.0));
        let argmax = p
            .ref_probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
            .map_or(0, |(c, _)| c);
        writeln!(out, "{step},{i},{x},{y},{argmax},{},{}", p.sigma, p.weight)?;
    }
    Ok(())
}

/// Writes `manifest.json`: the command, the fully resolved config, and every
/// output file the run produced.
pub fn write_manifest(
    path: &Path,
    command: &str,
    config_echo: &BTreeMap<String, String>,
    files: &[PathBuf],
) -> Result<()> {
    let config: serde_json::Map<String, serde_json::Value> = config_echo
        .iter()
        .map(|(k, v)| (k.clone(), serde_json::Value::String(v.clone())))
        .collect();
    let manifest = serde_json::json!({
        "command": command,
        "config": config,
        "files": files.iter().map(|f| f.display().to_string()).collect::<Vec<_>>(),
    });
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, &manifest)
        .map_err(|e| crate::error::CliError::Data(e.to_string()))?;
    out.write_all(b"\n")?;
    Ok(())
}
