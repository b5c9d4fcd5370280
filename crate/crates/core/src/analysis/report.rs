use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::embedding::EmbeddingAnalysis;
use super::sweep::{Arm, SweepRow};
use crate::error::{Error, Result};

pub const REPORT_FILES: [&str; 8] = [
    "fig3_left.csv",
    "fig3_right.csv",
    "table2.csv",
    "fig4_pca.csv",
    "fig4_simdiff.csv",
    "fig4_hist.csv",
    "fig4_medians.csv",
    "summary.md",
];

fn num(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn write_file(dir: &Path, name: &str, text: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| Error::io(path, e))
}

struct CellStats<'a> {
    rows: Vec<&'a SweepRow>,
}

impl CellStats<'_> {
    fn mean(&self, f: impl Fn(&SweepRow) -> Option<f64>) -> Option<f64> {
        mean(self.rows.iter().map(|r| f(r)))
    }

    fn half_ci(&self, lo: impl Fn(&SweepRow) -> Option<f64>, hi: impl Fn(&SweepRow) -> Option<f64>) -> Option<f64> {
        mean(self.rows.iter().map(|r| Some((hi(r)? - lo(r)?) / 2.0)))
    }
}

fn group_rows(rows: &[SweepRow]) -> BTreeMap<(Arm, usize), CellStats<'_>> {
    let mut out: BTreeMap<(Arm, usize), CellStats> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.is_ok()) {
        out.entry((r.arm, r.n_labeled))
            .or_insert_with(|| CellStats { rows: Vec::new() })
            .rows
            .push(r);
    }
    out
}

type Field = fn(&SweepRow) -> Option<f64>;

fn fig3(groups: &BTreeMap<(Arm, usize), CellStats>, progression: bool) -> String {
    let mut s = String::from("arm,n_labeled,n_reps,icc31_mean,icc31_low,icc31_high,rmse_mean\n");
    for ((arm, n), g) in groups {
        let (p, lo, hi, rmse): (Field, Field, Field, Field) =
            if progression {
                (|r| r.pr_icc31, |r| r.pr_icc31_low, |r| r.pr_icc31_high, |r| r.pr_rmse)
            } else {
                (|r| r.cs_icc31, |r| r.cs_icc31_low, |r| r.cs_icc31_high, |r| r.cs_rmse)
            };
        let _ = writeln!(
            s,
            "{arm},{n},{},{},{},{},{}",
            g.rows.len(),
            num(g.mean(p)),
            num(g.mean(lo)),
            num(g.mean(hi)),
            num(g.mean(rmse))
        );
    }
    s
}

fn table2(groups: &BTreeMap<(Arm, usize), CellStats>, train_patients: usize) -> String {
    let mut s = String::from(
        "arm,scores_pct,n_labeled,n_labeled_samples,\
         cs_rmse,cs_rmse_vs_scratch,cs_rmse_ci_half,cs_icc,cs_icc_vs_scratch,cs_icc_ci_half,\
         pr_rmse,pr_rmse_vs_scratch,pr_rmse_ci_half,pr_icc,pr_icc_vs_scratch,pr_icc_ci_half\n",
    );
    let has_pretrained = groups.keys().any(|(a, _)| *a != Arm::Scratch);
    for ((arm, n), g) in groups {
        if has_pretrained && *arm == Arm::Scratch {
            continue;
        }
        let base = groups.get(&(Arm::Scratch, *n)).filter(|_| *arm != Arm::Scratch);
        let vs = |f: fn(&SweepRow) -> Option<f64>| -> Option<f64> { Some(g.mean(f)? - base?.mean(f)?) };
        let pct = 100.0 * *n as f64 / train_patients.max(1) as f64;
        let samples = g.rows.iter().map(|r| r.n_labeled_samples).sum::<usize>() as f64 / g.rows.len() as f64;
        let _ = writeln!(
            s,
            "{arm},{pct},{n},{samples},{},{},{},{},{},{},{},{},{},{},{},{}",
            num(g.mean(|r| r.cs_rmse)),
            num(vs(|r| r.cs_rmse)),
            num(g.half_ci(|r| r.cs_rmse_low, |r| r.cs_rmse_high)),
            num(g.mean(|r| r.cs_icc31)),
            num(vs(|r| r.cs_icc31)),
            num(g.half_ci(|r| r.cs_icc31_low, |r| r.cs_icc31_high)),
            num(g.mean(|r| r.pr_rmse)),
            num(vs(|r| r.pr_rmse)),
            num(g.half_ci(|r| r.pr_rmse_low, |r| r.pr_rmse_high)),
            num(g.mean(|r| r.pr_icc31)),
            num(vs(|r| r.pr_icc31)),
            num(g.half_ci(|r| r.pr_icc31_low, |r| r.pr_icc31_high)),
        );
    }
    s
}

/// Writes the PCA, similarity, histogram and median tables of an embedding
/// analysis; with `None`, writes the same files with headers only.
pub fn write_embedding_analysis(analysis: Option<&EmbeddingAnalysis>, dir: &Path) -> Result<()> {
    let mut pca = String::from("sample_id,group_id,timestamp,label,pc1,pc2\n");
    let mut simdiff = String::from("group_id,t1,t2,rank,delta_label,similarity\n");
    let mut hist = String::from("delta_label,count\n");
    let mut medians = String::from("delta_label,median_similarity\n");
    if let Some(a) = analysis {
        for p in &a.points {
            let label = p.label.map(|l| l.to_string()).unwrap_or_default();
            let _ = writeln!(pca, "{},{},{},{label},{},{}", p.sample_id, p.group_id, p.timestamp, p.pc1, p.pc2);
        }
        for r in &a.simdiff {
            let _ = writeln!(
                simdiff,
                "{},{},{},{},{},{}",
                r.group_id, r.t1, r.t2, r.rank, r.delta_label, r.similarity
            );
        }
        for (d, c) in &a.histogram {
            let _ = writeln!(hist, "{d},{c}");
        }
        for (d, m) in &a.medians {
            let _ = writeln!(medians, "{d},{m}");
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(dir, "fig4_pca.csv", &pca)?;
    write_file(dir, "fig4_simdiff.csv", &simdiff)?;
    write_file(dir, "fig4_hist.csv", &hist)?;
    write_file(dir, "fig4_medians.csv", &medians)
}

fn summary(rows: &[SweepRow], groups: &BTreeMap<(Arm, usize), CellStats>, analysis: Option<&EmbeddingAnalysis>) -> String {
    let mut s = String::from("# Experiment summary\n\n");
    let ok = rows.iter().filter(|r| r.is_ok()).count();
    if rows.is_empty() {
        s.push_str("The sweep table has zero cells.\n");
    } else {
        let _ = writeln!(s, "{} cells: {ok} completed, {} failed.\n", rows.len(), rows.len() - ok);
        for r in rows.iter().filter(|r| !r.is_ok()) {
            let _ = writeln!(s, "- {}: {}", r.cell(), r.status);
        }
        if ok < rows.len() {
            s.push('\n');
        }
        s.push_str("| arm | labeled patients | reps | ICC totals | ICC progression | RMSE totals | RMSE progression |\n");
        s.push_str("|---|---:|---:|---:|---:|---:|---:|\n");
        let f = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "n/a".into());
        for ((arm, n), g) in groups {
            let _ = writeln!(
                s,
                "| {arm} | {n} | {} | {} | {} | {} | {} |",
                g.rows.len(),
                f(g.mean(|r| r.cs_icc31)),
                f(g.mean(|r| r.pr_icc31)),
                f(g.mean(|r| r.cs_rmse)),
                f(g.mean(|r| r.pr_rmse)),
            );
        }
    }
    if let Some(a) = analysis {
        let _ = writeln!(s, "\n## Embeddings ({})\n", a.score_name);
        let expl: Vec<String> = a.explained.iter().map(|e| format!("{e:.3}")).collect();
        let _ = writeln!(s, "Explained variance of the first components: {}.\n", expl.join(", "));
        s.push_str("| label difference | pairs | median similarity |\n|---:|---:|---:|\n");
        for (d, m) in &a.medians {
            let _ = writeln!(s, "| {d} | {} | {m:.4} |", a.histogram.get(d).copied().unwrap_or(0));
        }
    }
    s
}

/// Writes every report file into `dir`. `train_patients` sets the
/// denominator of the labeled percentage; by default the largest labeled
/// count in the table.
pub fn emit_report(
    rows: &[SweepRow],
    analysis: Option<&EmbeddingAnalysis>,
    dir: &Path,
    train_patients: Option<usize>,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let groups = group_rows(rows);
    let denom = train_patients.unwrap_or_else(|| rows.iter().map(|r| r.n_labeled).max().unwrap_or(1));
    write_file(dir, "fig3_left.csv", &fig3(&groups, false))?;
    write_file(dir, "fig3_right.csv", &fig3(&groups, true))?;
    write_file(dir, "table2.csv", &table2(&groups, denom))?;
    write_embedding_analysis(analysis, dir)?;
    write_file(dir, "summary.md", &summary(rows, &groups, analysis))
}
