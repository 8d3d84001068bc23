//! Markdown renderings of run results.
//!
//! Numbers are rounded only here, at render time; JSON artifacts keep full
//! precision. `{:.N}` formatting rounds the exact binary value, so exact
//! decimal ties round to even.

use std::fmt::Write as _;

use tqx_core::classifier::{MeanStd, MetricSet};
use tqx_core::clustering::ClusterReport;

/// Fixed-point rendering that never prints a negative zero.
pub fn fixed(v: f64, decimals: usize) -> String {
    let s = format!("{v:.decimals$}");
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

pub fn mean_std(m: &MeanStd, decimals: usize) -> String {
    format!("{}±{}", fixed(m.mean, decimals), fixed(m.std, decimals))
}

/// Display name of an embedding row.
pub fn embedding_label(level: Option<&str>) -> String {
    match level {
        None => "Visual".to_string(),
        Some(name) => format!("Text - {name}"),
    }
}

/// One row per embedding, silhouette to two decimals.
pub fn silhouette_table(dataset: &str, rows: &[(String, f64)]) -> String {
    let mut out = String::new();
    writeln!(out, "# Silhouette coefficients").unwrap();
    writeln!(out).unwrap();
    writeln!(out, "| Embedding | {dataset} |").unwrap();
    writeln!(out, "|---|---:|").unwrap();
    for (name, s) in rows {
        writeln!(out, "| {name} | {} |", fixed(*s, 2)).unwrap();
    }
    out
}

struct Column {
    header: &'static str,
    decimals: usize,
    get: fn(&MetricSet) -> Option<MeanStd>,
}

const COLUMNS: [Column; 6] = [
    Column {
        header: "Acc (%)",
        decimals: 1,
        get: |m| Some(m.acc),
    },
    Column {
        header: "Acc_c (%)",
        decimals: 1,
        get: |m| m.acc_c,
    },
    Column {
        header: "F1",
        decimals: 3,
        get: |m| Some(m.macro_f1),
    },
    Column {
        header: "K_w",
        decimals: 3,
        get: |m| Some(m.kappa_quadratic),
    },
    Column {
        header: "Pre",
        decimals: 3,
        get: |m| Some(m.precision),
    },
    Column {
        header: "Rec",
        decimals: 3,
        get: |m| Some(m.recall),
    },
];

/// Mean±std per metric; the best mean of every column is bold.
pub fn classification_table(dataset: &str, rows: &[(String, &MetricSet)]) -> String {
    let mut out = String::new();
    let n_seeds = rows.first().map_or(0, |(_, m)| m.n_seeds);
    writeln!(out, "# Classification results").unwrap();
    writeln!(out).unwrap();
    writeln!(out, "{dataset}, mean±std over {n_seeds} seeds.").unwrap();
    writeln!(out).unwrap();
    write!(out, "| Embedding |").unwrap();
    for c in &COLUMNS {
        write!(out, " {} |", c.header).unwrap();
    }
    writeln!(out).unwrap();
    write!(out, "|---|").unwrap();
    for _ in &COLUMNS {
        write!(out, "---:|").unwrap();
    }
    writeln!(out).unwrap();

    let best: Vec<Option<f64>> = COLUMNS
        .iter()
        .map(|c| {
            rows.iter()
                .filter_map(|(_, m)| (c.get)(m).map(|v| v.mean))
                .filter(|v| v.is_finite())
                .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
        })
        .collect();
    for (name, m) in rows {
        write!(out, "| {name} |").unwrap();
        for (c, best) in COLUMNS.iter().zip(&best) {
            match (c.get)(m) {
                Some(v) => {
                    let cell = mean_std(&v, c.decimals);
                    if rows.len() > 1 && Some(v.mean) == *best {
                        write!(out, " **{cell}** |").unwrap();
                    } else {
                        write!(out, " {cell} |").unwrap();
                    }
                }
                None => write!(out, " n/a |").unwrap(),
            }
        }
        writeln!(out).unwrap();
    }
    out
}

/// Per-cluster class composition and top keywords for every embedding.
pub fn cluster_summary(class_order: &[String], rows: &[(String, &ClusterReport)]) -> String {
    let mut out = String::new();
    writeln!(out, "# Clusters").unwrap();
    for (name, report) in rows {
        writeln!(out).unwrap();
        writeln!(out, "## {name}").unwrap();
        writeln!(out).unwrap();
        write!(
            out,
            "k = {}, silhouette {}, inertia {}",
            report.k,
            fixed(report.silhouette_mean, 2),
            fixed(report.inertia, 4)
        )
        .unwrap();
        if let Some(m) = &report.matching {
            write!(out, ", matched agreement {}%", fixed(100.0 * m.agreement_ratio(), 1)).unwrap();
        }
        writeln!(out, ".").unwrap();
        if let Some(comp) = &report.composition {
            writeln!(out).unwrap();
            write!(out, "| Cluster | Size |").unwrap();
            for c in class_order {
                write!(out, " {c} (%) |").unwrap();
            }
            writeln!(out).unwrap();
            write!(out, "|---|---:|").unwrap();
            for _ in class_order {
                write!(out, "---:|").unwrap();
            }
            writeln!(out).unwrap();
            for (cluster, row) in comp.iter().enumerate() {
                write!(out, "| {cluster} | {} |", report.cluster_sizes[cluster]).unwrap();
                for v in row {
                    write!(out, " {} |", fixed(*v, 1)).unwrap();
                }
                writeln!(out).unwrap();
            }
        }
        if let Some(top) = &report.top_keywords {
            writeln!(out).unwrap();
            for (cluster, kws) in top.iter().enumerate() {
                let terms: Vec<String> = kws
                    .iter()
                    .map(|k| format!("{} ({})", k.text, fixed(k.mean_rank, 1)))
                    .collect();
                writeln!(out, "- cluster {cluster}: {}", terms.join(", ")).unwrap();
            }
        }
    }
    out
}
