//! Fixed ablation grids, run as independent pipelines sharing one output
//! directory so common upstream stages are computed once.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

use super::config::RunConfig;
use super::stages::cmd_run_all;
use crate::adaptation::{AdaptMode, Scheme};
use crate::error::{DhaError, IoContext, Result};
use crate::evaluation::DomainMetrics;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    FrameworkDesign,
    KSweep,
    AdaptMode,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::FrameworkDesign, Preset::KSweep, Preset::AdaptMode];

    pub fn as_str(self) -> &'static str {
        match self {
            Preset::FrameworkDesign => "framework_design",
            Preset::KSweep => "k_sweep",
            Preset::AdaptMode => "adapt_mode",
        }
    }
}

impl FromStr for Preset {
    type Err = DhaError;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| DhaError::Invalid(format!("unknown ablation preset `{s}` (framework_design|k_sweep|adapt_mode)")))
    }
}

/// One row of an ablation table: a label and the config it runs.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub label: String,
    pub config: RunConfig,
}

fn cell(label: &str, base: &RunConfig, edit: impl FnOnce(&mut RunConfig)) -> Cell {
    let mut config = base.clone();
    edit(&mut config);
    Cell {
        label: label.into(),
        config,
    }
}

/// The config grid of `preset`, every cell derived from `base` and sharing
/// its seed.
pub fn preset_cells(preset: Preset, base: &RunConfig) -> Vec<Cell> {
    match preset {
        Preset::FrameworkDesign => vec![
            cell("source_only", base, |c| c.mode = AdaptMode::SourceOnly),
            cell("traditional_uda", base, |c| c.mode = AdaptMode::TraditionalRaw),
            cell("discover_adapt", base, |c| c.mode = AdaptMode::DomainWiseRaw),
            cell("discover_hallucinate", base, |c| c.mode = AdaptMode::None),
            cell("discover_hallucinate_traditional", base, |c| c.mode = AdaptMode::TraditionalTranslated),
            cell("dha", base, |c| c.mode = AdaptMode::DomainWise),
        ],
        Preset::KSweep => {
            let mut cells: Vec<Cell> = (2..=5)
                .map(|k| {
                    cell(&format!("k{k}"), base, |c| {
                        c.k = Some(k);
                        c.mode = AdaptMode::None;
                    })
                })
                .collect();
            cells.push(cell("k3_no_style_loss", base, |c| {
                c.k = Some(3);
                c.mode = AdaptMode::None;
                c.weights.style = 0.0;
            }));
            cells
        }
        Preset::AdaptMode => {
            // the loss form follows the scheme; the iteration count is pinned
            // so only the form differs between paired rows
            let iters = base.adapt_iterations();
            let with = |label: &str, mode: AdaptMode, scheme: Scheme| {
                cell(label, base, move |c| {
                    c.mode = mode;
                    c.scheme = scheme;
                    c.adapt_iterations = Some(iters);
                })
            };
            vec![
                with("none", AdaptMode::None, base.scheme),
                with("traditional_log", AdaptMode::TraditionalTranslated, Scheme::Short),
                with("traditional_ls", AdaptMode::TraditionalTranslated, Scheme::Long),
                with("domain_wise_log", AdaptMode::DomainWise, Scheme::Short),
                with("domain_wise_ls", AdaptMode::DomainWise, Scheme::Long),
            ]
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub label: String,
    pub metrics: DomainMetrics,
}

/// CSV with one row per cell: per-style mIoU then the C and C+O means, in
/// percent.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("row");
    if let Some(first) = rows.first() {
        for s in first.metrics.compound.iter().chain(&first.metrics.open) {
            let _ = write!(out, ",{}", s.style);
        }
    }
    out.push_str(",C,C+O\n");
    for r in rows {
        out.push_str(&r.label);
        for s in r.metrics.compound.iter().chain(&r.metrics.open) {
            let _ = write!(out, ",{:.2}", 100.0 * s.miou);
        }
        let _ = writeln!(out, ",{:.2},{:.2}", 100.0 * r.metrics.c, 100.0 * r.metrics.c_plus_o);
    }
    out
}

pub fn ablation_path(base: &RunConfig, preset: Preset) -> PathBuf {
    base.output_dir.join(format!("ablation_{}.csv", preset.as_str()))
}

/// Run every cell of `preset` and write the comparison table.
pub fn cmd_ablate(base: &RunConfig, preset: Preset, out: &mut dyn Write) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for c in preset_cells(preset, base) {
        let _ = writeln!(out, "== {} / {}", preset.as_str(), c.label);
        let metrics = cmd_run_all(&c.config, out)?;
        rows.push(AblationRow { label: c.label, metrics });
    }
    let path = ablation_path(base, preset);
    fs::create_dir_all(&base.output_dir).at(&base.output_dir)?;
    let csv = ablation_csv(&rows);
    fs::write(&path, &csv).at(&path)?;
    let _ = write!(out, "{csv}");
    let _ = writeln!(out, "table written to {}", path.display());
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::{aggregate_domains, StyleScore};

    #[test]
    fn preset_row_counts() {
        let base = RunConfig::default();
        assert_eq!(preset_cells(Preset::FrameworkDesign, &base).len(), 6);
        assert_eq!(preset_cells(Preset::KSweep, &base).len(), 5);
        assert_eq!(preset_cells(Preset::AdaptMode, &base).len(), 5);
        assert!("table_9".parse::<Preset>().is_err());
    }

    #[test]
    fn cells_share_the_seed_and_upstream_stages() {
        use super::super::config::Stage;
        let base = RunConfig::default();
        let cells = preset_cells(Preset::FrameworkDesign, &base);
        for c in &cells {
            assert_eq!(c.config.master_seed, base.master_seed);
            assert_eq!(c.config.stage_dir(Stage::Hallucinate), base.stage_dir(Stage::Hallucinate));
        }
        let adapt: std::collections::HashSet<_> = cells.iter().map(|c| c.config.stage_dir(Stage::Adapt)).collect();
        assert_eq!(adapt.len(), cells.len());
        let ks = preset_cells(Preset::KSweep, &base);
        assert_eq!(ks[4].config.weights.style, 0.0);
        assert_eq!(ks[4].config.k, Some(3));
        let am = preset_cells(Preset::AdaptMode, &base);
        assert!(am.iter().all(|c| c.config.adapt_iterations() == base.adapt_iterations()));
    }

    #[test]
    fn csv_layout() {
        let s = |n: &str, m| StyleScore {
            style: n.into(),
            miou: m,
            images: 10,
        };
        let metrics = aggregate_domains(vec![s("night", 0.2), s("rain", 0.4)], vec![s("sunset", 0.3)]).unwrap();
        let csv = ablation_csv(&[AblationRow {
            label: "dha".into(),
            metrics,
        }]);
        assert_eq!(csv, "row,night,rain,sunset,C,C+O\ndha,20.00,40.00,30.00,30.00,30.00\n");
    }
}
