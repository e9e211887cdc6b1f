//! Stage orchestration: run configuration, completion records, the five
//! pipeline commands and the ablation grids.

pub mod ablate;
pub mod config;
pub mod record;
pub mod stages;

pub use ablate::{ablation_csv, cmd_ablate, preset_cells, AblationRow, Cell, Preset};
pub use config::{Precision, RunConfig, Stage};
pub use record::{digest_dir, StageRecord, RECORD_FILE};
pub use stages::{
    cmd_adapt, cmd_discover, cmd_evaluate, cmd_generate_data, cmd_hallucinate, cmd_run_all, load_adapted, load_fseg,
    load_generator, load_snapshots, style_encoder, style_sets, DataSummary, DiscoverSummary, HallucinateSummary, StageOutcome,
};
