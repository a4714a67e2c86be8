//! Agreement and semantic attraction experiment.
//!
//! Items follow an eight-condition design crossing the kind of violation at
//! the verb (agreement, semantic, both) with the kind of attractor noun. The
//! attention measure at the verb is
//! `RelAttn = Attn(v, s) / (Attn(v, s) + Attn(v, n))` for subject `s` and
//! non-subject noun `n`.

mod contrasts;
mod measures;
mod stimuli;

pub use contrasts::{
    contrasts, format_report, BootstrapConfig, Contrast, ContrastReport, ContrastResult, Measure, CONTRASTS,
};
pub use measures::{
    export_csv, import_csv, measure_item, measures_from_csv, measures_to_csv, rel_attn, rel_attn_pair, run_stimuli,
    sort_measures, CheckpointRun, ItemMeasure, MEASURE_HEADER,
};
pub use stimuli::{
    format_stimuli, load_stimuli, parse_stimuli, preprocess, AttractorType, Condition, ReplacementList, StimulusItem,
    StimulusSet, Violation, STIMULUS_HEADER,
};
