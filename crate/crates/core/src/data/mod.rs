//! Feature datasets: in-memory form, the `TCFT` file format, the synthetic
//! complex-action generator and temporal-extent alterations.

mod alter;
mod dataset;
mod format;
mod synth;

pub use alter::{alter_dataset, alter_extents, AlterationSpec, Granularity, SegmentAction};
pub use dataset::{FeatureDataset, FeatureDims, Sample};
pub use format::{encode_features, read_features, write_features, FORMAT_VERSION, HEADER_LEN};
pub use synth::{
    labels_for, place_motif, synth_generate, synth_generate_traced, waveform, FollowSpec, MotifSpec, Placement,
    SynthSpec,
};
