#![allow(dead_code)]

use std::path::Path;

use nfsdf::config::ExperimentConfig;

/// A configuration small enough to run the whole pipeline in seconds.
pub fn tiny_config(out: &Path) -> ExperimentConfig {
    ExperimentConfig::from_toml(&format!(
        r#"
seed = 11
out = "{}"

[corpus]
train_count = 6
heldout_count = 3

[decoder]
epochs = 4
samples_per_shape = 256
lr_decay_every = 2
[decoder.decoder]
hidden = 16

[flow]
steps = 20

[protocol]
complete_points = 200
partial_points = 30
partial_views = 2
trials = 2

[eval]
grid_resolution = 16
mesh_samples = 300
oracle_samples = 300

[optimizer.gn]
max_iters = 5
"#,
        out.display()
    ))
    .unwrap()
}

pub fn tiny_toml(out: &Path) -> String {
    tiny_config(out).to_toml()
}
