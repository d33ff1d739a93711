#![allow(dead_code)]

use std::path::Path;

/// A seconds-scale configuration that exercises every stage.
pub fn tiny_config(out: &Path) -> String {
    format!(
        r#"
[run]
id = "tiny"
out_dir = "{}"

[data]
n_train = 24
n_val = 12
n_test = 12

[utility.model]
width = 8

[utility.model.fit]
steps = 20
batch_size = 8
lr = 2e-3

[obfuscator]
base_width = 8
depth = 2

[train]
lambda = 1.0
lr_o = 2e-3
lr_d = 2e-3
steps = 5
batch_size = 4

[attack]
width = 16
depth = 2

[attack.fit]
steps = 5
batch_size = 4
lr = 1e-3

[privacy.identity.fit]
steps = 10
batch_size = 8

[sweep]
lambdas = [0.0, 1.0]
blur_k = [1, 5]
detect_blur_k = [9]

[throughput]
resolutions = [[64, 64], [100, 90]]
n_frames = [3, 2]
"#,
        out.display()
    )
}

pub fn write_tiny_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("tiny.cfg");
    std::fs::write(&path, tiny_config(&dir.join("out"))).unwrap();
    path
}
