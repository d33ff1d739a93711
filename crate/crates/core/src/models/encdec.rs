//! Shared encoder–decoder topology for the obfuscator and the deobfuscator.

use serde::{Deserialize, Serialize};
use taskmask_nn::{GraphBuilder, Init, ParamStore, Scalar, Slot};

use super::image_net::ImageNet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    /// Depthwise 3×3 followed by a pointwise 1×1, each with ReLU.
    DepthwiseSeparable,
    /// A single dense 3×3 convolution with ReLU.
    Dense,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputAct {
    Sigmoid,
    /// Hard clamp with the head bias initialised at 0.5.
    Clamp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncDecArch {
    pub width: usize,
    pub depth: usize,
    pub block: Block,
    /// Concatenate the full-resolution stem features into the last decoder stage.
    pub full_res_skip: bool,
    /// Concatenate the raw input in front of the output head.
    pub input_skip: bool,
    pub output: OutputAct,
}

fn block<S: Scalar>(b: &mut GraphBuilder<'_, S>, name: &str, x: Slot, cout: usize, stride: usize, kind: Block) -> Slot {
    match kind {
        Block::DepthwiseSeparable => {
            let d = b.depthwise(&format!("{name}.dw"), x, 3, stride);
            let d = b.relu(d);
            let p = b.conv(&format!("{name}.pw"), d, cout, 1, 1);
            b.relu(p)
        }
        Block::Dense => {
            let c = b.conv(&format!("{name}.conv"), x, cout, 3, stride);
            b.relu(c)
        }
    }
}

impl EncDecArch {
    pub fn build<S: Scalar>(&self, seed: u64) -> (ImageNet, ParamStore<S>) {
        assert!(self.depth >= 1 && self.width >= 1);
        let mut params = ParamStore::new();
        let mut b = GraphBuilder::new(&mut params, 3, seed);
        let input = b.input();
        let stem = b.conv("stem", input, self.width, 3, 1);
        let mut levels = vec![b.relu(stem)];
        for i in 1..=self.depth {
            let prev = levels[i - 1];
            levels.push(block(&mut b, &format!("enc{i}"), prev, self.width << i, 2, self.block));
        }
        let mut y = block(&mut b, "mid", levels[self.depth], self.width << self.depth, 1, self.block);
        for i in (0..self.depth).rev() {
            let mut u = b.upsample2(y);
            if i > 0 || self.full_res_skip {
                u = b.concat(u, levels[i]);
            }
            let f = b.conv(&format!("dec{i}.fuse"), u, self.width << i, 1, 1);
            let f = b.relu(f);
            y = block(&mut b, &format!("dec{i}"), f, self.width << i, 1, self.block);
        }
        if self.input_skip {
            y = b.concat(y, input);
        }
        let out = match self.output {
            OutputAct::Sigmoid => {
                let h = b.conv("head", y, 3, 1, 1);
                b.sigmoid(h)
            }
            OutputAct::Clamp => {
                let h = b.conv_init("head", y, 3, 1, 1, Init::HeUniform { gain: 0.1 });
                b.set_bias("head", 0.5);
                b.clamp01(h)
            }
        };
        let graph = b.finish(out);
        (
            ImageNet {
                graph,
                align: 1 << self.depth,
            },
            params,
        )
    }
}
