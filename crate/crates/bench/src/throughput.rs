//! Per-frame obfuscation latency on the host machine.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use taskmask_core::models::ObfuscatorModel;
use taskmask_core::Frame;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ThroughputOutcome {
    Completed {
        median_ms: f64,
        p95_ms: f64,
        fps: f64,
    },
    /// Estimated working memory exceeded the limit; nothing was run.
    OutOfMemory { estimated_bytes: u64, limit_bytes: u64 },
    Failed { message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub height: usize,
    pub width: usize,
    pub n_frames: usize,
    pub estimated_peak_bytes: u64,
    /// Whether the network ran on a reflect-padded input.
    pub padded: bool,
    pub threads: usize,
    pub outcome: ThroughputOutcome,
}

impl ThroughputReport {
    pub fn fps(&self) -> Option<f64> {
        match self.outcome {
            ThroughputOutcome::Completed { fps, .. } => Some(fps),
            _ => None,
        }
    }
}

/// Nearest-rank percentile of an ascending slice.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

fn test_frame(h: usize, w: usize) -> Frame {
    let px = (0..3 * h * w)
        .map(|i| ((i as f32 * 0.618).fract() * 0.8 + 0.1).min(1.0))
        .collect();
    Frame::new("bench", w, h, px).expect("valid frame")
}

/// Times `n_frames` sequential calls after one warm-up call. Inference
/// parallelism inside each call follows the crate's execution mode.
pub fn bench_throughput(o: &ObfuscatorModel, h: usize, w: usize, n_frames: usize, memory_limit: u64) -> ThroughputReport {
    let estimated = o.infer_peak_bytes(h, w);
    let align = o.net.align;
    let mut report = ThroughputReport {
        height: h,
        width: w,
        n_frames,
        estimated_peak_bytes: estimated,
        padded: h % align != 0 || w % align != 0,
        threads: taskmask_nn::exec::threads(),
        outcome: ThroughputOutcome::Failed {
            message: String::new(),
        },
    };
    if estimated > memory_limit {
        report.outcome = ThroughputOutcome::OutOfMemory {
            estimated_bytes: estimated,
            limit_bytes: memory_limit,
        };
        return report;
    }
    if n_frames == 0 || h == 0 || w == 0 {
        report.outcome = ThroughputOutcome::Failed {
            message: "resolution and frame count must be positive".into(),
        };
        return report;
    }
    let run = catch_unwind(AssertUnwindSafe(|| {
        let frame = test_frame(h, w);
        let warm = o.obfuscate(&frame);
        assert_eq!((warm.width(), warm.height()), (w, h), "output size");
        let mut ms: Vec<f64> = (0..n_frames)
            .map(|_| {
                let t = Instant::now();
                std::hint::black_box(o.obfuscate(std::hint::black_box(&frame)));
                t.elapsed().as_secs_f64() * 1e3
            })
            .collect();
        ms.sort_by(f64::total_cmp);
        ms
    }));
    report.outcome = match run {
        Ok(ms) => {
            let median = percentile(&ms, 0.5);
            ThroughputOutcome::Completed {
                median_ms: median,
                p95_ms: percentile(&ms, 0.95),
                fps: 1e3 / median,
            }
        }
        Err(e) => ThroughputOutcome::Failed {
            message: e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()),
        },
    };
    report
}
