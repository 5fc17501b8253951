//! Fixtures shared by the benchmarks.

use splitstereo::boxes::{Box3D, ObjectClass};
use splitstereo::pipeline::{synthetic_dataset, PipelineConfig};
use splitstereo::Sample;

/// One validation frame of the default desk benchmark.
pub fn desk_frame() -> (PipelineConfig, Sample) {
    let mut cfg = PipelineConfig::default();
    cfg.dataset.n_train = 1;
    cfg.dataset.n_val = 1;
    let (_, mut val) = synthetic_dataset(&cfg).expect("default config generates");
    (cfg, val.remove(0))
}

/// Overlapping rotated car boxes on a line, one every 0.7 m.
pub fn box_row(n: usize) -> Vec<Box3D> {
    (0..n)
        .map(|i| {
            let mut b = Box3D::new([0.7 * i as f64, 1.65, 20.0], [1.5, 1.6, 3.9], 0.1 * i as f64, ObjectClass::Car, 1.0)
                .expect("valid box");
            b.score = 1.0 - i as f64 / n as f64;
            b
        })
        .collect()
}
