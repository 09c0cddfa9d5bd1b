//! Fixtures shared by the benchmarks.

use suplearn::experiment::{generate, preset, ExperimentConfig};
use suplearn::{DirectionSet, SupportSamples};

/// Exact unit-disk support samples at `n` equispaced angles.
pub fn disk_samples(n: usize) -> SupportSamples {
    let dirs = DirectionSet::circle(n).expect("n > 0");
    SupportSamples::new(dirs, vec![1.0; n]).expect("matching lengths")
}

/// The Dubins reference experiment at reduced path count.
pub fn dubins_config(n_x: usize, n_y: usize) -> ExperimentConfig {
    ExperimentConfig { n_x, n_y, ..preset("dubins-paper").expect("built-in preset") }
}

pub fn dubins_samples(n_x: usize, n_y: usize) -> SupportSamples {
    generate(&dubins_config(n_x, n_y)).expect("preset generates").samples
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_have_requested_sizes() {
        let d = disk_samples(12);
        assert_eq!((d.len(), d.dim()), (12, 2));
        assert!(d.values().iter().all(|&h| h == 1.0));
        let s = dubins_samples(5, 7);
        assert_eq!((s.len(), s.dim()), (7, 3));
    }
}
