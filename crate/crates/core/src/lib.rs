//! Sparse depth priors from multi-view reconstructions of passing vehicles,
//! used as an auxiliary regression target for a small image classifier.
//!
//! The pipeline, module by module:
//!
//! 1. [`context`]: drop keypoint matches that did not move (fixed camera) or
//!    that move against the driving direction.
//! 2. [`alignment`]: bring every reconstruction into one world frame using a
//!    reference line parallel to the camera trajectory.
//! 3. [`reprojection`]: render the aligned points and lines into each frame as
//!    a sparse depth map.
//! 4. [`synth`]: generate labelled synthetic sequences with those maps.
//! 5. [`nn`]: a convolutional classifier with an auxiliary depth branch
//!    trained on a masked Huber loss.
//! 6. [`experiment`]: compare the baseline against the three depth variants.

pub mod alignment;
pub mod context;
pub mod experiment;
pub mod geometry;
pub mod nn;
pub mod reprojection;
pub mod scene;
pub mod synth;

pub use alignment::{
    align_to_world, solve_scale, AlignOptions, ReferenceLineObservation, ScaleSolution,
};
pub use geometry::{PinholeCamera, Ray, Segment3, VehicleModel3D};
pub use reprojection::{reproject, ReprojectionVariant, SparseDepthMap};

/// Worker thread cap from the `SPN_THREADS` environment variable, default 1.
pub fn worker_threads() -> usize {
    std::env::var("SPN_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}

/// Applies `f` to contiguous chunks of `items` on up to [`worker_threads`]
/// threads and returns the per-chunk results in input order.
pub(crate) fn parallel_chunks<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&[T]) -> R + Sync,
{
    let threads = worker_threads().min(items.len()).max(1);
    if threads == 1 {
        return vec![f(items)];
    }
    let chunk = items.len().div_ceil(threads);
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| {
                let f = &f;
                scope.spawn(move || f(c))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker thread panicked"))
            .collect()
    })
}
