//! The matrix-free path never allocates anything the size of a p×p matrix.
//!
//! matrixmultiply keeps a fixed packing workspace (a few hundred kB, the
//! same for any p), so small p cannot be checked against p² directly. The
//! test checks the bound at p = 400 and that the peak grows subquadratically
//! from p = 200.

use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};

use romrec_core::krylov::{mbksvd, KrylovParams};
use romrec_core::recover::{self, bias_corrected_gradient, Problem, ProjectionMode, RecoveryConfig};
use romrec_core::sensing::{generate_instance, mean_observation, observe, sample_ensemble};
use romrec_core::LowRankFactors;

struct Counting;

static TRACKING: AtomicBool = AtomicBool::new(false);
static LARGEST: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        if TRACKING.load(Ordering::Relaxed) {
            LARGEST.fetch_max(layout.size(), Ordering::Relaxed);
        }
        System.alloc(layout)
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout)
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        if TRACKING.load(Ordering::Relaxed) {
            LARGEST.fetch_max(new_size, Ordering::Relaxed);
        }
        System.realloc(ptr, layout, new_size)
    }
}

#[global_allocator]
static GLOBAL: Counting = Counting;

fn largest_during<T>(f: impl FnOnce() -> T) -> (T, usize) {
    LARGEST.store(0, Ordering::SeqCst);
    TRACKING.store(true, Ordering::SeqCst);
    let out = f();
    TRACKING.store(false, Ordering::SeqCst);
    (out, LARGEST.load(Ordering::SeqCst))
}

/// Largest single allocation of one mbksvd call and of three AP-ROM
/// iterations, with the ensemble allocated beforehand.
fn peaks(p: usize, m: usize, r: usize) -> (usize, usize) {
    let truth = generate_instance(p, r, 1.0, 1).unwrap();
    let e = sample_ensemble(p, m, 2).unwrap();
    let obs = observe(&e, &truth, 0.0, 3).unwrap();
    let y_bar = mean_observation(&obs).unwrap();

    let ((), head) = largest_during(|| {
        let delta = bias_corrected_gradient(&e, &obs, y_bar, &LowRankFactors::zero(p)).unwrap();
        let params = KrylovParams::new(p, r, 0.1, 4).unwrap();
        assert_eq!(mbksvd(&delta, &params).unwrap().k(), r);
    });

    let mut config = RecoveryConfig::new(r, ProjectionMode::Mbksvd);
    config.max_iters = 3;
    let problem = Problem::fixed(&e, &obs, None);
    let (out, iters) = largest_during(|| recover::run(&problem, &config).unwrap());
    assert_eq!(out.1.records.len(), 3);
    (head, iters)
}

// One test per binary: the counter is process-wide.
#[test]
fn matrix_free_path_has_no_dense_buffer() {
    let dense = |p: usize| p * p * std::mem::size_of::<f64>();
    let (head_small, iters_small) = peaks(200, 2000, 5);
    let (head_large, iters_large) = peaks(400, 4000, 5);
    assert!(head_large < dense(400), "mbksvd peak {head_large} bytes, p² doubles {}", dense(400));
    assert!(iters_large < dense(400), "AP-ROM peak {iters_large} bytes, p² doubles {}", dense(400));
    // Quadratic growth would be ×4.
    assert!((head_large as f64) < 3.0 * head_small as f64, "{head_small} -> {head_large}");
    assert!((iters_large as f64) < 3.0 * iters_small as f64, "{iters_small} -> {iters_large}");
}
