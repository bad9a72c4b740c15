//! Allocator tuning for the training loop.
//!
//! Every graph op allocates fresh multi-megabyte buffers. By default glibc
//! serves those with `mmap` and hands them back on free, so each step pays
//! for faulting the same pages in again. Raising the mmap and trim
//! thresholds keeps freed buffers in the heap for reuse.

use std::sync::Once;

static TUNE: Once = Once::new();

/// Idempotent; a no-op off glibc.
pub fn retain_freed_buffers() {
    TUNE.call_once(|| {
        #[cfg(all(target_os = "linux", target_env = "gnu"))]
        // SAFETY: mallopt only adjusts allocator parameters.
        unsafe {
            libc::mallopt(libc::M_MMAP_THRESHOLD, 32 << 20);
            libc::mallopt(libc::M_TRIM_THRESHOLD, i32::MAX);
        }
    });
}
