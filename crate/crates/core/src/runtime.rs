//! Process-level allocator settings.

/// Keeps freed memory in the heap instead of returning it to the kernel.
///
/// Training allocates and frees megabyte-sized buffers every step; with the
/// glibc defaults each one is a fresh mmap or a heap trim, and the page
/// faults cost about as much as the arithmetic. Call once at startup. A
/// no-op outside glibc.
pub fn keep_heap_resident() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    // SAFETY: mallopt only adjusts allocator tunables; it is called before
    // any worker threads exist.
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 32 << 20);
        libc::mallopt(libc::M_TRIM_THRESHOLD, 1 << 30);
        libc::mallopt(libc::M_TOP_PAD, 64 << 20);
    }
}
