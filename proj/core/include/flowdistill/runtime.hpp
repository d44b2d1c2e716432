#pragma once

namespace flowdistill {

/// Raises glibc's mmap and trim thresholds so the per-step matrix temporaries
/// are recycled from the heap instead of round-tripping through the kernel.
/// No-op on other C libraries. Call once at the top of main().
void tune_allocator() noexcept;

}  // namespace flowdistill
