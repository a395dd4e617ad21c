#pragma once

namespace gnas {

// Keeps large tensor buffers on the heap instead of returning them to the OS
// after every epoch. No-op outside glibc. Call once at process start.
void configure_allocator();

}  // namespace gnas
