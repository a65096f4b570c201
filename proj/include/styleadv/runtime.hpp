#pragma once

namespace styleadv::runtime {

/// Strict determinism: every reduction that spans work items is split into a
/// fixed number of chunks and merged in order, so results do not depend on the
/// OpenMP thread count. Off, reductions use one chunk per thread (faster on
/// many-core machines, results may vary with the thread count).
void set_strict_determinism(bool on);
bool strict_determinism();

/// Worker count for parallel kernels. 0 keeps the OpenMP default.
void set_num_threads(int n);
int num_threads();

/// Number of chunks a cross-item reduction over `items` work items is split into.
int reduction_chunks(long items);

}  // namespace styleadv::runtime
