#pragma once

namespace geodistill {

/// Worker count used by the OpenMP kernels. Defaults to 1 so that every
/// run is bitwise reproducible unless the caller opts in.
void set_thread_count(int threads);
int thread_count();

}  // namespace geodistill
