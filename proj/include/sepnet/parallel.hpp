#ifndef SEPNET_PARALLEL_HPP
#define SEPNET_PARALLEL_HPP

#include <cstdint>
#include <functional>

namespace sepnet {

/// Worker count used by kernels and data loading. Results never depend on it:
/// work is split only across independent output elements.
void set_num_threads(int n);
int num_threads();

/// Calls fn(i) for every i in [0, n). Calls may run concurrently, so fn must
/// only write state owned by index i.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn);

}  // namespace sepnet

#endif  // SEPNET_PARALLEL_HPP
