#ifndef SEPNET_COST_HPP
#define SEPNET_COST_HPP

#include "sepnet/model.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace sepnet {

/// One multiply-accumulate = one mult-add. conv: out^2 * k^2 * cin * cout,
/// depthwise: out^2 * k^2 * c, dense: k * m. Params count trainable tensors
/// (weights, biases, batchnorm gamma/beta); running statistics are excluded.
struct CostRow {
    std::string name;
    LayerKind kind;
    std::int64_t mult_adds = 0;
    std::int64_t params = 0;
};

struct CostReport {
    std::vector<CostRow> rows;
    std::int64_t total_mult_adds = 0;
    std::int64_t total_params = 0;

    /// Totals as displayed: mult-adds to the nearest million, params to 0.1 million.
    long rounded_million_mult_adds() const;
    double rounded_million_params() const;
};

CostReport count_costs(const ModelConfig& config);

/// Published comparison rows (million mult-adds, million params); constants,
/// not computed.
struct ReferenceModel {
    const char* name;
    double million_mult_adds;
    double million_params;
};
std::vector<ReferenceModel> reference_models();

}  // namespace sepnet

#endif  // SEPNET_COST_HPP
