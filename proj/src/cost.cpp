#include "sepnet/cost.hpp"

#include <cmath>

namespace sepnet {

CostReport count_costs(const ModelConfig& config) {
    CostReport report;
    for (const LayerSpec& l : architecture(config)) {
        const std::int64_t k2 = static_cast<std::int64_t>(l.kernel) * l.kernel;
        const std::int64_t area = static_cast<std::int64_t>(l.out_size) * l.out_size;
        CostRow row{l.name, l.kind};
        switch (l.kind) {
            case LayerKind::conv:
                row.mult_adds = area * k2 * l.in_channels * l.out_channels;
                row.params = k2 * l.in_channels * l.out_channels;
                break;
            case LayerKind::depthwise:
                row.mult_adds = area * k2 * l.in_channels;
                row.params = k2 * l.in_channels;
                break;
            case LayerKind::dense:
                row.mult_adds = static_cast<std::int64_t>(l.in_channels) * l.out_channels;
                row.params = row.mult_adds;
                break;
        }
        if (l.has_bias) row.params += l.out_channels;
        if (l.batchnorm) row.params += 2 * l.out_channels;
        report.total_mult_adds += row.mult_adds;
        report.total_params += row.params;
        report.rows.push_back(std::move(row));
    }
    return report;
}

long CostReport::rounded_million_mult_adds() const {
    return std::lround(static_cast<double>(total_mult_adds) / 1e6);
}

double CostReport::rounded_million_params() const {
    return std::round(static_cast<double>(total_params) / 1e5) / 10.0;
}

std::vector<ReferenceModel> reference_models() {
    return {
        {"GoogleNet", 1550.0, 6.8},
        {"VGG 16", 15300.0, 138.0},
    };
}

}  // namespace sepnet
