#ifndef SEPNET_REPORT_HPP
#define SEPNET_REPORT_HPP

#include "sepnet/trainer.hpp"

#include <string>
#include <vector>

namespace sepnet {

struct Series {
    std::string name;
    std::vector<double> values;  // one per epoch, x = 1..n
};

/// Standalone SVG line chart. Series are drawn as polylines inside a plot
/// group whose transform flips the y axis, so point coordinates grow with the
/// plotted value.
std::string line_chart_svg(const std::string& title, const std::string& y_label, const std::vector<Series>& series);

std::string loss_chart(const std::vector<EpochRecord>& history);
std::string accuracy_chart(const std::vector<EpochRecord>& history);

}  // namespace sepnet

#endif  // SEPNET_REPORT_HPP
