#pragma once

#include <string>
#include <vector>

#include "tcal/calib_metrics.hpp"
#include "tcal/io_formats.hpp"

namespace tcal {

// Reliability bar diagram: one <rect class="bar"> per confidence bin (empty
// bins render with zero height), a translucent <rect class="gap"> between
// bin accuracy and bin confidence for each nonempty bin, and exactly one
// identity <line class="diagonal">.
std::string reliability_svg(const ReliabilityReport& report,
                            const std::string& title);
void write_reliability_svg(const ReliabilityReport& report,
                           const std::string& title, const std::string& path);

// Robustness chart: accuracy and average confidence against the perturbation
// level, drawn as two <polyline> curves over an evenly spaced sigma axis.
std::string sweep_svg(const std::vector<SweepRow>& rows,
                      const std::string& title);
void write_sweep_svg(const std::vector<SweepRow>& rows,
                     const std::string& title, const std::string& path);

}  // namespace tcal
