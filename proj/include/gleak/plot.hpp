#ifndef GLEAK_PLOT_HPP
#define GLEAK_PLOT_HPP

#include <string>
#include <vector>

// Minimal curve plots for run reports: one png per chart, series drawn over
// the sample index, labels in a builtin 3x5 pixel font. Nothing interactive;
// the report subcommand is the only customer.

namespace gleak::plot {

struct Series {
    std::string name;
    std::vector<double> y;
};

void render_curves(const std::string& path, const std::string& title,
                   const std::vector<Series>& series, bool log_y = false);

} // namespace gleak::plot

#endif
