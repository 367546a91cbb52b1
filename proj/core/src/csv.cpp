#include "sdcore/csv.hpp"

#include <sstream>
#include <stdexcept>

#include "sdcore/parser.hpp"

namespace sd {

std::string run_to_csv(const RunResult& run, const std::vector<Identifier>& variables) {
    std::ostringstream os;
    os << 't';
    for (const auto& v : variables) os << ',' << v;
    os << '\n';
    for (size_t i = 0; i < run.times.size(); ++i) {
        os << format_double(run.times[i]);
        for (const auto& v : variables) os << ',' << format_double(run.at(v)[i]);
        os << '\n';
    }
    return os.str();
}

std::string comparison_to_csv(const ComparisonReport& report) {
    std::ostringstream os;
    os << "# variable: " << report.variable << '\n';
    os << "# gap_pct_final: " << format_double(report.gap_pct_final) << '\n';
    os << "# divergence_month: "
       << (report.divergence_month ? format_double(*report.divergence_month) : "none") << '\n';
    os << "t,a,b,gap_pct\n";
    for (size_t i = 0; i < report.times.size(); ++i) {
        os << format_double(report.times[i]) << ',' << format_double(report.values_a[i])
           << ',' << format_double(report.values_b[i]) << ','
           << format_double(report.gap_pct[i]) << '\n';
    }
    return os.str();
}

std::string sweep_to_csv(const SweepReport& report, const std::vector<Identifier>& tracked) {
    std::ostringstream os;
    for (const auto& v : tracked) {
        auto it = report.verdicts.find(v);
        os << "# monotonicity " << v << ": "
           << (it == report.verdicts.end() ? "?" : monotonicity_name(it->second)) << '\n';
    }
    os << 't';
    for (const auto& v : tracked)
        for (double f : report.factors) os << ',' << v << "[x" << format_double(f) << ']';
    os << '\n';
    if (report.runs.empty()) return os.str();
    const auto& times = report.runs.front().times;
    for (size_t i = 0; i < times.size(); ++i) {
        os << format_double(times[i]);
        for (const auto& v : tracked)
            for (const auto& run : report.runs) os << ',' << format_double(run.at(v)[i]);
        os << '\n';
    }
    return os.str();
}

}  // namespace sd
