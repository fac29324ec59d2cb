#include "crowdflow/analytics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "crowdflow/error.hpp"

namespace crowdflow {

CountErrors count_errors(const std::vector<double>& est, const std::vector<double>& gt) {
    if (est.size() != gt.size()) throw validation_error("count_errors: length mismatch");
    if (est.empty()) throw validation_error("count_errors: empty lists");
    CountErrors out;
    double pct_sum = 0.0;
    int pct_n = 0;
    for (std::size_t i = 0; i < est.size(); ++i) {
        if (!(gt[i] >= 0.0)) throw validation_error("count_errors: ground truth must be >= 0");
        const double err = std::abs(est[i] - gt[i]);
        out.mae += err;
        if (gt[i] > 0.0) {
            pct_sum += err / gt[i] * 100.0;
            ++pct_n;
        } else {
            ++out.frames_gt_zero;
        }
    }
    out.mae /= static_cast<double>(est.size());
    out.mean_pct = pct_n > 0 ? pct_sum / pct_n : 0.0;
    return out;
}

double temporal_smoothness(const std::vector<double>& counts) {
    if (counts.size() < 2) throw validation_error("temporal_smoothness: need at least 2 counts");
    const std::size_t n = counts.size() - 1;
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += counts[i + 1] - counts[i];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = (counts[i + 1] - counts[i]) - mean;
        var += d * d;
    }
    return std::sqrt(var / static_cast<double>(n));
}

void write_count_report(const std::string& path, const std::vector<std::int64_t>& frames,
                        const std::vector<double>& gt, const std::vector<double>& est) {
    if (frames.size() != gt.size() || gt.size() != est.size()) {
        throw validation_error("write_count_report: length mismatch");
    }
    const CountErrors errs = count_errors(est, gt);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("write_count_report: cannot open '" + path + "'");
    out << "frame,gt_count,est_count,abs_err,pct_err\n";
    char line[160];
    for (std::size_t i = 0; i < frames.size(); ++i) {
        const double err = std::abs(est[i] - gt[i]);
        if (gt[i] > 0.0) {
            std::snprintf(line, sizeof(line), "%lld,%.17g,%.17g,%.17g,%.17g\n",
                          static_cast<long long>(frames[i]), gt[i], est[i], err,
                          err / gt[i] * 100.0);
        } else {
            std::snprintf(line, sizeof(line), "%lld,%.17g,%.17g,%.17g,\n",
                          static_cast<long long>(frames[i]), gt[i], est[i], err);
        }
        out << line;
    }
    std::snprintf(line, sizeof(line), "# mae=%.17g\n", errs.mae);
    out << line;
    std::snprintf(line, sizeof(line), "# mean_pct=%.17g\n", errs.mean_pct);
    out << line;
    std::snprintf(line, sizeof(line), "# frames_gt_zero=%d\n", errs.frames_gt_zero);
    out << line;
    if (est.size() >= 2) {
        std::snprintf(line, sizeof(line), "# smoothness_est=%.17g\n", temporal_smoothness(est));
        out << line;
    }
    if (!out) throw io_error("write_count_report: write failed for '" + path + "'");
}

} // namespace crowdflow
