#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace crowdflow {

struct CountErrors {
    double mae = 0.0;      // mean absolute count error, persons
    double mean_pct = 0.0; // mean percent error over frames with gt > 0
    int frames_gt_zero = 0;
};

// MAE over all frames; percent error averaged over frames with positive
// ground truth (zero-gt frames are counted in the diagnostics instead).
CountErrors count_errors(const std::vector<double>& est, const std::vector<double>& gt);

// Population standard deviation of successive count differences; lower means
// a steadier count trace.
double temporal_smoothness(const std::vector<double>& counts);

// CSV: `frame,gt_count,est_count,abs_err,pct_err` rows plus `#`-prefixed
// summary footer lines.
void write_count_report(const std::string& path, const std::vector<std::int64_t>& frames,
                        const std::vector<double>& gt, const std::vector<double>& est);

} // namespace crowdflow
