#include "crowdflow/mesa.hpp"

#include <algorithm>
#include <limits>
#include <vector>

#include "crowdflow/error.hpp"

namespace crowdflow {

namespace {

struct Candidate {
    double value = -std::numeric_limits<double>::infinity();
    BoxRegion box;
    bool valid = false;

    void offer(double v, const BoxRegion& b) {
        if (!valid || v > value || (v == value && b.lex_less(box))) {
            value = v;
            box = b;
            valid = true;
        }
    }
};

// Max-sum interval of `vals` via a prefix-minimum scan. Among equal sums the
// interval with the smallest start, then the smallest end, wins. Exactness of
// the tie rule relies on the same double accumulation order as the scan.
void best_interval(const std::vector<double>& vals, double& best_sum, int& best_a, int& best_b) {
    const int n = static_cast<int>(vals.size());
    double prefix = 0.0;       // sum of vals[0..x-1]
    double min_prefix = 0.0;   // minimum prefix over starts <= current end
    int min_prefix_at = 0;     // earliest index achieving min_prefix
    bool have = false;
    for (int x = 0; x < n; ++x) {
        const double prefix_next = prefix + vals[x];
        const double sum = prefix_next - min_prefix;
        if (!have || sum > best_sum || (sum == best_sum && min_prefix_at < best_a)) {
            best_sum = sum;
            best_a = min_prefix_at;
            best_b = x;
            have = true;
        }
        if (prefix_next < min_prefix) {
            min_prefix = prefix_next;
            min_prefix_at = x + 1;
        }
        prefix = prefix_next;
    }
}

// Row-pair orientation: outer loop over (y0, y1), Kadane across columns.
MaxSubarrayResult solve_rows(const Grid2D& g) {
    const int w = g.width(), h = g.height();
    std::vector<Candidate> per_y0(h);
#pragma omp parallel for schedule(dynamic)
    for (int y0 = 0; y0 < h; ++y0) {
        std::vector<double> colsum(w, 0.0);
        Candidate local;
        for (int y1 = y0; y1 < h; ++y1) {
            for (int x = 0; x < w; ++x) colsum[x] += static_cast<double>(g.at(x, y1));
            double s = 0.0;
            int a = 0, b = 0;
            best_interval(colsum, s, a, b);
            local.offer(s, BoxRegion(a, y0, b, y1));
        }
        per_y0[y0] = local;
    }
    Candidate best;
    for (int y0 = 0; y0 < h; ++y0) best.offer(per_y0[y0].value, per_y0[y0].box);
    return {best.box, best.value};
}

// Column-pair orientation for wide-but-short grids; same global tie rule.
MaxSubarrayResult solve_cols(const Grid2D& g) {
    const int w = g.width(), h = g.height();
    std::vector<Candidate> per_x0(w);
#pragma omp parallel for schedule(dynamic)
    for (int x0 = 0; x0 < w; ++x0) {
        std::vector<double> rowsum(h, 0.0);
        Candidate local;
        for (int x1 = x0; x1 < w; ++x1) {
            for (int y = 0; y < h; ++y) rowsum[y] += static_cast<double>(g.at(x1, y));
            double s = 0.0;
            int a = 0, b = 0;
            best_interval(rowsum, s, a, b);
            local.offer(s, BoxRegion(x0, a, x1, b));
        }
        per_x0[x0] = local;
    }
    Candidate best;
    for (int x0 = 0; x0 < w; ++x0) best.offer(per_x0[x0].value, per_x0[x0].box);
    return {best.box, best.value};
}

} // namespace

MaxSubarrayResult max_subarray(const Grid2D& grid) {
    if (grid.channels() != 1) throw validation_error("max_subarray: input must be single-channel");
    if (grid.width() <= 0 || grid.height() <= 0) throw validation_error("max_subarray: empty grid");
    // Iterate over the smaller dimension squared.
    return grid.height() <= grid.width() ? solve_rows(grid) : solve_cols(grid);
}

double mesa_distance(const Grid2D& f1, const Grid2D& f2) {
    if (f1.width() != f2.width() || f1.height() != f2.height()) {
        throw validation_error("mesa_distance: dimension mismatch");
    }
    const double over = max_subarray(grid_difference(f1, f2)).value;
    const double under = max_subarray(grid_difference(f2, f1)).value;
    return std::max({over, under, 0.0});
}

} // namespace crowdflow
