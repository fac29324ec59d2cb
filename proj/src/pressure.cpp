#include "crowdflow/pressure.hpp"

#include <cmath>

#include "crowdflow/error.hpp"

namespace crowdflow {

WorldGrid velocity_variance(const std::vector<VelocityField>& fields, double radius_m) {
    if (fields.empty()) throw validation_error("velocity_variance: empty window");
    if (radius_m < 0.0) throw validation_error("velocity_variance: radius must be >= 0");
    const WorldGrid& base = fields[0];
    for (const auto& f : fields) {
        if (!f.same_frame(base) || f.channels != 2) {
            throw validation_error("velocity_variance: fields must share grid frame and be 2-channel");
        }
    }
    const int rc = static_cast<int>(std::floor(radius_m / base.cell_size));
    const double r2 = radius_m * radius_m;

    WorldGrid out(base.origin_e, base.origin_n, base.cell_size, base.width, base.height, base.epsg,
                  1, 0.0f);
    out.nodata = base.nodata;
#pragma omp parallel for schedule(static)
    for (int j = 0; j < base.height; ++j) {
        for (int i = 0; i < base.width; ++i) {
            double se = 0.0, sn = 0.0, se2 = 0.0, sn2 = 0.0;
            long long n = 0;
            for (int dj = -rc; dj <= rc; ++dj) {
                const int jj = j + dj;
                if (jj < 0 || jj >= base.height) continue;
                for (int di = -rc; di <= rc; ++di) {
                    const int ii = i + di;
                    if (ii < 0 || ii >= base.width) continue;
                    const double de = (di * base.cell_size);
                    const double dn = (dj * base.cell_size);
                    if (de * de + dn * dn > r2) continue;
                    for (const auto& f : fields) {
                        const float ve = f.at(ii, jj, 0);
                        const float vn = f.at(ii, jj, 1);
                        if (ve == f.nodata || vn == f.nodata) continue;
                        se += ve;
                        sn += vn;
                        se2 += static_cast<double>(ve) * ve;
                        sn2 += static_cast<double>(vn) * vn;
                        ++n;
                    }
                }
            }
            if (n < 2) {
                out.at(i, j) = 0.0f;
            } else {
                const double me = se / n, mn = sn / n;
                const double var = (se2 / n - me * me) + (sn2 / n - mn * mn);
                out.at(i, j) = static_cast<float>(std::max(var, 0.0));
            }
        }
    }
    return out;
}

WorldGrid pressure_map(const WorldGrid& density_per_m2, const WorldGrid& variance) {
    if (!density_per_m2.same_frame(variance) || density_per_m2.channels != 1 ||
        variance.channels != 1) {
        throw validation_error("pressure_map: grids must share frame and be single-channel");
    }
    WorldGrid out(density_per_m2.origin_e, density_per_m2.origin_n, density_per_m2.cell_size,
                  density_per_m2.width, density_per_m2.height, density_per_m2.epsg, 1, 0.0f);
    out.nodata = density_per_m2.nodata;
#pragma omp parallel for schedule(static)
    for (int j = 0; j < out.height; ++j) {
        for (int i = 0; i < out.width; ++i) {
            const float d = density_per_m2.at(i, j);
            const float v = variance.at(i, j);
            if (d == density_per_m2.nodata || v == variance.nodata) {
                out.at(i, j) = out.nodata;
            } else {
                out.at(i, j) = static_cast<float>(static_cast<double>(d) * v);
            }
        }
    }
    return out;
}

} // namespace crowdflow
