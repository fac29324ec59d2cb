#pragma once

#include <array>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "crowdflow/flow.hpp"
#include "crowdflow/grid.hpp"

namespace crowdflow {

// 3x3 projective map from homogeneous pixel coordinates (u, v, 1) to world
// planimetric coordinates (easting, northing). Normalized so h33 = 1.
struct Homography {
    std::array<double, 9> h{1, 0, 0, 0, 1, 0, 0, 0, 1};

    double rms_residual = 0.0; // reprojection RMS of the fit, meters
};

// Exterior + interior orientation for per-frame geo-referencing against a
// horizontal terrain plane. Rotation is omega-phi-kappa in radians; at zero
// rotation the camera looks straight down with image u toward east and image
// v toward south.
struct CameraPose {
    double center_e = 0.0;
    double center_n = 0.0;
    double center_h = 0.0;
    double omega = 0.0;
    double phi = 0.0;
    double kappa = 0.0;
    double focal_px = 1.0;
    double pp_u = 0.0;
    double pp_v = 0.0;
    double terrain_h = 0.0;

    void validate() const;
};

using PixelMapping = std::variant<Homography, CameraPose>;

// Geo-anchored raster. origin_e/origin_n locate the outer corner of cell
// (0, 0); cell (i, j) covers [origin + i*cell, origin + (i+1)*cell) with j
// increasing northward. Cells equal to `nodata` carry no observation.
struct WorldGrid {
    double origin_e = 0.0;
    double origin_n = 0.0;
    double cell_size = 0.25;
    int width = 0;
    int height = 0;
    int epsg = 32633;
    int channels = 1;
    float nodata = -9999.0f;
    std::vector<float> values;

    WorldGrid() = default;
    WorldGrid(double oe, double on, double cs, int w, int h, int epsg_code, int ch = 1,
              float fill = 0.0f);

    float& at(int i, int j, int c = 0) {
        return values[(static_cast<std::size_t>(j) * width + i) * channels + c];
    }
    float at(int i, int j, int c = 0) const {
        return values[(static_cast<std::size_t>(j) * width + i) * channels + c];
    }
    bool is_nodata(int i, int j, int c = 0) const { return at(i, j, c) == nodata; }

    double cell_center_e(int i) const { return origin_e + (i + 0.5) * cell_size; }
    double cell_center_n(int j) const { return origin_n + (j + 0.5) * cell_size; }

    bool cell_of(double e, double n, int& i, int& j) const;
    bool same_frame(const WorldGrid& o) const;
};

// 2-channel WorldGrid: (v_east, v_north) in m/s.
using VelocityField = WorldGrid;

// Normalized DLT from >= 4 pixel<->world correspondences (Hartley
// normalization of both point sets). Degenerate input (duplicate points,
// 3 collinear pixel points among exactly-4 sets, rank loss) is rejected.
Homography fit_homography(const std::vector<std::pair<std::pair<double, double>,
                                                      std::pair<double, double>>>& pairs);

Homography invert(const Homography& h);

// Projective transform of a continuous pixel coordinate; throws for points
// mapped to infinity.
std::pair<double, double> pixel_to_world(const Homography& h, double u, double v);

// Ray from the projection center through the pixel, intersected with the
// horizontal plane at terrain height; throws when the ray does not descend
// (pixel at or above the horizon).
std::pair<double, double> pixel_to_world(const CameraPose& pose, double u, double v);

std::pair<double, double> pixel_to_world(const PixelMapping& mapping, double u, double v);

// Inverse transform under a homography (world -> pixel).
std::pair<double, double> world_to_pixel(const Homography& h, double e, double n);

struct RectifyStats {
    double in_mass = 0.0;        // density mass splatted into the grid
    double out_of_grid_mass = 0.0;
    long long skipped_pixels = 0; // no ray/plane intersection
};

// Derive a grid spec covering the projected footprint of a width x height
// image under `mapping`, padded by one cell.
WorldGrid fit_world_grid(const PixelMapping& mapping, int width, int height, double cell_size,
                         int epsg, int channels = 1);

// Splat each density pixel into the world cell containing its projected
// center (multiple hits sum), then smooth with a truncated Gaussian of
// sigma_w cells and rescale so the total equals the pre-smoothing in-grid
// mass exactly.
WorldGrid rectify_density(const Grid2D& density, const PixelMapping& mapping,
                          const WorldGrid& grid_spec, double sigma_w = 2.0,
                          RectifyStats* stats = nullptr);

// Velocity per pixel from the world positions of the pixel at time t and the
// flow-displaced pixel at time t+gap, divided by dt, binned into cells by
// the time-t position (cell value = mean of its contributors; empty cells
// hold the nodata marker).
VelocityField rectify_motion(const FlowField& flow, const PixelMapping& mapping_t,
                             const PixelMapping& mapping_t_gap, double dt,
                             const WorldGrid& grid_spec, RectifyStats* stats = nullptr);

// Cell mass -> persons per square meter.
WorldGrid density_to_per_m2(const WorldGrid& mass);

enum class WorldExportFormat { EsriAscii, GeoJsonPoints };

// ESRI ASCII grid (rows north to south, 17 significant digits, sidecar
// `<path>.prj` naming the EPSG code) or GeoJSON point-per-cell.
// Multi-channel grids exported as ESRI write one file per channel with a
// `_c<k>` stem suffix.
void export_world_grid(const WorldGrid& grid, const std::string& path, WorldExportFormat format);

// Reads a single-channel ESRI ASCII grid written by export_world_grid.
WorldGrid import_esri_ascii(const std::string& path);

// --- mapping files -----------------------------------------------------------
// `HOMOG 1` + 9 values, or `POSE 1` + center(3) rotation(3) focal pp(2)
// terrain height, ASCII.
void save_mapping(const PixelMapping& mapping, const std::string& path);
PixelMapping load_mapping(const std::string& path);

} // namespace crowdflow
