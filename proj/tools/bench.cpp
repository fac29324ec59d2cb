// Benchmark comparing the OpenMP kernels against the serial reference
// implementations. Sizes are modest so a full run stays under a minute.

#include <chrono>
#include <cstdio>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "crowdflow/density.hpp"
#include "crowdflow/features.hpp"
#include "crowdflow/flow.hpp"
#include "crowdflow/grid.hpp"
#include "crowdflow/mesa.hpp"
#include "crowdflow/pressure.hpp"
#include "crowdflow/rng.hpp"
#include "crowdflow/synth.hpp"
#include "ref/reference.hpp"

using namespace crowdflow;

namespace {

double now_ms() {
    using clock = std::chrono::steady_clock;
    return std::chrono::duration<double, std::milli>(clock::now().time_since_epoch()).count();
}

template <typename F> double time_ms(F&& fn, int reps = 3) {
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        const double t0 = now_ms();
        fn();
        best = std::min(best, now_ms() - t0);
    }
    return best;
}

void report(const char* name, double serial_ms, double parallel_ms) {
    std::printf("%-28s serial %9.2f ms   openmp %9.2f ms   speedup %5.2fx\n", name, serial_ms,
                parallel_ms, parallel_ms > 0 ? serial_ms / parallel_ms : 0.0);
}

} // namespace

int main() {
#ifdef _OPENMP
    std::printf("threads: %d\n", omp_get_max_threads());
#else
    std::printf("threads: 1 (built without OpenMP)\n");
#endif

    Rng rng(7);

    {
        Grid2D g(2048, 2048, 1);
        for (float& v : g.data()) v = static_cast<float>(rng.uniform(0.0, 1.0));
        const double ts = time_ms([&] { ref::integral_table_serial(g); });
        const double tp = time_ms([&] { integral_image(g); });
        report("integral_image 2048^2", ts, tp);
    }
    {
        Grid2D g(96, 96, 1);
        for (float& v : g.data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
        const double ts = time_ms([&] { ref::max_subarray_bruteforce(g); }, 1);
        const double tp = time_ms([&] { max_subarray(g); });
        report("max_subarray 96^2 (brute)", ts, tp);
    }
    {
        Grid2D g(512, 512, 1);
        for (float& v : g.data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
        const double tp = time_ms([&] { max_subarray(g); });
        std::printf("%-28s openmp %9.2f ms (no serial run at this size)\n",
                    "max_subarray 512^2", tp);
    }
    {
        const Scene scene = generate_scene(80, 256, 256, 11);
        const double ts = time_ms([&] { ref::dense_descriptors_serial(scene.image, 16); }, 1);
        const double tp = time_ms([&] { dense_descriptors(scene.image, 16); }, 1);
        report("dense_descriptors 256^2", ts, tp);
    }
    {
        AnnotationSet ann;
        ann.frame = 0;
        for (int i = 0; i < 400; ++i) {
            ann.points.emplace_back(rng.uniform(2.0, 640.0 - 2.0), rng.uniform(2.0, 480.0 - 2.0));
        }
        const double ts = time_ms([&] { ref::rasterize_ground_truth_serial(ann, 8.0, 640, 480); });
        const double tp = time_ms([&] { rasterize_ground_truth(ann, 8.0, 640, 480); });
        report("rasterize_gt 640x480x400", ts, tp);
    }
    {
        const Scene scene = generate_scene(40, 192, 192, 23);
        const Sequence seq =
            generate_sequence(scene, {VelocitySpec::Kind::Uniform, 0.2, 0.1, 0.0}, 11, 5);
        FlowParams p;
        const double tp = time_ms([&] { tvl1_flow(seq.frames[0], seq.frames[10], p); }, 1);
        std::printf("%-28s openmp %9.2f ms (serial = 1-thread run)\n", "tvl1_flow 192^2", tp);
    }
    {
        WorldGrid base(0, 0, 0.25, 160, 160, 32633, 2, 0.0f);
        std::vector<VelocityField> fields;
        for (int t = 0; t < 5; ++t) {
            VelocityField f = base;
            for (float& v : f.values) v = static_cast<float>(rng.uniform(-1.0, 1.0));
            fields.push_back(std::move(f));
        }
        const double ts = time_ms([&] { ref::velocity_variance_serial(fields, 1.0); });
        const double tp = time_ms([&] { velocity_variance(fields, 1.0); });
        report("velocity_variance 160^2x5", ts, tp);
    }
    return 0;
}
