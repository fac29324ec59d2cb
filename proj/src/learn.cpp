#include "crowdflow/learn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>

#include "crowdflow/error.hpp"
#include "crowdflow/mesa.hpp"

namespace crowdflow {

std::vector<double> box_feature_counts(const FeatureIndexMap& feat, const BoxRegion& box) {
    if (box.x1 >= feat.width() || box.y1 >= feat.height()) {
        throw validation_error("box_feature_counts: box out of bounds");
    }
    std::vector<double> counts(feat.total_vocab(), 0.0);
    for (int y = box.y0; y <= box.y1; ++y) {
        for (int x = box.x0; x <= box.x1; ++x) {
            for (int c = 0; c < feat.channels(); ++c) counts[feat.global_at(x, y, c)] += 1.0;
        }
    }
    return counts;
}

namespace {

std::vector<std::pair<std::int32_t, float>> sparsify(const std::vector<double>& dense) {
    std::vector<std::pair<std::int32_t, float>> sparse;
    for (std::size_t i = 0; i < dense.size(); ++i) {
        if (dense[i] != 0.0) sparse.emplace_back(static_cast<std::int32_t>(i),
                                                 static_cast<float>(dense[i]));
    }
    return sparse;
}

double dot(const std::vector<double>& w,
           const std::vector<std::pair<std::int32_t, float>>& sparse) {
    double s = 0.0;
    for (const auto& [idx, cnt] : sparse) s += w[idx] * static_cast<double>(cnt);
    return s;
}

double regularizer_value(const std::vector<double>& w, Regularizer reg, double lambda1) {
    double r = 0.0;
    if (reg == Regularizer::L1) {
        for (double v : w) r += v;
        r *= lambda1;
    } else {
        for (double v : w) r += 0.5 * v * v;
    }
    return r;
}

// Relaxed objective R(w) + lambda_fit * sum_i max(0, max_{B in C_i} |w.c - t|),
// together with the active (argmax) constraint per instance for the subgradient.
struct RelaxedEval {
    double objective = 0.0;
    std::vector<int> active;  // constraint index per instance, -1 if slack 0
    std::vector<double> sign; // sign of the active residual
    std::vector<double> slack;
};

RelaxedEval eval_relaxed(const std::vector<double>& w,
                         const std::vector<std::vector<BoxConstraint>>& per_instance,
                         Regularizer reg, double lambda1, double lambda_fit) {
    RelaxedEval ev;
    const int n = static_cast<int>(per_instance.size());
    ev.active.assign(n, -1);
    ev.sign.assign(n, 0.0);
    ev.slack.assign(n, 0.0);
    double fit = 0.0;
    for (int i = 0; i < n; ++i) {
        double worst = 0.0;
        int worst_j = -1;
        double worst_sign = 0.0;
        const auto& cons = per_instance[i];
        for (int j = 0; j < static_cast<int>(cons.size()); ++j) {
            const double resid = dot(w, cons[j].counts) - cons[j].target;
            const double viol = std::abs(resid);
            if (viol > worst) {
                worst = viol;
                worst_j = j;
                worst_sign = resid >= 0.0 ? 1.0 : -1.0;
            }
        }
        ev.active[i] = worst_j;
        ev.sign[i] = worst_sign;
        ev.slack[i] = worst;
        fit += worst;
    }
    ev.objective = regularizer_value(w, reg, lambda1) + lambda_fit * fit;
    return ev;
}

// Least-squares warm start over all stored cuts: CGNR on min ||Aw - t||^2
// (handles the nearly parallel rows box constraints produce), negatives
// clamped, then Gauss-Seidel coordinate descent under w >= 0 to repair the
// clamping. Purely an initializer: the subgradient phase below minimizes the
// real regularized objective.
void nnls_warm_start(std::vector<double>& w,
                     const std::vector<std::vector<BoxConstraint>>& per_instance,
                     const std::vector<char>& coverage_zero) {
    const std::size_t dim = w.size();
    struct Entry {
        int constraint;
        double coeff;
    };
    std::vector<std::vector<Entry>> by_feature(dim);
    std::vector<const BoxConstraint*> rows;
    std::vector<double> diag(dim, 0.0);
    for (const auto& cons : per_instance) {
        for (const auto& bc : cons) {
            const int cid = static_cast<int>(rows.size());
            rows.push_back(&bc);
            for (const auto& [idx, cnt] : bc.counts) {
                const double c = static_cast<double>(cnt);
                by_feature[idx].push_back({cid, c});
                diag[idx] += c * c;
            }
        }
    }
    const int m = static_cast<int>(rows.size());

    const auto apply_a = [&](const std::vector<double>& x, std::vector<double>& out) {
        for (int i = 0; i < m; ++i) {
            double s = 0.0;
            for (const auto& [idx, cnt] : rows[i]->counts) s += x[idx] * static_cast<double>(cnt);
            out[i] = s;
        }
    };
    const auto apply_at = [&](const std::vector<double>& y, std::vector<double>& out) {
        for (std::size_t f = 0; f < dim; ++f) {
            double s = 0.0;
            for (const auto& e : by_feature[f]) s += y[e.constraint] * e.coeff;
            out[f] = coverage_zero[f] ? 0.0 : s;
        }
    };

    // CGNR
    {
        std::vector<double> r(m), g(dim), p(dim), ap(m);
        apply_a(w, r);
        for (int i = 0; i < m; ++i) r[i] = rows[i]->target - r[i];
        apply_at(r, g);
        p = g;
        double gg = 0.0;
        for (double v : g) gg += v * v;
        const int max_cg = std::min(400, m + 8);
        for (int it = 0; it < max_cg && gg > 1e-24; ++it) {
            apply_a(p, ap);
            double app = 0.0;
            for (double v : ap) app += v * v;
            if (app <= 0.0) break;
            const double alpha = gg / app;
            for (std::size_t f = 0; f < dim; ++f) w[f] += alpha * p[f];
            for (int i = 0; i < m; ++i) r[i] -= alpha * ap[i];
            apply_at(r, g);
            double gg_new = 0.0;
            for (double v : g) gg_new += v * v;
            for (std::size_t f = 0; f < dim; ++f) p[f] = g[f] + (gg_new / gg) * p[f];
            gg = gg_new;
        }
        for (std::size_t f = 0; f < dim; ++f) w[f] = std::max(0.0, w[f]);
    }

    // Nonnegative coordinate descent polish.
    std::vector<double> residual(m);
    apply_a(w, residual);
    for (int i = 0; i < m; ++i) residual[i] -= rows[i]->target;
    for (int sweep = 0; sweep < 500; ++sweep) {
        double moved = 0.0;
        for (std::size_t f = 0; f < dim; ++f) {
            if (coverage_zero[f] || diag[f] <= 0.0) continue;
            double g = 0.0;
            for (const auto& e : by_feature[f]) g += residual[e.constraint] * e.coeff;
            const double new_w = std::max(0.0, w[f] - g / diag[f]);
            const double delta = new_w - w[f];
            if (delta != 0.0) {
                for (const auto& e : by_feature[f]) residual[e.constraint] += delta * e.coeff;
                w[f] = new_w;
                moved = std::max(moved, std::abs(delta));
            }
        }
        if (moved < 1e-13) break;
    }
}

// Deterministic single-threaded projected subgradient on the relaxed problem.
// Returns the best iterate seen. `coverage_zero` marks features absent from
// every training pixel; those stay pinned at zero (their exact optimum).
std::vector<double> inner_solve(std::vector<double> w,
                                const std::vector<std::vector<BoxConstraint>>& per_instance,
                                const LearnParams& p, const std::vector<char>& coverage_zero,
                                double* opt_objective) {
    const std::size_t dim = w.size();
    for (std::size_t f = 0; f < dim; ++f) {
        if (coverage_zero[f]) w[f] = 0.0;
    }

    {
        std::vector<double> candidate = w;
        nnls_warm_start(candidate, per_instance, coverage_zero);
        const double obj_cand =
            eval_relaxed(candidate, per_instance, p.reg, p.lambda1, p.lambda_fit).objective;
        const double obj_cur = eval_relaxed(w, per_instance, p.reg, p.lambda1, p.lambda_fit).objective;
        if (obj_cand < obj_cur) w = std::move(candidate);
    }

    RelaxedEval ev = eval_relaxed(w, per_instance, p.reg, p.lambda1, p.lambda_fit);
    std::vector<double> best_w = w;
    double best_obj = ev.objective;
    double prev_obj = ev.objective;

    std::vector<double> grad(dim, 0.0);
    // Steps follow a/(1 + k*b) on the normalized subgradient direction. The
    // warm start above already lands near the optimum, so `a` is capped
    // Polyak-style by the removable fit excess: the walk polishes the kink
    // instead of leaving the basin, and the harmonic decay supplies the
    // fine steps the kink needs.
    double wscale = 0.0;
    int npos = 0;
    for (double v : w) {
        if (v > 0.0) {
            wscale += v;
            ++npos;
        }
    }
    wscale = npos > 0 ? wscale / npos : 1e-4;
    double fit_excess = 0.0;
    for (double s : ev.slack) fit_excess += s;
    double g0 = 0.0;
    for (std::size_t i = 0; i < per_instance.size(); ++i) {
        const int j = ev.active[i];
        if (j < 0) continue;
        double cn = 0.0;
        for (const auto& [idx, cnt] : per_instance[i][j].counts) {
            cn += static_cast<double>(cnt) * static_cast<double>(cnt);
        }
        g0 += p.lambda_fit * p.lambda_fit * cn;
    }
    g0 = std::sqrt(std::max(g0, 1e-30));
    const double polyak0 = p.lambda_fit * fit_excess / g0;
    const double step_a = std::clamp(2.0 * polyak0, 1e-12, 0.5 * std::max(wscale, 1e-9));
    const double step_b = p.step_decay > 0.0 ? p.step_decay : 30.0 / std::max(p.inner_max_iters, 1);

    int flat_streak = 0;
    for (int k = 0; k < p.inner_max_iters; ++k) {
        // Subgradient at the current iterate.
        std::fill(grad.begin(), grad.end(), 0.0);
        if (p.reg == Regularizer::L1) {
            for (std::size_t f = 0; f < dim; ++f) grad[f] = p.lambda1;
        } else {
            for (std::size_t f = 0; f < dim; ++f) grad[f] = w[f];
        }
        for (std::size_t i = 0; i < per_instance.size(); ++i) {
            const int j = ev.active[i];
            if (j < 0 || ev.slack[i] <= 0.0) continue;
            const double s = p.lambda_fit * ev.sign[i];
            for (const auto& [idx, cnt] : per_instance[i][j].counts) {
                grad[idx] += s * static_cast<double>(cnt);
            }
        }
        double gnorm = 0.0;
        for (double g : grad) gnorm += g * g;
        gnorm = std::sqrt(gnorm);
        if (gnorm <= 0.0) break;

        const double step = step_a / (1.0 + k * step_b) / gnorm;
        for (std::size_t f = 0; f < dim; ++f) {
            w[f] = std::max(0.0, w[f] - step * grad[f]);
            if (coverage_zero[f]) w[f] = 0.0;
        }

        ev = eval_relaxed(w, per_instance, p.reg, p.lambda1, p.lambda_fit);
        if (ev.objective < best_obj) {
            best_obj = ev.objective;
            best_w = w;
        }
        const double denom = std::max(std::abs(prev_obj), 1e-12);
        if (std::abs(ev.objective - prev_obj) / denom < p.inner_rel_tol) {
            if (++flat_streak >= p.inner_patience) break;
        } else {
            flat_streak = 0;
        }
        prev_obj = ev.objective;
    }
    if (opt_objective) *opt_objective = best_obj;
    return best_w;
}

} // namespace

std::pair<Model, LearnDiagnostics> learn_weights(const std::vector<TrainingInstance>& train,
                                                 const LearnParams& p) {
    if (train.empty()) throw validation_error("learn_weights: empty training set");
    if (!(p.lambda_fit > 0.0)) throw validation_error("learn_weights: lambda_fit must be positive");
    const std::vector<int>& layout = train[0].features.vocab_sizes();
    for (const auto& inst : train) {
        if (inst.features.vocab_sizes() != layout) {
            throw validation_error("learn_weights: inconsistent vocabulary layouts");
        }
        if (inst.features.width() != inst.gt_density.width() ||
            inst.features.height() != inst.gt_density.height()) {
            throw validation_error("learn_weights: feature/ground-truth dimension mismatch");
        }
    }
    const int n = static_cast<int>(train.size());
    const int dim = train[0].features.total_vocab();

    // Feature coverage across all training pixels; uncovered features are
    // never referenced by any box, so 0 is their exact optimum under both
    // regularizers.
    std::vector<long long> coverage(dim, 0);
    for (const auto& inst : train) {
        for (int y = 0; y < inst.features.height(); ++y) {
            for (int x = 0; x < inst.features.width(); ++x) {
                for (int c = 0; c < inst.features.channels(); ++c) {
                    ++coverage[inst.features.global_at(x, y, c)];
                }
            }
        }
    }
    std::vector<char> coverage_zero(dim, 0);
    for (int f = 0; f < dim; ++f) coverage_zero[f] = coverage[f] == 0 ? 1 : 0;

    // Initial constraint set: the whole-image box per instance, anchoring the
    // total counts immediately.
    std::vector<std::vector<BoxConstraint>> per_instance(n);
    double total_target = 0.0;
    double total_pixels = 0.0;
    for (int i = 0; i < n; ++i) {
        const BoxRegion whole = train[i].gt_density.full_box();
        BoxConstraint bc;
        bc.instance = i;
        bc.frame = train[i].frame;
        bc.box = whole;
        bc.counts = sparsify(box_feature_counts(train[i].features, whole));
        bc.target = count_total(train[i].gt_density);
        total_target += bc.target;
        total_pixels += static_cast<double>(whole.area()) * train[i].features.channels();
        per_instance[i].push_back(std::move(bc));
    }

    // Uniform warm start matching the aggregate count.
    std::vector<double> w(dim, total_pixels > 0.0 ? std::max(0.0, total_target / total_pixels) : 0.0);
    for (int f = 0; f < dim; ++f) {
        if (coverage_zero[f]) w[f] = 0.0;
    }

    LearnDiagnostics diag;
    WeightVector best;
    best.vocab_sizes = layout;
    best.weights = w;
    double best_obj = std::numeric_limits<double>::infinity();

    const auto true_objective = [&](const std::vector<double>& weights,
                                    std::vector<MaxSubarrayResult>& over,
                                    std::vector<MaxSubarrayResult>& under,
                                    std::vector<double>& mesa) {
        over.resize(n);
        under.resize(n);
        mesa.resize(n);
        // Constraint search is parallel across instances; each slot is written
        // by exactly one thread.
#pragma omp parallel for schedule(dynamic)
        for (int i = 0; i < n; ++i) {
            WeightVector wv;
            wv.weights = weights;
            wv.vocab_sizes = layout;
            const Grid2D est = estimate_density(train[i].features, wv);
            over[i] = max_subarray(grid_difference(est, train[i].gt_density));
            under[i] = max_subarray(grid_difference(train[i].gt_density, est));
            mesa[i] = std::max({over[i].value, under[i].value, 0.0});
        }
        double fit = 0.0;
        for (int i = 0; i < n; ++i) fit += mesa[i];
        return regularizer_value(weights, p.reg, p.lambda1) + p.lambda_fit * fit;
    };

    std::vector<MaxSubarrayResult> over, under;
    std::vector<double> mesa;

    for (int outer = 0; outer < p.max_outer; ++outer) {
        double inner_obj = 0.0;
        w = inner_solve(std::move(w), per_instance, p, coverage_zero, &inner_obj);

        const double raw_obj = true_objective(w, over, under, mesa);
        RelaxedEval ev = eval_relaxed(w, per_instance, p.reg, p.lambda1, p.lambda_fit);

        double max_violation = 0.0;
        for (int i = 0; i < n; ++i) max_violation = std::max(max_violation, mesa[i] - ev.slack[i]);

        if (raw_obj < best_obj) {
            best_obj = raw_obj;
            best.weights = w;
        }
        diag.raw_objective.push_back(raw_obj);
        diag.outer_objective.push_back(best_obj);
        diag.inner_objective.push_back(inner_obj);
        diag.max_violation.push_back(max_violation);
        int ccount = 0;
        for (const auto& cons : per_instance) ccount += static_cast<int>(cons.size());
        diag.constraint_count.push_back(ccount);
        diag.outer_iterations = outer + 1;
        diag.final_max_violation = max_violation;

        if (max_violation <= p.eps_cut) {
            diag.converged = true;
            break;
        }

        // Add the positive and negative excess boxes whose violation exceeds
        // the current slack by more than eps_cut; at most two per instance.
        for (int i = 0; i < n; ++i) {
            const auto add_cut = [&](const MaxSubarrayResult& found) {
                if (found.value <= ev.slack[i] + p.eps_cut) return;
                for (const auto& existing : per_instance[i]) {
                    if (existing.box == found.box) return;
                }
                BoxConstraint bc;
                bc.instance = i;
                bc.frame = train[i].frame;
                bc.box = found.box;
                bc.counts = sparsify(box_feature_counts(train[i].features, found.box));
                bc.target = count_region(train[i].gt_density, found.box);
                per_instance[i].push_back(std::move(bc));
            };
            add_cut(over[i]);
            add_cut(under[i]);
        }
    }

    Model model;
    model.w = std::move(best);
    model.reg = p.reg;
    model.lambda_fit = p.lambda_fit;
    model.lambda1 = p.lambda1;
    model.w.validate();
    return {std::move(model), std::move(diag)};
}

void require_layout_match(const Model& model, const FeatureIndexMap& feat) {
    if (model.w.vocab_sizes != feat.vocab_sizes()) {
        throw validation_error(
            "model/feature layout mismatch: the model was trained on a different vocabulary");
    }
}

void save_model(const Model& model, const std::string& path) {
    model.w.validate();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("save_model: cannot open '" + path + "'");
    char header[128];
    std::snprintf(header, sizeof(header), "CMODEL 1 %d %s %.17g %.17g\n",
                  static_cast<int>(model.w.weights.size()),
                  model.reg == Regularizer::L1 ? "L1" : "TIK", model.lambda_fit, model.lambda1);
    out << header;
    out << model.w.vocab_sizes.size();
    for (int k : model.w.vocab_sizes) out << " " << k;
    out << "\n";
    std::string buf;
    buf.reserve(model.w.weights.size() * 8);
    for (double v : model.w.weights) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        for (int b = 0; b < 8; ++b) buf.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
    }
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw io_error("save_model: write failed for '" + path + "'");
}

Model load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("load_model: cannot open '" + path + "'");
    std::string header;
    std::getline(in, header);
    int version = 0, nfeatures = 0;
    char regbuf[16] = {0};
    double lambda_fit = 0.0, lambda1 = 0.0;
    if (std::sscanf(header.c_str(), "CMODEL %d %d %15s %lg %lg", &version, &nfeatures, regbuf,
                    &lambda_fit, &lambda1) != 5 ||
        version != 1 || nfeatures < 1) {
        throw io_error("load_model: malformed CMODEL header in '" + path + "'");
    }
    Model model;
    if (std::strcmp(regbuf, "L1") == 0) {
        model.reg = Regularizer::L1;
    } else if (std::strcmp(regbuf, "TIK") == 0) {
        model.reg = Regularizer::Tikhonov;
    } else {
        throw io_error("load_model: unknown regularizer kind in '" + path + "'");
    }
    model.lambda_fit = lambda_fit;
    model.lambda1 = lambda1;

    std::string layout_line;
    if (!std::getline(in, layout_line)) throw io_error("load_model: missing layout line in '" + path + "'");
    std::size_t pos = 0;
    const auto next_int = [&](int& value) {
        while (pos < layout_line.size() && layout_line[pos] == ' ') ++pos;
        std::size_t used = 0;
        try {
            value = std::stoi(layout_line.substr(pos), &used);
        } catch (const std::exception&) {
            throw io_error("load_model: malformed layout line in '" + path + "'");
        }
        pos += used;
    };
    int channels = 0;
    next_int(channels);
    if (channels < 1) throw io_error("load_model: bad channel count in '" + path + "'");
    model.w.vocab_sizes.resize(channels);
    int total = 0;
    for (int c = 0; c < channels; ++c) {
        next_int(model.w.vocab_sizes[c]);
        total += model.w.vocab_sizes[c];
    }
    if (total != nfeatures) {
        throw io_error("load_model: layout total does not match nfeatures in '" + path + "'");
    }
    std::vector<unsigned char> raw(static_cast<std::size_t>(nfeatures) * 8);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(in.gcount()) != raw.size()) {
        throw io_error("load_model: truncated weight payload in '" + path + "'");
    }
    model.w.weights.resize(nfeatures);
    for (int i = 0; i < nfeatures; ++i) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) {
            bits |= static_cast<std::uint64_t>(raw[static_cast<std::size_t>(i) * 8 + b]) << (8 * b);
        }
        std::memcpy(&model.w.weights[i], &bits, 8);
    }
    model.w.validate();
    return model;
}

} // namespace crowdflow
