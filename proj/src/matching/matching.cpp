#include "cmdse/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cmdse::match {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_solvable(const CostTable& cost, const char* solver) {
    if (cost.values.size() != cost.rows * cost.cols) throw ShapeError(std::string(solver) + ": value count mismatch");
    if (cost.rows < cost.cols) {
        throw ValidationError(std::string(solver) + ": " + std::to_string(cost.rows) + " rows cannot cover " +
                              std::to_string(cost.cols) + " columns");
    }
    for (std::size_t i = 0; i < cost.values.size(); ++i) {
        if (!std::isfinite(cost.values[i])) {
            throw ValidationError(std::string(solver) + ": non-finite cost at row " + std::to_string(i / cost.cols) +
                                  ", column " + std::to_string(i % cost.cols));
        }
    }
}

Assignment make_assignment(const CostTable& cost, const std::vector<std::size_t>& rows_by_col) {
    Assignment a;
    for (std::size_t c = 0; c < rows_by_col.size(); ++c) {
        a.pairs.emplace_back(rows_by_col[c], c);
        a.total += cost(rows_by_col[c], c);
    }
    return a;
}

// Minimum cost of matching `cols` to distinct rows outside `banned`, via
// shortest augmenting paths with potentials. Columns play the role of the
// smaller side. Returns +inf when infeasible.
double hungarian_value(const CostTable& cost, const std::vector<std::size_t>& cols, const std::vector<bool>& banned,
                       std::vector<std::size_t>* rows_out) {
    std::vector<std::size_t> avail;
    for (std::size_t r = 0; r < cost.rows; ++r)
        if (!banned[r]) avail.push_back(r);
    const std::size_t n = cols.size(), m = avail.size();
    if (n == 0) {
        if (rows_out) rows_out->clear();
        return 0.0;
    }
    if (m < n) return kInf;
    auto a = [&](std::size_t i, std::size_t j) { return cost(avail[j - 1], cols[i - 1]); };
    std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0), minv(m + 1);
    std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
    std::vector<bool> used(m + 1);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::fill(minv.begin(), minv.end(), kInf);
        std::fill(used.begin(), used.end(), false);
        do {
            used[j0] = true;
            const std::size_t i0 = p[j0];
            double delta = kInf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= m; ++j) {
                if (used[j]) continue;
                const double cur = a(i0, j) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= m; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<std::size_t> rows(n);
    for (std::size_t j = 1; j <= m; ++j)
        if (p[j] != 0) rows[p[j] - 1] = avail[j - 1];
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += cost(rows[i], cols[i]);
    if (rows_out) *rows_out = std::move(rows);
    return total;
}

}  // namespace

CostTable::CostTable(std::size_t r, std::size_t c, std::vector<double> v) : rows(r), cols(c), values(std::move(v)) {
    if (values.size() != rows * cols) {
        throw ShapeError("cost table " + std::to_string(rows) + "x" + std::to_string(cols) + " given " +
                         std::to_string(values.size()) + " values");
    }
}

double ho_distance(const GroundTruthHoi& gt) { return center_distance(gt.b_h, gt.b_o); }

double relative_ho_distance(const GroundTruthHoi& gt) {
    const auto h = gt.b_h.corners(), o = gt.b_o.corners();
    const double w = std::max(h[2], o[2]) - std::min(h[0], o[0]);
    const double ht = std::max(h[3], o[3]) - std::min(h[1], o[1]);
    const double diag = std::hypot(w, ht);
    return diag > 0.0 ? ho_distance(gt) / diag : 0.0;
}

double target_distance(const GroundTruthHoi& gt, DistanceType type) {
    return type == DistanceType::absolute ? ho_distance(gt) : relative_ho_distance(gt);
}

double level_target(double lv, LevelOrder order) { return order == LevelOrder::low_small ? lv : 1.0 - lv; }

double distance_constraint(double lv, double g) { return std::fabs(lv - g); }

double distance_constraint(const dec::HoiPrediction& pred, const GroundTruthHoi& gt,
                           const ConditionalOptions& options) {
    return distance_constraint(level_target(pred.level_value, options.order), target_distance(gt, options.distance));
}

double class_probability(const std::vector<double>& logits, int target) {
    if (target < 0 || static_cast<std::size_t>(target) >= logits.size()) {
        throw ValidationError("class " + std::to_string(target) + " outside " + std::to_string(logits.size()) +
                              " logits");
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double l : logits) z += std::exp(l - mx);
    return std::exp(logits[static_cast<std::size_t>(target)] - mx) / z;
}

CostMatrix build_cost_matrix(const dec::PredictionSet& preds, const std::vector<GroundTruthHoi>& gts,
                             const CostWeights& weights, const ConditionalOptions& options) {
    if (gts.empty()) throw ValidationError("cost matrix needs at least one ground truth");
    const std::size_t rows = preds.predictions.size(), cols = gts.size();
    CostMatrix m;
    m.weights = weights;
    m.box = m.iou = m.cls = m.d = m.total = CostTable(rows, cols);
    std::vector<double> g(cols);
    for (std::size_t c = 0; c < cols; ++c) g[c] = target_distance(gts[c], options.distance);
    for (std::size_t r = 0; r < rows; ++r) {
        const auto& p = preds.predictions[r];
        const double lv = level_target(p.level_value, options.order);
        for (std::size_t c = 0; c < cols; ++c) {
            const auto& gt = gts[c];
            m.box(r, c) = l1_box_loss(p.b_h, gt.b_h) + l1_box_loss(p.b_o, gt.b_o);
            m.iou(r, c) = giou_loss(p.b_h, gt.b_h) + giou_loss(p.b_o, gt.b_o);
            m.cls(r, c) = 1.0 - class_probability(p.logits, gt.interaction);
            m.d(r, c) = distance_constraint(lv, g[c]);
            m.total(r, c) = weights.box * m.box(r, c) + weights.iou * m.iou(r, c) + weights.cls * m.cls(r, c) +
                            weights.d * m.d(r, c);
        }
    }
    return m;
}

std::vector<std::size_t> Assignment::rows_by_column() const {
    std::vector<std::size_t> out(pairs.size());
    for (const auto& [r, c] : pairs) out.at(c) = r;
    return out;
}

double tie_tolerance(double optimum) { return 1e-9 * (1.0 + std::fabs(optimum)); }

Assignment hungarian(const CostTable& cost) {
    check_solvable(cost, "hungarian");
    const std::size_t k = cost.cols;
    std::vector<std::size_t> all(k);
    for (std::size_t c = 0; c < k; ++c) all[c] = c;
    std::vector<bool> banned(cost.rows, false);
    std::vector<std::size_t> best_rows;
    const double optimum = hungarian_value(cost, all, banned, &best_rows);
    const double limit = optimum + tie_tolerance(optimum);

    // Fix columns in order, each to the lowest row that still admits a
    // near-optimal completion.
    std::vector<std::size_t> chosen;
    double fixed = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
        const std::vector<std::size_t> rest(all.begin() + static_cast<std::ptrdiff_t>(c) + 1, all.end());
        bool found = false;
        for (std::size_t r = 0; r < cost.rows && !found; ++r) {
            if (banned[r]) continue;
            // The unconstrained optimum's row is always feasible; skip the solve.
            const bool on_path = r == best_rows[c] &&
                                 std::equal(chosen.begin(), chosen.end(), best_rows.begin());
            double value = 0.0;
            if (!on_path) {
                banned[r] = true;
                value = fixed + cost(r, c) + hungarian_value(cost, rest, banned, nullptr);
                banned[r] = false;
            }
            if (on_path || value <= limit) {
                chosen.push_back(r);
                banned[r] = true;
                fixed += cost(r, c);
                found = true;
            }
        }
        if (!found) throw NumericError("hungarian: tie-break refinement lost feasibility");
    }
    return make_assignment(cost, chosen);
}

Assignment brute_force_match(const CostTable& cost) {
    check_solvable(cost, "brute_force_match");
    const std::size_t k = cost.cols, n = cost.rows;
    if (k > kBruteForceMaxCols) {
        throw ValidationError("brute_force_match: " + std::to_string(k) + " columns exceed the limit of " +
                              std::to_string(kBruteForceMaxCols));
    }
    const std::size_t full = std::size_t{1} << k;

    // best[i][mask]: minimum cost of covering `mask` with rows in `rows`,
    // rows drawn from the first i entries (prefix) or the last entries (suffix).
    auto table = [&](const std::vector<std::size_t>& rows, std::size_t cols_mask) {
        std::vector<std::vector<double>> best(rows.size() + 1, std::vector<double>(full, kInf));
        best[0][0] = 0.0;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            best[i + 1] = best[i];
            for (std::size_t mask = 0; mask < full; ++mask) {
                if (best[i][mask] == kInf || (mask & ~cols_mask) != 0) continue;
                for (std::size_t c = 0; c < k; ++c) {
                    const std::size_t bit = std::size_t{1} << c;
                    if ((cols_mask & bit) == 0 || (mask & bit) != 0) continue;
                    const double v = best[i][mask] + cost(rows[i], c);
                    if (v < best[i + 1][mask | bit]) best[i + 1][mask | bit] = v;
                }
            }
        }
        return best;
    };

    std::vector<std::size_t> all_rows(n);
    for (std::size_t r = 0; r < n; ++r) all_rows[r] = r;
    const double optimum = table(all_rows, full - 1)[n][full - 1];
    const double limit = optimum + tie_tolerance(optimum);

    std::vector<bool> banned(n, false);
    std::vector<std::size_t> chosen;
    double fixed = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
        std::size_t rest_mask = 0;
        for (std::size_t j = c + 1; j < k; ++j) rest_mask |= std::size_t{1} << j;
        std::vector<std::size_t> free_rows;
        for (std::size_t r = 0; r < n; ++r)
            if (!banned[r]) free_rows.push_back(r);
        std::vector<std::size_t> reversed(free_rows.rbegin(), free_rows.rend());
        const auto prefix = table(free_rows, rest_mask);
        const auto suffix = table(reversed, rest_mask);
        bool found = false;
        for (std::size_t idx = 0; idx < free_rows.size() && !found; ++idx) {
            // Complete the remaining columns from rows before and after idx.
            const auto& pre = prefix[idx];
            const auto& suf = suffix[free_rows.size() - idx - 1];
            double completion = kInf;
            for (std::size_t sub = rest_mask;; sub = (sub - 1) & rest_mask) {
                const double v = pre[sub] + suf[rest_mask & ~sub];
                if (v < completion) completion = v;
                if (sub == 0) break;
            }
            const std::size_t r = free_rows[idx];
            if (fixed + cost(r, c) + completion <= limit) {
                chosen.push_back(r);
                banned[r] = true;
                fixed += cost(r, c);
                found = true;
            }
        }
        if (!found) throw NumericError("brute_force_match: tie-break refinement lost feasibility");
    }
    return make_assignment(cost, chosen);
}

}  // namespace cmdse::match
