#pragma once

#include <utility>
#include <vector>

#include "cmdse/decoder.hpp"
#include "cmdse/geometry.hpp"

namespace cmdse::match {

struct GroundTruthHoi {
    Box b_h;
    Box b_o;
    int action = 0;
    int object = 0;
    int interaction = 0;

    bool operator==(const GroundTruthHoi&) const = default;
};

// Distance-type ablation axes. Absolute distance with low levels serving short
// distances is the default.
enum class DistanceType { absolute, relative };
enum class LevelOrder { low_small, low_large };

struct ConditionalOptions {
    DistanceType distance = DistanceType::absolute;
    LevelOrder order = LevelOrder::low_small;
};

// Center distance between the human and object boxes.
double ho_distance(const GroundTruthHoi& gt);
// Center distance divided by the diagonal of the box enclosing both boxes.
double relative_ho_distance(const GroundTruthHoi& gt);
double target_distance(const GroundTruthHoi& gt, DistanceType type);
double level_target(double lv, LevelOrder order);

// |Lv - g|.
double distance_constraint(double lv, double g);
double distance_constraint(const dec::HoiPrediction& pred, const GroundTruthHoi& gt,
                           const ConditionalOptions& options = {});

struct CostWeights {
    double box = 5.0;
    double iou = 2.0;
    double cls = 5.0;
    double d = 5.0;
};

// Dense row-major matrix of finite costs; rows are predictions, columns ground truths.
struct CostTable {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;

    CostTable() = default;
    CostTable(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}
    CostTable(std::size_t r, std::size_t c, std::vector<double> v);
    double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

// The cls component is 1 - softmax probability of the target class, so a
// perfect prediction costs 0 in every component.
struct CostMatrix {
    CostTable box, iou, cls, d, total;
    CostWeights weights;

    std::size_t rows() const { return total.rows; }
    std::size_t cols() const { return total.cols; }
};

// Softmax probability of `target` over `logits`, computed stably.
double class_probability(const std::vector<double>& logits, int target);

CostMatrix build_cost_matrix(const dec::PredictionSet& preds, const std::vector<GroundTruthHoi>& gts,
                             const CostWeights& weights, const ConditionalOptions& options = {});

struct Assignment {
    // (prediction row, ground-truth column), ordered by column.
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    double total = 0.0;

    // Row matched to each column.
    std::vector<std::size_t> rows_by_column() const;
    bool operator==(const Assignment&) const = default;
};

// Among assignments whose cost is within this tolerance of the optimum, both
// solvers return the lexicographically smallest (row for column 0, row for
// column 1, ...). The total is summed in column order.
double tie_tolerance(double optimum);

// Exact minimum-cost injective assignment; requires rows >= cols.
Assignment hungarian(const CostTable& cost);
inline Assignment hungarian(const CostMatrix& cost) { return hungarian(cost.total); }

// Exhaustive dynamic program over rows x column subsets; requires cols <= 8.
inline constexpr std::size_t kBruteForceMaxCols = 8;
Assignment brute_force_match(const CostTable& cost);
inline Assignment brute_force_match(const CostMatrix& cost) { return brute_force_match(cost.total); }

}  // namespace cmdse::match
