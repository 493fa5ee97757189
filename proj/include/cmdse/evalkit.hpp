#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "cmdse/geometry.hpp"
#include "cmdse/matching.hpp"
#include "cmdse/semantics.hpp"

namespace cmdse::eval {

inline constexpr double kDefaultGamma = 2.0;
inline constexpr double kIouThreshold = 0.5;
inline constexpr double kSmallDistance = 0.33;
inline constexpr double kLargeDistance = 0.67;

struct Detection {
    std::uint64_t image_id = 0;
    // Candidate slot within the image; with image_id it identifies the detection.
    std::uint64_t slot = 0;
    Box b_h;
    Box b_o;
    int interaction = 0;
    double score = 0.0;

    bool operator==(const Detection&) const = default;
};

// Ground truth for one evaluated image.
struct ImageAnnotations {
    std::uint64_t image_id = 0;
    std::vector<match::GroundTruthHoi> hois;
};

// s * c^gamma.
double final_score(double s, double c, double gamma = kDefaultGamma);

// Both boxes overlap strictly more than the threshold and the class agrees.
bool is_true_positive(const Detection& det, const match::GroundTruthHoi& gt, bool gt_used,
                      double threshold = kIouThreshold);

// All-points interpolated area under the precision-recall curve. `hits` is the
// TP/FP flag of each detection in descending score order.
double average_precision(const std::vector<bool>& hits, std::size_t num_gt);

// Canonical ranking: score descending, then (image_id, slot, interaction).
bool ranks_before(const Detection& a, const Detection& b);

// Ground truths failing the filter are ignored: a detection whose best match is
// an ignored ground truth is dropped from the curve instead of counted as false.
using GtFilter = bool (*)(const match::GroundTruthHoi&);

// AP of one class, or nullopt when the class has no counted ground truth.
std::optional<double> class_average_precision(const std::vector<Detection>& dets,
                                              const std::vector<ImageAnnotations>& images, int interaction,
                                              GtFilter filter = nullptr, double threshold = kIouThreshold);

struct EvalOptions {
    double iou_threshold = kIouThreshold;
    // Classes with fewer training instances than this are rare.
    std::size_t rare_threshold = 10;
    // Training instances per interaction id; empty means no class is rare.
    std::vector<std::size_t> train_counts;
};

struct SplitScores {
    std::optional<double> full, seen, unseen, rare, non_rare, small, large;
};

struct EvalReport {
    std::vector<std::optional<double>> per_class;  // indexed by interaction id
    std::vector<std::optional<double>> per_class_small;
    std::vector<std::optional<double>> per_class_large;
    SplitScores map;
    std::size_t num_detections = 0;
    std::size_t num_ground_truth = 0;

    nlohmann::json to_json(const sem::Vocabulary& vocab) const;
    // Header row of split names over one row of percent values; "-" marks an empty split.
    std::string to_table() const;
};

EvalReport evaluate(const std::vector<Detection>& dets, const std::vector<ImageAnnotations>& images,
                    const sem::Vocabulary& vocab, const EvalOptions& options = {});

// Mean over present values, nullopt when none are present.
std::optional<double> mean_present(const std::vector<std::optional<double>>& values);

nlohmann::json box_to_json(const Box& b);
Box box_from_json(const nlohmann::json& j);

nlohmann::json detection_to_json(const Detection& d);
Detection detection_from_json(const nlohmann::json& j);
void write_detections(const std::filesystem::path& path, const std::vector<Detection>& dets);
// Malformed lines raise ParseError naming the 1-based line number.
std::vector<Detection> read_detections(const std::filesystem::path& path);

}  // namespace cmdse::eval
