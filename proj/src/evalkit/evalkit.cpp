#include "cmdse/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

namespace cmdse::eval {

double final_score(double s, double c, double gamma) { return s * std::pow(c, gamma); }

bool is_true_positive(const Detection& det, const match::GroundTruthHoi& gt, bool gt_used, double threshold) {
    if (gt_used || det.interaction != gt.interaction) return false;
    return iou(det.b_h, gt.b_h) > threshold && iou(det.b_o, gt.b_o) > threshold;
}

double average_precision(const std::vector<bool>& hits, std::size_t num_gt) {
    if (num_gt == 0 || hits.empty()) return 0.0;
    std::vector<double> precision(hits.size()), recall(hits.size());
    std::size_t tp = 0;
    for (std::size_t i = 0; i < hits.size(); ++i) {
        tp += hits[i] ? 1 : 0;
        precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
        recall[i] = static_cast<double>(tp) / static_cast<double>(num_gt);
    }
    // Precision envelope, then sum rectangles wherever recall steps up.
    for (std::size_t i = hits.size() - 1; i > 0; --i) precision[i - 1] = std::max(precision[i - 1], precision[i]);
    double ap = 0.0, prev_recall = 0.0;
    for (std::size_t i = 0; i < hits.size(); ++i) {
        if (recall[i] > prev_recall) {
            ap += (recall[i] - prev_recall) * precision[i];
            prev_recall = recall[i];
        }
    }
    return ap;
}

bool ranks_before(const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.image_id != b.image_id) return a.image_id < b.image_id;
    if (a.slot != b.slot) return a.slot < b.slot;
    return a.interaction < b.interaction;
}

std::optional<double> class_average_precision(const std::vector<Detection>& dets,
                                              const std::vector<ImageAnnotations>& images, int interaction,
                                              GtFilter filter, double threshold) {
    std::map<std::uint64_t, std::vector<const match::GroundTruthHoi*>> gts;
    std::size_t counted = 0;
    for (const auto& image : images) {
        auto& list = gts[image.image_id];
        for (const auto& gt : image.hois) {
            if (gt.interaction != interaction) continue;
            list.push_back(&gt);
            if (!filter || filter(gt)) ++counted;
        }
    }
    if (counted == 0) return std::nullopt;

    std::vector<const Detection*> ranked;
    for (const auto& d : dets) {
        if (d.interaction == interaction) ranked.push_back(&d);
    }
    std::stable_sort(ranked.begin(), ranked.end(), [](const Detection* a, const Detection* b) { return ranks_before(*a, *b); });

    std::map<std::uint64_t, std::vector<bool>> used;
    std::vector<bool> hits;
    for (const Detection* d : ranked) {
        const auto it = gts.find(d->image_id);
        if (it == gts.end()) {
            hits.push_back(false);
            continue;
        }
        auto& flags = used[d->image_id];
        flags.resize(it->second.size(), false);
        std::optional<std::size_t> best;
        double best_overlap = -1.0;
        for (std::size_t g = 0; g < it->second.size(); ++g) {
            const auto& gt = *it->second[g];
            if (!is_true_positive(*d, gt, flags[g], threshold)) continue;
            const double overlap = std::min(iou(d->b_h, gt.b_h), iou(d->b_o, gt.b_o));
            if (overlap > best_overlap) {
                best_overlap = overlap;
                best = g;
            }
        }
        if (!best) {
            hits.push_back(false);
            continue;
        }
        flags[*best] = true;
        if (!filter || filter(*it->second[*best])) hits.push_back(true);
    }
    return average_precision(hits, counted);
}

std::optional<double> mean_present(const std::vector<std::optional<double>>& values) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& v : values) {
        if (v) {
            sum += *v;
            ++n;
        }
    }
    if (n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
}

namespace {

bool is_small(const match::GroundTruthHoi& gt) { return match::ho_distance(gt) <= kSmallDistance; }
bool is_large(const match::GroundTruthHoi& gt) { return match::ho_distance(gt) >= kLargeDistance; }

std::optional<double> mean_over(const std::vector<std::optional<double>>& per_class, const std::vector<bool>& member) {
    std::vector<std::optional<double>> picked;
    for (std::size_t k = 0; k < per_class.size(); ++k) {
        if (member[k]) picked.push_back(per_class[k]);
    }
    return mean_present(picked);
}

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

}  // namespace

EvalReport evaluate(const std::vector<Detection>& dets, const std::vector<ImageAnnotations>& images,
                    const sem::Vocabulary& vocab, const EvalOptions& options) {
    const std::size_t n = vocab.num_interactions();
    std::map<std::uint64_t, bool> known_images;
    EvalReport report;
    for (const auto& image : images) {
        if (!known_images.emplace(image.image_id, true).second) {
            throw ValidationError("duplicate image id " + std::to_string(image.image_id));
        }
        for (const auto& gt : image.hois) {
            if (gt.interaction < 0 || static_cast<std::size_t>(gt.interaction) >= n) {
                throw NotFoundError("ground truth references unknown interaction id " + std::to_string(gt.interaction));
            }
        }
        report.num_ground_truth += image.hois.size();
    }
    for (const auto& d : dets) {
        if (d.interaction < 0 || static_cast<std::size_t>(d.interaction) >= n) {
            throw NotFoundError("detection references unknown interaction id " + std::to_string(d.interaction));
        }
        if (!known_images.count(d.image_id)) {
            throw NotFoundError("detection references unknown image id " + std::to_string(d.image_id));
        }
    }
    if (!options.train_counts.empty() && options.train_counts.size() != n) {
        throw ValidationError("training counts cover " + std::to_string(options.train_counts.size()) + " of " +
                              std::to_string(n) + " interactions");
    }
    report.num_detections = dets.size();

    // Per-class work is independent; results land in fixed slots.
    report.per_class.resize(n);
    report.per_class_small.resize(n);
    report.per_class_large.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
        const int id = static_cast<int>(k);
        report.per_class[k] = class_average_precision(dets, images, id, nullptr, options.iou_threshold);
        report.per_class_small[k] = class_average_precision(dets, images, id, is_small, options.iou_threshold);
        report.per_class_large[k] = class_average_precision(dets, images, id, is_large, options.iou_threshold);
    }

    std::vector<bool> all(n, true), seen(n), unseen(n), rare(n, false), non_rare(n, true);
    for (std::size_t k = 0; k < n; ++k) {
        seen[k] = vocab.interaction(static_cast<int>(k)).seen;
        unseen[k] = !seen[k];
        if (!options.train_counts.empty()) {
            rare[k] = options.train_counts[k] < options.rare_threshold;
            non_rare[k] = !rare[k];
        }
    }
    report.map.full = mean_over(report.per_class, all);
    report.map.seen = mean_over(report.per_class, seen);
    report.map.unseen = mean_over(report.per_class, unseen);
    report.map.rare = mean_over(report.per_class, rare);
    report.map.non_rare = mean_over(report.per_class, non_rare);
    report.map.small = mean_present(report.per_class_small);
    report.map.large = mean_present(report.per_class_large);
    return report;
}

nlohmann::json EvalReport::to_json(const sem::Vocabulary& vocab) const {
    nlohmann::json j;
    j["mAP"] = {{"full", optional_json(map.full)},         {"seen", optional_json(map.seen)},
                {"unseen", optional_json(map.unseen)},     {"rare", optional_json(map.rare)},
                {"non_rare", optional_json(map.non_rare)}, {"small", optional_json(map.small)},
                {"large", optional_json(map.large)}};
    j["per_class"] = nlohmann::json::array();
    for (std::size_t k = 0; k < per_class.size(); ++k) {
        const auto& inter = vocab.interaction(static_cast<int>(k));
        j["per_class"].push_back({{"id", k},
                                  {"action", vocab.action_name(inter.action)},
                                  {"object", vocab.object_name(inter.object)},
                                  {"seen", inter.seen},
                                  {"ap", optional_json(per_class[k])},
                                  {"ap_small", optional_json(per_class_small[k])},
                                  {"ap_large", optional_json(per_class_large[k])}});
    }
    j["num_detections"] = num_detections;
    j["num_ground_truth"] = num_ground_truth;
    return j;
}

std::string EvalReport::to_table() const {
    const std::vector<std::pair<std::string, std::optional<double>>> cols = {
        {"Full", map.full},         {"Seen", map.seen},   {"Unseen", map.unseen}, {"Rare", map.rare},
        {"Non-rare", map.non_rare}, {"Small", map.small}, {"Large", map.large}};
    std::ostringstream head, row;
    for (const auto& [name, value] : cols) {
        head << std::setw(10) << name;
        if (value) {
            row << std::setw(10) << std::fixed << std::setprecision(2) << 100.0 * *value;
        } else {
            row << std::setw(10) << "-";
        }
    }
    return head.str() + "\n" + row.str() + "\n";
}

nlohmann::json box_to_json(const Box& b) { return nlohmann::json::array({b.cx, b.cy, b.w, b.h}); }

Box box_from_json(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != 4) throw ParseError("box must be an array [cx, cy, w, h]");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

nlohmann::json detection_to_json(const Detection& d) {
    return {{"image_id", d.image_id}, {"slot", d.slot},        {"b_h", box_to_json(d.b_h)},
            {"b_o", box_to_json(d.b_o)}, {"interaction", d.interaction}, {"score", d.score}};
}

Detection detection_from_json(const nlohmann::json& j) {
    try {
        Detection d;
        d.image_id = j.at("image_id").get<std::uint64_t>();
        d.slot = j.value("slot", std::uint64_t{0});
        d.b_h = box_from_json(j.at("b_h"));
        d.b_o = box_from_json(j.at("b_o"));
        d.interaction = j.at("interaction").get<int>();
        d.score = j.at("score").get<double>();
        return d;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("detection: ") + e.what());
    }
}

void write_detections(const std::filesystem::path& path, const std::vector<Detection>& dets) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw NotFoundError("cannot write " + path.string());
    for (const auto& d : dets) out << detection_to_json(d).dump() << '\n';
    if (!out) throw Error("failed writing " + path.string());
}

std::vector<Detection> read_detections(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw NotFoundError("cannot open " + path.string());
    std::vector<Detection> dets;
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            dets.push_back(detection_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path.string() + ":" + std::to_string(number) + ": " + e.what());
        } catch (const ParseError& e) {
            throw ParseError(path.string() + ":" + std::to_string(number) + ": " + e.what());
        }
    }
    return dets;
}

}  // namespace cmdse::eval
