#include "cmdse/losses.hpp"

#include <cmath>
#include <limits>

namespace cmdse::loss {

using num::Tensor;

namespace {

double log_sigmoid(double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }
double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

Tensor column(const Tensor& x, std::size_t c) { return num::slice(x, 1, c, 1); }

// Guards 0/0 for degenerate boxes without perturbing nonzero denominators.
Tensor safe_div(const Tensor& a, const Tensor& b) {
    return num::div(a, num::maximum(b, Tensor::scalar(std::numeric_limits<double>::min())));
}

Tensor box_rows(const std::vector<Box>& boxes) {
    std::vector<double> v;
    v.reserve(boxes.size() * 4);
    for (const auto& b : boxes) v.insert(v.end(), {b.cx, b.cy, b.w, b.h});
    return Tensor::from({boxes.size(), 4}, std::move(v));
}

}  // namespace

double focal_term(double logit, bool positive, const FocalParams& params) {
    if (positive) return params.alpha * std::pow(sigmoid(-logit), params.gamma) * -log_sigmoid(logit);
    return (1.0 - params.alpha) * std::pow(sigmoid(logit), params.gamma) * -log_sigmoid(-logit);
}

double focal_loss(const std::vector<double>& logits, int target, const FocalParams& params) {
    if (target < 0 || static_cast<std::size_t>(target) >= logits.size()) {
        throw ValidationError("focal target " + std::to_string(target) + " outside " + std::to_string(logits.size()) +
                              " classes");
    }
    double total = 0.0;
    for (std::size_t k = 0; k < logits.size(); ++k) total += focal_term(logits[k], static_cast<int>(k) == target, params);
    return total;
}

Tensor focal_loss(const Tensor& logits, const Tensor& targets, const FocalParams& params) {
    if (logits.shape() != targets.shape()) {
        throw ShapeError("focal loss: logits " + num::shape_str(logits.shape()) + " vs targets " +
                         num::shape_str(targets.shape()));
    }
    const Tensor pos = num::scale(num::mul(num::power(num::sigmoid(num::neg(logits)), params.gamma),
                                           num::neg(num::log_sigmoid(logits))),
                                  params.alpha);
    const Tensor neg = num::scale(num::mul(num::power(num::sigmoid(logits), params.gamma),
                                           num::neg(num::log_sigmoid(num::neg(logits)))),
                                  1.0 - params.alpha);
    const Tensor negatives = num::add_scalar(num::neg(targets), 1.0);
    return num::add(num::mul(targets, pos), num::mul(negatives, neg));
}

Tensor l1_box_loss(const Tensor& pred, const Tensor& target) {
    return num::mean(num::abs(num::sub(pred, target)), 1);
}

Tensor giou_loss(const Tensor& pred, const Tensor& target) {
    if (pred.shape() != target.shape() || pred.dim() != 2 || pred.shape()[1] != 4) {
        throw ShapeError("giou loss: boxes " + num::shape_str(pred.shape()) + " vs " + num::shape_str(target.shape()));
    }
    auto corners = [](const Tensor& b) {
        const Tensor cx = column(b, 0), cy = column(b, 1);
        const Tensor hw = num::scale(column(b, 2), 0.5), hh = num::scale(column(b, 3), 0.5);
        return std::array<Tensor, 4>{num::sub(cx, hw), num::sub(cy, hh), num::add(cx, hw), num::add(cy, hh)};
    };
    const auto p = corners(pred), q = corners(target);
    auto area = [](const std::array<Tensor, 4>& c) { return num::mul(num::sub(c[2], c[0]), num::sub(c[3], c[1])); };
    const Tensor iw = num::relu(num::sub(num::minimum(p[2], q[2]), num::maximum(p[0], q[0])));
    const Tensor ih = num::relu(num::sub(num::minimum(p[3], q[3]), num::maximum(p[1], q[1])));
    const Tensor inter = num::mul(iw, ih);
    const Tensor uni = num::sub(num::add(area(p), area(q)), inter);
    const Tensor ew = num::sub(num::maximum(p[2], q[2]), num::minimum(p[0], q[0]));
    const Tensor eh = num::sub(num::maximum(p[3], q[3]), num::minimum(p[1], q[1]));
    const Tensor enclosing = num::mul(ew, eh);
    const Tensor giou = num::sub(safe_div(inter, uni), safe_div(num::sub(enclosing, uni), enclosing));
    return num::reshape(num::add_scalar(num::neg(giou), 1.0), {pred.shape()[0]});
}

nlohmann::json LossReport::to_json() const {
    return {{"box", box}, {"iou", iou}, {"cls", cls}, {"d", d}, {"total", total}, {"matched", matched}};
}

LossResult total_loss(const dec::DecoderOutput& out, const std::vector<match::GroundTruthHoi>& gts,
                      const match::Assignment& assignment, const LossConfig& config) {
    const std::size_t rows = out.rows(), classes = out.logits.shape()[1], k = gts.size();
    if (assignment.pairs.size() != k) {
        throw ValidationError("assignment covers " + std::to_string(assignment.pairs.size()) + " of " +
                              std::to_string(k) + " ground truths");
    }
    std::vector<bool> row_used(rows, false), col_used(k, false);
    std::vector<std::size_t> matched_rows(k);
    for (const auto& [r, c] : assignment.pairs) {
        if (r >= rows || c >= k || row_used[r] || col_used[c]) {
            throw ValidationError("stale assignment pair (" + std::to_string(r) + ", " + std::to_string(c) +
                                  ") for " + std::to_string(rows) + " predictions and " + std::to_string(k) +
                                  " ground truths");
        }
        row_used[r] = col_used[c] = true;
        matched_rows[c] = r;
    }

    // Per-row weights: 1/K for matched rows, 1/R for the rest.
    std::vector<double> class_targets(rows * classes, 0.0), conf_targets(rows, 0.0), row_weight(rows);
    for (std::size_t r = 0; r < rows; ++r) row_weight[r] = 1.0 / static_cast<double>(rows);
    for (std::size_t c = 0; c < k; ++c) {
        const auto gt_class = gts[c].interaction;
        if (gt_class < 0 || static_cast<std::size_t>(gt_class) >= classes) {
            throw ValidationError("ground truth interaction " + std::to_string(gt_class) + " outside " +
                                  std::to_string(classes) + " classes");
        }
        const std::size_t r = matched_rows[c];
        class_targets[r * classes + static_cast<std::size_t>(gt_class)] = 1.0;
        conf_targets[r] = 1.0;
        row_weight[r] = 1.0 / static_cast<double>(k);
    }
    const Tensor weights = Tensor::from({rows}, row_weight);
    const Tensor class_focal = num::sum(focal_loss(out.logits, Tensor::from({rows, classes}, class_targets), config.focal), 1);
    const Tensor conf_focal = num::reshape(
        focal_loss(column(out.box_logits, 0), Tensor::from({rows, 1}, conf_targets), config.focal), {rows});
    const Tensor cls = num::sum(num::mul(num::add(class_focal, conf_focal), weights));

    LossResult result;
    result.report.matched = k;
    Tensor total = num::scale(cls, config.weights.cls);
    double d_sum = 0.0;
    if (k > 0) {
        const Tensor picked = num::index_rows(out.boxes, matched_rows);
        std::vector<Box> gh, go;
        for (const auto& gt : gts) {
            gh.push_back(gt.b_h);
            go.push_back(gt.b_o);
        }
        const Tensor ph = num::slice(picked, 1, 1, 4), po = num::slice(picked, 1, 5, 4);
        const Tensor th = box_rows(gh), to = box_rows(go);
        const double inv_k = 1.0 / static_cast<double>(k);
        const Tensor box = num::scale(num::sum(num::add(l1_box_loss(ph, th), l1_box_loss(po, to))), inv_k);
        const Tensor iou = num::scale(num::sum(num::add(giou_loss(ph, th), giou_loss(po, to))), inv_k);
        for (std::size_t c = 0; c < k; ++c) {
            const double lv = match::level_target(out.level_value[matched_rows[c]], config.conditional.order);
            d_sum += match::distance_constraint(lv, match::target_distance(gts[c], config.conditional.distance));
        }
        result.report.d = d_sum * inv_k;
        result.report.box = box.item();
        result.report.iou = iou.item();
        total = num::add(total, num::add(num::scale(box, config.weights.box), num::scale(iou, config.weights.iou)));
    }
    total = num::add_scalar(total, config.weights.d * result.report.d);
    result.report.cls = cls.item();
    result.report.total = total.item();
    result.total = total;
    return result;
}

}  // namespace cmdse::loss
