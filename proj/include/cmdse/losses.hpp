#pragma once

#include <vector>

#include "json.hpp"

#include "cmdse/decoder.hpp"
#include "cmdse/matching.hpp"

namespace cmdse::loss {

struct FocalParams {
    double gamma = 2.0;
    double alpha = 0.25;
};

// Sigmoid focal loss summed over all classes, one of which is positive.
double focal_loss(const std::vector<double>& logits, int target, const FocalParams& params = {});
// Single binary term for one logit.
double focal_term(double logit, bool positive, const FocalParams& params = {});

// Elementwise sigmoid focal loss; `targets` holds 0/1 and matches `logits` in shape.
num::Tensor focal_loss(const num::Tensor& logits, const num::Tensor& targets, const FocalParams& params = {});
// Row-wise mean absolute difference of [R, 4] boxes -> [R].
num::Tensor l1_box_loss(const num::Tensor& pred, const num::Tensor& target);
// Row-wise 1 - GIoU of [R, 4] cxcywh boxes -> [R].
num::Tensor giou_loss(const num::Tensor& pred, const num::Tensor& target);

struct LossConfig {
    match::CostWeights weights;
    FocalParams focal;
    match::ConditionalOptions conditional;
};

struct LossReport {
    double box = 0.0;
    double iou = 0.0;
    double cls = 0.0;
    double d = 0.0;
    double total = 0.0;
    std::size_t matched = 0;

    nlohmann::json to_json() const;
};

struct LossResult {
    num::Tensor total;  // differentiable scalar
    LossReport report;
};

// Matched pairs average box, iou, cls and d over K. The cls component also
// carries the negative focal terms of unmatched rows, averaged over all R
// rows, and a binary focal term on the confidence logit (1 for matched rows).
// The d term is constant with respect to every parameter.
LossResult total_loss(const dec::DecoderOutput& out, const std::vector<match::GroundTruthHoi>& gts,
                      const match::Assignment& assignment, const LossConfig& config);

}  // namespace cmdse::loss
