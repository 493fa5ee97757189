#pragma once

#include <vector>

#include "cmdse/geometry.hpp"
#include "cmdse/numcore/nn.hpp"
#include "cmdse/semantics.hpp"

namespace cmdse::dec {

struct DecoderConfig {
    std::size_t width = 32;       // C
    std::size_t text_width = 32;  // C_t
    std::size_t num_queries = 10;
    std::size_t num_layers = 4;
    std::size_t heads = 4;
    std::size_t ffn_ratio = 2;
    std::size_t memory_tokens = 17;
    std::uint64_t seed = 0;
};

// Post-norm DETR-style layer: self-attention, cross-attention, feed-forward.
struct DecoderLayer {
    num::MultiHeadAttention self_attn, cross_attn;
    num::AffineLayerNorm ln1, ln2, ln3;
    num::Linear ffn1, ffn2;

    static DecoderLayer make(std::size_t width, std::size_t heads, std::size_t hidden, num::Rng& rng);
    num::Tensor operator()(const num::Tensor& tgt, const num::Tensor& keys, const num::Tensor& values) const;
    void collect(num::ParamList& out, const std::string& prefix) const;
};

// Differentiable decoder output over R = |levels| * M rows; row = level_pos * M + query.
struct DecoderOutput {
    num::Tensor box_logits;  // [R, 9] before the sigmoid
    num::Tensor boxes;       // [R, 9]: c, b_h (cx, cy, w, h), b_o (cx, cy, w, h), all in [0, 1]
    num::Tensor embeddings;  // [R, C_t], unit rows
    num::Tensor logits;      // [R, N]
    std::vector<std::size_t> level_pos;  // per row
    std::vector<double> level_value;     // Lv per row
    std::size_t num_levels = 0;
    std::size_t num_queries = 0;

    std::size_t rows() const { return level_pos.size(); }
};

struct HoiPrediction {
    Box b_h;
    Box b_o;
    double c = 0.0;
    std::vector<double> logits;
    std::size_t level_index = 0;
    double level_value = 0.0;
};

struct PredictionSet {
    std::vector<HoiPrediction> predictions;
    std::size_t num_levels = 0;
    std::size_t num_queries = 0;

    static PredictionSet from_output(const DecoderOutput& out);
};

// Lv = (pos + 1) / (K + 1).
double normalized_level(std::size_t level_pos, std::size_t num_levels);

// Throws unless `levels` is strictly increasing inside 1..num_blocks.
void validate_levels(const std::vector<std::size_t>& levels, std::size_t num_blocks);

class HoiDecoder {
public:
    explicit HoiDecoder(const DecoderConfig& config);

    const DecoderConfig& config() const { return config_; }

    // Hidden states [M, C] for one feature map, using the shared weights.
    num::Tensor decode_level(const num::Tensor& feature_map) const;
    // `maps[k]` is block k + 1; `levels` are 1-based block indices.
    DecoderOutput decode(const std::vector<num::Tensor>& maps, const std::vector<std::size_t>& levels,
                         const sem::TextBank& text) const;

    // [R, C] -> [R, 9] after sigmoid.
    num::Tensor box_head(const num::Tensor& h) const { return num::sigmoid(box_logits(h)); }
    num::Tensor box_logits(const num::Tensor& h) const;
    // [R, C] -> [R, C_t] with unit rows.
    num::Tensor cls_head(const num::Tensor& h) const;

    void collect(num::ParamList& out, const std::string& prefix = "decoder") const;

    num::Tensor queries;  // [M, C]
    num::Linear memory_proj;
    num::AffineLayerNorm memory_ln;
    num::Tensor key_pos;  // [T, C]
    std::vector<DecoderLayer> layers;
    num::Linear box_fc1, box_fc2;
    num::Linear cls_proj;

private:
    DecoderConfig config_;
};

}  // namespace cmdse::dec
