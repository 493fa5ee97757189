#include "cmdse/decoder.hpp"

namespace cmdse::dec {

using num::Tensor;

DecoderLayer DecoderLayer::make(std::size_t width, std::size_t heads, std::size_t hidden, num::Rng& rng) {
    DecoderLayer l;
    l.self_attn = num::MultiHeadAttention::make(width, heads, rng, num::Init::xavier, 0.0, true);
    l.cross_attn = num::MultiHeadAttention::make(width, heads, rng, num::Init::xavier, 0.0, true);
    l.ln1 = num::AffineLayerNorm::make(width, true);
    l.ln2 = num::AffineLayerNorm::make(width, true);
    l.ln3 = num::AffineLayerNorm::make(width, true);
    l.ffn1 = num::Linear::make(width, hidden, rng, num::Init::xavier, 0.0, true);
    l.ffn2 = num::Linear::make(hidden, width, rng, num::Init::xavier, 0.0, true);
    return l;
}

Tensor DecoderLayer::operator()(const Tensor& tgt, const Tensor& keys, const Tensor& values) const {
    Tensor x = ln1(add(tgt, self_attn(tgt, tgt, tgt)));
    x = ln2(add(x, cross_attn(x, keys, values)));
    return ln3(add(x, ffn2(num::gelu(ffn1(x)))));
}

void DecoderLayer::collect(num::ParamList& out, const std::string& prefix) const {
    self_attn.collect(out, prefix + ".self_attn");
    ln1.collect(out, prefix + ".ln1");
    cross_attn.collect(out, prefix + ".cross_attn");
    ln2.collect(out, prefix + ".ln2");
    ffn1.collect(out, prefix + ".ffn1");
    ffn2.collect(out, prefix + ".ffn2");
    ln3.collect(out, prefix + ".ln3");
}

PredictionSet PredictionSet::from_output(const DecoderOutput& out) {
    PredictionSet set;
    set.num_levels = out.num_levels;
    set.num_queries = out.num_queries;
    const std::size_t n = out.logits.shape()[1];
    for (std::size_t r = 0; r < out.rows(); ++r) {
        HoiPrediction p;
        p.c = out.boxes.at(r, 0);
        p.b_h = {out.boxes.at(r, 1), out.boxes.at(r, 2), out.boxes.at(r, 3), out.boxes.at(r, 4)};
        p.b_o = {out.boxes.at(r, 5), out.boxes.at(r, 6), out.boxes.at(r, 7), out.boxes.at(r, 8)};
        p.logits.resize(n);
        for (std::size_t k = 0; k < n; ++k) p.logits[k] = out.logits.at(r, k);
        p.level_index = out.level_pos[r];
        p.level_value = out.level_value[r];
        set.predictions.push_back(std::move(p));
    }
    return set;
}

double normalized_level(std::size_t level_pos, std::size_t num_levels) {
    if (level_pos >= num_levels) {
        throw ValidationError("level position " + std::to_string(level_pos) + " outside 0.." +
                              std::to_string(num_levels) + ")");
    }
    return static_cast<double>(level_pos + 1) / static_cast<double>(num_levels + 1);
}

void validate_levels(const std::vector<std::size_t>& levels, std::size_t num_blocks) {
    if (levels.empty()) throw ValidationError("level set is empty");
    for (std::size_t i = 0; i < levels.size(); ++i) {
        if (levels[i] == 0 || levels[i] > num_blocks) {
            throw NotFoundError("level " + std::to_string(levels[i]) + " outside available maps 1.." +
                                std::to_string(num_blocks));
        }
        if (i > 0 && levels[i] <= levels[i - 1]) throw ValidationError("levels must be strictly increasing");
    }
}

HoiDecoder::HoiDecoder(const DecoderConfig& config) : config_(config) {
    num::Rng rng({config.seed, 0x4443ull});
    const std::size_t c = config.width;
    queries = num::randn({config.num_queries, c}, rng, 1.0, true);
    memory_proj = num::Linear::make(c, c, rng, num::Init::xavier, 0.0, true);
    memory_ln = num::AffineLayerNorm::make(c, true);
    key_pos = num::randn({config.memory_tokens, c}, rng, 1.0, true);
    for (std::size_t i = 0; i < config.num_layers; ++i) {
        layers.push_back(DecoderLayer::make(c, config.heads, c * config.ffn_ratio, rng));
    }
    box_fc1 = num::Linear::make(c, c, rng, num::Init::xavier, 0.0, true);
    box_fc2 = num::Linear::make(c, 9, rng, num::Init::xavier, 0.0, true);
    cls_proj = num::Linear::make(c, config.text_width, rng, num::Init::xavier, 0.0, true);
}

Tensor HoiDecoder::decode_level(const Tensor& feature_map) const {
    if (feature_map.dim() != 2 || feature_map.shape()[0] != config_.memory_tokens ||
        feature_map.shape()[1] != config_.width) {
        throw ShapeError("feature map " + num::shape_str(feature_map.shape()) + " does not match decoder memory [" +
                         std::to_string(config_.memory_tokens) + "," + std::to_string(config_.width) + "]");
    }
    const Tensor memory = memory_ln(memory_proj(feature_map));
    const Tensor keys = add(memory, key_pos);
    Tensor x = queries;
    for (const auto& layer : layers) x = layer(x, keys, memory);
    return x;
}

Tensor HoiDecoder::box_logits(const Tensor& h) const { return box_fc2(num::gelu(box_fc1(h))); }

Tensor HoiDecoder::cls_head(const Tensor& h) const { return num::l2_normalize(cls_proj(h)); }

DecoderOutput HoiDecoder::decode(const std::vector<Tensor>& maps, const std::vector<std::size_t>& levels,
                                 const sem::TextBank& text) const {
    validate_levels(levels, maps.size());
    DecoderOutput out;
    out.num_levels = levels.size();
    out.num_queries = config_.num_queries;
    std::vector<Tensor> hidden;
    hidden.reserve(levels.size());
    for (std::size_t pos = 0; pos < levels.size(); ++pos) {
        hidden.push_back(decode_level(maps[levels[pos] - 1]));
        const double lv = normalized_level(pos, levels.size());
        for (std::size_t q = 0; q < config_.num_queries; ++q) {
            out.level_pos.push_back(pos);
            out.level_value.push_back(lv);
        }
    }
    const Tensor h = hidden.size() == 1 ? hidden.front() : num::concat(hidden, 0);
    out.box_logits = box_logits(h);
    out.boxes = num::sigmoid(out.box_logits);
    out.embeddings = cls_head(h);
    out.logits = sem::fuse_logits(out.embeddings, text);
    return out;
}

void HoiDecoder::collect(num::ParamList& out, const std::string& prefix) const {
    out.push_back({prefix + ".queries", queries});
    memory_proj.collect(out, prefix + ".memory_proj");
    memory_ln.collect(out, prefix + ".memory_ln");
    out.push_back({prefix + ".key_pos", key_pos});
    for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect(out, prefix + ".layer" + std::to_string(i));
    box_fc1.collect(out, prefix + ".box_fc1");
    box_fc2.collect(out, prefix + ".box_fc2");
    cls_proj.collect(out, prefix + ".cls_proj");
}

}  // namespace cmdse::dec
