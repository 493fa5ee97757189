#include "cmdse/encoders.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>

namespace cmdse::enc {

using num::Tensor;

EncoderBlock EncoderBlock::make(std::size_t width, std::size_t heads, std::size_t hidden, num::Rng& rng,
                                double stddev) {
    auto std_for = [stddev](std::size_t fan_in) {
        return stddev > 0.0 ? stddev : 1.0 / std::sqrt(static_cast<double>(fan_in));
    };
    EncoderBlock b;
    b.ln1 = num::AffineLayerNorm::make(width, false);
    b.ln2 = num::AffineLayerNorm::make(width, false);
    b.attn = num::MultiHeadAttention::make(width, heads, rng, num::Init::gaussian, std_for(width), false);
    b.fc1 = num::Linear::make(width, hidden, rng, num::Init::gaussian, std_for(width), false);
    b.fc2 = num::Linear::make(hidden, width, rng, num::Init::gaussian, std_for(hidden), false);
    return b;
}

Tensor EncoderBlock::operator()(const Tensor& x) const {
    const Tensor n1 = ln1(x);
    const Tensor y = add(x, attn(n1, n1, n1));
    return add(y, fc2(num::gelu(fc1(ln2(y)))));
}

void EncoderBlock::collect(num::ParamList& out, const std::string& prefix) const {
    ln1.collect(out, prefix + ".ln1");
    attn.collect(out, prefix + ".attn");
    ln2.collect(out, prefix + ".ln2");
    fc1.collect(out, prefix + ".fc1");
    fc2.collect(out, prefix + ".fc2");
}

VisualEncoder::VisualEncoder(const VisualEncoderConfig& config) : config_(config) {
    if (config.patch_size == 0 || config.image_size % config.patch_size != 0) {
        throw ValidationError("image size " + std::to_string(config.image_size) + " not divisible by patch size " +
                              std::to_string(config.patch_size));
    }
    if (config.num_blocks == 0) throw ValidationError("visual encoder needs at least one block");
    num::Rng rng({config.seed, 0x5649ull});
    const std::size_t patch_dim = config.patch_size * config.patch_size * 3;
    patch_embed_ = num::Linear::make(patch_dim, config.width, rng, num::Init::gaussian, config.init_std, false);
    cls_token_ = num::randn({1, config.width}, rng, config.init_std);
    pos_embed_ = num::randn({config.num_tokens(), config.width}, rng, config.init_std);
    for (std::size_t i = 0; i < config.num_blocks; ++i) {
        blocks_.push_back(EncoderBlock::make(config.width, config.heads, config.width * config.mlp_ratio, rng,
                                             config.init_std));
    }
}

Tensor VisualEncoder::embed(const Image& image) const {
    const std::size_t s = config_.image_size, p = config_.patch_size;
    if (image.height != s || image.width != s || image.pixels.size() != s * s * 3) {
        throw ShapeError("image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                         " does not match encoder input " + std::to_string(s) + "x" + std::to_string(s));
    }
    const std::size_t grid = s / p, patch_dim = p * p * 3;
    std::vector<double> patches(grid * grid * patch_dim);
    for (std::size_t gy = 0; gy < grid; ++gy)
        for (std::size_t gx = 0; gx < grid; ++gx) {
            double* row = &patches[(gy * grid + gx) * patch_dim];
            for (std::size_t y = 0; y < p; ++y)
                for (std::size_t x = 0; x < p; ++x)
                    for (std::size_t c = 0; c < 3; ++c) *row++ = image.at(gy * p + y, gx * p + x, c);
        }
    const Tensor tokens = patch_embed_(Tensor::from({grid * grid, patch_dim}, std::move(patches)));
    return add(num::concat({cls_token_, tokens}, 0), pos_embed_);
}

std::vector<Tensor> VisualEncoder::encode_image(const Image& image) const {
    num::NoGradGuard frozen;
    std::vector<Tensor> maps;
    maps.reserve(blocks_.size());
    Tensor x = embed(image);
    for (const auto& block : blocks_) {
        x = block(x);
        maps.push_back(x);
    }
    return maps;
}

Tensor VisualEncoder::feature_map(const Image& image, std::size_t level) const {
    if (level == 0 || level > blocks_.size()) {
        throw NotFoundError("level " + std::to_string(level) + " outside 1.." + std::to_string(blocks_.size()));
    }
    num::NoGradGuard frozen;
    Tensor x = embed(image);
    for (std::size_t i = 0; i < level; ++i) x = blocks_[i](x);
    return x;
}

num::ParamList VisualEncoder::frozen_parameters() const {
    num::ParamList out;
    patch_embed_.collect(out, "visual.patch_embed");
    out.push_back({"visual.cls_token", cls_token_});
    out.push_back({"visual.pos_embed", pos_embed_});
    for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect(out, "visual.block" + std::to_string(i));
    return out;
}

TokenVocabulary::TokenVocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        if (tokens_[i].empty()) throw ValidationError("token list line " + std::to_string(i + 1) + " is empty");
        if (!index_.emplace(tokens_[i], i).second) {
            throw ValidationError("token list line " + std::to_string(i + 1) + " repeats '" + tokens_[i] + "'");
        }
    }
}

TokenVocabulary TokenVocabulary::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw NotFoundError("cannot open token list '" + path.string() + "'");
    std::vector<std::string> tokens;
    for (std::string line; std::getline(in, line);) {
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        tokens.push_back(line);
    }
    while (!tokens.empty() && tokens.back().empty()) tokens.pop_back();
    return TokenVocabulary(std::move(tokens));
}

std::size_t TokenVocabulary::id(std::string_view word) const {
    auto it = index_.find(std::string(word));
    if (it == index_.end()) throw NotFoundError("unknown token '" + std::string(word) + "'");
    return it->second;
}

std::vector<std::size_t> TokenVocabulary::tokenize(std::string_view text) const {
    std::vector<std::size_t> ids;
    std::string word;
    auto flush = [&] {
        const auto first = word.find_first_not_of(".,;:!?\"'()");
        const auto last = word.find_last_not_of(".,;:!?\"'()");
        if (first != std::string::npos) ids.push_back(id(word.substr(first, last - first + 1)));
        word.clear();
    };
    for (char ch : text) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            flush();
        } else {
            word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        }
    }
    flush();
    return ids;
}

ContextTokens ContextTokens::make(std::size_t width, num::Rng& rng, double stddev, std::size_t prefix,
                                  std::size_t conjunction) {
    return {num::randn({prefix, width}, rng, stddev, true), num::randn({conjunction, width}, rng, stddev, true)};
}

void ContextTokens::collect(num::ParamList& out, const std::string& prefix_name) const {
    out.push_back({prefix_name + ".prefix", prefix});
    out.push_back({prefix_name + ".conjunction", conjunction});
}

TextEncoder::TextEncoder(const TextEncoderConfig& config, TokenVocabulary vocab)
    : config_(config), vocab_(std::move(vocab)) {
    if (vocab_.size() == 0) throw ValidationError("text encoder needs a nonempty token vocabulary");
    num::Rng rng({config.seed, 0x5458ull});
    token_embed_ = num::randn({vocab_.size(), config.width}, rng, config.init_std);
    pos_embed_ = num::randn({config.max_length, config.width}, rng, config.init_std);
    for (std::size_t i = 0; i < config.depth; ++i) {
        blocks_.push_back(
            EncoderBlock::make(config.width, config.heads, config.width * config.mlp_ratio, rng, config.block_std));
    }
    final_ln_ = num::AffineLayerNorm::make(config.width, false);
    const double proj_std = config.block_std > 0.0 ? config.block_std : 1.0 / std::sqrt(static_cast<double>(config.width));
    projection_ = num::Linear::make(config.width, config.width, rng, num::Init::gaussian, proj_std, false);
}

Tensor TextEncoder::lookup(const std::vector<std::size_t>& ids) const {
    for (auto id : ids) {
        if (id >= vocab_.size()) {
            throw NotFoundError("token id " + std::to_string(id) + " outside vocabulary of " +
                                std::to_string(vocab_.size()));
        }
    }
    return num::index_rows(token_embed_, ids);
}

Tensor TextEncoder::encode_embeddings(const Tensor& sequence) const {
    if (sequence.dim() != 2 || sequence.shape()[1] != config_.width || sequence.shape()[0] == 0) {
        throw ShapeError("text sequence " + num::shape_str(sequence.shape()) + " must be [L, " +
                         std::to_string(config_.width) + "]");
    }
    const std::size_t len = sequence.shape()[0];
    if (len > config_.max_length) {
        throw ShapeError("text sequence of " + std::to_string(len) + " tokens exceeds max length " +
                         std::to_string(config_.max_length));
    }
    Tensor x = add(sequence, num::slice(pos_embed_, 0, 0, len));
    for (const auto& block : blocks_) x = block(x);
    const Tensor pooled = num::slice(final_ln_(x), 0, len - 1, 1);
    return num::l2_normalize(projection_(pooled));
}

Tensor TextEncoder::encode_tokens(const std::vector<std::size_t>& ids) const {
    if (ids.empty()) throw ValidationError("cannot encode an empty token sequence");
    return encode_embeddings(lookup(ids));
}

Tensor TextEncoder::encode_hoi_text(const ContextTokens& ctx, const std::vector<std::size_t>& action_ids,
                                    const std::vector<std::size_t>& object_ids) const {
    return encode_embeddings(num::concat({ctx.prefix, lookup(action_ids), ctx.conjunction, lookup(object_ids)}, 0));
}

Tensor TextEncoder::encode_hoi_names(const ContextTokens& ctx, const sem::Vocabulary& vocab) const {
    std::vector<Tensor> rows;
    rows.reserve(vocab.num_interactions());
    for (const auto& it : vocab.interactions()) {
        rows.push_back(encode_hoi_text(ctx, vocab_.tokenize(vocab.action_name(it.action)),
                                       vocab_.tokenize(vocab.object_name(it.object))));
    }
    return num::concat(rows, 0);
}

Tensor TextEncoder::encode_descriptions(const sem::DescriptionBank& bank) const {
    const std::uint64_t key = bank.content_hash();
    std::lock_guard<std::mutex> lock(cache_mutex_);
    if (auto it = description_cache_.find(key); it != description_cache_.end()) return it->second;
    num::NoGradGuard constant;
    std::vector<Tensor> rows;
    rows.reserve(bank.size());
    for (std::size_t i = 0; i < bank.size(); ++i) rows.push_back(encode_tokens(vocab_.tokenize(bank.at(static_cast<int>(i)).text)));
    Tensor t_b = num::concat(rows, 0);
    ++description_encodes_;
    description_cache_.emplace(key, t_b);
    return t_b;
}

num::ParamList TextEncoder::frozen_parameters() const {
    num::ParamList out;
    out.push_back({"text.token_embed", token_embed_});
    out.push_back({"text.pos_embed", pos_embed_});
    for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect(out, "text.block" + std::to_string(i));
    final_ln_.collect(out, "text.final_ln");
    projection_.collect(out, "text.projection");
    return out;
}

std::uint64_t parameter_hash(const num::ParamList& params) {
    std::uint64_t h = 1469598103934665603ull;
    for (const auto& p : params) {
        for (double v : p.tensor.data()) {
            unsigned char bytes[sizeof(double)];
            std::memcpy(bytes, &v, sizeof(double));
            for (unsigned char b : bytes) {
                h ^= b;
                h *= 1099511628211ull;
            }
        }
    }
    return h;
}

}  // namespace cmdse::enc
