#pragma once

#include <cstdint>
#include <filesystem>
#include <mutex>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cmdse/numcore/nn.hpp"
#include "cmdse/semantics.hpp"

namespace cmdse::enc {

// Row-major H x W x 3 image with values in [0, 1].
struct Image {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> pixels;

    static Image blank(std::size_t height, std::size_t width, double fill = 0.0) {
        return {height, width, std::vector<double>(height * width * 3, fill)};
    }
    double& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * 3 + c]; }
    double at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * 3 + c]; }
    bool operator==(const Image&) const = default;
};

// One pre-LN transformer block: x + attn(ln(x)), then x + mlp(ln(x)).
// A non-positive stddev selects 1/sqrt(fan_in) per linear layer.
struct EncoderBlock {
    num::AffineLayerNorm ln1, ln2;
    num::MultiHeadAttention attn;
    num::Linear fc1, fc2;

    static EncoderBlock make(std::size_t width, std::size_t heads, std::size_t hidden, num::Rng& rng,
                             double stddev);
    num::Tensor operator()(const num::Tensor& x) const;
    void collect(num::ParamList& out, const std::string& prefix) const;
};

struct VisualEncoderConfig {
    std::size_t image_size = 32;
    std::size_t patch_size = 8;
    std::size_t width = 32;
    std::size_t num_blocks = 12;
    std::size_t heads = 4;
    std::size_t mlp_ratio = 2;
    double init_std = 0.02;
    std::uint64_t seed = 0;

    std::size_t num_patches() const { return (image_size / patch_size) * (image_size / patch_size); }
    std::size_t num_tokens() const { return num_patches() + 1; }
};

// Frozen toy ViT. Every block output is exposed as a feature map of
// shape [num_patches + 1, width], with the class slot in row 0.
class VisualEncoder {
public:
    explicit VisualEncoder(const VisualEncoderConfig& config);

    const VisualEncoderConfig& config() const { return config_; }
    // All block outputs, index k holds level k + 1.
    std::vector<num::Tensor> encode_image(const Image& image) const;
    // Level is 1-based, matching block numbering.
    num::Tensor feature_map(const Image& image, std::size_t level) const;
    num::ParamList frozen_parameters() const;

private:
    num::Tensor embed(const Image& image) const;

    VisualEncoderConfig config_;
    num::Linear patch_embed_;
    num::Tensor cls_token_;  // [1, C]
    num::Tensor pos_embed_;  // [P + 1, C]
    std::vector<EncoderBlock> blocks_;
};

// Plain-text token list; the line index is the token id.
class TokenVocabulary {
public:
    TokenVocabulary() = default;
    explicit TokenVocabulary(std::vector<std::string> tokens);
    static TokenVocabulary load(const std::filesystem::path& path);

    std::size_t size() const { return tokens_.size(); }
    const std::string& token(std::size_t id) const { return tokens_.at(id); }
    // Throws NotFoundError for a word outside the vocabulary.
    std::size_t id(std::string_view word) const;
    bool contains(std::string_view word) const { return index_.count(std::string(word)) != 0; }
    // Lower-cased whitespace split with surrounding punctuation stripped.
    std::vector<std::size_t> tokenize(std::string_view text) const;

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::size_t> index_;
};

struct TextEncoderConfig {
    std::size_t width = 32;  // C_t
    std::size_t depth = 2;
    std::size_t heads = 4;
    std::size_t mlp_ratio = 2;
    std::size_t max_length = 32;
    double init_std = 0.02;  // embeddings
    double block_std = 0.0;  // block weights; 0 selects 1/sqrt(fan_in)
    std::uint64_t seed = 1;
};

struct ContextTokens {
    num::Tensor prefix;       // [8, C_t]
    num::Tensor conjunction;  // [2, C_t]

    static constexpr std::size_t kPrefix = 8;
    static constexpr std::size_t kConjunction = 2;

    static ContextTokens make(std::size_t width, num::Rng& rng, double stddev,
                              std::size_t prefix = kPrefix, std::size_t conjunction = kConjunction);
    void collect(num::ParamList& out, const std::string& prefix_name = "ctx") const;
};

// Frozen text transformer pooled at the final sequence position.
class TextEncoder {
public:
    TextEncoder(const TextEncoderConfig& config, TokenVocabulary vocab);

    const TextEncoderConfig& config() const { return config_; }
    const TokenVocabulary& vocab() const { return vocab_; }

    // Encodes a [L, C_t] sequence of input vectors; returns a unit-norm [1, C_t] row.
    num::Tensor encode_embeddings(const num::Tensor& sequence) const;
    num::Tensor encode_tokens(const std::vector<std::size_t>& ids) const;
    // [ctx_pre, action tokens, ctx_con, object tokens] -> [1, C_t]
    num::Tensor encode_hoi_text(const ContextTokens& ctx, const std::vector<std::size_t>& action_ids,
                                const std::vector<std::size_t>& object_ids) const;
    // T_hoi over every interaction of `vocab` -> [N, C_t], differentiable in `ctx`.
    num::Tensor encode_hoi_names(const ContextTokens& ctx, const sem::Vocabulary& vocab) const;
    // T_b -> [N, C_t]; computed once per bank content and then served from cache.
    num::Tensor encode_descriptions(const sem::DescriptionBank& bank) const;
    std::size_t description_encodes() const { return description_encodes_; }

    num::ParamList frozen_parameters() const;

private:
    num::Tensor lookup(const std::vector<std::size_t>& ids) const;

    TextEncoderConfig config_;
    TokenVocabulary vocab_;
    num::Tensor token_embed_;  // [V, C_t]
    num::Tensor pos_embed_;    // [max_length, C_t]
    std::vector<EncoderBlock> blocks_;
    num::AffineLayerNorm final_ln_;
    num::Linear projection_;

    mutable std::mutex cache_mutex_;
    mutable std::unordered_map<std::uint64_t, num::Tensor> description_cache_;
    mutable std::size_t description_encodes_ = 0;
};

// FNV-1a over the raw bytes of every parameter, in list order.
std::uint64_t parameter_hash(const num::ParamList& params);

}  // namespace cmdse::enc
