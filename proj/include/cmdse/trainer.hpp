#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "cmdse/decoder.hpp"
#include "cmdse/encoders.hpp"
#include "cmdse/evalkit.hpp"
#include "cmdse/losses.hpp"
#include "cmdse/matching.hpp"
#include "cmdse/numcore/checkpoint.hpp"
#include "cmdse/numcore/optim.hpp"
#include "cmdse/semantics.hpp"
#include "cmdse/synthgen.hpp"

namespace cmdse::train {

// Directory holding the bundled vocabulary, token list and description bank.
std::filesystem::path default_data_dir();

struct RunConfig {
    std::string preset = "paper";
    match::CostWeights weights;  // lambda_b, lambda_iou, lambda_cls, lambda_d
    loss::FocalParams focal;     // gamma_f, alpha_f
    match::ConditionalOptions conditional;
    std::vector<std::size_t> levels = {6, 9, 12};
    std::size_t num_queries = 10;
    std::size_t decoder_layers = 4;
    double lr = 1e-4;
    double weight_decay = 1e-4;
    std::size_t steps = 200;
    // The full-scale schedule (80 epochs at batch 128) is recorded here; training runs `steps`.
    std::size_t epochs = 80;
    std::size_t batch_size = 128;
    double gamma = 2.0;
    std::size_t top_k = 20;
    std::uint64_t seed = 7;
    // Name-only prompts pin alpha_b to zero.
    bool use_descriptions = true;
    std::string data_dir;
    std::string description_bank;
    std::string tokens;
    std::string out_dir = "run";
    std::size_t checkpoint_every = 0;  // 0 keeps only the final checkpoint

    static RunConfig paper();
    static RunConfig toy();
    static RunConfig preset_named(const std::string& name);
    // Starts from the preset named by "preset" (default "paper"); unknown fields are rejected.
    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig load(const std::filesystem::path& path);
    nlohmann::json to_json() const;
    void validate() const;

    std::filesystem::path description_bank_path() const;
    std::filesystem::path tokens_path() const;
};

// Applies CMDSE_SEED when set; throws ValidationError for a non-numeric value.
void apply_env_overrides(RunConfig& config);

// Learnable decoder, heads, context tokens and fusion scalars around the frozen encoders.
class Model {
public:
    Model(const RunConfig& config, sem::Vocabulary vocab, const sem::DescriptionBank& bank,
          enc::TokenVocabulary tokens);

    const RunConfig& config() const { return config_; }
    const sem::Vocabulary& vocab() const { return vocab_; }
    const enc::VisualEncoder& visual() const { return visual_; }
    const enc::TextEncoder& text() const { return text_; }
    const dec::HoiDecoder& decoder() const { return decoder_; }

    // T_hoi is rebuilt from the context tokens; T_b comes from the encoder cache.
    sem::TextBank text_bank() const;
    dec::DecoderOutput forward(const std::vector<num::Tensor>& maps, const sem::TextBank& bank) const;

    num::ParamList learnable() const;
    num::ParamList frozen() const;

private:
    RunConfig config_;
    sem::Vocabulary vocab_;
    sem::DescriptionBank bank_;
    enc::VisualEncoder visual_;
    enc::TextEncoder text_;
    dec::HoiDecoder decoder_;
    enc::ContextTokens ctx_;
    num::Tensor alpha_hoi_;
    num::Tensor alpha_b_;
};

// Loads the bank and token list named by the config against `vocab`.
Model make_model(const RunConfig& config, const sem::Vocabulary& vocab);

struct StepRecord {
    std::size_t step = 0;  // 1-based
    std::size_t epoch = 0;
    loss::LossReport report;  // averaged over the batch

    nlohmann::json to_json() const;
};

// One matched pair, kept for the level-distance agreement statistic.
struct MatchRecord {
    std::size_t step = 0;
    std::size_t level_pos = 0;
    double g = 0.0;
};

// Among final-epoch pairs whose ground truth is in the small bucket, the
// fraction matched to a prediction from the lowest level. nullopt when no
// such pair exists.
std::optional<double> agreement_statistic(const std::vector<MatchRecord>& matches, std::size_t from_step);

struct TrainOptions {
    std::optional<std::filesystem::path> resume_from;
    bool write_files = true;
    // Called before each step's forward pass; lets tests perturb the model.
    std::function<void(Model&, std::size_t step)> before_step;
};

struct TrainResult {
    std::vector<StepRecord> log;
    std::vector<MatchRecord> matches;
    std::optional<double> agreement;
    std::uint64_t frozen_hash_before = 0;
    std::uint64_t frozen_hash_after = 0;
    std::filesystem::path checkpoint;
    num::ArrayContainer state;  // final checkpoint contents
};

// Frozen feature maps of every level, one entry per scene.
std::vector<std::vector<num::Tensor>> encode_scenes(const enc::VisualEncoder& visual,
                                                    const std::vector<synth::SceneRecord>& scenes);

TrainResult train(Model& model, const synth::Dataset& data, const TrainOptions& options = {});
// Loads the dataset from config.data_dir and writes into config.out_dir.
TrainResult train(const RunConfig& config, const TrainOptions& options = {});

num::ArrayContainer make_checkpoint(const Model& model, const num::AdamW* optimizer, std::size_t step);
// Restores learnable values; throws ShapeError when shapes disagree with the model.
void load_parameters(Model& model, const num::ArrayContainer& ckpt);
// Config stored in a checkpoint.
RunConfig checkpoint_config(const num::ArrayContainer& ckpt);

// One candidate per decoder row, scored s * c^gamma with s the sigmoid of the
// best class logit; the top_k highest per image are kept.
std::vector<eval::Detection> infer(const Model& model, const std::vector<synth::SceneRecord>& scenes);
std::vector<eval::Detection> infer(const Model& model, const std::vector<synth::SceneRecord>& scenes,
                                   const std::vector<std::vector<num::Tensor>>& maps);

eval::EvalReport evaluate_model(const Model& model, const synth::Dataset& data);

enum class AblationAxis { levels, lambda_d, distance_type, prompts };
AblationAxis parse_axis(const std::string& name);
const char* axis_name(AblationAxis axis);

struct AblationVariant {
    std::string label;
    RunConfig config;
};
std::vector<AblationVariant> ablation_variants(const RunConfig& base, AblationAxis axis);

struct AblationRow {
    std::string label;
    eval::EvalReport report;
    std::optional<double> agreement;
    double final_loss = 0.0;
};

struct AblationReport {
    AblationAxis axis = AblationAxis::levels;
    std::vector<AblationRow> rows;

    nlohmann::json to_json() const;
    // One row per variant with the mAP splits relevant to the axis.
    std::string to_table() const;
};

AblationReport ablate(const RunConfig& base, AblationAxis axis, const synth::Dataset& data);

}  // namespace cmdse::train
