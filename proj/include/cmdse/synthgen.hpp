#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "json.hpp"

#include "cmdse/encoders.hpp"
#include "cmdse/evalkit.hpp"
#include "cmdse/matching.hpp"
#include "cmdse/semantics.hpp"

namespace cmdse::synth {

struct GeneratorSpec {
    std::size_t image_size = 32;
    std::size_t train_scenes = 400;
    std::size_t test_scenes = 100;
    std::size_t min_hois = 1;
    std::size_t max_hois = 3;
    // Bimodal H-O distance: near ~ U[near_low, near_high], far ~ U[far_low, far_high].
    double near_low = 0.05;
    double near_high = 0.3;
    double far_low = 0.7;
    double far_high = 1.0;
    double near_weight = 0.5;
    double unseen_fraction = 0.2;

    static GeneratorSpec from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
    // Throws ValidationError on inconsistent settings.
    void validate() const;
};

struct SceneRecord {
    std::uint64_t image_id = 0;
    enc::Image image;
    std::vector<match::GroundTruthHoi> hois;
    // Distance the sampler drew for each interaction, before pixel snapping.
    std::vector<double> drawn_distance;
    std::uint64_t seed = 0;

    bool operator==(const SceneRecord&) const = default;
};

struct Split {
    std::vector<SceneRecord> scenes;

    bool operator==(const Split&) const = default;
    std::vector<eval::ImageAnnotations> annotations() const;
    // Ground-truth instances per interaction id.
    std::vector<std::size_t> interaction_counts(std::size_t num_interactions) const;
};

struct Dataset {
    sem::Vocabulary vocab;  // seen flags mark the held-out interactions
    GeneratorSpec spec;
    std::uint64_t seed = 0;
    Split train;
    Split test;
};

// Ids of the held-out interactions: round(unseen_fraction * N) of them.
std::vector<int> choose_unseen(std::size_t num_interactions, double unseen_fraction, std::uint64_t seed);

// Training scenes draw only seen interactions; test scenes draw from all.
Dataset generate(const GeneratorSpec& spec, const sem::Vocabulary& vocab, std::uint64_t seed);

// Pure function of (spec, allowed interactions, seed, index).
SceneRecord generate_scene(const GeneratorSpec& spec, const sem::Vocabulary& vocab, const std::vector<int>& allowed,
                           std::uint64_t seed, std::uint64_t image_id, std::uint64_t stream);

// Base colour of the human texture for an action, and of the object texture for an object.
std::array<double, 3> action_colour(int action);
std::array<double, 3> object_colour(int object);

// Writes <dir>/<name>.jsonl, <name>.bin (little-endian float32 pixels) and <name>.manifest.json.
void export_split(const Split& split, const std::filesystem::path& dir, const std::string& name);
// Malformed annotations raise ParseError with the line number and byte offset;
// a short image container raises ParseError with the offset where data ran out.
Split import_split(const std::filesystem::path& dir, const std::string& name, const sem::Vocabulary& vocab);

void save_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace cmdse::synth
