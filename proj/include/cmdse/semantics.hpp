#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "cmdse/error.hpp"
#include "cmdse/numcore/tensor.hpp"

namespace cmdse::sem {

enum class BodyPart { mouth, eye, arm, hand, leg, foot };
inline constexpr std::size_t kNumBodyParts = 6;

std::optional<BodyPart> parse_body_part(std::string_view name);
const char* body_part_name(BodyPart part);

struct Interaction {
    int action = 0;
    int object = 0;
    bool seen = true;
};

// Action set, object set and the (action, object) interaction list.
class Vocabulary {
public:
    Vocabulary() = default;
    Vocabulary(std::vector<std::string> actions, std::vector<std::string> objects,
               std::vector<Interaction> interactions);

    static Vocabulary from_json(const nlohmann::json& j);
    static Vocabulary load(const std::filesystem::path& path);
    nlohmann::json to_json() const;

    std::size_t num_actions() const { return actions_.size(); }
    std::size_t num_objects() const { return objects_.size(); }
    std::size_t num_interactions() const { return interactions_.size(); }

    const std::string& action_name(int id) const { return actions_.at(static_cast<std::size_t>(id)); }
    const std::string& object_name(int id) const { return objects_.at(static_cast<std::size_t>(id)); }
    const Interaction& interaction(int id) const { return interactions_.at(static_cast<std::size_t>(id)); }
    const std::vector<Interaction>& interactions() const { return interactions_; }

    int action_id(std::string_view name) const;
    int object_id(std::string_view name) const;
    std::optional<int> find_interaction(int action, int object) const;
    // Throws NotFoundError when the pair is not in the vocabulary.
    int interaction_id(int action, int object) const;

    std::vector<int> seen_ids() const;
    std::vector<int> unseen_ids() const;
    void set_seen(int id, bool seen) { interactions_.at(static_cast<std::size_t>(id)).seen = seen; }

private:
    std::vector<std::string> actions_;
    std::vector<std::string> objects_;
    std::vector<Interaction> interactions_;
};

struct Description {
    std::vector<BodyPart> body_parts;
    std::string text;

    bool operator==(const Description&) const = default;
};

// One validated description per interaction id.
class DescriptionBank {
public:
    DescriptionBank() = default;

    // Validates full coverage of `vocab`; errors name the offending id or value.
    static DescriptionBank from_json(const nlohmann::json& j, const Vocabulary& vocab);
    static DescriptionBank load(const std::filesystem::path& path, const Vocabulary& vocab);
    nlohmann::json to_json(const Vocabulary& vocab) const;

    std::size_t size() const { return entries_.size(); }
    const Description& at(int interaction_id) const;
    // FNV-1a over the texts; identifies bank content for caching.
    std::uint64_t content_hash() const;

private:
    std::vector<Description> entries_;
};

class ProviderError : public Error {
public:
    enum class Kind { not_found, failure };
    ProviderError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

// Source of body-part state descriptions. Implementations must be
// deterministic within a run and report failures as ProviderError.
class DescriptionProvider {
public:
    virtual ~DescriptionProvider() = default;
    virtual Description describe(std::string_view action, std::string_view object) const = 0;
};

class BankDescriptionProvider final : public DescriptionProvider {
public:
    BankDescriptionProvider(const Vocabulary& vocab, const DescriptionBank& bank) : vocab_(vocab), bank_(bank) {}
    Description describe(std::string_view action, std::string_view object) const override;

private:
    const Vocabulary& vocab_;
    const DescriptionBank& bank_;
};

// Builds a bank by querying `provider` for every interaction of `vocab`.
DescriptionBank collect_descriptions(const DescriptionProvider& provider, const Vocabulary& vocab);

// Name embeddings, description embeddings and their learnable fusion weights.
struct TextBank {
    num::Tensor t_hoi;      // [N, C_t], rebuilt from context tokens every step
    num::Tensor t_b;        // [N, C_t], constant
    num::Tensor alpha_hoi;  // scalar
    num::Tensor alpha_b;    // scalar

    std::size_t num_classes() const { return t_hoi.shape()[0]; }
};

inline constexpr double kAlphaHoiInit = 1.0;
inline constexpr double kAlphaBInit = 0.5;

// p = alpha_hoi * h T_hoi^T + alpha_b * h T_b^T for each row of h [R, C_t].
num::Tensor fuse_logits(const num::Tensor& h, const TextBank& bank);

}  // namespace cmdse::sem
