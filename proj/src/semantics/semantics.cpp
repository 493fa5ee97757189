#include "cmdse/semantics.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <set>

#include "cmdse/numcore/ops.hpp"

namespace cmdse::sem {

namespace {

constexpr std::array<const char*, kNumBodyParts> kBodyPartNames = {"mouth", "eye", "arm", "hand", "leg", "foot"};

nlohmann::json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw NotFoundError("cannot open '" + path.string() + "'");
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

}  // namespace

std::optional<BodyPart> parse_body_part(std::string_view name) {
    for (std::size_t i = 0; i < kBodyPartNames.size(); ++i)
        if (name == kBodyPartNames[i]) return static_cast<BodyPart>(i);
    return std::nullopt;
}

const char* body_part_name(BodyPart part) { return kBodyPartNames[static_cast<std::size_t>(part)]; }

Vocabulary::Vocabulary(std::vector<std::string> actions, std::vector<std::string> objects,
                       std::vector<Interaction> interactions)
    : actions_(std::move(actions)), objects_(std::move(objects)), interactions_(std::move(interactions)) {
    std::set<std::pair<int, int>> seen_pairs;
    for (std::size_t i = 0; i < interactions_.size(); ++i) {
        const auto& it = interactions_[i];
        if (it.action < 0 || static_cast<std::size_t>(it.action) >= actions_.size() || it.object < 0 ||
            static_cast<std::size_t>(it.object) >= objects_.size()) {
            throw ValidationError("interaction " + std::to_string(i) + " references an out-of-range action/object id");
        }
        if (!seen_pairs.insert({it.action, it.object}).second) {
            throw ValidationError("interaction " + std::to_string(i) + " duplicates (" + actions_[it.action] + ", " +
                                  objects_[it.object] + ")");
        }
    }
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
    try {
        auto actions = j.at("actions").get<std::vector<std::string>>();
        auto objects = j.at("objects").get<std::vector<std::string>>();
        auto index_of = [](const std::vector<std::string>& names, const std::string& n, const char* kind) {
            auto it = std::find(names.begin(), names.end(), n);
            if (it == names.end()) throw ValidationError(std::string("unknown ") + kind + " '" + n + "'");
            return static_cast<int>(it - names.begin());
        };
        std::vector<Interaction> interactions;
        for (const auto& r : j.at("interactions")) {
            Interaction it;
            it.action = index_of(actions, r.at("action").get<std::string>(), "action");
            it.object = index_of(objects, r.at("object").get<std::string>(), "object");
            it.seen = r.value("seen", true);
            interactions.push_back(it);
        }
        return Vocabulary(std::move(actions), std::move(objects), std::move(interactions));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("vocabulary: ") + e.what());
    }
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) { return from_json(read_json(path)); }

nlohmann::json Vocabulary::to_json() const {
    nlohmann::json j;
    j["actions"] = actions_;
    j["objects"] = objects_;
    j["interactions"] = nlohmann::json::array();
    for (const auto& it : interactions_) {
        j["interactions"].push_back(
            {{"action", actions_[it.action]}, {"object", objects_[it.object]}, {"seen", it.seen}});
    }
    return j;
}

int Vocabulary::action_id(std::string_view name) const {
    auto it = std::find(actions_.begin(), actions_.end(), name);
    if (it == actions_.end()) throw NotFoundError("unknown action '" + std::string(name) + "'");
    return static_cast<int>(it - actions_.begin());
}

int Vocabulary::object_id(std::string_view name) const {
    auto it = std::find(objects_.begin(), objects_.end(), name);
    if (it == objects_.end()) throw NotFoundError("unknown object '" + std::string(name) + "'");
    return static_cast<int>(it - objects_.begin());
}

std::optional<int> Vocabulary::find_interaction(int action, int object) const {
    for (std::size_t i = 0; i < interactions_.size(); ++i)
        if (interactions_[i].action == action && interactions_[i].object == object) return static_cast<int>(i);
    return std::nullopt;
}

int Vocabulary::interaction_id(int action, int object) const {
    if (auto id = find_interaction(action, object)) return *id;
    throw NotFoundError("no interaction for action " + std::to_string(action) + ", object " + std::to_string(object));
}

std::vector<int> Vocabulary::seen_ids() const {
    std::vector<int> ids;
    for (std::size_t i = 0; i < interactions_.size(); ++i)
        if (interactions_[i].seen) ids.push_back(static_cast<int>(i));
    return ids;
}

std::vector<int> Vocabulary::unseen_ids() const {
    std::vector<int> ids;
    for (std::size_t i = 0; i < interactions_.size(); ++i)
        if (!interactions_[i].seen) ids.push_back(static_cast<int>(i));
    return ids;
}

DescriptionBank DescriptionBank::from_json(const nlohmann::json& j, const Vocabulary& vocab) {
    if (!j.is_array()) throw ParseError("description bank: expected a JSON array of records");
    std::vector<std::optional<Description>> slots(vocab.num_interactions());
    for (std::size_t r = 0; r < j.size(); ++r) {
        const auto& rec = j[r];
        std::string action, object, text;
        std::vector<std::string> parts;
        try {
            action = rec.at("action").get<std::string>();
            object = rec.at("object").get<std::string>();
            parts = rec.at("body_parts").get<std::vector<std::string>>();
            text = rec.at("description").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("description bank record " + std::to_string(r) + ": " + e.what());
        }
        const int id = vocab.interaction_id(vocab.action_id(action), vocab.object_id(object));
        if (slots[id]) throw ValidationError("description bank: duplicate entry for interaction id " + std::to_string(id));
        Description d;
        if (parts.empty()) {
            throw ValidationError("description bank: interaction id " + std::to_string(id) + " lists no body parts");
        }
        for (const auto& p : parts) {
            auto bp = parse_body_part(p);
            if (!bp) {
                throw ValidationError("description bank: interaction id " + std::to_string(id) +
                                      " uses unknown body part '" + p + "'");
            }
            d.body_parts.push_back(*bp);
        }
        if (text.find_first_not_of(" \t\n") == std::string::npos) {
            throw ValidationError("description bank: interaction id " + std::to_string(id) + " has an empty description");
        }
        d.text = std::move(text);
        slots[id] = std::move(d);
    }
    DescriptionBank bank;
    for (std::size_t i = 0; i < slots.size(); ++i) {
        if (!slots[i]) throw ValidationError("description bank: missing interaction id " + std::to_string(i));
        bank.entries_.push_back(std::move(*slots[i]));
    }
    return bank;
}

DescriptionBank DescriptionBank::load(const std::filesystem::path& path, const Vocabulary& vocab) {
    return from_json(read_json(path), vocab);
}

nlohmann::json DescriptionBank::to_json(const Vocabulary& vocab) const {
    nlohmann::json j = nlohmann::json::array();
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        const auto& it = vocab.interaction(static_cast<int>(i));
        std::vector<std::string> parts;
        for (auto p : entries_[i].body_parts) parts.emplace_back(body_part_name(p));
        j.push_back({{"action", vocab.action_name(it.action)},
                     {"object", vocab.object_name(it.object)},
                     {"body_parts", parts},
                     {"description", entries_[i].text}});
    }
    return j;
}

const Description& DescriptionBank::at(int interaction_id) const {
    if (interaction_id < 0 || static_cast<std::size_t>(interaction_id) >= entries_.size()) {
        throw NotFoundError("description bank has no interaction id " + std::to_string(interaction_id));
    }
    return entries_[static_cast<std::size_t>(interaction_id)];
}

std::uint64_t DescriptionBank::content_hash() const {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](unsigned char c) {
        h ^= c;
        h *= 1099511628211ull;
    };
    for (const auto& d : entries_) {
        for (auto p : d.body_parts) mix(static_cast<unsigned char>(p));
        mix(0xFF);
        for (char c : d.text) mix(static_cast<unsigned char>(c));
        mix(0);
    }
    return h;
}

Description BankDescriptionProvider::describe(std::string_view action, std::string_view object) const {
    try {
        const int id = vocab_.interaction_id(vocab_.action_id(action), vocab_.object_id(object));
        return bank_.at(id);
    } catch (const NotFoundError& e) {
        throw ProviderError(ProviderError::Kind::not_found,
                            "no description for (" + std::string(action) + ", " + std::string(object) + "): " + e.what());
    }
}

DescriptionBank collect_descriptions(const DescriptionProvider& provider, const Vocabulary& vocab) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& it : vocab.interactions()) {
        const auto& a = vocab.action_name(it.action);
        const auto& o = vocab.object_name(it.object);
        Description d = provider.describe(a, o);
        std::vector<std::string> parts;
        for (auto p : d.body_parts) parts.emplace_back(body_part_name(p));
        j.push_back({{"action", a}, {"object", o}, {"body_parts", parts}, {"description", d.text}});
    }
    return DescriptionBank::from_json(j, vocab);
}

num::Tensor fuse_logits(const num::Tensor& h, const TextBank& bank) {
    if (h.dim() != 2 || h.shape()[1] != bank.t_hoi.shape()[1] || bank.t_b.shape() != bank.t_hoi.shape()) {
        throw ShapeError("fuse_logits: hidden " + num::shape_str(h.shape()) + " vs T_hoi " +
                         num::shape_str(bank.t_hoi.shape()) + " / T_b " + num::shape_str(bank.t_b.shape()));
    }
    using namespace num;
    return add(mul(bank.alpha_hoi, matmul(h, transpose(bank.t_hoi))),
               mul(bank.alpha_b, matmul(h, transpose(bank.t_b))));
}

}  // namespace cmdse::sem
