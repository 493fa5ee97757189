#include "doctest.h"

#include <cmath>

#include "cmdse/numcore/ops.hpp"
#include "cmdse/numcore/random.hpp"
#include "cmdse/semantics.hpp"
#include "support/gradcheck.hpp"

using namespace cmdse;
using nlohmann::json;

namespace {

sem::Vocabulary small_vocab(int n) {
    std::vector<std::string> actions, objects = {"ball"};
    std::vector<sem::Interaction> inter;
    for (int i = 0; i < n; ++i) {
        actions.push_back("act" + std::to_string(i));
        inter.push_back({i, 0, true});
    }
    return sem::Vocabulary(actions, objects, inter);
}

json small_bank_json(int n) {
    json j = json::array();
    for (int i = 0; i < n; ++i)
        j.push_back({{"action", "act" + std::to_string(i)},
                     {"object", "ball"},
                     {"body_parts", {"hand"}},
                     {"description", "hand holding " + std::to_string(i)}});
    return j;
}

sem::TextBank random_bank(num::Rng& rng, std::size_t n, std::size_t c, double ah, double ab) {
    sem::TextBank b;
    b.t_hoi = num::randn({n, c}, rng, 1.0, false);
    b.t_b = num::randn({n, c}, rng, 1.0, false);
    b.alpha_hoi = num::Tensor::scalar(ah, true);
    b.alpha_b = num::Tensor::scalar(ab, true);
    return b;
}

}  // namespace

TEST_CASE("shipped vocabulary and bank load with full coverage") {
    auto vocab = sem::Vocabulary::load(CMDSE_DATA_DIR "/vocab.json");
    CHECK(vocab.num_actions() == 10);
    CHECK(vocab.num_objects() == 8);
    auto bank = sem::DescriptionBank::load(CMDSE_DATA_DIR "/descriptions.json", vocab);
    CHECK(bank.size() == vocab.num_interactions());
    const int kick_ball = vocab.interaction_id(vocab.action_id("kick"), vocab.object_id("ball"));
    CHECK(bank.at(kick_ball).text.rfind("leg extended, foot forward", 0) == 0);
}

TEST_CASE("vocabulary rejects duplicate and out-of-range pairs") {
    CHECK_THROWS_AS(sem::Vocabulary({"a"}, {"o"}, {{0, 0, true}, {0, 0, false}}), ValidationError);
    CHECK_THROWS_AS(sem::Vocabulary({"a"}, {"o"}, {{1, 0, true}}), ValidationError);
    auto v = sem::Vocabulary::from_json(sem::Vocabulary({"a", "b"}, {"o"}, {{0, 0, true}, {1, 0, false}}).to_json());
    CHECK(v.seen_ids() == std::vector<int>{0});
    CHECK(v.unseen_ids() == std::vector<int>{1});
}

TEST_CASE("bank covering all ids loads") {
    auto vocab = small_vocab(5);
    auto bank = sem::DescriptionBank::from_json(small_bank_json(5), vocab);
    CHECK(bank.size() == 5);
    CHECK(bank.at(2).text == "hand holding 2");
}

TEST_CASE("bank missing id 3 names it") {
    auto vocab = small_vocab(5);
    auto j = small_bank_json(5);
    j.erase(3);
    try {
        sem::DescriptionBank::from_json(j, vocab);
        FAIL("expected a coverage error");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("id 3") != std::string::npos);
    }
}

TEST_CASE("bank rejects unknown body part and empty text") {
    auto vocab = small_vocab(2);
    auto j = small_bank_json(2);
    j[1]["body_parts"] = {"tail"};
    try {
        sem::DescriptionBank::from_json(j, vocab);
        FAIL("expected rejection");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("tail") != std::string::npos);
    }
    j = small_bank_json(2);
    j[0]["description"] = "  ";
    CHECK_THROWS_AS(sem::DescriptionBank::from_json(j, vocab), ValidationError);
    j = small_bank_json(2);
    j[0]["body_parts"] = json::array();
    CHECK_THROWS_AS(sem::DescriptionBank::from_json(j, vocab), ValidationError);
}

TEST_CASE("bank provider is a verbatim, deterministic pass-through") {
    auto vocab = sem::Vocabulary::load(CMDSE_DATA_DIR "/vocab.json");
    auto bank = sem::DescriptionBank::load(CMDSE_DATA_DIR "/descriptions.json", vocab);
    sem::BankDescriptionProvider provider(vocab, bank);
    const int id = vocab.interaction_id(vocab.action_id("drink"), vocab.object_id("cup"));
    auto a = provider.describe("drink", "cup");
    CHECK(a == bank.at(id));
    CHECK(provider.describe("drink", "cup") == a);
    try {
        provider.describe("kick", "horse-shoe");
        FAIL("expected provider error");
    } catch (const sem::ProviderError& e) {
        CHECK(e.kind() == sem::ProviderError::Kind::not_found);
    }
    auto rebuilt = sem::collect_descriptions(provider, vocab);
    CHECK(rebuilt.content_hash() == bank.content_hash());
}

TEST_CASE("fuse_logits with alpha_b = 0 equals the name-only classifier") {
    num::Rng rng(7);
    auto b = random_bank(rng, 6, 4, 1.3, 0.0);
    auto h = num::randn({3, 4}, rng, 1.0, false);
    auto p = sem::fuse_logits(h, b);
    auto ref = num::scale(num::matmul(h, num::transpose(b.t_hoi)), 1.3);
    for (std::size_t i = 0; i < p.numel(); ++i) CHECK(p.data()[i] == ref.data()[i]);
}

TEST_CASE("fuse_logits with equal banks and unit alphas doubles") {
    num::Rng rng(8);
    auto b = random_bank(rng, 5, 4, 1.0, 1.0);
    b.t_b = b.t_hoi;
    auto h = num::randn({2, 4}, rng, 1.0, false);
    auto p = sem::fuse_logits(h, b);
    auto ref = num::matmul(h, num::transpose(b.t_hoi));
    for (std::size_t i = 0; i < p.numel(); ++i) CHECK(p.data()[i] == doctest::Approx(2.0 * ref.data()[i]).epsilon(1e-14));
}

TEST_CASE("fuse_logits argmax invariant to positive rescaling of h") {
    num::Rng rng(9);
    auto b = random_bank(rng, 7, 5, 1.0, 0.5);
    for (int trial = 0; trial < 50; ++trial) {
        auto h = num::randn({1, 5}, rng, 1.0, false);
        auto p1 = sem::fuse_logits(h, b).values();
        auto p2 = sem::fuse_logits(num::scale(h, 3.7), b).values();
        CHECK(std::max_element(p1.begin(), p1.end()) - p1.begin() ==
              std::max_element(p2.begin(), p2.end()) - p2.begin());
    }
}

TEST_CASE("fuse_logits gradient w.r.t. alphas and h matches finite differences") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        num::Rng rng(seed);
        auto b = random_bank(rng, 6, 4, 1.0, 0.5);
        auto h = num::randn({3, 4}, rng, 1.0, true);
        auto w = num::randn({3, 6}, rng, 1.0, false);
        auto objective = [&] { return num::sum(num::mul(num::sigmoid(sem::fuse_logits(h, b)), w)); };
        auto r = testing::check_all_elements({b.alpha_hoi, b.alpha_b, h}, objective);
        CHECK(r.max_rel_error < 1e-6);
    }
}

TEST_CASE("fuse_logits dimension mismatch is a shape error") {
    num::Rng rng(1);
    auto b = random_bank(rng, 4, 4, 1.0, 0.5);
    CHECK_THROWS_AS(sem::fuse_logits(num::Tensor::zeros({2, 3}), b), ShapeError);
}
