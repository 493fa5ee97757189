#include "doctest.h"

#include <cmath>

#include "cmdse/decoder.hpp"
#include "cmdse/encoders.hpp"
#include "support/gradcheck.hpp"

using namespace cmdse;

namespace {

struct Fixture {
    enc::VisualEncoder visual{enc::VisualEncoderConfig{}};
    std::vector<num::Tensor> maps;
    sem::TextBank text;

    explicit Fixture(std::uint64_t seed, std::size_t classes = 6) {
        num::Rng rng(seed);
        auto img = enc::Image::blank(32, 32);
        for (auto& p : img.pixels) p = rng.uniform();
        maps = visual.encode_image(img);
        text.t_hoi = num::l2_normalize(num::randn({classes, 32}, rng, 1.0));
        text.t_b = num::l2_normalize(num::randn({classes, 32}, rng, 1.0));
        text.alpha_hoi = num::Tensor::scalar(sem::kAlphaHoiInit, true);
        text.alpha_b = num::Tensor::scalar(sem::kAlphaBInit, true);
    }
};

dec::DecoderConfig config_with(std::size_t queries) {
    dec::DecoderConfig cfg;
    cfg.num_queries = queries;
    return cfg;
}

void zero_out(num::Tensor& t) {
    for (auto& v : t.mutable_data()) v = 0.0;
}

}  // namespace

TEST_CASE("levels {6,9,12} with 10 queries give 30 predictions") {
    Fixture fx(1);
    dec::HoiDecoder decoder(config_with(10));
    auto out = decoder.decode(fx.maps, {6, 9, 12}, fx.text);
    CHECK(out.rows() == 30);
    CHECK(out.boxes.shape() == num::Shape{30, 9});
    CHECK(out.logits.shape() == num::Shape{30, 6});
    auto set = dec::PredictionSet::from_output(out);
    REQUIRE(set.predictions.size() == 30);
    CHECK(set.predictions[0].level_index == 0);
    CHECK(set.predictions[29].level_index == 2);
    CHECK(set.predictions[10].level_value == doctest::Approx(0.5));
}

TEST_CASE("level {12} with one query gives a single prediction") {
    Fixture fx(2);
    dec::HoiDecoder decoder(config_with(1));
    auto set = dec::PredictionSet::from_output(decoder.decode(fx.maps, {12}, fx.text));
    REQUIRE(set.predictions.size() == 1);
    CHECK(set.predictions[0].level_value == doctest::Approx(0.5));
}

TEST_CASE("bad level sets are rejected") {
    Fixture fx(3);
    dec::HoiDecoder decoder({});
    CHECK_THROWS_AS(decoder.decode(fx.maps, {6, 13}, fx.text), NotFoundError);
    CHECK_THROWS_AS(decoder.decode(fx.maps, {0}, fx.text), NotFoundError);
    CHECK_THROWS_AS(decoder.decode(fx.maps, {9, 6}, fx.text), ValidationError);
    CHECK_THROWS_AS(decoder.decode(fx.maps, {}, fx.text), ValidationError);
}

TEST_CASE("permuting queries permutes predictions at every level") {
    Fixture fx(4);
    dec::HoiDecoder a(config_with(5));
    dec::HoiDecoder b(config_with(5));
    const std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
    b.queries = num::index_rows(a.queries.detach(), perm);
    auto oa = a.decode(fx.maps, {6, 9, 12}, fx.text);
    auto ob = b.decode(fx.maps, {6, 9, 12}, fx.text);
    for (std::size_t level = 0; level < 3; ++level)
        for (std::size_t q = 0; q < 5; ++q)
            for (std::size_t c = 0; c < 9; ++c) {
                CHECK(ob.boxes.at(level * 5 + q, c) ==
                      doctest::Approx(oa.boxes.at(level * 5 + perm[q], c)).epsilon(1e-12));
            }
}

TEST_CASE("decoder weights are shared across levels") {
    Fixture fx(5);
    dec::HoiDecoder decoder({});
    auto before = decoder.decode(fx.maps, {6, 9, 12}, fx.text).boxes;
    decoder.layers[2].ffn1.weight.mutable_data()[7] += 0.5;
    auto after = decoder.decode(fx.maps, {6, 9, 12}, fx.text).boxes;
    for (std::size_t level = 0; level < 3; ++level) {
        bool changed = false;
        for (std::size_t r = level * 10; r < level * 10 + 10; ++r)
            for (std::size_t c = 0; c < 9; ++c) changed = changed || before.at(r, c) != after.at(r, c);
        CHECK(changed);
    }
}

TEST_CASE("decode is deterministic") {
    Fixture fx(6);
    dec::HoiDecoder a({}), b({});
    CHECK(a.decode(fx.maps, {6, 9, 12}, fx.text).logits.values() ==
          b.decode(fx.maps, {6, 9, 12}, fx.text).logits.values());
}

TEST_CASE("box head with zero parameters outputs one half everywhere") {
    dec::HoiDecoder decoder({});
    zero_out(decoder.box_fc1.weight);
    zero_out(decoder.box_fc1.bias);
    zero_out(decoder.box_fc2.weight);
    zero_out(decoder.box_fc2.bias);
    num::Rng rng(7);
    auto out = decoder.box_head(num::randn({4, 32}, rng, 1.0));
    for (double v : out.data()) CHECK(v == 0.5);
}

TEST_CASE("box head outputs stay inside the unit square") {
    dec::HoiDecoder decoder({});
    num::Rng rng(8);
    auto out = decoder.box_head(num::randn({1000, 32}, rng, 3.0));
    for (double v : out.data()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("box head and cls head gradients match finite differences") {
    dec::HoiDecoder decoder({});
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        num::Rng rng(seed);
        auto h = num::randn({3, 32}, rng, 1.0, true);
        auto wb = num::randn({3, 9}, rng, 1.0);
        auto wc = num::randn({3, 32}, rng, 1.0);
        auto box_obj = [&] { return num::sum(num::mul(decoder.box_head(h), wb)); };
        auto rb = testing::check_all_elements({h, decoder.box_fc1.weight, decoder.box_fc1.bias, decoder.box_fc2.weight,
                                               decoder.box_fc2.bias},
                                              box_obj);
        CHECK(rb.max_rel_error < 1e-4);
        auto cls_obj = [&] { return num::sum(num::mul(decoder.cls_head(h), wc)); };
        auto rc = testing::check_all_elements({h, decoder.cls_proj.weight, decoder.cls_proj.bias}, cls_obj);
        CHECK(rc.max_rel_error < 1e-4);
    }
}

TEST_CASE("cls head output has unit norm") {
    dec::HoiDecoder decoder({});
    num::Rng rng(9);
    auto out = decoder.cls_head(num::randn({50, 32}, rng, 2.0));
    for (std::size_t r = 0; r < 50; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < 32; ++c) s += out.at(r, c) * out.at(r, c);
        CHECK(std::fabs(std::sqrt(s) - 1.0) < 1e-10);
    }
}

TEST_CASE("identity cls projection preserves the argmax direction") {
    dec::HoiDecoder decoder({});
    auto w = decoder.cls_proj.weight.mutable_data();
    for (std::size_t i = 0; i < 32; ++i)
        for (std::size_t j = 0; j < 32; ++j) w[i * 32 + j] = i == j ? 1.0 : 0.0;
    zero_out(decoder.cls_proj.bias);
    num::Rng rng(10);
    auto h = num::randn({20, 32}, rng, 1.0);
    auto out = decoder.cls_head(h);
    for (std::size_t r = 0; r < 20; ++r) {
        std::size_t ah = 0, ao = 0;
        for (std::size_t c = 1; c < 32; ++c) {
            if (h.at(r, c) > h.at(r, ah)) ah = c;
            if (out.at(r, c) > out.at(r, ao)) ao = c;
        }
        CHECK(ah == ao);
    }
}

TEST_CASE("normalized level values") {
    CHECK(dec::normalized_level(0, 3) == 0.25);
    CHECK(dec::normalized_level(1, 3) == 0.5);
    CHECK(dec::normalized_level(2, 3) == 0.75);
    CHECK(dec::normalized_level(0, 1) == 0.5);
    CHECK_THROWS_AS(dec::normalized_level(3, 3), ValidationError);
    for (std::size_t k = 1; k <= 12; ++k) {
        double prev = 0.0;
        for (std::size_t pos = 0; pos < k; ++pos) {
            const double lv = dec::normalized_level(pos, k);
            CHECK(lv > prev);
            CHECK(lv < 1.0);
            prev = lv;
        }
    }
}
