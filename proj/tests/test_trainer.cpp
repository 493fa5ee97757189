#include "doctest.h"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <sstream>

#include "cmdse/error.hpp"
#include "cmdse/trainer.hpp"

using namespace cmdse;

namespace {

sem::Vocabulary data_vocab() { return sem::Vocabulary::load(std::string(CMDSE_DATA_DIR) + "/vocab.json"); }

std::filesystem::path scratch(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("cmdse_test_trainer_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

const synth::Dataset& small_data() {
    static const synth::Dataset data = [] {
        synth::GeneratorSpec spec;
        spec.train_scenes = 24;
        spec.test_scenes = 6;
        return synth::generate(spec, data_vocab(), 7);
    }();
    return data;
}

train::RunConfig quick_config(std::size_t steps, const std::filesystem::path& out) {
    auto c = train::RunConfig::toy();
    c.steps = steps;
    c.batch_size = 4;
    c.num_queries = 3;
    c.decoder_layers = 2;
    c.out_dir = out.string();
    return c;
}

num::Tensor find_param(const train::Model& model, const std::string& suffix) {
    for (const auto& p : model.learnable()) {
        if (p.name.size() >= suffix.size() && p.name.compare(p.name.size() - suffix.size(), suffix.size(), suffix) == 0)
            return p.tensor;
    }
    FAIL("no parameter ending in " << suffix);
    return {};
}

struct EnvGuard {
    explicit EnvGuard(const char* value) {
        if (value) setenv("CMDSE_SEED", value, 1);
        else unsetenv("CMDSE_SEED");
    }
    ~EnvGuard() { unsetenv("CMDSE_SEED"); }
};

}  // namespace

TEST_CASE("paper preset carries the stated hyperparameters") {
    const auto c = train::RunConfig::paper();
    CHECK(c.weights.box == 5.0);
    CHECK(c.weights.iou == 2.0);
    CHECK(c.weights.cls == 5.0);
    CHECK(c.weights.d == 5.0);
    CHECK(c.gamma == 2.0);
    CHECK(c.decoder_layers == 4);
    CHECK(c.lr == 1e-4);
    CHECK(c.levels == std::vector<std::size_t>{6, 9, 12});
    CHECK(c.num_queries == 10);
    CHECK(c.batch_size == 128);
    CHECK(c.epochs == 80);
    CHECK(c.top_k == 20);

    const auto t = train::RunConfig::toy();
    CHECK(t.batch_size == 8);
    CHECK(t.lr == c.lr);
    CHECK_THROWS_AS(train::RunConfig::preset_named("huge"), ValidationError);
}

TEST_CASE("run config JSON round trip and validation") {
    auto c = train::RunConfig::toy();
    c.weights.d = 0.0;
    c.levels = {3, 6, 9, 12};
    c.conditional.distance = match::DistanceType::absolute;
    c.conditional.order = match::LevelOrder::low_large;
    c.use_descriptions = false;
    c.seed = 123456789012345ULL;
    const auto back = train::RunConfig::from_json(c.to_json());
    CHECK(back.to_json() == c.to_json());

    // Missing fields take the preset default.
    const auto partial = train::RunConfig::from_json({{"preset", "toy"}, {"steps", 3}});
    CHECK(partial.steps == 3);
    CHECK(partial.batch_size == 8);
    CHECK(train::RunConfig::from_json(nlohmann::json::object()).batch_size == 128);

    CHECK_THROWS_AS(train::RunConfig::from_json({{"learning_rate", 0.1}}), ValidationError);
    CHECK_THROWS_AS(train::RunConfig::from_json({{"lr", "fast"}}), ParseError);
    CHECK_THROWS_AS(train::RunConfig::from_json({{"lr", -1.0}}), ValidationError);
    CHECK_THROWS_AS(train::RunConfig::from_json({{"levels", {6, 13}}}), ValidationError);
    CHECK_THROWS_AS(train::RunConfig::from_json({{"gamma", 1.0}}), ValidationError);
    CHECK_THROWS_AS(train::RunConfig::from_json({{"distance_type", "manhattan"}}), ValidationError);
    CHECK_THROWS_AS(train::RunConfig::from_json(nlohmann::json::array()), ParseError);
    CHECK_THROWS_AS(train::RunConfig::load("/nonexistent/run.json"), NotFoundError);
}

TEST_CASE("CMDSE_SEED overrides the configured seed") {
    auto c = train::RunConfig::paper();
    {
        EnvGuard env(nullptr);
        train::apply_env_overrides(c);
        CHECK(c.seed == 7);
    }
    {
        EnvGuard env("99");
        train::apply_env_overrides(c);
        CHECK(c.seed == 99);
    }
    {
        EnvGuard env("seven");
        CHECK_THROWS_AS(train::apply_env_overrides(c), ValidationError);
    }
    {
        EnvGuard env("-3");
        CHECK_THROWS_AS(train::apply_env_overrides(c), ValidationError);
    }
}

TEST_CASE("runs differing only in lambda_d share their initialization") {
    auto a = train::RunConfig::paper();
    auto b = a;
    a.weights.d = 0.0;
    b.weights.d = 5.0;
    const auto vocab = data_vocab();
    const auto ma = train::make_model(a, vocab), mb = train::make_model(b, vocab);
    const auto pa = ma.learnable(), pb = mb.learnable();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].name == pb[i].name);
        CHECK(pa[i].tensor.values() == pb[i].tensor.values());
    }

    auto c = a;
    c.seed = 8;
    const auto mc = train::make_model(c, vocab);
    bool any_differs = false;
    const auto pc = mc.learnable();
    for (std::size_t i = 0; i < pa.size(); ++i) any_differs |= pa[i].tensor.values() != pc[i].tensor.values();
    CHECK(any_differs);
}

TEST_CASE("name-only prompts pin alpha_b to zero") {
    auto c = train::RunConfig::paper();
    c.use_descriptions = false;
    const auto model = train::make_model(c, data_vocab());
    for (const auto& p : model.learnable()) CHECK(p.name != "alpha_b");
    const auto bank = model.text_bank();
    CHECK(bank.alpha_b.item() == 0.0);
    CHECK_FALSE(bank.alpha_b.requires_grad());
}

TEST_CASE("agreement statistic counts small-bucket pairs from the lowest level") {
    const std::vector<train::MatchRecord> m = {
        {1, 0, 0.1}, {1, 2, 0.1},                 // before the window
        {5, 0, 0.2}, {5, 0, 0.33}, {6, 1, 0.05},  // small
        {6, 0, 0.5}, {6, 2, 0.9},                 // not small
    };
    const auto a = train::agreement_statistic(m, 5);
    REQUIRE(a.has_value());
    CHECK(*a == doctest::Approx(2.0 / 3.0));
    CHECK(*train::agreement_statistic(m, 1) == doctest::Approx(3.0 / 5.0));
    CHECK_FALSE(train::agreement_statistic({{1, 0, 0.8}}, 1).has_value());
}

TEST_CASE("training keeps frozen encoders intact and writes its artifacts") {
    const auto dir = scratch("artifacts");
    const auto cfg = quick_config(3, dir);
    auto model = train::make_model(cfg, small_data().vocab);
    const auto before = model.learnable().front().tensor.values();
    const auto result = train::train(model, small_data());

    CHECK(result.frozen_hash_before == result.frozen_hash_after);
    CHECK(result.frozen_hash_before == enc::parameter_hash(model.frozen()));
    CHECK(model.learnable().front().tensor.values() != before);
    REQUIRE(result.log.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(result.log[i].step == i + 1);
        CHECK(std::isfinite(result.log[i].report.total));
    }
    // 24 scenes at batch 4 make six steps per epoch.
    CHECK(result.log[2].epoch == 1);

    CHECK(std::filesystem::exists(dir / "config.json"));
    CHECK(std::filesystem::exists(dir / "checkpoint.ckpt"));
    std::istringstream log(slurp(dir / "train_log.jsonl"));
    std::string line;
    std::size_t lines = 0;
    while (std::getline(log, line)) {
        const auto j = nlohmann::json::parse(line);
        CHECK(j.at("step") == ++lines);
        CHECK(j.contains("total"));
    }
    CHECK(lines == 3);

    const auto ckpt = num::read_container(result.checkpoint);
    CHECK(ckpt.meta.at("step") == 3);
    CHECK(ckpt.meta.at("frozen_hash") == result.frozen_hash_before);
    CHECK(train::checkpoint_config(ckpt).to_json() == cfg.to_json());
    for (const auto& a : ckpt.arrays) {
        // Only learnable parameters and their optimizer moments are stored.
        const bool known = a.name.rfind("param/", 0) == 0 || a.name.rfind("adam_m/", 0) == 0 ||
                           a.name.rfind("adam_v/", 0) == 0;
        CHECK(known);
        CHECK(a.name.find("visual") == std::string::npos);
    }
    std::size_t params = 0;
    for (const auto& a : ckpt.arrays) params += a.name.rfind("param/", 0) == 0 ? 1 : 0;
    CHECK(params == model.learnable().size());
}

TEST_CASE("identical configs give bitwise identical logs and checkpoints") {
    const auto dir = scratch("same");
    std::string logs[2], ckpts[2];
    for (int run = 0; run < 2; ++run) {
        auto model = train::make_model(quick_config(4, dir), small_data().vocab);
        train::train(model, small_data());
        logs[run] = slurp(dir / "train_log.jsonl");
        ckpts[run] = slurp(dir / "checkpoint.ckpt");
    }
    CHECK_FALSE(ckpts[0].empty());
    CHECK(logs[0] == logs[1]);
    CHECK(ckpts[0] == ckpts[1]);
}

TEST_CASE("resuming from a checkpoint reproduces the trajectory") {
    const auto full_dir = scratch("resume_full"), part_dir = scratch("resume_part");
    auto cfg = quick_config(8, full_dir);
    cfg.checkpoint_every = 3;
    auto full_model = train::make_model(cfg, small_data().vocab);
    const auto full = train::train(full_model, small_data());
    REQUIRE(std::filesystem::exists(full_dir / "checkpoint_step3.ckpt"));
    std::filesystem::copy_file(full_dir / "train_log.jsonl", part_dir / "train_log.jsonl");

    // The resumed run appends to a log holding the first three steps.
    {
        std::istringstream in(slurp(part_dir / "train_log.jsonl"));
        std::ostringstream head;
        std::string line;
        for (int i = 0; i < 3 && std::getline(in, line); ++i) head << line << '\n';
        std::ofstream(part_dir / "train_log.jsonl", std::ios::binary | std::ios::trunc) << head.str();
    }
    auto part_cfg = cfg;
    part_cfg.out_dir = part_dir.string();
    auto resumed_model = train::make_model(part_cfg, small_data().vocab);
    train::TrainOptions opts;
    opts.resume_from = full_dir / "checkpoint_step3.ckpt";
    const auto resumed = train::train(resumed_model, small_data(), opts);

    REQUIRE(resumed.log.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(resumed.log[i].step == full.log[i + 3].step);
        CHECK(resumed.log[i].to_json().dump() == full.log[i + 3].to_json().dump());
    }
    CHECK(slurp(part_dir / "train_log.jsonl") == slurp(full_dir / "train_log.jsonl"));
    // The stored configs differ in out_dir only; arrays and counters must agree exactly.
    CHECK(resumed.state.meta.at("step") == full.state.meta.at("step"));
    CHECK(resumed.state.meta.at("optimizer_steps") == full.state.meta.at("optimizer_steps"));
    REQUIRE(resumed.state.arrays.size() == full.state.arrays.size());
    for (std::size_t i = 0; i < full.state.arrays.size(); ++i) {
        CHECK(resumed.state.arrays[i].name == full.state.arrays[i].name);
        CHECK(resumed.state.arrays[i].values == full.state.arrays[i].values);
    }
}

TEST_CASE("loading a checkpoint into a differently shaped model fails") {
    const auto dir = scratch("shape");
    auto cfg = quick_config(1, dir);
    auto model = train::make_model(cfg, small_data().vocab);
    const auto ckpt = train::make_checkpoint(model, nullptr, 0);

    auto other_cfg = cfg;
    other_cfg.num_queries = 4;
    auto other = train::make_model(other_cfg, small_data().vocab);
    CHECK_THROWS_AS(train::load_parameters(other, ckpt), ShapeError);

    auto resume_other = train::make_model(other_cfg, small_data().vocab);
    num::write_container(dir / "c.ckpt", train::make_checkpoint(model, nullptr, 0));
    train::TrainOptions opts;
    opts.resume_from = dir / "c.ckpt";
    opts.write_files = false;
    CHECK_THROWS_AS(train::train(resume_other, small_data(), opts), ShapeError);
}

TEST_CASE("a non-finite loss aborts with the step's inputs dumped") {
    const auto dir = scratch("nan");
    auto model = train::make_model(quick_config(5, dir), small_data().vocab);
    train::TrainOptions opts;
    opts.before_step = [](train::Model& m, std::size_t step) {
        if (step == 2) find_param(m, "box_fc2.bias").mutable_data()[1] = std::numeric_limits<double>::quiet_NaN();
    };
    CHECK_THROWS_AS(train::train(model, small_data(), opts), NumericError);
    const auto dump_path = dir / "nan_dump_step2.json";
    REQUIRE(std::filesystem::exists(dump_path));
    const auto dump = nlohmann::json::parse(slurp(dump_path));
    CHECK(dump.at("step") == 2);
    CHECK(dump.at("image_ids").size() >= 1);
    CHECK(dump.contains("param_norms"));
}

TEST_CASE("inference scores, truncation and determinism") {
    const auto dir = scratch("infer");
    auto cfg = quick_config(1, dir);
    cfg.top_k = 5;
    auto model = train::make_model(cfg, small_data().vocab);
    const auto& scenes = small_data().test.scenes;

    const auto dets = train::infer(model, scenes);
    CHECK(dets == train::infer(model, scenes));
    std::map<std::uint64_t, std::size_t> per_image;
    for (const auto& d : dets) {
        ++per_image[d.image_id];
        CHECK(d.score >= 0.0);
        CHECK(d.score <= 1.0);
        CHECK(d.slot < cfg.levels.size() * cfg.num_queries);
    }
    CHECK(per_image.size() == scenes.size());
    for (const auto& [id, n] : per_image) CHECK(n == 5);

    // The kept candidates are the best five of the nine rows.
    auto all_cfg = cfg;
    all_cfg.top_k = 100;
    auto all_model = train::make_model(all_cfg, small_data().vocab);
    const auto all = train::infer(all_model, scenes);
    CHECK(all.size() == 9 * scenes.size());
    for (std::size_t i = 0; i < scenes.size(); ++i)
        for (std::size_t k = 0; k < 5; ++k) CHECK(dets[5 * i + k] == all[9 * i + k]);

    // A confidence head driven to c = 0 annihilates every score.
    auto w = find_param(model, "box_fc2.weight");
    auto b = find_param(model, "box_fc2.bias");
    const std::size_t out_features = w.shape()[1];
    for (std::size_t r = 0; r < w.shape()[0]; ++r) w.mutable_data()[r * out_features] = 0.0;
    b.mutable_data()[0] = -1e4;
    for (const auto& d : train::infer(model, scenes)) CHECK(d.score == 0.0);
}

TEST_CASE("ablation axes and their variants") {
    CHECK(train::parse_axis("levels") == train::AblationAxis::levels);
    CHECK(train::parse_axis("lambda_d") == train::AblationAxis::lambda_d);
    CHECK(train::parse_axis("distance_type") == train::AblationAxis::distance_type);
    CHECK(train::parse_axis("prompts") == train::AblationAxis::prompts);
    CHECK_THROWS_AS(train::parse_axis("dropout"), ValidationError);

    const auto base = train::RunConfig::toy();
    const auto ld = train::ablation_variants(base, train::AblationAxis::lambda_d);
    REQUIRE(ld.size() == 3);
    CHECK(ld[0].config.weights.d == 0.0);
    CHECK(ld[1].config.weights.d == 5.0);
    CHECK(ld[2].config.weights.d == 10.0);

    const auto lv = train::ablation_variants(base, train::AblationAxis::levels);
    REQUIRE(lv.size() == 3);
    CHECK(lv[0].config.levels == std::vector<std::size_t>{9, 12});
    CHECK(lv[1].config.levels == std::vector<std::size_t>{6, 9, 12});
    CHECK(lv[2].config.levels == std::vector<std::size_t>{3, 6, 9, 12});

    const auto pr = train::ablation_variants(base, train::AblationAxis::prompts);
    REQUIRE(pr.size() == 2);
    CHECK_FALSE(pr[0].config.use_descriptions);
    CHECK(pr[1].config.use_descriptions);

    const auto dt = train::ablation_variants(base, train::AblationAxis::distance_type);
    REQUIRE(dt.size() == 3);
    for (const auto& v : dt) CHECK(v.config.seed == base.seed);
}

TEST_CASE("ablation report over a tiny run") {
    auto base = quick_config(2, scratch("ablate"));
    const auto report = train::ablate(base, train::AblationAxis::prompts, small_data());
    REQUIRE(report.rows.size() == 2);
    const auto j = report.to_json();
    CHECK(j.at("axis") == "prompts");
    CHECK(j.at("rows").size() == 2);
    const auto table = report.to_table();
    CHECK(table.find("Agreement") != std::string::npos);
    CHECK(table.find(report.rows[0].label) != std::string::npos);
}

TEST_CASE("paper preset on toy data: 200 steps halve the loss") {
    synth::GeneratorSpec spec;
    const auto data = synth::generate(spec, data_vocab(), 7);
    auto cfg = train::RunConfig::toy();
    cfg.steps = 200;
    auto model = train::make_model(cfg, data.vocab);
    train::TrainOptions opts;
    opts.write_files = false;
    const auto result = train::train(model, data, opts);
    REQUIRE(result.log.size() == 200);
    auto moving_average = [&](std::size_t from) {
        double s = 0.0;
        for (std::size_t i = from; i < from + 5; ++i) s += result.log[i].report.total;
        return s / 5.0;
    };
    const double first = moving_average(0), last = moving_average(195);
    MESSAGE("loss moving average " << first << " -> " << last);
    CHECK(last <= 0.5 * first);
}
