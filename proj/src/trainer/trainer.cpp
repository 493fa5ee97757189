#include "cmdse/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "cmdse/numcore/ops.hpp"
#include "cmdse/numcore/random.hpp"

#ifndef CMDSE_DEFAULT_DATA_DIR
#define CMDSE_DEFAULT_DATA_DIR "data"
#endif

namespace cmdse::train {

using num::Tensor;

namespace {

constexpr const char* kParamPrefix = "param/";
constexpr const char* kFirstMomentPrefix = "adam_m/";
constexpr const char* kSecondMomentPrefix = "adam_v/";

const char* distance_name(match::DistanceType t) { return t == match::DistanceType::absolute ? "absolute" : "relative"; }
const char* order_name(match::LevelOrder o) { return o == match::LevelOrder::low_small ? "low_small" : "low_large"; }

match::DistanceType parse_distance(const std::string& s) {
    if (s == "absolute") return match::DistanceType::absolute;
    if (s == "relative") return match::DistanceType::relative;
    throw ValidationError("distance_type must be 'absolute' or 'relative', got '" + s + "'");
}

match::LevelOrder parse_order(const std::string& s) {
    if (s == "low_small") return match::LevelOrder::low_small;
    if (s == "low_large") return match::LevelOrder::low_large;
    throw ValidationError("level_order must be 'low_small' or 'low_large', got '" + s + "'");
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw NotFoundError("cannot write '" + path.string() + "'");
    out << text;
    if (!out) throw Error("failed writing '" + path.string() + "'");
}

std::filesystem::path resolve_resource(const std::string& configured, const char* fallback) {
    return configured.empty() ? default_data_dir() / fallback : std::filesystem::path(configured);
}

// Batch composition for a step depends only on (seed, step).
std::vector<std::size_t> batch_indices(std::uint64_t seed, std::size_t step0, std::size_t batch, std::size_t n) {
    const std::size_t per_epoch = (n + batch - 1) / batch;
    const std::size_t epoch = step0 / per_epoch, pos = step0 % per_epoch;
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    num::Rng rng({seed, 0xBA7C4ull, epoch});
    rng.shuffle(order);
    std::vector<std::size_t> out;
    for (std::size_t i = pos * batch; i < std::min(n, (pos + 1) * batch); ++i) out.push_back(order[i]);
    return out;
}

bool all_finite(const Tensor& t) {
    return std::all_of(t.values().begin(), t.values().end(), [](double v) { return std::isfinite(v); });
}

double param_norm(const Tensor& t) {
    double s = 0.0;
    for (double v : t.data()) s += v * v;
    return std::sqrt(s);
}

[[noreturn]] void abort_on_nan(const Model& model, const std::filesystem::path& out_dir, bool write_files,
                               std::size_t step, const std::vector<std::uint64_t>& image_ids,
                               const std::vector<loss::LossReport>& reports) {
    nlohmann::json dump;
    dump["step"] = step;
    dump["image_ids"] = image_ids;
    dump["config"] = model.config().to_json();
    dump["reports"] = nlohmann::json::array();
    for (const auto& r : reports) dump["reports"].push_back(r.to_json());
    dump["param_norms"] = nlohmann::json::object();
    for (const auto& p : model.learnable()) dump["param_norms"][p.name] = param_norm(p.tensor);
    std::string where = "";
    if (write_files) {
        std::filesystem::create_directories(out_dir);
        const auto path = out_dir / ("nan_dump_step" + std::to_string(step) + ".json");
        // Non-finite numbers serialize as null, which keeps the dump valid JSON.
        write_text(path, dump.dump(2) + "\n");
        where = "; inputs dumped to " + path.string();
    }
    throw NumericError("non-finite loss at step " + std::to_string(step) + where);
}

}  // namespace

std::filesystem::path default_data_dir() { return CMDSE_DEFAULT_DATA_DIR; }

RunConfig RunConfig::paper() { return RunConfig{}; }

RunConfig RunConfig::toy() {
    RunConfig c;
    c.preset = "toy";
    c.batch_size = 8;
    return c;
}

RunConfig RunConfig::preset_named(const std::string& name) {
    if (name == "paper") return paper();
    if (name == "toy") return toy();
    throw ValidationError("unknown preset '" + name + "' (expected 'paper' or 'toy')");
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ParseError("run config must be a JSON object");
    RunConfig c;
    try {
        c = preset_named(j.value("preset", std::string("paper")));
        for (const auto& [key, v] : j.items()) {
            if (key == "preset") continue;
            else if (key == "lambda_b") c.weights.box = v.get<double>();
            else if (key == "lambda_iou") c.weights.iou = v.get<double>();
            else if (key == "lambda_cls") c.weights.cls = v.get<double>();
            else if (key == "lambda_d") c.weights.d = v.get<double>();
            else if (key == "focal_gamma") c.focal.gamma = v.get<double>();
            else if (key == "focal_alpha") c.focal.alpha = v.get<double>();
            else if (key == "distance_type") c.conditional.distance = parse_distance(v.get<std::string>());
            else if (key == "level_order") c.conditional.order = parse_order(v.get<std::string>());
            else if (key == "levels") c.levels = v.get<std::vector<std::size_t>>();
            else if (key == "num_queries") c.num_queries = v.get<std::size_t>();
            else if (key == "decoder_layers") c.decoder_layers = v.get<std::size_t>();
            else if (key == "lr") c.lr = v.get<double>();
            else if (key == "weight_decay") c.weight_decay = v.get<double>();
            else if (key == "steps") c.steps = v.get<std::size_t>();
            else if (key == "epochs") c.epochs = v.get<std::size_t>();
            else if (key == "batch_size") c.batch_size = v.get<std::size_t>();
            else if (key == "gamma") c.gamma = v.get<double>();
            else if (key == "top_k") c.top_k = v.get<std::size_t>();
            else if (key == "seed") c.seed = v.get<std::uint64_t>();
            else if (key == "use_descriptions") c.use_descriptions = v.get<bool>();
            else if (key == "data_dir") c.data_dir = v.get<std::string>();
            else if (key == "description_bank") c.description_bank = v.get<std::string>();
            else if (key == "tokens") c.tokens = v.get<std::string>();
            else if (key == "out_dir") c.out_dir = v.get<std::string>();
            else if (key == "checkpoint_every") c.checkpoint_every = v.get<std::size_t>();
            else throw ValidationError("unknown run config field '" + key + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("run config: ") + e.what());
    }
    c.validate();
    return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw NotFoundError("cannot open config '" + path.string() + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    return from_json(j);
}

nlohmann::json RunConfig::to_json() const {
    return {{"preset", preset},
            {"lambda_b", weights.box},
            {"lambda_iou", weights.iou},
            {"lambda_cls", weights.cls},
            {"lambda_d", weights.d},
            {"focal_gamma", focal.gamma},
            {"focal_alpha", focal.alpha},
            {"distance_type", distance_name(conditional.distance)},
            {"level_order", order_name(conditional.order)},
            {"levels", levels},
            {"num_queries", num_queries},
            {"decoder_layers", decoder_layers},
            {"lr", lr},
            {"weight_decay", weight_decay},
            {"steps", steps},
            {"epochs", epochs},
            {"batch_size", batch_size},
            {"gamma", gamma},
            {"top_k", top_k},
            {"seed", seed},
            {"use_descriptions", use_descriptions},
            {"data_dir", data_dir},
            {"description_bank", description_bank},
            {"tokens", tokens},
            {"out_dir", out_dir},
            {"checkpoint_every", checkpoint_every}};
}

void RunConfig::validate() const {
    try {
        dec::validate_levels(levels, enc::VisualEncoderConfig{}.num_blocks);
    } catch (const NotFoundError& e) {
        throw ValidationError(e.what());
    }
    auto require = [](bool ok, const std::string& what) {
        if (!ok) throw ValidationError(what);
    };
    require(weights.box >= 0 && weights.iou >= 0 && weights.cls >= 0 && weights.d >= 0, "cost weights must be >= 0");
    require(focal.gamma >= 0 && focal.alpha >= 0 && focal.alpha <= 1, "focal_gamma >= 0 and focal_alpha in [0, 1]");
    require(num_queries >= 1, "num_queries must be >= 1");
    require(decoder_layers >= 1, "decoder_layers must be >= 1");
    require(lr > 0 && std::isfinite(lr), "lr must be positive");
    require(weight_decay >= 0, "weight_decay must be >= 0");
    require(steps >= 1, "steps must be >= 1");
    require(batch_size >= 1, "batch_size must be >= 1");
    require(gamma > 1, "gamma must be > 1");
    require(top_k >= 1, "top_k must be >= 1");
}

std::filesystem::path RunConfig::description_bank_path() const {
    return resolve_resource(description_bank, "descriptions.json");
}

std::filesystem::path RunConfig::tokens_path() const { return resolve_resource(tokens, "tokens.txt"); }

void apply_env_overrides(RunConfig& config) {
    const char* env = std::getenv("CMDSE_SEED");
    if (!env) return;
    const std::string s(env);
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
        throw ValidationError("CMDSE_SEED must be a non-negative integer, got '" + s + "'");
    }
    try {
        config.seed = std::stoull(s);
    } catch (const std::out_of_range&) {
        throw ValidationError("CMDSE_SEED out of range: '" + s + "'");
    }
}

Model::Model(const RunConfig& config, sem::Vocabulary vocab, const sem::DescriptionBank& bank,
             enc::TokenVocabulary tokens)
    : config_(config),
      vocab_(std::move(vocab)),
      bank_(bank),
      visual_(enc::VisualEncoderConfig{}),
      text_(enc::TextEncoderConfig{}, std::move(tokens)),
      decoder_([&] {
          dec::DecoderConfig d;
          d.width = visual_.config().width;
          d.text_width = text_.config().width;
          d.num_queries = config.num_queries;
          d.num_layers = config.decoder_layers;
          d.memory_tokens = visual_.config().num_tokens();
          d.seed = config.seed;
          return d;
      }()) {
    config_.validate();
    num::Rng rng({config.seed, 0xC7Aull});
    ctx_ = enc::ContextTokens::make(text_.config().width, rng, 0.02);
    alpha_hoi_ = Tensor::scalar(sem::kAlphaHoiInit, true);
    alpha_b_ = config.use_descriptions ? Tensor::scalar(sem::kAlphaBInit, true) : Tensor::scalar(0.0, false);
}

sem::TextBank Model::text_bank() const {
    sem::TextBank bank;
    bank.t_hoi = text_.encode_hoi_names(ctx_, vocab_);
    bank.t_b = text_.encode_descriptions(bank_);
    bank.alpha_hoi = alpha_hoi_;
    bank.alpha_b = alpha_b_;
    return bank;
}

dec::DecoderOutput Model::forward(const std::vector<Tensor>& maps, const sem::TextBank& bank) const {
    return decoder_.decode(maps, config_.levels, bank);
}

num::ParamList Model::learnable() const {
    num::ParamList out;
    decoder_.collect(out);
    ctx_.collect(out);
    out.push_back({"alpha_hoi", alpha_hoi_});
    if (config_.use_descriptions) out.push_back({"alpha_b", alpha_b_});
    return out;
}

num::ParamList Model::frozen() const {
    num::ParamList out = visual_.frozen_parameters();
    for (auto& p : text_.frozen_parameters()) out.push_back(p);
    return out;
}

Model make_model(const RunConfig& config, const sem::Vocabulary& vocab) {
    auto bank = sem::DescriptionBank::load(config.description_bank_path(), vocab);
    auto tokens = enc::TokenVocabulary::load(config.tokens_path());
    return Model(config, vocab, bank, std::move(tokens));
}

nlohmann::json StepRecord::to_json() const {
    nlohmann::json j = report.to_json();
    j["step"] = step;
    j["epoch"] = epoch;
    return j;
}

std::optional<double> agreement_statistic(const std::vector<MatchRecord>& matches, std::size_t from_step) {
    std::size_t small = 0, low = 0;
    for (const auto& m : matches) {
        if (m.step < from_step || m.g > eval::kSmallDistance) continue;
        ++small;
        low += m.level_pos == 0 ? 1 : 0;
    }
    if (small == 0) return std::nullopt;
    return static_cast<double>(low) / static_cast<double>(small);
}

std::vector<std::vector<Tensor>> encode_scenes(const enc::VisualEncoder& visual,
                                               const std::vector<synth::SceneRecord>& scenes) {
    std::vector<std::vector<Tensor>> maps;
    maps.reserve(scenes.size());
    for (const auto& s : scenes) maps.push_back(visual.encode_image(s.image));
    return maps;
}

num::ArrayContainer make_checkpoint(const Model& model, const num::AdamW* optimizer, std::size_t step) {
    num::ArrayContainer c;
    c.meta = {{"kind", "cmdse-run"}, {"step", step}, {"config", model.config().to_json()},
              {"frozen_hash", enc::parameter_hash(model.frozen())}};
    const auto params = model.learnable();
    for (const auto& p : params) {
        c.arrays.push_back({kParamPrefix + p.name, p.tensor.shape(), p.tensor.values()});
    }
    if (optimizer) {
        c.meta["optimizer_steps"] = optimizer->steps_taken();
        for (std::size_t k = 0; k < params.size(); ++k) {
            c.arrays.push_back({kFirstMomentPrefix + params[k].name, params[k].tensor.shape(), optimizer->first_moments()[k]});
            c.arrays.push_back({kSecondMomentPrefix + params[k].name, params[k].tensor.shape(), optimizer->second_moments()[k]});
        }
    }
    return c;
}

void load_parameters(Model& model, const num::ArrayContainer& ckpt) {
    for (auto& p : model.learnable()) {
        const std::string key = kParamPrefix + p.name;
        if (!ckpt.contains(key)) throw ShapeError("checkpoint lacks parameter '" + p.name + "'");
        const auto& a = ckpt.get(key);
        if (a.shape != p.tensor.shape()) {
            throw ShapeError("checkpoint parameter '" + p.name + "' has shape " + num::shape_str(a.shape) +
                             ", model expects " + num::shape_str(p.tensor.shape()));
        }
        auto data = p.tensor.mutable_data();
        std::copy(a.values.begin(), a.values.end(), data.begin());
    }
}

RunConfig checkpoint_config(const num::ArrayContainer& ckpt) {
    if (!ckpt.meta.contains("config")) throw ParseError("checkpoint carries no run config");
    return RunConfig::from_json(ckpt.meta.at("config"));
}

TrainResult train(Model& model, const synth::Dataset& data, const TrainOptions& options) {
    const RunConfig& cfg = model.config();
    if (data.train.scenes.empty()) throw ValidationError("training split is empty");
    const std::filesystem::path out_dir = cfg.out_dir;
    if (options.write_files) std::filesystem::create_directories(out_dir);

    TrainResult result;
    result.frozen_hash_before = enc::parameter_hash(model.frozen());
    const auto maps = encode_scenes(model.visual(), data.train.scenes);

    num::AdamWConfig opt_cfg;
    opt_cfg.lr = cfg.lr;
    opt_cfg.weight_decay = cfg.weight_decay;
    num::AdamW optimizer(model.learnable(), opt_cfg);

    std::size_t start = 0;
    if (options.resume_from) {
        const auto ckpt = num::read_container(*options.resume_from);
        load_parameters(model, ckpt);
        start = ckpt.meta.at("step").get<std::size_t>();
        std::vector<std::vector<double>> m, v;
        for (const auto& p : optimizer.params()) {
            const auto mk = kFirstMomentPrefix + p.name, vk = kSecondMomentPrefix + p.name;
            if (!ckpt.contains(mk) || !ckpt.contains(vk)) throw ShapeError("checkpoint lacks optimizer state for '" + p.name + "'");
            m.push_back(ckpt.get(mk).values);
            v.push_back(ckpt.get(vk).values);
        }
        optimizer.restore(ckpt.meta.value("optimizer_steps", static_cast<long long>(start)), std::move(m), std::move(v));
    }

    std::ofstream log;
    if (options.write_files) {
        write_text(out_dir / "config.json", cfg.to_json().dump(2) + "\n");
        log.open(out_dir / "train_log.jsonl", start > 0 ? std::ios::app | std::ios::binary : std::ios::trunc | std::ios::binary);
        if (!log) throw NotFoundError("cannot write training log in '" + out_dir.string() + "'");
    }

    const std::size_t n = data.train.scenes.size();
    const std::size_t per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    const loss::LossConfig loss_cfg{cfg.weights, cfg.focal, cfg.conditional};
    for (std::size_t s = start; s < cfg.steps; ++s) {
        if (options.before_step) options.before_step(model, s + 1);
        optimizer.zero_grad();
        const auto batch = batch_indices(cfg.seed, s, cfg.batch_size, n);
        const sem::TextBank bank = model.text_bank();
        Tensor total;
        std::vector<loss::LossReport> reports;
        std::vector<std::uint64_t> ids;
        for (std::size_t idx : batch) {
            const auto& scene = data.train.scenes[idx];
            const auto out = model.forward(maps[idx], bank);
            const auto preds = dec::PredictionSet::from_output(out);
            ids.push_back(scene.image_id);
            if (!all_finite(out.boxes) || !all_finite(out.logits)) {
                abort_on_nan(model, out_dir, options.write_files, s + 1, ids, reports);
            }
            match::Assignment asg;
            if (!scene.hois.empty()) {
                asg = match::hungarian(match::build_cost_matrix(preds, scene.hois, cfg.weights, cfg.conditional));
            }
            auto lr = loss::total_loss(out, scene.hois, asg, loss_cfg);
            total = total.defined() ? num::add(total, lr.total) : lr.total;
            reports.push_back(lr.report);
            for (const auto& [row, col] : asg.pairs) {
                result.matches.push_back({s + 1, out.level_pos[row], match::ho_distance(scene.hois[col])});
            }
        }
        total = num::scale(total, 1.0 / static_cast<double>(batch.size()));

        StepRecord rec;
        rec.step = s + 1;
        rec.epoch = s / per_epoch + 1;
        for (const auto& r : reports) {
            rec.report.box += r.box;
            rec.report.iou += r.iou;
            rec.report.cls += r.cls;
            rec.report.d += r.d;
            rec.report.matched += r.matched;
        }
        const double inv = 1.0 / static_cast<double>(reports.size());
        rec.report.box *= inv;
        rec.report.iou *= inv;
        rec.report.cls *= inv;
        rec.report.d *= inv;
        rec.report.total = total.item();
        if (!std::isfinite(rec.report.total)) abort_on_nan(model, out_dir, options.write_files, s + 1, ids, reports);

        num::backward(total);
        optimizer.step();
        result.log.push_back(rec);
        if (log.is_open()) log << rec.to_json().dump() << '\n';
        if (options.write_files && cfg.checkpoint_every > 0 && (s + 1) % cfg.checkpoint_every == 0 && s + 1 < cfg.steps) {
            num::write_container(out_dir / ("checkpoint_step" + std::to_string(s + 1) + ".ckpt"),
                                 make_checkpoint(model, &optimizer, s + 1));
        }
    }

    const std::size_t final_epoch_start = cfg.steps > per_epoch ? cfg.steps - per_epoch + 1 : 1;
    result.agreement = agreement_statistic(result.matches, final_epoch_start);
    result.frozen_hash_after = enc::parameter_hash(model.frozen());
    if (result.frozen_hash_after != result.frozen_hash_before) throw Error("frozen encoder parameters changed during training");
    result.state = make_checkpoint(model, &optimizer, std::max(start, cfg.steps));
    if (options.write_files) {
        result.checkpoint = out_dir / "checkpoint.ckpt";
        num::write_container(result.checkpoint, result.state);
    }
    return result;
}

TrainResult train(const RunConfig& config, const TrainOptions& options) {
    if (config.data_dir.empty()) throw ValidationError("run config needs data_dir pointing at a generated dataset");
    const auto data = synth::load_dataset(config.data_dir);
    Model model = make_model(config, data.vocab);
    return train(model, data, options);
}

std::vector<eval::Detection> infer(const Model& model, const std::vector<synth::SceneRecord>& scenes,
                                   const std::vector<std::vector<Tensor>>& maps) {
    if (maps.size() != scenes.size()) throw ShapeError("infer: one set of feature maps per scene required");
    num::NoGradGuard no_grad;
    const RunConfig& cfg = model.config();
    const sem::TextBank bank = model.text_bank();
    std::vector<eval::Detection> dets;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        const auto out = model.forward(maps[i], bank);
        const std::size_t classes = out.logits.shape()[1];
        std::vector<eval::Detection> image_dets;
        for (std::size_t r = 0; r < out.rows(); ++r) {
            std::size_t best = 0;
            for (std::size_t k = 1; k < classes; ++k)
                if (out.logits.at(r, k) > out.logits.at(r, best)) best = k;
            const double s = 1.0 / (1.0 + std::exp(-out.logits.at(r, best)));
            eval::Detection d;
            d.image_id = scenes[i].image_id;
            d.slot = r;
            d.b_h = {out.boxes.at(r, 1), out.boxes.at(r, 2), out.boxes.at(r, 3), out.boxes.at(r, 4)};
            d.b_o = {out.boxes.at(r, 5), out.boxes.at(r, 6), out.boxes.at(r, 7), out.boxes.at(r, 8)};
            d.interaction = static_cast<int>(best);
            d.score = eval::final_score(s, out.boxes.at(r, 0), cfg.gamma);
            image_dets.push_back(d);
        }
        std::stable_sort(image_dets.begin(), image_dets.end(), eval::ranks_before);
        if (image_dets.size() > cfg.top_k) image_dets.resize(cfg.top_k);
        dets.insert(dets.end(), image_dets.begin(), image_dets.end());
    }
    return dets;
}

std::vector<eval::Detection> infer(const Model& model, const std::vector<synth::SceneRecord>& scenes) {
    return infer(model, scenes, encode_scenes(model.visual(), scenes));
}

eval::EvalReport evaluate_model(const Model& model, const synth::Dataset& data) {
    eval::EvalOptions opts;
    opts.train_counts = data.train.interaction_counts(data.vocab.num_interactions());
    return eval::evaluate(infer(model, data.test.scenes), data.test.annotations(), data.vocab, opts);
}

AblationAxis parse_axis(const std::string& name) {
    if (name == "levels") return AblationAxis::levels;
    if (name == "lambda_d") return AblationAxis::lambda_d;
    if (name == "distance_type") return AblationAxis::distance_type;
    if (name == "prompts") return AblationAxis::prompts;
    throw ValidationError("unknown ablation axis '" + name + "' (expected levels, lambda_d, distance_type or prompts)");
}

const char* axis_name(AblationAxis axis) {
    switch (axis) {
        case AblationAxis::levels: return "levels";
        case AblationAxis::lambda_d: return "lambda_d";
        case AblationAxis::distance_type: return "distance_type";
        case AblationAxis::prompts: return "prompts";
    }
    return "?";
}

std::vector<AblationVariant> ablation_variants(const RunConfig& base, AblationAxis axis) {
    std::vector<AblationVariant> out;
    auto add = [&](std::string label, auto&& edit) {
        RunConfig c = base;
        edit(c);
        c.out_dir = (std::filesystem::path(base.out_dir) / (std::string(axis_name(axis)) + "_" + std::to_string(out.size()))).string();
        out.push_back({std::move(label), c});
    };
    switch (axis) {
        case AblationAxis::levels:
            add("{9, 12}", [](RunConfig& c) { c.levels = {9, 12}; });
            add("{6, 9, 12}", [](RunConfig& c) { c.levels = {6, 9, 12}; });
            add("{3, 6, 9, 12}", [](RunConfig& c) { c.levels = {3, 6, 9, 12}; });
            break;
        case AblationAxis::lambda_d:
            for (double d : {0.0, 5.0, 10.0}) {
                std::ostringstream label;
                label << d;
                add(label.str(), [d](RunConfig& c) { c.weights.d = d; });
            }
            break;
        case AblationAxis::distance_type:
            add("Relative / Low-Small", [](RunConfig& c) {
                c.conditional = {match::DistanceType::relative, match::LevelOrder::low_small};
            });
            add("Absolute / Low-Small", [](RunConfig& c) {
                c.conditional = {match::DistanceType::absolute, match::LevelOrder::low_small};
            });
            add("Absolute / Low-Large", [](RunConfig& c) {
                c.conditional = {match::DistanceType::absolute, match::LevelOrder::low_large};
            });
            break;
        case AblationAxis::prompts:
            add("Names only", [](RunConfig& c) { c.use_descriptions = false; });
            add("Names + body-part descriptions", [](RunConfig& c) { c.use_descriptions = true; });
            break;
    }
    return out;
}

AblationReport ablate(const RunConfig& base, AblationAxis axis, const synth::Dataset& data) {
    AblationReport report;
    report.axis = axis;
    for (const auto& variant : ablation_variants(base, axis)) {
        Model model = make_model(variant.config, data.vocab);
        TrainOptions opts;
        opts.write_files = false;
        const auto run = train(model, data, opts);
        AblationRow row;
        row.label = variant.label;
        row.report = evaluate_model(model, data);
        row.agreement = run.agreement;
        row.final_loss = run.log.back().report.total;
        report.rows.push_back(std::move(row));
    }
    return report;
}

nlohmann::json AblationReport::to_json() const {
    nlohmann::json j;
    j["axis"] = axis_name(axis);
    j["rows"] = nlohmann::json::array();
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); };
    for (const auto& r : rows) {
        j["rows"].push_back({{"label", r.label},
                             {"mAP",
                              {{"full", opt(r.report.map.full)},
                               {"seen", opt(r.report.map.seen)},
                               {"unseen", opt(r.report.map.unseen)},
                               {"rare", opt(r.report.map.rare)},
                               {"non_rare", opt(r.report.map.non_rare)},
                               {"small", opt(r.report.map.small)},
                               {"large", opt(r.report.map.large)}}},
                             {"agreement", opt(r.agreement)},
                             {"final_loss", r.final_loss}});
    }
    return j;
}

std::string AblationReport::to_table() const {
    using Column = std::pair<const char*, std::optional<double> eval::SplitScores::*>;
    std::vector<Column> cols;
    const char* first = "";
    switch (axis) {
        case AblationAxis::levels:
            first = "Levels";
            cols = {{"Small", &eval::SplitScores::small}, {"Large", &eval::SplitScores::large},
                    {"Seen", &eval::SplitScores::seen},   {"Unseen", &eval::SplitScores::unseen},
                    {"Full", &eval::SplitScores::full}};
            break;
        case AblationAxis::lambda_d:
            first = "lambda_d";
            cols = {{"Non-rare", &eval::SplitScores::non_rare}, {"Rare", &eval::SplitScores::rare},
                    {"Unseen", &eval::SplitScores::unseen},     {"Full", &eval::SplitScores::full}};
            break;
        case AblationAxis::distance_type:
            first = "Distance / Matching";
            cols = {{"Seen", &eval::SplitScores::seen}, {"Unseen", &eval::SplitScores::unseen}};
            break;
        case AblationAxis::prompts:
            first = "Prompts";
            cols = {{"Seen", &eval::SplitScores::seen}, {"Unseen", &eval::SplitScores::unseen}};
            break;
    }
    std::size_t label_width = std::string(first).size();
    for (const auto& r : rows) label_width = std::max(label_width, r.label.size());
    std::ostringstream os;
    os << std::left << std::setw(static_cast<int>(label_width)) << first << std::right;
    for (const auto& [name, member] : cols) os << std::setw(10) << name;
    os << std::setw(11) << "Agreement" << '\n';
    for (const auto& r : rows) {
        os << std::left << std::setw(static_cast<int>(label_width)) << r.label << std::right;
        for (const auto& [name, member] : cols) {
            const auto& v = r.report.map.*member;
            if (v) os << std::setw(10) << std::fixed << std::setprecision(2) << 100.0 * *v;
            else os << std::setw(10) << "-";
        }
        if (r.agreement) os << std::setw(11) << std::fixed << std::setprecision(3) << *r.agreement;
        else os << std::setw(11) << "-";
        os << '\n';
    }
    return os.str();
}

}  // namespace cmdse::train
