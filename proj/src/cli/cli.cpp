#include "cmdse/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "cmdse/error.hpp"
#include "cmdse/evalkit.hpp"
#include "cmdse/matching.hpp"
#include "cmdse/synthgen.hpp"
#include "cmdse/trainer.hpp"

namespace cmdse::cli {
namespace {

nlohmann::json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw NotFoundError("cannot open '" + path + "'");
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path + ": " + e.what());
    }
}

void write_json(const std::string& path, const nlohmann::json& j) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw NotFoundError("cannot write '" + path + "'");
    out << j.dump(2) << '\n';
}

const synth::Split& pick_split(const synth::Dataset& data, const std::string& name) {
    if (name == "train") return data.train;
    if (name == "test") return data.test;
    throw ValidationError("unknown split '" + name + "' (expected train or test)");
}

// Accepts a bare 2-D array or an object with a "cost" array.
match::CostTable parse_cost(const nlohmann::json& j) {
    const nlohmann::json& rows = j.is_object() ? j.at("cost") : j;
    if (!rows.is_array() || rows.empty()) throw ParseError("cost matrix must be a non-empty 2-D array");
    const std::size_t cols = rows.front().size();
    std::vector<double> values;
    for (const auto& row : rows) {
        if (!row.is_array() || row.size() != cols) throw ParseError("cost matrix rows must be arrays of equal length");
        for (const auto& v : row) values.push_back(v.get<double>());
    }
    if (cols == 0) throw ParseError("cost matrix has no columns");
    if (cols > rows.size()) throw ValidationError("cost matrix needs at least as many rows as columns");
    return match::CostTable(rows.size(), cols, std::move(values));
}

std::string format_number(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

struct GenDataArgs {
    std::string spec;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string vocab;
};

int run_gen_data(const GenDataArgs& a, std::ostream& out) {
    const auto spec = a.spec.empty() ? synth::GeneratorSpec{} : synth::GeneratorSpec::from_json(read_json(a.spec));
    spec.validate();
    train::RunConfig seed_holder;
    if (a.seed) {
        seed_holder.seed = *a.seed;
    } else {
        train::apply_env_overrides(seed_holder);
    }
    const auto vocab_path = a.vocab.empty() ? train::default_data_dir() / "vocab.json" : std::filesystem::path(a.vocab);
    const auto vocab = sem::Vocabulary::load(vocab_path);
    const auto data = synth::generate(spec, vocab, seed_holder.seed);
    synth::save_dataset(data, a.out);
    std::size_t unseen = 0;
    for (std::size_t i = 0; i < data.vocab.num_interactions(); ++i) unseen += data.vocab.interaction(static_cast<int>(i)).seen ? 0 : 1;
    out << "wrote " << data.train.scenes.size() << " train and " << data.test.scenes.size() << " test scenes to "
        << a.out << " (seed " << data.seed << ", " << unseen << " unseen interactions)\n";
    return kExitOk;
}

struct TrainArgs {
    std::string config;
    std::string resume;
};

int run_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
    auto config = train::RunConfig::load(a.config);
    train::apply_env_overrides(config);
    config.validate();
    train::TrainOptions opts;
    if (!a.resume.empty()) opts.resume_from = a.resume;
    const auto result = train::train(config, opts);
    if (result.log.empty()) {
        err << "nothing to train: checkpoint already at step " << config.steps << '\n';
    } else {
        const auto& last = result.log.back();
        out << "trained " << result.log.size() << " steps; final loss " << std::fixed << std::setprecision(4)
            << last.report.total << '\n';
        out.unsetf(std::ios::floatfield);
    }
    out << "agreement " << (result.agreement ? format_number(*result.agreement) : std::string("-")) << '\n';
    out << "checkpoint " << result.checkpoint.string() << '\n';
    return kExitOk;
}

struct InferArgs {
    std::string ckpt;
    std::string data;
    std::string out;
    std::string split = "test";
    std::optional<std::size_t> top_k;
};

int run_infer(const InferArgs& a, std::ostream& out) {
    const auto ckpt = num::read_container(a.ckpt);
    auto config = train::checkpoint_config(ckpt);
    if (a.top_k) config.top_k = *a.top_k;
    config.validate();
    const auto data = synth::load_dataset(a.data);
    auto model = train::make_model(config, data.vocab);
    train::load_parameters(model, ckpt);
    const auto dets = train::infer(model, pick_split(data, a.split).scenes);
    eval::write_detections(a.out, dets);
    out << "wrote " << dets.size() << " detections to " << a.out << '\n';
    return kExitOk;
}

struct EvalArgs {
    std::string dets;
    std::string data;
    std::string split = "test";
    std::string json;
};

int run_eval(const EvalArgs& a, std::ostream& out) {
    const auto data = synth::load_dataset(a.data);
    const auto dets = eval::read_detections(a.dets);
    eval::EvalOptions options;
    options.train_counts = data.train.interaction_counts(data.vocab.num_interactions());
    const auto report = eval::evaluate(dets, pick_split(data, a.split).annotations(), data.vocab, options);
    out << report.to_table();
    if (!a.json.empty()) write_json(a.json, report.to_json(data.vocab));
    return kExitOk;
}

struct AblateArgs {
    std::string axis;
    std::string config;
    std::string data;
    std::optional<std::size_t> steps;
    std::string json;
};

int run_ablate(const AblateArgs& a, std::ostream& out) {
    const auto axis = train::parse_axis(a.axis);
    auto config = a.config.empty() ? train::RunConfig::toy() : train::RunConfig::load(a.config);
    if (!a.data.empty()) config.data_dir = a.data;
    if (a.steps) config.steps = *a.steps;
    train::apply_env_overrides(config);
    config.validate();
    if (config.data_dir.empty()) throw ValidationError("ablate needs --data or a config with data_dir");
    const auto data = synth::load_dataset(config.data_dir);
    const auto report = train::ablate(config, axis, data);
    out << report.to_table();
    if (!a.json.empty()) write_json(a.json, report.to_json());
    return kExitOk;
}

struct MatchArgs {
    std::string cost;
    bool brute_force = false;
};

int run_match(const MatchArgs& a, std::ostream& out) {
    const auto table = parse_cost(read_json(a.cost));
    const auto asg = a.brute_force ? match::brute_force_match(table) : match::hungarian(table);
    out << "assignment (row -> column):\n";
    for (const auto& [row, col] : asg.pairs) out << "  " << row << " -> " << col << '\n';
    out << "cost " << format_number(asg.total) << '\n';
    return kExitOk;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Conditional multi-level decoding with semantic enhancement for HOI detection"};
    app.name("cmdse");
    app.require_subcommand(1);

    GenDataArgs gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic train/test dataset");
    gen_cmd->add_option("--spec", gen.spec, "Generator spec JSON (defaults apply when omitted)")->check(CLI::ExistingFile);
    gen_cmd->add_option("--seed", gen.seed, "Dataset seed (default: CMDSE_SEED, then 7)");
    gen_cmd->add_option("--out", gen.out, "Output directory")->required();
    gen_cmd->add_option("--vocab", gen.vocab, "Vocabulary JSON (default: bundled)")->check(CLI::ExistingFile);

    TrainArgs tr;
    auto* train_cmd = app.add_subcommand("train", "Train a model from a run config");
    train_cmd->add_option("--config", tr.config, "Run config JSON")->required()->check(CLI::ExistingFile);
    train_cmd->add_option("--resume", tr.resume, "Checkpoint to resume from")->check(CLI::ExistingFile);

    InferArgs inf;
    auto* infer_cmd = app.add_subcommand("infer", "Write detections for a dataset split");
    infer_cmd->add_option("--ckpt", inf.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
    infer_cmd->add_option("--data", inf.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    infer_cmd->add_option("--out", inf.out, "Detections JSONL")->required();
    infer_cmd->add_option("--split", inf.split, "train or test")->check(CLI::IsMember({"train", "test"}));
    infer_cmd->add_option("--top-k", inf.top_k, "Detections kept per image");

    EvalArgs ev;
    auto* eval_cmd = app.add_subcommand("eval", "Score detections against a dataset split");
    eval_cmd->add_option("--dets", ev.dets, "Detections JSONL")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--data", ev.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    eval_cmd->add_option("--split", ev.split, "train or test")->check(CLI::IsMember({"train", "test"}));
    eval_cmd->add_option("--json", ev.json, "Also write the full report as JSON");

    AblateArgs ab;
    auto* ablate_cmd = app.add_subcommand("ablate", "Train and evaluate each variant along one axis");
    ablate_cmd->add_option("--axis", ab.axis, "levels | lambda_d | distance_type | prompts")->required();
    ablate_cmd->add_option("--config", ab.config, "Base run config (default: toy preset)")->check(CLI::ExistingFile);
    ablate_cmd->add_option("--data", ab.data, "Dataset directory (overrides data_dir)")->check(CLI::ExistingDirectory);
    ablate_cmd->add_option("--steps", ab.steps, "Training steps per variant");
    ablate_cmd->add_option("--json", ab.json, "Also write the report as JSON");

    MatchArgs ma;
    auto* match_cmd = app.add_subcommand("match", "Solve one assignment problem (solver debug)");
    match_cmd->add_option("--cost", ma.cost, "Cost matrix JSON: [[...], ...] or {\"cost\": [[...]]}")
        ->required()
        ->check(CLI::ExistingFile);
    match_cmd->add_flag("--brute-force", ma.brute_force, "Use the exhaustive oracle instead of Hungarian");

    for (auto* sub : app.get_subcommands({})) sub->usage("Usage: cmdse " + sub->get_name() + " [OPTIONS]");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        const CLI::App* target = &app;
        for (const auto* sub : app.get_subcommands()) target = sub;
        out << target->help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        const CLI::App* target = &app;
        for (const auto* sub : app.get_subcommands()) target = sub;
        err << "error: " << e.what() << "\n\n" << target->help();
        return kExitUsage;
    }

    try {
        if (gen_cmd->parsed()) return run_gen_data(gen, out);
        if (train_cmd->parsed()) return run_train(tr, out, err);
        if (infer_cmd->parsed()) return run_infer(inf, out);
        if (eval_cmd->parsed()) return run_eval(ev, out);
        if (ablate_cmd->parsed()) return run_ablate(ab, out);
        if (match_cmd->parsed()) return run_match(ma, out);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    err << app.help();
    return kExitUsage;
}

}  // namespace cmdse::cli
