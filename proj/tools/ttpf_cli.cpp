#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ttpf/harness.hpp"

using namespace ttpf;

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string alpha_mode;
    std::optional<double> tau;
    std::string out;
    std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, Common& c, const std::string& default_out) {
    c.out = default_out;
    cmd->add_option("--config", c.config, "key=value config file");
    cmd->add_option("--seed", c.seed, "task and training seed");
    cmd->add_option("--alpha-mode", c.alpha_mode, "dynamic, fixed:<v>, combo, learned or handcrafted");
    cmd->add_option("--tau", c.tau, "softmax temperature");
    cmd->add_option("--out", c.out, "output path")->capture_default_str();
    cmd->add_option("--set", c.sets, "extra key=value override (repeatable)");
}

PipelineConfig resolve(const Common& c) {
    PipelineConfig cfg = c.config.empty() ? PipelineConfig{} : load_config(c.config);
    for (const auto& kv : c.sets) {
        const auto eq = kv.find('=');
        require(eq != std::string::npos, ErrorKind::Config, "--set expects key=value, got '" + kv + "'");
        apply_setting(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (c.seed) apply_setting(cfg, "seed", std::to_string(*c.seed));
    if (c.tau) cfg.train.tau = Temperature(*c.tau);
    if (!c.alpha_mode.empty()) cfg.predictors = {AlphaMode::parse(c.alpha_mode)};
    return cfg;
}

void write_or_print(const std::string& path, const std::string& text) {
    if (path == "-") {
        std::cout << text;
    } else {
        write_text_file(path, text);
    }
}

void summarize(const std::vector<EvalReport>& reports) {
    for (const auto& r : reports)
        std::cerr << r.predictor << " tau=" << format_number(r.tau) << " shots=" << r.shots << " base=" << format_one_decimal(r.base_acc)
                  << " new=" << format_one_decimal(r.new_acc) << " h=" << format_one_decimal(r.h) << '\n';
}

int synth_data(const Common& c) {
    const PipelineConfig cfg = resolve(c);
    const SyntheticTask task = make_task(cfg);
    const World world = make_world(task, cfg);
    Archive a;
    store(a, task);
    store(a, world.vocab);
    store(a, world.enc);
    a.put_string("template", cfg.tmpl);
    a.save(c.out);
    std::cerr << "wrote " << c.out << ": " << task.universe.base_count() << " base, " << task.universe.new_count() << " new classes, "
              << task.train_pool.size() << " train, " << task.test_pool.size() << " test samples\n";
    return 0;
}

struct Loaded {
    SyntheticTask task;
    World world;
    std::string tmpl;
};

Loaded load_world(const std::string& path) {
    const Archive a = Archive::load(path);
    return {load_task(a), {load_vocabulary(a), load_encoders(a)}, a.get_string("template")};
}

int train(const Common& c, const std::string& task_path) {
    PipelineConfig cfg = resolve(c);
    const Loaded w = load_world(task_path);
    cfg.tmpl = w.tmpl;
    AccessLog log;
    std::vector<double> trace;
    TrainConfig tc = cfg.train;
    tc.seed = cfg.seed;
    const auto shots = sample_few_shot(w.task, tc.shots, cfg.seed);
    const ContextBlock ctx = train_coop(shots, tc, w.world.enc, w.world.vocab, w.task.universe, cfg.tmpl, &log, &trace);
    std::size_t new_reads = 0;
    for (int id : w.task.universe.new_ids) new_reads += log.count(id);
    Archive a;
    store(a, ctx);
    a.put_number("train/seed", cfg.seed);
    a.put_number("train/shots", tc.shots);
    a.put_number("train/epochs", tc.max_epochs);
    a.put_number("train/tau", tc.tau.value());
    a.save(c.out);
    std::cerr << "wrote " << c.out << ": epochs=" << tc.max_epochs << " samples=" << log.total() << " new_class_reads=" << new_reads;
    if (!trace.empty()) std::cerr << " loss " << trace.front() << " -> " << trace.back();
    std::cerr << '\n';
    return 0;
}

int eval(const Common& c, const std::string& task_path, const std::string& context_path) {
    PipelineConfig cfg = resolve(c);
    const Loaded w = load_world(task_path);
    const Archive ca = Archive::load(context_path);
    const ContextBlock ctx = load_context(ca);
    require(ctx.origin_template == w.tmpl, ErrorKind::Config, "context was trained with a different template");
    cfg.tmpl = w.tmpl;
    cfg.seed = ca.get_number<std::uint64_t>("train/seed");
    cfg.train.shots = ca.get_number<int>("train/shots");
    cfg.train.max_epochs = ca.get_number<int>("train/epochs");
    if (!c.tau) cfg.train.tau = Temperature(ca.get_number<double>("train/tau"));
    const auto reports = evaluate_modes(cfg.predictors, w.task, w.world, ctx, cfg);
    write_or_print(c.out, emit_reports(reports));
    summarize(reports);
    return 0;
}

int ablate(const Common& c) {
    PipelineConfig cfg = resolve(c);
    AlphaMode fixed = AlphaMode::parse("fixed:0.5");
    if (!c.alpha_mode.empty()) {
        fixed = AlphaMode::parse(c.alpha_mode);
        require(fixed.kind == AlphaMode::Kind::Fixed, ErrorKind::Config, "ablate takes --alpha-mode fixed:<v>");
    }
    cfg.predictors = {AlphaMode::parse("dynamic"), fixed, AlphaMode::parse("combo"), AlphaMode::parse("learned"),
                      AlphaMode::parse("handcrafted")};
    const auto result = run_pipeline(cfg);
    write_or_print(c.out, emit_reports(result.reports));
    summarize(result.reports);
    return 0;
}

int sweep(const Common& c, const std::optional<std::vector<double>>& taus, const std::optional<std::vector<int>>& shots) {
    require(taus.has_value() != shots.has_value(), ErrorKind::Config, "sweep takes exactly one of --temperatures or --shots");
    const PipelineConfig cfg = resolve(c);
    const auto reports = taus ? run_temperature_sweep(cfg, *taus) : run_shot_sweep(cfg, *shots);
    write_or_print(c.out, emit_reports(reports));
    summarize(reports);
    return 0;
}

void report_error(std::string_view category, std::string message) {
    for (char& ch : message)
        if (ch == '\n' || ch == '\r') ch = ' ';
    std::fprintf(stderr, "error=%.*s message=\"%s\"\n", static_cast<int>(category.size()), category.data(), message.c_str());
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Test-time prompt fusion on synthetic open-class tasks"};
    app.require_subcommand(1);

    Common synth_c, train_c, eval_c, ablate_c, sweep_c;
    std::string train_task = "task.ttpt", eval_task = "task.ttpt", eval_context = "context.ttpt";
    std::optional<std::vector<double>> temperatures;
    std::optional<std::vector<int>> shot_counts;

    auto* synth = app.add_subcommand("synth-data", "generate a task with its frozen encoders and save it");
    add_common(synth, synth_c, "task.ttpt");
    auto* tr = app.add_subcommand("train", "tune the context on base-class shots");
    add_common(tr, train_c, "context.ttpt");
    tr->add_option("--task", train_task, "archive from synth-data")->capture_default_str();
    auto* ev = app.add_subcommand("eval", "evaluate predictors on a trained context");
    add_common(ev, eval_c, "-");
    ev->add_option("--task", eval_task, "archive from synth-data")->capture_default_str();
    ev->add_option("--context", eval_context, "archive from train")->capture_default_str();
    auto* ab = app.add_subcommand("ablate", "dynamic fusion against fixed alpha, classifier combination and both endpoints");
    add_common(ab, ablate_c, "-");
    auto* sw = app.add_subcommand("sweep", "temperature or shot-count sweep of dynamic fusion");
    add_common(sw, sweep_c, "-");
    sw->add_option("--temperatures", temperatures, "comma-separated taus")->delimiter(',');
    sw->add_option("--shots", shot_counts, "comma-separated shot counts")->delimiter(',');

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        report_error("UsageError", e.what());
        return 2;
    }

    try {
        if (*synth) return synth_data(synth_c);
        if (*tr) return train(train_c, train_task);
        if (*ev) return eval(eval_c, eval_task, eval_context);
        if (*ab) return ablate(ablate_c);
        if (*sw) return sweep(sweep_c, temperatures, shot_counts);
    } catch (const Error& e) {
        std::string msg = e.what();
        const std::string prefix = std::string(kind_name(e.kind())) + ": ";
        if (msg.starts_with(prefix)) msg.erase(0, prefix.size());
        report_error(kind_name(e.kind()), msg);
        return 1;
    } catch (const std::exception& e) {
        report_error("InternalError", e.what());
        return 3;
    }
    return 0;
}
