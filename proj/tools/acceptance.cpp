#include <chrono>
#include <cstdio>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>

#include "support.hpp"

using namespace ttpf;
using namespace ttpf::testing;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

bool run(int id, const char* name, double budget_s, const std::function<Outcome()>& body) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
        o = body();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    const bool in_time = secs < budget_s;
    const bool pass = o.pass && in_time;
    std::printf("%s %d %s: %s (%.2fs, budget %.0fs%s)\n", pass ? "PASS" : "FAIL", id, name, o.detail.c_str(), secs, budget_s,
                in_time ? "" : ", over budget");
    std::fflush(stdout);
    return pass;
}

Outcome metric_rows() {
    struct Row {
        double base, fresh, h;
    };
    const Row rows[] = {{63.4, 67.2, 65.3}, {75.9, 55.4, 64.1}, {73.8, 63.9, 68.5}, {78.8, 57.6, 66.5},
                        {82.8, 30.5, 44.6}, {82.5, 35.7, 49.9}, {82.1, 49.0, 61.4}, {75.3, 64.1, 69.3}};
    int ok = 0;
    for (const Row& r : rows) ok += std::abs(round_one_decimal(harmonic_mean(r.base, r.fresh)) - r.h) <= 0.05 + 1e-9;
    return {ok == 8, std::to_string(ok) + "/8 rows reproduced"};
}

Outcome gradients() {
    constexpr int kSeeds = 24;
    double worst = 0;
    for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
        Rng rng = make_rng(seed, 1);
        const std::size_t L = static_cast<std::size_t>(uniform_int(rng, 2, 7));
        const std::size_t E = static_cast<std::size_t>(uniform_int(rng, 2, 6));
        const std::size_t D = static_cast<std::size_t>(uniform_int(rng, 2, 6));
        TextEncoderOptions o{seed % 2 ? Activation::Tanh : Activation::Identity, uniform(rng, 0.5, 3), uniform(rng, 0, 0.5), 0.5};
        const auto enc = make_text_encoder(L, E, D, seed, o);
        PromptSequence p{normal_matrix(rng, L, E), 0, 1};
        const Vec u = normal_vector(rng, D);
        const Matrix a = encode_text_grad(p, enc, u);
        Matrix n(L, E);
        for (std::size_t i = 0; i < L; ++i)
            for (std::size_t e = 0; e < E; ++e) {
                const double keep = p.embeddings(i, e);
                p.embeddings(i, e) = keep + 1e-5;
                const double up = dot(u, encode_text(p, enc));
                p.embeddings(i, e) = keep - 1e-5;
                const double down = dot(u, encode_text(p, enc));
                p.embeddings(i, e) = keep;
                n(i, e) = (up - down) / 2e-5;
            }
        worst = std::max(worst, relative_error(a.data(), n.data()));
    }
    for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
        const Instance in = random_instance(100 + seed);
        Rng rng = make_rng(seed, 5);
        std::vector<FeatureVector> feats;
        std::vector<int> labels;
        for (int i = 0; i < 6; ++i) {
            feats.push_back(random_unit(rng, in.text.feature_width()));
            labels.push_back(in.universe.base_ids[static_cast<std::size_t>(uniform_int(rng, 0, (int)in.universe.base_count() - 1))]);
        }
        const Temperature tau(uniform(rng, 0.05, 1.0));
        auto loss = [&](const ContextBlock& c) { return coop_loss_features(c, feats, labels, in.text, in.vocab, in.universe, tau); };
        const LossAndGrad lg = loss(in.context);
        Vec numeric(lg.grad.data().size());
        ContextBlock c = in.context;
        for (std::size_t i = 0; i < numeric.size(); ++i) {
            const double keep = c.vectors.data()[i];
            c.vectors.data()[i] = keep + 1e-5;
            const double up = loss(c).loss;
            c.vectors.data()[i] = keep - 1e-5;
            const double down = loss(c).loss;
            c.vectors.data()[i] = keep;
            numeric[i] = (up - down) / 2e-5;
        }
        worst = std::max(worst, relative_error(lg.grad.data(), numeric));
    }
    std::ostringstream os;
    os << 2 * kSeeds << " instances, max relative error " << worst;
    return {worst < 1e-4, os.str()};
}

Outcome oracle() {
    constexpr int kInstances = 60;
    double worst = 0;
    for (std::uint64_t seed = 0; seed < kInstances; ++seed) {
        const Instance in = random_instance(1000 + seed, 4, 8, 8);
        Rng rng = make_rng(seed, 17);
        const double tau = seed % 3 == 0 ? 0.01 : uniform(rng, 0.02, 1.0);
        Rng img_rng = make_rng(seed, 3);
        const Vec img = normal_vector(img_rng, in.text.feature_width());
        const OpenPrediction p = predict_open(img, in.bank, in.universe, in.text, Temperature(tau));
        const RefOpen r = ref_predict_open(img, in.bank, in.universe, in.text, tau);
        if (p.posterior.size() != r.posterior.size()) return {false, "posterior size mismatch"};
        for (std::size_t k = 0; k < p.posterior.size(); ++k) worst = std::max(worst, std::abs(p.posterior[k] - (double)r.posterior[k]));
    }
    std::ostringstream os;
    os << kInstances << " instances, max abs diff " << worst;
    return {worst <= 1e-9, os.str()};
}

Outcome invariants() {
    int cases = 0, failed = 0;
    auto check = [&](bool ok) {
        ++cases;
        failed += !ok;
    };
    Rng rng = make_rng(9001);
    for (int i = 0; i < 300; ++i) {
        const Vec logits = uniform_vector(rng, static_cast<std::size_t>(uniform_int(rng, 2, 12)), -1, 1);
        const Vec p = softmax_with_temperature(logits, Temperature(uniform(rng, 0.1, 5)));
        bool ok = std::abs(std::accumulate(p.begin(), p.end(), 0.0) - 1.0) <= 1e-9;
        for (double x : p) ok = ok && x > 0 && x < 1;
        check(ok);
    }
    for (int i = 0; i < 200; ++i) {
        const Vec logits = uniform_vector(rng, static_cast<std::size_t>(uniform_int(rng, 1, 12)), -1, 1);
        const Temperature t1(std::exp(uniform(rng, std::log(0.005), std::log(10.0))));
        const Temperature t2(std::exp(uniform(rng, std::log(0.005), std::log(10.0))));
        check(argmax(softmax_with_temperature(logits, t1)) == argmax(softmax_with_temperature(logits, t2)));
    }
    for (int i = 0; i < 200; ++i) {
        const std::size_t n = static_cast<std::size_t>(uniform_int(rng, 1, 16));
        const Vec a = normal_vector(rng, n), b = normal_vector(rng, n);
        Vec la = a, mb = b;
        const double l = std::exp(uniform(rng, -5, 5)), m = std::exp(uniform(rng, -5, 5));
        for (double& x : la) x *= l;
        for (double& x : mb) x *= m;
        check(std::abs(cosine_similarity(la, mb) - cosine_similarity(a, b)) <= 1e-9);
    }
    for (int i = 0; i < 200; ++i) {
        const std::size_t D = static_cast<std::size_t>(uniform_int(rng, 2, 10));
        const int n = uniform_int(rng, 1, 10);
        std::vector<FeatureVector> texts;
        for (int k = 0; k < n; ++k) texts.push_back(random_unit(rng, D));
        const MCMScore s = mcm_score(normal_vector(rng, D), texts, Temperature(uniform(rng, 0.005, 5)));
        check(s.value >= 1.0 / n && s.value <= 1.0);
    }
    for (int i = 0; i < 100; ++i) {
        const Instance in = random_instance(2000 + static_cast<std::uint64_t>(i));
        Rng r = make_rng(static_cast<std::uint64_t>(i), 41);
        const Vec img = normal_vector(r, in.text.feature_width());
        const Stage1Scores s = stage1_scores(img, in.bank, in.universe, in.text, Temperature(uniform(r, 0.005, 2)));
        const double a = compute_alpha(s.s_fs, s.s_zs).alpha;
        check(a > 0 && a < 1 && std::abs(a - s.s_fs.value / (s.s_fs.value + s.s_zs.value)) <= 1e-12);
    }
    for (int i = 0; i < 100; ++i) {
        const Instance in = random_instance(3000 + static_cast<std::uint64_t>(i));
        Rng r = make_rng(static_cast<std::uint64_t>(i), 43);
        const double a = uniform(r, 0, 1);
        const int id = in.universe.all_ids()[static_cast<std::size_t>(uniform_int(r, 0, (int)in.universe.size() - 1))];
        const auto& lp = in.bank.learned.at(id);
        const auto& hp = in.bank.handcrafted.at(id);
        const auto f = fuse_prompt(lp, hp, a).embeddings.data();
        const auto& l = lp.embeddings.data();
        const auto& h = hp.embeddings.data();
        bool ok = true;
        for (std::size_t j = 0; j < f.size(); ++j)
            ok = ok && f[j] >= std::min(l[j], h[j]) - 1e-15 && f[j] <= std::max(l[j], h[j]) + 1e-15;
        ok = ok && max_abs_diff(fuse_prompt(lp, hp, 1.0).embeddings.data(), l) <= 1e-15;
        ok = ok && fuse_prompt(lp, hp, 0.0).embeddings.data() == h;
        check(ok);
    }
    for (int i = 0; i < 20; ++i) {
        PipelineConfig cfg = small_config(500 + static_cast<std::uint64_t>(i));
        cfg.train.max_epochs = 3;
        const SyntheticTask task = make_task(cfg);
        const World world = make_world(task, cfg);
        const auto v = checksum(world.vocab), t = checksum(world.enc.text), im = checksum(world.enc.image);
        train_context(task, world, cfg);
        check(checksum(world.vocab) == v && checksum(world.enc.text) == t && checksum(world.enc.image) == im);
    }
    for (int i = 0; i < 100; ++i) {
        const Instance in = random_instance(4000 + static_cast<std::uint64_t>(i), 4, 8, 8, 0.0);
        Rng r = make_rng(static_cast<std::uint64_t>(i), 47);
        const Vec img = normal_vector(r, in.text.feature_width());
        const Temperature tau(0.01);
        const Vec open = predict_open(img, in.bank, in.universe, in.text, tau).posterior;
        const Vec fixed = predict_fixed_alpha(img, in.bank, in.universe, in.text, tau, uniform(r, 0, 1));
        const Vec combo = predict_classifier_combo(img, in.bank, in.universe, in.text, tau);
        check(max_abs_diff(open, fixed) <= 1e-12 && max_abs_diff(open, combo) <= 1e-12);
    }
    return {failed == 0 && cases >= 1000, std::to_string(cases - failed) + "/" + std::to_string(cases) + " property cases hold"};
}

const EvalReport& find(const std::vector<EvalReport>& rs, const std::string& name) {
    for (const auto& r : rs)
        if (r.predictor == name) return r;
    fail(ErrorKind::Config, "missing report " + name);
}

Outcome behavior() {
    std::vector<EvalReport> rs;
    for (const auto& r : run_pipeline(PipelineConfig{}).reports) rs.push_back(r.rounded());
    const auto& dyn = find(rs, "dynamic");
    const auto& learned = find(rs, "learned-only");
    const auto& hand = find(rs, "handcrafted-only");
    const auto& combo = find(rs, "classifier-combo");
    const double base_gap = learned.base_acc - hand.base_acc;
    const double new_gap = hand.new_acc - learned.new_acc;
    std::ostringstream os;
    os << "base gap " << base_gap << " (need >= 5), new gap " << new_gap << " (need >= 5), H dynamic " << dyn.h << " vs learned "
       << learned.h << " vs combo " << combo.h;
    return {base_gap >= 5 && new_gap >= 5 && dyn.h >= learned.h && dyn.h >= combo.h, os.str()};
}

Outcome temperature() {
    const auto rs = run_temperature_sweep(PipelineConfig{}, {1.0, 0.1, 0.01});
    const double at_default = round_one_decimal(rs[2].h);
    const double others = std::max(round_one_decimal(rs[0].h), round_one_decimal(rs[1].h));
    std::ostringstream os;
    os << "H at tau 1/0.1/0.01 = " << format_one_decimal(rs[0].h) << "/" << format_one_decimal(rs[1].h) << "/"
       << format_one_decimal(rs[2].h);
    return {at_default >= others - 0.5, os.str()};
}

Outcome determinism() {
    AccessLog log_a, log_b;
    const std::string a = emit_reports(run_pipeline(PipelineConfig{}, &log_a).reports);
    const std::string b = emit_reports(run_pipeline(PipelineConfig{}, &log_b).reports);
    const PipelineConfig cfg;
    const SyntheticTask task = make_task(cfg);
    std::size_t new_reads = 0;
    for (int id : task.universe.new_ids) new_reads += log_a.count(id) + log_b.count(id);
    std::ostringstream os;
    os << (a == b ? "reports byte-identical" : "reports differ") << ", " << log_a.total() << " training reads, " << new_reads
       << " new-class reads";
    return {a == b && new_reads == 0 && log_a.total() > 0, os.str()};
}

} // namespace

int main() {
    int failed = 0;
    failed += !run(1, "metric reproduction", 1, metric_rows);
    failed += !run(2, "gradient suite", 10, gradients);
    failed += !run(3, "oracle equivalence", 10, oracle);
    failed += !run(4, "invariant suite", 30, invariants);
    failed += !run(5, "behavioral reproduction", 120, behavior);
    failed += !run(6, "temperature sweep shape", 300, temperature);
    failed += !run(7, "determinism and protocol fidelity", 60, determinism);
    std::printf("%d/7 criteria passed\n", 7 - failed);
    return failed == 0 ? 0 : 1;
}
