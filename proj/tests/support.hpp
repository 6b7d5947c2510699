#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "ttpf/harness.hpp"

namespace ttpf::testing {

inline Vec uniform_vector(Rng& rng, std::size_t n, double lo, double hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Vec v(n);
    for (double& x : v) x = dist(rng);
    return v;
}

inline double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

inline int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

inline FeatureVector random_unit(Rng& rng, std::size_t n) { return l2_normalize(normal_vector(rng, n)); }

/// Random unit vector orthogonal to every feature in `fs`; needs D > |fs|.
inline Vec orthogonal_to(Rng& rng, const std::vector<FeatureVector>& fs, std::size_t D) {
    std::vector<Vec> basis;
    auto project_out = [&](Vec& x) {
        for (int pass = 0; pass < 2; ++pass)
            for (const Vec& b : basis) {
                const double c = dot(x, b);
                for (std::size_t d = 0; d < D; ++d) x[d] -= c * b[d];
            }
    };
    for (const auto& f : fs) {
        Vec b(f.values().begin(), f.values().end());
        project_out(b);
        const double n = std::sqrt(dot(b, b));
        if (n < 1e-10) continue;
        for (double& v : b) v /= n;
        basis.push_back(std::move(b));
    }
    Vec x = normal_vector(rng, D);
    project_out(x);
    const FeatureVector u = l2_normalize(x);
    return Vec(u.values().begin(), u.values().end());
}

/// ||a - b||_inf / max(||a||_inf, ||b||_inf)
inline double relative_error(std::span<const double> a, std::span<const double> b) {
    double diff = 0, scale = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff = std::max(diff, std::abs(a[i] - b[i]));
        scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
    }
    return scale == 0 ? diff : diff / scale;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    double d = 0;
    for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
    return d;
}

// Straight-line reference implementations, written without the library's
// helpers so they can serve as oracles.

inline std::vector<long double> ref_text_feature(const PromptSequence& p, const TextEncoderParams& enc) {
    const std::size_t L = p.length(), E = p.width(), D = enc.feature_width();
    std::vector<long double> pooled(E, 0.0L);
    for (std::size_t i = 0; i < L; ++i)
        for (std::size_t e = 0; e < E; ++e) {
            long double z = 0;
            for (std::size_t j = 0; j < L; ++j) z += (long double)enc.positional_mix(i, j) * p.embeddings(j, e);
            pooled[e] += enc.activation == Activation::Tanh ? std::tanh((long double)enc.gain * z) : z;
        }
    std::vector<long double> y(D, 0.0L);
    long double nn = 0;
    for (std::size_t d = 0; d < D; ++d) {
        for (std::size_t e = 0; e < E; ++e) y[d] += (long double)enc.projection(e, d) * pooled[e] / (long double)L;
        nn += y[d] * y[d];
    }
    for (auto& v : y) v /= std::sqrt(nn);
    return y;
}

inline std::vector<long double> ref_posterior(std::span<const double> img, const std::vector<std::vector<long double>>& texts,
                                              double tau) {
    long double in = 0;
    for (double v : img) in += (long double)v * v;
    in = std::sqrt(in);
    std::vector<long double> e(texts.size());
    long double total = 0;
    for (std::size_t k = 0; k < texts.size(); ++k) {
        long double d = 0, tn = 0;
        for (std::size_t i = 0; i < img.size(); ++i) {
            d += img[i] * texts[k][i];
            tn += texts[k][i] * texts[k][i];
        }
        e[k] = std::exp(d / (in * std::sqrt(tn)) / (long double)tau);
        total += e[k];
    }
    for (auto& v : e) v /= total;
    return e;
}

inline long double ref_max(const std::vector<long double>& v) { return *std::max_element(v.begin(), v.end()); }

struct RefOpen {
    std::vector<long double> posterior;
    long double alpha;
};

/// Stage-1 scores over learned base prompts and hand-crafted new prompts,
/// alpha from their ratio, then a K'-way softmax over blended prompts.
inline RefOpen ref_predict_open(std::span<const double> img, const PromptBank& bank, const ClassUniverse& u,
                                const TextEncoderParams& enc, double tau) {
    std::vector<std::vector<long double>> fs, zs;
    for (int id : u.base_ids) fs.push_back(ref_text_feature(bank.learned.at(id), enc));
    for (int id : u.new_ids) zs.push_back(ref_text_feature(bank.handcrafted.at(id), enc));
    const long double s_fs = ref_max(ref_posterior(img, fs, tau));
    const long double s_zs = ref_max(ref_posterior(img, zs, tau));
    const long double a = s_fs / (s_fs + s_zs);
    std::vector<std::vector<long double>> fused;
    for (int id : u.all_ids()) {
        const PromptSequence& l = bank.learned.at(id);
        PromptSequence f = bank.handcrafted.at(id);
        for (std::size_t r = 0; r < f.length(); ++r)
            for (std::size_t c = 0; c < f.width(); ++c)
                f.embeddings(r, c) = (double)(a * l.embeddings(r, c) + (1 - a) * f.embeddings(r, c));
        fused.push_back(ref_text_feature(f, enc));
    }
    return {ref_posterior(img, fused, tau), a};
}

/// A small random open-class instance: universe, vocabulary, encoders, a
/// perturbed context and its prompt bank.
struct Instance {
    ClassUniverse universe;
    Vocabulary vocab{2, 0, {}};
    TextEncoderParams text;
    ContextBlock context;
    PromptBank bank;
};

inline Instance random_instance(std::uint64_t seed, int max_base = 4, int max_total = 8, std::size_t max_d = 8,
                                double context_noise = 0.3) {
    Rng rng = make_rng(seed, 99);
    const int K = uniform_int(rng, 1, max_base);
    const int Kp = uniform_int(rng, K + 1, max_total);
    Instance in;
    for (int id = 1; id <= Kp; ++id) {
        (id <= K ? in.universe.base_ids : in.universe.new_ids).push_back(id);
        in.universe.classnames[id] = synthetic_classname(id);
    }
    const std::size_t E = static_cast<std::size_t>(uniform_int(rng, 3, 8));
    const std::size_t D = static_cast<std::size_t>(uniform_int(rng, 2, static_cast<int>(max_d)));
    const std::string tmpl = uniform_int(rng, 0, 1) ? "a photo of a [CLASS]" : "a photo of a [CLASS], a type of flower.";
    std::vector<std::string> names;
    for (int id : in.universe.all_ids()) names.push_back(in.universe.name_of(id));
    in.vocab = build_vocabulary(names, {tmpl}, E, seed);
    TextEncoderOptions opts;
    opts.activation = uniform_int(rng, 0, 1) ? Activation::Tanh : Activation::Identity;
    opts.gain = uniform(rng, 0.5, 3.0);
    opts.coupling = uniform(rng, 0.0, 0.5);
    const std::size_t L = parse_template(tmpl).context_length() + 1;
    in.text = make_text_encoder(L, E, D, seed, opts);
    in.context = init_context(tmpl, in.vocab);
    if (context_noise > 0) {
        const Vec noise = normal_vector(rng, in.context.vectors.data().size(), context_noise);
        for (std::size_t i = 0; i < noise.size(); ++i) in.context.vectors.data()[i] += noise[i];
    }
    in.bank = build_prompt_bank(in.context, in.vocab, in.universe);
    return in;
}

/// Smaller standard-shaped pipeline for tests that need real training.
inline PipelineConfig small_config(std::uint64_t seed = 3) {
    PipelineConfig cfg;
    cfg.seed = seed;
    cfg.train.seed = seed;
    cfg.n_classes = 4;
    cfg.train_per_class = 8;
    cfg.test_per_class = 10;
    cfg.train.shots = 4;
    cfg.train.max_epochs = 10;
    return cfg;
}

} // namespace ttpf::testing
