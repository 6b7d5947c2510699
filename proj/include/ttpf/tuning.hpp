#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include "ttpf/encoder.hpp"
#include "ttpf/scoring.hpp"

namespace ttpf {

/// The M context vectors shared by every class prompt. `prefix_length`
/// rows sit before the classname, the rest after it.
struct ContextBlock {
    Matrix vectors;
    std::string origin_template;
    std::size_t prefix_length = 0;

    std::size_t size() const noexcept { return vectors.rows(); }
    friend bool operator==(const ContextBlock&, const ContextBlock&) = default;
};

struct TrainConfig {
    double lr_init = 0.02;
    double warmup_lr = 1e-5;
    int warmup_epochs = 1;
    int max_epochs = 200;
    int shots = 16;
    std::uint64_t seed = 7;
    Temperature tau{0.01};
    int batch_size = 0; // 0 trains full batch

    void validate() const {
        require(warmup_lr > 0.0 && lr_init > warmup_lr, ErrorKind::Config, "need lr_init > warmup_lr > 0");
        require(max_epochs >= 0, ErrorKind::Config, "max_epochs must be non-negative");
        require(warmup_epochs >= 0, ErrorKind::Config, "warmup_epochs must be non-negative");
        require(shots >= 1, ErrorKind::Config, "shots must be at least 1");
        require(batch_size >= 0, ErrorKind::Config, "batch_size must be non-negative");
    }
};

struct LabeledSample {
    Vec x;
    int label = 0;
    friend bool operator==(const LabeledSample&, const LabeledSample&) = default;
};

/// Counts every sample read during training, keyed by label.
class AccessLog {
public:
    void record(int label) { ++counts_[label]; }
    std::size_t count(int label) const {
        auto it = counts_.find(label);
        return it == counts_.end() ? 0 : it->second;
    }
    std::size_t total() const {
        std::size_t n = 0;
        for (const auto& [label, c] : counts_) n += c;
        return n;
    }
    const std::map<int, std::size_t>& counts() const noexcept { return counts_; }

private:
    std::map<int, std::size_t> counts_;
};

inline ContextBlock init_context(const std::string& tmpl, const Vocabulary& vocab) {
    require(!tmpl.empty(), ErrorKind::Template, "empty template");
    const TemplateSkeleton sk = parse_template(tmpl);
    const std::size_t M = sk.context_length();
    require(M >= 1, ErrorKind::Template, "template has no context tokens");
    ContextBlock c{Matrix(M, vocab.width()), tmpl, sk.prefix.size()};
    std::size_t r = 0;
    for (const auto* part : {&sk.prefix, &sk.suffix})
        for (const auto& tok : *part) {
            const Vec e = vocab.embedding(tok);
            std::copy(e.begin(), e.end(), c.vectors.row(r++).begin());
        }
    return c;
}

inline PromptSequence assemble_prompt(const ContextBlock& context, int class_id, const Vocabulary& vocab,
                                      const ClassUniverse& universe) {
    require(context.vectors.cols() == vocab.width(), ErrorKind::Shape, "context width does not match vocabulary");
    const auto name_tokens = tokenize(universe.name_of(class_id));
    const std::size_t M = context.size(), n = name_tokens.size(), pre = context.prefix_length;
    PromptSequence p{Matrix(M + n, vocab.width()), pre, pre + n};
    for (std::size_t i = 0; i < M; ++i) {
        const std::size_t row = i < pre ? i : i + n;
        std::copy(context.vectors.row(i).begin(), context.vectors.row(i).end(), p.embeddings.row(row).begin());
    }
    for (std::size_t j = 0; j < n; ++j) {
        const Vec e = vocab.embedding(name_tokens[j]);
        std::copy(e.begin(), e.end(), p.embeddings.row(pre + j).begin());
    }
    return p;
}

struct LossAndGrad {
    double loss = 0.0;
    Matrix grad; // M x E
};

/// Cross-entropy over base classes on precomputed image features.
inline LossAndGrad coop_loss_features(const ContextBlock& context, std::span<const FeatureVector> feats,
                                      std::span<const int> labels, const TextEncoderParams& text, const Vocabulary& vocab,
                                      const ClassUniverse& universe, Temperature tau) {
    require(!feats.empty() && feats.size() == labels.size(), ErrorKind::Shape, "batch is empty or misaligned");
    const std::size_t K = universe.base_count(), N = feats.size();
    std::vector<std::size_t> target(N);
    for (std::size_t n = 0; n < N; ++n) {
        auto it = std::find(universe.base_ids.begin(), universe.base_ids.end(), labels[n]);
        require(it != universe.base_ids.end(), ErrorKind::Config,
                "training label " + std::to_string(labels[n]) + " is not a base class");
        target[n] = static_cast<std::size_t>(it - universe.base_ids.begin());
    }

    std::vector<PromptSequence> prompts;
    std::vector<FeatureVector> text_feats;
    for (int id : universe.base_ids) {
        prompts.push_back(assemble_prompt(context, id, vocab, universe));
        text_feats.push_back(encode_text(prompts.back(), text));
    }

    // dL/dlogit = (p - onehot) / (tau N); logits are cosines of unit vectors.
    std::vector<Vec> upstream(K, Vec(text.feature_width(), 0.0));
    double loss = 0.0;
    Vec logits(K);
    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t k = 0; k < K; ++k) logits[k] = dot(feats[n], text_feats[k]);
        const Vec p = softmax_with_temperature(logits, tau);
        loss -= std::log(p[target[n]]);
        for (std::size_t k = 0; k < K; ++k) {
            const double g = (p[k] - (k == target[n] ? 1.0 : 0.0)) / (tau.value() * static_cast<double>(N));
            for (std::size_t d = 0; d < upstream[k].size(); ++d) upstream[k][d] += g * feats[n][d];
        }
    }

    LossAndGrad out{loss / static_cast<double>(N), Matrix(context.size(), context.vectors.cols())};
    for (std::size_t k = 0; k < K; ++k) {
        const Matrix g = encode_text_grad(prompts[k], text, upstream[k]);
        const PromptSequence& p = prompts[k];
        for (std::size_t row = 0, c = 0; row < p.length(); ++row) {
            if (p.in_slot(row)) continue;
            for (std::size_t e = 0; e < g.cols(); ++e) out.grad(c, e) += g(row, e);
            ++c;
        }
    }
    return out;
}

inline LossAndGrad coop_loss(const ContextBlock& context, std::span<const LabeledSample> batch, const Encoders& enc,
                             const Vocabulary& vocab, const ClassUniverse& universe, Temperature tau) {
    require(!batch.empty(), ErrorKind::Shape, "empty batch");
    std::vector<FeatureVector> feats;
    std::vector<int> labels;
    for (const auto& s : batch) {
        require(universe.is_base(s.label), ErrorKind::Config, "training label " + std::to_string(s.label) + " is not a base class");
        feats.push_back(encode_image(s.x, enc.image));
        labels.push_back(s.label);
    }
    return coop_loss_features(context, feats, labels, enc.text, vocab, universe, tau);
}

inline double lr_schedule(int epoch, const TrainConfig& cfg) {
    require(epoch >= 0 && epoch < cfg.max_epochs, ErrorKind::Range, "epoch outside [0, max_epochs)");
    if (epoch < cfg.warmup_epochs) return cfg.warmup_lr;
    const double t = epoch - cfg.warmup_epochs;
    const double T = cfg.max_epochs - cfg.warmup_epochs;
    return cfg.lr_init * 0.5 * (1.0 + std::cos(std::numbers::pi * t / T));
}

/// Plain SGD on the context; the last epoch's context is returned.
inline ContextBlock train_coop(std::span<const LabeledSample> dataset, const TrainConfig& cfg, const Encoders& enc,
                               const Vocabulary& vocab, const ClassUniverse& universe, const std::string& tmpl,
                               AccessLog* log = nullptr, std::vector<double>* loss_trace = nullptr) {
    cfg.validate();
    universe.validate();
    std::map<int, int> per_class;
    for (const auto& s : dataset) {
        if (log) log->record(s.label);
        require(universe.is_base(s.label), ErrorKind::Config, "training set contains non-base label " + std::to_string(s.label));
        ++per_class[s.label];
    }
    for (int id : universe.base_ids) {
        const int have = per_class[id];
        require(have >= cfg.shots, ErrorKind::Data,
                "class " + std::to_string(id) + " has " + std::to_string(have) + " samples, fewer than shots");
        require(have == cfg.shots, ErrorKind::Data, "class " + std::to_string(id) + " has more samples than shots");
    }

    std::vector<FeatureVector> feats;
    std::vector<int> labels;
    for (const auto& s : dataset) {
        feats.push_back(encode_image(s.x, enc.image));
        labels.push_back(s.label);
    }

    ContextBlock ctx = init_context(tmpl, vocab);
    std::vector<std::size_t> order(feats.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng = make_rng(cfg.seed, fnv1a("minibatch"));
    const std::size_t batch = cfg.batch_size > 0 ? static_cast<std::size_t>(cfg.batch_size) : feats.size();

    std::vector<FeatureVector> bf;
    std::vector<int> bl;
    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        const double lr = lr_schedule(epoch, cfg);
        if (cfg.batch_size > 0) std::shuffle(order.begin(), order.end(), shuffle_rng);
        for (std::size_t start = 0; start < order.size(); start += batch) {
            bf.clear();
            bl.clear();
            for (std::size_t i = start; i < std::min(order.size(), start + batch); ++i) {
                bf.push_back(feats[order[i]]);
                bl.push_back(labels[order[i]]);
            }
            const LossAndGrad lg = coop_loss_features(ctx, bf, bl, enc.text, vocab, universe, cfg.tau);
            if (loss_trace && start == 0) loss_trace->push_back(lg.loss);
            for (std::size_t i = 0; i < ctx.vectors.data().size(); ++i) ctx.vectors.data()[i] -= lr * lg.grad.data()[i];
        }
    }
    return ctx;
}

inline void store(Archive& a, const ContextBlock& c) {
    a.put_matrix("context", c.vectors);
    a.put_string("origin_template", c.origin_template);
    a.put_number("context/prefix_length", c.prefix_length);
}

inline ContextBlock load_context(const Archive& a) {
    ContextBlock c{a.get_matrix("context"), a.get_string("origin_template"), a.get_number<std::size_t>("context/prefix_length")};
    require(c.prefix_length <= c.size(), ErrorKind::Data, "context prefix length exceeds context size");
    return c;
}

} // namespace ttpf
