#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <unordered_map>
#include <vector>

#include "ttpf/tuning.hpp"

namespace ttpf {

/// Learned and hand-crafted prompt for every class in the universe.
struct PromptBank {
    std::map<int, PromptSequence> learned;
    std::map<int, PromptSequence> handcrafted;

    void validate(const ClassUniverse& universe) const {
        for (int id : universe.all_ids()) {
            auto l = learned.find(id);
            auto h = handcrafted.find(id);
            require(l != learned.end() && h != handcrafted.end(), ErrorKind::Config,
                    "prompt bank does not cover class " + std::to_string(id));
            require(l->second.length() == h->second.length() && l->second.width() == h->second.width(), ErrorKind::Shape,
                    "learned and hand-crafted prompts differ in shape for class " + std::to_string(id));
            require(l->second.slot_begin == h->second.slot_begin && l->second.slot_end == h->second.slot_end,
                    ErrorKind::Shape, "class slots differ for class " + std::to_string(id));
        }
    }
};

inline PromptBank build_prompt_bank(const ContextBlock& context, const Vocabulary& vocab, const ClassUniverse& universe) {
    PromptBank bank;
    for (int id : universe.all_ids()) {
        bank.learned.emplace(id, assemble_prompt(context, id, vocab, universe));
        bank.handcrafted.emplace(id, build_handcrafted_prompt(context.origin_template, universe.name_of(id), vocab));
    }
    bank.validate(universe);
    return bank;
}

struct FusionWeight {
    double alpha = 0.5;
    MCMScore s_fs;
    MCMScore s_zs;
};

struct Stage1Scores {
    MCMScore s_fs;
    MCMScore s_zs;
};

namespace detail {
inline std::vector<FeatureVector> encode_all(const std::map<int, PromptSequence>& prompts, std::span<const int> ids,
                                             const TextEncoderParams& text) {
    std::vector<FeatureVector> out;
    out.reserve(ids.size());
    for (int id : ids) out.push_back(encode_text(prompts.at(id), text));
    return out;
}
} // namespace detail

inline Stage1Scores stage1_scores(std::span<const double> image_feat, const PromptBank& bank, const ClassUniverse& universe,
                                  const TextEncoderParams& text, Temperature tau) {
    require(!universe.base_ids.empty() && !universe.new_ids.empty(), ErrorKind::Config,
            "stage-1 scoring needs both base and new classes");
    const auto fs = detail::encode_all(bank.learned, universe.base_ids, text);
    const auto zs = detail::encode_all(bank.handcrafted, universe.new_ids, text);
    return {mcm_score(image_feat, fs, tau), mcm_score(image_feat, zs, tau)};
}

inline FusionWeight compute_alpha(const MCMScore& s_fs, const MCMScore& s_zs) {
    require(s_fs.value > 0.0 && s_zs.value > 0.0, ErrorKind::Range, "MCM scores must be positive");
    return {s_fs.value / (s_fs.value + s_zs.value), s_fs, s_zs};
}

/// t = alpha * learned + (1 - alpha) * hand-crafted over the whole sequence.
inline PromptSequence fuse_prompt(const PromptSequence& learned, const PromptSequence& hand, double alpha) {
    require(learned.length() == hand.length() && learned.width() == hand.width(), ErrorKind::Shape,
            "cannot fuse prompts of different shape");
    PromptSequence out = hand;
    const auto& a = learned.embeddings.data();
    const auto& b = hand.embeddings.data();
    auto& o = out.embeddings.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = alpha * a[i] + (1.0 - alpha) * b[i];
    return out;
}

inline std::map<int, PromptSequence> fuse_prompts(const PromptBank& bank, double alpha) {
    require(alpha >= 0.0 && alpha <= 1.0, ErrorKind::Range, "alpha must lie in [0, 1]");
    std::map<int, PromptSequence> fused;
    for (const auto& [id, learned] : bank.learned) {
        auto h = bank.handcrafted.find(id);
        require(h != bank.handcrafted.end(), ErrorKind::Shape, "prompt bank is missing a hand-crafted prompt");
        fused.emplace(id, fuse_prompt(learned, h->second, alpha));
    }
    return fused;
}

inline std::map<int, PromptSequence> fuse_prompts(const PromptBank& bank, const FusionWeight& weight) {
    return fuse_prompts(bank, weight.alpha);
}

/// Text features of the fused prompts keyed by alpha quantized to 1/256.
/// Off unless a caller passes one in; predictions then use the bin centre.
class AlphaCache {
public:
    static constexpr int kBins = 256;
    using Features = std::vector<FeatureVector>;

    static int bin(double alpha) { return static_cast<int>(std::lround(alpha * kBins)); }

    std::shared_ptr<const Features> find(int b) const {
        std::shared_lock lock(mutex_);
        auto it = entries_.find(b);
        return it == entries_.end() ? nullptr : it->second;
    }

    std::shared_ptr<const Features> insert(int b, Features feats) {
        std::unique_lock lock(mutex_);
        auto [it, inserted] = entries_.emplace(b, std::make_shared<const Features>(std::move(feats)));
        return it->second;
    }

    std::size_t size() const {
        std::shared_lock lock(mutex_);
        return entries_.size();
    }

private:
    mutable std::shared_mutex mutex_;
    std::unordered_map<int, std::shared_ptr<const Features>> entries_;
};

namespace detail {
inline std::vector<FeatureVector> fused_features(const PromptBank& bank, const ClassUniverse& universe,
                                                 const TextEncoderParams& text, double alpha) {
    std::vector<FeatureVector> feats;
    for (int id : universe.all_ids())
        feats.push_back(encode_text(fuse_prompt(bank.learned.at(id), bank.handcrafted.at(id), alpha), text));
    return feats;
}
} // namespace detail

struct OpenPrediction {
    Vec posterior; // over universe.all_ids()
    FusionWeight weight;
};

inline OpenPrediction predict_open(std::span<const double> image_feat, const PromptBank& bank, const ClassUniverse& universe,
                                   const TextEncoderParams& text, Temperature tau,
                                   std::optional<Temperature> stage2_tau = std::nullopt, AlphaCache* cache = nullptr) {
    const Stage1Scores s = stage1_scores(image_feat, bank, universe, text, tau);
    const FusionWeight w = compute_alpha(s.s_fs, s.s_zs);
    const Temperature t2 = stage2_tau.value_or(tau);
    if (cache) {
        const int b = AlphaCache::bin(w.alpha);
        auto feats = cache->find(b);
        if (!feats) feats = cache->insert(b, detail::fused_features(bank, universe, text, double(b) / AlphaCache::kBins));
        return {class_posterior(image_feat, *feats, t2), w};
    }
    return {class_posterior(image_feat, detail::fused_features(bank, universe, text, w.alpha), t2), w};
}

inline Vec predict_fixed_alpha(std::span<const double> image_feat, const PromptBank& bank, const ClassUniverse& universe,
                               const TextEncoderParams& text, Temperature tau, double alpha) {
    require(alpha >= 0.0 && alpha <= 1.0, ErrorKind::Range, "alpha must lie in [0, 1]");
    return class_posterior(image_feat, detail::fused_features(bank, universe, text, alpha), tau);
}

/// One softmax over learned base-class features and hand-crafted new-class features.
inline Vec predict_classifier_combo(std::span<const double> image_feat, const PromptBank& bank,
                                    const ClassUniverse& universe, const TextEncoderParams& text, Temperature tau) {
    require(!universe.new_ids.empty(), ErrorKind::Config, "classifier combination needs new classes");
    auto feats = detail::encode_all(bank.learned, universe.base_ids, text);
    const auto zs = detail::encode_all(bank.handcrafted, universe.new_ids, text);
    feats.insert(feats.end(), zs.begin(), zs.end());
    return class_posterior(image_feat, feats, tau);
}

} // namespace ttpf
