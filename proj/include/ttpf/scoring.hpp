#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "ttpf/core.hpp"

namespace ttpf {

/// Base/new partition. Posteriors over the full universe follow
/// `all_ids()`: base ids first, then new ids.
struct ClassUniverse {
    std::vector<int> base_ids;
    std::vector<int> new_ids;
    std::map<int, std::string> classnames;

    std::size_t base_count() const noexcept { return base_ids.size(); }
    std::size_t new_count() const noexcept { return new_ids.size(); }
    std::size_t size() const noexcept { return base_ids.size() + new_ids.size(); }

    std::vector<int> all_ids() const {
        std::vector<int> ids = base_ids;
        ids.insert(ids.end(), new_ids.begin(), new_ids.end());
        return ids;
    }
    bool is_base(int id) const { return std::find(base_ids.begin(), base_ids.end(), id) != base_ids.end(); }
    bool is_new(int id) const { return std::find(new_ids.begin(), new_ids.end(), id) != new_ids.end(); }
    bool contains(int id) const { return is_base(id) || is_new(id); }

    const std::string& name_of(int id) const {
        auto it = classnames.find(id);
        require(it != classnames.end(), ErrorKind::Config, "unknown class id " + std::to_string(id));
        return it->second;
    }

    /// Position of `id` inside `all_ids()`.
    std::size_t position(int id) const {
        const auto ids = all_ids();
        auto it = std::find(ids.begin(), ids.end(), id);
        require(it != ids.end(), ErrorKind::Config, "unknown class id " + std::to_string(id));
        return static_cast<std::size_t>(it - ids.begin());
    }

    void validate() const {
        require(!base_ids.empty(), ErrorKind::Config, "universe has no base classes");
        std::vector<int> ids = all_ids();
        std::sort(ids.begin(), ids.end());
        require(std::adjacent_find(ids.begin(), ids.end()) == ids.end(), ErrorKind::Config, "base and new ids overlap");
        for (int id : ids) require(classnames.contains(id), ErrorKind::Config, "class id without a name");
    }

    friend bool operator==(const ClassUniverse&, const ClassUniverse&) = default;
};

struct MCMScore {
    double value = 0.0;
    std::size_t class_set_size = 0;
};

enum class OodDecision { ID, OOD };

namespace detail {
inline void check_features(std::span<const double> image_feat, std::span<const FeatureVector> text_feats) {
    require(!text_feats.empty(), ErrorKind::Shape, "empty class set");
    for (const auto& t : text_feats) require(t.size() == image_feat.size(), ErrorKind::Shape, "feature dimension mismatch");
}
} // namespace detail

inline Vec class_posterior(std::span<const double> image_feat, std::span<const FeatureVector> text_feats, Temperature tau) {
    detail::check_features(image_feat, text_feats);
    Vec sims(text_feats.size());
    for (std::size_t k = 0; k < text_feats.size(); ++k) sims[k] = cosine_similarity(image_feat, text_feats[k]);
    return softmax_with_temperature(sims, tau);
}

inline MCMScore mcm_score(std::span<const double> image_feat, std::span<const FeatureVector> text_feats, Temperature tau) {
    const Vec p = class_posterior(image_feat, text_feats, tau);
    return {*std::max_element(p.begin(), p.end()), p.size()};
}

inline OodDecision ood_decide(const MCMScore& score, double lambda) {
    require(lambda >= 0.0 && lambda <= 1.0, ErrorKind::Range, "lambda must lie in [0, 1]");
    return score.value >= lambda ? OodDecision::ID : OodDecision::OOD;
}

/// Largest threshold keeping at least `retention` of the ID scores.
inline double calibrate_lambda(std::span<const MCMScore> id_scores, double retention) {
    require(!id_scores.empty(), ErrorKind::Shape, "no ID scores to calibrate on");
    require(retention > 0.0 && retention <= 1.0, ErrorKind::Range, "retention must lie in (0, 1]");
    std::vector<double> v;
    v.reserve(id_scores.size());
    for (const auto& s : id_scores) v.push_back(s.value);
    std::sort(v.begin(), v.end(), std::greater<>());
    const double needed = retention * static_cast<double>(v.size());
    auto keep = static_cast<std::size_t>(std::ceil(needed - 1e-9));
    keep = std::clamp<std::size_t>(keep, 1, v.size());
    return v[keep - 1];
}

} // namespace ttpf
