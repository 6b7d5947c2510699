#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ttpf/archive.hpp"
#include "ttpf/core.hpp"
#include "ttpf/rng.hpp"

namespace ttpf {

inline constexpr std::string_view kClassPlaceholder = "[CLASS]";

/// Lowercased whitespace tokens with surrounding punctuation dropped, so
/// "[CLASS], a type of flower." yields the same words as the plain text.
inline std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::string current;
    auto flush = [&] {
        if (!current.empty()) out.push_back(std::move(current));
        current.clear();
    };
    for (char ch : text) {
        const auto u = static_cast<unsigned char>(ch);
        if (std::isalnum(u) || ch == '_' || ch == '-' || ch == '\'' || u >= 0x80) {
            current.push_back(static_cast<char>(std::tolower(u)));
        } else {
            flush();
        }
    }
    flush();
    return out;
}

/// Template tokens on either side of the single [CLASS] placeholder.
struct TemplateSkeleton {
    std::vector<std::string> prefix;
    std::vector<std::string> suffix;

    std::size_t context_length() const noexcept { return prefix.size() + suffix.size(); }
};

inline TemplateSkeleton parse_template(std::string_view tmpl) {
    const auto first = tmpl.find(kClassPlaceholder);
    require(first != std::string_view::npos, ErrorKind::Template, "template has no [CLASS] placeholder");
    require(tmpl.find(kClassPlaceholder, first + 1) == std::string_view::npos, ErrorKind::Template,
            "template has more than one [CLASS] placeholder");
    return {tokenize(tmpl.substr(0, first)), tokenize(tmpl.substr(first + kClassPlaceholder.size()))};
}

class Vocabulary {
public:
    Vocabulary(std::size_t width, std::uint64_t seed, std::vector<std::string> tokens)
        : width_(width), seed_(seed), tokens_(std::move(tokens)), table_(tokens_.size(), width) {
        require(width_ >= 2, ErrorKind::Config, "embedding width must be at least 2");
        for (std::size_t i = 0; i < tokens_.size(); ++i) {
            require(index_.emplace(tokens_[i], i).second, ErrorKind::Config, "duplicate vocabulary token " + tokens_[i]);
            const Vec row = hashed_row(tokens_[i], width_, seed_);
            std::copy(row.begin(), row.end(), table_.row(i).begin());
        }
    }

    /// Row for tokens outside the table: seeded by a hash of the token, so
    /// any template works and the table itself never changes.
    static Vec hashed_row(std::string_view token, std::size_t width, std::uint64_t seed) {
        Rng rng = make_rng(seed, fnv1a(token));
        const Vec raw = normal_vector(rng, width);
        const FeatureVector unit = l2_normalize(raw);
        Vec row(unit.values().begin(), unit.values().end());
        quantize_to_float(row);
        return row;
    }

    std::size_t width() const noexcept { return width_; }
    std::uint64_t seed() const noexcept { return seed_; }
    const std::vector<std::string>& tokens() const noexcept { return tokens_; }
    const Matrix& table() const noexcept { return table_; }
    bool contains(std::string_view token) const { return index_.contains(std::string(token)); }

    Vec embedding(std::string_view token) const {
        if (auto it = index_.find(std::string(token)); it != index_.end()) {
            auto r = table_.row(it->second);
            return Vec(r.begin(), r.end());
        }
        return hashed_row(token, width_, seed_);
    }

private:
    std::size_t width_;
    std::uint64_t seed_;
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::size_t> index_;
    Matrix table_;
};

inline Vocabulary build_vocabulary(const std::vector<std::string>& classnames, const std::vector<std::string>& templates,
                                   std::size_t embed_width, std::uint64_t seed) {
    require(!classnames.empty(), ErrorKind::Config, "no classnames");
    std::vector<std::string> tokens;
    std::unordered_map<std::string, bool> seen;
    auto add = [&](const std::string& t) {
        if (seen.emplace(t, true).second) tokens.push_back(t);
    };
    std::unordered_map<std::string, bool> names;
    for (const auto& name : classnames) {
        require(names.emplace(name, true).second, ErrorKind::Config, "duplicate classname " + name);
        require(!tokenize(name).empty(), ErrorKind::Config, "classname has no tokens: " + name);
    }
    for (const auto& t : templates) {
        const auto sk = parse_template(t);
        for (const auto& tok : sk.prefix) add(tok);
        for (const auto& tok : sk.suffix) add(tok);
    }
    for (const auto& name : classnames)
        for (const auto& tok : tokenize(name)) add(tok);
    return Vocabulary(embed_width, seed, std::move(tokens));
}

/// L x E token embeddings plus the half-open row range holding the classname.
struct PromptSequence {
    Matrix embeddings;
    std::size_t slot_begin = 0;
    std::size_t slot_end = 0;

    std::size_t length() const noexcept { return embeddings.rows(); }
    std::size_t width() const noexcept { return embeddings.cols(); }
    bool in_slot(std::size_t row) const noexcept { return row >= slot_begin && row < slot_end; }
    friend bool operator==(const PromptSequence&, const PromptSequence&) = default;
};

inline PromptSequence build_handcrafted_prompt(std::string_view tmpl, std::string_view classname, const Vocabulary& vocab) {
    const TemplateSkeleton sk = parse_template(tmpl);
    const auto name_tokens = tokenize(classname);
    require(!name_tokens.empty(), ErrorKind::Template, "classname has no tokens");
    std::vector<std::string> all = sk.prefix;
    all.insert(all.end(), name_tokens.begin(), name_tokens.end());
    all.insert(all.end(), sk.suffix.begin(), sk.suffix.end());

    PromptSequence p{Matrix(all.size(), vocab.width()), sk.prefix.size(), sk.prefix.size() + name_tokens.size()};
    for (std::size_t i = 0; i < all.size(); ++i) {
        const Vec e = vocab.embedding(all[i]);
        std::copy(e.begin(), e.end(), p.embeddings.row(i).begin());
    }
    return p;
}

enum class Activation { Identity, Tanh };

struct TextEncoderParams {
    Matrix positional_mix; // L x L
    Matrix projection;     // E x D
    std::uint64_t seed = 0;
    Activation activation = Activation::Identity;
    double gain = 1.0;

    std::size_t length() const noexcept { return positional_mix.rows(); }
    std::size_t embed_width() const noexcept { return projection.rows(); }
    std::size_t feature_width() const noexcept { return projection.cols(); }
};

struct TextEncoderOptions {
    Activation activation = Activation::Identity;
    double gain = 1.0;
    double coupling = 0.0; // weight of the uniform all-positions term
    double jitter = 0.5;   // scale of the seeded random mixing term
};

/// positional_mix = I + coupling * 1 1^T + jitter * N(0,1)/sqrt(L);
/// projection = N(0,1)/sqrt(E).
inline TextEncoderParams make_text_encoder(std::size_t length, std::size_t embed_width, std::size_t feature_width,
                                           std::uint64_t seed, const TextEncoderOptions& opts = {}) {
    require(length >= 1 && embed_width >= 1 && feature_width >= 1, ErrorKind::Config, "text encoder sizes must be positive");
    require(opts.gain > 0.0, ErrorKind::Config, "text encoder gain must be positive");
    Rng rng = make_rng(seed, fnv1a("text-encoder"));
    TextEncoderParams p;
    p.seed = seed;
    p.activation = opts.activation;
    p.gain = opts.gain;
    p.positional_mix = normal_matrix(rng, length, length, opts.jitter / std::sqrt(static_cast<double>(length)));
    for (std::size_t i = 0; i < length; ++i) {
        p.positional_mix(i, i) += 1.0;
        for (std::size_t j = 0; j < length; ++j) p.positional_mix(i, j) += opts.coupling;
    }
    p.projection = normal_matrix(rng, embed_width, feature_width, 1.0 / std::sqrt(static_cast<double>(embed_width)));
    quantize_to_float(p.positional_mix.data());
    quantize_to_float(p.projection.data());
    return p;
}

namespace detail {

inline void check_prompt_shape(const PromptSequence& prompt, const TextEncoderParams& params) {
    require(prompt.length() == params.length(), ErrorKind::Shape, "prompt length does not match positional mix");
    require(prompt.width() == params.embed_width(), ErrorKind::Shape, "prompt width does not match projection");
}

/// Pre-activation Z = P X (L x E).
inline Matrix mix_rows(const Matrix& P, const Matrix& X) {
    Matrix Z(P.rows(), X.cols());
    for (std::size_t i = 0; i < P.rows(); ++i)
        for (std::size_t j = 0; j < P.cols(); ++j) {
            const double w = P(i, j);
            if (w == 0.0) continue;
            for (std::size_t e = 0; e < X.cols(); ++e) Z(i, e) += w * X(j, e);
        }
    return Z;
}

/// Unnormalized text feature y = W^T mean_rows(act(Z)).
inline Vec text_preimage(const PromptSequence& prompt, const TextEncoderParams& params, Matrix* z_out = nullptr) {
    detail::check_prompt_shape(prompt, params);
    Matrix Z = mix_rows(params.positional_mix, prompt.embeddings);
    const std::size_t L = Z.rows(), E = Z.cols(), D = params.feature_width();
    Vec pooled(E, 0.0);
    for (std::size_t i = 0; i < L; ++i)
        for (std::size_t e = 0; e < E; ++e) {
            const double z = Z(i, e);
            pooled[e] += params.activation == Activation::Tanh ? std::tanh(params.gain * z) : z;
        }
    for (double& x : pooled) x /= static_cast<double>(L);
    Vec y(D, 0.0);
    for (std::size_t e = 0; e < E; ++e)
        for (std::size_t d = 0; d < D; ++d) y[d] += params.projection(e, d) * pooled[e];
    if (z_out) *z_out = std::move(Z);
    return y;
}

} // namespace detail

inline FeatureVector encode_text(const PromptSequence& prompt, const TextEncoderParams& params) {
    return l2_normalize(detail::text_preimage(prompt, params));
}

/// Gradient of <upstream, encode_text(prompt)> with respect to the prompt
/// embeddings, through normalization, projection, pooling, activation and mixing.
inline Matrix encode_text_grad(const PromptSequence& prompt, const TextEncoderParams& params,
                               std::span<const double> upstream) {
    require(upstream.size() == params.feature_width(), ErrorKind::Shape, "cotangent width does not match feature width");
    Matrix Z;
    const Vec y = detail::text_preimage(prompt, params, &Z);
    const std::size_t L = Z.rows(), E = Z.cols(), D = y.size();
    const double n = norm2(y);
    require(n > 0.0, ErrorKind::DegenerateInput, "text feature has zero norm");

    // d f / d y = (I - f f^T) / |y|
    Vec f(y);
    for (double& v : f) v /= n;
    const double uf = dot(upstream, f);
    Vec dy(D);
    for (std::size_t d = 0; d < D; ++d) dy[d] = (upstream[d] - uf * f[d]) / n;

    Vec dpooled(E, 0.0);
    for (std::size_t e = 0; e < E; ++e)
        for (std::size_t d = 0; d < D; ++d) dpooled[e] += params.projection(e, d) * dy[d];

    Matrix dZ(L, E);
    for (std::size_t i = 0; i < L; ++i)
        for (std::size_t e = 0; e < E; ++e) {
            double slope = 1.0;
            if (params.activation == Activation::Tanh) {
                const double t = std::tanh(params.gain * Z(i, e));
                slope = params.gain * (1.0 - t * t);
            }
            dZ(i, e) = slope * dpooled[e] / static_cast<double>(L);
        }

    // dX = P^T dZ
    Matrix dX(L, E);
    const Matrix& P = params.positional_mix;
    for (std::size_t i = 0; i < L; ++i)
        for (std::size_t j = 0; j < L; ++j) {
            const double w = P(i, j);
            if (w == 0.0) continue;
            for (std::size_t e = 0; e < E; ++e) dX(j, e) += w * dZ(i, e);
        }
    return dX;
}

struct ImageEncoderParams {
    Matrix map; // D x input_dim
    std::uint64_t seed = 0;

    std::size_t input_dim() const noexcept { return map.cols(); }
    std::size_t feature_width() const noexcept { return map.rows(); }
};

inline ImageEncoderParams make_image_encoder(std::size_t input_dim, std::size_t feature_width, std::uint64_t seed) {
    Rng rng = make_rng(seed, fnv1a("image-encoder"));
    ImageEncoderParams p{normal_matrix(rng, feature_width, input_dim, 1.0 / std::sqrt(static_cast<double>(input_dim))), seed};
    quantize_to_float(p.map.data());
    return p;
}

inline FeatureVector encode_image(std::span<const double> sample, const ImageEncoderParams& params) {
    require(sample.size() == params.input_dim(), ErrorKind::Shape, "sample dimension does not match image encoder");
    Vec y(params.feature_width(), 0.0);
    for (std::size_t d = 0; d < y.size(); ++d) y[d] = dot(params.map.row(d), sample);
    return l2_normalize(y);
}

struct Encoders {
    TextEncoderParams text;
    ImageEncoderParams image;
};

inline std::uint64_t checksum(const Matrix& m, std::uint64_t h = 0xcbf29ce484222325ULL) {
    const std::uint64_t shape[2] = {m.rows(), m.cols()};
    h = fnv1a(shape, sizeof shape, h);
    return fnv1a(m.data().data(), m.data().size() * sizeof(double), h);
}

inline std::uint64_t checksum(const Vocabulary& v) {
    std::uint64_t h = checksum(v.table());
    for (const auto& t : v.tokens()) h = fnv1a(t.data(), t.size(), h);
    return h;
}

inline std::uint64_t checksum(const TextEncoderParams& p) {
    std::uint64_t h = checksum(p.projection, checksum(p.positional_mix));
    const double extras[2] = {p.gain, p.activation == Activation::Tanh ? 1.0 : 0.0};
    return fnv1a(extras, sizeof extras, h);
}

inline std::uint64_t checksum(const ImageEncoderParams& p) { return checksum(p.map); }

inline void store(Archive& a, const Vocabulary& v) {
    a.put_scalar("vocab/width", static_cast<double>(v.width()));
    a.put_number("vocab/seed", v.seed());
    for (std::size_t i = 0; i < v.tokens().size(); ++i) a.put_vector("vocab/token/" + v.tokens()[i], v.table().row(i));
}

inline Vocabulary load_vocabulary(const Archive& a) {
    const auto width = static_cast<std::size_t>(a.get_scalar("vocab/width"));
    const auto seed = a.get_number<std::uint64_t>("vocab/seed");
    std::vector<std::string> tokens;
    const std::string prefix = "vocab/token/";
    for (const auto& t : a.records())
        if (t.name.starts_with(prefix)) tokens.push_back(t.name.substr(prefix.size()));
    Vocabulary v(width, seed, tokens);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const Vec stored = a.get_vector(prefix + tokens[i]);
        auto row = v.table().row(i);
        require(std::equal(stored.begin(), stored.end(), row.begin(), row.end()), ErrorKind::Data,
                "vocabulary row for '" + tokens[i] + "' does not match its seed");
    }
    return v;
}

inline void store(Archive& a, const Encoders& enc) {
    a.put_matrix("text/positional_mix", enc.text.positional_mix);
    a.put_matrix("text/projection", enc.text.projection);
    a.put_number("text/seed", enc.text.seed);
    a.put_number("text/gain", enc.text.gain);
    a.put_scalar("text/tanh", enc.text.activation == Activation::Tanh ? 1.0 : 0.0);
    a.put_matrix("image/map", enc.image.map);
    a.put_number("image/seed", enc.image.seed);
}

inline Encoders load_encoders(const Archive& a) {
    Encoders enc;
    enc.text.positional_mix = a.get_matrix("text/positional_mix");
    enc.text.projection = a.get_matrix("text/projection");
    enc.text.seed = a.get_number<std::uint64_t>("text/seed");
    enc.text.gain = a.get_number<double>("text/gain");
    enc.text.activation = a.get_scalar("text/tanh") != 0.0 ? Activation::Tanh : Activation::Identity;
    enc.image.map = a.get_matrix("image/map");
    enc.image.seed = a.get_number<std::uint64_t>("image/seed");
    return enc;
}

} // namespace ttpf
