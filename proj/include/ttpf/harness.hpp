#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ttpf/fusion.hpp"

namespace ttpf {

// ---------------------------------------------------------------- tasks

struct SyntheticTask {
    ClassUniverse universe;
    std::map<int, Vec> prototypes;
    double noise_scale = 0.0;
    std::vector<LabeledSample> train_pool;
    std::vector<LabeledSample> test_pool;
    std::uint64_t seed = 0;

    std::size_t dim() const { return prototypes.empty() ? 0 : prototypes.begin()->second.size(); }
};

inline std::string synthetic_classname(int id) {
    std::ostringstream os;
    os << "class_" << std::setw(2) << std::setfill('0') << id;
    return os.str();
}

inline ClassUniverse split_base_new(const std::vector<int>& class_ids, std::uint64_t seed) {
    require(class_ids.size() >= 2, ErrorKind::Config, "need at least two classes to split");
    std::vector<int> ids = class_ids;
    Rng rng = make_rng(seed, fnv1a("split"));
    std::shuffle(ids.begin(), ids.end(), rng);
    const std::size_t n_base = (ids.size() + 1) / 2;
    ClassUniverse u;
    u.base_ids.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_base));
    u.new_ids.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_base), ids.end());
    std::sort(u.base_ids.begin(), u.base_ids.end());
    std::sort(u.new_ids.begin(), u.new_ids.end());
    for (int id : class_ids) u.classnames[id] = synthetic_classname(id);
    return u;
}

/// Unit prototypes plus per-coordinate Gaussian noise of standard deviation
/// `noise_scale`. Training pool holds base classes only.
inline SyntheticTask generate_synthetic_task(int n_classes, int dim, double noise_scale, int train_per_class,
                                             int test_per_class, std::uint64_t seed) {
    require(n_classes >= 2 && dim >= 2, ErrorKind::Config, "need n_classes >= 2 and dim >= 2");
    require(noise_scale > 0.0 && std::isfinite(noise_scale), ErrorKind::Config, "noise_scale must be positive");
    require(train_per_class >= 1 && test_per_class >= 1, ErrorKind::Config, "sample counts must be positive");
    std::vector<int> ids(static_cast<std::size_t>(n_classes));
    std::iota(ids.begin(), ids.end(), 1);

    SyntheticTask task;
    task.universe = split_base_new(ids, seed);
    task.noise_scale = noise_scale;
    task.seed = seed;
    for (int id : ids) {
        Rng rng = make_rng(seed, fnv1a("prototype/" + std::to_string(id)));
        const FeatureVector p = l2_normalize(normal_vector(rng, static_cast<std::size_t>(dim)));
        Vec proto(p.values().begin(), p.values().end());
        quantize_to_float(proto);
        task.prototypes[id] = std::move(proto);
    }
    auto draw = [&](int id, int count, const char* pool, std::vector<LabeledSample>& out) {
        Rng rng = make_rng(seed, fnv1a(std::string(pool) + "/" + std::to_string(id)));
        for (int i = 0; i < count; ++i) {
            Vec x = normal_vector(rng, static_cast<std::size_t>(dim), noise_scale);
            for (std::size_t d = 0; d < x.size(); ++d) x[d] += task.prototypes[id][d];
            quantize_to_float(x);
            out.push_back({std::move(x), id});
        }
    };
    for (int id : task.universe.base_ids) draw(id, train_per_class, "train", task.train_pool);
    for (int id : task.universe.all_ids()) draw(id, test_per_class, "test", task.test_pool);
    return task;
}

inline std::vector<LabeledSample> sample_few_shot(const SyntheticTask& task, int shots, std::uint64_t seed) {
    require(shots >= 1, ErrorKind::Config, "shots must be at least 1");
    std::vector<LabeledSample> out;
    for (int id : task.universe.base_ids) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < task.train_pool.size(); ++i)
            if (task.train_pool[i].label == id) idx.push_back(i);
        require(idx.size() >= static_cast<std::size_t>(shots), ErrorKind::Data,
                "class " + std::to_string(id) + " has fewer than " + std::to_string(shots) + " training samples");
        Rng rng = make_rng(seed, fnv1a("few-shot/" + std::to_string(id)));
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(static_cast<std::size_t>(shots));
        std::sort(idx.begin(), idx.end());
        for (auto i : idx) out.push_back(task.train_pool[i]);
    }
    return out;
}

inline void store(Archive& a, const SyntheticTask& task) {
    a.put_number("task/seed", task.seed);
    a.put_number("task/noise_scale", task.noise_scale);
    std::vector<double> base(task.universe.base_ids.begin(), task.universe.base_ids.end());
    std::vector<double> fresh(task.universe.new_ids.begin(), task.universe.new_ids.end());
    a.put_vector("task/base_ids", base);
    a.put_vector("task/new_ids", fresh);
    for (const auto& [id, name] : task.universe.classnames) a.put_string("task/classname/" + std::to_string(id), name);
    for (const auto& [id, p] : task.prototypes) a.put_vector("task/prototype/" + std::to_string(id), p);
    auto put_pool = [&](const std::string& key, const std::vector<LabeledSample>& pool) {
        const std::size_t dim = task.dim();
        Matrix x(pool.size(), dim);
        Vec y(pool.size());
        for (std::size_t i = 0; i < pool.size(); ++i) {
            std::copy(pool[i].x.begin(), pool[i].x.end(), x.row(i).begin());
            y[i] = pool[i].label;
        }
        a.put_matrix(key + "/x", x);
        a.put_vector(key + "/y", y);
    };
    put_pool("task/train", task.train_pool);
    put_pool("task/test", task.test_pool);
}

inline SyntheticTask load_task(const Archive& a) {
    SyntheticTask task;
    task.seed = a.get_number<std::uint64_t>("task/seed");
    task.noise_scale = a.get_number<double>("task/noise_scale");
    for (double v : a.get_vector("task/base_ids")) task.universe.base_ids.push_back(static_cast<int>(v));
    for (double v : a.get_vector("task/new_ids")) task.universe.new_ids.push_back(static_cast<int>(v));
    for (int id : task.universe.all_ids()) {
        task.universe.classnames[id] = a.get_string("task/classname/" + std::to_string(id));
        task.prototypes[id] = a.get_vector("task/prototype/" + std::to_string(id));
    }
    task.universe.validate();
    auto get_pool = [&](const std::string& key) {
        const Matrix x = a.get_matrix(key + "/x");
        const Vec y = a.get_vector(key + "/y");
        require(x.rows() == y.size(), ErrorKind::Data, "archive pool " + key + " is misaligned");
        std::vector<LabeledSample> pool;
        for (std::size_t i = 0; i < x.rows(); ++i) pool.push_back({Vec(x.row(i).begin(), x.row(i).end()), static_cast<int>(y[i])});
        return pool;
    };
    task.train_pool = get_pool("task/train");
    task.test_pool = get_pool("task/test");
    return task;
}

// ---------------------------------------------------------------- world

/// Sizes and shape of the frozen toy encoders.
struct WorldConfig {
    std::size_t embed_width = 32;
    std::size_t feature_width = 16;
    TextEncoderOptions text{Activation::Tanh, 8.0, 0.0, 0.1};
    double align = 0.3;        // share of an image feature lying in the text span
    double misalignment = 0.2; // per-class seeded offset between image and text directions
};

struct World {
    Vocabulary vocab;
    Encoders enc;
};

/// Builds vocabulary and encoders, then a linear image map that reads a
/// sample against every class prototype and writes the result along
/// normalize(t_k + misalignment * e_k), t_k the hand-crafted text feature
/// and e_k a seeded unit offset. A term along g, a unit direction orthogonal
/// to every text feature, is added with equal weight for all prototypes so
/// that at a prototype the text-span part carries `align` of the norm.
inline World build_world(const SyntheticTask& task, const std::string& tmpl, const WorldConfig& wc, std::uint64_t seed) {
    require(wc.align > 0.0 && wc.align <= 1.0, ErrorKind::Config, "align must lie in (0, 1]");
    require(wc.misalignment >= 0.0, ErrorKind::Config, "misalignment must be non-negative");
    const ClassUniverse& u = task.universe;
    std::vector<std::string> names;
    for (int id : u.all_ids()) names.push_back(u.name_of(id));
    World w{build_vocabulary(names, {tmpl}, wc.embed_width, seed), {}};

    const TemplateSkeleton sk = parse_template(tmpl);
    std::size_t length = 0;
    for (int id : u.all_ids()) {
        const std::size_t L = sk.context_length() + tokenize(u.name_of(id)).size();
        require(length == 0 || length == L, ErrorKind::Config, "classnames tokenize to different lengths");
        length = L;
    }
    w.enc.text = make_text_encoder(length, wc.embed_width, wc.feature_width, seed, wc.text);

    const std::vector<int> ids = u.all_ids();
    const auto n = static_cast<Eigen::Index>(ids.size());
    const auto D = static_cast<Eigen::Index>(wc.feature_width), dim = static_cast<Eigen::Index>(task.dim());
    require(dim >= n, ErrorKind::Config, "sample dimension must be at least the number of classes");
    Eigen::MatrixXd text(n, D);
    for (Eigen::Index k = 0; k < n; ++k) {
        const FeatureVector f = encode_text(build_handcrafted_prompt(tmpl, u.name_of(ids[k]), w.vocab), w.enc.text);
        for (Eigen::Index d = 0; d < D; ++d) text(k, d) = f[d];
    }

    Rng rng = make_rng(seed, fnv1a("image-alignment"));
    Eigen::VectorXd gap = Eigen::VectorXd::Zero(D);
    if (wc.align < 1.0) {
        Eigen::VectorXd g(D);
        const Vec raw = normal_vector(rng, D);
        for (Eigen::Index d = 0; d < D; ++d) g[d] = raw[d];
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(text, Eigen::ComputeFullV);
        const Eigen::Index rank = svd.rank();
        require(rank < D, ErrorKind::Config, "feature_width must exceed the class count when align < 1");
        const Eigen::MatrixXd span = svd.matrixV().leftCols(rank);
        g -= span * (span.transpose() * g);
        gap = g.normalized();
    }
    Eigen::MatrixXd dirs(n, D);
    for (Eigen::Index k = 0; k < n; ++k) {
        const Vec e = normal_vector(rng, D);
        Eigen::RowVectorXd off(D);
        for (Eigen::Index d = 0; d < D; ++d) off[d] = e[d];
        dirs.row(k) = (text.row(k) + wc.misalignment * off.normalized()).normalized();
    }

    Eigen::MatrixXd protos(n, dim);
    for (Eigen::Index k = 0; k < n; ++k)
        for (Eigen::Index d = 0; d < dim; ++d) protos(k, d) = task.prototypes.at(ids[k])[d];
    const Eigen::MatrixXd reader = dirs.completeOrthogonalDecomposition().pseudoInverse() * protos; // D x dim
    const Eigen::VectorXd ones_reader = protos.completeOrthogonalDecomposition().pseudoInverse() * Eigen::VectorXd::Ones(n);
    double mean_norm = 0.0;
    for (Eigen::Index k = 0; k < n; ++k) mean_norm += (reader * protos.row(k).transpose()).norm() / static_cast<double>(n);
    const double gap_weight = std::sqrt(1.0 - wc.align * wc.align) / wc.align * mean_norm;
    const Eigen::MatrixXd map = reader + gap_weight * gap * ones_reader.transpose();

    w.enc.image.seed = seed;
    w.enc.image.map = Matrix(static_cast<std::size_t>(D), static_cast<std::size_t>(dim));
    for (Eigen::Index d = 0; d < D; ++d)
        for (Eigen::Index j = 0; j < dim; ++j) w.enc.image.map(d, j) = map(d, j);
    quantize_to_float(w.enc.image.map.data());
    return w;
}

// ---------------------------------------------------------------- reports

struct ClassAccuracy {
    int id = 0;
    std::string name;
    bool base = true;
    double acc = 0.0;
    friend bool operator==(const ClassAccuracy&, const ClassAccuracy&) = default;
};

struct EvalReport {
    std::string predictor;
    std::string alpha_mode;
    std::uint64_t seed = 0;
    int shots = 0;
    int epochs = 0;
    double tau = 0.01;
    double base_acc = 0.0;
    double new_acc = 0.0;
    double h = 0.0;
    std::optional<double> mean_alpha_base;
    std::optional<double> mean_alpha_new;
    std::vector<ClassAccuracy> per_class;

    /// Values exactly as they appear once written: accuracies to one decimal,
    /// mean alphas to four.
    EvalReport rounded() const {
        EvalReport r = *this;
        r.base_acc = round_one_decimal(base_acc);
        r.new_acc = round_one_decimal(new_acc);
        r.h = round_one_decimal(h);
        auto r4 = [](std::optional<double> v) -> std::optional<double> {
            if (!v) return v;
            return std::stod(fixed4(*v));
        };
        r.mean_alpha_base = r4(mean_alpha_base);
        r.mean_alpha_new = r4(mean_alpha_new);
        for (auto& c : r.per_class) c.acc = round_one_decimal(c.acc);
        return r;
    }

    static std::string fixed4(double v) {
        std::ostringstream os;
        os << std::fixed << std::setprecision(4) << v;
        return os.str();
    }

    friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

/// A predictor maps an image feature to a K'-way posterior and, when it
/// fuses prompts, the alpha it used.
struct Prediction {
    Vec posterior;
    std::optional<double> alpha;
};
using Predictor = std::function<Prediction(const FeatureVector&, const LabeledSample&)>;

inline EvalReport evaluate_open(const Predictor& predictor, const SyntheticTask& task, const ClassUniverse& universe,
                                const ImageEncoderParams& image) {
    const std::vector<int> ids = universe.all_ids();
    std::map<int, std::pair<std::size_t, std::size_t>> tally; // correct, total
    double alpha_sum[2] = {0, 0};
    std::size_t alpha_n[2] = {0, 0};
    std::size_t correct[2] = {0, 0}, total[2] = {0, 0};
    for (const auto& s : task.test_pool) {
        const FeatureVector f = encode_image(s.x, image);
        const Prediction p = predictor(f, s);
        require(p.posterior.size() == ids.size(), ErrorKind::Config, "predictor output does not cover the universe");
        const bool hit = ids[argmax(p.posterior)] == s.label;
        const int b = universe.is_base(s.label) ? 0 : 1;
        correct[b] += hit;
        ++total[b];
        tally[s.label].first += hit;
        ++tally[s.label].second;
        if (p.alpha) {
            alpha_sum[b] += *p.alpha;
            ++alpha_n[b];
        }
    }
    auto pct = [](std::size_t c, std::size_t t) { return t == 0 ? 0.0 : 100.0 * static_cast<double>(c) / static_cast<double>(t); };
    EvalReport r;
    r.base_acc = pct(correct[0], total[0]);
    r.new_acc = pct(correct[1], total[1]);
    r.h = harmonic_mean(r.base_acc, r.new_acc);
    if (alpha_n[0]) r.mean_alpha_base = alpha_sum[0] / static_cast<double>(alpha_n[0]);
    if (alpha_n[1]) r.mean_alpha_new = alpha_sum[1] / static_cast<double>(alpha_n[1]);
    std::vector<int> sorted = ids;
    std::sort(sorted.begin(), sorted.end());
    for (int id : sorted) {
        const auto [c, t] = tally[id];
        r.per_class.push_back({id, universe.name_of(id), universe.is_base(id), pct(c, t)});
    }
    return r;
}

inline std::string format_number(double x) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, res.ptr);
}

inline std::string emit_report(const EvalReport& r) {
    std::ostringstream os;
    os << "report=" << r.predictor << '\n'
       << "alpha_mode=" << r.alpha_mode << '\n'
       << "seed=" << r.seed << '\n'
       << "shots=" << r.shots << '\n'
       << "epochs=" << r.epochs << '\n'
       << "tau=" << format_number(r.tau) << '\n'
       << "base_acc=" << format_one_decimal(r.base_acc) << '\n'
       << "new_acc=" << format_one_decimal(r.new_acc) << '\n'
       << "h=" << format_one_decimal(r.h) << '\n'
       << "mean_alpha_base=" << (r.mean_alpha_base ? EvalReport::fixed4(*r.mean_alpha_base) : "na") << '\n'
       << "mean_alpha_new=" << (r.mean_alpha_new ? EvalReport::fixed4(*r.mean_alpha_new) : "na") << '\n'
       << "classes=" << r.per_class.size() << '\n';
    for (const auto& c : r.per_class) {
        const std::string key = "class." + std::to_string(c.id);
        os << key << ".name=" << c.name << '\n'
           << key << ".split=" << (c.base ? "base" : "new") << '\n'
           << key << ".acc=" << format_one_decimal(c.acc) << '\n';
    }
    return os.str();
}

inline std::string emit_reports(const std::vector<EvalReport>& reports) {
    std::string out;
    for (std::size_t i = 0; i < reports.size(); ++i) {
        if (i) out += '\n';
        out += emit_report(reports[i]);
    }
    return out;
}

namespace detail {

template <typename T>
T parse_number(const std::string& s, const std::string& what) {
    T x{};
    const auto res = std::from_chars(s.data(), s.data() + s.size(), x);
    require(res.ec == std::errc() && res.ptr == s.data() + s.size(), ErrorKind::Data, "bad value for " + what + ": " + s);
    return x;
}

inline std::optional<double> parse_optional(const std::string& s, const std::string& what) {
    if (s == "na") return std::nullopt;
    return parse_number<double>(s, what);
}

} // namespace detail

inline std::vector<EvalReport> read_reports(const std::string& text) {
    std::vector<EvalReport> out;
    std::istringstream in(text);
    std::string line;
    std::map<int, ClassAccuracy> classes;
    auto finish = [&] {
        if (out.empty()) return;
        for (auto& [id, c] : classes) out.back().per_class.push_back(c);
        classes.clear();
    };
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        require(eq != std::string::npos, ErrorKind::Data, "report line without '=': " + line);
        const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
        if (key == "report") {
            finish();
            out.emplace_back();
            out.back().predictor = value;
            continue;
        }
        require(!out.empty(), ErrorKind::Data, "report must start with report=");
        EvalReport& r = out.back();
        if (key == "alpha_mode") r.alpha_mode = value;
        else if (key == "seed") r.seed = detail::parse_number<std::uint64_t>(value, key);
        else if (key == "shots") r.shots = detail::parse_number<int>(value, key);
        else if (key == "epochs") r.epochs = detail::parse_number<int>(value, key);
        else if (key == "tau") r.tau = detail::parse_number<double>(value, key);
        else if (key == "base_acc") r.base_acc = detail::parse_number<double>(value, key);
        else if (key == "new_acc") r.new_acc = detail::parse_number<double>(value, key);
        else if (key == "h") r.h = detail::parse_number<double>(value, key);
        else if (key == "mean_alpha_base") r.mean_alpha_base = detail::parse_optional(value, key);
        else if (key == "mean_alpha_new") r.mean_alpha_new = detail::parse_optional(value, key);
        else if (key == "classes") continue;
        else if (key.starts_with("class.")) {
            const auto dot2 = key.find('.', 6);
            require(dot2 != std::string::npos, ErrorKind::Data, "bad class key " + key);
            const int id = detail::parse_number<int>(key.substr(6, dot2 - 6), key);
            const std::string field = key.substr(dot2 + 1);
            ClassAccuracy& c = classes[id];
            c.id = id;
            if (field == "name") c.name = value;
            else if (field == "split") c.base = value == "base";
            else if (field == "acc") c.acc = detail::parse_number<double>(value, key);
            else fail(ErrorKind::Data, "unknown class field " + field);
        } else {
            fail(ErrorKind::Data, "unknown report key " + key);
        }
    }
    finish();
    return out;
}

inline EvalReport read_report(const std::string& text) {
    auto reports = read_reports(text);
    require(reports.size() == 1, ErrorKind::Data, "expected exactly one report");
    return reports.front();
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrorKind::Io, "cannot open " + path + " for writing");
    out << text;
    require(out.good(), ErrorKind::Io, "write failed for " + path);
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrorKind::Io, "cannot open " + path);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

// ---------------------------------------------------------------- config

/// How the evaluated predictor picks alpha.
struct AlphaMode {
    enum class Kind { Dynamic, Fixed, Combo, LearnedOnly, HandcraftedOnly } kind = Kind::Dynamic;
    double fixed = 0.5;

    static AlphaMode parse(const std::string& s) {
        if (s == "dynamic") return {Kind::Dynamic};
        if (s == "combo") return {Kind::Combo};
        if (s == "learned") return {Kind::LearnedOnly, 1.0};
        if (s == "handcrafted") return {Kind::HandcraftedOnly, 0.0};
        if (s.starts_with("fixed:")) {
            const std::string v = s.substr(6);
            double a = 0;
            const auto res = std::from_chars(v.data(), v.data() + v.size(), a);
            require(res.ec == std::errc() && res.ptr == v.data() + v.size(), ErrorKind::Config, "bad fixed alpha: " + v);
            require(a >= 0.0 && a <= 1.0, ErrorKind::Range, "fixed alpha must lie in [0, 1]");
            return {Kind::Fixed, a};
        }
        fail(ErrorKind::Config, "unknown alpha mode: " + s);
    }

    std::string name() const {
        switch (kind) {
        case Kind::Dynamic: return "dynamic";
        case Kind::Fixed: return "fixed-alpha";
        case Kind::Combo: return "classifier-combo";
        case Kind::LearnedOnly: return "learned-only";
        case Kind::HandcraftedOnly: return "handcrafted-only";
        }
        return "unknown";
    }

    std::string spec() const {
        switch (kind) {
        case Kind::Dynamic: return "dynamic";
        case Kind::Fixed: return "fixed:" + format_number(fixed);
        case Kind::Combo: return "combo";
        case Kind::LearnedOnly: return "learned";
        case Kind::HandcraftedOnly: return "handcrafted";
        }
        return "unknown";
    }
};

struct PipelineConfig {
    std::uint64_t seed = 7;
    int n_classes = 8;
    int dim = 16;
    double noise_scale = 0.35;
    int train_per_class = 64;
    int test_per_class = 100;
    std::string tmpl = "a photo of a [CLASS]";
    TrainConfig train;
    std::optional<double> stage2_tau;
    WorldConfig world;
    std::vector<AlphaMode> predictors = {AlphaMode::parse("dynamic"), AlphaMode::parse("fixed:0.5"),
                                         AlphaMode::parse("combo"), AlphaMode::parse("learned"),
                                         AlphaMode::parse("handcrafted")};
    std::vector<double> temperatures = {1.0, 0.1, 0.01};
    std::vector<int> shot_counts = {1, 2, 4, 8, 16};
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

} // namespace detail

/// Applies one key=value pair. Shared by the config reader and CLI overrides.
inline void apply_setting(PipelineConfig& cfg, const std::string& key, const std::string& value) {
    auto num = [&]<typename T>(T& dst) {
        const auto res = std::from_chars(value.data(), value.data() + value.size(), dst);
        require(res.ec == std::errc() && res.ptr == value.data() + value.size(), ErrorKind::Config,
                "bad value for " + key + ": '" + value + "'");
    };
    auto size = [&](std::size_t& dst) { num(dst); };
    if (key == "seed") { num(cfg.seed); cfg.train.seed = cfg.seed; }
    else if (key == "n_classes") num(cfg.n_classes);
    else if (key == "dim") num(cfg.dim);
    else if (key == "noise_scale") num(cfg.noise_scale);
    else if (key == "train_per_class") num(cfg.train_per_class);
    else if (key == "test_per_class") num(cfg.test_per_class);
    else if (key == "template") cfg.tmpl = value;
    else if (key == "shots") num(cfg.train.shots);
    else if (key == "epochs") num(cfg.train.max_epochs);
    else if (key == "lr") num(cfg.train.lr_init);
    else if (key == "warmup_lr") num(cfg.train.warmup_lr);
    else if (key == "warmup_epochs") num(cfg.train.warmup_epochs);
    else if (key == "batch_size") num(cfg.train.batch_size);
    else if (key == "tau") { double t = 0; num(t); cfg.train.tau = Temperature(t); }
    else if (key == "stage2_tau") { double t = 0; num(t); cfg.stage2_tau = Temperature(t).value(); }
    else if (key == "embed_width") size(cfg.world.embed_width);
    else if (key == "feature_width") size(cfg.world.feature_width);
    else if (key == "text_activation") {
        require(value == "identity" || value == "tanh", ErrorKind::Config, "text_activation must be identity or tanh");
        cfg.world.text.activation = value == "tanh" ? Activation::Tanh : Activation::Identity;
    }
    else if (key == "text_gain") num(cfg.world.text.gain);
    else if (key == "mix_coupling") num(cfg.world.text.coupling);
    else if (key == "mix_jitter") num(cfg.world.text.jitter);
    else if (key == "align") num(cfg.world.align);
    else if (key == "misalignment") num(cfg.world.misalignment);
    else if (key == "predictors") {
        cfg.predictors.clear();
        for (const auto& p : detail::split_list(value)) cfg.predictors.push_back(AlphaMode::parse(p));
        require(!cfg.predictors.empty(), ErrorKind::Config, "predictors list is empty");
    } else if (key == "temperatures") {
        cfg.temperatures.clear();
        for (const auto& t : detail::split_list(value)) {
            double x = 0;
            const auto res = std::from_chars(t.data(), t.data() + t.size(), x);
            require(res.ec == std::errc() && res.ptr == t.data() + t.size(), ErrorKind::Config, "bad temperature " + t);
            cfg.temperatures.push_back(Temperature(x).value());
        }
    } else if (key == "shot_counts") {
        cfg.shot_counts.clear();
        for (const auto& t : detail::split_list(value)) {
            int x = 0;
            const auto res = std::from_chars(t.data(), t.data() + t.size(), x);
            require(res.ec == std::errc() && res.ptr == t.data() + t.size() && x >= 1, ErrorKind::Config, "bad shot count " + t);
            cfg.shot_counts.push_back(x);
        }
    } else {
        fail(ErrorKind::Config, "unknown key '" + key + "'");
    }
}

inline PipelineConfig parse_config(const std::string& text, PipelineConfig cfg = {}) {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        try {
            const auto eq = line.find('=');
            require(eq != std::string::npos, ErrorKind::Config, "expected key=value");
            const std::string key = detail::trim(line.substr(0, eq));
            require(!key.empty(), ErrorKind::Config, "empty key");
            apply_setting(cfg, key, detail::trim(line.substr(eq + 1)));
        } catch (const Error& e) {
            fail(ErrorKind::Config, "line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return cfg;
}

inline PipelineConfig load_config(const std::string& path) { return parse_config(read_text_file(path)); }

// ---------------------------------------------------------------- pipeline

inline SyntheticTask make_task(const PipelineConfig& cfg) {
    return generate_synthetic_task(cfg.n_classes, cfg.dim, cfg.noise_scale, cfg.train_per_class, cfg.test_per_class, cfg.seed);
}

inline World make_world(const SyntheticTask& task, const PipelineConfig& cfg) {
    return build_world(task, cfg.tmpl, cfg.world, cfg.seed);
}

inline ContextBlock train_context(const SyntheticTask& task, const World& world, const PipelineConfig& cfg,
                                  AccessLog* log = nullptr) {
    TrainConfig tc = cfg.train;
    tc.seed = cfg.seed;
    const auto shots = sample_few_shot(task, tc.shots, cfg.seed);
    return train_coop(shots, tc, world.enc, world.vocab, task.universe, cfg.tmpl, log);
}

inline Predictor make_predictor(const AlphaMode& mode, const PromptBank& bank, const ClassUniverse& universe,
                                const TextEncoderParams& text, Temperature tau, std::optional<Temperature> stage2_tau) {
    using K = AlphaMode::Kind;
    switch (mode.kind) {
    case K::Dynamic:
        return [&bank, &universe, &text, tau, stage2_tau](const FeatureVector& f, const LabeledSample&) {
            OpenPrediction p = predict_open(f, bank, universe, text, tau, stage2_tau);
            return Prediction{std::move(p.posterior), p.weight.alpha};
        };
    case K::Combo:
        return [&bank, &universe, &text, tau](const FeatureVector& f, const LabeledSample&) {
            return Prediction{predict_classifier_combo(f, bank, universe, text, tau), std::nullopt};
        };
    default:
        return [&bank, &universe, &text, tau, a = mode.fixed](const FeatureVector& f, const LabeledSample&) {
            return Prediction{predict_fixed_alpha(f, bank, universe, text, tau, a), std::nullopt};
        };
    }
}

inline EvalReport evaluate_mode(const AlphaMode& mode, const SyntheticTask& task, const World& world,
                                const PromptBank& bank, const PipelineConfig& cfg, Temperature tau) {
    std::optional<Temperature> t2;
    if (cfg.stage2_tau) t2 = Temperature(*cfg.stage2_tau);
    const Predictor p = make_predictor(mode, bank, task.universe, world.enc.text, tau, t2);
    EvalReport r = evaluate_open(p, task, task.universe, world.enc.image);
    r.predictor = mode.name();
    r.alpha_mode = mode.spec();
    r.seed = cfg.seed;
    r.shots = cfg.train.shots;
    r.epochs = cfg.train.max_epochs;
    r.tau = tau.value();
    return r;
}

struct PipelineResult {
    SyntheticTask task;
    World world;
    ContextBlock context;
    std::vector<EvalReport> reports;
};

inline std::vector<EvalReport> evaluate_modes(const std::vector<AlphaMode>& modes, const SyntheticTask& task,
                                              const World& world, const ContextBlock& context, const PipelineConfig& cfg) {
    const PromptBank bank = build_prompt_bank(context, world.vocab, task.universe);
    std::vector<EvalReport> out;
    for (const auto& m : modes) out.push_back(evaluate_mode(m, task, world, bank, cfg, cfg.train.tau));
    return out;
}

/// generate -> split -> sample -> train -> prompt bank -> every requested predictor.
inline PipelineResult run_pipeline(const PipelineConfig& cfg, AccessLog* log = nullptr) {
    SyntheticTask task = make_task(cfg);
    World world = make_world(task, cfg);
    ContextBlock ctx = train_context(task, world, cfg, log);
    auto reports = evaluate_modes(cfg.predictors, task, world, ctx, cfg);
    return {std::move(task), std::move(world), std::move(ctx), std::move(reports)};
}

/// Dynamic fusion at each temperature; training happens once.
inline std::vector<EvalReport> run_temperature_sweep(const PipelineConfig& cfg, const std::vector<double>& taus,
                                                     ContextBlock* trained = nullptr) {
    require(!taus.empty(), ErrorKind::Config, "temperature sweep needs at least one temperature");
    const SyntheticTask task = make_task(cfg);
    const World world = make_world(task, cfg);
    const ContextBlock ctx = train_context(task, world, cfg);
    const PromptBank bank = build_prompt_bank(ctx, world.vocab, task.universe);
    std::vector<EvalReport> out;
    for (double t : taus) out.push_back(evaluate_mode(AlphaMode{}, task, world, bank, cfg, Temperature(t)));
    if (trained) *trained = ctx;
    return out;
}

/// Full train and dynamic-fusion evaluation per shot count, ascending.
inline std::vector<EvalReport> run_shot_sweep(const PipelineConfig& cfg, std::vector<int> shot_counts) {
    require(!shot_counts.empty(), ErrorKind::Config, "shot sweep needs at least one shot count");
    std::sort(shot_counts.begin(), shot_counts.end());
    const SyntheticTask task = make_task(cfg);
    const World world = make_world(task, cfg);
    std::vector<EvalReport> out;
    for (int shots : shot_counts) {
        require(shots >= 1, ErrorKind::Config, "shot counts must be at least 1");
        PipelineConfig c = cfg;
        c.train.shots = shots;
        const ContextBlock ctx = train_context(task, world, c);
        const PromptBank bank = build_prompt_bank(ctx, world.vocab, task.universe);
        out.push_back(evaluate_mode(AlphaMode{}, task, world, bank, c, c.train.tau));
    }
    return out;
}

} // namespace ttpf
