#include <gtest/gtest.h>

#include "support.hpp"

using namespace ttpf;
using namespace ttpf::testing;

namespace {

struct Batch {
    std::vector<FeatureVector> feats;
    std::vector<int> labels;
};

Batch random_batch(const Instance& in, Rng& rng, int n) {
    Batch b;
    for (int i = 0; i < n; ++i) {
        b.feats.push_back(random_unit(rng, in.text.feature_width()));
        b.labels.push_back(in.universe.base_ids[static_cast<std::size_t>(uniform_int(rng, 0, (int)in.universe.base_count() - 1))]);
    }
    return b;
}

double loss_at(const Instance& in, const ContextBlock& ctx, const Batch& b, Temperature tau) {
    return coop_loss_features(ctx, b.feats, b.labels, in.text, in.vocab, in.universe, tau).loss;
}

ErrorKind kind_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    ADD_FAILURE() << "no error raised";
    return ErrorKind::Io;
}

} // namespace

TEST(InitContext, CopiesTemplateEmbeddings) {
    const Vocabulary v = build_vocabulary({"cat"}, {"a photo of a [CLASS]"}, 5, 2);
    const ContextBlock c = init_context("a photo of a [CLASS]", v);
    ASSERT_EQ(c.size(), 4u);
    const char* words[] = {"a", "photo", "of", "a"};
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(Vec(c.vectors.row(i).begin(), c.vectors.row(i).end()), v.embedding(words[i]));
    EXPECT_EQ(c.prefix_length, 4u);
}

TEST(InitContext, UnknownTokensUseHashedRows) {
    const Vocabulary v = build_vocabulary({"cat"}, {"a photo of a [CLASS]"}, 5, 2);
    const ContextBlock c = init_context("[CLASS], a type of flower", v);
    EXPECT_EQ(c.prefix_length, 0u);
    EXPECT_EQ(Vec(c.vectors.row(3).begin(), c.vectors.row(3).end()), Vocabulary::hashed_row("flower", 5, 2));
}

TEST(InitContext, Errors) {
    const Vocabulary v = build_vocabulary({"cat"}, {"a photo of a [CLASS]"}, 5, 2);
    EXPECT_EQ(kind_of([&] { init_context("", v); }), ErrorKind::Template);
    EXPECT_EQ(kind_of([&] { init_context("[CLASS]", v); }), ErrorKind::Template);
}

TEST(InitContext, EncodesLikeHandcraftedPrompt) {
    const Instance in = random_instance(4, 4, 8, 8, 0.0);
    for (int id : in.universe.all_ids())
        EXPECT_EQ(encode_text(in.bank.learned.at(id), in.text), encode_text(in.bank.handcrafted.at(id), in.text));
}

TEST(AssemblePrompt, SharesContextRows) {
    const Instance in = random_instance(9);
    const auto ids = in.universe.all_ids();
    const PromptSequence a = assemble_prompt(in.context, ids[0], in.vocab, in.universe);
    const PromptSequence b = assemble_prompt(in.context, ids[1], in.vocab, in.universe);
    ASSERT_EQ(a.length(), in.context.size() + 1);
    for (std::size_t r = 0; r < a.length(); ++r) {
        const auto ra = a.embeddings.row(r), rb = b.embeddings.row(r);
        if (a.in_slot(r)) {
            EXPECT_EQ(Vec(ra.begin(), ra.end()), in.vocab.embedding(in.universe.name_of(ids[0])));
        } else {
            EXPECT_TRUE(std::equal(ra.begin(), ra.end(), rb.begin()));
        }
    }
    EXPECT_EQ(kind_of([&] { assemble_prompt(in.context, 999, in.vocab, in.universe); }), ErrorKind::Config);
}

TEST(CoopLoss, UniformPosteriorGivesLogK) {
    const Instance in = random_instance(21, 3, 4, 8, 0.2);
    std::vector<FeatureVector> texts;
    for (int id : in.universe.base_ids) texts.push_back(encode_text(in.bank.learned.at(id), in.text));
    const std::size_t D = in.text.feature_width();
    if (D <= texts.size()) GTEST_SKIP() << "no orthogonal complement";
    Rng rng = make_rng(1);
    const std::vector<FeatureVector> feats{l2_normalize(orthogonal_to(rng, texts, D))};
    const std::vector<int> labels{in.universe.base_ids[0]};
    const double loss = coop_loss_features(in.context, feats, labels, in.text, in.vocab, in.universe, Temperature(0.01)).loss;
    EXPECT_NEAR(loss, std::log(static_cast<double>(in.universe.base_count())), 1e-9);
}

TEST(CoopLoss, GradientMatchesFiniteDifferences) {
    for (std::uint64_t seed = 0; seed < 24; ++seed) {
        const Instance in = random_instance(100 + seed);
        Rng rng = make_rng(seed, 5);
        const Batch b = random_batch(in, rng, 6);
        const Temperature tau(uniform(rng, 0.05, 1.0));
        const LossAndGrad lg = coop_loss_features(in.context, b.feats, b.labels, in.text, in.vocab, in.universe, tau);
        Vec numeric(lg.grad.data().size());
        ContextBlock c = in.context;
        for (std::size_t i = 0; i < numeric.size(); ++i) {
            const double keep = c.vectors.data()[i];
            c.vectors.data()[i] = keep + 1e-5;
            const double up = loss_at(in, c, b, tau);
            c.vectors.data()[i] = keep - 1e-5;
            const double down = loss_at(in, c, b, tau);
            c.vectors.data()[i] = keep;
            numeric[i] = (up - down) / 2e-5;
        }
        EXPECT_LT(relative_error(lg.grad.data(), numeric), 1e-4) << "seed " << seed;
    }
}

TEST(CoopLoss, MeanReductionIgnoresDuplication) {
    const Instance in = random_instance(17);
    Rng rng = make_rng(2);
    Batch b = random_batch(in, rng, 5);
    const double once = loss_at(in, in.context, b, Temperature(0.05));
    Batch twice = b;
    twice.feats.insert(twice.feats.end(), b.feats.begin(), b.feats.end());
    twice.labels.insert(twice.labels.end(), b.labels.begin(), b.labels.end());
    EXPECT_NEAR(loss_at(in, in.context, twice, Temperature(0.05)), once, 1e-12);
}

TEST(CoopLoss, NewClassLabelIsConfigError) {
    const Instance in = random_instance(17);
    Rng rng = make_rng(2);
    Batch b = random_batch(in, rng, 2);
    b.labels[1] = in.universe.new_ids[0];
    EXPECT_EQ(kind_of([&] { loss_at(in, in.context, b, Temperature(0.05)); }), ErrorKind::Config);
}

TEST(LrSchedule, Values) {
    TrainConfig cfg;
    EXPECT_DOUBLE_EQ(lr_schedule(0, cfg), 1e-5);
    EXPECT_DOUBLE_EQ(lr_schedule(cfg.warmup_epochs, cfg), 0.02);
    const double last = lr_schedule(cfg.max_epochs - 1, cfg);
    const double T = cfg.max_epochs - cfg.warmup_epochs;
    EXPECT_DOUBLE_EQ(last, 0.02 * 0.5 * (1 + std::cos(std::numbers::pi * (T - 1) / T)));
    EXPECT_GT(last, 0.0);
    EXPECT_LT(last, 1e-5);
    EXPECT_EQ(kind_of([&] { lr_schedule(-1, cfg); }), ErrorKind::Range);
    EXPECT_EQ(kind_of([&] { lr_schedule(cfg.max_epochs, cfg); }), ErrorKind::Range);
}

TEST(LrSchedule, NonIncreasingAfterWarmup) {
    TrainConfig cfg;
    for (int e = cfg.warmup_epochs + 1; e < cfg.max_epochs; ++e) EXPECT_LE(lr_schedule(e, cfg), lr_schedule(e - 1, cfg));
}

TEST(TrainConfig, Validation) {
    TrainConfig cfg;
    cfg.warmup_lr = 0.1;
    EXPECT_EQ(kind_of([&] { cfg.validate(); }), ErrorKind::Config);
    cfg = {};
    cfg.shots = 0;
    EXPECT_EQ(kind_of([&] { cfg.validate(); }), ErrorKind::Config);
}

class StandardTraining : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        cfg = new PipelineConfig();
        task = new SyntheticTask(make_task(*cfg));
        world = new World(make_world(*task, *cfg));
        shots = new std::vector<LabeledSample>(sample_few_shot(*task, cfg->train.shots, cfg->seed));
    }
    static void TearDownTestSuite() {
        delete shots;
        delete world;
        delete task;
        delete cfg;
    }
    static inline PipelineConfig* cfg = nullptr;
    static inline SyntheticTask* task = nullptr;
    static inline World* world = nullptr;
    static inline std::vector<LabeledSample>* shots = nullptr;
};

TEST_F(StandardTraining, ZeroEpochsReturnsInitialization) {
    TrainConfig tc = cfg->train;
    tc.max_epochs = 0;
    const ContextBlock c = train_coop(*shots, tc, world->enc, world->vocab, task->universe, cfg->tmpl);
    EXPECT_EQ(c, init_context(cfg->tmpl, world->vocab));
}

TEST_F(StandardTraining, LossDecreasesAndRunIsDeterministic) {
    std::vector<double> trace;
    AccessLog log;
    const ContextBlock a = train_coop(*shots, cfg->train, world->enc, world->vocab, task->universe, cfg->tmpl, &log, &trace);
    const ContextBlock b = train_coop(*shots, cfg->train, world->enc, world->vocab, task->universe, cfg->tmpl);
    ASSERT_EQ(trace.size(), 200u);
    EXPECT_LT(trace.back(), trace.front());
    EXPECT_EQ(a, b);
    for (int id : task->universe.new_ids) EXPECT_EQ(log.count(id), 0u);
    EXPECT_EQ(log.total(), shots->size());
}

TEST_F(StandardTraining, MinibatchRunIsDeterministic) {
    TrainConfig tc = cfg->train;
    tc.batch_size = 32;
    tc.max_epochs = 20;
    const ContextBlock a = train_coop(*shots, tc, world->enc, world->vocab, task->universe, cfg->tmpl);
    EXPECT_EQ(a, train_coop(*shots, tc, world->enc, world->vocab, task->universe, cfg->tmpl));
    EXPECT_NE(a, init_context(cfg->tmpl, world->vocab));
}

TEST_F(StandardTraining, SmallStepDoesNotIncreaseLoss) {
    const ContextBlock c0 = init_context(cfg->tmpl, world->vocab);
    const LossAndGrad lg = coop_loss(c0, *shots, world->enc, world->vocab, task->universe, cfg->train.tau);
    for (double lr : {1e-4, 1e-5}) {
        ContextBlock c1 = c0;
        for (std::size_t i = 0; i < c1.vectors.data().size(); ++i) c1.vectors.data()[i] -= lr * lg.grad.data()[i];
        EXPECT_LE(coop_loss(c1, *shots, world->enc, world->vocab, task->universe, cfg->train.tau).loss, lg.loss);
    }
}

TEST_F(StandardTraining, EncodersAndVocabularyStayFrozen) {
    const auto v0 = checksum(world->vocab), t0 = checksum(world->enc.text), i0 = checksum(world->enc.image);
    train_coop(*shots, cfg->train, world->enc, world->vocab, task->universe, cfg->tmpl);
    EXPECT_EQ(checksum(world->vocab), v0);
    EXPECT_EQ(checksum(world->enc.text), t0);
    EXPECT_EQ(checksum(world->enc.image), i0);
}

TEST_F(StandardTraining, DataErrors) {
    std::vector<LabeledSample> fewer(shots->begin() + 1, shots->end());
    EXPECT_EQ(kind_of([&] { train_coop(fewer, cfg->train, world->enc, world->vocab, task->universe, cfg->tmpl); }),
              ErrorKind::Data);
    std::vector<LabeledSample> leaked = *shots;
    leaked.push_back(task->test_pool.back());
    ASSERT_TRUE(task->universe.is_new(leaked.back().label));
    EXPECT_EQ(kind_of([&] { train_coop(leaked, cfg->train, world->enc, world->vocab, task->universe, cfg->tmpl); }),
              ErrorKind::Config);
}

TEST_F(StandardTraining, ContextArchiveRoundTrip) {
    TrainConfig tc = cfg->train;
    tc.max_epochs = 5;
    const ContextBlock c = train_coop(*shots, tc, world->enc, world->vocab, task->universe, cfg->tmpl);
    ContextBlock q = c;
    quantize_to_float(q.vectors.data());
    Archive a;
    store(a, q);
    EXPECT_EQ(load_context(Archive::from_bytes(a.to_bytes())), q);
}
