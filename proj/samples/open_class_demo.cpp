// Trains a context on the standard task, then walks a few test images through
// the two-stage open-class predictor and prints what each stage decided.
#include <cstdio>

#include "ttpf/harness.hpp"

using namespace ttpf;

int main() {
    PipelineConfig cfg;
    const SyntheticTask task = make_task(cfg);
    const World world = make_world(task, cfg);
    const ContextBlock ctx = train_context(task, world, cfg);
    const PromptBank bank = build_prompt_bank(ctx, world.vocab, task.universe);
    const std::vector<int> ids = task.universe.all_ids();

    std::printf("%-10s %-5s %7s %7s %7s  %s\n", "true", "split", "s_fs", "s_zs", "alpha", "predicted");
    for (std::size_t i = 0; i < task.test_pool.size(); i += task.test_pool.size() / 8) {
        const LabeledSample& s = task.test_pool[i];
        const FeatureVector f = encode_image(s.x, world.enc.image);
        const Stage1Scores st = stage1_scores(f, bank, task.universe, world.enc.text, cfg.train.tau);
        const OpenPrediction p = predict_open(f, bank, task.universe, world.enc.text, cfg.train.tau);
        std::printf("%-10s %-5s %7.4f %7.4f %7.4f  %s\n", task.universe.name_of(s.label).c_str(),
                    task.universe.is_base(s.label) ? "base" : "new", st.s_fs.value, st.s_zs.value, p.weight.alpha,
                    task.universe.name_of(ids[argmax(p.posterior)]).c_str());
    }
    return 0;
}
