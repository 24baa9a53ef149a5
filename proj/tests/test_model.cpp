#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "peftlab/datagen.hpp"
#include "peftlab/losses.hpp"
#include "peftlab/model.hpp"
#include "peftlab/ops.hpp"
#include "support/fd_check.hpp"
#include "support/oracles.hpp"

using namespace peftlab;
using testsupport::fd_check_single;

namespace {

Tensor batched_image(const SegSample& s) {
    Tensor img = s.image;
    return Tensor::from_data({1, 1, img.shape()[1], img.shape()[2]}, img.values());
}

}  // namespace

TEST_CASE("forward gives finite logits of the input spatial shape") {
    SegModel model(ModelConfig{}, 0);
    Tensor zero_img = Tensor::zeros({1, 1, 64, 64});
    Tensor logits = model.forward(zero_img, BoxPrompt{10, 10, 30, 30});
    CHECK(logits.shape() == std::vector<int>{1, 1, 64, 64});
    for (const double v : logits.values()) CHECK(std::isfinite(v));
}

TEST_CASE("forward is deterministic") {
    SegModel model(ModelConfig{}, 1);
    auto sample = generate(Scenario::Base, 1, 3)[0];
    Tensor img = batched_image(sample);
    Tensor a = model.forward(img, sample.box);
    Tensor b = model.forward(img, sample.box);
    CHECK(a.values() == b.values());
}

TEST_CASE("logit spatial shape tracks configurable input sizes") {
    for (const int size : {32, 64}) {
        ModelConfig cfg;
        cfg.img_size = size;
        SegModel model(cfg, 0);
        Tensor img = Tensor::full({1, 1, size, size}, 0.5);
        Tensor logits = model.forward(img, BoxPrompt{2, 2, size / 2, size / 2});
        CHECK(logits.shape() == std::vector<int>{1, 1, size, size});
    }
}

TEST_CASE("different box prompts change the logits") {
    SegModel model(ModelConfig{}, 2);
    auto sample = generate(Scenario::Base, 1, 5)[0];
    Tensor img = batched_image(sample);
    Tensor a = model.forward(img, BoxPrompt{4, 4, 20, 20});
    Tensor b = model.forward(img, BoxPrompt{40, 40, 60, 60});
    double max_diff = 0.0;
    for (std::size_t i = 0; i < a.values().size(); ++i) {
        max_diff = std::max(max_diff, std::abs(a.values()[i] - b.values()[i]));
    }
    CHECK(max_diff > 0.0);
}

TEST_CASE("malformed inputs are rejected") {
    SegModel model(ModelConfig{}, 0);
    Tensor img = Tensor::zeros({1, 1, 64, 64});
    CHECK_THROWS_AS(model.forward(img, BoxPrompt{10, 10, 10, 30}), ValidationError);
    CHECK_THROWS_AS(model.forward(img, BoxPrompt{-1, 0, 10, 10}), ValidationError);
    CHECK_THROWS_AS(model.forward(img, BoxPrompt{0, 0, 65, 64}), ValidationError);
    CHECK_THROWS_AS(model.forward(Tensor::zeros({1, 1, 32, 32}), BoxPrompt{0, 0, 8, 8}),
                    ValidationError);
    CHECK_THROWS_AS(model.forward(Tensor::full({1, 1, 64, 64}, 1.5), BoxPrompt{0, 0, 8, 8}),
                    ValidationError);
}

TEST_CASE("registry is a duplicate-free partition of the parameters") {
    SegModel model(ModelConfig{}, 0);
    auto reg = model.registry();

    std::set<std::string> names;
    std::int64_t total = 0;
    std::int64_t by_kind[4] = {0, 0, 0, 0};
    for (const auto& e : reg) {
        CHECK(names.insert(e.name).second);
        total += e.tensor.numel();
        by_kind[static_cast<int>(e.kind)] += e.tensor.numel();
    }
    CHECK(names.size() == reg.size());
    CHECK(total == by_kind[0] + by_kind[1] + by_kind[2] + by_kind[3]);

    // Closed-form census of the default configuration.
    const std::int64_t patch = 32 * 16 + 32;
    const std::int64_t pos = 256 * 32;
    const std::int64_t per_block = 2 * 64 + 4 * (32 * 32 + 32) + (32 * 64 + 64) + (64 * 32 + 32);
    const std::int64_t convs = 2 * (32 * 32 * 9 + 32);
    const std::int64_t decoder = 2 * (32 * 32 * 9 + 32) + 32 + 1;
    const std::int64_t prompt = 2 * (10 * 32 + 32);
    CHECK(by_kind[static_cast<int>(ParamKind::Transformer)] == patch + pos + 2 * per_block);
    CHECK(by_kind[static_cast<int>(ParamKind::Conv)] == convs);
    CHECK(by_kind[static_cast<int>(ParamKind::Decoder)] == decoder);
    CHECK(by_kind[static_cast<int>(ParamKind::Prompt)] == prompt);
}

TEST_CASE("loss gradient through the full model matches finite differences") {
    ModelConfig cfg;
    cfg.img_size = 32;
    SegModel model(cfg, 7);
    GenOptions gen_opt;
    gen_opt.img_size = 32;
    auto sample = generate(Scenario::Base, 1, 9, gen_opt)[0];
    Tensor img = batched_image(sample);
    Tensor mask = Tensor::from_data({1, 1, 32, 32}, sample.mask.values());

    for (auto& entry : model.registry()) entry.tensor.set_requires_grad(true);
    LossConfig loss_cfg;
    auto loss = [&] { return composite_loss(model.forward(img, sample.box), mask, loss_cfg); };

    // A spread of parameters across every stage of the network.
    auto reg = model.registry();
    Rng pick(17);
    int checked = 0;
    for (const auto& name :
         {"encoder.patch.weight", "encoder.pos_embed", "encoder.tf0.attn.q.weight",
          "encoder.tf1.mlp.w1.weight", "encoder.tf0.ln1.gain", "encoder.conv0.weight",
          "decoder.fuse1.weight", "decoder.out.weight", "prompt.corner0.weight",
          "prompt.corner1.bias"}) {
        for (const auto& entry : reg) {
            if (entry.name != name) continue;
            const auto idx = static_cast<std::size_t>(
                pick.uniform_int(0, static_cast<int>(entry.tensor.numel()) - 1));
            CHECK(fd_check_single(loss, entry.tensor, idx, 1e-5) < 1e-4);
            ++checked;
        }
    }
    CHECK(checked == 10);
}

TEST_CASE("checkpoint round trip preserves values, kinds, and flags") {
    const auto dir = std::filesystem::temp_directory_path() / "peftlab_model_ckpt";
    std::filesystem::remove_all(dir);

    SegModel model(ModelConfig{}, 11);
    for (auto& entry : model.registry()) {
        entry.tensor.set_requires_grad(entry.kind == ParamKind::Decoder);
    }
    model.save(dir);
    SegModel back = SegModel::load(dir);

    auto a = model.registry();
    auto b = back.registry();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].name == b[i].name);
        CHECK(a[i].kind == b[i].kind);
        CHECK(a[i].tensor.values() == b[i].tensor.values());
        CHECK(a[i].tensor.requires_grad() == b[i].tensor.requires_grad());
    }

    auto sample = generate(Scenario::Base, 1, 13)[0];
    Tensor img = batched_image(sample);
    CHECK(model.forward(img, sample.box).values() == back.forward(img, sample.box).values());
}

TEST_CASE("loading a corrupted checkpoint fails cleanly") {
    const auto dir = std::filesystem::temp_directory_path() / "peftlab_model_bad";
    std::filesystem::remove_all(dir);
    SegModel model(ModelConfig{}, 0);
    model.save(dir);
    std::filesystem::remove(dir / "encoder.pos_embed.bin");
    CHECK_THROWS_AS(SegModel::load(dir), ValidationError);
    CHECK_THROWS_AS(SegModel::load(dir / "nope"), ValidationError);
}
