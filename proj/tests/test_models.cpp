#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "support/gradcheck.hpp"
#include "tve/checkpoint.hpp"

using namespace tve;
namespace fs = std::filesystem;

namespace {

GridSpec desk_grid() {
    GridSpec g;
    return g; // defaults: 32/4/8, hop 2
}

struct SmallRig {
    GridSpec grid = desk_grid();
    Dataset data;
    BackboneEncoder encoder;
    ClassifierHead head;

    SmallRig()
        : data(generate_dataset(desk_grid(), "quadrant", 256, 64, 5)),
          encoder(make_encoder()),
          head(make_head()) {}

    static BackboneEncoder make_encoder() {
        Rng rng(5);
        return BackboneEncoder(desk_grid(), {32, 16, 2}, rng);
    }
    static ClassifierHead make_head() {
        Rng rng(6);
        return ClassifierHead(16, 4, rng);
    }
};

} // namespace

TEST_SUITE_BEGIN("models");

TEST_CASE("encode_masked with the full grid equals plain encode") {
    SmallRig rig;
    const Tensor& img = rig.data.entries[0].image;
    CHECK(rig.encoder.encode_masked(img, PatchSubset::full(rig.grid)).data() ==
          rig.encoder.encode(img).data());
}

TEST_CASE("encode_masked is deterministic and empty mask equals zero image") {
    SmallRig rig;
    const Tensor& img = rig.data.entries[0].image;
    Rng rng(13);
    const PatchSubset s = sample_subset(rng, PatchSubset::full(rig.grid));
    CHECK(rig.encoder.encode_masked(img, s).data() == rig.encoder.encode_masked(img, s).data());

    const Tensor zero = Tensor::zeros({3, 32, 32});
    CHECK(rig.encoder.encode_masked(img, PatchSubset::empty(rig.grid)).data() ==
          rig.encoder.encode(zero).data());
}

TEST_CASE("masked-evaluation consistency over random (x, S, y)") {
    SmallRig rig;
    TargetModel model{&rig.encoder, &rig.head};
    Rng rng(23);
    for (int k = 0; k < 1000; ++k) {
        const auto& e = rig.data.entries[rng.uniform_int(rig.data.entries.size())];
        const PatchSubset s = sample_subset(rng, PatchSubset::full(rig.grid));
        const int64_t y = int64_t(rng.uniform_int(4));
        const double via_model = model.predict_masked(e.image, s, y);
        const double via_parts = rig.head.prob_of(rig.encoder.encode_masked(e.image, s), y);
        CHECK(via_model == via_parts);
    }
}

TEST_CASE("head probabilities sum to one pre-clamp and unknown class is rejected") {
    SmallRig rig;
    const Tensor emb = rig.encoder.encode(rig.data.entries[0].image);
    const Tensor p = rig.head.probs(Tensor::from_data({1, 16}, emb.data()));
    double s = 0.0;
    for (float v : p.data()) s += v;
    CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    CHECK_THROWS_AS(rig.head.prob_of(emb, 4), ValidationError);
    CHECK_THROWS_AS(rig.head.prob_of(emb, -1), ValidationError);
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
    SmallRig rig;
    Dataset tiny = rig.data;
    tiny.entries.resize(8);
    const std::vector<float> before = rig.encoder.params()[0].data();
    pretrain_backbone(rig.encoder, rig.head, tiny, {1, 8, 0.0f, 0.0f, 0.0f}, 5);
    CHECK(rig.encoder.params()[0].data() == before);
}

TEST_CASE("training is deterministic per seed") {
    auto run = [] {
        SmallRig rig;
        Dataset tiny = rig.data;
        tiny.entries.resize(32);
        return pretrain_backbone(rig.encoder, rig.head, tiny, {2, 8, 1e-3f, 0.05f, 0.05f}, 5)
            .final_loss;
    };
    CHECK(run() == run());
}

TEST_CASE("small pretraining run separates the quadrant task") {
    SmallRig rig;
    const TrainReport rep =
        pretrain_backbone(rig.encoder, rig.head, rig.data, {16, 64, 1e-3f, 0.05f, 0.05f}, 5);
    CHECK(rep.train_accuracy >= 0.95);
    CHECK(eval_accuracy(rig.encoder, rig.head, rig.data, "test") >= 0.8);
}

TEST_CASE("classifier-tuning keeps every encoder parameter bit-identical") {
    SmallRig rig;
    pretrain_backbone(rig.encoder, rig.head, rig.data, {3, 64, 1e-3f, 0.05f, 0.05f}, 5);
    rig.encoder.freeze();

    std::vector<std::vector<float>> before;
    for (const auto& p : rig.encoder.params()) before.push_back(p.data());

    const Dataset parity = generate_dataset(rig.grid, "parity", 64, 16, 9);
    Rng hrng(9);
    ClassifierHead h2(16, 2, hrng);
    const std::vector<float> head_before = h2.params()[0].data();
    finetune_head(rig.encoder, h2, parity, {20, 32, 2e-4f, 0.05f, 0.05f}, 9);

    const auto params = rig.encoder.params();
    for (size_t i = 0; i < params.size(); ++i) CHECK(params[i].data() == before[i]);
    CHECK(h2.params()[0].data() != head_before);
}

TEST_CASE("finetune_head requires a frozen encoder") {
    SmallRig rig;
    const Dataset parity = generate_dataset(rig.grid, "parity", 8, 2, 9);
    Rng hrng(9);
    ClassifierHead h2(16, 2, hrng);
    CHECK_THROWS_AS(finetune_head(rig.encoder, h2, parity, {1, 8, 1e-3f, 0.0f, 0.0f}, 9),
                    ValidationError);
}

TEST_CASE("full fine-tuning updates both components; a clone preserves the original") {
    SmallRig rig;
    pretrain_backbone(rig.encoder, rig.head, rig.data, {2, 64, 1e-3f, 0.05f, 0.05f}, 5);
    const BackboneEncoder original = rig.encoder.clone();
    const std::vector<float> orig_embed = original.params()[0].data();

    const Dataset parity = generate_dataset(rig.grid, "parity", 64, 16, 9);
    Rng hrng(9);
    ClassifierHead h2(16, 2, hrng);
    const std::vector<float> enc_before = rig.encoder.params()[0].data();
    finetune_full(rig.encoder, h2, parity, {2, 32, 1e-3f, 0.05f, 0.05f}, 9);

    CHECK(rig.encoder.params()[0].data() != enc_before);
    CHECK(original.params()[0].data() == orig_embed);
}

TEST_CASE("head class count must match the dataset") {
    SmallRig rig;
    const Dataset parity = generate_dataset(rig.grid, "parity", 8, 2, 9);
    CHECK_THROWS_AS(pretrain_backbone(rig.encoder, rig.head, parity, {1, 8, 1e-3f, 0.0f, 0.0f}, 5),
                    ValidationError);
}

TEST_SUITE_END();

TEST_SUITE_BEGIN("checkpoint");

TEST_CASE("backbone checkpoint round trip is bit-exact") {
    SmallRig rig;
    const fs::path dir = fs::temp_directory_path() / "tve_test_ck_backbone";
    fs::remove_all(dir);
    save_backbone(dir, rig.encoder, 5);
    const BackboneEncoder back = load_backbone(dir);
    const auto a = rig.encoder.named_params();
    const auto b = back.named_params();
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].name == b[i].name);
        CHECK(a[i].tensor.data() == b[i].tensor.data());
    }
    CHECK(back.grid() == rig.encoder.grid());
    fs::remove_all(dir);
}

TEST_CASE("head checkpoint round trip and kind mismatch") {
    SmallRig rig;
    const fs::path dir = fs::temp_directory_path() / "tve_test_ck_head";
    fs::remove_all(dir);
    save_head(dir, rig.head, rig.grid, 6);
    const ClassifierHead back = load_head(dir);
    CHECK(back.n_classes() == 4);
    CHECK(back.params()[0].data() == rig.head.params()[0].data());
    CHECK_THROWS_AS(load_backbone(dir), ValidationError);
    fs::remove_all(dir);
}

TEST_CASE("tampered parameter file fails the hash check") {
    SmallRig rig;
    const fs::path dir = fs::temp_directory_path() / "tve_test_ck_tamper";
    fs::remove_all(dir);
    save_head(dir, rig.head, rig.grid, 6);
    {
        std::ofstream f(dir / "head_weight.tvet", std::ios::binary | std::ios::app);
        f << "!";
    }
    CHECK_THROWS_AS(load_head(dir), ValidationError);
    fs::remove_all(dir);
}

TEST_SUITE_END();
