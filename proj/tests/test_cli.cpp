#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "tve/tensor_io.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

std::string tve_bin() {
    const char* bin = std::getenv("TVE_BIN");
    REQUIRE_MESSAGE(bin != nullptr, "TVE_BIN must point at the tve binary");
    return bin;
}

int run(const std::string& args) {
    const std::string cmd = tve_bin() + " " + args + " >> /tmp/tve_cli_test.log 2>&1";
    const int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE_MESSAGE(in.good(), ("missing file " + p.string()).c_str());
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// Small shared pipeline: dataset, backbone, parity head, short explainer run.
struct CliEnv {
    fs::path root;
    std::string flags; // --set overrides shared by every command

    CliEnv() {
        root = fs::temp_directory_path() / "tve_cli_env";
        fs::remove_all(root);
        fs::create_directories(root);
        flags = " --set seed=11"
                " --set data.pretrain_train=64 --set data.pretrain_test=16"
                " --set data.downstream_train=32 --set data.downstream_test=8"
                " --set backbone.epochs=3 --set head.epochs=40"
                " --set full.epochs=1"
                " --set explainer.steps=30 --set explainer.batch=4"
                " --set explainer.checkpoint_every=0"
                " --set eval.n_images=4 --set eval.bound_images=2"
                " --set eval.bench_images=1 --set eval.bench_repeats=1"
                " --set paths.dataset=" + (root / "data").string() +
                " --set paths.checkpoints=" + (root / "ck").string() +
                " --set paths.output=" + (root / "out").string();
        REQUIRE(run("gen-data" + flags) == 0);
        REQUIRE(run("train-backbone" + flags) == 0);
        REQUIRE(run("finetune-head --task parity" + flags) == 0);
        REQUIRE(run("pretrain-explainer" + flags) == 0);
    }
};

CliEnv& env() {
    static CliEnv e;
    return e;
}

} // namespace

TEST_SUITE_BEGIN("cli");

TEST_CASE("validation failures exit with code 2") {
    CHECK(run("train-backbone --set bogus.key=1") == 2);
    CHECK(run("evaluate --set mode=NOPE") == 2);
    // Missing artifacts are validation failures too.
    const fs::path empty = fs::temp_directory_path() / "tve_cli_empty";
    fs::remove_all(empty);
    CHECK(run("train-backbone --set paths.dataset=" + (empty / "none").string() +
              " --set paths.checkpoints=" + (empty / "ck").string()) == 2);
}

TEST_CASE("gen-data refuses a non-empty directory without --force") {
    CliEnv& e = env();
    CHECK(run("gen-data" + e.flags) == 2);
    CHECK(run("gen-data --force" + e.flags) == 0);
}

TEST_CASE("gen-data is byte-deterministic per seed") {
    CliEnv& e = env();
    const fs::path alt = e.root / "data2";
    std::string flags2 = e.flags;
    const std::string from = "paths.dataset=" + (e.root / "data").string();
    const std::string to = "paths.dataset=" + alt.string();
    flags2.replace(flags2.find(from), from.size(), to);
    REQUIRE(run("gen-data" + flags2) == 0);
    for (const char* task : {"quadrant", "parity", "shape"}) {
        CHECK(slurp(e.root / "data" / task / "manifest.json") ==
              slurp(alt / task / "manifest.json"));
        CHECK(slurp(e.root / "data" / task / "img_000000.tvet") ==
              slurp(alt / task / "img_000000.tvet"));
    }
}

TEST_CASE("declared class balance is exact in the manifest") {
    CliEnv& e = env();
    const auto j = ordered_json::parse(slurp(e.root / "data" / "quadrant" / "manifest.json"));
    std::vector<int64_t> hist(4, 0);
    for (const auto& entry : j.at("entries"))
        if (entry.at("split") == "train") hist[entry.at("label").get<size_t>()]++;
    for (int64_t c : hist) CHECK(c == 16);
}

TEST_CASE("explain writes matching JSON and PGM per image, reruns identical") {
    CliEnv& e = env();
    REQUIRE(run("explain --task quadrant --mode transferred --count 3" + e.flags) == 0);
    const fs::path dir = e.root / "out" / "explain_transferred_quadrant";
    const std::string j1 = slurp(dir / "img_000064.json");
    const std::string p1 = slurp(dir / "img_000064.pgm");
    CHECK(p1.substr(0, 9) == "P5\n8 8\n25"); // header names the P x P size
    REQUIRE(run("explain --task quadrant --mode transferred --count 3" + e.flags) == 0);
    CHECK(slurp(dir / "img_000064.json") == j1);
    CHECK(slurp(dir / "img_000064.pgm") == p1);
}

TEST_CASE("exact and transferred explain modes agree on values") {
    CliEnv& e = env();
    REQUIRE(run("explain --task quadrant --mode exact --count 2" + e.flags) == 0);
    REQUIRE(run("explain --task quadrant --mode transferred --count 2" + e.flags) == 0);
    const auto exact = ordered_json::parse(
        slurp(e.root / "out" / "explain_exact_quadrant" / "img_000064.json"));
    const auto transferred = ordered_json::parse(
        slurp(e.root / "out" / "explain_transferred_quadrant" / "img_000064.json"));
    CHECK(exact.at("provenance") == "exact");
    CHECK(transferred.at("provenance") == "transferred");
    CHECK(exact.at("class") == transferred.at("class"));
    const auto a = exact.at("values").get<std::vector<double>>();
    const auto b = transferred.at("values").get<std::vector<double>>();
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-5));
}

TEST_CASE("zero-step explainer fine-tune copies the checkpoint verbatim") {
    CliEnv& e = env();
    REQUIRE(run("finetune-explainer --task parity --pretrain-encoder" + e.flags +
                " --set explainer.steps=0") == 0);
    const fs::path src = e.root / "ck" / "explainer";
    const fs::path dst = e.root / "ck" / "explainer_ft_parity";
    for (const auto& f : fs::directory_iterator(src)) {
        if (f.path().extension() != ".tvet") continue;
        CHECK(slurp(f.path()) == slurp(dst / f.path().filename()));
    }
}

TEST_CASE("evaluate produces the results schema and is rerun-identical") {
    CliEnv& e = env();
    REQUIRE(run("evaluate --task parity --set mode=TVE" + e.flags) == 0);
    const fs::path f = e.root / "out" / "evaluate_TVE_parity" / "results.json";
    const std::string first = slurp(f);
    const auto j = ordered_json::parse(first);
    REQUIRE(j.size() == 2);
    for (const auto& r : j) {
        CHECK(r.at("mode") == "TVE");
        CHECK(r.at("dataset") == "parity");
        CHECK(r.contains("auc_mean"));
        CHECK(r.contains("auc_std"));
        CHECK(r.at("per_image").size() == 4);
    }
    REQUIRE(run("evaluate --task parity --set mode=TVE" + e.flags) == 0);
    CHECK(slurp(f) == first);
}

TEST_CASE("evaluate names the missing artifact for unmet modes") {
    CliEnv& e = env();
    CHECK(run("evaluate --task parity --set mode=TVE_FT" + e.flags) == 2);
    CHECK(run("evaluate --task parity --set mode=LFScratch" + e.flags) == 2);
}

TEST_CASE("verify-bound with injected exact meta holds at epsilon zero") {
    CliEnv& e = env();
    REQUIRE(run("verify-bound --task parity --use-exact-meta" + e.flags) == 0);
    const auto j = ordered_json::parse(
        slurp(e.root / "out" / "verify_bound_parity" / "bound_report.json"));
    CHECK(j.at("holds").get<bool>());
    CHECK(j.at("applicable").get<bool>());
    CHECK(j.at("epsilon").get<double>() == 0.0);
}

TEST_CASE("correlate emits a scatter dump and honors --min-r") {
    CliEnv& e = env();
    REQUIRE(run("correlate --task quadrant --set eval.mc_pairs_per_image=4" + e.flags) == 0);
    const auto j =
        ordered_json::parse(slurp(e.root / "out" / "correlate_quadrant" / "correlation.json"));
    CHECK(j.at("n_pairs").get<int64_t>() >= 16);
    CHECK(j.at("points").size() == j.at("n_pairs").get<size_t>());
    CHECK(run("correlate --task quadrant --min-r 1.1 --set eval.mc_pairs_per_image=4" + e.flags) ==
          4);
}

TEST_CASE("bench splits deterministic counts from measured timings") {
    CliEnv& e = env();
    REQUIRE(run("bench" + e.flags) == 0);
    const fs::path dir = e.root / "out" / "bench";
    const std::string counts = slurp(dir / "bench_counts.json");
    const auto j = ordered_json::parse(counts);
    bool has_exact_p8 = false, has_exact_p16 = false;
    for (const auto& r : j) {
        if (r.at("method") == "exact" && r.at("model") == "P8_K4") {
            CHECK(r.at("model_evals_per_image").get<int64_t>() == 128);
            has_exact_p8 = true;
        }
        if (r.at("method") == "exact" && r.at("model") == "P16_K4") {
            CHECK(r.at("model_evals_per_image").get<int64_t>() == 512);
            has_exact_p16 = true;
        }
    }
    CHECK(has_exact_p8);
    CHECK(has_exact_p16);
    CHECK(fs::exists(dir / "timings.json"));
    REQUIRE(run("bench" + e.flags) == 0);
    CHECK(slurp(dir / "bench_counts.json") == counts); // counts are rerun-stable
}

TEST_CASE("every command echoes its resolved config") {
    CliEnv& e = env();
    CHECK(fs::exists(e.root / "data" / "gen-data.config.json"));
    CHECK(fs::exists(e.root / "ck" / "train-backbone.config.json"));
    CHECK(fs::exists(e.root / "ck" / "explainer" / "pretrain-explainer.config.json"));
    CHECK(fs::exists(e.root / "out" / "evaluate_TVE_parity" / "evaluate.config.json"));
    const auto j = ordered_json::parse(slurp(e.root / "data" / "gen-data.config.json"));
    CHECK(j.at("seed").get<uint64_t>() == 11);
}

TEST_SUITE_END();
