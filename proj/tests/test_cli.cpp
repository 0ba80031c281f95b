#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "radsum/cli.hpp"
#include "radsum/corpus.hpp"
#include "radsum/infer.hpp"
#include "radsum/tokenizer.hpp"
#include "radsum/util.hpp"

namespace fs = std::filesystem;
using Json = nlohmann::json;

namespace {

struct CliResult {
    int code = -1;
    std::string out;
    std::string err;
};

// Runs the command in-process with stdout and stderr redirected into strings.
CliResult run_cli(const std::vector<std::string>& args) {
    std::ostringstream out;
    std::ostringstream err;
    auto* old_out = std::cout.rdbuf(out.rdbuf());
    auto* old_err = std::cerr.rdbuf(err.rdbuf());
    CliResult r;
    try {
        r.code = radsum::run_command(args);
    } catch (...) {
        std::cout.rdbuf(old_out);
        std::cerr.rdbuf(old_err);
        throw;
    }
    std::cout.rdbuf(old_out);
    std::cerr.rdbuf(old_err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("radsum_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

Json tiny_config(const fs::path& out_dir) {
    Json stage_opt = {{"lr", 1e-3}};
    Json cfg = {
        {"seed", 42},
        {"corpus", {{"n_reports", 40}, {"max_tokens", 512}}},
        {"tokenizer", {{"max_vocab", 4096}}},
        {"model",
         {{"n_layers", 2}, {"n_heads", 2}, {"d_model", 32}, {"max_seq", 128}}},
        {"stages",
         {{{"kind", "general_pretrain"},
           {"steps", 6},
           {"batch_size", 4},
           {"seq_len", 96},
           {"optimizer", stage_opt},
           {"data", {{"n_texts", 120}}}},
          {{"kind", "instruction_tune"},
           {"steps", 6},
           {"batch_size", 4},
           {"seq_len", 96},
           {"optimizer", stage_opt},
           {"data", {{"n_pairs", 120}}}},
          {{"kind", "dapt"},
           {"steps", 6},
           {"batch_size", 4},
           {"seq_len", 96},
           {"optimizer", stage_opt}},
          {{"kind", "finetune"},
           {"steps", 6},
           {"batch_size", 4},
           {"seq_len", 96},
           {"optimizer", stage_opt}}}},
        {"sampler", {{"max_new_tokens", 16}, {"temperature", 0.0}}},
        {"eval", {{"limit", 2}}},
        {"paths", {{"out_dir", out_dir.string()}}},
    };
    return cfg;
}

fs::path write_config(const fs::path& dir, const Json& cfg,
                      const std::string& name = "config.json") {
    const fs::path path = dir / name;
    radsum::write_file(path.string(), cfg.dump(1));
    return path;
}

// Listing of regular files directly inside a directory, for containment checks.
std::set<std::string> dir_listing(const fs::path& dir) {
    std::set<std::string> names;
    for (const auto& entry : fs::directory_iterator(dir))
        names.insert(entry.path().filename().string());
    return names;
}

int run_config_expecting_failure(const Json& cfg, std::string* err_text) {
    const fs::path dir = fresh_dir("schema");
    const fs::path path = write_config(dir, cfg);
    const CliResult r = run_cli({"gen-corpus", "--config", path.string()});
    *err_text = r.err;
    return r.code;
}

}  // namespace

TEST_CASE("schema violations exit with code 2 and name the offending field") {
    const fs::path out = fresh_dir("schema_out");
    std::string err;

    Json cfg = tiny_config(out);
    cfg["corpus"]["bogus"] = 1;
    CHECK(run_config_expecting_failure(cfg, &err) == 2);
    CHECK(err.find("unknown key 'bogus'") != std::string::npos);
    CHECK(err.find("corpus") != std::string::npos);

    cfg = tiny_config(out);
    cfg["mystery"] = true;
    CHECK(run_config_expecting_failure(cfg, &err) == 2);
    CHECK(err.find("unknown key 'mystery'") != std::string::npos);

    cfg = tiny_config(out);
    cfg["stages"][1]["optimizer"]["momentum"] = 0.9;
    CHECK(run_config_expecting_failure(cfg, &err) == 2);
    CHECK(err.find("unknown key 'momentum'") != std::string::npos);

    cfg = tiny_config(out);
    cfg["corpus"]["n_reports"] = "forty";
    CHECK(run_config_expecting_failure(cfg, &err) == 2);
    CHECK(err.find("n_reports") != std::string::npos);
    CHECK(err.find("type") != std::string::npos);

    cfg = tiny_config(out);
    cfg["corpus"]["splits"] = {{"train", 0.5}, {"val", 0.1}, {"test", 0.1}};
    CHECK(run_config_expecting_failure(cfg, &err) == 2);
    CHECK(err.find("splits") != std::string::npos);

    cfg = tiny_config(out);
    cfg["stages"][3]["kind"] = "dapt";
    CHECK(run_config_expecting_failure(cfg, &err) == 2);
    CHECK(err.find("dapt") != std::string::npos);

    cfg = tiny_config(out);
    cfg["sampler"]["top_p"] = 0.0;
    CHECK(run_config_expecting_failure(cfg, &err) == 2);
    CHECK(err.find("sampler") != std::string::npos);

    cfg = tiny_config(out);
    cfg["stages"][0]["steps"] = 0;
    CHECK(run_config_expecting_failure(cfg, &err) == 2);
    CHECK(err.find("stages[0]") != std::string::npos);

    const fs::path dir = fresh_dir("schema_json");
    const fs::path broken = dir / "broken.json";
    radsum::write_file(broken.string(), "{\"seed\": 42,,}");
    const CliResult r = run_cli({"gen-corpus", "--config", broken.string()});
    CHECK(r.code == 2);
    CHECK(r.err.find("config") != std::string::npos);
}

TEST_CASE("bad usage exits with code 2") {
    CHECK(run_cli({}).code == 2);
    CHECK(run_cli({"nonsense"}).code == 2);
    CHECK(run_cli({"gen-corpus"}).code == 2);
    CHECK(run_cli({"--help"}).code == 0);

    const fs::path dir = fresh_dir("usage");
    const fs::path cfg = write_config(dir, tiny_config(dir / "run"));
    CliResult r =
        run_cli({"infer", "--checkpoint", "bogus", "--config", cfg.string()});
    CHECK(r.code == 2);
    CHECK(r.err.find("bogus") != std::string::npos);

    r = run_cli({"train", "--stage", "9", "--config", cfg.string()});
    CHECK(r.code == 2);
    CHECK(r.err.find("--stage") != std::string::npos);

    r = run_cli({"train", "--stage", "0", "--all", "--config", cfg.string()});
    CHECK(r.code == 2);
}

TEST_CASE("missing inputs fail at runtime with exit code 1") {
    const fs::path dir = fresh_dir("runtime");
    const fs::path cfg_path = write_config(dir, tiny_config(dir / "run"));
    const std::vector<std::string> base = {"--config", cfg_path.string()};

    CliResult r = run_cli({"preprocess", "--config", cfg_path.string()});
    CHECK(r.code == 1);

    r = run_cli({"infer", "--config", cfg_path.string()});
    CHECK(r.code == 1);

    r = run_cli({"gen-corpus", "--config", (dir / "absent.json").string()});
    CHECK(r.code == 1);

    r = run_cli({"stats", "--in", (dir / "absent.jsonl").string()});
    CHECK(r.code == 1);
}

TEST_CASE("train refuses a stage whose predecessor checkpoint is missing") {
    const fs::path dir = fresh_dir("pred");
    const fs::path out = dir / "run";
    const fs::path cfg_path = write_config(dir, tiny_config(out));
    const std::string cfg = cfg_path.string();

    REQUIRE(run_cli({"gen-corpus", "--config", cfg}).code == 0);
    REQUIRE(run_cli({"preprocess", "--config", cfg}).code == 0);
    REQUIRE(run_cli({"build-vocab", "--config", cfg}).code == 0);

    const CliResult r = run_cli({"train", "--stage", "2", "--config", cfg});
    CHECK(r.code == 1);
    CHECK(r.err.find("instruction_tune") != std::string::npos);
}

TEST_CASE("full pipeline runs, stays inside out_dir, and re-runs are no-ops") {
    const fs::path dir = fresh_dir("e2e");
    const fs::path out = dir / "run";
    const fs::path cfg_path = write_config(dir, tiny_config(out));
    const std::string cfg = cfg_path.string();
    const std::set<std::string> before = dir_listing(dir);

    CliResult r = run_cli({"gen-corpus", "--config", cfg});
    REQUIRE(r.code == 0);
    CHECK(r.err.find("wrote 40 reports") != std::string::npos);
    CHECK(fs::exists(out / "corpus" / "raw.jsonl"));
    CHECK(fs::exists(out / "corpus" / "gold.jsonl"));

    r = run_cli({"gen-corpus", "--config", cfg});
    CHECK(r.code == 0);
    CHECK(r.err.find("gen-corpus: up to date") != std::string::npos);

    REQUIRE(run_cli({"preprocess", "--config", cfg}).code == 0);
    for (const char* stem : {"reports", "train", "val", "test"})
        CHECK(fs::exists(out / "corpus" / (std::string(stem) + ".jsonl")));

    r = run_cli(
        {"stats", "--in", (out / "corpus" / "train.jsonl").string()});
    CHECK(r.code == 0);
    CHECK(r.out.find("dataset\tsection\tmean\tstd") != std::string::npos);
    CHECK(r.out.find("findings") != std::string::npos);
    CHECK(r.out.find("impressions") != std::string::npos);

    REQUIRE(run_cli({"build-vocab", "--config", cfg}).code == 0);
    const auto vocab =
        radsum::Vocab::load((out / "vocab.txt").string());
    CHECK(vocab.size() > radsum::Vocab::kReserved);
    CHECK(vocab.token_of(0) == "<pad>");

    r = run_cli({"train", "--all", "--config", cfg});
    REQUIRE(r.code == 0);
    for (const char* kind :
         {"general_pretrain", "instruction_tune", "dapt", "finetune"}) {
        CHECK(fs::exists(out / "checkpoints" / (std::string(kind) + ".ckpt")));
        const fs::path curve = out / "curves" / (std::string(kind) + ".csv");
        REQUIRE(fs::exists(curve));
        const std::string csv = radsum::read_file(curve.string());
        CHECK(csv.find("# seed 42") == 0);
        CHECK(csv.find("step,split,loss") != std::string::npos);
    }

    r = run_cli({"train", "--all", "--config", cfg});
    CHECK(r.code == 0);
    for (const char* kind :
         {"general_pretrain", "instruction_tune", "dapt", "finetune"})
        CHECK(r.err.find("train: " + std::string(kind) + ": up to date") !=
              std::string::npos);
    CHECK(r.err.find("saved") == std::string::npos);

    r = run_cli({"infer", "--config", cfg});
    REQUIRE(r.code == 0);
    const fs::path gen_path = out / "generations" / "dapt.jsonl";
    REQUIRE(fs::exists(gen_path));
    const auto [records, meta] =
        radsum::load_generations_jsonl(gen_path.string());
    CHECK(records.size() == 2);
    CHECK(meta.at("seed").get<uint64_t>() == 42);
    for (const auto& rec : records) CHECK(!rec.id.empty());

    r = run_cli({"infer", "--config", cfg});
    CHECK(r.code == 0);
    CHECK(r.err.find("infer: dapt: up to date") != std::string::npos);

    r = run_cli({"eval", "--config", cfg});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("BLEU4") != std::string::npos);
    CHECK(r.out.find("ROUGE-L") != std::string::npos);
    const fs::path tsv = out / "eval" / "dapt.tsv";
    REQUIRE(fs::exists(tsv));
    CHECK(radsum::read_file(tsv.string()).find("# seed 42") == 0);
    REQUIRE(fs::exists(out / "eval" / "dapt.json"));
    const Json dump = Json::parse(
        radsum::read_file((out / "eval" / "dapt.json").string()));
    CHECK(dump.at("seed").get<uint64_t>() == 42);
    CHECK(dump.at("n_examples").get<size_t>() == 2);

    r = run_cli({"compare", "--config", cfg});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("zero-shot (dapt)") != std::string::npos);
    CHECK(r.out.find("finetuned") != std::string::npos);
    CHECK(fs::exists(out / "generations" / "finetune.jsonl"));
    CHECK(fs::exists(out / "eval" / "finetune.tsv"));

    // Nothing appears outside the configured output root.
    std::set<std::string> after = dir_listing(dir);
    after.erase("run");
    CHECK(after == before);
}

TEST_CASE("identical configs in different directories produce identical bytes") {
    const fs::path dir = fresh_dir("det");
    const fs::path out_a = dir / "a";
    const fs::path out_b = dir / "b";
    const std::string cfg_a = write_config(dir, tiny_config(out_a), "a.json").string();
    const std::string cfg_b = write_config(dir, tiny_config(out_b), "b.json").string();

    for (const std::string& cfg : {cfg_a, cfg_b}) {
        REQUIRE(run_cli({"gen-corpus", "--config", cfg}).code == 0);
        REQUIRE(run_cli({"preprocess", "--config", cfg}).code == 0);
        REQUIRE(run_cli({"build-vocab", "--config", cfg}).code == 0);
        REQUIRE(run_cli({"train", "--stage", "0", "--config", cfg}).code == 0);
    }

    for (const char* rel : {"corpus/raw.jsonl", "corpus/gold.jsonl",
                            "corpus/train.jsonl", "vocab.txt",
                            "checkpoints/general_pretrain.ckpt"}) {
        const std::string a = radsum::read_file((out_a / rel).string());
        const std::string b = radsum::read_file((out_b / rel).string());
        CHECK_MESSAGE(a == b, rel);
    }
}

TEST_CASE("changing the relevant config section invalidates the stamp") {
    const fs::path dir = fresh_dir("stamp");
    const fs::path out = dir / "run";
    Json cfg = tiny_config(out);
    const std::string path = write_config(dir, cfg).string();

    REQUIRE(run_cli({"gen-corpus", "--config", path}).code == 0);
    CliResult r = run_cli({"gen-corpus", "--config", path});
    CHECK(r.err.find("up to date") != std::string::npos);

    // An unrelated section leaves the corpus stamp valid.
    cfg["sampler"]["max_new_tokens"] = 20;
    write_config(dir, cfg);
    r = run_cli({"gen-corpus", "--config", path});
    CHECK(r.err.find("up to date") != std::string::npos);

    cfg["corpus"]["n_reports"] = 41;
    write_config(dir, cfg);
    r = run_cli({"gen-corpus", "--config", path});
    CHECK(r.err.find("wrote 41 reports") != std::string::npos);
}
