#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <sys/wait.h>

#include "qrel/error.hpp"
#include "qrel/cli/commands.hpp"
#include "qrel/cli/manifest.hpp"
#include "qrel/io/files.hpp"
#include "qrel/io/formats.hpp"

using namespace qrel;
using namespace qrel::cli;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name)
    {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

model::TaskConfig tiny_task()
{
    model::TaskConfig t;
    t.n_samples = 120;
    t.n_ood = 10;
    t.calib_size = 6;
    return t;
}

void tiny_model(model::ModelConfig& m, model::TrainConfig& t)
{
    m.d_model = 16;
    m.n_heads = 2;
    m.n_layers = 1;
    t.epochs = 1;
}

// Runs the built binary; returns its exit status.
int run_cli(const std::string& args, std::string* output = nullptr)
{
    const auto log = fs::temp_directory_path() / "qrel_cli_output.txt";
    const std::string cmd = std::string(QREL_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    if (output) *output = io::read_text_file(log);
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

} // namespace

TEST(Manifest, HashIgnoresPathsButNotContent)
{
    RunManifest a;
    a.model_path = "/a/model.sqnt";
    a.model_digest = "0123";
    a.label = "int4_HQQ";
    a.output_dir = "/out/a";
    auto b = a;
    b.model_path = "/elsewhere/model.sqnt";
    b.output_dir = "/out/b";
    b.calib_path = "/x/calib.jsonl";
    EXPECT_EQ(a.hash(), b.hash());
    b.model_digest = "4567";
    EXPECT_NE(a.hash(), b.hash());
    b = a;
    b.spec.group_size = 32;
    EXPECT_NE(a.hash(), b.hash());
    b = a;
    b.seed = 9;
    EXPECT_NE(a.hash(), b.hash());
    EXPECT_EQ(RunManifest::from_json(a.to_json()).hash(), a.hash());
    EXPECT_THROW(RunManifest::from_json(io::Json::parse(R"({"label":"bf16"})")), ValidationError);
}

TEST(Manifest, SidecarFiles)
{
    TempDir t("qrel_cli_manifest");
    const auto art = t.path / "records.jsonl";
    EXPECT_EQ(manifest_path(art), t.path / "records.jsonl.manifest.json");
    EXPECT_FALSE(read_manifest(art).has_value());
    RunManifest m;
    m.model_digest = "ab";
    write_manifest(art, m);
    const auto back = read_manifest(art);
    ASSERT_TRUE(back.has_value());
    EXPECT_EQ(back->hash(), m.hash());
    const auto j = io::Json::parse(io::read_text_file(manifest_path(art)));
    EXPECT_EQ(j["hash"], m.hash());
}

TEST(Manifest, OutputRoot)
{
    ::unsetenv("QREL_OUTPUT_ROOT");
    EXPECT_EQ(output_path("a/b"), fs::path("a/b"));
    ::setenv("QREL_OUTPUT_ROOT", "/tmp/root", 1);
    EXPECT_EQ(output_path("a/b"), fs::path("/tmp/root/a/b"));
    EXPECT_EQ(output_path("/abs/x"), fs::path("/abs/x"));
    ::unsetenv("QREL_OUTPUT_ROOT");
}

TEST(Commands, EndToEndArtifacts)
{
    TempDir t("qrel_cli_e2e");
    std::ostringstream log;
    gen_task({tiny_task(), t.path / "task", false}, log);
    EXPECT_THROW(gen_task({tiny_task(), t.path / "task", false}, log), ValidationError);
    EXPECT_NO_THROW(gen_task({tiny_task(), t.path / "task", true}, log));

    TrainModelOptions tm{t.path / "task", t.path / "model.sqnt", {}, {}};
    tiny_model(tm.model, tm.train);
    train_model(tm, log);

    QuantizeOptions q;
    q.model = t.path / "model.sqnt";
    q.label = "int4_MBQ";
    q.out = t.path / "q" / "model.sqnt";
    EXPECT_THROW(quantize(q, log), ValidationError);
    q.calib = t.path / "task" / "calib.jsonl";
    quantize(q, log);
    EXPECT_NE(log.str().find("of 16-bit"), std::string::npos);
    const auto man = read_manifest(q.out);
    ASSERT_TRUE(man.has_value());
    EXPECT_EQ(man->label, "int4_MBQ");
    EXPECT_EQ(man->calib_digest, io::file_digest(*q.calib));

    auto requant = q;
    requant.model = q.out;
    requant.out = t.path / "qq.sqnt";
    EXPECT_THROW(quantize(requant, log), ValidationError);

    eval({q.out, t.path / "task", "heldout", t.path / "q" / "records.jsonl", 4}, log);
    const auto recs = io::read_records(t.path / "q" / "records.jsonl");
    EXPECT_EQ(recs.manifest_hash, man->hash());
    EXPECT_EQ(recs.records.size(), 72u + 20u);
    EXPECT_THROW(eval({q.out, t.path / "task", "val", t.path / "x.jsonl", 4}, log), ValidationError);

    TrainSelectorOptions ts{t.path / "q" / "records.jsonl", t.path / "q" / "selector.json", {}};
    ts.cfg.epochs = 3;
    train_selector(ts, log);
    rescore({t.path / "q" / "records.jsonl", t.path / "q" / "selector.json", t.path / "q" / "rescored.jsonl", false},
            log);
    const auto rescored = io::read_records(t.path / "q" / "rescored.jsonl");
    EXPECT_EQ(rescored.manifest_hash, man->hash());
    ASSERT_EQ(rescored.records.size(), recs.records.size());
    for (std::size_t i = 0; i < rescored.records.size(); ++i) {
        EXPECT_EQ(rescored.records[i].id, recs.records[i].id);
        EXPECT_EQ(rescored.records[i].soft_acc, recs.records[i].soft_acc);
    }

    ReportOptions rp;
    rp.records = t.path / "q" / "rescored.jsonl";
    rp.out = t.path / "q" / "report.json";
    rp.curve = t.path / "q" / "curve.csv";
    report(rp, log);
    const auto rep = io::Json::parse(io::read_text_file(rp.out));
    EXPECT_EQ(rep["label"], "int4_MBQ");
    EXPECT_EQ(rep["meta"]["manifest_hash"], man->hash());
    EXPECT_EQ(io::read_text_file(*rp.curve).rfind("coverage,risk,threshold\n", 0), 0u);
    rp.source = "OOD";
    rp.out = t.path / "q" / "report.ood.json";
    report(rp, log);
    EXPECT_EQ(io::Json::parse(io::read_text_file(rp.out))["n"], 20);

    MixOptions mo;
    mo.id_records = t.path / "q" / "records.jsonl";
    mo.ood_records = mo.id_records;
    mo.out = t.path / "q" / "mix.csv";
    mix(mo, log);
    const auto csv = io::read_text_file(mo.out);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 12);

    // A bf16 evaluation of the same base model is a different run.
    eval({t.path / "model.sqnt", t.path / "task", "heldout", t.path / "bf16.jsonl", 4}, log);
    EXPECT_THROW(rescore({t.path / "bf16.jsonl", t.path / "q" / "selector.json", t.path / "mixed.jsonl", false}, log),
                 ValidationError);
    EXPECT_NO_THROW(
        rescore({t.path / "bf16.jsonl", t.path / "q" / "selector.json", t.path / "mixed.jsonl", true}, log));
}

TEST(Commands, BareQuantizedCheckpointNeedsItsManifest)
{
    TempDir t("qrel_cli_bare");
    std::ostringstream log;
    gen_task({tiny_task(), t.path / "task", false}, log);
    TrainModelOptions tm{t.path / "task", t.path / "model.sqnt", {}, {}};
    tiny_model(tm.model, tm.train);
    train_model(tm, log);
    QuantizeOptions q;
    q.model = t.path / "model.sqnt";
    q.label = "int3_HQQ";
    q.out = t.path / "q.sqnt";
    quantize(q, log);
    fs::remove(manifest_path(q.out));
    EXPECT_THROW(eval({q.out, t.path / "task", "test", t.path / "r.jsonl", 4}, log), ValidationError);
}

TEST(Binary, VersionAndHelp)
{
    std::string out;
    EXPECT_EQ(run_cli("--version", &out), 0);
    EXPECT_NE(out.find("0.1.0"), std::string::npos);
    EXPECT_EQ(run_cli("--help"), 0);
}

TEST(Binary, UsageErrorsExitWithTwo)
{
    EXPECT_EQ(run_cli(""), 2);
    EXPECT_EQ(run_cli("frobnicate"), 2);
    EXPECT_EQ(run_cli("quantize --label int4_HQQ"), 2);
    EXPECT_EQ(run_cli("gen-task --out /tmp/qrel_bin --n-samples notanumber"), 2);
}

TEST(Binary, ValidationErrorsExitWithTwo)
{
    TempDir t("qrel_cli_bin");
    const std::string task = (t.path / "task").string();
    ASSERT_EQ(run_cli("gen-task --out " + task + " --n-samples 100 --n-ood 5 --calib-size 4"), 0);
    EXPECT_EQ(run_cli("gen-task --out " + task), 2);
    const std::string model = (t.path / "m.sqnt").string();
    ASSERT_EQ(run_cli("train-model --task " + task + " --out " + model + " --epochs 1 --d-model 16 --n-heads 2"), 0);
    std::string out;
    EXPECT_EQ(run_cli("quantize --model " + model + " --label int4_MBQ --out " + (t.path / "q.sqnt").string(), &out),
              2);
    EXPECT_NE(out.find("--calib"), std::string::npos) << out;
    EXPECT_EQ(run_cli("quantize --model " + model + " --label int5_HQQ --out " + (t.path / "q.sqnt").string()), 2);
    EXPECT_EQ(run_cli("eval --model " + (t.path / "missing.sqnt").string() + " --task " + task + " --out " +
                      (t.path / "r.jsonl").string()),
              2);
}

TEST(Binary, NumericalFailureExitsWithThree)
{
    TempDir t("qrel_cli_nan");
    const std::string task = (t.path / "task").string();
    ASSERT_EQ(run_cli("gen-task --out " + task + " --n-samples 100 --n-ood 5 --calib-size 4"), 0);
    std::string out;
    EXPECT_EQ(run_cli("train-model --task " + task + " --out " + (t.path / "m.sqnt").string() +
                          " --epochs 3 --d-model 16 --n-heads 2 --lr 1e150",
                      &out),
              3)
        << out;
}

TEST(Binary, ConfigFileSuppliesOptions)
{
    TempDir t("qrel_cli_config");
    const auto cfg = t.path / "gen.toml";
    io::write_text_file(cfg, "[gen-task]\nn-samples = 100\nn-ood = 3\ncalib-size = 2\nseed = 4\n");
    const std::string task = (t.path / "task").string();
    ASSERT_EQ(run_cli("--config " + cfg.string() + " gen-task --out " + task), 0);
    const auto files = io::read_task_dir(task);
    EXPECT_EQ(files.config.n_samples, 100);
    EXPECT_EQ(files.config.seed, 4u);
    EXPECT_EQ(files.data.ood.size(), 6u);
}
