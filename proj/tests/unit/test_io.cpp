#include <gtest/gtest.h>

#include <filesystem>

#include "oracles/metrics_oracle.hpp"
#include "qrel/error.hpp"
#include "qrel/io/files.hpp"
#include "qrel/io/formats.hpp"

using namespace qrel;
using namespace qrel::io;

namespace fs = std::filesystem;

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

metrics::PredictionRecord full_record()
{
    metrics::PredictionRecord r;
    r.id = "id-000007";
    r.confidence = 0.1 + 0.2;
    r.soft_acc = 2.0 / 3.0;
    r.split = metrics::Split::Dev;
    r.source = metrics::Source::OOD_B;
    r.answer = "w21";
    r.step_probs = {0.9, 1.0 / 3.0};
    r.refs = {"w21", "w22"};
    r.features = FeatureVector{Eigen::Vector2d(1e-300, -0.5), Eigen::Vector2d(3, 4), Eigen::Vector2d(5, 6), 0.3};
    return r;
}

} // namespace

TEST(Files, DoubleFormatRoundTrips)
{
    Rng rng(71);
    for (int i = 0; i < 1000; ++i) {
        const double x = rng.normal() * std::pow(10.0, rng.uniform(-30, 30));
        ASSERT_EQ(parse_double(format_double(x)), x);
    }
    EXPECT_EQ(format_double(0.5), "0.5");
    EXPECT_THROW(format_double(NAN), ValidationError);
    EXPECT_THROW(parse_double("1.5x"), ValidationError);
    EXPECT_THROW(parse_double(""), ValidationError);
}

TEST(Files, AtomicWriteCreatesParents)
{
    TempDir t("qrel_io_files");
    const auto p = t.path / "a" / "b" / "c.txt";
    write_text_file(p, "hello\n");
    EXPECT_EQ(read_text_file(p), "hello\n");
    write_text_file(p, "x");
    EXPECT_EQ(read_text_file(p), "x");
    std::size_t entries = 0;
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(p.parent_path())) ++entries;
    EXPECT_EQ(entries, 1u);
    EXPECT_THROW(read_text_file(t.path / "missing"), ValidationError);
}

TEST(Files, DigestAndHex)
{
    TempDir t("qrel_io_digest");
    write_text_file(t.path / "a", "abc");
    write_text_file(t.path / "b", "abd");
    EXPECT_EQ(file_digest(t.path / "a"), hex64(fnv1a64("abc")));
    EXPECT_NE(file_digest(t.path / "a"), file_digest(t.path / "b"));
    EXPECT_EQ(hex64(0xABCULL), "0000000000000abc");
}

TEST(Records, JsonRoundTripIsExact)
{
    const auto r = full_record();
    const auto j = record_to_json(r, "feedface");
    EXPECT_EQ(j["manifest_hash"], "feedface");
    EXPECT_EQ(record_from_json(Json::parse(j.dump())), r);

    metrics::PredictionRecord bare;
    bare.id = "x";
    const auto jb = record_to_json(bare, "");
    EXPECT_FALSE(jb.contains("features"));
    EXPECT_FALSE(jb.contains("answer"));
    EXPECT_EQ(record_from_json(jb), bare);
}

TEST(Records, JsonlRoundTripAndHashes)
{
    Rng rng(72);
    auto recs = oracle::random_records(rng, 30);
    recs[3] = full_record();
    const auto text = records_to_jsonl(recs, "h1");
    const auto back = records_from_jsonl(text);
    EXPECT_EQ(back.records, recs);
    EXPECT_EQ(back.manifest_hash, "h1");

    const auto a = records_to_jsonl(std::span(recs).first(2), "h1");
    const auto b = records_to_jsonl(std::span(recs).subspan(2, 2), "h2");
    EXPECT_THROW(records_from_jsonl(a + b), ValidationError);
    EXPECT_TRUE(records_from_jsonl("").records.empty());
}

TEST(Records, MalformedInputNamesTheLine)
{
    const auto good = records_to_jsonl(std::vector{full_record()}, "h");
    try {
        records_from_jsonl(good + "{not json\n");
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
    }
    EXPECT_THROW(records_from_jsonl(R"({"id":"a","confidence":0.5,"split":"test","source":"ID"})"), ValidationError);
    EXPECT_THROW(records_from_jsonl(R"({"id":"a","confidence":"x","soft_acc":1,"split":"test","source":"ID"})"),
                 ValidationError);
    EXPECT_THROW(records_from_jsonl(R"({"id":"a","confidence":2,"soft_acc":1,"split":"test","source":"ID"})"),
                 ValidationError);
    // Duplicate ids.
    EXPECT_THROW(records_from_jsonl(good + good), ValidationError);
}

TEST(Records, FileRoundTrip)
{
    TempDir t("qrel_io_records");
    const std::vector recs{full_record()};
    write_records(t.path / "r.jsonl", recs, "abc");
    const auto back = read_records(t.path / "r.jsonl");
    EXPECT_EQ(back.records, recs);
    EXPECT_EQ(back.manifest_hash, "abc");
    EXPECT_THROW(read_records(t.path / "nope.jsonl"), ValidationError);
}

TEST(Task, DirectoryRoundTrip)
{
    TempDir t("qrel_io_task");
    model::TaskConfig cfg;
    cfg.seed = 3;
    cfg.n_samples = 60;
    cfg.n_ood = 5;
    cfg.calib_size = 4;
    cfg.noise_rate = 0.3;
    const auto data = model::generate_task(cfg);
    write_task_dir(t.path, cfg, data);
    for (const char* f : {"task.json", "samples.jsonl", "ood.jsonl", "calib.jsonl"})
        EXPECT_TRUE(fs::exists(t.path / f)) << f;
    const auto back = read_task_dir(t.path);
    EXPECT_EQ(back.data.samples, data.samples);
    EXPECT_EQ(back.data.ood, data.ood);
    EXPECT_EQ(back.data.calib, data.calib);
    EXPECT_EQ(back.config.seed, 3u);
    EXPECT_EQ(back.config.noise_rate, 0.3);
    EXPECT_EQ(read_calib(t.path / "calib.jsonl").size(), 4u);
    EXPECT_THROW(read_task_dir(t.path / "missing"), ValidationError);
}

TEST(Calib, TagsAndRoundTrip)
{
    model::TaskSample s;
    s.input = {{1, 8, 9, 10, 11}, {5}};
    s.answer = {20, model::kEosToken};
    const auto b = calib_from_samples(std::vector{s});
    ASSERT_EQ(b.size(), 1u);
    EXPECT_EQ(b.samples[0].tokens, (std::vector<int>{1, 8, 9, 10, 11, 5, 20, 0}));
    for (std::size_t i = 0; i < 8; ++i)
        EXPECT_EQ(b.samples[0].modality[i], i < 5 ? mbq::Modality::Vision : mbq::Modality::Text);
    const auto back = calib_from_jsonl(calib_to_jsonl(b));
    EXPECT_EQ(back.samples[0].tokens, b.samples[0].tokens);
    EXPECT_EQ(back.samples[0].modality, b.samples[0].modality);
    EXPECT_THROW(calib_from_jsonl(R"({"tokens":[1,2],"modality":["v","x"]})"), ValidationError);
    EXPECT_THROW(calib_from_jsonl(R"({"tokens":[1,2],"modality":["v"]})"), ValidationError);
}

TEST(Selector, JsonRoundTripIsBitExact)
{
    Rng rng(73);
    confidence::SelectorTrainConfig cfg;
    cfg.hidden = 3;
    auto m = confidence::selector_init(4, cfg);
    for (Eigen::Index i = 0; i < 4; ++i) {
        m.mean(i) = rng.normal() / 3.0;
        m.stddev(i) = 1.0 + rng.uniform();
    }
    m.b2 = 0.1 + 0.2;
    std::string hash;
    const auto j = Json::parse(dump(selector_to_json(m, "hh")));
    EXPECT_TRUE(j["w1"][0].is_string());
    EXPECT_EQ(io::selector_from_json(j, &hash), m);
    EXPECT_EQ(hash, "hh");
    auto bad = j;
    bad["w1"].erase(0);
    EXPECT_THROW(io::selector_from_json(bad), ValidationError);
    bad = j;
    bad["stddev"][0] = "0";
    EXPECT_THROW(io::selector_from_json(bad), ValidationError);
}

TEST(Report, KeysAndCsv)
{
    metrics::ReliabilityReport rep;
    rep.label = "bf16";
    rep.n = 3;
    const auto j = report_to_json(rep, "hash");
    for (const char* k : {"acc", "ece", "c@0.5", "c@1", "c@5", "auc", "phi10", "phi100", "gamma_10", "gamma_100",
                          "n", "label", "meta"})
        EXPECT_TRUE(j.contains(k)) << k;
    EXPECT_EQ(j["meta"]["manifest_hash"], "hash");
    EXPECT_EQ(j["meta"]["ece_bins"], 15);

    metrics::RiskCoverageCurve c{{{0.5, 0.25, 0.75}, {1.0, 0.5, 0.125}}};
    EXPECT_EQ(curve_to_csv(c), "coverage,risk,threshold\n0.5,0.25,0.75\n1,0.5,0.125\n");
    const std::vector<metrics::MixtureRow> rows{{0.5, 0.75, 1, -2.5, 3, 4}};
    EXPECT_EQ(mixture_to_csv(rows), "ood_fraction,accuracy,coverage,phi,n_id,n_ood\n0.5,0.75,1,-2.5,3,4\n");
}
