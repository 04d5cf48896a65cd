#include "qrel/io/formats.hpp"

#include <cmath>
#include <sstream>

#include "qrel/error.hpp"
#include "qrel/io/files.hpp"

namespace qrel::io {

namespace {

using metrics::PredictionRecord;

Json vector_json(const Eigen::VectorXd& v)
{
    Json a = Json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

Eigen::VectorXd vector_from(const Json& a, const char* what)
{
    require(a.is_array(), std::string(what) + " must be an array");
    Eigen::VectorXd v(static_cast<Eigen::Index>(a.size()));
    for (std::size_t i = 0; i < a.size(); ++i) {
        require(a[i].is_number(), std::string(what) + " must hold numbers");
        v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
    }
    return v;
}

template <typename T>
T field(const Json& j, const char* key)
{
    require(j.is_object() && j.contains(key), std::string("missing field '") + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ValidationError(std::string("field '") + key + "' has the wrong type");
    }
}

std::vector<Json> parse_lines(const std::string& text, const std::string& what)
{
    std::vector<Json> out;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            out.push_back(Json::parse(line));
        } catch (const nlohmann::json::parse_error& e) {
            throw ValidationError(what + " line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

std::string lines_of(const std::vector<Json>& items)
{
    std::string out;
    for (const auto& j : items) {
        out += j.dump();
        out += '\n';
    }
    return out;
}

// Selector numbers travel as strings.
Json string_array(const double* data, Eigen::Index n)
{
    Json a = Json::array();
    for (Eigen::Index i = 0; i < n; ++i) a.push_back(format_double(data[i]));
    return a;
}

std::vector<double> strings_to_doubles(const Json& a, const char* what)
{
    require(a.is_array(), std::string(what) + " must be an array");
    std::vector<double> out;
    for (const auto& x : a) {
        require(x.is_string(), std::string(what) + " entries must be decimal strings");
        out.push_back(parse_double(x.get<std::string>()));
    }
    return out;
}

Eigen::VectorXd to_vector(const std::vector<double>& v)
{
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

} // namespace

Json record_to_json(const PredictionRecord& r, const std::string& manifest_hash)
{
    Json j;
    j["id"] = r.id;
    j["confidence"] = r.confidence;
    j["soft_acc"] = r.soft_acc;
    j["split"] = metrics::to_string(r.split);
    j["source"] = metrics::to_string(r.source);
    if (r.answer) j["answer"] = *r.answer;
    if (!r.step_probs.empty()) j["step_probs"] = r.step_probs;
    if (!r.refs.empty()) j["refs"] = r.refs;
    if (r.features) {
        Json f;
        f["v"] = vector_json(r.features->v);
        f["q"] = vector_json(r.features->q);
        f["o1"] = vector_json(r.features->o1);
        f["p"] = r.features->p;
        j["features"] = std::move(f);
    }
    j["manifest_hash"] = manifest_hash;
    return j;
}

PredictionRecord record_from_json(const Json& j)
{
    PredictionRecord r;
    r.id = field<std::string>(j, "id");
    r.confidence = field<double>(j, "confidence");
    r.soft_acc = field<double>(j, "soft_acc");
    r.split = metrics::split_from_string(field<std::string>(j, "split"));
    r.source = metrics::source_from_string(field<std::string>(j, "source"));
    if (j.contains("answer")) r.answer = field<std::string>(j, "answer");
    if (j.contains("step_probs")) r.step_probs = field<std::vector<double>>(j, "step_probs");
    if (j.contains("refs")) r.refs = field<std::vector<std::string>>(j, "refs");
    if (j.contains("features")) {
        const Json& f = j.at("features");
        FeatureVector fv;
        fv.v = vector_from(f.value("v", Json::array()), "features.v");
        fv.q = vector_from(f.value("q", Json::array()), "features.q");
        fv.o1 = vector_from(f.value("o1", Json::array()), "features.o1");
        fv.p = field<double>(f, "p");
        r.features = std::move(fv);
    }
    return r;
}

std::string records_to_jsonl(std::span<const PredictionRecord> records, const std::string& manifest_hash)
{
    std::vector<Json> items;
    items.reserve(records.size());
    for (const auto& r : records) items.push_back(record_to_json(r, manifest_hash));
    return lines_of(items);
}

RecordFile records_from_jsonl(const std::string& text)
{
    RecordFile file;
    bool first = true;
    for (const auto& j : parse_lines(text, "records")) {
        const std::string hash = j.value("manifest_hash", std::string());
        if (first) {
            file.manifest_hash = hash;
            first = false;
        } else {
            require(hash == file.manifest_hash, "records file mixes manifest hashes");
        }
        file.records.push_back(record_from_json(j));
    }
    metrics::validate_records(file.records);
    return file;
}

void write_records(const std::filesystem::path& path, std::span<const PredictionRecord> records,
                   const std::string& manifest_hash)
{
    write_text_file(path, records_to_jsonl(records, manifest_hash));
}

RecordFile read_records(const std::filesystem::path& path)
{
    try {
        return records_from_jsonl(read_text_file(path));
    } catch (const ValidationError& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

Json task_config_to_json(const model::TaskConfig& cfg)
{
    Json j;
    j["seed"] = cfg.seed;
    j["n_samples"] = cfg.n_samples;
    j["noise_rate"] = cfg.noise_rate;
    j["vocab_size"] = cfg.vocab_size;
    j["n_ood"] = cfg.n_ood;
    j["calib_size"] = cfg.calib_size;
    j["model_fraction"] = cfg.model_fraction;
    j["test_fraction"] = cfg.test_fraction;
    j["selector_fraction"] = cfg.selector_fraction;
    return j;
}

model::TaskConfig task_config_from_json(const Json& j)
{
    model::TaskConfig cfg;
    cfg.seed = field<std::uint64_t>(j, "seed");
    cfg.n_samples = field<int>(j, "n_samples");
    cfg.noise_rate = field<double>(j, "noise_rate");
    cfg.vocab_size = field<int>(j, "vocab_size");
    cfg.n_ood = j.value("n_ood", cfg.n_ood);
    cfg.calib_size = j.value("calib_size", cfg.calib_size);
    cfg.model_fraction = j.value("model_fraction", cfg.model_fraction);
    cfg.test_fraction = j.value("test_fraction", cfg.test_fraction);
    cfg.selector_fraction = j.value("selector_fraction", cfg.selector_fraction);
    cfg.validate();
    return cfg;
}

Json sample_to_json(const model::TaskSample& s)
{
    Json j;
    j["id"] = s.id;
    j["split"] = model::to_string(s.split);
    j["source"] = model::to_string(s.source);
    j["vision"] = s.input.vision_tokens;
    j["question"] = s.input.question_tokens;
    j["answer"] = s.answer;
    j["refs"] = s.refs;
    return j;
}

model::TaskSample sample_from_json(const Json& j)
{
    model::TaskSample s;
    s.id = field<std::string>(j, "id");
    s.split = model::sample_split_from_string(field<std::string>(j, "split"));
    s.source = model::sample_source_from_string(field<std::string>(j, "source"));
    s.input.vision_tokens = field<std::vector<int>>(j, "vision");
    s.input.question_tokens = field<std::vector<int>>(j, "question");
    s.answer = field<std::vector<int>>(j, "answer");
    s.refs = field<std::vector<std::string>>(j, "refs");
    return s;
}

void write_task_dir(const std::filesystem::path& dir, const model::TaskConfig& cfg, const model::TaskData& data)
{
    auto samples_text = [](const std::vector<model::TaskSample>& v) {
        std::vector<Json> items;
        for (const auto& s : v) items.push_back(sample_to_json(s));
        return lines_of(items);
    };
    write_text_file(dir / "task.json", dump(task_config_to_json(cfg)));
    write_text_file(dir / "samples.jsonl", samples_text(data.samples));
    write_text_file(dir / "ood.jsonl", samples_text(data.ood));
    write_text_file(dir / "calib.jsonl", calib_to_jsonl(calib_from_samples(data.calib)));
    write_text_file(dir / "calib_samples.jsonl", samples_text(data.calib));
}

TaskFiles read_task_dir(const std::filesystem::path& dir)
{
    TaskFiles t;
    try {
        t.config = task_config_from_json(Json::parse(read_text_file(dir / "task.json")));
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError((dir / "task.json").string() + ": " + e.what());
    }
    auto load = [&](const char* name) {
        std::vector<model::TaskSample> out;
        for (const auto& j : parse_lines(read_text_file(dir / name), name)) out.push_back(sample_from_json(j));
        return out;
    };
    t.data.samples = load("samples.jsonl");
    t.data.ood = load("ood.jsonl");
    t.data.calib = load("calib_samples.jsonl");
    return t;
}

std::string calib_to_jsonl(const mbq::CalibBatch& batch)
{
    std::vector<Json> items;
    for (const auto& s : batch.samples) {
        Json j;
        j["tokens"] = s.tokens;
        Json tags = Json::array();
        for (auto m : s.modality) tags.push_back(m == mbq::Modality::Vision ? "v" : "t");
        j["modality"] = std::move(tags);
        items.push_back(std::move(j));
    }
    return lines_of(items);
}

mbq::CalibBatch calib_from_jsonl(const std::string& text)
{
    mbq::CalibBatch batch;
    for (const auto& j : parse_lines(text, "calibration")) {
        mbq::CalibSequence s;
        s.tokens = field<std::vector<int>>(j, "tokens");
        for (const auto& tag : field<std::vector<std::string>>(j, "modality")) {
            require(tag == "v" || tag == "t", "modality tags must be \"v\" or \"t\", got \"" + tag + "\"");
            s.modality.push_back(tag == "v" ? mbq::Modality::Vision : mbq::Modality::Text);
        }
        batch.samples.push_back(std::move(s));
    }
    batch.validate();
    return batch;
}

mbq::CalibBatch read_calib(const std::filesystem::path& path)
{
    try {
        return calib_from_jsonl(read_text_file(path));
    } catch (const ValidationError& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

mbq::CalibBatch calib_from_samples(std::span<const model::TaskSample> samples)
{
    mbq::CalibBatch batch;
    for (const auto& s : samples) {
        mbq::CalibSequence seq;
        seq.tokens = model::training_sequence(s).tokens;
        seq.modality.assign(seq.tokens.size(), mbq::Modality::Text);
        std::fill_n(seq.modality.begin(), s.input.vision_tokens.size(), mbq::Modality::Vision);
        batch.samples.push_back(std::move(seq));
    }
    return batch;
}

Json selector_to_json(const confidence::SelectorModel& m, const std::string& manifest_hash)
{
    m.validate();
    Json j;
    j["in_dim"] = m.in_dim();
    j["hidden"] = m.hidden();
    j["mean"] = string_array(m.mean.data(), m.mean.size());
    j["stddev"] = string_array(m.stddev.data(), m.stddev.size());
    // Eigen is column-major; emit W1 row by row.
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> w1 = m.w1;
    j["w1"] = string_array(w1.data(), w1.size());
    j["b1"] = string_array(m.b1.data(), m.b1.size());
    j["w2"] = string_array(m.w2.data(), m.w2.size());
    j["b2"] = format_double(m.b2);
    j["manifest_hash"] = manifest_hash;
    return j;
}

confidence::SelectorModel selector_from_json(const Json& j, std::string* manifest_hash)
{
    const int in = field<int>(j, "in_dim");
    const int hidden = field<int>(j, "hidden");
    require(in >= 1 && hidden >= 1, "selector dimensions must be positive");
    confidence::SelectorModel m;
    m.mean = to_vector(strings_to_doubles(j.at("mean"), "mean"));
    m.stddev = to_vector(strings_to_doubles(j.at("stddev"), "stddev"));
    const auto w1 = strings_to_doubles(j.at("w1"), "w1");
    require(w1.size() == static_cast<std::size_t>(in) * static_cast<std::size_t>(hidden), "w1 has the wrong size");
    m.w1 = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(w1.data(), hidden,
                                                                                                     in);
    m.b1 = to_vector(strings_to_doubles(j.at("b1"), "b1"));
    m.w2 = to_vector(strings_to_doubles(j.at("w2"), "w2"));
    m.b2 = parse_double(field<std::string>(j, "b2"));
    m.validate();
    if (manifest_hash) *manifest_hash = j.value("manifest_hash", std::string());
    return m;
}

Json report_to_json(const metrics::ReliabilityReport& rep, const std::string& manifest_hash)
{
    Json j;
    j["acc"] = rep.accuracy;
    j["ece"] = rep.ece;
    j["c@0.5"] = rep.c_at_r[0];
    j["c@1"] = rep.c_at_r[1];
    j["c@5"] = rep.c_at_r[2];
    j["auc"] = rep.rc_auc;
    j["phi10"] = rep.phi10;
    j["phi100"] = rep.phi100;
    j["gamma_10"] = rep.gamma10;
    j["gamma_100"] = rep.gamma100;
    j["n"] = rep.n;
    j["label"] = rep.label;
    j["meta"] = {{"manifest_hash", manifest_hash}, {"ece_bins", rep.ece_bins}};
    return j;
}

std::string curve_to_csv(const metrics::RiskCoverageCurve& curve)
{
    std::string out = "coverage,risk,threshold\n";
    for (const auto& p : curve.points)
        out += format_double(p.coverage) + "," + format_double(p.risk) + "," + format_double(p.threshold) + "\n";
    return out;
}

std::string mixture_to_csv(std::span<const metrics::MixtureRow> rows)
{
    std::string out = "ood_fraction,accuracy,coverage,phi,n_id,n_ood\n";
    for (const auto& r : rows)
        out += format_double(r.fraction) + "," + format_double(r.accuracy) + "," + format_double(r.coverage) + "," +
               format_double(r.phi) + "," + std::to_string(r.n_id) + "," + std::to_string(r.n_ood) + "\n";
    return out;
}

std::string dump(const Json& j)
{
    return j.dump(2) + "\n";
}

} // namespace qrel::io
