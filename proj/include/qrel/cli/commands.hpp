#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "qrel/confidence/selector.hpp"
#include "qrel/model/decoder.hpp"
#include "qrel/model/task.hpp"
#include "qrel/model/trainer.hpp"
#include "qrel/pipeline/pipeline.hpp"
#include "qrel/quant/quant_spec.hpp"

namespace qrel::cli {

namespace fs = std::filesystem;

struct GenTaskOptions {
    model::TaskConfig task;
    fs::path out_dir;
    bool force = false;
};
void gen_task(const GenTaskOptions& o, std::ostream& log);

struct TrainModelOptions {
    fs::path task_dir;
    fs::path out;
    model::ModelConfig model;
    model::TrainConfig train;
};
void train_model(const TrainModelOptions& o, std::ostream& log);

struct QuantizeOptions {
    fs::path model;
    std::string label = "int4_HQQ";
    quant::QuantSpec base;  // fields other than bits/method
    std::optional<fs::path> calib;
    fs::path out;
    std::uint64_t seed = 0;
};
void quantize(const QuantizeOptions& o, std::ostream& log);

/// Which samples to evaluate: train, dev, test (in-distribution), ood, or
/// heldout (all of them).
struct EvalOptions {
    fs::path model;
    fs::path task_dir;
    std::string split = "heldout";
    fs::path out;
    int max_new = pipeline::kDefaultMaxNew;
};
void eval(const EvalOptions& o, std::ostream& log);

struct TrainSelectorOptions {
    fs::path records;
    fs::path out;
    confidence::SelectorTrainConfig cfg;
};
void train_selector(const TrainSelectorOptions& o, std::ostream& log);

struct RescoreOptions {
    fs::path records;
    fs::path selector;
    fs::path out;
    bool allow_mixed = false;
};
void rescore(const RescoreOptions& o, std::ostream& log);

struct ReportOptions {
    fs::path records;
    std::optional<fs::path> dev;  // defaults to the dev split of `records`
    fs::path out;
    std::optional<fs::path> curve;
    std::optional<std::string> label;
    std::string source = "ID";  // ID, OOD_A, OOD_B or OOD
    int ece_bins = 15;
    bool allow_mixed = false;
};
void report(const ReportOptions& o, std::ostream& log);

struct MixOptions {
    fs::path id_records;
    fs::path ood_records;
    std::vector<double> fractions;  // empty: 0, 0.1, ..., 1
    std::optional<double> gamma;     // default: selected on the ID dev split at cost c
    double cost = 10.0;
    std::uint64_t seed = 0;
    fs::path out;
    bool allow_mixed = false;
};
void mix(const MixOptions& o, std::ostream& log);

struct RunOptions {
    fs::path out_dir;
    model::TaskConfig task;
    model::ModelConfig model;
    model::TrainConfig train;
    quant::QuantSpec base;
    std::vector<std::string> labels;  // empty: the seven standard rows
    confidence::SelectorTrainConfig selector;
    bool force = false;
};
/// gen-task, train-model, then quantize/eval/train-selector/rescore/report/mix per label.
void run(const RunOptions& o, std::ostream& log);

const std::vector<std::string>& standard_labels();

} // namespace qrel::cli
