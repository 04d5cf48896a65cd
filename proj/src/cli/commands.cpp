#include "qrel/cli/commands.hpp"

#include <cstdio>
#include <iomanip>

#include "qrel/cli/manifest.hpp"
#include "qrel/error.hpp"
#include "qrel/io/files.hpp"
#include "qrel/io/formats.hpp"
#include "qrel/metrics/metrics.hpp"
#include "qrel/model/quantize_model.hpp"
#include "qrel/rng.hpp"
#include "qrel/version.hpp"

namespace qrel::cli {

namespace {

using metrics::PredictionRecord;

std::string percent(double x)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * x);
    return buf;
}

bool all_fp32(const quant::Checkpoint& ckpt)
{
    for (const auto& t : ckpt.tensors)
        if (t.quantized()) return false;
    return true;
}

/// Manifest of a checkpoint: its sidecar, or for a bare full-precision
/// checkpoint a synthesized bf16 manifest.
RunManifest checkpoint_manifest(const fs::path& model)
{
    if (auto m = read_manifest(model)) return *m;
    const auto bytes = quant::read_file_bytes(model);
    require(all_fp32(quant::deserialize(bytes)),
            "quantized checkpoint '" + model.string() + "' has no manifest (" + manifest_path(model).string() + ")");
    RunManifest m;
    m.model_path = model.string();
    m.model_digest = io::hex64(fnv1a64(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size())));
    m.label = "bf16";
    m.tool_version = kToolVersion;
    return m;
}

void copy_manifest(const fs::path& from_artifact, const fs::path& to_artifact)
{
    if (auto m = read_manifest(from_artifact)) write_manifest(to_artifact, *m);
}

void check_same_run(const std::string& a, const std::string& b, const std::string& what, bool allow_mixed)
{
    if (a == b || allow_mixed) return;
    throw ValidationError(what + " come from different runs (manifest " + a + " vs " + b +
                          "); pass --allow-mixed to combine them anyway");
}

std::vector<PredictionRecord> by_source(const std::vector<PredictionRecord>& records, metrics::Split split,
                                        const std::string& source)
{
    if (source == "OOD") {
        std::vector<PredictionRecord> out;
        for (const auto& r : records)
            if (r.split == split && r.source != metrics::Source::ID) out.push_back(r);
        return out;
    }
    return pipeline::select(records, split, metrics::source_from_string(source));
}

std::vector<model::TaskSample> samples_for(const io::TaskFiles& task, const std::string& split)
{
    std::vector<model::TaskSample> out;
    if (split == "ood") return task.data.ood;
    if (split == "heldout") {
        for (const auto& s : task.data.samples)
            if (s.split != model::SampleSplit::Model) out.push_back(s);
        out.insert(out.end(), task.data.ood.begin(), task.data.ood.end());
        return out;
    }
    require(split == "train" || split == "dev" || split == "test",
            "unknown split '" + split + "' (expected train, dev, test, ood or heldout)");
    const auto want = model::sample_split_from_string(split);
    for (const auto& s : task.data.samples)
        if (s.split == want) out.push_back(s);
    return out;
}

} // namespace

const std::vector<std::string>& standard_labels()
{
    static const std::vector<std::string> labels{"bf16",     "int8_HQQ", "int8_MBQ", "int4_HQQ",
                                                 "int4_MBQ", "int3_HQQ", "int3_MBQ"};
    return labels;
}

void gen_task(const GenTaskOptions& o, std::ostream& log)
{
    o.task.validate();
    const fs::path dir = output_path(o.out_dir);
    if (fs::exists(dir / "task.json") && !o.force)
        throw ValidationError("task files already exist in '" + dir.string() + "'; pass --force to overwrite");
    const auto data = model::generate_task(o.task);
    io::write_task_dir(dir, o.task, data);
    std::size_t counts[4] = {0, 0, 0, 0};
    for (const auto& s : data.samples) ++counts[static_cast<int>(s.split)];
    log << "wrote " << dir.string() << ": model " << counts[0] << ", train " << counts[1] << ", dev " << counts[2]
        << ", test " << counts[3] << ", ood " << data.ood.size() << ", calib " << data.calib.size() << "\n";
}

void train_model(const TrainModelOptions& o, std::ostream& log)
{
    const auto task = io::read_task_dir(o.task_dir);
    const auto cfg = pipeline::task_model_config(task.config, o.model);
    model::TrainLog tlog;
    const auto m = pipeline::train_task_model(task.data, cfg, o.train, &tlog);
    const fs::path out = output_path(o.out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    quant::write_checkpoint(out, model::to_checkpoint(m));
    log << "trained " << m.parameter_count() << " parameters for " << o.train.epochs << " epochs";
    if (!tlog.epoch_loss.empty()) log << ", final loss " << tlog.epoch_loss.back();
    log << "\nwrote " << out.string() << "\n";
}

void quantize(const QuantizeOptions& o, std::ostream& log)
{
    const auto label = quant::QuantLabel::parse(o.label, o.base);
    const auto bytes = quant::read_file_bytes(o.model);
    const auto input = quant::deserialize(bytes);
    require(all_fp32(input), "input model '" + o.model.string() + "' is already quantized");

    const bool mbq = label.spec && label.spec->method == quant::Method::MBQ;
    if (mbq && !o.calib)
        throw ValidationError("MBQ quantization needs calibration data: pass --calib <file> "
                              "(gen-task writes calib.jsonl)");

    const fs::path out = output_path(o.out);
    RunManifest man;
    man.model_path = o.model.string();
    man.model_digest = io::hex64(fnv1a64(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size())));
    man.label = label.str();
    man.spec = label.spec.value_or(o.base);
    if (mbq) {
        man.calib_path = o.calib->string();
        man.calib_digest = io::file_digest(*o.calib);
    }
    man.seed = o.seed;
    man.output_dir = out.parent_path().string();
    man.tool_version = kToolVersion;
    write_manifest(out, man);

    quant::Checkpoint ckpt;
    if (label.full_precision()) {
        io::write_text_file(out, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
        ckpt = input;
    } else {
        const auto m = model::from_checkpoint(input);
        std::optional<mbq::CalibBatch> calib;
        if (mbq) calib = io::read_calib(*o.calib);
        quant::HqqLog hlog;
        ckpt = pipeline::quantize_for_label(m, label, calib, nullptr, &hlog);
        quant::write_checkpoint(out, ckpt);
        if (label.spec->method == quant::Method::HQQ)
            log << "hqq: " << hlog.groups << " groups, " << hlog.iterations << " iterations, " << hlog.early_stopped
                << " stopped early\n";
    }
    const auto rep = model::storage_report(ckpt);
    const auto file_bytes = static_cast<double>(fs::file_size(out));
    log << "label " << label.str() << ": " << rep.weights << " weights, checkpoint " << fs::file_size(out)
        << " bytes = " << percent(file_bytes / static_cast<double>(rep.fp16_bytes)) << " of 16-bit ("
        << rep.fp16_bytes << " bytes), " << percent(file_bytes / static_cast<double>(rep.fp32_bytes))
        << " of 32-bit (" << rep.fp32_bytes << " bytes)\n";
    if (rep.quantized_weights > 0)
        log << "quantized layers: " << rep.quantized_weights << " weights in " << rep.quantized_bytes
            << " bytes = " << percent(static_cast<double>(rep.quantized_bytes) / (2.0 * static_cast<double>(rep.quantized_weights)))
            << " of 16-bit, "
            << percent(static_cast<double>(rep.quantized_bytes) / (4.0 * static_cast<double>(rep.quantized_weights)))
            << " of 32-bit\n";
    log << "wrote " << out.string() << "\n";
}

void eval(const EvalOptions& o, std::ostream& log)
{
    const RunManifest man = checkpoint_manifest(o.model);
    const auto m = model::from_checkpoint(quant::read_checkpoint(o.model));
    const auto task = io::read_task_dir(o.task_dir);
    const auto samples = samples_for(task, o.split);
    const auto records = pipeline::evaluate(m, samples, o.max_new);

    const fs::path out = output_path(o.out);
    write_manifest(out, man);
    io::write_records(out, records, man.hash());
    log << "evaluated " << records.size() << " samples (" << o.split << ")";
    if (!records.empty()) log << ", accuracy " << metrics::accuracy(records);
    log << "\nwrote " << out.string() << "\n";
}

void train_selector(const TrainSelectorOptions& o, std::ostream& log)
{
    const auto file = io::read_records(o.records);
    const auto train = pipeline::select(file.records, metrics::Split::Train);
    require(!train.empty(), "no in-distribution train-split records in '" + o.records.string() + "'");
    confidence::SelectorTrainLog slog;
    const auto sel = confidence::selector_train(pipeline::selector_examples(train), o.cfg, &slog);

    const fs::path out = output_path(o.out);
    copy_manifest(o.records, out);
    io::write_text_file(out, io::dump(io::selector_to_json(sel, file.manifest_hash)));
    for (const auto& w : slog.warnings) log << "warning: " << w << "\n";
    log << "selector trained on " << train.size() << " records; best epoch " << slog.best_epoch
        << ", held-out mse " << slog.best_heldout_mse << " (initial " << slog.initial_heldout_mse << ")\n";
    log << "wrote " << out.string() << "\n";
}

void rescore(const RescoreOptions& o, std::ostream& log)
{
    const auto file = io::read_records(o.records);
    std::string sel_hash;
    const auto sel = io::selector_from_json(io::Json::parse(io::read_text_file(o.selector)), &sel_hash);
    check_same_run(file.manifest_hash, sel_hash, "records and selector", o.allow_mixed);
    const auto out_records = pipeline::rescore(file.records, sel);

    const fs::path out = output_path(o.out);
    copy_manifest(o.records, out);
    io::write_records(out, out_records, file.manifest_hash);
    log << "rescored " << out_records.size() << " records\nwrote " << out.string() << "\n";
}

void report(const ReportOptions& o, std::ostream& log)
{
    const auto file = io::read_records(o.records);
    auto dev_file = file;
    if (o.dev) {
        dev_file = io::read_records(*o.dev);
        check_same_run(file.manifest_hash, dev_file.manifest_hash, "test and dev records", o.allow_mixed);
    }
    const auto test = by_source(file.records, metrics::Split::Test, o.source);
    const auto dev = pipeline::select(dev_file.records, metrics::Split::Dev);
    require(!test.empty(), "no test records with source " + o.source);
    require(!dev.empty(), "no dev records to select thresholds on");

    std::string label = "unlabeled";
    if (o.label)
        label = *o.label;
    else if (auto man = read_manifest(o.records))
        label = man->label;
    const auto rep = metrics::make_report(test, dev, label, o.ece_bins);

    const fs::path out = output_path(o.out);
    copy_manifest(o.records, out);
    io::write_text_file(out, io::dump(io::report_to_json(rep, file.manifest_hash)));
    if (o.curve) io::write_text_file(output_path(*o.curve), io::curve_to_csv(metrics::risk_coverage_curve(test)));
    log << std::fixed << std::setprecision(4) << label << ": acc " << rep.accuracy << " ece " << rep.ece << " auc "
        << rep.rc_auc << " c@5 " << rep.c_at_r[2] << " phi10 " << rep.phi10 << " phi100 " << rep.phi100 << " (n "
        << rep.n << ")\n";
    log.unsetf(std::ios::floatfield);
    log << "wrote " << out.string() << "\n";
}

void mix(const MixOptions& o, std::ostream& log)
{
    const auto id_file = io::read_records(o.id_records);
    const auto ood_file = io::read_records(o.ood_records);
    check_same_run(id_file.manifest_hash, ood_file.manifest_hash, "ID and OOD records", o.allow_mixed);
    const auto id = pipeline::select(id_file.records, metrics::Split::Test);
    std::vector<PredictionRecord> ood;
    for (const auto& r : ood_file.records)
        if (r.source != metrics::Source::ID) ood.push_back(r);
    require(!id.empty() && !ood.empty(), "mixture needs both ID test records and OOD records");

    double gamma = 0.0;
    if (o.gamma) {
        gamma = *o.gamma;
    } else {
        const auto dev = pipeline::select(id_file.records, metrics::Split::Dev);
        require(!dev.empty(), "no dev records to select the threshold on; pass --gamma");
        gamma = metrics::select_threshold(dev, o.cost);
    }
    std::vector<double> fractions = o.fractions;
    if (fractions.empty())
        for (int i = 0; i <= 10; ++i) fractions.push_back(i / 10.0);
    const auto rows = metrics::eval_mixture(id, ood, fractions, gamma, o.cost, o.seed);

    const fs::path out = output_path(o.out);
    copy_manifest(o.id_records, out);
    io::write_text_file(out, io::mixture_to_csv(rows));
    log << "mixture over " << rows.size() << " fractions at gamma " << gamma << "\nwrote " << out.string() << "\n";
}

void run(const RunOptions& o, std::ostream& log)
{
    const fs::path root = output_path(o.out_dir);
    const fs::path task_dir = root / "task";
    gen_task({o.task, task_dir, o.force}, log);

    const fs::path base_model = root / "model.sqnt";
    TrainModelOptions tm{task_dir, base_model, o.model, o.train};
    train_model(tm, log);

    const auto& labels = o.labels.empty() ? standard_labels() : o.labels;
    for (const auto& label : labels) {
        const fs::path dir = root / label;
        QuantizeOptions q{base_model, label, o.base, task_dir / "calib.jsonl", dir / "model.sqnt", o.task.seed};
        quantize(q, log);
        eval({dir / "model.sqnt", task_dir, "heldout", dir / "records.jsonl", pipeline::kDefaultMaxNew}, log);
        train_selector({dir / "records.jsonl", dir / "selector.json", o.selector}, log);
        rescore({dir / "records.jsonl", dir / "selector.json", dir / "records.selector.jsonl", false}, log);
        for (const char* est : {"maxprob", "selector"}) {
            const std::string e = est;
            const fs::path recs = e == "maxprob" ? dir / "records.jsonl" : dir / "records.selector.jsonl";
            ReportOptions r;
            r.records = recs;
            r.out = dir / ("report." + e + ".json");
            r.curve = dir / ("curve." + e + ".csv");
            r.label = label;
            report(r, log);
            MixOptions mo;
            mo.id_records = recs;
            mo.ood_records = recs;
            mo.seed = o.task.seed;
            mo.out = dir / ("mix." + e + ".csv");
            mix(mo, log);
        }
    }
}

} // namespace qrel::cli
