#include <CLI11.hpp>
#include <iostream>

#include "qrel/cli/commands.hpp"
#include "qrel/error.hpp"
#include "qrel/version.hpp"

namespace {

using namespace qrel;

void add_task_options(CLI::App* app, model::TaskConfig& t)
{
    app->add_option("--seed", t.seed, "Generator seed");
    app->add_option("--n-samples", t.n_samples, "In-distribution samples over all splits");
    app->add_option("--noise-rate", t.noise_rate, "Mean reference-corruption rate");
    app->add_option("--vocab-size", t.vocab_size, "Vocabulary size");
    app->add_option("--n-ood", t.n_ood, "Samples per OOD source");
    app->add_option("--calib-size", t.calib_size, "Calibration sequences");
    app->add_option("--model-fraction", t.model_fraction, "Share of samples used to fit the decoder");
    app->add_option("--test-fraction", t.test_fraction, "Share of the remaining samples kept for testing");
    app->add_option("--selector-fraction", t.selector_fraction, "Share of validation samples that train the selector");
}

void add_model_options(CLI::App* app, model::ModelConfig& m, model::TrainConfig& t)
{
    app->add_option("--d-model", m.d_model, "Hidden width");
    app->add_option("--n-layers", m.n_layers, "Decoder layers");
    app->add_option("--n-heads", m.n_heads, "Attention heads");
    app->add_option("--max-seq", m.max_seq, "Maximum sequence length");
    app->add_option("--model-seed", m.seed, "Initialization seed");
    app->add_option("--epochs", t.epochs, "Training epochs");
    app->add_option("--lr", t.learning_rate, "Adam learning rate");
    app->add_option("--batch-size", t.batch_size, "Sequences per step");
    app->add_option("--train-seed", t.seed, "Shuffling seed");
}

void add_spec_options(CLI::App* app, quant::QuantSpec& s)
{
    app->add_option("--group-size", s.group_size, "Weights per quantization group");
    app->add_option("--lp-norm", s.lp_norm, "Shape of the heavy-tailed error penalty, in (0, 1]");
    app->add_option("--hqq-iters", s.hqq_iters, "Half-quadratic iterations");
    app->add_option("--hqq-beta", s.hqq_beta, "Initial half-quadratic penalty");
    app->add_option("--hqq-kappa", s.hqq_kappa, "Penalty growth per iteration");
}

void add_selector_options(CLI::App* app, confidence::SelectorTrainConfig& c, const std::string& prefix = "")
{
    app->add_option("--" + prefix + "epochs", c.epochs, "Selector training epochs");
    app->add_option("--" + prefix + "lr", c.learning_rate, "Selector learning rate");
    app->add_option("--" + prefix + "batch-size", c.batch_size, "Selector batch size");
    app->add_option("--" + prefix + "hidden", c.hidden, "Selector hidden units");
    app->add_option("--" + prefix + "weight-decay", c.weight_decay, "Selector L2 penalty");
    app->add_option("--" + prefix + "seed", c.seed, "Selector seed");
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Quantization and selective-prediction reliability toolkit"};
    app.set_version_flag("--version", std::string(qrel::kToolVersion));
    app.set_config("--config", "", "TOML file with option values (command-line flags win)");
    app.require_subcommand(1);

    cli::GenTaskOptions gen;
    auto* c_gen = app.add_subcommand("gen-task", "Generate the synthetic task files");
    add_task_options(c_gen, gen.task);
    c_gen->add_option("--out", gen.out_dir, "Output directory")->required();
    c_gen->add_flag("--force", gen.force, "Overwrite existing task files");

    cli::TrainModelOptions tm;
    auto* c_train = app.add_subcommand("train-model", "Fit the toy decoder on a task's model split");
    c_train->add_option("--task", tm.task_dir, "Task directory")->required();
    c_train->add_option("--out", tm.out, "Output checkpoint")->required();
    add_model_options(c_train, tm.model, tm.train);

    cli::QuantizeOptions q;
    std::string calib;
    auto* c_quant = app.add_subcommand("quantize", "Quantize a full-precision checkpoint");
    c_quant->add_option("--model", q.model, "Input checkpoint")->required();
    c_quant->add_option("--label", q.label, "bf16 or <int8|int4|int3>_<RTN|HQQ|MBQ>")->required();
    c_quant->add_option("--calib", calib, "Calibration batch (required for MBQ)");
    c_quant->add_option("--out", q.out, "Output checkpoint")->required();
    c_quant->add_option("--seed", q.seed, "Run seed recorded in the manifest");
    add_spec_options(c_quant, q.base);

    cli::EvalOptions ev;
    auto* c_eval = app.add_subcommand("eval", "Greedy-decode a task split and write prediction records");
    c_eval->add_option("--model", ev.model, "Checkpoint")->required();
    c_eval->add_option("--task", ev.task_dir, "Task directory")->required();
    c_eval->add_option("--split", ev.split, "train, dev, test, ood or heldout");
    c_eval->add_option("--out", ev.out, "Output records file")->required();
    c_eval->add_option("--max-new", ev.max_new, "Generation budget");

    cli::TrainSelectorOptions ts;
    auto* c_sel = app.add_subcommand("train-selector", "Fit the correctness selector on train-split records");
    c_sel->add_option("--records", ts.records, "Records file")->required();
    c_sel->add_option("--out", ts.out, "Output selector file")->required();
    add_selector_options(c_sel, ts.cfg);

    cli::RescoreOptions rs;
    auto* c_rescore = app.add_subcommand("rescore", "Replace record confidences with selector outputs");
    c_rescore->add_option("--records", rs.records, "Records file")->required();
    c_rescore->add_option("--selector", rs.selector, "Selector file")->required();
    c_rescore->add_option("--out", rs.out, "Output records file")->required();
    c_rescore->add_flag("--allow-mixed", rs.allow_mixed, "Accept inputs from different manifests");

    cli::ReportOptions rp;
    std::string dev, curve, label;
    auto* c_report = app.add_subcommand("report", "Reliability metrics on test records");
    c_report->add_option("--records", rp.records, "Records file")->required();
    c_report->add_option("--dev", dev, "Records holding the dev split (default: --records)");
    c_report->add_option("--out", rp.out, "Output report JSON")->required();
    c_report->add_option("--curve", curve, "Risk-coverage CSV output");
    c_report->add_option("--label", label, "Row label (default: from the manifest)");
    c_report->add_option("--source", rp.source, "ID, OOD_A, OOD_B or OOD");
    c_report->add_option("--ece-bins", rp.ece_bins, "Calibration bins");
    c_report->add_flag("--allow-mixed", rp.allow_mixed, "Accept inputs from different manifests");

    cli::MixOptions mx;
    double gamma = -1.0;
    auto* c_mix = app.add_subcommand("mix", "Accuracy and coverage as OOD data is mixed in");
    c_mix->add_option("--id", mx.id_records, "Records with the ID test and dev splits")->required();
    c_mix->add_option("--ood", mx.ood_records, "Records with OOD samples")->required();
    c_mix->add_option("--fractions", mx.fractions, "OOD fractions (default 0, 0.1, ..., 1)")->delimiter(',');
    c_mix->add_option("--gamma", gamma, "Fixed threshold (default: chosen on ID dev at cost --cost)");
    c_mix->add_option("--cost", mx.cost, "Cost c of a wrong answer");
    c_mix->add_option("--seed", mx.seed, "Subset seed");
    c_mix->add_option("--out", mx.out, "Output CSV")->required();
    c_mix->add_flag("--allow-mixed", mx.allow_mixed, "Accept inputs from different manifests");

    cli::RunOptions run;
    auto* c_run = app.add_subcommand("run", "Full pipeline over the quantization matrix");
    c_run->add_option("--out", run.out_dir, "Output directory")->required();
    add_task_options(c_run, run.task);
    add_model_options(c_run, run.model, run.train);
    add_spec_options(c_run, run.base);
    c_run->add_option("--labels", run.labels, "Rows to run (default: all seven)")->delimiter(',');
    add_selector_options(c_run, run.selector, "selector-");
    c_run->add_flag("--force", run.force, "Overwrite existing task files");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        std::ostream& log = std::cerr;
        if (*c_gen) cli::gen_task(gen, log);
        if (*c_train) cli::train_model(tm, log);
        if (*c_quant) {
            if (!calib.empty()) q.calib = calib;
            cli::quantize(q, log);
        }
        if (*c_eval) cli::eval(ev, log);
        if (*c_sel) cli::train_selector(ts, log);
        if (*c_rescore) cli::rescore(rs, log);
        if (*c_report) {
            if (!dev.empty()) rp.dev = dev;
            if (!curve.empty()) rp.curve = curve;
            if (!label.empty()) rp.label = label;
            cli::report(rp, log);
        }
        if (*c_mix) {
            if (gamma >= 0.0) mx.gamma = gamma;
            cli::mix(mx, log);
        }
        if (*c_run) cli::run(run, log);
    } catch (const qrel::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const qrel::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
