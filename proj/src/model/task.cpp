#include "qrel/model/task.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "qrel/error.hpp"
#include "qrel/rng.hpp"

namespace qrel::model {

namespace {

constexpr int kRefs = 10;
constexpr double kLowQualityShare = 0.5;
constexpr double kLowQualityShareOodB = 0.9;
// Corruption concentrates on low-quality images: the mean rate over the
// in-distribution mix is noise_rate.
constexpr double kLowQualityNoise = 2.0;  // multiplier on noise_rate
constexpr double kHighQualityNoise = 0.0;

// Answer table indexed by (asked object, object in the next slot).
std::vector<int> attribute_map(const TaskConfig& cfg, const Vocabulary& voc)
{
    Rng rng(cfg.seed ^ 0xA77E1B07ULL);
    std::vector<int> attr(static_cast<std::size_t>(voc.n_objects * voc.n_objects));
    for (auto& a : attr) a = voc.first_answer + static_cast<int>(rng.below(static_cast<std::uint64_t>(voc.n_answers)));
    return attr;
}

struct Generator {
    const TaskConfig& cfg;
    Vocabulary voc;
    std::vector<int> attr;
    Rng rng;

    explicit Generator(const TaskConfig& c)
        : cfg(c), voc(c.vocab_size), attr(attribute_map(c, voc)), rng(c.seed)
    {}

    TaskSample draw(std::string id, SampleSource source, bool noisy)
    {
        TaskSample s;
        s.id = std::move(id);
        s.source = source;
        const double low_share = source == SampleSource::OOD_B ? kLowQualityShareOodB : kLowQualityShare;
        const bool low = rng.bernoulli(low_share);
        s.input.vision_tokens.push_back(low ? Vocabulary::kQualityLow : Vocabulary::kQualityHigh);
        for (int k = 0; k < Vocabulary::kSlots; ++k)
            s.input.vision_tokens.push_back(voc.first_object + static_cast<int>(rng.below(static_cast<std::uint64_t>(voc.n_objects))));
        if (source == SampleSource::OOD_A) s.input.question_tokens.push_back(Vocabulary::kFiller);
        s.input.question_tokens.push_back(Vocabulary::kFirstSlot +
                                          static_cast<int>(rng.below(Vocabulary::kSlots)));
        s.answer = rule_answer(cfg, s.input);

        const std::string correct = answer_text(s.answer);
        const double rate = std::min(1.0, cfg.noise_rate * (low ? kLowQualityNoise : kHighQualityNoise));
        // Draws are made unconditionally so the stream does not depend on noise_rate.
        const bool corrupt = rng.uniform() < rate && noisy;
        // Correct copies among the corrupted references: mostly none.
        const double keep_u = rng.uniform();
        const int keep = keep_u < 0.6 ? 0 : (keep_u < 0.8 ? 1 : 2);
        const int wrong_offset = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(voc.n_answers - 1)));
        if (!corrupt) {
            s.refs.assign(kRefs, correct);
        } else {
            const int wrong = voc.first_answer + (s.answer[0] - voc.first_answer + wrong_offset) % voc.n_answers;
            const std::string wrong_text = answer_text(std::vector<int>{wrong, kEosToken});
            s.refs.assign(static_cast<std::size_t>(keep), correct);
            s.refs.resize(kRefs, wrong_text);
        }
        return s;
    }
};

std::string make_id(const char* prefix, int i)
{
    std::string n = std::to_string(i);
    return std::string(prefix) + std::string(n.size() < 6 ? 6 - n.size() : 0, '0') + n;
}

} // namespace

void TaskConfig::validate() const
{
    require(n_samples >= 4, "n_samples must be >= 4");
    require(noise_rate >= 0.0 && noise_rate <= 1.0, "noise_rate must lie in [0, 1]");
    require(vocab_size >= Vocabulary::min_vocab(),
            "vocab_size must be >= " + std::to_string(Vocabulary::min_vocab()));
    require(n_ood >= 0 && calib_size >= 0, "n_ood and calib_size must be non-negative");
    for (double f : {model_fraction, test_fraction, selector_fraction})
        require(f >= 0.0 && f <= 1.0, "split fractions must lie in [0, 1]");
}

Vocabulary::Vocabulary(int vocab_size)
{
    require(vocab_size >= min_vocab(), "vocabulary too small for the synthetic task");
    const int rest = vocab_size - (kFirstSlot + kSlots);
    first_object = kFirstSlot + kSlots;
    n_objects = rest / 2;
    first_answer = first_object + n_objects;
    n_answers = rest - n_objects;
}

std::string to_string(SampleSplit s)
{
    switch (s) {
    case SampleSplit::Model: return "model";
    case SampleSplit::Train: return "train";
    case SampleSplit::Dev: return "dev";
    case SampleSplit::Test: return "test";
    }
    return "?";
}

std::string to_string(SampleSource s)
{
    switch (s) {
    case SampleSource::ID: return "ID";
    case SampleSource::OOD_A: return "OOD_A";
    case SampleSource::OOD_B: return "OOD_B";
    }
    return "?";
}

SampleSplit sample_split_from_string(const std::string& s)
{
    if (s == "model") return SampleSplit::Model;
    if (s == "train") return SampleSplit::Train;
    if (s == "dev") return SampleSplit::Dev;
    if (s == "test") return SampleSplit::Test;
    throw ValidationError("unknown split '" + s + "'");
}

SampleSource sample_source_from_string(const std::string& s)
{
    if (s == "ID") return SampleSource::ID;
    if (s == "OOD_A") return SampleSource::OOD_A;
    if (s == "OOD_B") return SampleSource::OOD_B;
    throw ValidationError("unknown source '" + s + "'");
}

std::vector<int> rule_answer(const TaskConfig& cfg, const MMInput& x)
{
    const Vocabulary voc(cfg.vocab_size);
    require(x.vision_tokens.size() == Vocabulary::kSlots + 1 && !x.question_tokens.empty(),
            "input does not have the synthetic task's shape");
    const int slot = x.question_tokens.back() - Vocabulary::kFirstSlot;
    require(slot >= 0 && slot < Vocabulary::kSlots, "question does not name a slot");
    const int object = x.vision_tokens[static_cast<std::size_t>(slot) + 1] - voc.first_object;
    const int next = x.vision_tokens[static_cast<std::size_t>((slot + 1) % Vocabulary::kSlots) + 1] - voc.first_object;
    require(object >= 0 && object < voc.n_objects && next >= 0 && next < voc.n_objects,
            "vision slot does not hold an object token");
    return {attribute_map(cfg, voc)[static_cast<std::size_t>(object * voc.n_objects + next)], kEosToken};
}

std::string answer_text(std::span<const int> tokens)
{
    std::string out;
    for (int t : tokens) {
        if (t == kEosToken) break;
        if (!out.empty()) out += ' ';
        out += "w" + std::to_string(t);
    }
    return out;
}

TrainingSequence training_sequence(const TaskSample& s)
{
    TrainingSequence seq;
    seq.tokens = s.input.vision_tokens;
    seq.tokens.insert(seq.tokens.end(), s.input.question_tokens.begin(), s.input.question_tokens.end());
    const std::size_t prompt = seq.tokens.size();
    seq.tokens.insert(seq.tokens.end(), s.answer.begin(), s.answer.end());
    seq.targets.assign(seq.tokens.size(), -1);
    for (std::size_t k = 0; k < s.answer.size(); ++k) seq.targets[prompt - 1 + k] = s.answer[k];
    return seq;
}

int task_max_seq()
{
    return Vocabulary::kSlots + 1 + 2 + 3;
}

TaskData generate_task(const TaskConfig& cfg)
{
    cfg.validate();
    Generator gen(cfg);
    TaskData data;

    const int n = cfg.n_samples;
    const int n_model = static_cast<int>(std::lround(cfg.model_fraction * n));
    const int rest = n - n_model;
    const int n_test = static_cast<int>(std::lround(cfg.test_fraction * rest));
    const int n_val = rest - n_test;
    const int n_train = static_cast<int>(std::lround(cfg.selector_fraction * n_val));

    for (int i = 0; i < n; ++i) {
        SampleSplit split = SampleSplit::Test;
        if (i < n_model)
            split = SampleSplit::Model;
        else if (i < n_model + n_train)
            split = SampleSplit::Train;
        else if (i < n_model + n_val)
            split = SampleSplit::Dev;
        // Decoder training data is clean; the held-out splits carry reference noise.
        TaskSample s = gen.draw(make_id("id-", i), SampleSource::ID, split != SampleSplit::Model);
        s.split = split;
        data.samples.push_back(std::move(s));
    }
    for (int i = 0; i < cfg.n_ood; ++i) data.ood.push_back(gen.draw(make_id("ooda-", i), SampleSource::OOD_A, true));
    for (int i = 0; i < cfg.n_ood; ++i) data.ood.push_back(gen.draw(make_id("oodb-", i), SampleSource::OOD_B, true));
    for (int i = 0; i < cfg.calib_size; ++i) {
        TaskSample s = gen.draw(make_id("cal-", i), SampleSource::ID, false);
        s.split = SampleSplit::Model;
        data.calib.push_back(std::move(s));
    }
    return data;
}

} // namespace qrel::model
