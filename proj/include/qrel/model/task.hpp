#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "qrel/model/decoder.hpp"

namespace qrel::model {

// Synthetic two-modality question answering.
//
// Vision tokens: a quality marker followed by kSlots object tokens. The
// question names a slot; the correct answer is a seeded table entry indexed
// by the object in that slot and the object in the next slot (cyclically),
// followed by the end-of-sequence token. Reference
// answers are corrupted at a rate that depends on the quality marker, so
// correctness carries signal that a model trained on clean answers does not
// see in its own output probabilities.
struct TaskConfig {
    std::uint64_t seed = 0;
    int n_samples = 2000;     // in-distribution samples over all four splits
    double noise_rate = 0.2;  // mean reference-corruption rate
    int vocab_size = 32;
    int n_ood = 200;          // per OOD source
    int calib_size = 128;
    double model_fraction = 0.4;     // share used to fit the decoder
    double test_fraction = 0.35;     // share of the held-out rest kept for testing
    double selector_fraction = 0.5;  // share of validation used to train the selector

    void validate() const;
};

struct Vocabulary {
    static constexpr int kSlots = 4;
    static constexpr int kQualityHigh = 1;
    static constexpr int kQualityLow = 2;
    static constexpr int kFiller = 3;
    static constexpr int kFirstSlot = 4;
    int first_object = 0, n_objects = 0;
    int first_answer = 0, n_answers = 0;

    explicit Vocabulary(int vocab_size);
    static int min_vocab() { return kFirstSlot + kSlots + 4; }
};

enum class SampleSplit { Model, Train, Dev, Test };
enum class SampleSource { ID, OOD_A, OOD_B };

std::string to_string(SampleSplit s);
std::string to_string(SampleSource s);
SampleSplit sample_split_from_string(const std::string& s);
SampleSource sample_source_from_string(const std::string& s);

struct TaskSample {
    std::string id;
    SampleSplit split = SampleSplit::Test;
    SampleSource source = SampleSource::ID;
    MMInput input;
    std::vector<int> answer;  // rule answer tokens, ending with kEosToken
    std::vector<std::string> refs;

    bool operator==(const TaskSample&) const = default;
};

struct TaskData {
    std::vector<TaskSample> samples;  // in-distribution, all splits
    std::vector<TaskSample> ood;      // OOD_A then OOD_B, split Test
    std::vector<TaskSample> calib;    // clean calibration sequences
};

TaskData generate_task(const TaskConfig& cfg);

/// The deterministic generating rule, applied to any input of the task's shape.
std::vector<int> rule_answer(const TaskConfig& cfg, const MMInput& x);

/// Text form of an answer: answer tokens as "w<id>" joined by spaces, EOS dropped.
std::string answer_text(std::span<const int> tokens);

/// Prompt + answer tokens with next-token targets only on the answer positions.
struct TrainingSequence {
    std::vector<int> tokens;
    std::vector<int> targets;
};

TrainingSequence training_sequence(const TaskSample& s);

/// Longest prompt plus answer budget the task can produce.
int task_max_seq();

} // namespace qrel::model
