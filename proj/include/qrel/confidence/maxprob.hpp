#pragma once

#include <span>

#include "qrel/model/decoder.hpp"

namespace qrel::confidence {

/// Joint probability of the generated tokens, accumulated in log space.
double maxprob(std::span<const double> step_probs);

inline double maxprob(const model::Generation& g)
{
    return maxprob(g.step_probs);
}

} // namespace qrel::confidence
