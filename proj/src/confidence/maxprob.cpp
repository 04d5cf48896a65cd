#include "qrel/confidence/maxprob.hpp"

#include <cmath>

#include "qrel/error.hpp"

namespace qrel::confidence {

double maxprob(std::span<const double> step_probs)
{
    require(!step_probs.empty(), "maxprob of an empty generation");
    double log_p = 0.0;
    for (double p : step_probs) {
        require(p > 0.0 && p <= 1.0, "step probability outside (0, 1]");
        log_p += std::log(p);
    }
    return std::exp(log_p);
}

} // namespace qrel::confidence
