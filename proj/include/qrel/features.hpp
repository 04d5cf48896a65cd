#pragma once

#include <Eigen/Dense>

namespace qrel {

/// Selector input signals of one generation.
struct FeatureVector {
    Eigen::VectorXd v;   // max-pool of final hidden states over vision positions
    Eigen::VectorXd q;   // max-pool over question positions
    Eigen::VectorXd o1;  // hidden state that produced the first answer token
    double p = 1.0;      // joint probability of the generated tokens

    /// Concatenation [v | q | o1 | p].
    Eigen::VectorXd flatten() const
    {
        Eigen::VectorXd out(v.size() + q.size() + o1.size() + 1);
        out << v, q, o1, p;
        return out;
    }

    bool operator==(const FeatureVector& o) const
    {
        return v == o.v && q == o.q && o1 == o.o1 && p == o.p;
    }
};

} // namespace qrel
