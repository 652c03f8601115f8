// Detection metrics with fake as the positive class:
//   FPR(t) = fraction of bonafide scoring >= t
//   FNR(t) = fraction of fake scoring < t
// The equal error rate is the linearly interpolated FPR/FNR crossing over a
// threshold sweep of the unique scores plus infinite sentinels.
#pragma once

#include <span>
#include <string>
#include <vector>

#include "thama/data.hpp"

namespace thama::models {
template <typename S>
struct ModelT;
using ModelInstance = ModelT<float>;
} // namespace thama::models

namespace thama::eval {

struct EerResult {
    double eer_percent = 0.0; // in [0, 100]
    double threshold = 0.0;   // score at the crossing
};

EerResult compute_eer(std::span<const double> scores, std::span<const int> labels);

struct RocPoint {
    double fpr = 0.0;
    double tpr = 0.0;
};

// Ordered operating points from (0,0) to (1,1), nondecreasing in both axes.
std::vector<RocPoint> roc_points(std::span<const double> scores,
                                 std::span<const int> labels);

struct EvalReport {
    double eer_percent = 0.0;
    double threshold = 0.0;
    double accuracy = 0.0; // at threshold 0.5
    std::size_t n_fake = 0;
    std::size_t n_bonafide = 0;
    std::string train_domain;
    std::string test_domain;

    std::string to_json() const;
    static EvalReport from_json(const std::string& text);
};

// Scores a test pair in inference mode and derives the report. The train
// domain tag is the caller's bookkeeping; the test tag comes from the records.
EvalReport evaluate(models::ModelInstance& model, const data::SetPair& test,
                    const std::string& train_domain = {});

} // namespace thama::eval
