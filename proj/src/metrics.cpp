#include "thama/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "thama/model.hpp"

namespace thama::eval {

using json = nlohmann::json;

namespace {

struct SweepPoint {
    double threshold; // +-inf sentinels at the ends
    double fpr;
    double fnr;
};

// FPR/FNR sampled at -inf, every unique score (ascending), and +inf.
std::vector<SweepPoint> sweep(std::span<const double> scores,
                              std::span<const int> labels) {
    if (scores.size() != labels.size() || scores.empty())
        throw DataError("eer: scores and labels must be non-empty and aligned");
    std::size_t n_fake = 0, n_bona = 0;
    std::vector<std::pair<double, int>> sorted(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1)
            throw DataError("eer: labels must be 0 or 1");
        (labels[i] == 1 ? n_fake : n_bona) += 1;
        sorted[i] = {scores[i], labels[i]};
    }
    if (n_fake == 0 || n_bona == 0)
        throw DataError("eer: both classes must be present");
    std::sort(sorted.begin(), sorted.end());

    const double inf = std::numeric_limits<double>::infinity();
    std::vector<SweepPoint> pts;
    pts.push_back({-inf, 1.0, 0.0});
    std::size_t fake_below = 0, bona_below = 0, i = 0;
    while (i < sorted.size()) {
        const double t = sorted[i].first;
        // counts of records strictly below t
        pts.push_back({t,
                       static_cast<double>(n_bona - bona_below) / static_cast<double>(n_bona),
                       static_cast<double>(fake_below) / static_cast<double>(n_fake)});
        while (i < sorted.size() && sorted[i].first == t) {
            (sorted[i].second == 1 ? fake_below : bona_below) += 1;
            ++i;
        }
    }
    pts.push_back({inf, 0.0, 1.0});
    return pts;
}

} // namespace

EerResult compute_eer(std::span<const double> scores, std::span<const int> labels) {
    const std::vector<SweepPoint> pts = sweep(scores, labels);
    // FPR - FNR falls monotonically from +1 to -1; find the sign change.
    for (std::size_t j = 0; j + 1 < pts.size(); ++j) {
        const double da = pts[j].fpr - pts[j].fnr;
        const double db = pts[j + 1].fpr - pts[j + 1].fnr;
        if (da == 0.0) return {pts[j].fpr * 100.0, pts[j].threshold};
        if (da > 0.0 && db <= 0.0) {
            if (db == 0.0) return {pts[j + 1].fpr * 100.0, pts[j + 1].threshold};
            const double lam = da / (da - db);
            const double eer = pts[j].fpr + lam * (pts[j + 1].fpr - pts[j].fpr);
            double thr;
            if (!std::isfinite(pts[j].threshold)) {
                thr = pts[j + 1].threshold;
            } else if (!std::isfinite(pts[j + 1].threshold)) {
                thr = pts[j].threshold;
            } else {
                thr = pts[j].threshold + lam * (pts[j + 1].threshold - pts[j].threshold);
            }
            return {eer * 100.0, thr};
        }
    }
    // Unreachable: the sweep always spans +1 .. -1.
    throw NumericError("eer: no crossing found in threshold sweep");
}

std::vector<RocPoint> roc_points(std::span<const double> scores,
                                 std::span<const int> labels) {
    const std::vector<SweepPoint> pts = sweep(scores, labels);
    // TPR = 1 - FNR; walk thresholds downward so both axes grow from (0,0).
    std::vector<RocPoint> roc;
    roc.reserve(pts.size());
    for (auto it = pts.rbegin(); it != pts.rend(); ++it)
        roc.push_back({it->fpr, 1.0 - it->fnr});
    return roc;
}

std::string EvalReport::to_json() const {
    json j;
    j["eer_percent"] = eer_percent;
    j["threshold"] = threshold;
    j["accuracy"] = accuracy;
    j["n_fake"] = n_fake;
    j["n_bonafide"] = n_bonafide;
    j["train_domain"] = train_domain;
    j["test_domain"] = test_domain;
    return j.dump(2);
}

EvalReport EvalReport::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw DataError(std::string("report is not valid JSON: ") + e.what());
    }
    EvalReport r;
    r.eer_percent = j.at("eer_percent").get<double>();
    r.threshold = j.at("threshold").get<double>();
    r.accuracy = j.at("accuracy").get<double>();
    r.n_fake = j.at("n_fake").get<std::size_t>();
    r.n_bonafide = j.at("n_bonafide").get<std::size_t>();
    r.train_domain = j.at("train_domain").get<std::string>();
    r.test_domain = j.at("test_domain").get<std::string>();
    return r;
}

EvalReport evaluate(models::ModelInstance& model, const data::SetPair& test,
                    const std::string& train_domain) {
    const bool fusion = models::is_fusion(model.spec.kind);
    if (test.view1.records.empty()) throw DataError("evaluate: empty test set");

    std::vector<double> scores;
    std::vector<int> labels;
    scores.reserve(test.view1.size());
    labels.reserve(test.view1.size());

    const auto batches = data::make_batches(test.view1, fusion ? &test.view2 : nullptr,
                                            256, 0, /*shuffle=*/false);
    for (const data::Batch& b : batches) {
        const std::vector<float> probs =
            models::predict_batch(model, b.x1, b.x2 ? &*b.x2 : nullptr);
        for (std::size_t i = 0; i < probs.size(); ++i) {
            scores.push_back(probs[i]);
            labels.push_back(static_cast<int>(b.labels[i]));
        }
    }

    const EerResult eer = compute_eer(scores, labels);
    EvalReport report;
    report.eer_percent = eer.eer_percent;
    report.threshold = eer.threshold;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool predicted_fake = scores[i] >= 0.5;
        if (predicted_fake == (labels[i] == 1)) ++correct;
        (labels[i] == 1 ? report.n_fake : report.n_bonafide) += 1;
    }
    report.accuracy = static_cast<double>(correct) / static_cast<double>(scores.size());
    report.train_domain = train_domain;

    std::uint8_t dom = test.view1.records.front().domain;
    bool homogeneous = true;
    for (const auto& r : test.view1.records)
        if (r.domain != dom) {
            homogeneous = false;
            break;
        }
    report.test_domain = homogeneous ? data::domain_name(dom) : "mixed";
    return report;
}

} // namespace thama::eval
