#pragma once

// Time-adaptive assessment: read one score per cycle and commit once it
// leaves the [delta, 1 - delta] band, up to t_max cycles.

#include <concepts>
#include <cstdio>
#include <optional>
#include <ostream>

#include "tsas/dataset.hpp"
#include "tsas/lstm.hpp"

namespace tsas {

enum class Verdict { Stable, Unstable, Unknown };

inline const char* to_string(Verdict v) {
    switch (v) {
        case Verdict::Stable: return "stable";
        case Verdict::Unstable: return "unstable";
        default: return "unknown";
    }
}

inline void require_threshold(double delta) {
    require(delta > 0.0 && delta < 0.5, "threshold delta must lie in (0, 0.5)");
}

/// Stable if score > 1 - delta, Unstable if score < delta, Unknown otherwise.
inline Verdict classify_step(double score, double delta) {
    require_threshold(delta);
    if (score > 1.0 - delta) return Verdict::Stable;
    if (score < delta) return Verdict::Unstable;
    return Verdict::Unknown;
}

struct AssessmentOutcome {
    Verdict verdict = Verdict::Unknown;
    std::size_t decision_time = 0;  // cycles
    std::vector<double> scores;     // consumed trace
    bool fallback_used = false;
};

/// Feeds one score at a time. Returns the outcome once decided.
class AdaptiveDecider {
public:
    AdaptiveDecider(double delta, std::size_t t_max) : delta_(delta), t_max_(t_max) {
        require_threshold(delta);
        require(t_max >= 1, "t_max must be at least one cycle");
    }

    std::optional<AssessmentOutcome> push(double score) {
        require(!done_, "assessment already decided");
        trace_.push_back(score);
        const auto v = classify_step(score, delta_);
        if (v != Verdict::Unknown) return finish(v, false);
        if (trace_.size() >= t_max_) return finish(score >= 0.5 ? Verdict::Stable : Verdict::Unstable, true);
        return std::nullopt;
    }

private:
    AssessmentOutcome finish(Verdict v, bool fallback) {
        done_ = true;
        return {v, trace_.size(), trace_, fallback};
    }

    double delta_;
    std::size_t t_max_;
    std::vector<double> trace_;
    bool done_ = false;
};

/// Applies the decision rule to a precomputed score trace.
inline AssessmentOutcome assess_scores(std::span<const double> scores, double delta, std::size_t t_max) {
    AdaptiveDecider decider(delta, t_max);
    for (double s : scores)
        if (auto out = decider.push(s)) return *out;
    throw Error("score stream ended after " + std::to_string(scores.size()) +
                " cycles, before a decision or t_max = " + std::to_string(t_max));
}

/// Streams frames through the model one cycle at a time. `next_frame`
/// returns nullopt when the stream is exhausted.
template <std::invocable FrameSource>
AssessmentOutcome assess_case(const ModelParams& model, FrameSource&& next_frame, double delta,
                              std::size_t t_max) {
    AdaptiveDecider decider(delta, t_max);
    StreamingScorer scorer(model);
    for (std::size_t t = 1;; ++t) {
        std::optional<Eigen::VectorXd> frame = next_frame();
        if (!frame)
            throw Error("frame stream ended after " + std::to_string(t - 1) +
                        " cycles, before a decision or t_max = " + std::to_string(t_max));
        if (auto out = decider.push(scorer.push(*frame))) return *out;
    }
}

/// Convenience overload streaming the rows of a stored sequence.
inline AssessmentOutcome assess_case(const ModelParams& model, const FeatureMatrix& frames, double delta,
                                     std::size_t t_max) {
    Eigen::Index row = 0;
    return assess_case(
        model,
        [&]() -> std::optional<Eigen::VectorXd> {
            if (row >= frames.rows()) return std::nullopt;
            return Eigen::VectorXd(frames.row(row++).transpose());
        },
        delta, t_max);
}

struct MetricsRow {
    std::size_t t = 0;
    std::size_t unknown = 0;
    std::size_t correct = 0;  // cumulative
    std::size_t wrong = 0;    // cumulative
    std::optional<double> accuracy;  // among decided; empty when none decided
};

struct MetricsReport {
    std::vector<MetricsRow> rows;  // t = 0 .. latest decision time
    double art = 0.0;
    double accuracy = 0.0;
    std::size_t cases = 0;
    std::size_t fallback_count = 0;
    std::vector<std::size_t> decision_times;  // per case, dataset order
    std::vector<Verdict> verdicts;

    double fallback_rate() const { return cases ? static_cast<double>(fallback_count) / cases : 0.0; }
};

/// Accumulates the cumulative per-cycle table from per-case outcomes.
inline MetricsReport summarize_outcomes(const std::vector<AssessmentOutcome>& outcomes,
                                        const std::vector<int>& labels) {
    require(!outcomes.empty(), "no outcomes to summarize");
    require(outcomes.size() == labels.size(), "outcome and label counts differ");
    MetricsReport report;
    report.cases = outcomes.size();
    std::size_t horizon = 0;
    for (const auto& o : outcomes) horizon = std::max(horizon, o.decision_time);
    std::vector<std::size_t> correct_at(horizon + 1, 0), wrong_at(horizon + 1, 0);
    std::size_t time_sum = 0, correct_total = 0;
    for (std::size_t k = 0; k < outcomes.size(); ++k) {
        const auto& o = outcomes[k];
        const bool right = (o.verdict == Verdict::Stable) == (labels[k] == 1);
        (right ? correct_at : wrong_at)[o.decision_time]++;
        correct_total += right;
        time_sum += o.decision_time;
        report.fallback_count += o.fallback_used;
        report.decision_times.push_back(o.decision_time);
        report.verdicts.push_back(o.verdict);
    }
    std::size_t correct = 0, wrong = 0;
    for (std::size_t t = 0; t <= horizon; ++t) {
        correct += correct_at[t];
        wrong += wrong_at[t];
        MetricsRow row{t, report.cases - correct - wrong, correct, wrong, std::nullopt};
        if (correct + wrong > 0) row.accuracy = static_cast<double>(correct) / static_cast<double>(correct + wrong);
        report.rows.push_back(row);
    }
    report.art = static_cast<double>(time_sum) / static_cast<double>(report.cases);
    report.accuracy = static_cast<double>(correct_total) / static_cast<double>(report.cases);
    return report;
}

/// Per-case score traces up to t_max (or the stored length, if shorter).
inline std::vector<std::vector<double>> score_traces(const ModelParams& model, const Dataset& data,
                                                     std::size_t t_max, std::size_t workers = worker_count()) {
    return parallel_map<std::vector<double>>(
        data.size(),
        [&](std::size_t k) {
            const auto& f = data.cases[k].features;
            const auto n = std::min<Eigen::Index>(f.rows(), static_cast<Eigen::Index>(t_max));
            StreamingScorer scorer(model);
            std::vector<double> trace;
            for (Eigen::Index t = 0; t < n; ++t) trace.push_back(scorer.push(f.row(t).transpose()));
            return trace;
        },
        workers);
}

/// Decision rule over precomputed traces; lets one model serve many thresholds.
inline MetricsReport evaluate_traces(const std::vector<std::vector<double>>& traces, const Dataset& data,
                                     double delta, std::size_t t_max) {
    std::vector<AssessmentOutcome> outcomes;
    std::vector<int> labels;
    for (std::size_t k = 0; k < traces.size(); ++k) {
        outcomes.push_back(assess_scores(traces[k], delta, t_max));
        labels.push_back(data.cases[k].label.y);
    }
    return summarize_outcomes(outcomes, labels);
}

inline MetricsReport evaluate_dataset(const ModelParams& model, const Dataset& data, double delta,
                                      std::size_t t_max, std::size_t workers = worker_count()) {
    require(!data.empty(), "cannot evaluate an empty dataset");
    require_threshold(delta);
    require(data.frames >= t_max, "dataset stores " + std::to_string(data.frames) +
                                      " frames, fewer than t_max = " + std::to_string(t_max));
    return evaluate_traces(score_traces(model, data, t_max, workers), data, delta, t_max);
}

// --- CSV output -------------------------------------------------------------

inline constexpr int report_format_version = 1;

inline std::string format_double(double v, int precision = 6) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.*f", precision, v);
    return buf;
}

inline std::string hash_hex(std::uint64_t h) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

/// "# tsas <kind> format=<v> config=<hash>" comment line opening every CSV.
inline void write_csv_header_comment(std::ostream& out, std::string_view kind, const std::string& config_hash) {
    out << "# tsas " << kind << " format=" << report_format_version << " config=" << config_hash << '\n';
}

struct ReportContext {
    double delta = 0.4;
    std::size_t window = 5;
    std::size_t t_max = 20;
    std::string dataset_id;
    std::string config_hash;
};

inline void write_report_csv(std::ostream& out, const MetricsReport& report, const ReportContext& ctx) {
    write_csv_header_comment(out, "report", ctx.config_hash);
    out << "t,unknown,correct,wrong,accuracy\n";
    for (const auto& r : report.rows)
        out << r.t << ',' << r.unknown << ',' << r.correct << ',' << r.wrong << ','
            << (r.accuracy ? format_double(*r.accuracy) : std::string("N/A")) << '\n';
    out << "# summary,art=" << format_double(report.art) << ",accuracy=" << format_double(report.accuracy)
        << ",delta=" << format_double(ctx.delta, 2) << ",T=" << ctx.window << ",tmax=" << ctx.t_max
        << ",cases=" << report.cases << ",fallback=" << report.fallback_count << ",dataset=" << ctx.dataset_id
        << '\n';
}

}  // namespace tsas
