#include "irtimpute/imputation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "irtimpute/errors.hpp"
#include "irtimpute/logging.hpp"

namespace irtimpute {

using nlohmann::json;

namespace {

ImputationReport start_report(const ScoreMatrix& scores, ImputationMethod method) {
  ImputationReport r;
  r.method = method;
  r.item_ids = scores.item_ids();
  r.learner_ids = scores.learner_ids();
  r.per_item_counts.assign(scores.n_items(), 0);
  return r;
}

void record(ImputationReport& report, ScoreMatrix& out, std::size_t i, std::size_t j,
            int value, bool fallback = false) {
  out.set(i, j, value);
  report.cells.push_back({i, j, value, fallback, std::nullopt});
  ++report.per_item_counts[i];
  if (fallback) ++report.fallback_count;
}

std::string cell_name(const ScoreMatrix& s, std::size_t i, std::size_t j) {
  return "item " + s.item_ids()[i] + ", learner " + s.learner_ids()[j];
}

// Observed mean of each item that needs one, as a category.
std::vector<int> item_means(const ScoreMatrix& scores) {
  std::vector<int> out(scores.n_items(), kMissing);
  for (std::size_t i = 0; i < scores.n_items(); ++i) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t j = 0; j < scores.n_learners(); ++j) {
      if (!scores.observed(i, j)) continue;
      sum += scores.at(i, j);
      ++n;
    }
    if (n == 0) {
      if (scores.observed_in_item(i) < scores.n_learners())
        throw NotImputableError("item " + scores.item_ids()[i] +
                                " has no observed scores to impute from");
      continue;
    }
    out[i] = round_to_category(sum / static_cast<double>(n), scores.n_categories());
  }
  return out;
}

}  // namespace

std::string to_string(ImputationMethod method) {
  switch (method) {
    case ImputationMethod::Mean:
      return "mean";
    case ImputationMethod::Mode:
      return "mode";
    case ImputationMethod::Knn:
      return "knn";
    case ImputationMethod::Scorer:
      return "scorer";
  }
  return "unknown";
}

json to_json(const ImputationReport& report) {
  json j;
  j["method"] = to_string(report.method);
  j["settings"] = report.settings;
  j["n_imputed"] = report.cells.size();
  j["n_fallback"] = report.fallback_count;
  json counts = json::object();
  for (std::size_t i = 0; i < report.per_item_counts.size(); ++i)
    counts[report.item_ids[i]] = report.per_item_counts[i];
  j["per_item_counts"] = counts;
  json cells = json::array();
  for (const auto& c : report.cells) {
    json cell;
    cell["item_id"] = report.item_ids[c.item];
    cell["learner_id"] = report.learner_ids[c.learner];
    cell["value"] = c.value;
    if (c.fallback) cell["fallback"] = "mean";
    if (c.raw_output) cell["raw_output"] = *c.raw_output;
    cells.push_back(std::move(cell));
  }
  j["cells"] = std::move(cells);
  return j;
}

int round_to_category(double value, int K) {
  const double r = std::floor(value + 0.5);
  return static_cast<int>(std::clamp(r, 1.0, static_cast<double>(K)));
}

Imputed impute_mean(const ScoreMatrix& scores) {
  const auto means = item_means(scores);
  ScoreMatrix out = scores;
  auto report = start_report(scores, ImputationMethod::Mean);
  for (std::size_t i = 0; i < scores.n_items(); ++i)
    for (std::size_t j = 0; j < scores.n_learners(); ++j)
      if (!scores.observed(i, j)) record(report, out, i, j, means[i]);
  return {std::move(out), std::move(report)};
}

Imputed impute_mode(const ScoreMatrix& scores) {
  const auto K = static_cast<std::size_t>(scores.n_categories());
  ScoreMatrix out = scores;
  auto report = start_report(scores, ImputationMethod::Mode);
  report.settings["tie_break"] = "lowest";
  for (std::size_t i = 0; i < scores.n_items(); ++i) {
    if (scores.observed_in_item(i) == scores.n_learners()) continue;
    std::vector<std::size_t> freq(K, 0);
    for (std::size_t j = 0; j < scores.n_learners(); ++j)
      if (scores.observed(i, j)) ++freq[static_cast<std::size_t>(scores.at(i, j) - 1)];
    const auto best = std::max_element(freq.begin(), freq.end());
    if (*best == 0)
      throw NotImputableError("item " + scores.item_ids()[i] +
                              " has no observed scores to impute from");
    // max_element returns the first maximum, i.e. the lowest category.
    const int mode = static_cast<int>(best - freq.begin()) + 1;
    for (std::size_t j = 0; j < scores.n_learners(); ++j)
      if (!scores.observed(i, j)) record(report, out, i, j, mode);
  }
  return {std::move(out), std::move(report)};
}

Imputed impute_knn(const ScoreMatrix& scores, const KnnConfig& config) {
  if (config.k < 1) throw UsageError("k-NN needs k >= 1");
  const std::size_t I = scores.n_items();
  const std::size_t J = scores.n_learners();
  const int K = scores.n_categories();
  ScoreMatrix out = scores;
  auto report = start_report(scores, ImputationMethod::Knn);
  report.settings["k"] = config.k;
  report.settings["distance"] = "mean_squared_difference_on_overlap";
  report.settings["weighting"] =
      config.weighting == KnnWeighting::Uniform ? "uniform" : "inverse_distance";

  std::vector<int> means;  // computed on first fallback
  constexpr double kNoOverlap = std::numeric_limits<double>::infinity();
  struct Candidate {
    double distance;
    std::size_t learner;
  };
  std::vector<Candidate> candidates;
  candidates.reserve(J);

  std::vector<std::vector<double>> dist_cache(J);
  auto distances_for = [&](std::size_t j) -> const std::vector<double>& {
    auto& d = dist_cache[j];
    if (!d.empty()) return d;
    d.assign(J, kNoOverlap);
    for (std::size_t other = 0; other < J; ++other) {
      if (other == j) continue;
      double ss = 0.0;
      std::size_t overlap = 0;
      for (std::size_t i = 0; i < I; ++i) {
        if (!scores.observed(i, j) || !scores.observed(i, other)) continue;
        const double diff = scores.at(i, j) - scores.at(i, other);
        ss += diff * diff;
        ++overlap;
      }
      if (overlap > 0) d[other] = ss / static_cast<double>(overlap);
    }
    return d;
  };

  // Item-major, so the report is ordered like every other imputer.
  for (std::size_t i = 0; i < I; ++i) {
    for (std::size_t j = 0; j < J; ++j) {
      if (scores.observed(i, j)) continue;
      const auto& d = distances_for(j);
      candidates.clear();
      for (std::size_t other = 0; other < J; ++other) {
        if (d[other] != kNoOverlap && scores.observed(i, other))
          candidates.push_back({d[other], other});
      }
      if (candidates.empty()) {
        if (means.empty()) means = item_means(scores);
        log_info("k-NN: no eligible neighbor for " + cell_name(scores, i, j) +
                 ", using the item mean");
        record(report, out, i, j, means[i], true);
        continue;
      }
      const std::size_t take = std::min(config.k, candidates.size());
      std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take),
                        candidates.end(), [](const Candidate& a, const Candidate& b) {
                          if (a.distance != b.distance) return a.distance < b.distance;
                          return a.learner < b.learner;
                        });
      double num = 0.0;
      double den = 0.0;
      const bool exact = candidates[0].distance == 0.0;
      for (std::size_t n = 0; n < take; ++n) {
        const auto& c = candidates[n];
        double w = 1.0;
        if (config.weighting == KnnWeighting::InverseDistance)
          w = exact ? (c.distance == 0.0 ? 1.0 : 0.0) : 1.0 / c.distance;
        num += w * scores.at(i, c.learner);
        den += w;
      }
      record(report, out, i, j, round_to_category(num / den, K));
    }
  }
  return {std::move(out), std::move(report)};
}

Imputed impute_with_scorer(const ScoreMatrix& scores, const AnswerCorpus& corpus,
                           Scorer& scorer, const BatchOptions& options) {
  check_matches(corpus, scores);
  const int K = scores.n_categories();
  std::vector<ScoreRequest> requests;
  requests.reserve(scores.missing_count());
  for (std::size_t i = 0; i < scores.n_items(); ++i) {
    for (std::size_t j = 0; j < scores.n_learners(); ++j) {
      if (scores.observed(i, j)) continue;
      ScoreRequest r;
      r.item_id = scores.item_ids()[i];
      r.learner_id = scores.learner_ids()[j];
      r.answer_text = corpus.text(i, j);
      if (scorer.requires_answer_text() && !r.answer_text)
        throw DataError("no answer text for " + cell_name(scores, i, j));
      if (i < corpus.item_prompts.size() && !corpus.item_prompts[i].empty())
        r.prompt = corpus.item_prompts[i];
      if (i < corpus.item_rubrics.size() && !corpus.item_rubrics[i].empty())
        r.rubric = corpus.item_rubrics[i];
      if (i < corpus.reference_answers.size()) r.reference_answer = corpus.reference_answers[i];
      r.n_categories = K;
      r.item_index = i;
      r.learner_index = j;
      requests.push_back(std::move(r));
    }
  }
  const auto responses = batch_score(requests, scorer, options);

  ScoreMatrix out = scores;
  auto report = start_report(scores, ImputationMethod::Scorer);
  report.settings["scorer"] = scorer.describe();
  for (std::size_t n = 0; n < requests.size(); ++n) {
    const auto& req = requests[n];
    int value = responses[n].predicted;
    if (value < 1 || value > K) {
      log_warning("scorer predicted " + std::to_string(value) + " for " +
                  cell_name(scores, req.item_index, req.learner_index) + "; clamped");
      value = std::clamp(value, 1, K);
    }
    record(report, out, req.item_index, req.learner_index, value);
    report.cells.back().raw_output = responses[n].raw_output;
  }
  return {std::move(out), std::move(report)};
}

}  // namespace irtimpute
