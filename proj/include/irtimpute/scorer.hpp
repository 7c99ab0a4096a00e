#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "irtimpute/core_model.hpp"
#include "json.hpp"

namespace irtimpute {

struct ScoreRequest {
  std::string item_id;
  std::string learner_id;
  std::optional<std::string> answer_text;
  std::optional<std::string> prompt;
  std::optional<std::string> rubric;
  std::optional<std::string> reference_answer;
  int n_categories = 0;
  // Matrix coordinates; never serialized.
  std::size_t item_index = 0;
  std::size_t learner_index = 0;
};

struct ScoreResponse {
  std::string item_id;
  std::string learner_id;
  int predicted = 0;
  std::optional<std::string> raw_output;
};

nlohmann::json to_json(const ScoreRequest& request);
ScoreRequest request_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ScoreResponse& response);

// Whitespace-tolerant integer parse of a grader's raw output ("3\n" -> 3).
// Throws ScorerProtocolError carrying the raw text when no integer is found.
int parse_prediction(const std::string& raw);

// Interprets one wire response for `request`: checks ids, parses the
// prediction and clamps it into [1, K] with a logged warning.
ScoreResponse interpret_response(const ScoreRequest& request,
                                 const nlohmann::json& body,
                                 const std::string& raw_line);

class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual ScoreResponse score(const ScoreRequest& request) = 0;
  // Upper bound on concurrent score() calls the implementation tolerates.
  virtual std::size_t max_in_flight() const { return 1; }
  virtual bool requires_answer_text() const { return true; }
  virtual std::string describe() const = 0;
};

struct SyntheticScorerConfig {
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
  std::optional<double> target_qwk;
};

// predicted = clamp(round(true + N(0, sigma^2)), 1, K). The noise for a
// cell depends only on (seed, item_id, learner_id).
class SyntheticScorer final : public Scorer {
 public:
  SyntheticScorer(ScoreMatrix truth, SyntheticScorerConfig config);

  ScoreResponse score(const ScoreRequest& request) override;
  std::size_t max_in_flight() const override { return 64; }
  bool requires_answer_text() const override { return false; }
  std::string describe() const override;
  const SyntheticScorerConfig& config() const noexcept { return config_; }

 private:
  ScoreMatrix truth_;
  SyntheticScorerConfig config_;
  std::map<std::string, std::size_t> item_index_;
  std::map<std::string, std::size_t> learner_index_;
};

// Noisy category for a given true score, shared by the scorer and the
// calibration routine.
int noisy_category(int truth, double sigma, double standard_normal, int K);

std::uint64_t cell_seed(std::uint64_t seed, const std::string& item_id,
                        const std::string& learner_id);

// Finds sigma by bisection on [0, 3] so that the Monte-Carlo QWK between
// truth and synthetic predictions is within 0.02 of target.
// `true_score_hist[k]` is the weight of category k + 1.
double calibrate_sigma(double target_qwk, int K, std::span<const double> true_score_hist,
                       std::uint64_t seed, std::size_t draws = 100000);

// Monte-Carlo QWK of the synthetic noise model at a given sigma.
double simulated_qwk(double sigma, int K, std::span<const double> true_score_hist,
                     std::uint64_t seed, std::size_t draws = 100000);

// Newline-delimited JSON over a child process's stdin/stdout. One request
// line out, one response line back; calls are serialized.
class ExecScorer final : public Scorer {
 public:
  explicit ExecScorer(std::string command);
  ~ExecScorer() override;
  ExecScorer(const ExecScorer&) = delete;
  ExecScorer& operator=(const ExecScorer&) = delete;

  ScoreResponse score(const ScoreRequest& request) override;
  std::string describe() const override { return "exec:" + command_; }

 private:
  void start();
  void stop();
  std::string exchange(const std::string& line);

  std::string command_;
  std::mutex mutex_;
  int pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::string buffer_;
};

// POST <url>/score with the request JSON as body. 2xx carries a response
// object, 4xx is a protocol error, 5xx and connection failures are
// transport errors.
class HttpScorer final : public Scorer {
 public:
  explicit HttpScorer(std::string base_url, std::size_t max_in_flight = 4);

  ScoreResponse score(const ScoreRequest& request) override;
  std::size_t max_in_flight() const override { return max_in_flight_; }
  std::string describe() const override { return "http:" + base_url_; }

 private:
  std::string base_url_;
  std::size_t max_in_flight_;
};

struct ScorerSpec {
  enum class Kind { Synthetic, Exec, Http } kind = Kind::Synthetic;
  std::string target;  // command or URL
  std::optional<double> sigma;
  std::optional<double> target_qwk;
};

// Parses exec:<cmd>, http:<url>, synthetic:<sigma>, synthetic:sigma=<s> or
// synthetic:qwk=<q>.
ScorerSpec parse_scorer_spec(const std::string& text);

// Environment variable consulted when no scorer flag is given.
inline constexpr const char* kScorerEnvVar = "IRTIMPUTE_SCORER";

// `truth` is required for synthetic scorers; calibration uses its category
// histogram when the spec names a target QWK.
std::unique_ptr<Scorer> make_scorer(const ScorerSpec& spec, const ScoreMatrix* truth,
                                    std::uint64_t seed);

struct BatchOptions {
  std::size_t max_in_flight = 1;
  int max_retries = 3;
  std::chrono::milliseconds initial_backoff{50};
  std::function<void(const std::string&)> on_retry;
};

// Scores every request, preserving order, with at most max_in_flight calls
// outstanding. Transport errors are retried with exponential backoff;
// anything still failing ends in one ScorerError listing the cells.
std::vector<ScoreResponse> batch_score(std::span<const ScoreRequest> requests,
                                       Scorer& scorer, const BatchOptions& options = {});

}  // namespace irtimpute
