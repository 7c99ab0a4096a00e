#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "irtimpute/designs.hpp"
#include "irtimpute/estimation.hpp"
#include "irtimpute/imputation.hpp"
#include "irtimpute/metrics.hpp"
#include "irtimpute/synthetic.hpp"
#include "json.hpp"

namespace irtimpute {

struct DataSource {
  enum class Kind { Synthetic, Csv } kind = Kind::Synthetic;
  GenConfig synthetic;
  bool synthetic_seed_given = false;  // otherwise derived from the plan seed
  std::filesystem::path scores_csv;
  std::optional<std::filesystem::path> corpus_dir;
  std::optional<int> n_categories;
};

struct ConditionSpec {
  std::string name;
  DesignGenerator generator = DesignGenerator::Systematic33;
  double ratio = 0.0;          // random designs
  std::size_t n_missing = 0;   // wraparound: missing items per learner
  std::size_t stride = 10;     // wraparound
};

struct MethodSpec {
  enum class Kind { NoImpute, Mean, Mode, Knn, Scorer } kind = Kind::NoImpute;
  std::string name;
  KnnConfig knn;
  // Scorer methods: one of these, else the run's default scorer.
  std::optional<double> sigma;
  std::optional<double> target_qwk;
  std::optional<std::string> scorer;  // exec:... or http:...
};

std::string to_string(MethodSpec::Kind kind);

struct ExperimentPlan {
  std::uint64_t seed = 0;
  std::size_t repetitions = 10;
  std::size_t jobs = 1;
  DataSource data;
  std::vector<ConditionSpec> conditions;
  std::vector<MethodSpec> methods;
  FitConfig fit;
  // Extra metrics against the generating abilities (synthetic data only).
  bool theta_true_diagnostic = false;
};

// Relative paths in the plan resolve against `base_dir`. Unknown keys are
// rejected with UsageError.
ExperimentPlan plan_from_json(const nlohmann::json& j,
                              const std::filesystem::path& base_dir = ".");
ExperimentPlan read_plan(const std::filesystem::path& path);

struct RepetitionOutcome {
  std::size_t repetition = 0;
  bool skipped = false;
  std::string skip_reason;
  double rmse = 0.0;
  double pearson = 0.0;
  std::optional<double> qwk;  // imputing methods with at least one masked cell
  std::optional<double> rmse_vs_true;
  std::optional<double> pearson_vs_true;
};

struct MethodResult {
  std::string method;
  MethodSpec::Kind kind = MethodSpec::Kind::NoImpute;
  std::vector<RepetitionOutcome> repetitions;
};

struct PairedTest {
  std::string method_a;
  std::string method_b;
  std::string metric;
  std::size_t n = 0;
  std::optional<TTestResult> result;  // empty when undefined
  std::string note;
};

struct ConditionResult {
  std::string condition;
  double missing_ratio = 0.0;
  std::vector<MethodResult> methods;
  std::vector<PairedTest> tests;
};

struct ScorerSetup {
  std::string method;
  std::string description;
  std::optional<double> sigma;
  std::optional<double> target_qwk;
};

struct ExperimentResult {
  FitResult gold;
  std::optional<double> gold_vs_true_pearson;
  std::vector<ScorerSetup> scorers;
  std::vector<ConditionResult> conditions;
};

// Full-data fit; the matrix must be complete.
FitResult run_gold_standard(const ScoreMatrix& complete, const FitConfig& config = {});

struct RunOptions {
  // Scorer for scorer methods that name none; from --scorer or the
  // environment.
  std::optional<std::string> default_scorer;
};

ExperimentResult run_experiment(const ExperimentPlan& plan, const RunOptions& options = {});

// Writes tidy.csv, summary.csv, ttests.csv, plot_data.csv, skips.csv and
// run_info.json into `dir`.
void emit_report(const ExperimentResult& result, const std::filesystem::path& dir);

// Individual CSV bodies, exposed for tests.
std::string tidy_csv(const ExperimentResult& result);
std::string summary_csv(const ExperimentResult& result);
std::string ttests_csv(const ExperimentResult& result);
std::string plot_data_csv(const ExperimentResult& result);
std::string skips_csv(const ExperimentResult& result);

}  // namespace irtimpute
