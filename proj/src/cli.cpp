#include "irtimpute/cli.hpp"

#include <cstdlib>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "irtimpute/designs.hpp"
#include "irtimpute/errors.hpp"
#include "irtimpute/estimation.hpp"
#include "irtimpute/harness.hpp"
#include "irtimpute/imputation.hpp"
#include "irtimpute/io.hpp"
#include "irtimpute/logging.hpp"
#include "irtimpute/metrics.hpp"
#include "irtimpute/scorer.hpp"
#include "irtimpute/synthetic.hpp"

namespace irtimpute {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Globals {
  std::uint64_t seed = 0;
  bool seed_given = false;
  int verbose = 0;
  bool quiet = false;
};

struct SimulateArgs {
  GenConfig gen;
  fs::path out;
  bool corpus = false;
};

struct DesignArgs {
  std::string generator;
  std::optional<fs::path> scores;
  std::optional<std::size_t> items, learners;
  double ratio = 0.0;
  std::size_t n_missing = 0;
  std::size_t stride = 10;
  fs::path out;
  std::optional<fs::path> masked_out;
};

struct ImputeArgs {
  fs::path scores;
  std::optional<int> k_categories;
  std::string method;
  std::size_t k = 5;
  std::string weighting = "inverse_distance";
  std::optional<std::string> scorer;
  std::optional<fs::path> truth;
  std::optional<fs::path> corpus;
  std::size_t max_in_flight = 4;
  int max_retries = 3;
  fs::path out;
  fs::path report;
};

struct FitArgs {
  fs::path scores;
  std::optional<int> k_categories;
  fs::path out;
  std::optional<fs::path> abilities_out;
  FitConfig config;
  std::string extreme = "posterior_mean";
};

struct EvaluateArgs {
  std::optional<fs::path> estimated, reference;
  std::optional<fs::path> truth_scores, predicted_scores, masked;
  std::optional<int> k_categories;
  std::optional<fs::path> out;
};

struct ExperimentArgs {
  fs::path plan;
  fs::path out;
  std::optional<std::size_t> jobs;
  std::optional<std::string> scorer;
};

std::optional<std::string> scorer_from_env() {
  if (const char* v = std::getenv(kScorerEnvVar); v && *v) return std::string(v);
  return std::nullopt;
}

void emit_json(std::ostream& out, const std::optional<fs::path>& path, const json& j) {
  if (path) write_json_file(*path, j);
  out << j.dump(2) << '\n';
}

void cmd_simulate(const SimulateArgs& a, const Globals& g) {
  GenConfig gen = a.gen;
  gen.seed = g.seed;
  const SyntheticData data = generate(gen);
  fs::create_directories(a.out);
  write_score_csv(a.out / "scores.csv", data.scores);
  write_json_file(a.out / "params.json", params_to_json(data.items, data.scores.item_ids()));
  write_json_file(a.out / "true_theta.json",
                  abilities_to_json(data.true_thetas, data.scores.learner_ids()));
  if (a.corpus) write_corpus_dir(a.out / "corpus", attach_oracle_corpus(data.scores).corpus());
}

void cmd_design(const DesignArgs& a, const Globals& g) {
  std::optional<ScoreMatrix> scores;
  std::size_t I = 0, J = 0;
  if (a.scores) {
    scores = read_score_csv(*a.scores);
    I = scores->n_items();
    J = scores->n_learners();
  } else {
    if (!a.items || !a.learners)
      throw UsageError("design needs --scores, or both --items and --learners");
    I = *a.items;
    J = *a.learners;
  }
  if (a.masked_out && !scores) throw UsageError("--masked-out needs --scores");

  const DesignGenerator gen = design_generator_from_string(a.generator);
  MissingDesign design;
  switch (gen) {
    case DesignGenerator::Wraparound:
      design = wraparound_design(I, J, a.n_missing, a.stride);
      break;
    case DesignGenerator::RandomPerItem:
      design = random_per_item_design(I, J, a.ratio, g.seed);
      break;
    default:
      design = systematic_design(gen, I, J);
  }

  const ScoreMatrix ids = scores ? *scores : ScoreMatrix(I, J, 2);
  write_mask_csv(a.out, design, ids.item_ids(), ids.learner_ids());
  if (a.masked_out) write_score_csv(*a.masked_out, apply_design(*scores, design));
  log_info("design " + to_string(gen) + ": " + std::to_string(design.missing_count()) +
           " of " + std::to_string(design.mask.size()) + " cells missing");
}

KnnWeighting parse_weighting(const std::string& s) {
  if (s == "inverse_distance") return KnnWeighting::InverseDistance;
  if (s == "uniform") return KnnWeighting::Uniform;
  throw UsageError("unknown --weighting '" + s + "' (inverse_distance or uniform)");
}

void cmd_impute(const ImputeArgs& a, const Globals& g) {
  const ScoreMatrix scores = read_score_csv(a.scores, a.k_categories);
  std::optional<Imputed> result;
  if (a.method == "mean") {
    result = impute_mean(scores);
  } else if (a.method == "mode") {
    result = impute_mode(scores);
  } else if (a.method == "knn") {
    result = impute_knn(scores, KnnConfig{a.k, parse_weighting(a.weighting)});
  } else if (a.method == "scorer") {
    const std::optional<std::string> text = a.scorer ? a.scorer : scorer_from_env();
    if (!text)
      throw UsageError(std::string("scorer imputation needs --scorer or ") + kScorerEnvVar);
    const ScorerSpec spec = parse_scorer_spec(*text);

    std::optional<ScoreMatrix> truth;
    if (a.truth) truth = read_score_csv(*a.truth, scores.n_categories());
    if (spec.kind == ScorerSpec::Kind::Synthetic && !truth)
      throw UsageError("a synthetic scorer needs --truth with the complete scores");
    if (truth && (truth->n_items() != scores.n_items() ||
                  truth->n_learners() != scores.n_learners()))
      throw ShapeError("--truth does not have the shape of --scores");

    AnswerCorpus corpus;
    if (a.corpus) {
      corpus = read_corpus_dir(*a.corpus, scores);
    } else if (spec.kind == ScorerSpec::Kind::Synthetic) {
      corpus = attach_oracle_corpus(*truth).corpus();
    } else {
      throw UsageError("an external scorer needs --corpus with the answer texts");
    }

    auto scorer = make_scorer(spec, truth ? &*truth : nullptr, g.seed);
    BatchOptions batch;
    batch.max_in_flight = a.max_in_flight;
    batch.max_retries = a.max_retries;
    result = impute_with_scorer(scores, corpus, *scorer, batch);
    result->second.settings["scorer"] = scorer->describe();
  } else {
    throw UsageError("unknown --method '" + a.method + "' (mean, mode, knn or scorer)");
  }
  write_score_csv(a.out, result->first);
  write_json_file(a.report, to_json(result->second));
}

ExtremePatternRule parse_extreme(const std::string& s) {
  if (s == "posterior_mean") return ExtremePatternRule::PosteriorMean;
  if (s == "clamp_to_bound") return ExtremePatternRule::ClampToBound;
  throw UsageError("unknown --extreme-patterns '" + s + "'");
}

void cmd_fit(const FitArgs& a, const Globals& g) {
  const ScoreMatrix scores = read_score_csv(a.scores, a.k_categories);
  FitConfig config = a.config;
  config.seed = g.seed;
  config.extreme_patterns = parse_extreme(a.extreme);
  validate(config);
  const FitResult fit = fit_gpcm(scores, config);
  write_json_file(a.out, fit_to_json(fit, scores));
  if (a.abilities_out)
    write_json_file(*a.abilities_out, abilities_to_json(fit.abilities, scores.learner_ids()));
  if (!fit.converged) log_warning("fit did not converge within the iteration limit");
}

// Aligns b to a by learner id when both files carry ids.
std::vector<double> aligned(const AbilityFile& a, const AbilityFile& b) {
  if (a.abilities.size() != b.abilities.size())
    throw ShapeError("ability files differ in length (" +
                     std::to_string(a.abilities.size()) + " vs " +
                     std::to_string(b.abilities.size()) + ")");
  if (a.learner_ids.empty() || b.learner_ids.empty()) return b.abilities.values;
  std::map<std::string, double> by_id;
  for (std::size_t j = 0; j < b.learner_ids.size(); ++j)
    by_id[b.learner_ids[j]] = b.abilities.values[j];
  std::vector<double> out;
  out.reserve(a.learner_ids.size());
  for (const auto& id : a.learner_ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw ShapeError("learner '" + id + "' missing from reference");
    out.push_back(it->second);
  }
  return out;
}

void cmd_evaluate(const EvaluateArgs& a, std::ostream& out) {
  const bool abilities = a.estimated || a.reference;
  const bool scores = a.truth_scores || a.predicted_scores;
  if (abilities == scores)
    throw UsageError(
        "evaluate needs either --estimated and --reference, or --truth-scores and "
        "--predicted-scores");

  json j;
  if (abilities) {
    if (!a.estimated || !a.reference)
      throw UsageError("--estimated and --reference go together");
    const AbilityFile est = read_abilities_json(*a.estimated);
    const AbilityFile ref = read_abilities_json(*a.reference);
    AbilitySet ref_aligned;
    ref_aligned.values = aligned(est, ref);
    const AbilitySet x = normalize_abilities(est.abilities);
    const AbilitySet y = normalize_abilities(ref_aligned);
    j["n"] = x.size();
    j["rmse"] = rmse(x.values, y.values);
    j["pearson"] = pearson(x.values, y.values);
  } else {
    if (!a.truth_scores || !a.predicted_scores)
      throw UsageError("--truth-scores and --predicted-scores go together");
    const ScoreMatrix truth = read_score_csv(*a.truth_scores, a.k_categories);
    const ScoreMatrix pred = read_score_csv(*a.predicted_scores, truth.n_categories());
    if (truth.n_items() != pred.n_items() || truth.n_learners() != pred.n_learners())
      throw ShapeError("score files differ in shape");
    std::optional<MissingDesign> mask;
    if (a.masked) {
      mask = read_mask_csv(*a.masked);
      if (mask->n_items != truth.n_items() || mask->n_learners != truth.n_learners())
        throw ShapeError("mask does not have the shape of the score files");
    }
    std::vector<int> t, p;
    for (std::size_t i = 0; i < truth.n_items(); ++i)
      for (std::size_t l = 0; l < truth.n_learners(); ++l) {
        if (mask && mask->observed(i, l)) continue;
        if (!truth.observed(i, l) || !pred.observed(i, l)) continue;
        t.push_back(truth.at(i, l));
        p.push_back(pred.at(i, l));
      }
    if (t.empty()) throw DataError("no cells to compare");
    const QwkResult q = qwk(t, p, truth.n_categories());
    j["n"] = t.size();
    j["qwk"] = q.value;
    j["degenerate"] = q.degenerate;
  }
  emit_json(out, a.out, j);
}

void cmd_experiment(const ExperimentArgs& a, const Globals& g) {
  ExperimentPlan plan = read_plan(a.plan);
  if (g.seed_given) plan.seed = plan.fit.seed = g.seed;
  if (a.jobs) {
    if (*a.jobs < 1) throw UsageError("--jobs must be at least 1");
    plan.jobs = *a.jobs;
  }
  RunOptions options;
  options.default_scorer = a.scorer ? a.scorer : scorer_from_env();
  const ExperimentResult result = run_experiment(plan, options);
  emit_report(result, a.out);
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"GPCM ability estimation with missing-score imputation", "irtimpute"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  Globals g;
  app.add_option("--seed", g.seed, "Seed for every random choice")->each([&](const std::string&) {
    g.seed_given = true;
  });
  app.add_flag("-v,--verbose", g.verbose, "More log output (repeatable)");
  app.add_flag("-q,--quiet", g.quiet, "Errors only");

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Generate a complete synthetic dataset");
  simulate->add_option("--items", sim.gen.n_items)->check(CLI::PositiveNumber);
  simulate->add_option("--learners", sim.gen.n_learners)->check(CLI::PositiveNumber);
  simulate->add_option("--categories", sim.gen.n_categories)->check(CLI::Range(2, 1000));
  simulate->add_option("--theta-mean", sim.gen.theta_mean);
  simulate->add_option("--theta-sd", sim.gen.theta_sd);
  simulate->add_option("--log-alpha-mean", sim.gen.log_alpha_mean);
  simulate->add_option("--log-alpha-sd", sim.gen.log_alpha_sd);
  simulate->add_option("--beta-mean", sim.gen.beta_mean);
  simulate->add_option("--beta-sd", sim.gen.beta_sd);
  simulate->add_option("--step-spread", sim.gen.step_spread);
  simulate->add_flag("--corpus", sim.corpus, "Also write placeholder answer texts");
  simulate->add_option("--out", sim.out, "Output directory")->required();

  DesignArgs des;
  auto* design = app.add_subcommand("design", "Write a missing-data mask");
  design->add_option("--generator", des.generator,
                     "systematic33, systematic50, systematic62, wraparound or random")
      ->required();
  design->add_option("--scores", des.scores, "Take shape and ids from this score CSV");
  design->add_option("--items", des.items);
  design->add_option("--learners", des.learners);
  design->add_option("--ratio", des.ratio, "Random design: missing fraction per item")
      ->check(CLI::Range(0.0, 1.0));
  design->add_option("--n-missing", des.n_missing, "Wraparound: items missing per learner");
  design->add_option("--stride", des.stride, "Wraparound: item offset between learners");
  design->add_option("--out", des.out, "Mask CSV")->required();
  design->add_option("--masked-out", des.masked_out, "Also write the masked scores");

  ImputeArgs imp;
  auto* impute = app.add_subcommand("impute", "Fill missing scores");
  impute->add_option("--scores", imp.scores)->required();
  impute->add_option("--k-categories,-K", imp.k_categories, "Number of categories");
  impute->add_option("--method", imp.method, "mean, mode, knn or scorer")->required();
  impute->add_option("--k", imp.k, "k-NN neighbors")->check(CLI::PositiveNumber);
  impute->add_option("--weighting", imp.weighting, "inverse_distance or uniform");
  impute->add_option("--scorer", imp.scorer, "exec:<cmd>, http:<url> or synthetic:<sigma|qwk=q>");
  impute->add_option("--truth", imp.truth, "Complete scores for a synthetic scorer");
  impute->add_option("--corpus", imp.corpus, "Directory of answer texts");
  impute->add_option("--max-in-flight", imp.max_in_flight)->check(CLI::PositiveNumber);
  impute->add_option("--max-retries", imp.max_retries)->check(CLI::NonNegativeNumber);
  impute->add_option("--out", imp.out, "Completed score CSV")->required();
  impute->add_option("--report", imp.report, "Imputation report JSON")->required();

  FitArgs fa;
  auto* fit = app.add_subcommand("fit", "Estimate item parameters and abilities");
  fit->add_option("--scores", fa.scores)->required();
  fit->add_option("--k-categories,-K", fa.k_categories);
  fit->add_option("--out", fa.out, "Fit JSON")->required();
  fit->add_option("--abilities-out", fa.abilities_out);
  fit->add_option("--max-iters", fa.config.max_outer_iters)->check(CLI::PositiveNumber);
  fit->add_option("--tol", fa.config.convergence_tol)->check(CLI::PositiveNumber);
  fit->add_option("--extreme-patterns", fa.extreme, "posterior_mean or clamp_to_bound");

  EvaluateArgs ev;
  auto* evaluate = app.add_subcommand("evaluate", "Compare abilities or scores");
  evaluate->add_option("--estimated", ev.estimated, "Ability or fit JSON");
  evaluate->add_option("--reference", ev.reference, "Ability or fit JSON");
  evaluate->add_option("--truth-scores", ev.truth_scores);
  evaluate->add_option("--predicted-scores", ev.predicted_scores);
  evaluate->add_option("--masked", ev.masked, "Mask CSV; compare only its missing cells");
  evaluate->add_option("--k-categories,-K", ev.k_categories);
  evaluate->add_option("--out", ev.out, "Also write the metrics JSON here");

  ExperimentArgs ex;
  auto* experiment = app.add_subcommand("experiment", "Run a simulation plan");
  experiment->add_option("--plan", ex.plan)->required();
  experiment->add_option("--out", ex.out, "Report directory")->required();
  experiment->add_option("--jobs", ex.jobs, "Worker threads");
  experiment->add_option("--scorer", ex.scorer, "Default scorer for scorer methods");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return kExitOk;
    }
    app.exit(e, out, err);
    return kExitUsage;
  }

  set_log_level(g.quiet ? LogLevel::Error : g.verbose > 0 ? LogLevel::Debug : LogLevel::Warning);

  try {
    if (simulate->parsed()) cmd_simulate(sim, g);
    else if (design->parsed()) cmd_design(des, g);
    else if (impute->parsed()) cmd_impute(imp, g);
    else if (fit->parsed()) cmd_fit(fa, g);
    else if (evaluate->parsed()) cmd_evaluate(ev, out);
    else if (experiment->parsed()) cmd_experiment(ex, g);
    return kExitOk;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ScorerError& e) {
    err << "scorer error: " << e.what() << '\n';
    return kExitScorer;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
}

}  // namespace irtimpute
