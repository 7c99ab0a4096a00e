#include "irtimpute/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <thread>

#include "irtimpute/errors.hpp"
#include "irtimpute/io.hpp"
#include "irtimpute/logging.hpp"

namespace irtimpute {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Independent stream for (purpose, a, b) under the plan seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t purpose, std::uint64_t a = 0,
                          std::uint64_t b = 0) {
  return mix(mix(mix(mix(base) ^ purpose) ^ a) ^ b);
}

enum Purpose : std::uint64_t { kData = 1, kShuffle = 2, kDesign = 3, kScorer = 4, kCalib = 5 };

void check_keys(const json& obj, std::initializer_list<const char*> allowed,
                const std::string& where) {
  if (!obj.is_object()) throw UsageError(where + " must be a JSON object");
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    if (std::none_of(allowed.begin(), allowed.end(),
                     [&](const char* a) { return key == a; }))
      throw UsageError("unknown key '" + key + "' in " + where);
  }
}

template <class T>
T get(const json& obj, const char* key, const std::string& where) {
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw UsageError(where + ": '" + key + "' is missing or has the wrong type");
  }
}

template <class T>
void get_into(const json& obj, const char* key, T& out, const std::string& where) {
  if (obj.contains(key)) out = get<T>(obj, key, where);
}

void check_name(const std::string& name, const std::string& where) {
  if (name.empty() || name.find_first_of(",\"\n\r") != std::string::npos)
    throw UsageError(where + ": name '" + name + "' must be nonempty without commas or quotes");
}

std::string fmt(double v) {
  if (std::isnan(v)) return "NA";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += (c == '\n' || c == '\r') ? ' ' : c;
  }
  return out + "\"";
}

MissingDesign build_design(const ConditionSpec& c, std::size_t I, std::size_t J,
                           std::uint64_t seed) {
  switch (c.generator) {
    case DesignGenerator::Systematic33:
    case DesignGenerator::Systematic50:
    case DesignGenerator::Systematic62:
      return systematic_design(c.generator, I, J);
    case DesignGenerator::Wraparound:
      return wraparound_design(I, J, c.n_missing, c.stride);
    case DesignGenerator::RandomPerItem:
      return random_per_item_design(I, J, c.ratio, seed);
  }
  throw UsageError("unknown design");
}

AnswerCorpus permute_corpus(const AnswerCorpus& corpus, std::span<const std::size_t> perm) {
  AnswerCorpus out = corpus;
  for (std::size_t c = 0; c < perm.size(); ++c) {
    out.learner_ids[c] = corpus.learner_ids[perm[c]];
    for (std::size_t i = 0; i < corpus.n_items; ++i) out.text(i, c) = corpus.text(i, perm[c]);
  }
  return out;
}

// Why a method cannot run on this masked matrix, or empty when it can.
std::string precondition_failure(const MethodSpec& m, const ScoreMatrix& masked) {
  if (m.kind == MethodSpec::Kind::Scorer) return "";
  for (std::size_t j = 0; j < masked.n_learners(); ++j)
    if (masked.observed_for_learner(j) == 0)
      return "learner " + masked.learner_ids()[j] + " has no observed scores";
  for (std::size_t i = 0; i < masked.n_items(); ++i)
    if (masked.observed_in_item(i) == 0)
      return "item " + masked.item_ids()[i] + " has no observed scores";
  if (m.kind == MethodSpec::Kind::NoImpute && !observation_graph_connected(masked))
    return "observation graph is disconnected";
  return "";
}

double sample_sd(const std::vector<double>& v) {
  if (v.size() < 2) return std::nan("");
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? std::nan("") : s / static_cast<double>(v.size());
}

// (metric, value) pairs of one repetition, in report order.
std::vector<std::pair<std::string, double>> metric_values(const RepetitionOutcome& r) {
  std::vector<std::pair<std::string, double>> out;
  if (r.skipped) return out;
  out.emplace_back("rmse", r.rmse);
  out.emplace_back("pearson", r.pearson);
  if (r.qwk) out.emplace_back("qwk", *r.qwk);
  if (r.rmse_vs_true) out.emplace_back("rmse_vs_true", *r.rmse_vs_true);
  if (r.pearson_vs_true) out.emplace_back("pearson_vs_true", *r.pearson_vs_true);
  return out;
}

// Skipped repetitions contribute nothing, but rmse and pearson are always
// listed so a fully skipped method still gets its summary rows.
std::vector<std::string> metric_names(const MethodResult& m) {
  std::vector<std::string> names{"rmse", "pearson"};
  for (const auto& r : m.repetitions)
    for (const auto& [name, v] : metric_values(r)) {
      (void)v;
      if (std::find(names.begin(), names.end(), name) == names.end()) names.push_back(name);
    }
  return names;
}

std::vector<double> series(const MethodResult& m, const std::string& metric) {
  std::vector<double> out;
  for (const auto& r : m.repetitions)
    for (const auto& [name, v] : metric_values(r))
      if (name == metric) out.push_back(v);
  return out;
}

std::vector<PairedTest> paired_tests(const std::vector<MethodResult>& methods) {
  std::vector<PairedTest> tests;
  for (const char* metric : {"rmse", "pearson"}) {
    for (std::size_t a = 0; a < methods.size(); ++a) {
      for (std::size_t b = a + 1; b < methods.size(); ++b) {
        PairedTest t;
        t.method_a = methods[a].method;
        t.method_b = methods[b].method;
        t.metric = metric;
        std::vector<double> xa, xb;
        const auto& ra = methods[a].repetitions;
        const auto& rb = methods[b].repetitions;
        for (std::size_t r = 0; r < ra.size() && r < rb.size(); ++r) {
          if (ra[r].skipped || rb[r].skipped) continue;
          const bool rmse = std::string(metric) == "rmse";
          xa.push_back(rmse ? ra[r].rmse : ra[r].pearson);
          xb.push_back(rmse ? rb[r].rmse : rb[r].pearson);
        }
        t.n = xa.size();
        if (t.n < 2) {
          t.note = "fewer than two paired repetitions";
        } else {
          try {
            t.result = paired_t_test(xa, xb);
          } catch (const DegenerateError&) {
            t.note = "paired differences have zero variance";
          }
        }
        tests.push_back(std::move(t));
      }
    }
  }
  return tests;
}

struct PreparedMethod {
  const MethodSpec* spec = nullptr;
  std::unique_ptr<Scorer> scorer;
};

}  // namespace

std::string to_string(MethodSpec::Kind kind) {
  switch (kind) {
    case MethodSpec::Kind::NoImpute:
      return "no_impute";
    case MethodSpec::Kind::Mean:
      return "mean";
    case MethodSpec::Kind::Mode:
      return "mode";
    case MethodSpec::Kind::Knn:
      return "knn";
    case MethodSpec::Kind::Scorer:
      return "scorer";
  }
  return "unknown";
}

ExperimentPlan plan_from_json(const json& j, const fs::path& base_dir) {
  check_keys(j, {"seed", "repetitions", "jobs", "data", "conditions", "methods", "fit",
                 "diagnostics"},
             "plan");
  ExperimentPlan plan;
  get_into(j, "seed", plan.seed, "plan");
  get_into(j, "repetitions", plan.repetitions, "plan");
  get_into(j, "jobs", plan.jobs, "plan");
  if (plan.repetitions < 1) throw UsageError("plan: repetitions must be at least 1");
  if (plan.jobs < 1) throw UsageError("plan: jobs must be at least 1");

  if (!j.contains("data")) throw UsageError("plan: 'data' is required");
  const json& data = j["data"];
  check_keys(data, {"synthetic", "csv", "corpus", "n_categories"}, "plan.data");
  if (data.contains("synthetic") == data.contains("csv"))
    throw UsageError("plan.data needs exactly one of 'synthetic' and 'csv'");
  if (data.contains("synthetic")) {
    const json& s = data["synthetic"];
    const std::string w = "plan.data.synthetic";
    check_keys(s, {"n_items", "n_learners", "n_categories", "theta_mean", "theta_sd",
                   "log_alpha_mean", "log_alpha_sd", "beta_mean", "beta_sd", "step_spread",
                   "seed"},
               w);
    auto& g = plan.data.synthetic;
    get_into(s, "n_items", g.n_items, w);
    get_into(s, "n_learners", g.n_learners, w);
    get_into(s, "n_categories", g.n_categories, w);
    get_into(s, "theta_mean", g.theta_mean, w);
    get_into(s, "theta_sd", g.theta_sd, w);
    get_into(s, "log_alpha_mean", g.log_alpha_mean, w);
    get_into(s, "log_alpha_sd", g.log_alpha_sd, w);
    get_into(s, "beta_mean", g.beta_mean, w);
    get_into(s, "beta_sd", g.beta_sd, w);
    get_into(s, "step_spread", g.step_spread, w);
    if (s.contains("seed")) {
      g.seed = get<std::uint64_t>(s, "seed", w);
      plan.data.synthetic_seed_given = true;
    }
    try {
      validate(g);
    } catch (const Error& e) {
      throw UsageError(w + ": " + e.what());
    }
  } else {
    plan.data.kind = DataSource::Kind::Csv;
    plan.data.scores_csv = base_dir / get<std::string>(data, "csv", "plan.data");
    if (data.contains("corpus"))
      plan.data.corpus_dir = base_dir / get<std::string>(data, "corpus", "plan.data");
    if (data.contains("n_categories"))
      plan.data.n_categories = get<int>(data, "n_categories", "plan.data");
  }

  if (!j.contains("conditions") || !j["conditions"].is_array() || j["conditions"].empty())
    throw UsageError("plan: 'conditions' must be a nonempty array");
  std::set<std::string> names;
  for (const auto& c : j["conditions"]) {
    const std::string w = "plan.conditions";
    check_keys(c, {"name", "design", "ratio", "n_missing", "stride"}, w);
    ConditionSpec spec;
    spec.generator = design_generator_from_string(get<std::string>(c, "design", w));
    get_into(c, "stride", spec.stride, w);
    std::string default_name = to_string(spec.generator);
    if (spec.generator == DesignGenerator::RandomPerItem) {
      spec.ratio = get<double>(c, "ratio", w);
      if (!(spec.ratio >= 0.0 && spec.ratio <= 1.0))
        throw UsageError(w + ": ratio must lie in [0, 1]");
      default_name += "_" + fmt(spec.ratio);
    } else if (spec.generator == DesignGenerator::Wraparound) {
      spec.n_missing = get<std::size_t>(c, "n_missing", w);
      default_name += "_" + std::to_string(spec.n_missing);
    } else if (c.contains("ratio") || c.contains("n_missing")) {
      throw UsageError(w + ": systematic designs take no ratio or n_missing");
    }
    spec.name = c.value("name", default_name);
    check_name(spec.name, w);
    if (!names.insert(spec.name).second)
      throw UsageError(w + ": duplicate condition name '" + spec.name + "'");
    plan.conditions.push_back(std::move(spec));
  }

  if (!j.contains("methods") || !j["methods"].is_array() || j["methods"].empty())
    throw UsageError("plan: 'methods' must be a nonempty array");
  names.clear();
  for (const auto& m : j["methods"]) {
    const std::string w = "plan.methods";
    check_keys(m, {"name", "method", "k", "weighting", "sigma", "target_qwk", "scorer"}, w);
    MethodSpec spec;
    const auto kind = get<std::string>(m, "method", w);
    if (kind == "no_impute")
      spec.kind = MethodSpec::Kind::NoImpute;
    else if (kind == "mean")
      spec.kind = MethodSpec::Kind::Mean;
    else if (kind == "mode")
      spec.kind = MethodSpec::Kind::Mode;
    else if (kind == "knn")
      spec.kind = MethodSpec::Kind::Knn;
    else if (kind == "scorer")
      spec.kind = MethodSpec::Kind::Scorer;
    else
      throw UsageError(w + ": unknown method '" + kind + "'");
    const bool knn = spec.kind == MethodSpec::Kind::Knn;
    const bool scorer = spec.kind == MethodSpec::Kind::Scorer;
    if (!knn && (m.contains("k") || m.contains("weighting")))
      throw UsageError(w + ": 'k' and 'weighting' apply to knn only");
    if (!scorer && (m.contains("sigma") || m.contains("target_qwk") || m.contains("scorer")))
      throw UsageError(w + ": 'sigma', 'target_qwk' and 'scorer' apply to scorer only");
    if (knn) {
      get_into(m, "k", spec.knn.k, w);
      if (spec.knn.k < 1) throw UsageError(w + ": k must be at least 1");
      const auto weighting = m.value("weighting", std::string("inverse_distance"));
      if (weighting == "uniform")
        spec.knn.weighting = KnnWeighting::Uniform;
      else if (weighting != "inverse_distance")
        throw UsageError(w + ": weighting must be inverse_distance or uniform");
    }
    if (scorer) {
      if (m.contains("sigma")) spec.sigma = get<double>(m, "sigma", w);
      if (m.contains("target_qwk")) spec.target_qwk = get<double>(m, "target_qwk", w);
      if (m.contains("scorer")) spec.scorer = get<std::string>(m, "scorer", w);
      const int given = spec.sigma.has_value() + spec.target_qwk.has_value() +
                        spec.scorer.has_value();
      if (given > 1) throw UsageError(w + ": give at most one of sigma, target_qwk, scorer");
      if (spec.sigma && !(*spec.sigma >= 0.0)) throw UsageError(w + ": sigma must be >= 0");
    }
    spec.name = m.value("name", kind);
    check_name(spec.name, w);
    if (!names.insert(spec.name).second)
      throw UsageError(w + ": duplicate method name '" + spec.name + "'");
    plan.methods.push_back(std::move(spec));
  }

  if (j.contains("fit")) {
    const json& f = j["fit"];
    const std::string w = "plan.fit";
    check_keys(f, {"max_outer_iters", "inner_newton_iters", "convergence_tol",
                   "discrimination_bounds", "location_bounds", "extreme_patterns"},
               w);
    get_into(f, "max_outer_iters", plan.fit.max_outer_iters, w);
    get_into(f, "inner_newton_iters", plan.fit.inner_newton_iters, w);
    get_into(f, "convergence_tol", plan.fit.convergence_tol, w);
    if (f.contains("discrimination_bounds")) {
      const auto b = get<std::vector<double>>(f, "discrimination_bounds", w);
      if (b.size() != 2) throw UsageError(w + ": bounds are [lower, upper]");
      plan.fit.discrimination_bounds = {b[0], b[1]};
    }
    if (f.contains("location_bounds")) {
      const auto b = get<std::vector<double>>(f, "location_bounds", w);
      if (b.size() != 2) throw UsageError(w + ": bounds are [lower, upper]");
      plan.fit.location_bounds = {b[0], b[1]};
    }
    if (f.contains("extreme_patterns")) {
      const auto rule = get<std::string>(f, "extreme_patterns", w);
      if (rule == "posterior_mean")
        plan.fit.extreme_patterns = ExtremePatternRule::PosteriorMean;
      else if (rule == "clamp_to_bound")
        plan.fit.extreme_patterns = ExtremePatternRule::ClampToBound;
      else
        throw UsageError(w + ": extreme_patterns must be posterior_mean or clamp_to_bound");
    }
    validate(plan.fit);
  }
  plan.fit.seed = plan.seed;

  if (j.contains("diagnostics")) {
    check_keys(j["diagnostics"], {"theta_true"}, "plan.diagnostics");
    get_into(j["diagnostics"], "theta_true", plan.theta_true_diagnostic, "plan.diagnostics");
  }
  if (plan.theta_true_diagnostic && plan.data.kind != DataSource::Kind::Synthetic)
    throw UsageError("plan.diagnostics.theta_true needs synthetic data");
  return plan;
}

ExperimentPlan read_plan(const fs::path& path) {
  return plan_from_json(read_json_file(path), path.parent_path());
}

FitResult run_gold_standard(const ScoreMatrix& complete, const FitConfig& config) {
  if (!complete.is_complete())
    throw DataError("the gold-standard fit needs a complete score matrix (" +
                    std::to_string(complete.missing_count()) + " cells missing)");
  return fit_gpcm(complete, config);
}

ExperimentResult run_experiment(const ExperimentPlan& plan, const RunOptions& options) {
  // Data and gold standard.
  ScoreMatrix complete;
  std::optional<AbilitySet> true_thetas;
  std::optional<AnswerCorpus> text_corpus;
  if (plan.data.kind == DataSource::Kind::Synthetic) {
    GenConfig g = plan.data.synthetic;
    if (!plan.data.synthetic_seed_given) g.seed = derive_seed(plan.seed, kData);
    auto data = generate(g);
    complete = std::move(data.scores);
    true_thetas = std::move(data.true_thetas);
  } else {
    complete = read_score_csv(plan.data.scores_csv, plan.data.n_categories);
    if (plan.data.corpus_dir) text_corpus = read_corpus_dir(*plan.data.corpus_dir, complete);
  }

  ExperimentResult result;
  result.gold = run_gold_standard(complete, plan.fit);
  const std::vector<double>& gold = result.gold.abilities.values;
  if (true_thetas && plan.theta_true_diagnostic) {
    const auto t = normalize_abilities(*true_thetas);
    result.gold_vs_true_pearson = pearson(gold, t.values);
    true_thetas = t;
  }

  // Scorers, built once and shared by every repetition.
  std::vector<PreparedMethod> methods;
  std::vector<double> hist(static_cast<std::size_t>(complete.n_categories()), 0.0);
  for (std::size_t i = 0; i < complete.n_items(); ++i)
    for (std::size_t j = 0; j < complete.n_learners(); ++j)
      hist[static_cast<std::size_t>(complete.at(i, j) - 1)] += 1.0;
  for (std::size_t mi = 0; mi < plan.methods.size(); ++mi) {
    const MethodSpec& spec = plan.methods[mi];
    PreparedMethod pm;
    pm.spec = &spec;
    if (spec.kind == MethodSpec::Kind::Scorer) {
      const std::uint64_t seed = derive_seed(plan.seed, kScorer, mi);
      ScorerSetup setup;
      setup.method = spec.name;
      if (spec.sigma || spec.target_qwk) {
        SyntheticScorerConfig cfg;
        cfg.seed = seed;
        cfg.target_qwk = spec.target_qwk;
        cfg.noise_sigma = spec.sigma ? *spec.sigma
                                     : calibrate_sigma(*spec.target_qwk, complete.n_categories(),
                                                       hist, derive_seed(plan.seed, kCalib, mi));
        setup.sigma = cfg.noise_sigma;
        setup.target_qwk = spec.target_qwk;
        pm.scorer = std::make_unique<SyntheticScorer>(complete, cfg);
      } else {
        const auto text = spec.scorer ? spec.scorer : options.default_scorer;
        if (!text)
          throw UsageError("method '" + spec.name +
                           "' names no scorer and no default scorer is set");
        const auto parsed = parse_scorer_spec(*text);
        pm.scorer = make_scorer(parsed, &complete, seed);
        if (auto* s = dynamic_cast<SyntheticScorer*>(pm.scorer.get())) {
          setup.sigma = s->config().noise_sigma;
          setup.target_qwk = s->config().target_qwk;
        }
      }
      if (pm.scorer->requires_answer_text() && !text_corpus)
        throw UsageError("method '" + spec.name +
                         "' uses an external scorer, which needs an answer corpus");
      setup.description = pm.scorer->describe();
      result.scorers.push_back(std::move(setup));
    }
    methods.push_back(std::move(pm));
  }

  const std::size_t I = complete.n_items();
  const std::size_t J = complete.n_learners();
  const std::size_t R = plan.repetitions;
  const std::size_t C = plan.conditions.size();
  // Designs are checked up front so bad conditions fail before any work.
  std::vector<double> ratios(C);
  for (std::size_t c = 0; c < C; ++c)
    ratios[c] = build_design(plan.conditions[c], I, J, derive_seed(plan.seed, kDesign, c, 0))
                    .missing_ratio();

  // outcomes[c][r][m]
  std::vector<std::vector<std::vector<RepetitionOutcome>>> outcomes(
      C, std::vector<std::vector<RepetitionOutcome>>(R));
  std::vector<std::exception_ptr> errors(C * R);

  auto run_task = [&](std::size_t task) {
    const std::size_t c = task / R;
    const std::size_t r = task % R;
    const ConditionSpec& cond = plan.conditions[c];
    const auto [shuffled, perm] = shuffle_learners(complete, derive_seed(plan.seed, kShuffle, c, r));
    const MissingDesign design = build_design(cond, I, J, derive_seed(plan.seed, kDesign, c, r));
    const ScoreMatrix masked = apply_design(shuffled, design);
    std::optional<AnswerCorpus> corpus;
    if (text_corpus)
      corpus = permute_corpus(*text_corpus, perm);
    else
      corpus = attach_oracle_corpus(shuffled).corpus();

    auto& row = outcomes[c][r];
    for (const auto& pm : methods) {
      const MethodSpec& spec = *pm.spec;
      RepetitionOutcome out;
      out.repetition = r;
      const std::string why = precondition_failure(spec, masked);
      if (!why.empty()) {
        out.skipped = true;
        out.skip_reason = why;
        row.push_back(std::move(out));
        continue;
      }
      std::optional<Imputed> imputed;
      switch (spec.kind) {
        case MethodSpec::Kind::NoImpute:
          break;
        case MethodSpec::Kind::Mean:
          imputed = impute_mean(masked);
          break;
        case MethodSpec::Kind::Mode:
          imputed = impute_mode(masked);
          break;
        case MethodSpec::Kind::Knn:
          imputed = impute_knn(masked, spec.knn);
          break;
        case MethodSpec::Kind::Scorer: {
          BatchOptions batch;
          batch.max_in_flight = pm.scorer->requires_answer_text() ? 4 : 1;
          imputed = impute_with_scorer(masked, *corpus, *pm.scorer, batch);
          break;
        }
      }
      const ScoreMatrix& fit_input = imputed ? imputed->first : masked;
      const FitResult fit = fit_gpcm(fit_input, plan.fit);
      std::vector<double> aligned(J);
      for (std::size_t col = 0; col < J; ++col) aligned[perm[col]] = fit.abilities.values[col];
      const auto normalized = normalize_abilities(AbilitySet{aligned, false, 0.0, 1.0});
      out.rmse = rmse(normalized.values, gold);
      out.pearson = pearson(normalized.values, gold);
      if (imputed && !imputed->second.cells.empty()) {
        std::vector<int> truth, pred;
        for (const auto& cell : imputed->second.cells) {
          truth.push_back(shuffled.at(cell.item, cell.learner));
          pred.push_back(cell.value);
        }
        out.qwk = qwk(truth, pred, complete.n_categories()).value;
      }
      if (plan.theta_true_diagnostic && true_thetas) {
        out.rmse_vs_true = rmse(normalized.values, true_thetas->values);
        out.pearson_vs_true = pearson(normalized.values, true_thetas->values);
      }
      row.push_back(std::move(out));
    }
  };

  const std::size_t tasks = C * R;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t t; (t = next.fetch_add(1)) < tasks;) {
      try {
        run_task(t);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    }
  };
  const std::size_t workers = std::min(plan.jobs, tasks);
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  // The lowest failing task decides, whatever the scheduling was.
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  for (std::size_t c = 0; c < C; ++c) {
    ConditionResult cr;
    cr.condition = plan.conditions[c].name;
    cr.missing_ratio = ratios[c];
    for (std::size_t m = 0; m < methods.size(); ++m) {
      MethodResult mr;
      mr.method = methods[m].spec->name;
      mr.kind = methods[m].spec->kind;
      for (std::size_t r = 0; r < R; ++r) mr.repetitions.push_back(outcomes[c][r][m]);
      cr.methods.push_back(std::move(mr));
    }
    cr.tests = paired_tests(cr.methods);
    result.conditions.push_back(std::move(cr));
  }
  return result;
}

std::string tidy_csv(const ExperimentResult& result) {
  std::ostringstream out;
  out << "condition,method,repetition,metric,value\n";
  for (const auto& c : result.conditions)
    for (const auto& m : c.methods)
      for (const auto& r : m.repetitions)
        for (const auto& [metric, value] : metric_values(r))
          out << c.condition << ',' << m.method << ',' << r.repetition + 1 << ',' << metric
              << ',' << fmt(value) << '\n';
  return out.str();
}

std::string summary_csv(const ExperimentResult& result) {
  std::ostringstream out;
  out << "condition,missing_ratio,method,metric,n,mean,sd,skipped\n";
  for (const auto& c : result.conditions)
    for (const auto& m : c.methods) {
      const auto skipped = std::count_if(m.repetitions.begin(), m.repetitions.end(),
                                         [](const RepetitionOutcome& r) { return r.skipped; });
      for (const auto& metric : metric_names(m)) {
        const auto v = series(m, metric);
        out << c.condition << ',' << fmt(c.missing_ratio) << ',' << m.method << ',' << metric
            << ',' << v.size() << ',' << fmt(mean_of(v)) << ',' << fmt(sample_sd(v)) << ','
            << skipped << '\n';
      }
    }
  return out.str();
}

std::string ttests_csv(const ExperimentResult& result) {
  std::ostringstream out;
  out << "condition,method_a,method_b,metric,n,t,df,p_value,note\n";
  for (const auto& c : result.conditions)
    for (const auto& t : c.tests) {
      out << c.condition << ',' << t.method_a << ',' << t.method_b << ',' << t.metric << ','
          << t.n << ',';
      if (t.result)
        out << fmt(t.result->t_statistic) << ',' << t.result->df << ','
            << fmt(t.result->p_value);
      else
        out << "NA,NA,NA";
      out << ',' << (t.note.empty() ? "" : quote(t.note)) << '\n';
    }
  return out.str();
}

std::string plot_data_csv(const ExperimentResult& result) {
  std::ostringstream out;
  out << "missing_ratio,condition,method,metric,mean,sd,lower,upper\n";
  for (const auto& c : result.conditions)
    for (const auto& m : c.methods)
      for (const auto& metric : metric_names(m)) {
        const auto v = series(m, metric);
        const double mean = mean_of(v);
        const double sd = sample_sd(v);
        out << fmt(c.missing_ratio) << ',' << c.condition << ',' << m.method << ',' << metric
            << ',' << fmt(mean) << ',' << fmt(sd) << ',' << fmt(mean - sd) << ','
            << fmt(mean + sd) << '\n';
      }
  return out.str();
}

std::string skips_csv(const ExperimentResult& result) {
  std::ostringstream out;
  out << "condition,method,repetition,reason\n";
  for (const auto& c : result.conditions)
    for (const auto& m : c.methods)
      for (const auto& r : m.repetitions)
        if (r.skipped)
          out << c.condition << ',' << m.method << ',' << r.repetition + 1 << ','
              << quote(r.skip_reason) << '\n';
  return out.str();
}

void emit_report(const ExperimentResult& result, const fs::path& dir) {
  if (result.conditions.empty()) throw DataError("no results to report");
  write_text_file(dir / "tidy.csv", tidy_csv(result));
  write_text_file(dir / "summary.csv", summary_csv(result));
  write_text_file(dir / "ttests.csv", ttests_csv(result));
  write_text_file(dir / "plot_data.csv", plot_data_csv(result));
  write_text_file(dir / "skips.csv", skips_csv(result));
  json info;
  info["gold"]["loglik"] = result.gold.final_log_likelihood;
  info["gold"]["iterations"] = result.gold.iterations;
  info["gold"]["converged"] = result.gold.converged;
  if (result.gold_vs_true_pearson) info["gold"]["pearson_vs_true"] = *result.gold_vs_true_pearson;
  json scorers = json::array();
  for (const auto& s : result.scorers) {
    json e;
    e["method"] = s.method;
    e["scorer"] = s.description;
    if (s.sigma) e["sigma"] = *s.sigma;
    if (s.target_qwk) e["target_qwk"] = *s.target_qwk;
    scorers.push_back(std::move(e));
  }
  info["scorers"] = std::move(scorers);
  write_json_file(dir / "run_info.json", info);
}

}  // namespace irtimpute
