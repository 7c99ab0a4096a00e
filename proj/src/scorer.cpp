#include "irtimpute/scorer.hpp"

#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <random>
#include <thread>

#include "httplib.h"
#include "irtimpute/errors.hpp"
#include "irtimpute/logging.hpp"
#include "irtimpute/metrics.hpp"

namespace irtimpute {

using nlohmann::json;

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Box-Muller on two 53-bit uniforms, so draws do not depend on the standard
// library's normal_distribution.
double standard_normal(std::mt19937_64& rng) {
  constexpr double kTwoPi = 6.283185307179586476925286766559;
  const double u1 = (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
  const double u2 = (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
}

void put_optional(json& j, const char* key, const std::optional<std::string>& v) {
  if (v) j[key] = *v;
}

std::optional<std::string> get_optional(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->get<std::string>();
}

std::string cell_label(const ScoreRequest& r) {
  return "item " + r.item_id + ", learner " + r.learner_id;
}

}  // namespace

json to_json(const ScoreRequest& r) {
  json j;
  j["item_id"] = r.item_id;
  j["learner_id"] = r.learner_id;
  put_optional(j, "answer_text", r.answer_text);
  put_optional(j, "prompt", r.prompt);
  put_optional(j, "rubric", r.rubric);
  put_optional(j, "reference_answer", r.reference_answer);
  j["n_categories"] = r.n_categories;
  return j;
}

ScoreRequest request_from_json(const json& j) {
  ScoreRequest r;
  r.item_id = j.at("item_id").get<std::string>();
  r.learner_id = j.at("learner_id").get<std::string>();
  r.answer_text = get_optional(j, "answer_text");
  r.prompt = get_optional(j, "prompt");
  r.rubric = get_optional(j, "rubric");
  r.reference_answer = get_optional(j, "reference_answer");
  r.n_categories = j.at("n_categories").get<int>();
  return r;
}

json to_json(const ScoreResponse& r) {
  json j;
  j["item_id"] = r.item_id;
  j["learner_id"] = r.learner_id;
  j["predicted"] = r.predicted;
  put_optional(j, "raw_output", r.raw_output);
  return j;
}

int parse_prediction(const std::string& raw) {
  const auto first = raw.find_first_not_of(" \t\r\n");
  if (first == std::string::npos)
    throw ScorerProtocolError("empty scorer output", raw);
  const auto last = raw.find_last_not_of(" \t\r\n");
  const std::string body = raw.substr(first, last - first + 1);
  std::size_t pos = 0;
  if (body[pos] == '+' || body[pos] == '-') ++pos;
  if (pos == body.size()) throw ScorerProtocolError("scorer output is not an integer", raw);
  for (std::size_t k = pos; k < body.size(); ++k) {
    if (body[k] < '0' || body[k] > '9')
      throw ScorerProtocolError("scorer output is not an integer: '" + body + "'", raw);
  }
  try {
    return std::stoi(body);
  } catch (const std::exception&) {
    throw ScorerProtocolError("scorer output out of integer range: '" + body + "'", raw);
  }
}

ScoreResponse interpret_response(const ScoreRequest& request, const json& body,
                                 const std::string& raw_line) {
  if (!body.is_object()) throw ScorerProtocolError("scorer response is not an object", raw_line);
  if (auto err = body.find("error"); err != body.end())
    throw ScorerProtocolError("scorer reported an error for " + cell_label(request) + ": " +
                                  (err->is_string() ? err->get<std::string>() : err->dump()),
                              raw_line);
  auto check_id = [&](const char* key, const std::string& expected) {
    auto it = body.find(key);
    if (it == body.end()) return;
    const std::string got = it->is_string() ? it->get<std::string>() : it->dump();
    if (got != expected)
      throw ScorerProtocolError(std::string("scorer answered for ") + key + " '" + got +
                                    "', expected '" + expected + "'",
                                raw_line);
  };
  check_id("item_id", request.item_id);
  check_id("learner_id", request.learner_id);

  auto it = body.find("predicted");
  if (it == body.end()) throw ScorerProtocolError("scorer response lacks 'predicted'", raw_line);
  int predicted = 0;
  if (it->is_number_integer()) {
    predicted = it->get<int>();
  } else if (it->is_number_float()) {
    const double v = it->get<double>();
    if (v != std::floor(v))
      throw ScorerProtocolError("scorer predicted a non-integer " + it->dump(), raw_line);
    predicted = static_cast<int>(v);
  } else if (it->is_string()) {
    predicted = parse_prediction(it->get<std::string>());
  } else {
    throw ScorerProtocolError("scorer 'predicted' has the wrong type", raw_line);
  }

  ScoreResponse response;
  response.item_id = request.item_id;
  response.learner_id = request.learner_id;
  if (auto raw = body.find("raw_output"); raw != body.end() && raw->is_string())
    response.raw_output = raw->get<std::string>();
  else
    response.raw_output = raw_line;
  const int K = request.n_categories;
  if (predicted < 1 || predicted > K) {
    const int clamped = std::clamp(predicted, 1, K);
    log_warning("scorer predicted " + std::to_string(predicted) + " for " +
                cell_label(request) + "; clamped to " + std::to_string(clamped));
    predicted = clamped;
  }
  response.predicted = predicted;
  return response;
}

// ---------------------------------------------------------------------------
// Synthetic scorer

int noisy_category(int truth, double sigma, double z, int K) {
  const double value = static_cast<double>(truth) + sigma * z;
  const double rounded = std::floor(value + 0.5);
  return static_cast<int>(std::clamp(rounded, 1.0, static_cast<double>(K)));
}

std::uint64_t cell_seed(std::uint64_t seed, const std::string& item_id,
                        const std::string& learner_id) {
  return splitmix64(splitmix64(seed ^ fnv1a(item_id)) ^ fnv1a(learner_id));
}

SyntheticScorer::SyntheticScorer(ScoreMatrix truth, SyntheticScorerConfig config)
    : truth_(std::move(truth)), config_(config) {
  if (!(config_.noise_sigma >= 0.0))
    throw UsageError("synthetic scorer noise must be nonnegative");
  for (std::size_t i = 0; i < truth_.n_items(); ++i) item_index_[truth_.item_ids()[i]] = i;
  for (std::size_t j = 0; j < truth_.n_learners(); ++j)
    learner_index_[truth_.learner_ids()[j]] = j;
}

ScoreResponse SyntheticScorer::score(const ScoreRequest& request) {
  const auto item = item_index_.find(request.item_id);
  const auto learner = learner_index_.find(request.learner_id);
  if (item == item_index_.end() || learner == learner_index_.end())
    throw ScorerError("synthetic scorer has no true score for " + cell_label(request));
  const int truth = truth_.at(item->second, learner->second);
  if (truth == kMissing)
    throw ScorerError("synthetic scorer has no true score for " + cell_label(request));
  std::mt19937_64 rng(cell_seed(config_.seed, request.item_id, request.learner_id));
  const double z = standard_normal(rng);
  ScoreResponse r;
  r.item_id = request.item_id;
  r.learner_id = request.learner_id;
  r.predicted = noisy_category(truth, config_.noise_sigma, z, truth_.n_categories());
  return r;
}

std::string SyntheticScorer::describe() const {
  return "synthetic:sigma=" + std::to_string(config_.noise_sigma);
}

double simulated_qwk(double sigma, int K, std::span<const double> hist,
                     std::uint64_t seed, std::size_t draws) {
  if (hist.size() != static_cast<std::size_t>(K))
    throw ShapeError("histogram must have one weight per category");
  std::discrete_distribution<int> category(hist.begin(), hist.end());
  std::mt19937_64 rng(seed);
  std::vector<int> truth(draws), pred(draws);
  for (std::size_t n = 0; n < draws; ++n) {
    truth[n] = category(rng) + 1;
    pred[n] = noisy_category(truth[n], sigma, standard_normal(rng), K);
  }
  return qwk(truth, pred, K).value;
}

double calibrate_sigma(double target_qwk, int K, std::span<const double> hist,
                       std::uint64_t seed, std::size_t draws) {
  if (!(target_qwk > 0.0 && target_qwk <= 1.0))
    throw CalibrationError("target QWK must lie in (0, 1]");
  if (draws < 100000) throw CalibrationError("calibration needs at least 1e5 draws");
  if (target_qwk == 1.0) return 0.0;
  constexpr double kHi = 3.0;
  const double floor_qwk = simulated_qwk(kHi, K, hist, seed, draws);
  if (target_qwk < floor_qwk - 0.02)
    throw CalibrationError("target QWK " + std::to_string(target_qwk) +
                           " unreachable; achievable range is [" +
                           std::to_string(floor_qwk) + ", 1]");
  // Common random numbers keep the simulated curve monotone in sigma.
  double lo = 0.0, hi = kHi;
  for (int it = 0; it < 40; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (simulated_qwk(mid, K, hist, seed, draws) > target_qwk)
      lo = mid;
    else
      hi = mid;
    if (hi - lo < 1e-4) break;
  }
  const double sigma = 0.5 * (lo + hi);
  const double achieved = simulated_qwk(sigma, K, hist, seed, draws);
  if (std::abs(achieved - target_qwk) > 0.02)
    throw CalibrationError("QWK " + std::to_string(target_qwk) +
                           " cannot be hit within 0.02 (closest " +
                           std::to_string(achieved) + ")");
  return sigma;
}

// ---------------------------------------------------------------------------
// Subprocess scorer

ExecScorer::ExecScorer(std::string command) : command_(std::move(command)) {
  if (command_.empty()) throw UsageError("exec scorer needs a command");
}

ExecScorer::~ExecScorer() { stop(); }

void ExecScorer::start() {
  int in_pipe[2];
  int out_pipe[2];
  if (pipe(in_pipe) != 0) throw ScorerTransportError("pipe failed: " + std::string(strerror(errno)));
  if (pipe(out_pipe) != 0) {
    close(in_pipe[0]);
    close(in_pipe[1]);
    throw ScorerTransportError("pipe failed: " + std::string(strerror(errno)));
  }
  signal(SIGPIPE, SIG_IGN);
  const pid_t pid = fork();
  if (pid < 0) throw ScorerTransportError("fork failed: " + std::string(strerror(errno)));
  if (pid == 0) {
    dup2(in_pipe[0], STDIN_FILENO);
    dup2(out_pipe[1], STDOUT_FILENO);
    close(in_pipe[0]);
    close(in_pipe[1]);
    close(out_pipe[0]);
    close(out_pipe[1]);
    execl("/bin/sh", "sh", "-c", command_.c_str(), static_cast<char*>(nullptr));
    _exit(127);
  }
  close(in_pipe[0]);
  close(out_pipe[1]);
  pid_ = pid;
  to_child_ = in_pipe[1];
  from_child_ = out_pipe[0];
  buffer_.clear();
}

void ExecScorer::stop() {
  if (to_child_ >= 0) close(to_child_);
  if (from_child_ >= 0) close(from_child_);
  to_child_ = from_child_ = -1;
  if (pid_ > 0) {
    int status = 0;
    for (int wait_ms = 0; wait_ms < 1000; wait_ms += 10) {
      if (waitpid(pid_, &status, WNOHANG) != 0) {
        pid_ = -1;
        return;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    kill(pid_, SIGKILL);
    waitpid(pid_, &status, 0);
    pid_ = -1;
  }
}

std::string ExecScorer::exchange(const std::string& line) {
  if (pid_ < 0) start();
  const std::string out = line + "\n";
  std::size_t sent = 0;
  while (sent < out.size()) {
    const ssize_t n = write(to_child_, out.data() + sent, out.size() - sent);
    if (n < 0) {
      if (errno == EINTR) continue;
      stop();
      throw ScorerTransportError("writing to scorer process failed: " +
                                 std::string(strerror(errno)));
    }
    sent += static_cast<std::size_t>(n);
  }
  for (;;) {
    if (auto nl = buffer_.find('\n'); nl != std::string::npos) {
      std::string reply = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      return reply;
    }
    pollfd pfd{from_child_, POLLIN, 0};
    const int ready = poll(&pfd, 1, 120000);
    if (ready == 0) {
      stop();
      throw ScorerTransportError("scorer process timed out");
    }
    if (ready < 0) {
      if (errno == EINTR) continue;
      stop();
      throw ScorerTransportError("poll on scorer process failed");
    }
    char chunk[4096];
    const ssize_t n = read(from_child_, chunk, sizeof chunk);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) {
      stop();
      throw ScorerTransportError("scorer process closed its output");
    }
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

ScoreResponse ExecScorer::score(const ScoreRequest& request) {
  if (!request.answer_text)
    throw ScorerError("external scorers need an answer text for " + cell_label(request));
  std::lock_guard lock(mutex_);
  const std::string reply = exchange(to_json(request).dump());
  json body;
  try {
    body = json::parse(reply);
  } catch (const json::parse_error&) {
    throw ScorerProtocolError("scorer replied with malformed JSON", reply);
  }
  return interpret_response(request, body, reply);
}

// ---------------------------------------------------------------------------
// HTTP scorer

HttpScorer::HttpScorer(std::string base_url, std::size_t max_in_flight)
    : base_url_(std::move(base_url)), max_in_flight_(std::max<std::size_t>(1, max_in_flight)) {
  if (base_url_.rfind("http://", 0) != 0)
    throw UsageError("http scorer URL must start with http://");
}

ScoreResponse HttpScorer::score(const ScoreRequest& request) {
  if (!request.answer_text)
    throw ScorerError("external scorers need an answer text for " + cell_label(request));
  const auto slash = base_url_.find('/', std::strlen("http://"));
  const std::string host = base_url_.substr(0, slash);
  std::string path = slash == std::string::npos ? "" : base_url_.substr(slash);
  while (!path.empty() && path.back() == '/') path.pop_back();
  path += "/score";

  httplib::Client client(host);
  client.set_connection_timeout(10);
  client.set_read_timeout(120);
  const auto result = client.Post(path, to_json(request).dump(), "application/json");
  if (!result)
    throw ScorerTransportError("HTTP scorer unreachable: " + httplib::to_string(result.error()));
  const int status = result->status;
  if (status >= 500)
    throw ScorerTransportError("HTTP scorer returned " + std::to_string(status));
  if (status >= 400)
    throw ScorerProtocolError("HTTP scorer rejected the request with " + std::to_string(status),
                              result->body);
  json body;
  try {
    body = json::parse(result->body);
  } catch (const json::parse_error&) {
    throw ScorerProtocolError("HTTP scorer replied with malformed JSON", result->body);
  }
  return interpret_response(request, body, result->body);
}

// ---------------------------------------------------------------------------

ScorerSpec parse_scorer_spec(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos)
    throw UsageError("scorer must be exec:<cmd>, http:<url> or synthetic:<sigma|qwk=q>");
  const std::string kind = text.substr(0, colon);
  const std::string rest = text.substr(colon + 1);
  ScorerSpec spec;
  if (kind == "exec") {
    spec.kind = ScorerSpec::Kind::Exec;
    spec.target = rest;
    if (rest.empty()) throw UsageError("exec scorer needs a command");
  } else if (kind == "http") {
    spec.kind = ScorerSpec::Kind::Http;
    spec.target = "http:" + rest;
  } else if (kind == "synthetic") {
    spec.kind = ScorerSpec::Kind::Synthetic;
    auto number = [&](const std::string& s) {
      try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
      } catch (const std::exception&) {
        throw UsageError("bad number in scorer spec: '" + s + "'");
      }
    };
    if (rest.rfind("qwk=", 0) == 0)
      spec.target_qwk = number(rest.substr(4));
    else if (rest.rfind("sigma=", 0) == 0)
      spec.sigma = number(rest.substr(6));
    else
      spec.sigma = number(rest);
  } else {
    throw UsageError("unknown scorer kind '" + kind + "'");
  }
  return spec;
}

std::unique_ptr<Scorer> make_scorer(const ScorerSpec& spec, const ScoreMatrix* truth,
                                    std::uint64_t seed) {
  switch (spec.kind) {
    case ScorerSpec::Kind::Exec:
      return std::make_unique<ExecScorer>(spec.target);
    case ScorerSpec::Kind::Http:
      return std::make_unique<HttpScorer>(spec.target);
    case ScorerSpec::Kind::Synthetic: {
      if (!truth) throw UsageError("synthetic scorer needs the true complete scores");
      SyntheticScorerConfig cfg;
      cfg.seed = seed;
      cfg.target_qwk = spec.target_qwk;
      if (spec.target_qwk) {
        std::vector<double> hist(static_cast<std::size_t>(truth->n_categories()), 0.0);
        for (std::size_t i = 0; i < truth->n_items(); ++i)
          for (std::size_t j = 0; j < truth->n_learners(); ++j)
            if (truth->observed(i, j)) hist[static_cast<std::size_t>(truth->at(i, j) - 1)] += 1;
        cfg.noise_sigma = calibrate_sigma(*spec.target_qwk, truth->n_categories(), hist, seed);
      } else {
        cfg.noise_sigma = spec.sigma.value_or(0.0);
      }
      return std::make_unique<SyntheticScorer>(*truth, cfg);
    }
  }
  throw UsageError("unknown scorer kind");
}

std::vector<ScoreResponse> batch_score(std::span<const ScoreRequest> requests, Scorer& scorer,
                                       const BatchOptions& options) {
  if (options.max_in_flight < 1) throw UsageError("max_in_flight must be at least 1");
  std::vector<ScoreResponse> responses(requests.size());
  if (requests.empty()) return responses;
  std::vector<std::string> failures(requests.size());
  std::vector<bool> failed(requests.size(), false);
  std::mutex retry_mutex;
  std::atomic<std::size_t> next{0};

  auto work = [&] {
    for (;;) {
      const std::size_t n = next.fetch_add(1);
      if (n >= requests.size()) return;
      auto backoff = options.initial_backoff;
      for (int attempt = 0;; ++attempt) {
        try {
          responses[n] = scorer.score(requests[n]);
          break;
        } catch (const ScorerTransportError& e) {
          if (attempt >= options.max_retries) {
            failed[n] = true;
            failures[n] = e.what();
            break;
          }
          const std::string note = "retrying " + cell_label(requests[n]) + " after: " +
                                   e.what() + " (attempt " + std::to_string(attempt + 2) + ")";
          {
            std::lock_guard lock(retry_mutex);
            log_warning(note);
            if (options.on_retry) options.on_retry(note);
          }
          std::this_thread::sleep_for(backoff);
          backoff *= 2;
        } catch (const std::exception& e) {
          failed[n] = true;
          failures[n] = e.what();
          break;
        }
      }
    }
  };

  const std::size_t workers =
      std::min({options.max_in_flight, scorer.max_in_flight(), requests.size()});
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }

  std::string summary;
  std::size_t count = 0;
  for (std::size_t n = 0; n < requests.size(); ++n) {
    if (!failed[n]) continue;
    ++count;
    if (count <= 20) summary += "\n  " + cell_label(requests[n]) + ": " + failures[n];
  }
  if (count > 0)
    throw ScorerError("scoring failed for " + std::to_string(count) + " cell(s):" + summary);
  return responses;
}

}  // namespace irtimpute
