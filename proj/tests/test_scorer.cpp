#include <atomic>
#include <chrono>
#include <cmath>
#include <mutex>
#include <random>
#include <thread>
#include <vector>

#include "doctest.h"
#include "httplib.h"
#include "irtimpute/errors.hpp"
#include "irtimpute/imputation.hpp"
#include "irtimpute/io.hpp"
#include "irtimpute/logging.hpp"
#include "irtimpute/metrics.hpp"
#include "irtimpute/scorer.hpp"
#include "irtimpute/synthetic.hpp"
#include "test_support.hpp"

using namespace irtimpute;
namespace t = irtimpute::testing;

namespace {

ScoreRequest request(const std::string& item, const std::string& learner, int K,
                     std::optional<std::string> text = "an answer") {
  ScoreRequest r;
  r.item_id = item;
  r.learner_id = learner;
  r.n_categories = K;
  r.answer_text = std::move(text);
  return r;
}

ScoreMatrix small_truth() {
  GenConfig c;
  c.n_items = 3;
  c.n_learners = 12;
  c.seed = 31;
  return generate(c).scores;
}

std::vector<ScoreRequest> requests_for(const ScoreMatrix& m) {
  std::vector<ScoreRequest> out;
  for (std::size_t i = 0; i < m.n_items(); ++i)
    for (std::size_t j = 0; j < m.n_learners(); ++j) {
      auto r = request(m.item_ids()[i], m.learner_ids()[j], m.n_categories());
      r.item_index = i;
      r.learner_index = j;
      out.push_back(std::move(r));
    }
  return out;
}

// Captures warnings for the lifetime of the object.
struct LogCapture {
  std::mutex mutex;
  std::vector<std::string> lines;
  LogCapture() {
    set_log_sink([this](LogLevel, std::string_view m) {
      std::lock_guard lock(mutex);
      lines.emplace_back(m);
    });
  }
  ~LogCapture() { set_log_sink(nullptr); }
  bool contains(const std::string& needle) {
    std::lock_guard lock(mutex);
    for (const auto& l : lines)
      if (l.find(needle) != std::string::npos) return true;
    return false;
  }
};

std::string stub(const std::filesystem::path& truth, const std::string& extra = "") {
  return std::string("exec:") + STUB_SCORER_PATH + " --truth " + truth.string() + " " + extra;
}

}  // namespace

TEST_CASE("wire JSON round-trips and omits absent fields") {
  auto r = request("q1", "s7", 4);
  r.rubric = "be kind";
  const auto j = to_json(r);
  CHECK(j == nlohmann::json{{"item_id", "q1"},
                            {"learner_id", "s7"},
                            {"answer_text", "an answer"},
                            {"rubric", "be kind"},
                            {"n_categories", 4}});
  const auto back = request_from_json(j);
  CHECK(back.item_id == "q1");
  CHECK(back.rubric == r.rubric);
  CHECK_FALSE(back.prompt.has_value());
}

TEST_CASE("prediction parsing tolerates whitespace only") {
  CHECK(parse_prediction("3\n") == 3);
  CHECK(parse_prediction("  4 ") == 4);
  for (const char* bad : {"", "  ", "three", "3.5", "3 or 4"}) {
    CAPTURE(bad);
    try {
      parse_prediction(bad);
      FAIL("expected a protocol error");
    } catch (const ScorerProtocolError& e) {
      CHECK(e.raw_output() == bad);
    }
  }
}

TEST_CASE("response interpretation clamps with a warning and checks ids") {
  LogCapture log;
  const auto r = request("q1", "s1", 5);
  CHECK(interpret_response(r, {{"predicted", 3}}, "").predicted == 3);
  CHECK(interpret_response(r, {{"predicted", "2\n"}}, "").predicted == 2);
  CHECK(interpret_response(r, {{"predicted", 4.0}}, "").predicted == 4);
  CHECK(interpret_response(r, {{"predicted", 6}}, "").predicted == 5);
  CHECK(interpret_response(r, {{"predicted", 0}}, "").predicted == 1);
  CHECK(log.contains("clamp"));
  CHECK_THROWS_AS(interpret_response(r, {{"predicted", 2.5}}, ""), ScorerProtocolError);
  CHECK_THROWS_AS(interpret_response(r, {{"score", 2}}, ""), ScorerProtocolError);
  CHECK_THROWS_AS(interpret_response(r, {{"learner_id", "s2"}, {"predicted", 2}}, ""),
                  ScorerProtocolError);
  CHECK_THROWS_AS(interpret_response(r, {{"error", "overloaded"}}, ""), ScorerProtocolError);
}

TEST_CASE("synthetic scorer with zero noise is exact") {
  const auto truth = small_truth();
  SyntheticScorer s(truth, {0.0, 8, std::nullopt});
  std::vector<int> a, b;
  for (const auto& r : requests_for(truth)) {
    a.push_back(truth.at(r.item_index, r.learner_index));
    b.push_back(s.score(r).predicted);
  }
  CHECK(a == b);
  CHECK(qwk(a, b, 5).value == 1.0);
}

TEST_CASE("synthetic scorer stays in range and is order independent") {
  auto truth = ScoreMatrix(1, 400, 5);
  for (std::size_t j = 0; j < 400; ++j) truth.set(0, j, 5);
  SyntheticScorer s(truth, {0.7, 2, std::nullopt});
  auto reqs = requests_for(truth);
  std::vector<int> forward;
  for (const auto& r : reqs) {
    const int p = s.score(r).predicted;
    CHECK(p >= 1);
    CHECK(p <= 5);
    forward.push_back(p);
  }
  CHECK(std::count(forward.begin(), forward.end(), 5) < 400);
  for (std::size_t n = reqs.size(); n-- > 0;)
    CHECK(s.score(reqs[n]).predicted == forward[n]);
  CHECK(noisy_category(3, 0.0, 0.49, 5) == 3);
  CHECK(noisy_category(3, 1.0, 0.5, 5) == 4);
  CHECK(noisy_category(1, 1.0, -3.0, 5) == 1);
}

TEST_CASE("synthetic QWK falls as noise grows") {
  const std::vector<double> hist{1, 2, 3, 2, 1};
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    double prev = 1.0;
    for (double sigma : {0.0, 0.3, 0.6, 1.0, 1.5, 2.5}) {
      const double q = simulated_qwk(sigma, 5, hist, seed);
      CHECK(q <= prev + 1e-12);
      prev = q;
    }
  }
}

TEST_CASE("sigma calibration hits its target") {
  const std::vector<double> uniform(5, 1.0);
  CHECK(calibrate_sigma(1.0, 5, uniform, 3) == 0.0);
  const double s8 = calibrate_sigma(0.8, 5, uniform, 3);
  const double achieved = simulated_qwk(s8, 5, uniform, 99);
  CHECK(achieved >= 0.78);
  CHECK(achieved <= 0.82);
  CHECK(calibrate_sigma(0.9, 5, uniform, 3) < calibrate_sigma(0.6, 5, uniform, 3));
  CHECK_THROWS_AS(calibrate_sigma(0.01, 5, uniform, 3), CalibrationError);
  CHECK_THROWS_AS(calibrate_sigma(0.0, 5, uniform, 3), CalibrationError);
}

TEST_CASE("scorer spec parsing") {
  auto s = parse_scorer_spec("synthetic:0.5");
  CHECK(s.kind == ScorerSpec::Kind::Synthetic);
  CHECK(s.sigma == 0.5);
  CHECK(parse_scorer_spec("synthetic:qwk=0.8").target_qwk == 0.8);
  CHECK(parse_scorer_spec("synthetic:sigma=1").sigma == 1.0);
  CHECK(parse_scorer_spec("exec:python3 grader.py --k 5").target == "python3 grader.py --k 5");
  CHECK(parse_scorer_spec("http://localhost:8080/v1").target == "http://localhost:8080/v1");
  for (const char* bad : {"synthetic:abc", "ftp://x", "exec:", "nonsense"})
    CHECK_THROWS_AS(parse_scorer_spec(bad), UsageError);
}

TEST_CASE("batch scoring keeps order and handles empty input") {
  const auto truth = small_truth();
  SyntheticScorer s(truth, {0.0, 1, std::nullopt});
  CHECK(batch_score({}, s).empty());
  auto reqs = requests_for(truth);
  reqs.resize(10);
  BatchOptions opts;
  opts.max_in_flight = 4;
  const auto out = batch_score(reqs, s, opts);
  REQUIRE(out.size() == 10);
  for (std::size_t n = 0; n < 10; ++n) {
    CHECK(out[n].learner_id == reqs[n].learner_id);
    CHECK(out[n].predicted == truth.at(reqs[n].item_index, reqs[n].learner_index));
  }
}

TEST_CASE("batch scoring retries transient failures and respects max in flight") {
  struct Flaky final : Scorer {
    std::atomic<int> calls{0}, active{0}, peak{0};
    ScoreResponse score(const ScoreRequest& r) override {
      const int now = ++active;
      int p = peak.load();
      while (now > p && !peak.compare_exchange_weak(p, now)) {
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(2));
      --active;
      if (calls++ == 0) throw ScorerTransportError("connection reset");
      return {r.item_id, r.learner_id, 2, std::nullopt};
    }
    std::size_t max_in_flight() const override { return 3; }
    bool requires_answer_text() const override { return false; }
    std::string describe() const override { return "flaky"; }
  };
  LogCapture log;
  Flaky f;
  std::vector<ScoreRequest> reqs;
  for (int n = 0; n < 12; ++n) reqs.push_back(request("q", std::to_string(n), 3));
  std::vector<std::string> retried;
  BatchOptions opts;
  opts.max_in_flight = 8;
  opts.initial_backoff = std::chrono::milliseconds(1);
  opts.on_retry = [&](const std::string& m) { retried.push_back(m); };
  const auto out = batch_score(reqs, f, opts);
  CHECK(out.size() == 12);
  CHECK(f.calls == 13);
  CHECK(retried.size() == 1);
  CHECK(log.contains("connection reset"));
  CHECK(f.peak <= 3);
}

TEST_CASE("exhausted retries fail with the cell list") {
  struct Down final : Scorer {
    std::atomic<int> calls{0};
    ScoreResponse score(const ScoreRequest&) override {
      ++calls;
      throw ScorerTransportError("refused");
    }
    bool requires_answer_text() const override { return false; }
    std::string describe() const override { return "down"; }
  };
  LogCapture log;
  Down d;
  const std::vector<ScoreRequest> reqs{request("q", "a", 3), request("q", "b", 3)};
  BatchOptions opts;
  opts.initial_backoff = std::chrono::milliseconds(1);
  try {
    batch_score(reqs, d, opts);
    FAIL("expected failure");
  } catch (const ScorerError& e) {
    const std::string what = e.what();
    CHECK(what.find("item q, learner a") != std::string::npos);
    CHECK(what.find("item q, learner b") != std::string::npos);
  }
  CHECK(d.calls == 8);  // 1 + 3 retries per cell
}

TEST_CASE("exec scorer speaks NDJSON to a child process") {
  t::TempDir dir;
  const auto truth = small_truth();
  write_score_csv(dir / "truth.csv", truth);
  auto scorer = make_scorer(parse_scorer_spec(stub(dir / "truth.csv")), nullptr, 0);
  for (const auto& r : requests_for(truth))
    CHECK(scorer->score(r).predicted == truth.at(r.item_index, r.learner_index));
  CHECK_THROWS_AS(scorer->score(request("item_1", "1", 5, std::nullopt)), ScorerError);
}

TEST_CASE("exec scorer: raw text predictions and out-of-range clamping") {
  t::TempDir dir;
  const auto truth = small_truth();
  write_score_csv(dir / "truth.csv", truth);
  ExecScorer text(stub(dir / "truth.csv", "--as-string").substr(5));
  ExecScorer high(stub(dir / "truth.csv", "--offset 10").substr(5));
  LogCapture log;
  for (const auto& r : requests_for(truth)) {
    CHECK(text.score(r).predicted == truth.at(r.item_index, r.learner_index));
    CHECK(high.score(r).predicted == 5);
  }
}

TEST_CASE("exec scorer: a malformed line is a protocol error and the child survives") {
  t::TempDir dir;
  const auto truth = small_truth();
  write_score_csv(dir / "truth.csv", truth);
  ExecScorer s(stub(dir / "truth.csv", "--garbage-learner 3").substr(5));
  const auto reqs = requests_for(truth);
  CHECK(s.score(reqs[0]).predicted == truth.at(0, 0));
  try {
    s.score(reqs[2]);
    FAIL("expected a protocol error");
  } catch (const ScorerProtocolError& e) {
    CHECK(e.raw_output() == "I think this deserves a four");
  }
  CHECK(s.score(reqs[3]).predicted == truth.at(0, 3));
}

TEST_CASE("exec scorer restarts a crashed child through batch retries") {
  t::TempDir dir;
  const auto truth = small_truth();
  write_score_csv(dir / "truth.csv", truth);
  LogCapture log;
  ExecScorer s(stub(dir / "truth.csv", "--crash-marker " + (dir / "crashed").string()).substr(5));
  BatchOptions opts;
  opts.initial_backoff = std::chrono::milliseconds(1);
  const auto reqs = requests_for(truth);
  const auto out = batch_score(reqs, s, opts);
  for (std::size_t n = 0; n < reqs.size(); ++n)
    CHECK(out[n].predicted == truth.at(reqs[n].item_index, reqs[n].learner_index));
  CHECK(std::filesystem::exists(dir / "crashed"));
}

TEST_CASE("exec scorer completes a fully missing matrix") {
  t::TempDir dir;
  const auto truth = small_truth();
  write_score_csv(dir / "truth.csv", truth);
  const ScoreMatrix empty = [&] {
    ScoreMatrix m(truth.n_items(), truth.n_learners(), truth.n_categories());
    m.set_item_ids(truth.item_ids());
    m.set_learner_ids(truth.learner_ids());
    return m;
  }();
  auto scorer = make_scorer(parse_scorer_spec(stub(dir / "truth.csv")), nullptr, 0);
  const auto r = impute_with_scorer(empty, attach_oracle_corpus(truth).corpus(), *scorer);
  CHECK(r.first == truth);
}

TEST_CASE("http scorer: 200, 4xx and 5xx semantics") {
  const auto truth = small_truth();
  httplib::Server server;
  std::atomic<int> calls{0};
  server.Post("/v1/score", [&](const httplib::Request& req, httplib::Response& res) {
    const int n = calls++;
    const auto body = nlohmann::json::parse(req.body);
    const auto learner = body.at("learner_id").get<std::string>();
    if (n == 0) {
      res.status = 503;
      return;
    }
    if (learner == "5") {
      res.status = 400;
      res.set_content("bad request", "text/plain");
      return;
    }
    const auto item = body.at("item_id").get<std::string>();
    const std::size_t i = std::stoul(item.substr(5)) - 1;
    const std::size_t j = std::stoul(learner) - 1;
    res.set_content(nlohmann::json{{"item_id", item},
                                   {"learner_id", learner},
                                   {"predicted", truth.at(i, j)}}
                        .dump(),
                    "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread thread([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  HttpScorer s("http://127.0.0.1:" + std::to_string(port) + "/v1");
  const auto reqs = requests_for(truth);
  CHECK_THROWS_AS(s.score(reqs[0]), ScorerTransportError);
  CHECK(s.score(reqs[0]).predicted == truth.at(0, 0));
  try {
    s.score(reqs[4]);
    FAIL("expected a protocol error");
  } catch (const ScorerProtocolError& e) {
    CHECK(e.raw_output() == "bad request");
  }

  std::vector<ScoreRequest> good;
  for (const auto& r : reqs)
    if (r.learner_id != "5") good.push_back(r);
  BatchOptions opts;
  opts.max_in_flight = 4;
  const auto out = batch_score(good, s, opts);
  for (std::size_t n = 0; n < good.size(); ++n)
    CHECK(out[n].predicted == truth.at(good[n].item_index, good[n].learner_index));

  server.stop();
  thread.join();
  CHECK_THROWS_AS(s.score(reqs[0]), ScorerTransportError);
}
