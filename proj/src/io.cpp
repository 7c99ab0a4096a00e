#include "irtimpute/io.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

#include "irtimpute/errors.hpp"

namespace irtimpute {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(trim(field));
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

bool parse_int(const std::string& s, int& out) {
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (first != last && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last && first != last;
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  return in;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

void finish(std::ofstream& out, const fs::path& path) {
  out.flush();
  if (!out) throw IoError("error while writing " + path.string());
}

struct RawTable {
  std::optional<int> declared_k;
  std::vector<std::string> columns;
  std::vector<std::string> row_ids;
  std::vector<std::vector<std::string>> cells;  // per learner row
  std::vector<std::size_t> line_numbers;
};

RawTable read_table(std::istream& in, const std::string& source) {
  RawTable t;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string text = trim(line);
    if (text.empty()) continue;
    if (text[0] == '#') {
      const auto eq = text.find("K=");
      if (!have_header && eq != std::string::npos) {
        int k = 0;
        if (!parse_int(trim(text.substr(eq + 2)), k))
          throw ParseError(source + ":" + std::to_string(line_no) + ": bad K declaration");
        t.declared_k = k;
      }
      continue;
    }
    auto fields = split_csv_line(text);
    if (!have_header) {
      if (fields.size() < 2)
        throw ParseError(source + ":" + std::to_string(line_no) +
                         ": header needs learner_id and at least one item column");
      t.columns.assign(fields.begin() + 1, fields.end());
      have_header = true;
      continue;
    }
    if (fields.size() != t.columns.size() + 1)
      throw ParseError(source + ": row " + std::to_string(line_no) + " has " +
                       std::to_string(fields.size()) + " fields, expected " +
                       std::to_string(t.columns.size() + 1));
    t.row_ids.push_back(fields[0]);
    t.cells.emplace_back(fields.begin() + 1, fields.end());
    t.line_numbers.push_back(line_no);
  }
  if (!have_header) throw ParseError(source + ": no header row");
  if (t.row_ids.empty()) throw ParseError(source + ": no learner rows");
  return t;
}

void write_header(std::ostream& out, const std::vector<std::string>& item_ids) {
  out << "learner_id";
  for (const auto& id : item_ids) out << ',' << id;
  out << '\n';
}

}  // namespace

ScoreMatrix parse_score_csv(std::istream& in, std::optional<int> k_override,
                            const std::string& source) {
  const RawTable t = read_table(in, source);
  const std::size_t I = t.columns.size();
  const std::size_t J = t.row_ids.size();
  std::vector<std::vector<int>> values(I, std::vector<int>(J, kMissing));
  int max_seen = 0;
  for (std::size_t j = 0; j < J; ++j) {
    for (std::size_t i = 0; i < I; ++i) {
      const std::string& f = t.cells[j][i];
      const std::string where = source + ": row " + std::to_string(t.line_numbers[j]) +
                                ", column " + std::to_string(i + 2) + " (" + t.columns[i] +
                                ")";
      int v = 0;
      if (!parse_int(f, v)) throw ParseError(where + ": '" + f + "' is not an integer");
      if (v == -1) continue;
      if (v < 1) throw CategoryRangeError(where + ": score " + std::to_string(v));
      values[i][j] = v;
      max_seen = std::max(max_seen, v);
    }
  }
  const int K = k_override ? *k_override : t.declared_k ? *t.declared_k : std::max(2, max_seen);
  if (K < 2) throw CategoryRangeError(source + ": K must be at least 2");
  for (std::size_t j = 0; j < J; ++j)
    for (std::size_t i = 0; i < I; ++i)
      if (values[i][j] > K)
        throw CategoryRangeError(source + ": row " + std::to_string(t.line_numbers[j]) +
                                 ", column " + std::to_string(i + 2) + " (" + t.columns[i] +
                                 "): score " + std::to_string(values[i][j]) +
                                 " outside 1.." + std::to_string(K));
  ScoreMatrix m = ScoreMatrix::from_items(K, values);
  m.set_item_ids(t.columns);
  m.set_learner_ids(t.row_ids);
  return m;
}

ScoreMatrix read_score_csv(const fs::path& path, std::optional<int> k_override) {
  auto in = open_in(path);
  return parse_score_csv(in, k_override, path.string());
}

void write_score_csv(std::ostream& out, const ScoreMatrix& scores) {
  out << "# K=" << scores.n_categories() << '\n';
  write_header(out, scores.item_ids());
  for (std::size_t j = 0; j < scores.n_learners(); ++j) {
    out << scores.learner_ids()[j];
    for (std::size_t i = 0; i < scores.n_items(); ++i)
      out << ',' << (scores.observed(i, j) ? scores.at(i, j) : -1);
    out << '\n';
  }
}

void write_score_csv(const fs::path& path, const ScoreMatrix& scores) {
  auto out = open_out(path);
  write_score_csv(out, scores);
  finish(out, path);
}

void write_mask_csv(std::ostream& out, const MissingDesign& design,
                    const std::vector<std::string>& item_ids,
                    const std::vector<std::string>& learner_ids) {
  if (item_ids.size() != design.n_items || learner_ids.size() != design.n_learners)
    throw ShapeError("id lists do not match the design");
  write_header(out, item_ids);
  for (std::size_t j = 0; j < design.n_learners; ++j) {
    out << learner_ids[j];
    for (std::size_t i = 0; i < design.n_items; ++i) out << ',' << (design.observed(i, j) ? 1 : 0);
    out << '\n';
  }
}

void write_mask_csv(const fs::path& path, const MissingDesign& design,
                    const std::vector<std::string>& item_ids,
                    const std::vector<std::string>& learner_ids) {
  auto out = open_out(path);
  write_mask_csv(out, design, item_ids, learner_ids);
  finish(out, path);
}

MissingDesign read_mask_csv(const fs::path& path) {
  auto in = open_in(path);
  const RawTable t = read_table(in, path.string());
  MissingDesign d;
  d.n_items = t.columns.size();
  d.n_learners = t.row_ids.size();
  d.mask.assign(d.n_items * d.n_learners, false);
  for (std::size_t j = 0; j < d.n_learners; ++j) {
    for (std::size_t i = 0; i < d.n_items; ++i) {
      const std::string& f = t.cells[j][i];
      if (f != "0" && f != "1")
        throw ParseError(path.string() + ": row " + std::to_string(t.line_numbers[j]) +
                         ", column " + std::to_string(i + 2) + ": mask entries must be 0 or 1");
      d.mask[i * d.n_learners + j] = f == "1";
    }
  }
  d.target_ratio = d.missing_ratio();
  return d;
}

AnswerCorpus read_corpus_dir(const fs::path& dir, const ScoreMatrix& scores) {
  if (!fs::is_directory(dir)) throw IoError(dir.string() + " is not a directory");
  AnswerCorpus corpus(scores.n_items(), scores.n_learners());
  corpus.item_ids = scores.item_ids();
  corpus.learner_ids = scores.learner_ids();
  std::map<std::string, std::size_t> item_index, learner_index;
  for (std::size_t i = 0; i < scores.n_items(); ++i) item_index[scores.item_ids()[i]] = i;
  for (std::size_t j = 0; j < scores.n_learners(); ++j)
    learner_index[scores.learner_ids()[j]] = j;

  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".json")
      files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  std::vector<bool> seen(scores.n_items(), false);
  for (const auto& file : files) {
    const json j = read_json_file(file);
    try {
      const auto id = j.at("item_id").get<std::string>();
      const auto it = item_index.find(id);
      if (it == item_index.end())
        throw DataError(file.string() + ": item '" + id + "' is not in the score matrix");
      const std::size_t i = it->second;
      if (seen[i]) throw DataError(file.string() + ": item '" + id + "' appears twice");
      seen[i] = true;
      corpus.item_prompts[i] = j.value("prompt", "");
      corpus.item_rubrics[i] = j.value("rubric", "");
      if (j.contains("reference_answer") && j["reference_answer"].is_string())
        corpus.reference_answers[i] = j["reference_answer"].get<std::string>();
      const json answers = j.value("answers", json::object());
      for (const auto& [learner, text] : answers.items()) {
        const auto lt = learner_index.find(learner);
        if (lt == learner_index.end())
          throw DataError(file.string() + ": learner '" + learner +
                          "' is not in the score matrix");
        corpus.text(i, lt->second) = text.get<std::string>();
      }
    } catch (const json::exception& e) {
      throw ParseError(file.string() + ": " + e.what());
    }
  }
  return corpus;
}

void write_corpus_dir(const fs::path& dir, const AnswerCorpus& corpus) {
  for (std::size_t i = 0; i < corpus.n_items; ++i) {
    json j;
    j["item_id"] = corpus.item_ids[i];
    j["prompt"] = corpus.item_prompts[i];
    j["rubric"] = corpus.item_rubrics[i];
    j["reference_answer"] = corpus.reference_answers[i] ? json(*corpus.reference_answers[i])
                                                         : json(nullptr);
    json answers = json::object();
    for (std::size_t l = 0; l < corpus.n_learners; ++l)
      if (corpus.text(i, l)) answers[corpus.learner_ids[l]] = *corpus.text(i, l);
    j["answers"] = std::move(answers);
    write_json_file(dir / (corpus.item_ids[i] + ".json"), j);
  }
}

json params_to_json(const std::vector<GpcmItemParams>& items,
                    const std::vector<std::string>& item_ids) {
  json arr = json::array();
  for (std::size_t i = 0; i < items.size(); ++i) {
    json it;
    if (i < item_ids.size()) it["item_id"] = item_ids[i];
    it["alpha"] = items[i].discrimination;
    it["beta"] = items[i].difficulty;
    it["d"] = items[i].steps;
    arr.push_back(std::move(it));
  }
  return arr;
}

std::vector<GpcmItemParams> params_from_json(const json& j) {
  const json& arr = j.is_object() ? j.at("items") : j;
  std::vector<GpcmItemParams> items;
  try {
    for (const auto& it : arr) {
      GpcmItemParams p;
      p.discrimination = it.at("alpha").get<double>();
      p.difficulty = it.at("beta").get<double>();
      p.steps = it.at("d").get<std::vector<double>>();
      validate_item(p);
      items.push_back(std::move(p));
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("bad item parameters: ") + e.what());
  }
  return items;
}

json fit_to_json(const FitResult& fit, const ScoreMatrix& scores) {
  json j;
  j["items"] = params_to_json(fit.items, scores.item_ids());
  j["learner_ids"] = scores.learner_ids();
  j["abilities"] = fit.abilities.values;
  j["loglik"] = fit.final_log_likelihood;
  j["iterations"] = fit.iterations;
  j["converged"] = fit.converged;
  j["flags"] = fit.flags;
  return j;
}

json abilities_to_json(const AbilitySet& abilities, const std::vector<std::string>& learner_ids) {
  json j;
  j["learner_ids"] = learner_ids;
  j["abilities"] = abilities.values;
  j["normalized"] = abilities.normalized;
  return j;
}

AbilityFile read_abilities_json(const fs::path& path) {
  const json j = read_json_file(path);
  AbilityFile f;
  try {
    const json& arr = j.is_array() ? j : j.at("abilities");
    f.abilities.values = arr.get<std::vector<double>>();
    if (j.is_object() && j.contains("learner_ids"))
      f.learner_ids = j["learner_ids"].get<std::vector<std::string>>();
    if (j.is_object()) f.abilities.normalized = j.value("normalized", j.contains("loglik"));
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  if (!f.learner_ids.empty() && f.learner_ids.size() != f.abilities.size())
    throw ShapeError(path.string() + ": learner_ids and abilities differ in length");
  return f;
}

json read_json_file(const fs::path& path) {
  auto in = open_in(path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_json_file(const fs::path& path, const json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

void write_text_file(const fs::path& path, const std::string& text) {
  auto out = open_out(path);
  out << text;
  finish(out, path);
}

}  // namespace irtimpute
