#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "irtimpute/core_model.hpp"
#include "irtimpute/designs.hpp"
#include "irtimpute/estimation.hpp"
#include "json.hpp"

namespace irtimpute {

// Score CSV:
//   # K=5                      (optional)
//   learner_id,item_1,item_2   (header)
//   1,3,-1                     (one row per learner, -1 = missing)
// K comes from `k_override`, else the comment line, else the largest
// observed score (at least 2).
ScoreMatrix parse_score_csv(std::istream& in, std::optional<int> k_override = std::nullopt,
                            const std::string& source = "<input>");
ScoreMatrix read_score_csv(const std::filesystem::path& path,
                           std::optional<int> k_override = std::nullopt);
void write_score_csv(std::ostream& out, const ScoreMatrix& scores);
void write_score_csv(const std::filesystem::path& path, const ScoreMatrix& scores);

// Mask CSV: same header, 1 = observed, 0 = missing.
void write_mask_csv(std::ostream& out, const MissingDesign& design,
                    const std::vector<std::string>& item_ids,
                    const std::vector<std::string>& learner_ids);
void write_mask_csv(const std::filesystem::path& path, const MissingDesign& design,
                    const std::vector<std::string>& item_ids,
                    const std::vector<std::string>& learner_ids);
MissingDesign read_mask_csv(const std::filesystem::path& path);

// Directory of <item_id>.json files:
//   {item_id, prompt, rubric, reference_answer, answers: {learner_id: text}}
// Items and learners are placed by the ids of `scores`; answers for
// unknown learners are rejected.
AnswerCorpus read_corpus_dir(const std::filesystem::path& dir, const ScoreMatrix& scores);
void write_corpus_dir(const std::filesystem::path& dir, const AnswerCorpus& corpus);

nlohmann::json params_to_json(const std::vector<GpcmItemParams>& items,
                              const std::vector<std::string>& item_ids);
std::vector<GpcmItemParams> params_from_json(const nlohmann::json& j);

nlohmann::json fit_to_json(const FitResult& fit, const ScoreMatrix& scores);

nlohmann::json abilities_to_json(const AbilitySet& abilities,
                                 const std::vector<std::string>& learner_ids);

struct AbilityFile {
  std::vector<std::string> learner_ids;  // empty if the file has none
  AbilitySet abilities;
};
// Reads the "abilities" array of an abilities or fit JSON file.
AbilityFile read_abilities_json(const std::filesystem::path& path);

nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace irtimpute
