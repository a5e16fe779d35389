#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace genadapt::eval {

struct ErrorCounts {
  std::size_t substitutions = 0;
  std::size_t deletions = 0;
  std::size_t insertions = 0;
  std::size_t ref_len = 0;

  std::size_t total() const { return substitutions + deletions + insertions; }
  ErrorCounts& operator+=(const ErrorCounts& o);
};

enum class GroupDimension { gender, speaker, accent };

std::string dimension_name(GroupDimension d);
GroupDimension parse_dimension(const std::string& s);

struct GroupStats {
  ErrorCounts counts;
  double rate = 0.0;
};

struct WerReport {
  std::string model;
  GroupDimension dimension = GroupDimension::gender;
  GroupStats overall;
  std::map<std::string, GroupStats> groups;
};

// whitespace tokens of the lowercased text; char_level keeps every character
// (spaces included) as its own token
std::vector<std::string> tokenize(const std::string& text, bool char_level = false);

// unit-cost Levenshtein with a single backtraced alignment; ties prefer
// substitution over insertion over deletion
ErrorCounts edit_distance(const std::vector<std::string>& ref,
                          const std::vector<std::string>& hyp);

struct ScoredPair {
  std::string id;
  std::string ref;
  std::string hyp;
};

// corpus-pooled rate: sum of errors over sum of reference tokens
std::pair<double, ErrorCounts> wer(const std::vector<ScoredPair>& pairs,
                                   bool char_level = false);

// group key per utterance id resolved by the caller (manifest lookup)
WerReport grouped_report(const std::vector<ScoredPair>& pairs,
                         const std::map<std::string, std::string>& id_to_group,
                         GroupDimension dimension, bool char_level = false);

std::string render_table(const std::map<std::string, WerReport>& reports);

std::string report_to_json(const WerReport& r);
WerReport report_from_json(const std::string& json_text);

// hypothesis JSON-lines: {"id": ..., "hyp": ...}
void write_hyp_file(const std::filesystem::path& path,
                    const std::vector<ScoredPair>& pairs);
std::map<std::string, std::string> read_hyp_file(const std::filesystem::path& path);

}  // namespace genadapt::eval
