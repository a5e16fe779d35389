#include "genadapt/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "genadapt/errors.hpp"
#include "genadapt/kernels.hpp"

namespace genadapt::eval {

using nlohmann::json;

ErrorCounts& ErrorCounts::operator+=(const ErrorCounts& o) {
  substitutions += o.substitutions;
  deletions += o.deletions;
  insertions += o.insertions;
  ref_len += o.ref_len;
  return *this;
}

std::string dimension_name(GroupDimension d) {
  switch (d) {
    case GroupDimension::gender: return "gender";
    case GroupDimension::speaker: return "speaker";
    case GroupDimension::accent: return "accent";
  }
  return "?";
}

GroupDimension parse_dimension(const std::string& s) {
  if (s == "gender") return GroupDimension::gender;
  if (s == "speaker") return GroupDimension::speaker;
  if (s == "accent") return GroupDimension::accent;
  throw ValidationError("eval: unknown group dimension '" + s + "'");
}

std::vector<std::string> tokenize(const std::string& text, bool char_level) {
  std::string lower;
  lower.reserve(text.size());
  for (char c : text) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  std::vector<std::string> out;
  if (char_level) {
    for (char c : lower) out.emplace_back(1, c);
    return out;
  }
  std::istringstream is(lower);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

ErrorCounts edit_distance(const std::vector<std::string>& ref,
                          const std::vector<std::string>& hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<std::size_t> d((n + 1) * (m + 1));
  auto cell = [&](std::size_t i, std::size_t j) -> std::size_t& {
    return d[i * (m + 1) + j];
  };
  for (std::size_t i = 0; i <= n; ++i) cell(i, 0) = i;
  for (std::size_t j = 0; j <= m; ++j) cell(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t sub = cell(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      const std::size_t ins = cell(i, j - 1) + 1;
      const std::size_t del = cell(i - 1, j) + 1;
      cell(i, j) = std::min({sub, ins, del});
    }
  }
  ErrorCounts c;
  c.ref_len = n;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    const std::size_t cur = cell(i, j);
    if (i > 0 && j > 0 && cur == cell(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1)) {
      if (ref[i - 1] != hyp[j - 1]) ++c.substitutions;
      --i;
      --j;
    } else if (j > 0 && cur == cell(i, j - 1) + 1) {
      ++c.insertions;
      --j;
    } else {
      ++c.deletions;
      --i;
    }
  }
  return c;
}

std::pair<double, ErrorCounts> wer(const std::vector<ScoredPair>& pairs, bool char_level) {
  if (pairs.empty()) throw ContractError("wer: need at least one pair");
  std::vector<ErrorCounts> per(pairs.size());
  kernels::parallel_for(pairs.size(), [&](std::size_t i) {
    per[i] = edit_distance(tokenize(pairs[i].ref, char_level),
                           tokenize(pairs[i].hyp, char_level));
  });
  ErrorCounts total;
  for (const ErrorCounts& c : per) total += c;
  if (total.ref_len == 0)
    throw ContractError("wer: all references empty, rate undefined");
  return {static_cast<double>(total.total()) / static_cast<double>(total.ref_len), total};
}

WerReport grouped_report(const std::vector<ScoredPair>& pairs,
                         const std::map<std::string, std::string>& id_to_group,
                         GroupDimension dimension, bool char_level) {
  WerReport report;
  report.dimension = dimension;
  std::map<std::string, std::vector<ScoredPair>> by_group;
  for (const ScoredPair& p : pairs) {
    auto it = id_to_group.find(p.id);
    if (it == id_to_group.end())
      throw LookupError("eval: utterance id '" + p.id + "' not in manifest");
    by_group[it->second].push_back(p);
  }
  auto [overall_rate, overall_counts] = wer(pairs, char_level);
  report.overall = {overall_counts, overall_rate};
  for (const auto& [key, group_pairs] : by_group) {
    auto [rate, counts] = wer(group_pairs, char_level);
    report.groups.emplace(key, GroupStats{counts, rate});
  }
  return report;
}

namespace {

std::string pct(double rate) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(1) << rate * 100.0;
  return os.str();
}

}  // namespace

std::string render_table(const std::map<std::string, WerReport>& reports) {
  if (reports.empty()) throw ContractError("render_table: no reports");
  const GroupDimension dim = reports.begin()->second.dimension;
  std::vector<std::string> group_keys;
  for (const auto& [name, r] : reports) {
    if (r.dimension != dim)
      throw ContractError("render_table: reports mix group dimensions");
    for (const auto& [key, stats] : r.groups)
      if (std::find(group_keys.begin(), group_keys.end(), key) == group_keys.end())
        group_keys.push_back(key);
  }
  std::sort(group_keys.begin(), group_keys.end());
  std::vector<std::string> cols = group_keys;
  cols.push_back("Full");

  std::size_t name_w = std::string("model").size();
  for (const auto& [name, r] : reports) name_w = std::max(name_w, name.size());
  std::vector<std::size_t> col_w(cols.size());
  for (std::size_t c = 0; c < cols.size(); ++c) col_w[c] = std::max<std::size_t>(cols[c].size(), 5);

  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(name_w)) << "model";
  for (std::size_t c = 0; c < cols.size(); ++c)
    os << "  " << std::right << std::setw(static_cast<int>(col_w[c])) << cols[c];
  os << "\n";
  for (const auto& [name, r] : reports) {
    os << std::left << std::setw(static_cast<int>(name_w)) << name;
    for (std::size_t c = 0; c < cols.size(); ++c) {
      std::string cell = "-";
      if (cols[c] == "Full") {
        cell = pct(r.overall.rate);
      } else if (auto it = r.groups.find(cols[c]); it != r.groups.end()) {
        cell = pct(it->second.rate);
      }
      os << "  " << std::right << std::setw(static_cast<int>(col_w[c])) << cell;
    }
    os << "\n";
  }
  return os.str();
}

namespace {

json counts_to_json(const GroupStats& g) {
  return json{{"S", g.counts.substitutions},
              {"D", g.counts.deletions},
              {"I", g.counts.insertions},
              {"N", g.counts.ref_len},
              {"rate", g.rate}};
}

GroupStats counts_from_json(const json& j) {
  GroupStats g;
  g.counts.substitutions = j.at("S").get<std::size_t>();
  g.counts.deletions = j.at("D").get<std::size_t>();
  g.counts.insertions = j.at("I").get<std::size_t>();
  g.counts.ref_len = j.at("N").get<std::size_t>();
  g.rate = j.at("rate").get<double>();
  return g;
}

}  // namespace

std::string report_to_json(const WerReport& r) {
  json groups = json::object();
  for (const auto& [key, stats] : r.groups) groups[key] = counts_to_json(stats);
  json j{{"model", r.model},
         {"dimension", dimension_name(r.dimension)},
         {"overall", counts_to_json(r.overall)},
         {"groups", groups}};
  return j.dump(2);
}

WerReport report_from_json(const std::string& json_text) {
  json j = json::parse(json_text);
  WerReport r;
  r.model = j.at("model").get<std::string>();
  r.dimension = parse_dimension(j.at("dimension").get<std::string>());
  r.overall = counts_from_json(j.at("overall"));
  for (const auto& [key, val] : j.at("groups").items())
    r.groups.emplace(key, counts_from_json(val));
  return r;
}

void write_hyp_file(const std::filesystem::path& path,
                    const std::vector<ScoredPair>& pairs) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("eval: cannot write " + path.string());
  for (const ScoredPair& p : pairs)
    out << json{{"id", p.id}, {"hyp", p.hyp}}.dump() << "\n";
}

std::map<std::string, std::string> read_hyp_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("eval: cannot open " + path.string());
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw FormatError("hyp file line " + std::to_string(lineno) + ": " + e.what());
    }
    out[j.at("id").get<std::string>()] = j.at("hyp").get<std::string>();
  }
  return out;
}

}  // namespace genadapt::eval
