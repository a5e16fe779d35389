#include "genadapt/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numbers>
#include <set>
#include <sstream>

#include <json.hpp>

#include "genadapt/errors.hpp"
#include "genadapt/rng.hpp"
#include "genadapt/wav.hpp"

namespace genadapt::data {

using nlohmann::json;

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("manifest: cannot open " + path.string());
  Manifest m;
  m.source = path.string();
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ValidationError("manifest line " + std::to_string(lineno) + ": " + e.what());
    }
    auto field = [&](const char* name) -> std::string {
      if (!j.contains(name) || !j[name].is_string())
        throw ValidationError("manifest line " + std::to_string(lineno) +
                              ": missing field '" + name + "'");
      return j[name].get<std::string>();
    };
    Utterance u;
    u.id = field("id");
    u.audio = field("audio");
    u.text = field("text");
    u.speaker = field("speaker");
    const std::string g = field("gender");
    if (g != "M" && g != "F")
      throw ValidationError("manifest line " + std::to_string(lineno) +
                            ": gender '" + g + "' is not M or F");
    u.gender = g[0];
    if (j.contains("accent")) u.accent = j["accent"].get<std::string>();
    if (u.text.empty())
      throw ValidationError("manifest line " + std::to_string(lineno) + ": empty text");
    if (!seen.insert(u.id).second)
      throw ValidationError("manifest line " + std::to_string(lineno) +
                            ": duplicate id '" + u.id + "'");
    m.utts.push_back(std::move(u));
  }
  return m;
}

void save_manifest(const Manifest& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("manifest: cannot write " + path.string());
  for (const Utterance& u : m.utts) {
    json j{{"id", u.id},
           {"audio", u.audio},
           {"text", u.text},
           {"speaker", u.speaker},
           {"gender", std::string(1, u.gender)}};
    if (u.accent) j["accent"] = *u.accent;
    out << j.dump() << "\n";
  }
  if (!out) throw IoError("manifest: short write to " + path.string());
}

std::string manifest_fingerprint(const Manifest& m) {
  std::ostringstream os;
  for (const Utterance& u : m.utts)
    os << u.id << '\x1f' << u.text << '\x1f' << u.speaker << '\x1f' << u.gender << '\x1e';
  std::ostringstream hex;
  hex << std::hex << fnv1a64(os.str());
  return hex.str();
}

std::filesystem::path resolve_audio(const std::filesystem::path& manifest_path,
                                    const Utterance& u) {
  std::filesystem::path p(u.audio);
  if (p.is_absolute()) return p;
  return manifest_path.parent_path() / p;
}

Manifest filter_gender(const Manifest& m, char gender) {
  if (gender != 'M' && gender != 'F')
    throw ContractError("filter_gender: gender must be M or F");
  Manifest out;
  out.source = m.source;
  for (const Utterance& u : m.utts)
    if (u.gender == gender) out.utts.push_back(u);
  return out;
}

std::pair<Manifest, Manifest> split_train_dev(const Manifest& m, double ratio,
                                              std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0))
    throw ContractError("split_train_dev: ratio must be in (0,1)");
  // speaker -> indices in manifest order
  std::map<std::string, std::vector<std::size_t>> by_speaker;
  for (std::size_t i = 0; i < m.utts.size(); ++i)
    by_speaker[m.utts[i].speaker].push_back(i);
  std::vector<char> to_train(m.utts.size(), 0);
  for (auto& [speaker, idxs] : by_speaker) {
    if (idxs.size() == 1) {
      std::cerr << "split: speaker '" << speaker
                << "' has a single utterance; assigning it to train\n";
      to_train[idxs[0]] = 1;
      continue;
    }
    std::vector<std::size_t> shuffled = idxs;
    Rng rng(mix_seed(seed, "split:" + speaker));
    rng.shuffle(shuffled);
    const std::size_t n_train =
        static_cast<std::size_t>(std::floor(ratio * static_cast<double>(idxs.size())));
    for (std::size_t i = 0; i < n_train; ++i) to_train[shuffled[i]] = 1;
  }
  Manifest train, dev;
  train.source = m.source + "#train";
  dev.source = m.source + "#dev";
  for (std::size_t i = 0; i < m.utts.size(); ++i)
    (to_train[i] ? train : dev).utts.push_back(m.utts[i]);
  return {std::move(train), std::move(dev)};
}

Vocab Vocab::build(const Manifest& m) {
  if (m.utts.empty()) throw ValidationError("vocab: empty manifest");
  std::set<char> chars;
  for (const Utterance& u : m.utts)
    for (char c : u.text)
      chars.insert(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  std::vector<std::string> symbols{"<blank>", "<sos/eos>"};
  for (char c : chars) symbols.emplace_back(1, c);
  return from_symbols(std::move(symbols));
}

Vocab Vocab::from_symbols(std::vector<std::string> symbols) {
  if (symbols.size() < 2 || symbols[0] != "<blank>" || symbols[1] != "<sos/eos>")
    throw ValidationError("vocab: symbol table must start with <blank>, <sos/eos>");
  Vocab v;
  v.symbols_ = std::move(symbols);
  for (std::size_t i = 2; i < v.symbols_.size(); ++i) {
    if (v.symbols_[i].size() != 1)
      throw ValidationError("vocab: non-character symbol '" + v.symbols_[i] + "'");
    if (!v.char_to_id_.emplace(v.symbols_[i][0], static_cast<int>(i)).second)
      throw ValidationError("vocab: duplicate symbol '" + v.symbols_[i] + "'");
  }
  return v;
}

ctc::LabelSequence Vocab::encode(const std::string& text) const {
  ctc::LabelSequence seq;
  for (char raw : text) {
    const char c = static_cast<char>(std::tolower(static_cast<unsigned char>(raw)));
    auto it = char_to_id_.find(c);
    if (it == char_to_id_.end())
      throw LookupError("vocab: character '" + std::string(1, c) + "' not in vocabulary");
    seq.ids.push_back(it->second);
  }
  return seq;
}

std::string Vocab::decode(const ctc::LabelSequence& seq) const {
  std::string out;
  for (int id : seq.ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= symbols_.size())
      throw LookupError("vocab: id " + std::to_string(id) + " out of range");
    if (id <= 1) continue;  // blank / sos-eos render as nothing
    out += symbols_[static_cast<std::size_t>(id)];
  }
  return out;
}

void ToyCorpusSpec::validate() const {
  if (speakers_per_gender < 1 || utts_per_speaker < 1)
    throw ValidationError("toy corpus: speaker and utterance counts must be positive");
  if (alphabet.empty()) throw ValidationError("toy corpus: empty alphabet");
  std::set<char> seen;
  for (char c : alphabet) {
    if (!(c == ' ' || (c >= 'a' && c <= 'z')))
      throw ValidationError("toy corpus: alphabet must be lowercase letters or space");
    if (!seen.insert(c).second)
      throw ValidationError("toy corpus: duplicate alphabet character");
  }
  if (min_len < 1 || max_len < min_len)
    throw ValidationError("toy corpus: need 1 <= min_len <= max_len");
  if (sample_rate < 8000) throw ValidationError("toy corpus: sample_rate too low");
}

namespace {

// one 80 ms tone burst per character, carrier by character rank, envelope at
// the speaker's effective F0
std::vector<double> synth_utterance(const std::string& text, const std::string& alphabet,
                                    double f0, int sample_rate) {
  constexpr double kBurstSec = 0.080;
  const std::size_t burst = static_cast<std::size_t>(std::lround(kBurstSec * sample_rate));
  std::vector<double> samples;
  samples.reserve(burst * text.size());
  for (char c : text) {
    const std::size_t rank = alphabet.find(c);
    const double carrier = 500.0 + 150.0 * static_cast<double>(rank);
    for (std::size_t i = 0; i < burst; ++i) {
      // envelope phase runs over the whole utterance so the modulation rate
      // is unbroken across bursts
      const double t = static_cast<double>(samples.size()) / sample_rate;
      const double env = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * f0 * t);
      const double tone =
          std::sin(2.0 * std::numbers::pi * carrier * static_cast<double>(i) / sample_rate);
      samples.push_back(0.6 * env * tone);
    }
  }
  return samples;
}

std::string random_transcript(Rng& rng, const ToyCorpusSpec& spec) {
  const std::size_t len =
      static_cast<std::size_t>(spec.min_len) +
      rng.randint(static_cast<std::uint64_t>(spec.max_len - spec.min_len + 1));
  std::string text;
  while (text.size() < len) {
    char c = spec.alphabet[rng.randint(spec.alphabet.size())];
    // no leading/trailing/doubled spaces
    if (c == ' ' && (text.empty() || text.back() == ' ' || text.size() + 1 == len)) continue;
    text.push_back(c);
  }
  return text;
}

}  // namespace

Manifest synth_toy_corpus(const ToyCorpusSpec& spec, const std::filesystem::path& out_dir) {
  spec.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "wav", ec);
  if (ec) throw IoError("toy corpus: cannot create " + (out_dir / "wav").string());

  Manifest m;
  m.source = (out_dir / "manifest.jsonl").string();
  for (char gender : {'M', 'F'}) {
    const double base_f0 = gender == 'M' ? spec.male_f0 : spec.female_f0;
    for (int s = 0; s < spec.speakers_per_gender; ++s) {
      const std::string speaker =
          std::string("spk") + gender + std::to_string(s);
      Rng spk_rng(mix_seed(spec.seed, "speaker:" + speaker));
      const double f0 = base_f0 + spk_rng.uniform(-8.0, 8.0);
      for (int u = 0; u < spec.utts_per_speaker; ++u) {
        Rng utt_rng(mix_seed(spec.seed, "utt:" + speaker + ":" + std::to_string(u)));
        Utterance utt;
        utt.id = speaker + "_" + std::to_string(u);
        utt.audio = "wav/" + utt.id + ".wav";
        utt.text = random_transcript(utt_rng, spec);
        utt.speaker = speaker;
        utt.gender = gender;
        features::Waveform w;
        w.sample_rate = spec.sample_rate;
        w.samples = synth_utterance(utt.text, spec.alphabet, f0, spec.sample_rate);
        features::write_wav(out_dir / utt.audio, w);
        m.utts.push_back(std::move(utt));
      }
    }
  }
  save_manifest(m, out_dir / "manifest.jsonl");
  return m;
}

XVector lookup_xvector(const std::string& speaker, const XVectorStore& store) {
  XVector xv;
  xv.speaker = speaker;
  if (store.mode == XVectorStore::Mode::stub) {
    xv.source = XVector::Source::stub;
    Rng rng(mix_seed(0x9a7e5u, "xvector:" + speaker));
    xv.values.resize(store.dim);
    double norm = 0.0;
    for (double& v : xv.values) {
      v = rng.normal();
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : xv.values) v /= norm;
    return xv;
  }
  const std::filesystem::path file = store.dir / (speaker + ".xv");
  std::ifstream in(file, std::ios::binary);
  if (!in) throw LookupError("xvector: no file for speaker '" + speaker + "' at " +
                             file.string());
  in.seekg(0, std::ios::end);
  const std::streamoff bytes = in.tellg();
  in.seekg(0);
  if (bytes != static_cast<std::streamoff>(store.dim * sizeof(double)))
    throw FormatError("xvector: " + file.string() + " holds " +
                      std::to_string(bytes / 8) + " values, expected " +
                      std::to_string(store.dim));
  xv.source = XVector::Source::file;
  xv.values.resize(store.dim);
  in.read(reinterpret_cast<char*>(xv.values.data()), bytes);
  if (!in) throw FormatError("xvector: short read from " + file.string());
  for (double v : xv.values)
    if (!std::isfinite(v)) throw FormatError("xvector: non-finite value in " + file.string());
  return xv;
}

}  // namespace genadapt::data
