#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "genadapt/ctc.hpp"
#include "genadapt/xvector.hpp"

namespace genadapt::data {

struct Utterance {
  std::string id;
  std::string audio;  // path, relative to the manifest's directory unless absolute
  std::string text;
  std::string speaker;
  char gender = '?';  // 'M' or 'F'
  std::optional<std::string> accent;
};

struct Manifest {
  std::vector<Utterance> utts;
  std::string source;

  std::size_t size() const { return utts.size(); }
};

Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const Manifest& m, const std::filesystem::path& path);
std::string manifest_fingerprint(const Manifest& m);

// resolve an utterance's audio path against the manifest location
std::filesystem::path resolve_audio(const std::filesystem::path& manifest_path,
                                    const Utterance& u);

Manifest filter_gender(const Manifest& m, char gender);

// per-speaker stratified: floor(ratio * n) of each speaker's utterances to
// train after a seeded shuffle; single-utterance speakers go to train with a
// warning on stderr
std::pair<Manifest, Manifest> split_train_dev(const Manifest& m, double ratio,
                                              std::uint64_t seed);

// index 0 = blank, 1 = sos/eos, then the character inventory sorted
class Vocab {
 public:
  static Vocab build(const Manifest& m);
  static Vocab from_symbols(std::vector<std::string> symbols);

  std::size_t size() const { return symbols_.size(); }
  const std::vector<std::string>& symbols() const { return symbols_; }
  int sos_eos_id() const { return 1; }

  ctc::LabelSequence encode(const std::string& text) const;
  std::string decode(const ctc::LabelSequence& seq) const;

 private:
  std::vector<std::string> symbols_;
  std::map<char, int> char_to_id_;
};

struct ToyCorpusSpec {
  int speakers_per_gender = 2;
  int utts_per_speaker = 25;
  std::string alphabet = "abcdef";  // subset of lowercase letters + space
  int min_len = 3;
  int max_len = 8;
  int sample_rate = 16000;
  std::uint64_t seed = 42;
  double male_f0 = 120.0;
  double female_f0 = 220.0;

  void validate() const;
};

// Synthesizes per-character tone bursts whose amplitude modulation rate is the
// speaker's F0, writes <out_dir>/wav/*.wav and <out_dir>/manifest.jsonl, and
// returns the manifest. Identical spec -> byte-identical corpus.
Manifest synth_toy_corpus(const ToyCorpusSpec& spec, const std::filesystem::path& out_dir);

struct XVectorStore {
  enum class Mode { stub, directory } mode = Mode::stub;
  std::filesystem::path dir;  // directory mode: <speaker>.xv files
  std::size_t dim = 512;
};

XVector lookup_xvector(const std::string& speaker, const XVectorStore& store);

}  // namespace genadapt::data
