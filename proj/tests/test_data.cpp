#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include "genadapt/data.hpp"
#include "genadapt/errors.hpp"
#include "genadapt/wav.hpp"
#include "test_util.hpp"

using namespace genadapt;
using data::Manifest;
using data::Utterance;

namespace {

Manifest tiny_manifest() {
  Manifest m;
  for (int i = 0; i < 4; ++i) {
    Utterance u;
    u.id = "u" + std::to_string(i);
    u.audio = "wav/u" + std::to_string(i) + ".wav";
    u.text = i % 2 == 0 ? "ab" : "ba";
    u.speaker = i < 2 ? "spkM0" : "spkF0";
    u.gender = i < 2 ? 'M' : 'F';
    m.utts.push_back(u);
  }
  return m;
}

// classify a waveform's modulation rate by comparing envelope spectral energy
// in the two F0 bands; the oracle for the toy corpus gender signal
char classify_gender(const features::Waveform& w) {
  std::vector<double> env(w.samples.size());
  for (std::size_t i = 0; i < env.size(); ++i) env[i] = std::abs(w.samples[i]);
  double mean = 0.0;
  for (double e : env) mean += e;
  mean /= static_cast<double>(env.size());
  for (double& e : env) e -= mean;
  auto band_energy = [&](double lo, double hi) {
    double acc = 0.0;
    for (double f = lo; f <= hi; f += 2.0) {
      double re = 0.0, im = 0.0;
      for (std::size_t i = 0; i < env.size(); ++i) {
        const double ang = 2.0 * std::numbers::pi * f * static_cast<double>(i) /
                           static_cast<double>(w.sample_rate);
        re += env[i] * std::cos(ang);
        im -= env[i] * std::sin(ang);
      }
      acc += re * re + im * im;
    }
    return acc;
  };
  // per-speaker offsets stay within +-8 Hz of 120 / 220
  return band_energy(108, 132) > band_energy(208, 232) ? 'M' : 'F';
}

}  // namespace

TEST_CASE("manifest load: empty file, valid lines, errors with line numbers") {
  testutil::TempDir tmp("manifest");
  {
    std::ofstream(tmp.path() / "empty.jsonl");
    Manifest m = data::load_manifest(tmp.path() / "empty.jsonl");
    CHECK(m.utts.empty());
  }
  {
    std::ofstream f(tmp.path() / "ok.jsonl");
    f << R"({"id":"a","audio":"a.wav","text":"hi","speaker":"s1","gender":"M"})" << "\n";
    f << R"({"id":"b","audio":"b.wav","text":"yo","speaker":"s1","gender":"F","accent":"zh"})"
      << "\n";
    f << R"({"id":"c","audio":"c.wav","text":"ok","speaker":"s2","gender":"M"})" << "\n";
  }
  Manifest m = data::load_manifest(tmp.path() / "ok.jsonl");
  REQUIRE(m.utts.size() == 3);
  CHECK(m.utts[0].id == "a");
  CHECK(m.utts[1].accent.value() == "zh");

  {
    std::ofstream f(tmp.path() / "dup.jsonl");
    for (int i = 1; i <= 6; ++i)
      f << R"({"id":"u)" << i << R"(","audio":"x.wav","text":"t","speaker":"s","gender":"M"})"
        << "\n";
    f << R"({"id":"u3","audio":"x.wav","text":"t","speaker":"s","gender":"M"})" << "\n";
  }
  try {
    data::load_manifest(tmp.path() / "dup.jsonl");
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("line 7") != std::string::npos);
  }
  {
    std::ofstream f(tmp.path() / "gender.jsonl");
    f << R"({"id":"a","audio":"x.wav","text":"t","speaker":"s","gender":"X"})" << "\n";
  }
  CHECK_THROWS_AS(data::load_manifest(tmp.path() / "gender.jsonl"), ValidationError);
}

TEST_CASE("filter_gender partitions and preserves order") {
  Manifest m = tiny_manifest();
  Manifest males = data::filter_gender(m, 'M');
  Manifest females = data::filter_gender(m, 'F');
  CHECK(males.size() + females.size() == m.size());
  CHECK(males.utts[0].id == "u0");
  CHECK(males.utts[1].id == "u1");
  Manifest none = data::filter_gender(males, 'F');
  CHECK(none.utts.empty());
}

TEST_CASE("split_train_dev: ratio, determinism, partition") {
  Manifest m;
  for (int i = 0; i < 10; ++i) {
    Utterance u;
    u.id = "u" + std::to_string(i);
    u.audio = "a.wav";
    u.text = "t";
    u.speaker = "solo";
    u.gender = 'M';
    m.utts.push_back(u);
  }
  auto [train, dev] = data::split_train_dev(m, 0.9, 11);
  CHECK(train.size() == 9);
  CHECK(dev.size() == 1);

  auto [train2, dev2] = data::split_train_dev(m, 0.9, 11);
  CHECK(train2.utts.size() == train.utts.size());
  for (std::size_t i = 0; i < train.utts.size(); ++i)
    CHECK(train2.utts[i].id == train.utts[i].id);

  std::set<std::string> all;
  for (const auto& u : train.utts) all.insert(u.id);
  for (const auto& u : dev.utts) {
    CHECK(all.insert(u.id).second);  // disjoint
  }
  CHECK(all.size() == m.size());  // union

  CHECK_THROWS_AS(data::split_train_dev(m, 1.0, 1), ContractError);
}

TEST_CASE("a single-utterance speaker lands in train") {
  Manifest m = tiny_manifest();
  Utterance lone;
  lone.id = "lone";
  lone.audio = "a.wav";
  lone.text = "x";
  lone.speaker = "hermit";
  lone.gender = 'F';
  m.utts.push_back(lone);
  auto [train, dev] = data::split_train_dev(m, 0.5, 3);
  bool in_train = false;
  for (const auto& u : train.utts) in_train = in_train || u.id == "lone";
  CHECK(in_train);
  for (const auto& u : dev.utts) CHECK(u.id != "lone");
}

TEST_CASE("vocab: inventory, order independence, blank at 0") {
  Manifest m = tiny_manifest();
  data::Vocab v = data::Vocab::build(m);
  CHECK(v.size() == 4);  // blank, sos/eos, a, b
  CHECK(v.symbols()[0] == "<blank>");
  CHECK(v.symbols()[1] == "<sos/eos>");

  Manifest reversed = m;
  std::reverse(reversed.utts.begin(), reversed.utts.end());
  CHECK(data::Vocab::build(reversed).symbols() == v.symbols());

  ctc::LabelSequence seq = v.encode("AB");  // lowercased
  CHECK(seq.ids.size() == 2);
  CHECK(v.decode(seq) == "ab");
  CHECK_THROWS_AS(v.encode("z"), LookupError);

  Manifest empty;
  CHECK_THROWS_AS(data::Vocab::build(empty), ValidationError);
}

TEST_CASE("toy corpus: counts, determinism, acoustically recoverable gender") {
  testutil::TempDir tmp("toy");
  data::ToyCorpusSpec spec;
  spec.utts_per_speaker = 10;
  spec.seed = 7;
  Manifest m = data::synth_toy_corpus(spec, tmp.path() / "c1");
  CHECK(m.utts.size() == 40);  // 2+2 speakers x 10

  // same seed -> byte-identical corpus
  data::synth_toy_corpus(spec, tmp.path() / "c2");
  for (const Utterance& u : m.utts) {
    std::ifstream f1(tmp.path() / "c1" / u.audio, std::ios::binary);
    std::ifstream f2(tmp.path() / "c2" / u.audio, std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);
    CHECK(!b1.empty());
  }

  // the modulation-rate classifier recovers every gender tag
  int correct = 0;
  for (const Utterance& u : m.utts) {
    const features::Waveform w =
        features::read_wav(data::resolve_audio(tmp.path() / "c1" / "manifest.jsonl", u));
    if (classify_gender(w) == u.gender) ++correct;
  }
  CHECK(correct == 40);

  // manifest on disk loads back identically
  Manifest loaded = data::load_manifest(tmp.path() / "c1" / "manifest.jsonl");
  REQUIRE(loaded.size() == m.size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    CHECK(loaded.utts[i].id == m.utts[i].id);
    CHECK(loaded.utts[i].text == m.utts[i].text);
    CHECK(loaded.utts[i].gender == m.utts[i].gender);
  }
}

TEST_CASE("same-transcript male and female utterances differ acoustically") {
  data::ToyCorpusSpec spec;
  testutil::TempDir tmp("toy_gender");
  Manifest m = data::synth_toy_corpus(spec, tmp.path() / "c");
  // find a male and a female utterance and compare waveforms of equal text if
  // present; otherwise just check the classifier separates the first of each
  const Utterance* male = nullptr;
  const Utterance* female = nullptr;
  for (const Utterance& u : m.utts) {
    if (u.gender == 'M' && !male) male = &u;
    if (u.gender == 'F' && !female) female = &u;
  }
  REQUIRE(male);
  REQUIRE(female);
  const auto root = tmp.path() / "c" / "manifest.jsonl";
  CHECK(classify_gender(features::read_wav(data::resolve_audio(root, *male))) == 'M');
  CHECK(classify_gender(features::read_wav(data::resolve_audio(root, *female))) == 'F');
}

TEST_CASE("x-vector stub: deterministic, unit norm; file store validates size") {
  data::XVectorStore stub;
  XVector a = data::lookup_xvector("spk1", stub);
  XVector b = data::lookup_xvector("spk1", stub);
  XVector c = data::lookup_xvector("spk2", stub);
  CHECK(a.values == b.values);
  CHECK(a.values != c.values);
  CHECK(a.values.size() == 512);
  double norm = 0.0;
  for (double v : a.values) norm += v * v;
  CHECK(std::abs(std::sqrt(norm) - 1.0) < 1e-12);

  testutil::TempDir tmp("xv");
  data::XVectorStore files;
  files.mode = data::XVectorStore::Mode::directory;
  files.dir = tmp.path();
  {
    std::ofstream f(tmp.path() / "spk9.xv", std::ios::binary);
    std::vector<double> vals(512, 0.25);
    f.write(reinterpret_cast<const char*>(vals.data()), 512 * 8);
  }
  XVector loaded = data::lookup_xvector("spk9", files);
  CHECK(loaded.values.size() == 512);
  CHECK(loaded.source == XVector::Source::file);

  {
    std::ofstream f(tmp.path() / "short.xv", std::ios::binary);
    std::vector<double> vals(511, 0.25);
    f.write(reinterpret_cast<const char*>(vals.data()), 511 * 8);
  }
  CHECK_THROWS_AS(data::lookup_xvector("short", files), FormatError);
  CHECK_THROWS_AS(data::lookup_xvector("absent", files), LookupError);
}
