// Times the serial reference kernels against the OpenMP ones on the shapes
// this toolkit actually runs: dense matmul, fbank extraction, batched
// forward/backward, and a WER sweep. Results are checked for bit-equality
// while timing, so the benchmark doubles as a consistency probe.

#include <chrono>
#include <cstring>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include "genadapt/eval.hpp"
#include "genadapt/features.hpp"
#include "genadapt/kernels.hpp"
#include "genadapt/model.hpp"
#include "genadapt/rng.hpp"

using namespace genadapt;

namespace {

double time_once(const std::function<void()>& fn) {
  const auto start = std::chrono::steady_clock::now();
  fn();
  const auto stop = std::chrono::steady_clock::now();
  return std::chrono::duration<double>(stop - start).count();
}

double time_best_of(int reps, const std::function<void()>& fn) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) best = std::min(best, time_once(fn));
  return best;
}

struct Row {
  std::string name;
  double serial_s;
  double parallel_s;
  bool identical;
};

void print_rows(const std::vector<Row>& rows) {
  std::cout << std::left << std::setw(28) << "kernel" << std::right << std::setw(12)
            << "serial" << std::setw(12) << "openmp" << std::setw(10) << "speedup"
            << std::setw(8) << "equal" << "\n";
  for (const Row& r : rows) {
    std::cout << std::left << std::setw(28) << r.name << std::right << std::fixed
              << std::setprecision(4) << std::setw(11) << r.serial_s << "s"
              << std::setw(11) << r.parallel_s << "s" << std::setprecision(2)
              << std::setw(9) << r.serial_s / r.parallel_s << "x" << std::setw(8)
              << (r.identical ? "yes" : "NO") << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  bool quick = false;
  for (int i = 1; i < argc; ++i)
    if (std::string(argv[i]) == "--quick") quick = true;

  std::cout << "threads available: " << kernels::max_threads() << "\n";
  Rng rng(2024);
  std::vector<Row> rows;
  const int reps = quick ? 1 : 3;

  {
    const std::size_t n = quick ? 128 : 384;
    std::vector<double> a(n * n), b(n * n), c1(n * n), c2(n * n);
    for (double& x : a) x = rng.uniform(-1, 1);
    for (double& x : b) x = rng.uniform(-1, 1);
    const double ts = time_best_of(
        reps, [&] { kernels::matmul_serial(a.data(), b.data(), c1.data(), n, n, n); });
    const double tp = time_best_of(
        reps, [&] { kernels::matmul_parallel(a.data(), b.data(), c2.data(), n, n, n); });
    rows.push_back({"matmul " + std::to_string(n) + "^3", ts, tp,
                    std::memcmp(c1.data(), c2.data(), c1.size() * 8) == 0});
  }

  {
    features::Waveform w;
    w.sample_rate = 16000;
    w.samples.resize(quick ? 16000 : 16000 * 20);
    for (double& s : w.samples) s = rng.uniform(-0.4, 0.4);
    features::FeatureConfig cfg;
    features::FeatureMatrix f1, f2;
    kernels::set_exec_mode(kernels::ExecMode::serial);
    const double ts = time_best_of(reps, [&] { f1 = features::log_mel_fbank(w, cfg); });
    kernels::set_exec_mode(kernels::ExecMode::parallel);
    const double tp = time_best_of(reps, [&] { f2 = features::log_mel_fbank(w, cfg); });
    rows.push_back({"fbank " + std::to_string(w.samples.size() / 16000) + "s audio", ts,
                    tp, f1.data == f2.data});
  }

  {
    model::ModelConfig cfg;
    cfg.d_model = 64;
    cfg.n_heads = 4;
    cfg.enc_layers = 2;
    cfg.dec_layers = 2;
    cfg.ff_dim = 128;
    cfg.input_dim = 80;
    cfg.vocab_size = 8;
    cfg.xvector_dim = 64;
    auto params = model::init_params(cfg, 3);
    model::Batch batch;
    const std::size_t n_utts = quick ? 4 : 16;
    for (std::size_t i = 0; i < n_utts; ++i) {
      features::FeatureMatrix f;
      f.frames = 40;
      f.dim = 80;
      f.data.resize(f.frames * f.dim);
      for (double& v : f.data) v = rng.uniform(-1, 1);
      batch.push_back({"u" + std::to_string(i), std::move(f), {{2, 3, 4}}, std::nullopt});
    }
    model::GradMap g1, g2;
    kernels::set_exec_mode(kernels::ExecMode::serial);
    const double ts =
        time_best_of(reps, [&] { model::forward_loss(batch, cfg, params, &g1); });
    kernels::set_exec_mode(kernels::ExecMode::parallel);
    const double tp =
        time_best_of(reps, [&] { model::forward_loss(batch, cfg, params, &g2); });
    bool same = true;
    for (const auto& [key, g] : g1) same = same && g.bit_equal(g2.at(key));
    rows.push_back({"batch fwd/bwd " + std::to_string(n_utts) + " utts", ts, tp, same});
  }

  {
    const std::size_t pairs = quick ? 200 : 2000;
    std::vector<eval::ScoredPair> sp(pairs);
    const char* words[] = {"alpha", "beta", "gamma", "delta", "eps"};
    for (std::size_t i = 0; i < pairs; ++i) {
      std::string ref, hyp;
      for (int k = 0; k < 24; ++k) {
        ref += std::string(words[rng.randint(5)]) + " ";
        hyp += std::string(words[rng.randint(5)]) + " ";
      }
      sp[i] = {"u" + std::to_string(i), ref, hyp};
    }
    double r1 = 0, r2 = 0;
    kernels::set_exec_mode(kernels::ExecMode::serial);
    const double ts = time_best_of(reps, [&] { r1 = eval::wer(sp).first; });
    kernels::set_exec_mode(kernels::ExecMode::parallel);
    const double tp = time_best_of(reps, [&] { r2 = eval::wer(sp).first; });
    rows.push_back({"wer " + std::to_string(pairs) + " pairs", ts, tp, r1 == r2});
  }

  print_rows(rows);
  for (const Row& r : rows)
    if (!r.identical) {
      std::cerr << "serial/parallel mismatch in " << r.name << "\n";
      return 1;
    }
  return 0;
}
