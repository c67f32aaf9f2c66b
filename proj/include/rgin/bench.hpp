#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "rgin/model.hpp"
#include "rgin/synth.hpp"

namespace rgin {

struct LatencyStats {
  std::size_t n = 0;
  double mean = 0, median = 0, p95 = 0, stddev = 0;
  double ci95 = 0;  // half-width of the normal-approximation interval for the mean

  static LatencyStats from(std::vector<double> xs) {
    if (xs.empty()) throw std::invalid_argument("latency statistics need at least one sample");
    LatencyStats s;
    s.n = xs.size();
    std::sort(xs.begin(), xs.end());
    s.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / double(s.n);
    s.median = s.n % 2 ? xs[s.n / 2] : 0.5 * (xs[s.n / 2 - 1] + xs[s.n / 2]);
    s.p95 = xs[std::min(s.n - 1, static_cast<std::size_t>(std::ceil(0.95 * double(s.n))) - 1)];
    double ss = 0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.stddev = s.n > 1 ? std::sqrt(ss / double(s.n - 1)) : 0.0;
    s.ci95 = 1.96 * s.stddev / std::sqrt(double(s.n));
    return s;
  }
};

struct BenchReport {
  std::string mode;
  std::size_t iterations = 0, warmup = 0, threads = 1;
  LatencyStats latency_ms;
  double fps = 0;  // passes per second: 1/mean in single mode, aggregate throughput in parallel mode
};

/// One-sample input built from a rendered synthetic scene.
template <class T>
Batch<T> bench_input(std::size_t image_size, std::uint64_t seed = 3) {
  if (image_size != static_cast<std::size_t>(synth::kCanvas))
    throw std::invalid_argument("bench_input: only the native canvas size is supported");
  auto scene = synth::generate_scene(seed, synth::TemplateMix{});
  auto px = synth::render(scene);
  std::vector<T> img(px.size());
  synth::to_unit_range(px, img.data());
  Batch<T> b;
  b.images = Tensor<T>({1, image_size, image_size, 3}, std::move(img));
  b.tokens = {tokenize(scene.expression, synth::make_vocabulary()).ids};
  return b;
}

/// Times eval-mode forward passes. Single mode runs them back to back on one thread;
/// parallel mode splits the passes across `threads` workers sharing the model.
template <class T>
BenchReport benchmark(RealGin<T>& model, const Batch<T>& input, std::size_t iterations, std::size_t warmup,
                      const std::string& mode = "single", unsigned threads = 1) {
  if (iterations == 0) throw std::invalid_argument("bench: iterations must be positive");
  if (mode != "single" && mode != "parallel") throw std::invalid_argument("bench: unknown mode '" + mode + "'");
  model.set_mode(Mode::Eval);
  using clock = std::chrono::steady_clock;
  auto pass = [&]() {
    Tape<T> tape(false, false);
    auto r = model.forward(tape, input);
    volatile T sink = r.raw[0];
    (void)sink;
  };
  for (std::size_t i = 0; i < warmup; ++i) pass();

  BenchReport rep;
  rep.mode = mode;
  rep.iterations = iterations;
  rep.warmup = warmup;
  std::vector<double> lat;
  if (mode == "single") {
    for (std::size_t i = 0; i < iterations; ++i) {
      auto t0 = clock::now();
      pass();
      lat.push_back(std::chrono::duration<double, std::milli>(clock::now() - t0).count());
    }
    rep.latency_ms = LatencyStats::from(lat);
    rep.fps = 1000.0 / rep.latency_ms.mean;
    return rep;
  }
  threads = std::max(1u, threads);
  rep.threads = threads;
  std::vector<std::vector<double>> per(threads);
  std::vector<std::thread> pool;
  auto w0 = clock::now();
  for (unsigned t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      for (std::size_t i = t; i < iterations; i += threads) {
        auto t0 = clock::now();
        pass();
        per[t].push_back(std::chrono::duration<double, std::milli>(clock::now() - t0).count());
      }
    });
  for (auto& th : pool) th.join();
  const double wall = std::chrono::duration<double>(clock::now() - w0).count();
  for (auto& v : per) lat.insert(lat.end(), v.begin(), v.end());
  rep.latency_ms = LatencyStats::from(lat);
  rep.fps = double(iterations) / wall;
  return rep;
}

}  // namespace rgin
