// Copyright 2026 The promptts Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <benchmark/benchmark.h>

#include <cmath>
#include <numbers>
#include <numeric>

#include "promptts/acoustic.hpp"
#include "promptts/encoders.hpp"
#include "promptts/features.hpp"
#include "promptts/pipeline.hpp"
#include "promptts/toy.hpp"

using namespace promptts;

namespace {

void BM_LogMel(benchmark::State& state) {
  FeatureConfig cfg;
  Waveform w;
  w.samples.resize(static_cast<std::size_t>(state.range(0)) * cfg.sample_rate_hz / 1000);
  for (std::size_t i = 0; i < w.samples.size(); ++i)
    w.samples[i] = 0.5 * std::sin(2.0 * std::numbers::pi * 220.0 * static_cast<double>(i) / cfg.sample_rate_hz);
  for (auto _ : state) benchmark::DoNotOptimize(compute_logmel(w, cfg));
  state.SetLabel(std::to_string(state.range(0)) + " ms audio");
}
BENCHMARK(BM_LogMel)->Arg(1000)->Arg(5000)->Unit(benchmark::kMillisecond);

void BM_MdnNll(benchmark::State& state) {
  const auto k = static_cast<std::size_t>(state.range(0));
  const std::size_t d = 256;
  Rng rng(1);
  GMMParams g{k, d, std::vector<double>(k, 1.0 / static_cast<double>(k)), {}, {}};
  for (std::size_t i = 0; i < k * d; ++i) {
    g.means.push_back(rng.normal());
    g.scales.push_back(0.5 + rng.uniform());
  }
  std::vector<double> x(d);
  for (auto& v : x) v = rng.normal();
  for (auto _ : state) benchmark::DoNotOptimize(mdn_nll(g, x));
}
BENCHMARK(BM_MdnNll)->Arg(4)->Arg(10);

void BM_DecoderForward(benchmark::State& state) {
  AcousticConfig cfg;
  const auto frames = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  nn::ParameterStore store;
  DiffusionDecoder dec(store, "decoder", cfg, 80, static_cast<std::size_t>(cfg.hidden), rng);
  std::vector<double> x(frames * 80), c(frames * static_cast<std::size_t>(cfg.hidden));
  for (auto& v : x) v = rng.normal();
  for (auto& v : c) v = rng.normal();
  ag::Var xt = ag::Var::constant(frames, 80, x);
  ag::Var cond = ag::Var::constant(frames, static_cast<std::size_t>(cfg.hidden), c);
  ag::NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(dec.predict_eps(xt, 50, cond));
  state.SetLabel("20 layers x 256 channels");
}
BENCHMARK(BM_DecoderForward)->Arg(100)->Unit(benchmark::kMillisecond);

void BM_ToyTrainStep(benchmark::State& state) {
  Config cfg = toy_config();
  ToyCorpus corpus = make_toy_corpus({}, cfg.features);
  std::vector<UtteranceFeatures> feats;
  for (std::size_t i = 0; i < corpus.records.size(); ++i)
    feats.push_back(compute_features(corpus.records[i], corpus.waves[i], cfg.features));
  Dataset data = build_dataset(corpus.records, std::move(feats), corpus.speaker_prompts);
  std::vector<std::size_t> all(data.records.size());
  std::iota(all.begin(), all.end(), 0);
  Normalization norm = Normalization::fit(data.features, all, static_cast<std::size_t>(cfg.features.n_mels));
  cfg.training.max_steps = 0;
  Trainer trainer(cfg, data.phones, norm, make_examples(data, norm, all));
  for (auto _ : state) benchmark::DoNotOptimize(trainer.step());
  state.SetLabel("toy model, 40 utterances per step");
}
BENCHMARK(BM_ToyTrainStep)->Unit(benchmark::kMillisecond)->Iterations(10);

}  // namespace

BENCHMARK_MAIN();
