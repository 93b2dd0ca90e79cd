#include <benchmark/benchmark.h>

#include "alff/detector.hpp"
#include "alff/evaluation.hpp"
#include "alff/geometry.hpp"
#include "alff/random.hpp"

namespace {

std::vector<alff::EvalImage> random_images(int n_images, int per_image) {
  alff::SplitMix rng(5);
  std::vector<alff::EvalImage> images(static_cast<std::size_t>(n_images));
  for (auto& img : images) {
    for (int i = 0; i < per_image; ++i) {
      const double cx = rng.uniform(10, 150), cy = rng.uniform(10, 150);
      img.truths.push_back(alff::Box::from_center(cx, cy, 9, 9));
      for (int k = 0; k < 3; ++k) {
        img.detections.push_back({alff::Box::from_center(cx + rng.uniform(-3, 3), cy + rng.uniform(-3, 3), 9, 9),
                                  rng.uniform()});
      }
    }
  }
  return images;
}

void BM_ApRange(benchmark::State& state) {
  const auto images = random_images(50, static_cast<int>(state.range(0)));
  for (auto _ : state) {
    auto ap = alff::ap_range(images);
    benchmark::DoNotOptimize(ap.ap50_95);
  }
}
BENCHMARK(BM_ApRange)->Arg(20)->Arg(90)->Unit(benchmark::kMillisecond);

void BM_RenderHeatmap(benchmark::State& state) {
  alff::SplitMix rng(9);
  std::vector<alff::Box> boxes;
  for (int i = 0; i < state.range(0); ++i) {
    boxes.push_back(alff::Box::from_center(rng.uniform(20, 620), rng.uniform(20, 620), 24, 24));
  }
  const alff::GridSpec spec{640, 640, 8};
  for (auto _ : state) {
    auto hm = alff::render_heatmap(boxes, spec);
    benchmark::DoNotOptimize(hm.grid.data());
  }
}
BENCHMARK(BM_RenderHeatmap)->Arg(50)->Arg(250);

}  // namespace
