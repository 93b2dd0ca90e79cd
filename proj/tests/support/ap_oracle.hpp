#pragma once

#include <algorithm>
#include <numeric>
#include <random>
#include <vector>

#include "alff/detector.hpp"
#include "alff/evaluation.hpp"

namespace alff::oracle {

struct Ranked {
  double score;
  std::size_t image;
  std::size_t det;
};

// Every top-k cut of the ranking, recounted from scratch: precision at recall r is
// the best precision over all cuts whose recall reaches r.
inline double ap_oracle(const std::vector<EvalImage>& images, double thr) {
  std::size_t n_truth = 0;
  std::vector<std::vector<bool>> tp(images.size());
  std::vector<Ranked> ranked;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& img = images[i];
    n_truth += img.truths.size();
    std::vector<std::size_t> order(img.detections.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return img.detections[a].score > img.detections[b].score;
    });
    std::vector<bool> taken(img.truths.size(), false);
    tp[i].assign(img.detections.size(), false);
    for (std::size_t d : order) {
      int best = -1;
      for (std::size_t g = 0; g < img.truths.size(); ++g) {
        const double v = iou(img.detections[d].box, img.truths[g]);
        if (taken[g] || v < thr) continue;
        if (best < 0 || v > iou(img.detections[d].box, img.truths[static_cast<std::size_t>(best)])) {
          best = static_cast<int>(g);
        }
      }
      if (best >= 0) {
        taken[static_cast<std::size_t>(best)] = true;
        tp[i][d] = true;
      }
    }
    for (std::size_t d = 0; d < img.detections.size(); ++d) ranked.push_back({img.detections[d].score, i, d});
  }
  if (n_truth == 0) return 0.0;
  std::stable_sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) { return a.score > b.score; });

  double sum = 0.0;
  for (int k = 0; k <= 100; ++k) {
    const double r = k / 100.0;
    double best = 0.0;
    for (std::size_t cut = 1; cut <= ranked.size(); ++cut) {
      std::size_t hits = 0;
      for (std::size_t j = 0; j < cut; ++j) hits += tp[ranked[j].image][ranked[j].det] ? 1 : 0;
      const double recall = static_cast<double>(hits) / static_cast<double>(n_truth);
      const double precision = static_cast<double>(hits) / static_cast<double>(cut);
      if (recall >= r) best = std::max(best, precision);
    }
    sum += best;
  }
  return sum / 101.0;
}

inline std::vector<EvalImage> random_ap_case(std::mt19937_64& gen) {
  std::uniform_int_distribution<int> n_det(0, 5);
  std::uniform_int_distribution<int> n_gt(0, 4);
  std::uniform_real_distribution<double> c(10.0, 30.0);
  std::uniform_real_distribution<double> jitter(-4.0, 4.0);
  std::uniform_real_distribution<double> s(6.0, 12.0);
  std::uniform_real_distribution<double> score(0.0, 1.0);
  std::bernoulli_distribution near_truth(0.7);
  std::uniform_int_distribution<int> n_img(1, 3);
  std::vector<EvalImage> images(static_cast<std::size_t>(n_img(gen)));
  for (EvalImage& img : images) {
    const int g = n_gt(gen);
    for (int k = 0; k < g; ++k) img.truths.push_back(Box::from_center(c(gen), c(gen), s(gen), s(gen)));
    const int d = n_det(gen);
    for (int k = 0; k < d; ++k) {
      Box b;
      if (!img.truths.empty() && near_truth(gen)) {
        const Box& t = img.truths[static_cast<std::size_t>(k) % img.truths.size()];
        b = Box::from_center(t.cx() + jitter(gen) * 0.5, t.cy() + jitter(gen) * 0.5, t.w() + jitter(gen),
                             t.h() + jitter(gen));
      } else {
        b = Box::from_center(c(gen), c(gen), s(gen), s(gen));
      }
      img.detections.push_back({b, score(gen)});
    }
  }
  return images;
}

}  // namespace alff::oracle
