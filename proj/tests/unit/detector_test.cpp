#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "alff/detector.hpp"
#include "alff/evaluation.hpp"
#include "alff/gradcheck.hpp"

namespace alff {
namespace {

BinDistribution one_hot(int bin, int n = 16) {
  std::vector<double> p(static_cast<std::size_t>(n), 0.0);
  p[static_cast<std::size_t>(bin)] = 1.0;
  return BinDistribution::from_probs(p);
}

// Mass split between the two bins around y so the expectation is exactly y.
BinDistribution at_expectation(double y, int n = 16) {
  std::vector<double> p(static_cast<std::size_t>(n), 0.0);
  const int lo = std::min(static_cast<int>(std::floor(y)), n - 2);
  const double frac = y - lo;
  p[static_cast<std::size_t>(lo)] = 1.0 - frac;
  p[static_cast<std::size_t>(lo + 1)] = frac;
  return BinDistribution::from_probs(p);
}

Tensor3<float> random_image(int size, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Tensor3<float> img(3, size, size);
  for (float& v : img.values()) v = u(gen);
  return img;
}

TEST(Backbone, PyramidShapesAt640) {
  DetectorParams<float> p{ModelConfig{}};
  p.init(3);
  const auto f = backbone_forward(p.backbone, random_image(640, 1));
  EXPECT_EQ(f.p8.shape_string(), "64x80x80");
  EXPECT_EQ(f.p16.shape_string(), "96x40x40");
  EXPECT_EQ(f.p32.shape_string(), "128x20x20");
}

TEST(Backbone, PyramidShapesAt64) {
  DetectorParams<float> p{ModelConfig{}};
  p.init(3);
  const auto f = backbone_forward(p.backbone, random_image(64, 1));
  EXPECT_EQ(f.p8.height(), 8);
  EXPECT_EQ(f.p16.height(), 4);
  EXPECT_EQ(f.p32.height(), 2);
}

TEST(Backbone, ZeroImageGivesZeroFeatures) {
  DetectorParams<double> p{ModelConfig{}};
  p.init(5);
  const auto f = backbone_forward(p.backbone, Tensor3<double>(3, 64, 64));
  for (int s = 0; s < 3; ++s) {
    for (double v : f.at(s).values()) ASSERT_EQ(v, 0.0);
  }
}

TEST(Backbone, RejectsBadInput) {
  DetectorParams<float> p{ModelConfig{}};
  p.init(0);
  EXPECT_THROW(backbone_forward(p.backbone, Tensor3<float>(3, 100, 96)), std::invalid_argument);
  EXPECT_THROW(backbone_forward(p.backbone, Tensor3<float>(1, 64, 64)), std::invalid_argument);
  EXPECT_THROW(backbone_forward(p.backbone, Tensor3<float>(3, 0, 0)), std::invalid_argument);
}

TEST(DetectorForward, ShapesAt640) {
  DetectorParams<float> p{ModelConfig{}};
  p.init(1);
  const auto out = forward_full(p, random_image(640, 2), true);
  const int expect[3] = {80, 40, 20};
  for (int s = 0; s < 3; ++s) {
    const auto& so = out.head.scales[static_cast<std::size_t>(s)];
    EXPECT_EQ(so.stride, kStrides[static_cast<std::size_t>(s)]);
    EXPECT_EQ(so.cls.channels(), 1);
    EXPECT_EQ(so.cls.height(), expect[s]);
    EXPECT_EQ(so.reg.channels(), 64);
    EXPECT_EQ(so.reg.width(), expect[s]);
  }
  EXPECT_EQ(out.heatmap.shape_string(), "1x640x640");
}

TEST(DetectorForward, AuxiliaryBranchDoesNotChangeHead) {
  DetectorParams<float> p{ModelConfig{}};
  p.init(9);
  const auto img = random_image(96, 4);
  const auto with = forward_full(p, img, true);
  const auto without = forward_full(p, img, false);
  EXPECT_TRUE(without.heatmap.empty());
  EXPECT_FALSE(with.heatmap.empty());
  for (std::size_t s = 0; s < 3; ++s) {
    EXPECT_TRUE(with.head.scales[s].cls == without.head.scales[s].cls);
    EXPECT_TRUE(with.head.scales[s].reg == without.head.scales[s].reg);
  }
}

TEST(DetectorForward, PipelineGradientsMatchFiniteDifferences) {
  const GradUnitResult r = run_gradcheck_unit("pipeline", {});
  EXPECT_TRUE(r.passed()) << r.worst_rel_error << " at " << r.worst_at;
  EXPECT_LE(r.tolerance, kPipelineTolerance);
}

TEST(DecodeBox, OneHotExample) {
  const std::array<BinDistribution, 4> d = {one_hot(3), one_hot(3), one_hot(3), one_hot(3)};
  const auto box = decode_box(d, 10, 10, 8);
  ASSERT_TRUE(box.has_value());
  EXPECT_DOUBLE_EQ(box->x1(), 60.0);
  EXPECT_DOUBLE_EQ(box->y1(), 60.0);
  EXPECT_DOUBLE_EQ(box->x2(), 108.0);
  EXPECT_DOUBLE_EQ(box->y2(), 108.0);
}

TEST(DecodeBox, UniformDistributionGivesMidRangeOffsets) {
  const std::vector<double> logits(16, 0.0);
  const auto u = BinDistribution::from_logits(logits);
  const std::array<BinDistribution, 4> d = {u, u, u, u};
  const SideOffsets o = expected_offsets(d);
  EXPECT_NEAR(o.left, 7.5, 1e-12);
  const auto box = decode_box(d, 0, 0, 16);
  ASSERT_TRUE(box.has_value());
  EXPECT_NEAR(box->x1(), 8.0 - 7.5 * 16, 1e-9);
  EXPECT_NEAR(box->x2(), 8.0 + 7.5 * 16, 1e-9);
}

TEST(DecodeBox, HalfHalfMassGivesMeanOffset) {
  std::vector<double> p(16, 0.0);
  p[2] = 0.5;
  p[4] = 0.5;
  const auto h = BinDistribution::from_probs(p);
  const std::array<BinDistribution, 4> d = {h, h, h, h};
  const auto box = decode_box(d, 2, 3, 32);
  ASSERT_TRUE(box.has_value());
  EXPECT_NEAR(box->x1(), 80.0 - 96.0, 1e-9);
  EXPECT_NEAR(box->y2(), 112.0 + 96.0, 1e-9);
}

TEST(DecodeBox, ZeroOffsetsGiveNothing) {
  const std::array<BinDistribution, 4> d = {one_hot(0), one_hot(0), one_hot(0), one_hot(0)};
  EXPECT_FALSE(decode_box(d, 1, 1, 8).has_value());
}

TEST(DecodeBox, LinearInProbabilities) {
  std::mt19937_64 gen(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> a(16), b(16);
    for (auto* v : {&a, &b}) {
      double sum = 0;
      for (double& x : *v) sum += (x = u(gen));
      for (double& x : *v) x /= sum;
    }
    const double lambda = u(gen);
    std::vector<double> mix(16);
    for (std::size_t i = 0; i < 16; ++i) mix[i] = lambda * a[i] + (1 - lambda) * b[i];
    double sum = 0;
    for (double x : mix) sum += x;
    for (double& x : mix) x /= sum;
    const auto da = BinDistribution::from_probs(a);
    const auto db = BinDistribution::from_probs(b);
    const auto dm = BinDistribution::from_probs(mix);
    EXPECT_NEAR(dm.expectation(), lambda * da.expectation() + (1 - lambda) * db.expectation(), 1e-9);
  }
}

TEST(AssignDecode, RoundTripRecoversBoxes) {
  std::mt19937_64 gen(23);
  std::uniform_real_distribution<double> pos(20.0, 140.0);
  std::uniform_real_distribution<double> size(6.0, 40.0);
  for (int trial = 0; trial < 100; ++trial) {
    const Box truth = Box::from_center(pos(gen), pos(gen), size(gen), size(gen));
    Box clipped;
    if (!clip_to_image(truth, 160, 160, &clipped) || !(clipped == truth)) continue;
    const std::vector<Box> boxes = {truth};
    const AssignedTargets t = assign_targets(boxes, 160, 160);
    ASSERT_GE(t.positives, 1);
    for (const ScaleTargets& st : t.scales) {
      for (int y = 0; y < st.grid_h; ++y) {
        for (int x = 0; x < st.grid_w; ++x) {
          const std::size_t loc = static_cast<std::size_t>(y) * st.grid_w + x;
          if (st.gt_index[loc] < 0) continue;
          const auto& o = st.offsets[loc];
          const double ax = (x + 0.5) * st.stride, ay = (y + 0.5) * st.stride;
          if (!(ax > truth.x1() && ax < truth.x2() && ay > truth.y1() && ay < truth.y2())) {
            // Centre fallback outside the box: the out-of-box sides clamp to zero.
            EXPECT_TRUE(o[0] == 0.0 || o[1] == 0.0 || o[2] == 0.0 || o[3] == 0.0);
            continue;
          }
          const std::array<BinDistribution, 4> d = {at_expectation(o[0]), at_expectation(o[1]), at_expectation(o[2]),
                                                    at_expectation(o[3])};
          const auto box = decode_box(d, x, y, st.stride);
          ASSERT_TRUE(box.has_value());
          EXPECT_NEAR(box->x1(), truth.x1(), 1e-9);
          EXPECT_NEAR(box->y1(), truth.y1(), 1e-9);
          EXPECT_NEAR(box->x2(), truth.x2(), 1e-9);
          EXPECT_NEAR(box->y2(), truth.y2(), 1e-9);
        }
      }
    }
  }
}

// Greedy NMS output is the unique set K with: d in K iff no higher-ranked member of K overlaps d above thr.
std::set<int> fixed_point_oracle(const std::vector<Detection>& dets, double thr) {
  const int n = static_cast<int>(dets.size());
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return dets[a].score > dets[b].score; });
  std::vector<int> rank(static_cast<std::size_t>(n));
  for (int r = 0; r < n; ++r) rank[static_cast<std::size_t>(order[r])] = r;
  std::vector<std::set<int>> solutions;
  for (unsigned mask = 0; mask < (1u << n); ++mask) {
    bool ok = true;
    for (int d = 0; d < n && ok; ++d) {
      bool blocked = false;
      for (int k = 0; k < n; ++k) {
        if ((mask >> k & 1u) && rank[k] < rank[d] && iou(dets[k].box, dets[d].box) > thr) blocked = true;
      }
      ok = ((mask >> d & 1u) != 0) == !blocked;
    }
    if (ok) {
      std::set<int> s;
      for (int d = 0; d < n; ++d) {
        if (mask >> d & 1u) s.insert(d);
      }
      solutions.push_back(s);
    }
  }
  EXPECT_EQ(solutions.size(), 1u);
  return solutions.empty() ? std::set<int>{} : solutions.front();
}

std::set<int> kept_indices(const std::vector<Detection>& dets, const std::vector<Detection>& kept) {
  std::set<int> out;
  for (const Detection& k : kept) {
    for (std::size_t i = 0; i < dets.size(); ++i) {
      if (dets[i].score == k.score && dets[i].box == k.box) out.insert(static_cast<int>(i));
    }
  }
  return out;
}

TEST(Nms, MatchesFixedPointOracle) {
  std::mt19937_64 gen(31);
  std::uniform_real_distribution<double> c(10.0, 40.0);
  std::uniform_real_distribution<double> s(8.0, 20.0);
  std::uniform_real_distribution<double> score(0.0, 1.0);
  std::uniform_int_distribution<int> count(0, 9);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<Detection> dets(static_cast<std::size_t>(count(gen)));
    for (Detection& d : dets) d = {Box::from_center(c(gen), c(gen), s(gen), s(gen)), score(gen)};
    const double thr = trial % 2 ? 0.3 : 0.65;
    const auto kept = nms(dets, thr);
    EXPECT_EQ(kept_indices(dets, kept), fixed_point_oracle(dets, thr));
    for (std::size_t i = 1; i < kept.size(); ++i) EXPECT_GE(kept[i - 1].score, kept[i].score);
  }
}

TEST(Nms, InvariantToInputOrder) {
  std::mt19937_64 gen(37);
  std::uniform_real_distribution<double> c(10.0, 40.0);
  std::uniform_real_distribution<double> score(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Detection> dets(8);
    for (Detection& d : dets) d = {Box::from_center(c(gen), c(gen), 14, 14), score(gen)};
    const auto a = nms(dets, 0.5);
    std::shuffle(dets.begin(), dets.end(), gen);
    const auto b = nms(dets, 0.5);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(a[i].box == b[i].box && a[i].score == b[i].score);
  }
}

TEST(Nms, SuppressesLowerScoredOverlap) {
  const std::vector<Detection> dets = {{Box(0, 0, 10, 10), 0.8}, {Box(1, 0, 11, 10), 0.9}, {Box(30, 30, 40, 40), 0.1}};
  const auto kept = nms(dets, 0.5);
  ASSERT_EQ(kept.size(), 2u);
  EXPECT_DOUBLE_EQ(kept[0].score, 0.9);
  EXPECT_DOUBLE_EQ(kept[1].score, 0.1);
  EXPECT_EQ(nms(dets, 0.5, 1).size(), 1u);
}

TEST(AssignTargets, SingleCellBox) {
  const std::vector<Box> boxes = {Box(40, 40, 48, 48)};
  const AssignedTargets t = assign_targets(boxes, 64, 64);
  EXPECT_EQ(t.positives, 1);
  const ScaleTargets& st = t.scales[0];
  const std::size_t loc = 5 * st.grid_w + 5;
  EXPECT_EQ(st.gt_index[loc], 0);
  for (double o : st.offsets[loc]) EXPECT_DOUBLE_EQ(o, 0.5);
}

TEST(AssignTargets, EmptyTruthGivesNoPositives) {
  const AssignedTargets t = assign_targets({}, 64, 96);
  EXPECT_EQ(t.positives, 0);
  EXPECT_EQ(t.scales[2].grid_h, 3);
  for (const ScaleTargets& st : t.scales) {
    EXPECT_TRUE(std::all_of(st.gt_index.begin(), st.gt_index.end(), [](int g) { return g < 0; }));
  }
}

TEST(AssignTargets, FourByFourCellBox) {
  // 32 px square, radius 16. Stride 8: 4 central cells at 5.66 px, 8 edge cells
  // at 12.65 px, corners at 16.97 px. Stride 16: 4 cells at 11.31 px. Stride 32: the centre cell.
  const std::vector<Box> boxes = {Box(32, 32, 64, 64)};
  const AssignedTargets t = assign_targets(boxes, 96, 96);
  int at8 = 0;
  for (int g : t.scales[0].gt_index) at8 += g == 0;
  EXPECT_EQ(at8, 12);
  int at16 = 0;
  for (int g : t.scales[1].gt_index) at16 += g == 0;
  EXPECT_EQ(at16, 4);
  EXPECT_EQ(t.scales[2].gt_index[1 * 3 + 1], 0);
  EXPECT_EQ(t.positives, 17);
}

// Exhaustive scan of every location on every scale.
std::array<std::vector<int>, 3> assignment_oracle(const std::vector<Box>& boxes, int w, int h) {
  std::array<std::vector<int>, 3> owner;
  for (std::size_t s = 0; s < 3; ++s) {
    const int stride = kStrides[s];
    const int gw = w / stride;
    const int gh = h / stride;
    owner[s].assign(static_cast<std::size_t>(gw * gh), -1);
    for (int y = 0; y < gh; ++y) {
      for (int x = 0; x < gw; ++x) {
        const double ax = (x + 0.5) * stride;
        const double ay = (y + 0.5) * stride;
        int best = -1;
        for (std::size_t g = 0; g < boxes.size(); ++g) {
          const Box& b = boxes[g];
          const bool inside = ax > b.x1() && ax < b.x2() && ay > b.y1() && ay < b.y2();
          const double r = 0.5 * std::min(b.w(), b.h());
          const bool near = std::hypot(ax - b.cx(), ay - b.cy()) <= r;
          if (inside && near && (best < 0 || b.area() < boxes[static_cast<std::size_t>(best)].area())) {
            best = static_cast<int>(g);
          }
        }
        owner[s][static_cast<std::size_t>(y * gw + x)] = best;
      }
    }
  }
  std::vector<bool> has(boxes.size(), false);
  for (const auto& o : owner) {
    for (int g : o) {
      if (g >= 0) has[static_cast<std::size_t>(g)] = true;
    }
  }
  const int gw = w / 8;
  for (std::size_t g = 0; g < boxes.size(); ++g) {
    if (has[g]) continue;
    const int x = std::clamp(static_cast<int>(boxes[g].cx() / 8), 0, gw - 1);
    const int y = std::clamp(static_cast<int>(boxes[g].cy() / 8), 0, h / 8 - 1);
    int& cur = owner[0][static_cast<std::size_t>(y * gw + x)];
    if (cur < 0 || boxes[g].area() < boxes[static_cast<std::size_t>(cur)].area()) cur = static_cast<int>(g);
  }
  return owner;
}

TEST(AssignTargets, MatchesExhaustiveOracle) {
  std::mt19937_64 gen(41);
  std::uniform_real_distribution<double> c(0.0, 128.0);
  std::uniform_real_distribution<double> s(3.0, 60.0);
  std::uniform_int_distribution<int> count(1, 12);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Box> boxes;
    const int n = count(gen);
    while (static_cast<int>(boxes.size()) < n) {
      Box b;
      if (clip_to_image(Box::from_center(c(gen), c(gen), s(gen), s(gen)), 128, 128, &b)) boxes.push_back(b);
    }
    const AssignedTargets t = assign_targets(boxes, 128, 128, {16, true});
    const auto oracle = assignment_oracle(boxes, 128, 128);
    int positives = 0;
    for (std::size_t sc = 0; sc < 3; ++sc) {
      ASSERT_EQ(t.scales[sc].gt_index, oracle[sc]) << "trial " << trial << " scale " << sc;
      for (std::size_t loc = 0; loc < oracle[sc].size(); ++loc) {
        if (oracle[sc][loc] < 0) continue;
        ++positives;
        for (double o : t.scales[sc].offsets[loc]) {
          EXPECT_GE(o, 0.0);
          EXPECT_LE(o, 15.0);
        }
      }
    }
    EXPECT_EQ(t.positives, positives);
  }
}

TEST(AssignTargets, FallbackCanBeDisabled) {
  // Cell centres on every scale sit on multiples of 4; this 3 px box holds none.
  const std::vector<Box> boxes = {Box(13, 13, 16, 16)};
  EXPECT_EQ(assign_targets(boxes, 32, 32, {16, false}).positives, 0);
  const AssignedTargets t = assign_targets(boxes, 32, 32, {16, true});
  EXPECT_EQ(t.positives, 1);
  EXPECT_EQ(t.scales[0].gt_index[1 * 4 + 1], 0);
}

TEST(Postprocess, ThresholdsScoresAndClips) {
  HeadOutput<double> head;
  head.n_bins = 4;
  head.image_w = 32;
  head.image_h = 32;
  for (std::size_t s = 0; s < 3; ++s) {
    const int g = 32 / kStrides[s];
    head.scales[s].stride = kStrides[s];
    head.scales[s].cls = Tensor3<double>(1, g, g, -20.0);
    head.scales[s].reg = Tensor3<double>(16, g, g, 0.0);
  }
  // One confident location at stride 8, cell (0, 0), with all mass on bin 3.
  head.scales[0].cls.at(0, 0, 0) = 5.0;
  for (int side = 0; side < 4; ++side) head.scales[0].reg.at(side * 4 + 3, 0, 0) = 50.0;
  const auto dets = postprocess(head, {0.25, 0.65, 300});
  ASSERT_EQ(dets.size(), 1u);
  EXPECT_NEAR(dets[0].box.x1(), 0.0, 1e-9);
  EXPECT_NEAR(dets[0].box.x2(), 28.0, 1e-6);
  EXPECT_NEAR(dets[0].score, 1.0 / (1.0 + std::exp(-5.0)), 1e-12);
}

}  // namespace
}  // namespace alff
