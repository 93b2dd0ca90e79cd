#include "alff/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "alff/evaluation.hpp"

namespace alff {

namespace {

ConvShape block(int in, int out, int stride) { return ConvShape{in, out, 3, stride, 1, true, true}; }
ConvShape pointwise(int in, int out) { return ConvShape{in, out, 1, 1, 0, false, false}; }

// Prior probability of a positive location for the initial classification bias.
constexpr double kClsPrior = 0.01;

}  // namespace

template <typename T>
BackboneParams<T>::BackboneParams(const ModelConfig& cfg)
    : stem{ConvBlockParams<T>(block(cfg.in_channels, cfg.stem[0], 2)),
           ConvBlockParams<T>(block(cfg.stem[0], cfg.stem[1], 2)),
           ConvBlockParams<T>(block(cfg.stem[1], cfg.stem[2], 2))},
      refine(block(cfg.stem[2], cfg.p8, 1)),
      down16(block(cfg.p8, cfg.p16, 2)),
      down32(block(cfg.p16, cfg.p32, 2)) {}

template <typename T>
void BackboneParams<T>::init(SplitMix& rng) {
  for (auto& s : stem) s.init(rng);
  refine.init(rng);
  down16.init(rng);
  down32.init(rng);
}

template <typename T>
void BackboneParams<T>::visit(const std::string& prefix, const ParamVisitor<T>& f) {
  for (std::size_t i = 0; i < stem.size(); ++i) stem[i].visit(join_name(prefix, "stem" + std::to_string(i + 1)), f);
  refine.visit(join_name(prefix, "refine"), f);
  down16.visit(join_name(prefix, "down16"), f);
  down32.visit(join_name(prefix, "down32"), f);
}

template <typename T>
HeadParams<T>::HeadParams(int in_channels, int hidden, int n_bins)
    : cls_tower(block(in_channels, hidden, 1)),
      cls_out(pointwise(hidden, 1)),
      reg_tower(block(in_channels, hidden, 1)),
      reg_out(pointwise(hidden, 4 * n_bins)) {}

template <typename T>
void HeadParams<T>::init(SplitMix& rng) {
  cls_tower.init(rng);
  cls_out.init(rng);
  reg_tower.init(rng);
  reg_out.init(rng);
  cls_out.bias.data[0] = static_cast<T>(-std::log((1.0 - kClsPrior) / kClsPrior));
}

template <typename T>
void HeadParams<T>::visit(const std::string& prefix, const ParamVisitor<T>& f) {
  cls_tower.visit(join_name(prefix, "cls_tower"), f);
  cls_out.visit(join_name(prefix, "cls_out"), f);
  reg_tower.visit(join_name(prefix, "reg_tower"), f);
  reg_out.visit(join_name(prefix, "reg_out"), f);
}

template <typename T>
DetectorParams<T>::DetectorParams(const ModelConfig& cfg)
    : config(cfg),
      backbone(cfg),
      heads{HeadParams<T>(cfg.p8, cfg.head_hidden, cfg.n_bins), HeadParams<T>(cfg.p16, cfg.head_hidden, cfg.n_bins),
            HeadParams<T>(cfg.p32, cfg.head_hidden, cfg.n_bins)},
      alff(AlffShape{cfg.p8, cfg.lstm_hidden, kStrides[0]}) {
  if (cfg.n_bins < 2) throw std::invalid_argument("ModelConfig: n_bins must be >= 2");
}

template <typename T>
void DetectorParams<T>::init(std::uint64_t seed) {
  SplitMix rng(derive_key({seed, 0xA11FULL}));
  backbone.init(rng);
  for (auto& h : heads) h.init(rng);
  alff.init(rng);
}

template <typename T>
void DetectorParams<T>::visit(const std::string& prefix, const ParamVisitor<T>& f) {
  backbone.visit(join_name(prefix, "backbone"), f);
  for (std::size_t i = 0; i < heads.size(); ++i) {
    heads[i].visit(join_name(prefix, "head" + std::to_string(kStrides[i])), f);
  }
  alff.visit(join_name(prefix, "alff"), f);
}

template <typename T>
template <typename U>
DetectorParams<U> DetectorParams<T>::cast() const {
  DetectorParams<U> out(config);
  auto& self = const_cast<DetectorParams<T>&>(*this);
  auto src = collect_params<T>(self);
  auto dst = collect_params<U>(out);
  for (std::size_t i = 0; i < src.size(); ++i) {
    auto& s = src[i].second->data;
    auto& d = dst[i].second->data;
    for (std::size_t k = 0; k < s.size(); ++k) d[k] = static_cast<U>(s[k]);
  }
  return out;
}

template <typename T>
std::array<BinDistribution, 4> HeadOutput<T>::distributions(int scale, int y, int x) const {
  const auto& reg = scales[static_cast<std::size_t>(scale)].reg;
  std::array<BinDistribution, 4> out;
  std::vector<double> logits(static_cast<std::size_t>(n_bins));
  for (int side = 0; side < 4; ++side) {
    for (int b = 0; b < n_bins; ++b) logits[static_cast<std::size_t>(b)] = reg.at(side * n_bins + b, y, x);
    out[static_cast<std::size_t>(side)] = BinDistribution::from_logits(logits);
  }
  return out;
}

template <typename T>
PyramidFeatures<T> backbone_forward(const BackboneParams<T>& p, const Tensor3<T>& image, BackboneCache<T>* cache) {
  if (image.height() <= 0 || image.width() <= 0 || image.height() % 32 != 0 || image.width() % 32 != 0) {
    throw std::invalid_argument("backbone: image " + image.shape_string() + " must have dims divisible by 32");
  }
  BackboneCache<T> local;
  BackboneCache<T>& c = cache ? *cache : local;
  Tensor3<T> x = conv_block_forward(p.stem[0], image, &c.stem[0]);
  x = conv_block_forward(p.stem[1], x, &c.stem[1]);
  x = conv_block_forward(p.stem[2], x, &c.stem[2]);
  PyramidFeatures<T> f;
  f.p8 = conv_block_forward(p.refine, x, &c.refine);
  f.p16 = conv_block_forward(p.down16, f.p8, &c.down16);
  f.p32 = conv_block_forward(p.down32, f.p16, &c.down32);
  return f;
}

template <typename T>
DetectorOutput<T> forward_full(const DetectorParams<T>& p, const Tensor3<T>& image, bool enable_alff,
                               DetectorCache<T>* cache) {
  DetectorCache<T> local;
  DetectorCache<T>& c = cache ? *cache : local;
  const PyramidFeatures<T> f = backbone_forward(p.backbone, image, &c.backbone);

  DetectorOutput<T> out;
  out.head.n_bins = p.config.n_bins;
  out.head.image_w = image.width();
  out.head.image_h = image.height();
  for (int s = 0; s < 3; ++s) {
    const auto si = static_cast<std::size_t>(s);
    const HeadParams<T>& h = p.heads[si];
    HeadCache<T>& hc = c.heads[si];
    ScaleOutput<T>& so = out.head.scales[si];
    so.stride = kStrides[si];
    so.cls = conv_block_forward(h.cls_out, conv_block_forward(h.cls_tower, f.at(s), &hc.cls_tower), &hc.cls_out);
    so.reg = conv_block_forward(h.reg_out, conv_block_forward(h.reg_tower, f.at(s), &hc.reg_tower), &hc.reg_out);
  }
  c.alff_ran = enable_alff;
  if (enable_alff) out.heatmap = alff_forward(p.alff, f.p8, &c.alff);
  return out;
}

template <typename T>
void backward_full(const DetectorParams<T>& p, const DetectorCache<T>& cache, const HeadOutput<T>& grad_head,
                   const Tensor3<T>& grad_heatmap, DetectorParams<T>& grads) {
  PyramidFeatures<T> g;
  for (int s = 0; s < 3; ++s) {
    const auto si = static_cast<std::size_t>(s);
    const HeadParams<T>& h = p.heads[si];
    const HeadCache<T>& hc = cache.heads[si];
    HeadParams<T>& hg = grads.heads[si];
    const Tensor3<T> d_cls_tower = conv_block_backward(h.cls_out, hc.cls_out, grad_head.scales[si].cls, hg.cls_out);
    Tensor3<T> d_feat = conv_block_backward(h.cls_tower, hc.cls_tower, d_cls_tower, hg.cls_tower);
    const Tensor3<T> d_reg_tower = conv_block_backward(h.reg_out, hc.reg_out, grad_head.scales[si].reg, hg.reg_out);
    as_matrix(d_feat) += as_matrix(conv_block_backward(h.reg_tower, hc.reg_tower, d_reg_tower, hg.reg_tower));
    g.at(s) = std::move(d_feat);
  }
  if (cache.alff_ran && !grad_heatmap.empty()) {
    as_matrix(g.p8) += as_matrix(alff_backward(p.alff, cache.alff, grad_heatmap, grads.alff));
  }
  const BackboneParams<T>& b = p.backbone;
  const BackboneCache<T>& bc = cache.backbone;
  BackboneParams<T>& bg = grads.backbone;
  as_matrix(g.p16) += as_matrix(conv_block_backward(b.down32, bc.down32, g.p32, bg.down32));
  as_matrix(g.p8) += as_matrix(conv_block_backward(b.down16, bc.down16, g.p16, bg.down16));
  Tensor3<T> d = conv_block_backward(b.refine, bc.refine, g.p8, bg.refine);
  d = conv_block_backward(b.stem[2], bc.stem[2], d, bg.stem[2]);
  d = conv_block_backward(b.stem[1], bc.stem[1], d, bg.stem[1]);
  conv_block_backward(b.stem[0], bc.stem[0], d, bg.stem[0], /*want_input_grad=*/false);
}

SideOffsets expected_offsets(std::span<const BinDistribution, 4> dists) {
  return {dists[0].expectation(), dists[1].expectation(), dists[2].expectation(), dists[3].expectation()};
}

std::optional<Box> decode_box(std::span<const BinDistribution, 4> dists, int cell_x, int cell_y, int stride) {
  const SideOffsets o = expected_offsets(dists);
  const double ax = (cell_x + 0.5) * stride;
  const double ay = (cell_y + 0.5) * stride;
  const double x1 = ax - o.left * stride;
  const double y1 = ay - o.top * stride;
  const double x2 = ax + o.right * stride;
  const double y2 = ay + o.bottom * stride;
  if (!(x2 > x1) || !(y2 > y1)) return std::nullopt;
  return Box(x1, y1, x2, y2);
}

std::vector<Detection> nms(std::vector<Detection> dets, double iou_thr, std::size_t max_det) {
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  std::vector<Detection> kept;
  for (const Detection& d : dets) {
    if (kept.size() >= max_det) break;
    const bool suppressed = std::any_of(kept.begin(), kept.end(),
                                        [&](const Detection& k) { return iou(k.box, d.box) > iou_thr; });
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

template <typename T>
std::vector<Detection> postprocess(const HeadOutput<T>& head, const PostprocessOptions& opts) {
  std::vector<Detection> candidates;
  for (int s = 0; s < 3; ++s) {
    const ScaleOutput<T>& so = head.scales[static_cast<std::size_t>(s)];
    for (int y = 0; y < so.cls.height(); ++y) {
      for (int x = 0; x < so.cls.width(); ++x) {
        const double score = 1.0 / (1.0 + std::exp(-static_cast<double>(so.cls.at(0, y, x))));
        if (!(score > opts.score_thr)) continue;
        const auto dists = head.distributions(s, y, x);
        const auto box = decode_box(dists, x, y, so.stride);
        if (!box) continue;
        Box clipped;
        if (!clip_to_image(*box, head.image_w, head.image_h, &clipped)) continue;
        candidates.push_back({clipped, score});
      }
    }
  }
  return nms(std::move(candidates), opts.iou_thr, opts.max_det);
}

AssignedTargets assign_targets(std::span<const Box> boxes, int image_w, int image_h, const AssignOptions& opts) {
  AssignedTargets out;
  const double max_offset = opts.n_bins - 1;
  for (std::size_t s = 0; s < 3; ++s) {
    ScaleTargets& st = out.scales[s];
    st.stride = kStrides[s];
    st.grid_w = image_w / st.stride;
    st.grid_h = image_h / st.stride;
    st.gt_index.assign(static_cast<std::size_t>(st.grid_w) * st.grid_h, -1);
    st.offsets.assign(st.gt_index.size(), {0.0, 0.0, 0.0, 0.0});
  }

  auto claim = [&](ScaleTargets& st, std::size_t loc, int gt) {
    const int cur = st.gt_index[loc];
    if (cur < 0 || boxes[static_cast<std::size_t>(gt)].area() < boxes[static_cast<std::size_t>(cur)].area()) {
      st.gt_index[loc] = gt;
    }
  };

  for (std::size_t s = 0; s < 3; ++s) {
    ScaleTargets& st = out.scales[s];
    const double stride = st.stride;
    for (std::size_t g = 0; g < boxes.size(); ++g) {
      const Box& b = boxes[g];
      const double radius = 0.5 * std::min(b.w(), b.h());
      const int x_lo = std::max(0, static_cast<int>(std::floor(b.x1() / stride - 0.5)));
      const int x_hi = std::min(st.grid_w - 1, static_cast<int>(std::ceil(b.x2() / stride - 0.5)));
      const int y_lo = std::max(0, static_cast<int>(std::floor(b.y1() / stride - 0.5)));
      const int y_hi = std::min(st.grid_h - 1, static_cast<int>(std::ceil(b.y2() / stride - 0.5)));
      for (int y = y_lo; y <= y_hi; ++y) {
        const double ay = (y + 0.5) * stride;
        for (int x = x_lo; x <= x_hi; ++x) {
          const double ax = (x + 0.5) * stride;
          if (!(ax > b.x1() && ax < b.x2() && ay > b.y1() && ay < b.y2())) continue;
          const double dx = ax - b.cx();
          const double dy = ay - b.cy();
          if (dx * dx + dy * dy > radius * radius) continue;
          claim(st, static_cast<std::size_t>(y) * st.grid_w + x, static_cast<int>(g));
        }
      }
    }
  }

  if (opts.center_fallback) {
    std::vector<bool> owns_any(boxes.size(), false);
    for (const ScaleTargets& st : out.scales) {
      for (int g : st.gt_index) {
        if (g >= 0) owns_any[static_cast<std::size_t>(g)] = true;
      }
    }
    ScaleTargets& st = out.scales[0];
    for (std::size_t g = 0; g < boxes.size(); ++g) {
      if (owns_any[g]) continue;
      const int x = std::clamp(static_cast<int>(std::floor(boxes[g].cx() / st.stride)), 0, st.grid_w - 1);
      const int y = std::clamp(static_cast<int>(std::floor(boxes[g].cy() / st.stride)), 0, st.grid_h - 1);
      claim(st, static_cast<std::size_t>(y) * st.grid_w + x, static_cast<int>(g));
    }
  }

  for (ScaleTargets& st : out.scales) {
    for (int y = 0; y < st.grid_h; ++y) {
      for (int x = 0; x < st.grid_w; ++x) {
        const std::size_t loc = static_cast<std::size_t>(y) * st.grid_w + x;
        const int g = st.gt_index[loc];
        if (g < 0) continue;
        const Box& b = boxes[static_cast<std::size_t>(g)];
        const double ax = (x + 0.5) * st.stride;
        const double ay = (y + 0.5) * st.stride;
        const double s = st.stride;
        st.offsets[loc] = {std::clamp((ax - b.x1()) / s, 0.0, max_offset), std::clamp((ay - b.y1()) / s, 0.0, max_offset),
                           std::clamp((b.x2() - ax) / s, 0.0, max_offset), std::clamp((b.y2() - ay) / s, 0.0, max_offset)};
        ++out.positives;
      }
    }
  }
  return out;
}

#define ALFF_INSTANTIATE_DETECTOR(T)                                                                          \
  template struct BackboneParams<T>;                                                                          \
  template struct HeadParams<T>;                                                                              \
  template struct DetectorParams<T>;                                                                          \
  template struct HeadOutput<T>;                                                                              \
  template PyramidFeatures<T> backbone_forward(const BackboneParams<T>&, const Tensor3<T>&, BackboneCache<T>*); \
  template DetectorOutput<T> forward_full(const DetectorParams<T>&, const Tensor3<T>&, bool, DetectorCache<T>*); \
  template void backward_full(const DetectorParams<T>&, const DetectorCache<T>&, const HeadOutput<T>&,         \
                              const Tensor3<T>&, DetectorParams<T>&);                                         \
  template std::vector<Detection> postprocess(const HeadOutput<T>&, const PostprocessOptions&);

ALFF_INSTANTIATE_DETECTOR(float)
ALFF_INSTANTIATE_DETECTOR(double)
#undef ALFF_INSTANTIATE_DETECTOR

template DetectorParams<double> DetectorParams<float>::cast<double>() const;
template DetectorParams<float> DetectorParams<double>::cast<float>() const;
template DetectorParams<float> DetectorParams<float>::cast<float>() const;
template DetectorParams<double> DetectorParams<double>::cast<double>() const;

}  // namespace alff
