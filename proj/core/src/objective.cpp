#include "alff/objective.hpp"

#include <algorithm>
#include <cmath>

#include "alff/alff_branch.hpp"

namespace alff {

Tensor3<double> training_heatmap(std::span<const Box> truths, int image_w, int image_h) {
  const GridSpec spec{image_w, image_h, kStrides[0]};
  return upsample_nearest(render_heatmap(truths, spec).grid, spec.stride);
}

template <typename T>
ImageObjective<T> compute_objective(const DetectorOutput<T>& out, std::span<const Box> truths,
                                    const AssignedTargets& targets, const Tensor3<double>* heatmap_target,
                                    const ObjectiveOptions& opts) {
  const HeadOutput<T>& head = out.head;
  const int nb = head.n_bins;
  ImageObjective<T> r;
  r.positives = targets.positives;
  r.grad_head.n_bins = nb;
  r.grad_head.image_w = head.image_w;
  r.grad_head.image_h = head.image_h;
  const double norm = 1.0 / std::max(1, targets.positives);
  const LossWeights& w = opts.weights;

  std::vector<double> logits(static_cast<std::size_t>(nb));
  std::vector<double> dfl_grad;
  for (std::size_t s = 0; s < 3; ++s) {
    const ScaleOutput<T>& so = head.scales[s];
    const ScaleTargets& st = targets.scales[s];
    ScaleOutput<T>& gs = r.grad_head.scales[s];
    gs.stride = so.stride;
    gs.cls = Tensor3<T>(so.cls.channels(), so.cls.height(), so.cls.width());
    gs.reg = Tensor3<T>(so.reg.channels(), so.reg.height(), so.reg.width());
    const int gw = so.cls.width();
    const int gh = so.cls.height();
    if (gw != st.grid_w || gh != st.grid_h) throw std::invalid_argument("objective: targets do not match head grid");

    for (int y = 0; y < gh; ++y) {
      for (int x = 0; x < gw; ++x) {
        const std::size_t loc = static_cast<std::size_t>(y) * gw + x;
        const int g = st.gt_index[loc];
        double d_logit = 0.0;
        r.terms.cls += bce_with_logits(so.cls.at(0, y, x), g >= 0 ? 1.0 : 0.0, &d_logit) * norm;
        gs.cls.at(0, y, x) = static_cast<T>(w.cls * norm * d_logit);
        if (g < 0) continue;

        const Box& truth = truths[static_cast<std::size_t>(g)];
        std::array<BinDistribution, 4> dists;
        std::array<std::vector<double>, 4> side_grad;
        std::array<double, 4> expect{};
        for (int side = 0; side < 4; ++side) {
          for (int b = 0; b < nb; ++b) logits[static_cast<std::size_t>(b)] = so.reg.at(side * nb + b, y, x);
          const auto si = static_cast<std::size_t>(side);
          dists[si] = BinDistribution::from_logits(logits);
          expect[si] = dists[si].expectation();
          const double target = st.offsets[loc][si];
          double l = 0.0;
          if (opts.enable_ncdfl) {
            const double xi = noise_draw(opts.noise.seed, opts.step, opts.item, (s * 1000003ULL + loc) * 4 + si);
            l = nc_dfl_with_grad(dists[si], target, opts.noise, xi, &dfl_grad);
          } else {
            l = dfl_with_grad(dists[si], target, &dfl_grad);
          }
          r.terms.dfl += 0.25 * norm * l;
          side_grad[si].resize(static_cast<std::size_t>(nb));
          for (int b = 0; b < nb; ++b) {
            side_grad[si][static_cast<std::size_t>(b)] = w.dfl * 0.25 * norm * dfl_grad[static_cast<std::size_t>(b)];
          }
        }

        const double stride = so.stride;
        const double ax = (x + 0.5) * stride;
        const double ay = (y + 0.5) * stride;
        IouGrad ig;
        r.terms.box += norm * iou_loss(ax - expect[0] * stride, ay - expect[1] * stride, ax + expect[2] * stride,
                                       ay + expect[3] * stride, truth, &ig);
        // Corners move against left/top offsets and with right/bottom ones.
        const std::array<double, 4> d_expect = {-ig.x1 * stride, -ig.y1 * stride, ig.x2 * stride, ig.y2 * stride};
        for (int side = 0; side < 4; ++side) {
          const auto si = static_cast<std::size_t>(side);
          const double scale = w.box * norm * d_expect[si];
          for (int b = 0; b < nb; ++b) {
            const auto bi = static_cast<std::size_t>(b);
            // dE/dz_b = P_b (b - E)
            const double d = side_grad[si][bi] + scale * dists[si].prob(b) * (b - expect[si]);
            gs.reg.at(side * nb + b, y, x) = static_cast<T>(d);
          }
        }
      }
    }
  }

  if (heatmap_target && !out.heatmap.empty()) {
    r.terms.aux = heatmap_loss(out.heatmap, *heatmap_target, &r.grad_heatmap);
    for (std::size_t i = 0; i < r.grad_heatmap.size(); ++i) {
      r.grad_heatmap[i] = static_cast<T>(w.aux * static_cast<double>(r.grad_heatmap[i]));
    }
  }
  r.total = total_loss(r.terms, w);
  return r;
}

template ImageObjective<float> compute_objective(const DetectorOutput<float>&, std::span<const Box>,
                                                 const AssignedTargets&, const Tensor3<double>*,
                                                 const ObjectiveOptions&);
template ImageObjective<double> compute_objective(const DetectorOutput<double>&, std::span<const Box>,
                                                  const AssignedTargets&, const Tensor3<double>*,
                                                  const ObjectiveOptions&);

}  // namespace alff
