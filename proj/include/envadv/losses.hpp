// Copyright 2026 The envadv Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef ENVADV_LOSSES_HPP_
#define ENVADV_LOSSES_HPP_

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "envadv/common.hpp"

// Losses take embeddings as columns of [D x N] matrices and return the batch
// mean. When a gradient pointer is given it receives d(mean loss)/d(input).

namespace envadv {

struct LossConfig {
  double margin = 0.3;
  double alpha = 0.0;
  double contrastive_margin = 1.0;
  /// L2-normalise environment embeddings before the triplet distances.
  bool normalize_env = false;
};

template <typename Scalar>
using LossMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
struct TripletGrad {
  LossMat<Scalar> a, p, n;
};

namespace detail {

template <typename Derived>
void require_finite(const Eigen::MatrixBase<Derived>& x, const char* what) {
  if (!x.allFinite()) throw Error(std::string(what) + ": non-finite input");
}

template <typename Scalar>
void check_triplet(const LossMat<Scalar>& a, const LossMat<Scalar>& p, const LossMat<Scalar>& n,
                   const char* what) {
  if (a.rows() != p.rows() || a.rows() != n.rows() || a.cols() != p.cols() || a.cols() != n.cols()) {
    throw Error(std::string(what) + ": anchor/positive/negative shapes differ");
  }
  if (a.cols() == 0) throw Error(std::string(what) + ": empty batch");
  require_finite(a, what);
  require_finite(p, what);
  require_finite(n, what);
}

inline void zero_like(auto& g, const auto& like) { g.setZero(like.rows(), like.cols()); }

}  // namespace detail

/// Squared Euclidean distance per column.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> squared_distances(const LossMat<Scalar>& x, const LossMat<Scalar>& y) {
  return (x - y).colwise().squaredNorm().transpose();
}

/// mean_i max(0, |a-p|^2 - |a-n|^2 + m)
template <typename Scalar>
Scalar env_triplet_loss(const LossMat<Scalar>& a, const LossMat<Scalar>& p, const LossMat<Scalar>& n,
                        Scalar margin, TripletGrad<Scalar>* grad = nullptr) {
  detail::check_triplet(a, p, n, "env_triplet_loss");
  const auto dap = squared_distances<Scalar>(a, p);
  const auto dan = squared_distances<Scalar>(a, n);
  const Eigen::Index count = a.cols();
  const Scalar inv = Scalar(1) / static_cast<Scalar>(count);
  if (grad) {
    detail::zero_like(grad->a, a);
    detail::zero_like(grad->p, a);
    detail::zero_like(grad->n, a);
  }
  Scalar total = 0;
  for (Eigen::Index i = 0; i < count; ++i) {
    const Scalar l = dap[i] - dan[i] + margin;
    if (l <= Scalar(0)) continue;
    total += l;
    if (grad) {
      grad->a.col(i) = Scalar(2) * inv * (n.col(i) - p.col(i));
      grad->p.col(i) = -Scalar(2) * inv * (a.col(i) - p.col(i));
      grad->n.col(i) = Scalar(2) * inv * (a.col(i) - n.col(i));
    }
  }
  return total * inv;
}

/// KL(softmax(d_ap, d_an) || uniform) and its derivatives with respect to the
/// two distances. Evaluated through log-sum-exp, so large gaps stay finite.
template <typename Scalar>
Scalar confusion_kl(Scalar d_ap, Scalar d_an, Scalar* g_ap = nullptr, Scalar* g_an = nullptr) {
  using std::exp;
  using std::log;
  const Scalar top = std::max(d_ap, d_an);
  const Scalar lse = top + log(exp(d_ap - top) + exp(d_an - top));
  const Scalar lp_ap = d_ap - lse;
  const Scalar lp_an = d_an - lse;
  const Scalar p_ap = exp(lp_ap);
  const Scalar p_an = exp(lp_an);
  const Scalar ln2 = std::numbers::ln2_v<Scalar>;
  const Scalar kl = p_ap * (lp_ap + ln2) + p_an * (lp_an + ln2);
  if (g_ap) *g_ap = p_ap * (lp_ap + ln2 - kl);
  if (g_an) *g_an = p_an * (lp_an + ln2 - kl);
  return kl;
}

/// mean_i KL(softmax(|a-p|^2, |a-n|^2) || (1/2, 1/2))
template <typename Scalar>
Scalar confusion_loss(const LossMat<Scalar>& a, const LossMat<Scalar>& p, const LossMat<Scalar>& n,
                      TripletGrad<Scalar>* grad = nullptr) {
  detail::check_triplet(a, p, n, "confusion_loss");
  const auto dap = squared_distances<Scalar>(a, p);
  const auto dan = squared_distances<Scalar>(a, n);
  const Eigen::Index count = a.cols();
  const Scalar inv = Scalar(1) / static_cast<Scalar>(count);
  if (grad) {
    grad->a.resize(a.rows(), count);
    grad->p.resize(a.rows(), count);
    grad->n.resize(a.rows(), count);
  }
  Scalar total = 0;
  for (Eigen::Index i = 0; i < count; ++i) {
    Scalar g_ap = 0, g_an = 0;
    total += confusion_kl<Scalar>(dap[i], dan[i], &g_ap, &g_an);
    if (grad) {
      const auto u = (a.col(i) - p.col(i)) * (Scalar(2) * g_ap * inv);
      const auto v = (a.col(i) - n.col(i)) * (Scalar(2) * g_an * inv);
      grad->a.col(i) = u + v;
      grad->p.col(i) = -u;
      grad->n.col(i) = -v;
    }
  }
  return total * inv;
}

/// Mean softmax cross-entropy of logits [C x M] against integer labels.
template <typename Scalar>
Scalar cross_entropy(const LossMat<Scalar>& logits, const std::vector<int>& labels,
                     LossMat<Scalar>* grad = nullptr) {
  if (static_cast<std::size_t>(logits.cols()) != labels.size() || labels.empty()) {
    throw Error("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                std::to_string(logits.cols()) + " logit columns");
  }
  detail::require_finite(logits, "cross_entropy");
  const Eigen::Index classes = logits.rows();
  const Scalar inv = Scalar(1) / static_cast<Scalar>(logits.cols());
  if (grad) grad->resize(classes, logits.cols());
  Scalar total = 0;
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const int y = labels[static_cast<std::size_t>(j)];
    if (y < 0 || y >= classes) {
      throw Error("cross_entropy: label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
    }
    const Scalar top = logits.col(j).maxCoeff();
    const auto shifted = (logits.col(j).array() - top).exp();
    const Scalar sum = shifted.sum();
    total += top + std::log(sum) - logits(y, j);
    if (grad) {
      grad->col(j) = (shifted / sum * inv).matrix();
      (*grad)(y, j) -= inv;
    }
  }
  return total * inv;
}

template <typename Scalar>
struct SpeakerPhaseLoss {
  Scalar total = 0;
  Scalar ce = 0;
  Scalar kl = 0;
};

/// CE over every segment of the triplet batch plus alpha times the mean
/// confusion term over the N triplets.
template <typename Scalar>
SpeakerPhaseLoss<Scalar> speaker_phase_loss(const LossMat<Scalar>& logits, const std::vector<int>& labels,
                                            const LossMat<Scalar>& a, const LossMat<Scalar>& p,
                                            const LossMat<Scalar>& n, Scalar alpha,
                                            LossMat<Scalar>* logit_grad = nullptr,
                                            TripletGrad<Scalar>* env_grad = nullptr) {
  if (!(alpha >= Scalar(0)) || !std::isfinite(static_cast<double>(alpha))) {
    throw Error("speaker_phase_loss: alpha must be finite and non-negative");
  }
  SpeakerPhaseLoss<Scalar> out;
  out.ce = cross_entropy<Scalar>(logits, labels, logit_grad);
  out.kl = confusion_loss<Scalar>(a, p, n, env_grad);
  out.total = out.ce + alpha * out.kl;
  if (env_grad) {
    env_grad->a *= alpha;
    env_grad->p *= alpha;
    env_grad->n *= alpha;
  }
  return out;
}

/// Pairs are columns of x1, x2. same[i] = 1: |x1-x2|^2; same[i] = 0:
/// max(0, margin - |x1-x2|)^2. Mean over pairs.
template <typename Scalar>
Scalar contrastive_loss(const LossMat<Scalar>& x1, const LossMat<Scalar>& x2, const std::vector<int>& same,
                        Scalar margin, LossMat<Scalar>* g1 = nullptr, LossMat<Scalar>* g2 = nullptr) {
  if (x1.rows() != x2.rows() || x1.cols() != x2.cols() || static_cast<std::size_t>(x1.cols()) != same.size() ||
      same.empty()) {
    throw Error("contrastive_loss: mismatched pair shapes");
  }
  detail::require_finite(x1, "contrastive_loss");
  detail::require_finite(x2, "contrastive_loss");
  const Scalar inv = Scalar(1) / static_cast<Scalar>(x1.cols());
  if (g1) detail::zero_like(*g1, x1);
  if (g2) detail::zero_like(*g2, x1);
  Scalar total = 0;
  for (Eigen::Index i = 0; i < x1.cols(); ++i) {
    const auto diff = (x1.col(i) - x2.col(i)).eval();
    const Scalar d2 = diff.squaredNorm();
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> g;
    if (same[static_cast<std::size_t>(i)]) {
      total += d2;
      g = Scalar(2) * inv * diff;
    } else {
      const Scalar d = std::sqrt(d2);
      const Scalar gap = margin - d;
      if (gap <= Scalar(0)) continue;
      total += gap * gap;
      if (d < Scalar(1e-12)) continue;
      g = (-Scalar(2) * gap / d * inv) * diff;
    }
    if (g1) g1->col(i) = g;
    if (g2) g2->col(i) = -g;
  }
  return total * inv;
}

/// Column-wise L2 normalisation.
template <typename Scalar>
LossMat<Scalar> l2_normalize(const LossMat<Scalar>& x) {
  LossMat<Scalar> y = x;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const Scalar norm = x.col(j).norm();
    if (norm > Scalar(0)) y.col(j) /= norm;
  }
  return y;
}

/// Gradient of l2_normalize: (g - y (y . g)) / |x|.
template <typename Scalar>
LossMat<Scalar> l2_normalize_backward(const LossMat<Scalar>& x, const LossMat<Scalar>& g) {
  LossMat<Scalar> dx(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const Scalar norm = x.col(j).norm();
    if (norm <= Scalar(0)) {
      dx.col(j) = g.col(j);
      continue;
    }
    const auto y = (x.col(j) / norm).eval();
    dx.col(j) = (g.col(j) - y * y.dot(g.col(j))) / norm;
  }
  return dx;
}

}  // namespace envadv

#endif  // ENVADV_LOSSES_HPP_
