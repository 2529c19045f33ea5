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

#ifndef ENVADV_OPTIM_HPP_
#define ENVADV_OPTIM_HPP_

#include <vector>

#include "envadv/nn/tensor.hpp"

namespace envadv {

/// SGD with heavy-ball momentum: v = mu v + g + wd p; p -= lr v.
template <typename Scalar>
class Sgd {
 public:
  explicit Sgd(std::vector<nn::Parameter<Scalar>*> params, double momentum = 0.9, double weight_decay = 0.0)
      : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
    for (auto* p : params_) velocity_.push_back(nn::Mat<Scalar>::Zero(p->value.rows(), p->value.cols()));
  }

  const std::vector<nn::Parameter<Scalar>*>& parameters() const { return params_; }

  void zero_grad() {
    for (auto* p : params_) p->grad.setZero();
  }

  void step(double lr) {
    const auto mu = static_cast<Scalar>(momentum_);
    const auto wd = static_cast<Scalar>(weight_decay_);
    const auto rate = static_cast<Scalar>(lr);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& v = velocity_[i];
      auto* p = params_[i];
      if (wd != Scalar(0)) {
        v = mu * v + p->grad + wd * p->value;
      } else {
        v = mu * v + p->grad;
      }
      p->value -= rate * v;
    }
  }

  /// Velocity buffers keyed by parameter name, for checkpointing.
  std::vector<nn::Buffer<Scalar>> state() {
    std::vector<nn::Buffer<Scalar>> out;
    for (std::size_t i = 0; i < params_.size(); ++i) out.push_back({"opt/" + params_[i]->name, &velocity_[i]});
    return out;
  }

 private:
  std::vector<nn::Parameter<Scalar>*> params_;
  std::vector<nn::Mat<Scalar>> velocity_;
  double momentum_;
  double weight_decay_;
};

}  // namespace envadv

#endif  // ENVADV_OPTIM_HPP_
