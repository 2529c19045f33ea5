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

#ifndef ENVADV_NN_TENSOR_HPP_
#define ENVADV_NN_TENSOR_HPP_

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace envadv::nn {

using Eigen::Index;

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// A batch of 2-D feature maps. Column (n * height + h) * width + w of `data`
/// holds all channels of sample n at (h, w). Height is frequency, width time.
template <typename Scalar>
struct FeatureMaps {
  Index batch = 0;
  Index height = 0;
  Index width = 0;
  Mat<Scalar> data;

  FeatureMaps() = default;
  FeatureMaps(Index channels, Index batch_, Index height_, Index width_)
      : batch(batch_), height(height_), width(width_), data(channels, batch_ * height_ * width_) {}

  Index channels() const { return data.rows(); }
  Index positions() const { return height * width; }
  Index column(Index n, Index h, Index w) const { return (n * height + h) * width + w; }

  /// Embedding-style view: one column per sample.
  static FeatureMaps vectors(Mat<Scalar> columns) {
    FeatureMaps out;
    out.batch = columns.cols();
    out.height = 1;
    out.width = 1;
    out.data = std::move(columns);
    return out;
  }
};

struct Shape {
  Index channels = 0;
  Index height = 0;
  Index width = 0;

  friend bool operator==(const Shape&, const Shape&) = default;
};

/// Forward-pass behaviour. `train` selects batch statistics in normalisation
/// layers and keeps the caches needed by backward(); `update_stats` lets those
/// layers fold the batch statistics into their running estimates.
struct Mode {
  bool train = false;
  bool update_stats = false;

  static constexpr Mode training() { return {true, true}; }
  static constexpr Mode frozen_stats() { return {true, false}; }
};

template <typename Scalar>
struct Parameter {
  std::string name;
  Mat<Scalar> value;
  Mat<Scalar> grad;

  Parameter() = default;
  Parameter(std::string name_, Index rows, Index cols)
      : name(std::move(name_)), value(Mat<Scalar>::Zero(rows, cols)), grad(Mat<Scalar>::Zero(rows, cols)) {}
};

/// Non-learned state that still belongs in a checkpoint (running statistics).
template <typename Scalar>
struct Buffer {
  std::string name;
  Mat<Scalar>* value;
};

}  // namespace envadv::nn

#endif  // ENVADV_NN_TENSOR_HPP_
