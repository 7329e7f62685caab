/*
 * Copyright 2026 The SLSE Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// A small sequential network engine: dense, conv1d, layer norm, relu and
// flatten layers over single samples, reverse-mode gradients through a
// recorded tape, Adam, and a binary checkpoint format.
//
// Everything is 64-bit. Batches are handled by the callers, which run
// samples through Forward/Backward independently and reduce gradients in a
// fixed order.

#ifndef SLSE_NN_HPP_
#define SLSE_NN_HPP_

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "json.hpp"
#include "slse/common.hpp"

namespace slse::nn {

using Shape = std::vector<std::size_t>;

inline std::size_t NumElements(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string ShapeString(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

struct Tensor {
  Shape shape;
  std::vector<double> data;  // row-major

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), data(NumElements(shape), 0.0) {}
  Tensor(Shape s, std::vector<double> values)
      : shape(std::move(s)), data(std::move(values)) {
    Require(NumElements(shape) == data.size(), ErrorCode::kShape,
            "tensor data length does not match shape " + ShapeString(shape));
  }

  static Tensor Vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values));
  }

  std::size_t size() const { return data.size(); }
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }
};

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

struct Parameter {
  std::string name;
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  std::vector<double> first_moment;
  std::vector<double> second_moment;
};

// Per-parameter gradient buffers detached from a ParameterSet, so that
// independent workers can accumulate without sharing state.
struct Gradients {
  std::vector<std::vector<double>> values;

  void Zero() {
    for (auto& g : values) std::fill(g.begin(), g.end(), 0.0);
  }
  void Add(const Gradients& other) {
    Require(other.values.size() == values.size(), ErrorCode::kShape,
            "gradient set mismatch");
    for (std::size_t p = 0; p < values.size(); ++p) {
      auto& dst = values[p];
      const auto& src = other.values[p];
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  }
  void Scale(double factor) {
    for (auto& g : values)
      for (double& v : g) v *= factor;
  }
};

class ParameterSet {
 public:
  std::size_t Add(std::string name, Shape shape) {
    Parameter p;
    p.name = std::move(name);
    p.shape = std::move(shape);
    const std::size_t n = NumElements(p.shape);
    p.value.assign(n, 0.0);
    p.grad.assign(n, 0.0);
    p.first_moment.assign(n, 0.0);
    p.second_moment.assign(n, 0.0);
    params_.push_back(std::move(p));
    return params_.size() - 1;
  }

  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::size_t TotalElements() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  Gradients MakeGradients() const {
    Gradients g;
    for (const auto& p : params_) g.values.emplace_back(p.value.size(), 0.0);
    return g;
  }

  void ZeroGrad() {
    for (auto& p : params_) std::fill(p.grad.begin(), p.grad.end(), 0.0);
  }

  void AccumulateGradients(const Gradients& g) {
    Require(g.values.size() == params_.size(), ErrorCode::kShape,
            "gradient set mismatch");
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& dst = params_[i].grad;
      const auto& src = g.values[i];
      Require(src.size() == dst.size(), ErrorCode::kShape,
              "gradient buffer shape mismatch for " + params_[i].name);
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
    }
  }

  // Copies values only; shapes must match.
  void CopyValuesFrom(const ParameterSet& other) {
    RequireSameLayout(other);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      params_[i].value = other.params_[i].value;
    }
    MarkMutated();
  }

  void RequireSameLayout(const ParameterSet& other) const {
    Require(other.params_.size() == params_.size(), ErrorCode::kShape,
            "parameter sets differ in size");
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Require(other.params_[i].shape == params_[i].shape, ErrorCode::kShape,
              "parameter shape mismatch for " + params_[i].name);
    }
  }

  std::uint64_t step() const { return step_; }
  void set_step(std::uint64_t s) { step_ = s; }

  // Bumped on every value mutation; tapes remember the version they saw.
  std::uint64_t version() const { return version_; }
  void MarkMutated() { ++version_; }

 private:
  std::vector<Parameter> params_;
  std::uint64_t step_ = 0;
  std::uint64_t version_ = 0;
};

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

enum class LayerKind { kDense, kConv1d, kLayerNorm, kRelu, kFlatten };

inline const char* LayerKindName(LayerKind k) {
  switch (k) {
    case LayerKind::kDense: return "dense";
    case LayerKind::kConv1d: return "conv1d";
    case LayerKind::kLayerNorm: return "layer_norm";
    case LayerKind::kRelu: return "relu";
    case LayerKind::kFlatten: return "flatten";
  }
  return "unknown";
}

inline LayerKind ParseLayerKind(const std::string& s) {
  for (LayerKind k : {LayerKind::kDense, LayerKind::kConv1d, LayerKind::kLayerNorm,
                      LayerKind::kRelu, LayerKind::kFlatten}) {
    if (s == LayerKindName(k)) return k;
  }
  throw Error(ErrorCode::kFormat, "unknown layer kind '" + s + "'");
}

inline constexpr double kLayerNormEpsilon = 1e-5;

struct LayerSpec {
  LayerKind kind = LayerKind::kRelu;
  std::size_t units = 0;     // dense output width
  std::size_t channels = 0;  // conv1d output channels
  std::size_t kernel = 0;
  std::size_t stride = 1;

  static LayerSpec Dense(std::size_t units) {
    return {LayerKind::kDense, units, 0, 0, 1};
  }
  static LayerSpec Conv1d(std::size_t channels, std::size_t kernel,
                          std::size_t stride) {
    return {LayerKind::kConv1d, 0, channels, kernel, stride};
  }
  static LayerSpec LayerNorm() { return {LayerKind::kLayerNorm}; }
  static LayerSpec Relu() { return {LayerKind::kRelu}; }
  static LayerSpec Flatten() { return {LayerKind::kFlatten}; }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

inline nlohmann::json LayerSpecToJson(const LayerSpec& s) {
  nlohmann::json j = {{"kind", LayerKindName(s.kind)}};
  if (s.kind == LayerKind::kDense) j["units"] = s.units;
  if (s.kind == LayerKind::kConv1d) {
    j["channels"] = s.channels;
    j["kernel"] = s.kernel;
    j["stride"] = s.stride;
  }
  return j;
}

inline LayerSpec LayerSpecFromJson(const nlohmann::json& j) {
  LayerSpec s;
  s.kind = ParseLayerKind(j.at("kind").get<std::string>());
  if (s.kind == LayerKind::kDense) s.units = j.at("units").get<std::size_t>();
  if (s.kind == LayerKind::kConv1d) {
    s.channels = j.at("channels").get<std::size_t>();
    s.kernel = j.at("kernel").get<std::size_t>();
    s.stride = j.at("stride").get<std::size_t>();
  }
  return s;
}

namespace internal {

// "Same"-style padding for a strided convolution: output length
// ceil(L / stride), extra padding goes to the right.
inline std::size_t ConvOutputLength(std::size_t length, std::size_t stride) {
  return (length + stride - 1) / stride;
}
inline std::size_t ConvPadLeft(std::size_t length, std::size_t kernel,
                               std::size_t stride) {
  const std::size_t out = ConvOutputLength(length, stride);
  const std::size_t needed = (out - 1) * stride + kernel;
  const std::size_t total = needed > length ? needed - length : 0;
  return total / 2;
}

// Range of output positions t for which t * stride + offset lands in
// [0, length).
inline std::pair<std::size_t, std::size_t> ValidOutputRange(
    std::ptrdiff_t offset, std::size_t length, std::size_t stride,
    std::size_t out_length) {
  const auto s = static_cast<std::ptrdiff_t>(stride);
  std::ptrdiff_t lo = 0;
  if (offset < 0) lo = (-offset + s - 1) / s;
  const std::ptrdiff_t last_input = static_cast<std::ptrdiff_t>(length) - 1 - offset;
  std::ptrdiff_t hi = last_input < 0 ? 0 : last_input / s + 1;
  hi = std::min<std::ptrdiff_t>(hi, static_cast<std::ptrdiff_t>(out_length));
  if (hi < lo) hi = lo;
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

}  // namespace internal

// Reverse-mode record of one forward pass.
struct Tape {
  std::vector<Tensor> inputs;             // input to each layer
  std::vector<std::vector<double>> aux;   // layer norm: x_hat then inv_std
  std::uint64_t params_version = 0;
  const void* owner = nullptr;
};

class Network {
 public:
  Network() = default;

  Network(std::string name, Shape input_shape, std::vector<LayerSpec> layers)
      : name_(std::move(name)),
        input_shape_(std::move(input_shape)),
        layers_(std::move(layers)) {
    Require(!input_shape_.empty() && NumElements(input_shape_) > 0,
            ErrorCode::kShape, "network input shape must be non-empty");
    Shape shape = input_shape_;
    slots_.resize(layers_.size());
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const LayerSpec& l = layers_[i];
      const std::string prefix = name_ + "/" + std::to_string(i) + "_" +
                                 LayerKindName(l.kind);
      shapes_.push_back(shape);
      switch (l.kind) {
        case LayerKind::kDense: {
          Require(shape.size() == 1, ErrorCode::kShape,
                  prefix + ": dense expects a rank-1 input, got " +
                      ShapeString(shape));
          Require(l.units > 0, ErrorCode::kShape, prefix + ": units must be > 0");
          slots_[i].weight = params_.Add(prefix + "/w", {l.units, shape[0]});
          slots_[i].bias = params_.Add(prefix + "/b", {l.units});
          shape = {l.units};
          break;
        }
        case LayerKind::kConv1d: {
          Require(shape.size() == 2, ErrorCode::kShape,
                  prefix + ": conv1d expects [channels, length], got " +
                      ShapeString(shape));
          Require(l.channels > 0 && l.kernel > 0 && l.stride > 0,
                  ErrorCode::kShape, prefix + ": bad conv hyperparameters");
          slots_[i].weight =
              params_.Add(prefix + "/w", {l.channels, shape[0], l.kernel});
          slots_[i].bias = params_.Add(prefix + "/b", {l.channels});
          shape = {l.channels, internal::ConvOutputLength(shape[1], l.stride)};
          break;
        }
        case LayerKind::kLayerNorm:
          Require(NumElements(shape) >= 2, ErrorCode::kShape,
                  prefix + ": layer norm needs at least 2 features");
          slots_[i].weight = params_.Add(prefix + "/gamma", shape);
          slots_[i].bias = params_.Add(prefix + "/beta", shape);
          break;
        case LayerKind::kRelu:
          break;
        case LayerKind::kFlatten:
          shape = {NumElements(shape)};
          break;
      }
    }
    output_shape_ = shape;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      if (layers_[i].kind == LayerKind::kLayerNorm) {
        auto& gamma = params_[slots_[i].weight].value;
        std::fill(gamma.begin(), gamma.end(), 1.0);
      }
    }
  }

  const std::string& name() const { return name_; }
  const Shape& input_shape() const { return input_shape_; }
  const Shape& output_shape() const { return output_shape_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  // He-uniform weights, zero biases, unit layer-norm gain.
  void Initialize(Rng& rng) {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const LayerKind kind = layers_[i].kind;
      if (kind != LayerKind::kDense && kind != LayerKind::kConv1d) continue;
      Parameter& w = params_[slots_[i].weight];
      const std::size_t fan_in = w.value.size() / w.shape[0];
      const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (double& v : w.value) v = dist(rng);
      auto& b = params_[slots_[i].bias].value;
      std::fill(b.begin(), b.end(), 0.0);
    }
    params_.MarkMutated();
  }

  nlohmann::json SpecJson() const {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : layers_) layers.push_back(LayerSpecToJson(l));
    return {{"name", name_}, {"input_shape", input_shape_}, {"layers", layers}};
  }

  static Network FromSpecJson(const nlohmann::json& j) {
    std::vector<LayerSpec> layers;
    for (const auto& l : j.at("layers")) layers.push_back(LayerSpecFromJson(l));
    return Network(j.at("name").get<std::string>(),
                   j.at("input_shape").get<Shape>(), std::move(layers));
  }

  Tensor Forward(const Tensor& x, Tape* tape = nullptr) const {
    Require(x.shape == input_shape_, ErrorCode::kShape,
            name_ + ": input shape " + ShapeString(x.shape) + " != expected " +
                ShapeString(input_shape_));
    if (tape != nullptr) {
      tape->inputs.clear();
      tape->aux.clear();
      tape->aux.resize(layers_.size());
      tape->params_version = params_.version();
      tape->owner = this;
    }
    Tensor cur = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      Tensor next = ForwardLayer(i, cur, tape ? &tape->aux[i] : nullptr);
      Require(AllFinite(next.data), ErrorCode::kNumeric,
              name_ + ": non-finite activation after layer " + std::to_string(i) +
                  " (" + LayerKindName(layers_[i].kind) + ")");
      if (tape != nullptr) {
        tape->inputs.push_back(std::move(cur));
      }
      cur = std::move(next);
    }
    return cur;
  }

  // Propagates `upstream` (d loss / d output) back through the tape, adding
  // parameter gradients into `grads` and returning d loss / d input.
  Tensor Backward(const Tape& tape, const Tensor& upstream, Gradients& grads) const {
    Require(tape.owner == this && tape.inputs.size() == layers_.size(),
            ErrorCode::kState, name_ + ": tape does not belong to this network");
    Require(tape.params_version == params_.version(), ErrorCode::kState,
            name_ + ": tape is stale, parameters changed after the forward pass");
    Require(upstream.shape == output_shape_, ErrorCode::kShape,
            name_ + ": upstream gradient shape mismatch");
    Require(grads.values.size() == params_.size(), ErrorCode::kShape,
            name_ + ": gradient buffer does not match parameters");
    Tensor g = upstream;
    for (std::size_t i = layers_.size(); i-- > 0;) {
      g = BackwardLayer(i, tape.inputs[i], tape.aux[i], g, grads);
    }
    return g;
  }

  // Convenience overload accumulating into the network's own gradients.
  Tensor Backward(const Tape& tape, const Tensor& upstream) {
    Gradients g = params_.MakeGradients();
    Tensor dx = Backward(tape, upstream, g);
    params_.AccumulateGradients(g);
    return dx;
  }

 private:
  struct Slots {
    std::size_t weight = 0;
    std::size_t bias = 0;
  };

  Tensor ForwardLayer(std::size_t i, const Tensor& x, std::vector<double>* aux) const {
    const LayerSpec& l = layers_[i];
    switch (l.kind) {
      case LayerKind::kDense: {
        const auto& w = params_[slots_[i].weight].value;
        const auto& b = params_[slots_[i].bias].value;
        const std::size_t in = x.size();
        Tensor y({l.units});
        for (std::size_t o = 0; o < l.units; ++o) {
          const double* row = w.data() + o * in;
          double acc = b[o];
          for (std::size_t j = 0; j < in; ++j) acc += row[j] * x.data[j];
          y.data[o] = acc;
        }
        return y;
      }
      case LayerKind::kConv1d: {
        const auto& w = params_[slots_[i].weight].value;
        const auto& b = params_[slots_[i].bias].value;
        const std::size_t cin = x.shape[0], len = x.shape[1];
        const std::size_t out_len = internal::ConvOutputLength(len, l.stride);
        const std::size_t pad = internal::ConvPadLeft(len, l.kernel, l.stride);
        Tensor y({l.channels, out_len});
        for (std::size_t co = 0; co < l.channels; ++co) {
          double* out = y.data.data() + co * out_len;
          std::fill(out, out + out_len, b[co]);
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const double* in = x.data.data() + ci * len;
            const double* wk = w.data() + (co * cin + ci) * l.kernel;
            for (std::size_t k = 0; k < l.kernel; ++k) {
              const auto offset = static_cast<std::ptrdiff_t>(k) -
                                  static_cast<std::ptrdiff_t>(pad);
              const auto [lo, hi] =
                  internal::ValidOutputRange(offset, len, l.stride, out_len);
              if (lo >= hi) continue;
              const double wv = wk[k];
              const double* src =
                  in + (static_cast<std::ptrdiff_t>(lo * l.stride) + offset);
              for (std::size_t t = lo; t < hi; ++t, src += l.stride) {
                out[t] += wv * *src;
              }
            }
          }
        }
        return y;
      }
      case LayerKind::kLayerNorm: {
        const auto& gamma = params_[slots_[i].weight].value;
        const auto& beta = params_[slots_[i].bias].value;
        const std::size_t n = x.size();
        double mean = 0;
        for (double v : x.data) mean += v;
        mean /= static_cast<double>(n);
        double var = 0;
        for (double v : x.data) var += (v - mean) * (v - mean);
        var /= static_cast<double>(n);
        const double inv_std = 1.0 / std::sqrt(var + kLayerNormEpsilon);
        Tensor y(x.shape);
        std::vector<double> x_hat(n);
        for (std::size_t j = 0; j < n; ++j) {
          x_hat[j] = (x.data[j] - mean) * inv_std;
          y.data[j] = gamma[j] * x_hat[j] + beta[j];
        }
        if (aux != nullptr) {
          x_hat.push_back(inv_std);
          *aux = std::move(x_hat);
        }
        return y;
      }
      case LayerKind::kRelu: {
        Tensor y = x;
        for (double& v : y.data) v = v > 0 ? v : 0.0;
        return y;
      }
      case LayerKind::kFlatten:
        return Tensor({x.size()}, x.data);
    }
    return x;
  }

  Tensor BackwardLayer(std::size_t i, const Tensor& x, const std::vector<double>& aux,
                       const Tensor& g, Gradients& grads) const {
    const LayerSpec& l = layers_[i];
    switch (l.kind) {
      case LayerKind::kDense: {
        const auto& w = params_[slots_[i].weight].value;
        auto& dw = grads.values[slots_[i].weight];
        auto& db = grads.values[slots_[i].bias];
        const std::size_t in = x.size();
        Tensor dx(x.shape);
        for (std::size_t o = 0; o < l.units; ++o) {
          const double go = g.data[o];
          db[o] += go;
          if (go == 0.0) continue;
          const double* row = w.data() + o * in;
          double* drow = dw.data() + o * in;
          for (std::size_t j = 0; j < in; ++j) {
            drow[j] += go * x.data[j];
            dx.data[j] += go * row[j];
          }
        }
        return dx;
      }
      case LayerKind::kConv1d: {
        const auto& w = params_[slots_[i].weight].value;
        auto& dw = grads.values[slots_[i].weight];
        auto& db = grads.values[slots_[i].bias];
        const std::size_t cin = x.shape[0], len = x.shape[1];
        const std::size_t out_len = g.shape[1];
        const std::size_t pad = internal::ConvPadLeft(len, l.kernel, l.stride);
        Tensor dx(x.shape);
        for (std::size_t co = 0; co < l.channels; ++co) {
          const double* go = g.data.data() + co * out_len;
          double bsum = 0;
          for (std::size_t t = 0; t < out_len; ++t) bsum += go[t];
          db[co] += bsum;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const double* in = x.data.data() + ci * len;
            double* din = dx.data.data() + ci * len;
            const double* wk = w.data() + (co * cin + ci) * l.kernel;
            double* dwk = dw.data() + (co * cin + ci) * l.kernel;
            for (std::size_t k = 0; k < l.kernel; ++k) {
              const auto offset = static_cast<std::ptrdiff_t>(k) -
                                  static_cast<std::ptrdiff_t>(pad);
              const auto [lo, hi] =
                  internal::ValidOutputRange(offset, len, l.stride, out_len);
              if (lo >= hi) continue;
              const double wv = wk[k];
              const auto first = static_cast<std::ptrdiff_t>(lo * l.stride) + offset;
              const double* src = in + first;
              double* dsrc = din + first;
              double acc = 0;
              for (std::size_t t = lo; t < hi; ++t, src += l.stride, dsrc += l.stride) {
                acc += go[t] * *src;
                *dsrc += go[t] * wv;
              }
              dwk[k] += acc;
            }
          }
        }
        return dx;
      }
      case LayerKind::kLayerNorm: {
        const auto& gamma = params_[slots_[i].weight].value;
        auto& dgamma = grads.values[slots_[i].weight];
        auto& dbeta = grads.values[slots_[i].bias];
        const std::size_t n = x.size();
        const double inv_std = aux[n];
        double sum_dxhat = 0, sum_dxhat_xhat = 0;
        std::vector<double> dxhat(n);
        for (std::size_t j = 0; j < n; ++j) {
          dgamma[j] += g.data[j] * aux[j];
          dbeta[j] += g.data[j];
          dxhat[j] = g.data[j] * gamma[j];
          sum_dxhat += dxhat[j];
          sum_dxhat_xhat += dxhat[j] * aux[j];
        }
        Tensor dx(x.shape);
        const double nd = static_cast<double>(n);
        for (std::size_t j = 0; j < n; ++j) {
          dx.data[j] =
              inv_std / nd * (nd * dxhat[j] - sum_dxhat - aux[j] * sum_dxhat_xhat);
        }
        return dx;
      }
      case LayerKind::kRelu: {
        Tensor dx(x.shape);
        for (std::size_t j = 0; j < x.size(); ++j) {
          dx.data[j] = x.data[j] > 0 ? g.data[j] : 0.0;
        }
        return dx;
      }
      case LayerKind::kFlatten:
        return Tensor(x.shape, g.data);
    }
    return g;
  }

  std::string name_;
  Shape input_shape_;
  Shape output_shape_;
  std::vector<LayerSpec> layers_;
  std::vector<Shape> shapes_;
  std::vector<Slots> slots_;
  ParameterSet params_;
};

// ---------------------------------------------------------------------------
// Vector helpers
// ---------------------------------------------------------------------------

inline double Dot(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double Norm2(std::span<const double> v) { return std::sqrt(Dot(v, v)); }

inline Tensor L2Normalize(const Tensor& v) {
  const double norm = Norm2(v.data);
  Require(norm > 0 && std::isfinite(norm), ErrorCode::kNumeric,
          "cannot normalize a zero or non-finite vector");
  Tensor out = v;
  for (double& x : out.data) x /= norm;
  return out;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Bias-corrected Adam update of every parameter from its `grad` buffer.
inline void AdamStep(ParameterSet& params, const AdamConfig& cfg) {
  Require(cfg.learning_rate > 0, ErrorCode::kParameter,
          "learning rate must be positive");
  Require(cfg.beta1 >= 0 && cfg.beta1 < 1 && cfg.beta2 >= 0 && cfg.beta2 < 1,
          ErrorCode::kParameter, "Adam betas must lie in [0, 1)");
  params.set_step(params.step() + 1);
  const double t = static_cast<double>(params.step());
  const double correction1 = 1.0 - std::pow(cfg.beta1, t);
  const double correction2 = 1.0 - std::pow(cfg.beta2, t);
  for (Parameter& p : params) {
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      p.first_moment[i] = cfg.beta1 * p.first_moment[i] + (1.0 - cfg.beta1) * g;
      p.second_moment[i] = cfg.beta2 * p.second_moment[i] + (1.0 - cfg.beta2) * g * g;
      const double m_hat = p.first_moment[i] / correction1;
      const double v_hat = p.second_moment[i] / correction2;
      p.value[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
  }
  params.MarkMutated();
}

// ---------------------------------------------------------------------------
// Deterministic batch reduction
// ---------------------------------------------------------------------------

// Runs `fn(sample_index, gradients)` for every sample. Samples are grouped
// into fixed contiguous chunks whose partial gradients are summed in chunk
// order, so the result does not depend on how many workers run.
inline constexpr std::size_t kReductionChunks = 8;

template <typename Fn>
std::vector<double> ParallelAccumulate(std::size_t num_samples,
                                       const std::vector<const ParameterSet*>& layouts,
                                       std::vector<Gradients>& totals, Fn&& fn,
                                       std::size_t workers = 0) {
  const std::size_t chunks = std::min(kReductionChunks, std::max<std::size_t>(1, num_samples));
  std::vector<std::vector<Gradients>> partial(chunks);
  std::vector<double> per_sample(num_samples, 0.0);
  for (auto& p : partial) {
    for (const ParameterSet* layout : layouts) p.push_back(layout->MakeGradients());
  }
  auto run_chunk = [&](std::size_t c) {
    const std::size_t begin = num_samples * c / chunks;
    const std::size_t end = num_samples * (c + 1) / chunks;
    for (std::size_t s = begin; s < end; ++s) per_sample[s] = fn(s, partial[c]);
  };
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, chunks);
  if (workers <= 1) {
    for (std::size_t c = 0; c < chunks; ++c) run_chunk(c);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t c = w; c < chunks; c += workers) run_chunk(c);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  totals.clear();
  for (const ParameterSet* layout : layouts) totals.push_back(layout->MakeGradients());
  for (std::size_t c = 0; c < chunks; ++c) {
    for (std::size_t n = 0; n < layouts.size(); ++n) totals[n].Add(partial[c][n]);
  }
  return per_sample;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------
//
// Layout: 8-byte magic "SLSECKPT", uint32 format version, uint64 header
// length, UTF-8 JSON header, then each parameter's values as little-endian
// float64 in declaration order. The header lists parameter names and shapes.

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'S', 'L', 'S', 'E', 'C', 'K', 'P', 'T'};

namespace internal {

template <typename T>
void AppendLittleEndian(std::string& out, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes, bytes + sizeof(T));
  }
  out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T ReadLittleEndian(const std::string& in, std::size_t& pos) {
  Require(pos + sizeof(T) <= in.size(), ErrorCode::kFormat,
          "checkpoint truncated");
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, in.data() + pos, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes, bytes + sizeof(T));
  }
  pos += sizeof(T);
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace internal

struct Checkpoint {
  nlohmann::json header;  // caller metadata plus "params"
  std::vector<std::vector<double>> values;
};

inline std::string SerializeCheckpoint(nlohmann::json header,
                                       const ParameterSet& params) {
  nlohmann::json plist = nlohmann::json::array();
  for (const Parameter& p : params) {
    plist.push_back({{"name", p.name}, {"shape", p.shape}});
  }
  header["params"] = plist;
  const std::string text = header.dump();
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  internal::AppendLittleEndian<std::uint32_t>(out, kCheckpointVersion);
  internal::AppendLittleEndian<std::uint64_t>(out, text.size());
  out += text;
  for (const Parameter& p : params) {
    for (double v : p.value) internal::AppendLittleEndian<double>(out, v);
  }
  return out;
}

inline Checkpoint ParseCheckpoint(const std::string& bytes) {
  Require(bytes.size() >= sizeof(kCheckpointMagic) &&
              std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) == 0,
          ErrorCode::kFormat, "not a checkpoint file");
  std::size_t pos = sizeof(kCheckpointMagic);
  const auto version = internal::ReadLittleEndian<std::uint32_t>(bytes, pos);
  Require(version == kCheckpointVersion, ErrorCode::kFormat,
          "unsupported checkpoint version " + std::to_string(version));
  const auto header_len = internal::ReadLittleEndian<std::uint64_t>(bytes, pos);
  Require(pos + header_len <= bytes.size(), ErrorCode::kFormat,
          "checkpoint header truncated");
  Checkpoint ckpt;
  ckpt.header = nlohmann::json::parse(bytes.substr(pos, header_len));
  pos += header_len;
  for (const auto& p : ckpt.header.at("params")) {
    const std::size_t n = NumElements(p.at("shape").get<Shape>());
    std::vector<double> values(n);
    for (double& v : values) v = internal::ReadLittleEndian<double>(bytes, pos);
    ckpt.values.push_back(std::move(values));
  }
  Require(pos == bytes.size(), ErrorCode::kFormat, "trailing bytes in checkpoint");
  return ckpt;
}

// Copies checkpointed values into `params`, checking names and shapes.
inline void LoadValues(const Checkpoint& ckpt, ParameterSet& params,
                       std::size_t first_entry = 0) {
  const auto& plist = ckpt.header.at("params");
  Require(plist.size() >= first_entry + params.size(), ErrorCode::kFormat,
          "checkpoint has too few parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& entry = plist[first_entry + i];
    Require(entry.at("name").get<std::string>() == params[i].name &&
                entry.at("shape").get<Shape>() == params[i].shape,
            ErrorCode::kFormat,
            "checkpoint parameter mismatch at " + params[i].name);
    params[i].value = ckpt.values[first_entry + i];
  }
  params.MarkMutated();
}

}  // namespace slse::nn

#endif  // SLSE_NN_HPP_
