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

// Flow-volume curve augmentations used to build the two views fed to the
// self-supervised trainer. All operators act on the flow channel over the
// valid region; padding stays zero and output length stays kCurveLength.

#ifndef SLSE_AUGMENT_HPP_
#define SLSE_AUGMENT_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "slse/common.hpp"
#include "slse/spiro.hpp"

namespace slse::augment {

using spiro::FlowVolumeCurve;
using spiro::kCurveLength;

enum class AugmentKind {
  kGaussianNoise,
  kPostPeakAmplify,
  kHorizontalStretch,
  kVerticalStretch,
  kDownsample,
  kIdentity,
};

inline const char* AugmentKindName(AugmentKind k) {
  switch (k) {
    case AugmentKind::kGaussianNoise: return "gaussian_noise";
    case AugmentKind::kPostPeakAmplify: return "post_peak_amplify";
    case AugmentKind::kHorizontalStretch: return "horizontal_stretch";
    case AugmentKind::kVerticalStretch: return "vertical_stretch";
    case AugmentKind::kDownsample: return "downsample";
    case AugmentKind::kIdentity: return "identity";
  }
  return "unknown";
}

inline AugmentKind ParseAugmentKind(const std::string& name) {
  for (AugmentKind k :
       {AugmentKind::kGaussianNoise, AugmentKind::kPostPeakAmplify,
        AugmentKind::kHorizontalStretch, AugmentKind::kVerticalStretch,
        AugmentKind::kDownsample, AugmentKind::kIdentity}) {
    if (name == AugmentKindName(k)) return k;
  }
  throw Error(ErrorCode::kConfig, "unknown augmentation kind '" + name + "'");
}

// ---------------------------------------------------------------------------
// Operators
// ---------------------------------------------------------------------------

inline FlowVolumeCurve GaussianNoise(const FlowVolumeCurve& c, double mean,
                                     double sigma, std::uint64_t seed) {
  Require(sigma >= 0 && std::isfinite(sigma) && std::isfinite(mean),
          ErrorCode::kParameter, "gaussian noise needs finite mean, sigma >= 0");
  FlowVolumeCurve out = c;
  Rng rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  for (std::size_t i = 0; i < c.valid_len; ++i) {
    out.flow[i] = c.flow[i] + (mean + sigma * unit(rng));
  }
  return out;
}

// Raised-cosine ramp over the window: 0 at the first sample, 1 at the last.
inline double CosineMask(std::size_t offset, std::size_t window) {
  return 0.5 - 0.5 * std::cos(std::numbers::pi * static_cast<double>(offset) /
                              static_cast<double>(window - 1));
}

inline std::size_t PeakIndex(const FlowVolumeCurve& c) {
  const auto flow = c.ValidFlow();
  return static_cast<std::size_t>(
      std::max_element(flow.begin(), flow.end()) - flow.begin());
}

inline FlowVolumeCurve PostPeakAmplify(const FlowVolumeCurve& c,
                                       std::size_t delay, std::size_t window,
                                       double gain) {
  Require(window >= 2, ErrorCode::kParameter, "amplify window must be >= 2");
  Require(gain > 1 && std::isfinite(gain), ErrorCode::kParameter,
          "amplify gain must be > 1");
  Require(c.valid_len >= 1, ErrorCode::kParameter, "empty curve");
  const std::size_t start = PeakIndex(c) + delay;
  Require(start + window <= c.valid_len, ErrorCode::kParameter,
          "amplify window exceeds the valid region");
  FlowVolumeCurve out = c;
  for (std::size_t k = 0; k < window; ++k) {
    out.flow[start + k] = c.flow[start + k] * (1.0 + CosineMask(k, window) * (gain - 1.0));
  }
  return out;
}

// Stretches the valid waveform over the full length. Output sample i reads
// the input at position i * (valid_len - 1) / (kCurveLength - 1), which pins
// both endpoints; volume is resampled at the same positions so each
// (volume, flow) pair stays on the original curve.
inline FlowVolumeCurve HorizontalStretch(const FlowVolumeCurve& c) {
  Require(c.valid_len >= 2, ErrorCode::kParameter,
          "horizontal stretch needs valid_len >= 2");
  FlowVolumeCurve out = c;
  if (c.valid_len == kCurveLength) return out;
  out.flow = ResampleLinear(c.ValidFlow(), kCurveLength);
  out.volume = ResampleLinear(c.ValidVolume(), kCurveLength);
  out.valid_len = kCurveLength;
  return out;
}

inline FlowVolumeCurve VerticalStretch(const FlowVolumeCurve& c, double alpha) {
  Require(alpha > 0 && alpha < 1, ErrorCode::kParameter,
          "vertical stretch factor must lie in (0, 1)");
  FlowVolumeCurve out = c;
  for (double& f : out.flow) f *= alpha;
  return out;
}

// Order-4 Butterworth low-pass as two biquad sections (bilinear transform
// with pre-warping). `cutoff` is a fraction of Nyquist in (0, 1).
class ButterworthLowPass {
 public:
  static constexpr int kOrder = 4;

  explicit ButterworthLowPass(double cutoff) {
    Require(cutoff > 0 && cutoff < 1, ErrorCode::kParameter,
            "Butterworth cutoff must lie in (0, 1) of Nyquist");
    const double k = std::tan(std::numbers::pi * cutoff / 2.0);
    const double k2 = k * k;
    for (int s = 0; s < kOrder / 2; ++s) {
      // Analog prototype pole pair damping: 2 sin((2s+1) pi / 2N).
      const double q = 2.0 * std::sin(std::numbers::pi * (2.0 * s + 1.0) /
                                      (2.0 * kOrder));
      const double a0 = 1.0 + q * k + k2;
      Section& sec = sections_[s];
      sec.b0 = k2 / a0;
      sec.b1 = 2.0 * k2 / a0;
      sec.b2 = k2 / a0;
      sec.a1 = (2.0 * k2 - 2.0) / a0;
      sec.a2 = (1.0 - q * k + k2) / a0;
    }
  }

  // Filters in place. The state starts at the steady state for a constant
  // input equal to the first sample, so a constant signal passes unchanged.
  void Apply(std::span<double> signal) const {
    if (signal.empty()) return;
    for (const Section& sec : sections_) {
      const double x0 = signal[0];
      const double y0 = x0 * sec.DcGain();
      double z2 = sec.b2 * x0 - sec.a2 * y0;
      double z1 = sec.b1 * x0 - sec.a1 * y0 + z2;
      for (double& v : signal) {
        const double x = v;
        const double y = sec.b0 * x + z1;
        z1 = sec.b1 * x - sec.a1 * y + z2;
        z2 = sec.b2 * x - sec.a2 * y;
        v = y;
      }
    }
  }

  // |H(e^{jw})| at a normalized frequency (fraction of Nyquist).
  double MagnitudeAt(double freq) const {
    const double w = std::numbers::pi * freq;
    double mag = 1.0;
    for (const Section& sec : sections_) {
      const double c1 = std::cos(w), s1 = std::sin(w);
      const double c2 = std::cos(2 * w), s2 = std::sin(2 * w);
      const double nr = sec.b0 + sec.b1 * c1 + sec.b2 * c2;
      const double ni = -(sec.b1 * s1 + sec.b2 * s2);
      const double dr = 1.0 + sec.a1 * c1 + sec.a2 * c2;
      const double di = -(sec.a1 * s1 + sec.a2 * s2);
      mag *= std::sqrt((nr * nr + ni * ni) / (dr * dr + di * di));
    }
    return mag;
  }

 private:
  struct Section {
    double b0 = 0, b1 = 0, b2 = 0, a1 = 0, a2 = 0;
    double DcGain() const { return (b0 + b1 + b2) / (1.0 + a1 + a2); }
  };
  std::array<Section, kOrder / 2> sections_;
};

// Low-pass at rho/2 of Nyquist, decimate by linear interpolation to
// ceil(rho * valid_len) samples, then interpolate back to valid_len.
inline FlowVolumeCurve Downsample(const FlowVolumeCurve& c, double rho) {
  Require(rho > 0 && rho < 1, ErrorCode::kParameter,
          "downsample ratio must lie in (0, 1)");
  Require(c.valid_len >= 2, ErrorCode::kParameter,
          "downsample needs valid_len >= 2");
  FlowVolumeCurve out = c;
  std::vector<double> filtered(c.flow.begin(), c.flow.begin() + c.valid_len);
  ButterworthLowPass(rho / 2.0).Apply(filtered);
  const auto reduced_len = std::max<std::size_t>(
      2, static_cast<std::size_t>(std::ceil(rho * static_cast<double>(c.valid_len))));
  const std::vector<double> reduced = ResampleLinear(filtered, reduced_len);
  const std::vector<double> restored = ResampleLinear(reduced, c.valid_len);
  std::copy(restored.begin(), restored.end(), out.flow.begin());
  return out;
}

// ---------------------------------------------------------------------------
// Distributions over augmentations
// ---------------------------------------------------------------------------

struct Range {
  double lo = 0;
  double hi = 0;
  double Draw(Rng& rng) const {
    if (hi <= lo) return lo;
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  }
};

// One concrete, fully parameterized augmentation.
struct AugmentSpec {
  AugmentKind kind = AugmentKind::kIdentity;
  double noise_mean = 0;
  double noise_sigma = 0;
  std::uint64_t noise_seed = 0;
  std::size_t delay = 0;
  std::size_t window = 2;
  double gain = 1.5;
  double alpha = 0.9;
  double rho = 0.5;

  void Validate() const {
    switch (kind) {
      case AugmentKind::kGaussianNoise:
        Require(noise_sigma >= 0, ErrorCode::kParameter, "sigma must be >= 0");
        break;
      case AugmentKind::kPostPeakAmplify:
        Require(gain > 1, ErrorCode::kParameter, "gain must be > 1");
        Require(window >= 2, ErrorCode::kParameter, "window must be >= 2");
        break;
      case AugmentKind::kVerticalStretch:
        Require(alpha > 0 && alpha < 1, ErrorCode::kParameter,
                "alpha must lie in (0, 1)");
        break;
      case AugmentKind::kDownsample:
        Require(rho > 0 && rho < 1, ErrorCode::kParameter,
                "rho must lie in (0, 1)");
        break;
      default:
        break;
    }
  }
};

// Applies a concrete augmentation. Post-peak amplification shrinks its
// delay, then its window, to fit short curves; if no window of at least
// two samples fits after the peak the curve is returned unchanged.
inline FlowVolumeCurve Apply(const AugmentSpec& spec, const FlowVolumeCurve& c) {
  switch (spec.kind) {
    case AugmentKind::kGaussianNoise:
      return GaussianNoise(c, spec.noise_mean, spec.noise_sigma, spec.noise_seed);
    case AugmentKind::kPostPeakAmplify: {
      const std::size_t peak = PeakIndex(c);
      const std::size_t room = c.valid_len - peak;
      if (room < 2) return c;
      std::size_t window = std::min(spec.window, room);
      const std::size_t delay = std::min(spec.delay, room - window);
      return PostPeakAmplify(c, delay, window, spec.gain);
    }
    case AugmentKind::kHorizontalStretch:
      return HorizontalStretch(c);
    case AugmentKind::kVerticalStretch:
      return VerticalStretch(c, spec.alpha);
    case AugmentKind::kDownsample:
      return Downsample(c, spec.rho);
    case AugmentKind::kIdentity:
      return c;
  }
  return c;
}

// A parameter-range template for one augmentation kind.
struct AugmentTemplate {
  AugmentKind kind = AugmentKind::kIdentity;
  Range noise_mean{0, 0};
  Range noise_sigma{0.05, 0.05};
  Range delay{0, 0};
  Range window{2, 2};
  Range gain{1.5, 1.5};
  Range alpha{0.9, 0.9};
  Range rho{0.5, 0.5};

  AugmentSpec Draw(Rng& rng) const {
    AugmentSpec s;
    s.kind = kind;
    switch (kind) {
      case AugmentKind::kGaussianNoise:
        s.noise_mean = noise_mean.Draw(rng);
        s.noise_sigma = noise_sigma.Draw(rng);
        s.noise_seed = rng();
        break;
      case AugmentKind::kPostPeakAmplify:
        s.delay = static_cast<std::size_t>(std::llround(delay.Draw(rng)));
        s.window = static_cast<std::size_t>(std::llround(window.Draw(rng)));
        s.gain = gain.Draw(rng);
        break;
      case AugmentKind::kVerticalStretch:
        s.alpha = alpha.Draw(rng);
        break;
      case AugmentKind::kDownsample:
        s.rho = rho.Draw(rng);
        break;
      default:
        break;
    }
    s.Validate();
    return s;
  }
};

struct AugmentDistribution {
  struct Entry {
    AugmentTemplate augment;
    double weight = 1.0;
  };
  std::vector<Entry> entries;

  void Validate() const {
    Require(!entries.empty(), ErrorCode::kConfig,
            "augmentation distribution needs at least one entry");
    double total = 0;
    for (const Entry& e : entries) {
      Require(e.weight >= 0 && std::isfinite(e.weight), ErrorCode::kConfig,
              "augmentation weights must be finite and non-negative");
      total += e.weight;
    }
    Require(total > 0, ErrorCode::kConfig, "augmentation weights sum to zero");
  }

  AugmentSpec Draw(Rng& rng) const {
    std::vector<double> weights;
    weights.reserve(entries.size());
    for (const Entry& e : entries) weights.push_back(e.weight);
    std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
    return entries[pick(rng)].augment.Draw(rng);
  }

  static AugmentDistribution Identity() {
    return {{{AugmentTemplate{}, 1.0}}};
  }

  // All five operators with equal weight and moderate parameter ranges.
  static AugmentDistribution Default() {
    AugmentDistribution d;
    AugmentTemplate noise;
    noise.kind = AugmentKind::kGaussianNoise;
    noise.noise_sigma = {0.02, 0.15};
    AugmentTemplate amplify;
    amplify.kind = AugmentKind::kPostPeakAmplify;
    amplify.delay = {5, 60};
    amplify.window = {20, 120};
    amplify.gain = {1.05, 1.3};
    AugmentTemplate horizontal;
    horizontal.kind = AugmentKind::kHorizontalStretch;
    AugmentTemplate vertical;
    vertical.kind = AugmentKind::kVerticalStretch;
    vertical.alpha = {0.75, 0.99};
    AugmentTemplate down;
    down.kind = AugmentKind::kDownsample;
    down.rho = {0.3, 0.9};
    for (const AugmentTemplate& t : {noise, amplify, horizontal, vertical, down}) {
      d.entries.push_back({t, 1.0});
    }
    return d;
  }
};

// Draws t1 from `first` and t2 from `second` (in that order) and applies
// them to the same curve.
inline std::pair<FlowVolumeCurve, FlowVolumeCurve> SamplePair(
    const FlowVolumeCurve& c, const AugmentDistribution& first,
    const AugmentDistribution& second, Rng& rng) {
  const AugmentSpec t1 = first.Draw(rng);
  const AugmentSpec t2 = second.Draw(rng);
  return {Apply(t1, c), Apply(t2, c)};
}

}  // namespace slse::augment

#endif  // SLSE_AUGMENT_HPP_
