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

#ifndef SLSE_COMMON_HPP_
#define SLSE_COMMON_HPP_

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace slse {

// Error categories. Every failure raised by the library carries one of these
// so that the CLI can emit a machine-readable error record.
enum class ErrorCode {
  kValidation,  // malformed input data
  kParameter,   // out-of-range hyperparameter
  kShape,       // tensor/feature dimension mismatch
  kNumeric,     // NaN/Inf or zero-norm
  kRejected,    // spirometry blow failed the validity rule
  kIo,
  kFormat,      // unreadable or version-mismatched artifact
  kConfig,
  kState,       // API misuse, e.g. a stale tape
};

inline const char* ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kValidation: return "validation";
    case ErrorCode::kParameter: return "parameter";
    case ErrorCode::kShape: return "shape";
    case ErrorCode::kNumeric: return "numeric";
    case ErrorCode::kRejected: return "rejected";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kFormat: return "format";
    case ErrorCode::kConfig: return "config";
    case ErrorCode::kState: return "state";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

inline void Require(bool condition, ErrorCode code, const std::string& what) {
  if (!condition) throw Error(code, what);
}

using Rng = std::mt19937_64;

// SplitMix64 finalizer. Used to derive independent seeds from a parent seed
// and a stream index without consuming state from a shared generator.
inline std::uint64_t MixSeed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// FNV-1a, 64 bit. Stable across platforms, unlike std::hash.
inline std::uint64_t Fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t DeriveSeed(std::uint64_t seed, std::string_view label) {
  return MixSeed(seed, Fnv1a64(label));
}

inline std::string HexU64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline bool AllFinite(std::span<const double> values) {
  for (double v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

inline double Sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Shortest text form that parses back to the same double.
inline std::string FormatDouble(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Linear interpolation of `values` (sampled at integer positions) at a
// fractional position, clamped to [0, size-1].
inline double InterpolateAt(std::span<const double> values, double position) {
  const std::size_t n = values.size();
  if (position <= 0.0) return values[0];
  const double last = static_cast<double>(n - 1);
  if (position >= last) return values[n - 1];
  const auto lo = static_cast<std::size_t>(position);
  const double frac = position - static_cast<double>(lo);
  if (frac == 0.0) return values[lo];
  return values[lo] + frac * (values[lo + 1] - values[lo]);
}

// Resamples `values` onto `count` evenly spaced positions spanning the same
// first and last sample.
inline std::vector<double> ResampleLinear(std::span<const double> values,
                                          std::size_t count) {
  std::vector<double> out(count);
  if (count == 1) {
    out[0] = values[0];
    return out;
  }
  const double scale = static_cast<double>(values.size() - 1) /
                       static_cast<double>(count - 1);
  for (std::size_t i = 0; i < count; ++i) {
    out[i] = InterpolateAt(values, scale * static_cast<double>(i));
  }
  return out;
}

namespace io {

inline std::string ReadFile(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  Require(static_cast<bool>(in), ErrorCode::kIo,
          "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Writes through a sibling temp file and renames it into place so readers
// never observe a partially written artifact.
inline void WriteFileAtomic(const std::filesystem::path& path,
                            std::string_view contents) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    Require(static_cast<bool>(out), ErrorCode::kIo,
            "cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    Require(static_cast<bool>(out), ErrorCode::kIo,
            "write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::vector<std::string> SplitCsvLine(std::string_view line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      std::string_view last = line.substr(start);
      if (!last.empty() && last.back() == '\r') last.remove_suffix(1);
      fields.emplace_back(last);
      break;
    }
    fields.emplace_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return fields;
}

inline double ParseDouble(const std::string& field, std::string_view context) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(field, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  Require(used == field.size() && !field.empty(), ErrorCode::kValidation,
          std::string(context) + ": not a number: '" + field + "'");
  return v;
}

inline long long ParseInt(const std::string& field, std::string_view context) {
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(field, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  Require(used == field.size() && !field.empty(), ErrorCode::kValidation,
          std::string(context) + ": not an integer: '" + field + "'");
  return v;
}

}  // namespace io
}  // namespace slse

#endif  // SLSE_COMMON_HPP_
