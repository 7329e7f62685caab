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

// Gradient-boosted decision trees for binary classification with the
// logistic loss, plus exact path-dependent tree Shapley attributions.
//
// Trees are grown depth-first with exact greedy split search on the
// gradient/hessian statistics. Each node records its training cover
// (number of training rows reaching it), which the Shapley computation uses
// as the path-dependent conditional distribution.

#ifndef SLSE_GBDT_HPP_
#define SLSE_GBDT_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "slse/common.hpp"

namespace slse::gbdt {

// Row-major dense feature matrix.
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  FeatureMatrix() = default;
  FeatureMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c, 0.0) {}

  static FeatureMatrix FromRows(const std::vector<std::vector<double>>& rows) {
    Require(!rows.empty(), ErrorCode::kValidation, "feature matrix has no rows");
    FeatureMatrix m(rows.size(), rows[0].size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      Require(rows[r].size() == m.cols, ErrorCode::kShape, "ragged feature rows");
      std::copy(rows[r].begin(), rows[r].end(), m.values.begin() + r * m.cols);
    }
    return m;
  }

  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(values).subspan(r * cols, cols);
  }
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0;  // x[feature] < threshold goes left
  int left = -1;
  int right = -1;
  double value = 0;  // leaf output (before shrinkage)
  double cover = 0;  // training rows reaching this node

  bool is_leaf() const { return feature < 0; }
};

struct DecisionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  int LeafIndex(std::span<const double> x) const {
    int n = 0;
    while (!nodes[n].is_leaf()) {
      n = x[nodes[n].feature] < nodes[n].threshold ? nodes[n].left : nodes[n].right;
    }
    return n;
  }
  double Predict(std::span<const double> x) const { return nodes[LeafIndex(x)].value; }

  int MaxDepth(int node = 0) const {
    if (nodes[node].is_leaf()) return 0;
    return 1 + std::max(MaxDepth(nodes[node].left), MaxDepth(nodes[node].right));
  }

  // Cover-weighted mean leaf value.
  double ExpectedValue(int node = 0) const {
    const TreeNode& n = nodes[node];
    if (n.is_leaf()) return n.value;
    const double l = nodes[n.left].cover, r = nodes[n.right].cover;
    return (l * ExpectedValue(n.left) + r * ExpectedValue(n.right)) / (l + r);
  }

  void Validate(std::size_t num_features) const {
    Require(!nodes.empty(), ErrorCode::kFormat, "tree has no nodes");
    std::vector<int> seen(nodes.size(), 0);
    std::vector<int> stack = {0};
    while (!stack.empty()) {
      const int i = stack.back();
      stack.pop_back();
      Require(i >= 0 && static_cast<std::size_t>(i) < nodes.size() && !seen[i],
              ErrorCode::kFormat, "malformed tree structure");
      seen[i] = 1;
      const TreeNode& n = nodes[i];
      if (n.is_leaf()) continue;
      Require(static_cast<std::size_t>(n.feature) < num_features, ErrorCode::kFormat,
              "tree splits on an unknown feature");
      stack.push_back(n.left);
      stack.push_back(n.right);
    }
    for (int s : seen) Require(s == 1, ErrorCode::kFormat, "unreachable tree node");
  }
};

struct GbdtParams {
  std::size_t n_trees = 100;
  std::size_t max_depth = 3;
  double shrinkage = 0.1;
  double min_child_weight = 1.0;  // minimum hessian sum per child
  double l2 = 1.0;
  double min_split_gain = 1e-9;
  double subsample = 1.0;  // row fraction per tree, drawn without replacement
  std::uint64_t seed = 0;

  void Validate() const {
    Require(max_depth >= 1, ErrorCode::kParameter, "max_depth must be >= 1");
    Require(shrinkage > 0, ErrorCode::kParameter, "shrinkage must be > 0");
    Require(min_child_weight >= 0 && l2 >= 0, ErrorCode::kParameter,
            "min_child_weight and l2 must be >= 0");
    Require(subsample > 0 && subsample <= 1, ErrorCode::kParameter,
            "subsample must lie in (0, 1]");
  }
};

struct GbdtModel {
  double base_score = 0;  // log-odds
  double shrinkage = 0.1;
  std::vector<DecisionTree> trees;
  std::vector<std::string> feature_names;
  GbdtParams params;

  std::size_t num_features() const { return feature_names.size(); }

  double RawScore(std::span<const double> x) const {
    Require(x.size() == num_features(), ErrorCode::kShape,
            "feature vector has " + std::to_string(x.size()) + " entries, model expects " +
                std::to_string(num_features()));
    double sum = 0;
    for (const auto& t : trees) sum += t.Predict(x);
    return base_score + shrinkage * sum;
  }

  double PredictProba(std::span<const double> x) const { return Sigmoid(RawScore(x)); }
};

namespace internal {

struct SplitCandidate {
  double gain = 0;
  int feature = -1;
  double threshold = 0;
};

class TreeBuilder {
 public:
  TreeBuilder(const FeatureMatrix& x, const std::vector<std::vector<std::size_t>>& sorted,
              const std::vector<double>& grad, const std::vector<double>& hess,
              const GbdtParams& params)
      : x_(x), sorted_(sorted), grad_(grad), hess_(hess), params_(params),
        member_(x.rows, 0) {}

  DecisionTree Build(const std::vector<std::size_t>& rows) {
    tree_ = DecisionTree{};
    Grow(rows, 0);
    return std::move(tree_);
  }

 private:
  double LeafValue(double g, double h) const { return -g / (h + params_.l2); }
  double Score(double g, double h) const { return g * g / (h + params_.l2); }

  // Exact greedy search. Features ascending, thresholds ascending; a later
  // candidate wins only with strictly larger gain.
  SplitCandidate FindSplit(const std::vector<std::size_t>& rows, double g_total,
                           double h_total) {
    for (std::size_t r : rows) member_[r] = 1;
    SplitCandidate best;
    const double parent = Score(g_total, h_total);
    for (std::size_t f = 0; f < x_.cols; ++f) {
      double gl = 0, hl = 0;
      std::size_t count_left = 0;
      double prev = 0;
      bool has_prev = false;
      for (std::size_t r : sorted_[f]) {
        if (!member_[r]) continue;
        const double v = x_.at(r, f);
        if (has_prev && v > prev && count_left > 0) {
          const double gr = g_total - gl, hr = h_total - hl;
          if (hl >= params_.min_child_weight && hr >= params_.min_child_weight) {
            const double gain = Score(gl, hl) + Score(gr, hr) - parent;
            if (gain > best.gain) {
              best.gain = gain;
              best.feature = static_cast<int>(f);
              best.threshold = prev + (v - prev) / 2.0;
            }
          }
        }
        gl += grad_[r];
        hl += hess_[r];
        ++count_left;
        prev = v;
        has_prev = true;
      }
    }
    for (std::size_t r : rows) member_[r] = 0;
    return best;
  }

  int Grow(const std::vector<std::size_t>& rows, std::size_t depth) {
    double g = 0, h = 0;
    for (std::size_t r : rows) {
      g += grad_[r];
      h += hess_[r];
    }
    const int index = static_cast<int>(tree_.nodes.size());
    tree_.nodes.push_back(TreeNode{});
    tree_.nodes[index].cover = static_cast<double>(rows.size());
    tree_.nodes[index].value = LeafValue(g, h);
    if (depth >= params_.max_depth || rows.size() < 2) return index;
    const SplitCandidate split = FindSplit(rows, g, h);
    if (split.feature < 0 || split.gain <= params_.min_split_gain) return index;
    std::vector<std::size_t> left, right;
    for (std::size_t r : rows) {
      (x_.at(r, split.feature) < split.threshold ? left : right).push_back(r);
    }
    tree_.nodes[index].feature = split.feature;
    tree_.nodes[index].threshold = split.threshold;
    tree_.nodes[index].value = 0;
    const int l = Grow(left, depth + 1);
    const int r = Grow(right, depth + 1);
    tree_.nodes[index].left = l;
    tree_.nodes[index].right = r;
    return index;
  }

  const FeatureMatrix& x_;
  const std::vector<std::vector<std::size_t>>& sorted_;
  const std::vector<double>& grad_;
  const std::vector<double>& hess_;
  const GbdtParams& params_;
  std::vector<char> member_;
  DecisionTree tree_;
};

}  // namespace internal

inline GbdtModel Fit(const FeatureMatrix& x, std::span<const int> y,
                     const GbdtParams& params,
                     std::vector<std::string> feature_names = {}) {
  params.Validate();
  Require(x.rows > 0 && x.cols > 0, ErrorCode::kValidation, "empty training data");
  Require(y.size() == x.rows, ErrorCode::kShape, "label count != row count");
  Require(AllFinite(x.values), ErrorCode::kValidation, "features contain NaN/Inf");
  std::size_t positives = 0;
  for (int label : y) {
    Require(label == 0 || label == 1, ErrorCode::kValidation, "labels must be 0/1");
    positives += static_cast<std::size_t>(label);
  }
  Require(positives > 0 && positives < y.size(), ErrorCode::kValidation,
          "training labels contain a single class");
  if (feature_names.empty()) {
    for (std::size_t f = 0; f < x.cols; ++f) feature_names.push_back("f" + std::to_string(f));
  }
  Require(feature_names.size() == x.cols, ErrorCode::kShape,
          "feature name count != column count");

  GbdtModel model;
  model.params = params;
  model.shrinkage = params.shrinkage;
  model.feature_names = std::move(feature_names);
  const double prevalence = static_cast<double>(positives) / static_cast<double>(y.size());
  model.base_score = std::log(prevalence / (1.0 - prevalence));

  // Stable presort: ties keep row order, which fixes threshold tie-breaks.
  std::vector<std::vector<std::size_t>> sorted(x.cols);
  for (std::size_t f = 0; f < x.cols; ++f) {
    sorted[f].resize(x.rows);
    std::iota(sorted[f].begin(), sorted[f].end(), 0);
    std::stable_sort(sorted[f].begin(), sorted[f].end(),
                     [&](std::size_t a, std::size_t b) { return x.at(a, f) < x.at(b, f); });
  }

  std::vector<double> raw(x.rows, model.base_score);
  std::vector<double> grad(x.rows), hess(x.rows);
  std::vector<std::size_t> all_rows(x.rows);
  std::iota(all_rows.begin(), all_rows.end(), 0);
  Rng rng(DeriveSeed(params.seed, "gbdt/subsample"));
  const auto sample_size = std::max<std::size_t>(
      2, static_cast<std::size_t>(std::llround(params.subsample * static_cast<double>(x.rows))));

  for (std::size_t t = 0; t < params.n_trees; ++t) {
    for (std::size_t r = 0; r < x.rows; ++r) {
      const double p = Sigmoid(raw[r]);
      grad[r] = p - static_cast<double>(y[r]);
      hess[r] = p * (1.0 - p);
    }
    std::vector<std::size_t> rows = all_rows;
    if (params.subsample < 1.0 && sample_size < x.rows) {
      std::shuffle(rows.begin(), rows.end(), rng);
      rows.resize(sample_size);
      std::sort(rows.begin(), rows.end());
    }
    internal::TreeBuilder builder(x, sorted, grad, hess, params);
    DecisionTree tree = builder.Build(rows);
    // A root that cannot split stays a root on every later round, so stop.
    if (tree.nodes.size() == 1) break;
    for (std::size_t r = 0; r < x.rows; ++r) {
      raw[r] += params.shrinkage * tree.Predict(x.row(r));
    }
    model.trees.push_back(std::move(tree));
  }
  return model;
}

// ---------------------------------------------------------------------------
// Tree Shapley values
// ---------------------------------------------------------------------------

struct Attribution {
  double base_value = 0;     // phi_0, log-odds
  std::vector<double> phi;   // one per feature, log-odds

  double Total() const {
    double s = base_value;
    for (double v : phi) s += v;
    return s;
  }
};

namespace internal {

// One element of the unique feature path from the root to the current node.
struct PathElement {
  int feature = -1;
  double zero_fraction = 0;  // share of cover flowing here when the feature is absent
  double one_fraction = 0;   // 1 if x follows this branch, else 0
  double weight = 0;         // permutation weight
};

inline void ExtendPath(std::vector<PathElement>& path, std::size_t depth,
                       double zero_fraction, double one_fraction, int feature) {
  path[depth] = {feature, zero_fraction, one_fraction, depth == 0 ? 1.0 : 0.0};
  const double d1 = static_cast<double>(depth + 1);
  for (std::size_t i = depth; i-- > 0;) {
    path[i + 1].weight += one_fraction * path[i].weight * static_cast<double>(i + 1) / d1;
    path[i].weight = zero_fraction * path[i].weight * static_cast<double>(depth - i) / d1;
  }
}

inline void UnwindPath(std::vector<PathElement>& path, std::size_t depth,
                       std::size_t index) {
  const double one = path[index].one_fraction;
  const double zero = path[index].zero_fraction;
  const double d1 = static_cast<double>(depth + 1);
  double next = path[depth].weight;
  for (std::size_t i = depth; i-- > 0;) {
    if (one != 0) {
      const double tmp = path[i].weight;
      path[i].weight = next * d1 / (static_cast<double>(i + 1) * one);
      next = tmp - path[i].weight * zero * static_cast<double>(depth - i) / d1;
    } else {
      path[i].weight = path[i].weight * d1 / (zero * static_cast<double>(depth - i));
    }
  }
  for (std::size_t i = index; i < depth; ++i) {
    path[i].feature = path[i + 1].feature;
    path[i].zero_fraction = path[i + 1].zero_fraction;
    path[i].one_fraction = path[i + 1].one_fraction;
  }
}

inline double UnwoundPathSum(const std::vector<PathElement>& path, std::size_t depth,
                             std::size_t index) {
  const double one = path[index].one_fraction;
  const double zero = path[index].zero_fraction;
  const double d1 = static_cast<double>(depth + 1);
  double next = path[depth].weight;
  double total = 0;
  for (std::size_t i = depth; i-- > 0;) {
    if (one != 0) {
      const double tmp = next * d1 / (static_cast<double>(i + 1) * one);
      total += tmp;
      next = path[i].weight - tmp * zero * static_cast<double>(depth - i) / d1;
    } else if (zero != 0) {
      total += path[i].weight / zero / (static_cast<double>(depth - i) / d1);
    }
  }
  return total;
}

inline void RecurseShap(const DecisionTree& tree, std::span<const double> x,
                        std::vector<double>& phi, int node_index,
                        std::vector<PathElement> path, std::size_t depth,
                        double zero_fraction, double one_fraction, int feature,
                        double scale) {
  if (path.size() < depth + 1) path.resize(depth + 1);
  ExtendPath(path, depth, zero_fraction, one_fraction, feature);
  const TreeNode& node = tree.nodes[node_index];
  if (node.is_leaf()) {
    for (std::size_t i = 1; i <= depth; ++i) {
      const double w = UnwoundPathSum(path, depth, i);
      const PathElement& el = path[i];
      phi[el.feature] += w * (el.one_fraction - el.zero_fraction) * node.value * scale;
    }
    return;
  }
  const int hot = x[node.feature] < node.threshold ? node.left : node.right;
  const int cold = hot == node.left ? node.right : node.left;
  const double hot_zero = tree.nodes[hot].cover / node.cover;
  const double cold_zero = tree.nodes[cold].cover / node.cover;
  double incoming_zero = 1, incoming_one = 1;

  // A feature already on the path is unwound and re-extended here.
  std::size_t k = 1;
  for (; k <= depth; ++k) {
    if (path[k].feature == node.feature) break;
  }
  if (k <= depth) {
    incoming_zero = path[k].zero_fraction;
    incoming_one = path[k].one_fraction;
    UnwindPath(path, depth, k);
    --depth;
  }
  RecurseShap(tree, x, phi, hot, path, depth + 1, hot_zero * incoming_zero,
              incoming_one, node.feature, scale);
  RecurseShap(tree, x, phi, cold, path, depth + 1, cold_zero * incoming_zero, 0.0,
              node.feature, scale);
}

}  // namespace internal

// Exact Shapley values of the raw (log-odds) score under the path-dependent
// conditional expectation defined by node covers.
inline Attribution TreeShap(const GbdtModel& model, std::span<const double> x) {
  Require(x.size() == model.num_features(), ErrorCode::kShape,
          "feature vector size does not match the model");
  Attribution out;
  out.phi.assign(model.num_features(), 0.0);
  out.base_value = model.base_score;
  for (const DecisionTree& tree : model.trees) {
    for (const TreeNode& n : tree.nodes) {
      Require(n.cover > 0, ErrorCode::kFormat,
              "tree Shapley needs positive node covers");
    }
    out.base_value += model.shrinkage * tree.ExpectedValue();
    std::vector<internal::PathElement> path(static_cast<std::size_t>(tree.MaxDepth()) + 2);
    internal::RecurseShap(tree, x, out.phi, 0, path, 0, 1.0, 1.0, -1, model.shrinkage);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline constexpr const char* kGbdtFormat = "slse-gbdt";
inline constexpr int kGbdtFormatVersion = 1;

inline nlohmann::json ModelToJson(const GbdtModel& m) {
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& t : m.trees) {
    nlohmann::json feature, threshold, left, right, value, cover;
    for (const auto& n : t.nodes) {
      feature.push_back(n.feature);
      threshold.push_back(n.threshold);
      left.push_back(n.left);
      right.push_back(n.right);
      value.push_back(n.value);
      cover.push_back(n.cover);
    }
    trees.push_back({{"feature", feature}, {"threshold", threshold}, {"left", left},
                     {"right", right},     {"value", value},         {"cover", cover}});
  }
  const GbdtParams& p = m.params;
  return {{"format", kGbdtFormat},
          {"version", kGbdtFormatVersion},
          {"params",
           {{"n_trees", p.n_trees},
            {"max_depth", p.max_depth},
            {"shrinkage", p.shrinkage},
            {"min_child_weight", p.min_child_weight},
            {"l2", p.l2},
            {"min_split_gain", p.min_split_gain},
            {"subsample", p.subsample},
            {"seed", p.seed}}},
          {"base_score", m.base_score},
          {"shrinkage", m.shrinkage},
          {"feature_names", m.feature_names},
          {"trees", trees}};
}

inline GbdtModel ModelFromJson(const nlohmann::json& j) {
  Require(j.value("format", "") == kGbdtFormat, ErrorCode::kFormat,
          "not a gbdt model document");
  Require(j.value("version", -1) == kGbdtFormatVersion, ErrorCode::kFormat,
          "unsupported gbdt model version");
  GbdtModel m;
  const auto& p = j.at("params");
  m.params.n_trees = p.at("n_trees").get<std::size_t>();
  m.params.max_depth = p.at("max_depth").get<std::size_t>();
  m.params.shrinkage = p.at("shrinkage").get<double>();
  m.params.min_child_weight = p.at("min_child_weight").get<double>();
  m.params.l2 = p.at("l2").get<double>();
  m.params.min_split_gain = p.at("min_split_gain").get<double>();
  m.params.subsample = p.at("subsample").get<double>();
  m.params.seed = p.at("seed").get<std::uint64_t>();
  m.base_score = j.at("base_score").get<double>();
  m.shrinkage = j.at("shrinkage").get<double>();
  m.feature_names = j.at("feature_names").get<std::vector<std::string>>();
  for (const auto& t : j.at("trees")) {
    DecisionTree tree;
    const std::size_t n = t.at("feature").size();
    for (std::size_t i = 0; i < n; ++i) {
      TreeNode node;
      node.feature = t.at("feature")[i].get<int>();
      node.threshold = t.at("threshold")[i].get<double>();
      node.left = t.at("left")[i].get<int>();
      node.right = t.at("right")[i].get<int>();
      node.value = t.at("value")[i].get<double>();
      node.cover = t.at("cover")[i].get<double>();
      tree.nodes.push_back(node);
    }
    tree.Validate(m.feature_names.size());
    m.trees.push_back(std::move(tree));
  }
  return m;
}

}  // namespace slse::gbdt

#endif  // SLSE_GBDT_HPP_
