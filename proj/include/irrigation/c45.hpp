#pragma once

// C4.5 decision tree over the four numeric irrigation features.
//
// Growth uses binary gain-ratio splits at midpoints between consecutive
// distinct values; pruning is bottom-up subtree replacement driven by the
// upper confidence limit of the binomial error rate. Subtree raising and
// fractional (missing-value) instances are not implemented: inputs must be
// complete.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <nlohmann/json.hpp>

#include "irrigation/dataprep.hpp"

namespace irrigation::c45 {

/// Gains at or below this are treated as zero.
inline constexpr double kGainEpsilon = 1e-12;
/// Gain ratios closer than this are ties.
inline constexpr double kRatioTieEpsilon = 1e-12;

using ClassCounts = std::array<double, 2>;

struct LearnerParams {
  int min_leaf = 2;
  double confidence = 0.25;  // 1.0 disables pruning
  NormMethod norm = NormMethod::kZScore;
};

inline void validate(const LearnerParams& p) {
  if (p.min_leaf < 1) throw std::invalid_argument("min_leaf must be at least 1");
  if (!(p.confidence > 0.0 && p.confidence <= 1.0)) throw std::invalid_argument("confidence must lie in (0, 1]");
}

// ---------------------------------------------------------------------------
// Split criterion

/// Shannon entropy in bits over the classes with nonzero count.
inline double entropy(std::span<const double> counts) {
  double total = 0;
  for (double c : counts) {
    if (c < 0) throw std::invalid_argument("class counts must be nonnegative");
    total += c;
  }
  if (total <= 0) throw std::invalid_argument("entropy of an empty distribution");
  double h = 0;
  for (double c : counts) {
    if (c > 0) {
      double p = c / total;
      h -= p * std::log2(p);
    }
  }
  return h;
}

inline double entropy(const ClassCounts& counts) { return entropy(std::span<const double>(counts)); }

struct SplitCandidate {
  double threshold = 0;
  double gain = 0;
  double gain_ratio = 0;
};

/// Information gain and gain ratio of splitting `parent` into `left` and
/// `right`.
inline SplitCandidate score_split(const ClassCounts& parent, const ClassCounts& left, const ClassCounts& right,
                                  double threshold) {
  double n = parent[0] + parent[1];
  double nl = left[0] + left[1];
  double nr = right[0] + right[1];
  double gain = entropy(parent) - (nl / n) * entropy(left) - (nr / n) * entropy(right);
  double split_info = entropy(ClassCounts{nl, nr});
  return {threshold, gain, split_info > 0 ? gain / split_info : 0.0};
}

/// Picks the winner among candidates listed in ascending threshold order:
/// highest gain ratio among those whose gain reaches the mean of all
/// positive gains; earlier candidates win ties.
inline std::optional<SplitCandidate> select_candidate(const std::vector<SplitCandidate>& candidates) {
  double gain_sum = 0;
  std::size_t positive = 0;
  for (const auto& c : candidates) {
    if (c.gain > kGainEpsilon) {
      gain_sum += c.gain;
      ++positive;
    }
  }
  if (positive == 0) return std::nullopt;
  double mean_gain = gain_sum / static_cast<double>(positive);
  std::optional<SplitCandidate> best;
  for (const auto& c : candidates) {
    if (c.gain <= kGainEpsilon || c.gain < mean_gain - kGainEpsilon) continue;
    if (!best || c.gain_ratio > best->gain_ratio + kRatioTieEpsilon) best = c;
  }
  return best;
}

namespace detail {

inline std::size_t class_index(const Instance& inst) {
  if (!inst.label || (*inst.label != 0 && *inst.label != 1)) throw std::invalid_argument("instance lacks a 0/1 label");
  return static_cast<std::size_t>(*inst.label);
}

inline std::optional<SplitCandidate> best_split_rows(const Dataset& d, std::span<const std::size_t> rows,
                                                     std::size_t attribute, int min_leaf) {
  if (rows.size() < 2) return std::nullopt;
  std::vector<std::pair<double, std::size_t>> sorted;
  sorted.reserve(rows.size());
  ClassCounts parent{0, 0};
  for (auto r : rows) {
    const Instance& inst = d.instances[r];
    std::size_t cls = class_index(inst);
    sorted.emplace_back(inst.at(attribute), cls);
    parent[cls] += 1;
  }
  std::sort(sorted.begin(), sorted.end());

  std::vector<SplitCandidate> candidates;
  ClassCounts left{0, 0};
  const double n = static_cast<double>(sorted.size());
  for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
    left[sorted[i].second] += 1;
    if (sorted[i].first == sorted[i + 1].first) continue;
    double nl = static_cast<double>(i + 1);
    if (nl < min_leaf || n - nl < min_leaf) continue;
    ClassCounts right{parent[0] - left[0], parent[1] - left[1]};
    double threshold = sorted[i].first + (sorted[i + 1].first - sorted[i].first) / 2.0;
    candidates.push_back(score_split(parent, left, right, threshold));
  }
  return select_candidate(candidates);
}

/// Most balanced admissible split over all attributes (largest smaller
/// side), ignoring gain; lowest attribute, then lowest threshold, on ties.
inline std::optional<std::pair<std::size_t, double>> balanced_split_rows(const Dataset& d,
                                                                         std::span<const std::size_t> rows,
                                                                         int min_leaf) {
  std::optional<std::pair<std::size_t, double>> best;
  std::size_t best_small = 0;
  const std::size_t n = rows.size();
  for (std::size_t a = 0; a < kFeatureCount; ++a) {
    std::vector<double> values;
    values.reserve(n);
    for (auto r : rows) values.push_back(d.instances[r].at(a));
    std::sort(values.begin(), values.end());
    for (std::size_t i = 0; i + 1 < n; ++i) {
      if (values[i] == values[i + 1]) continue;
      std::size_t small = std::min(i + 1, n - i - 1);
      if (small < static_cast<std::size_t>(min_leaf) || small <= best_small) continue;
      best_small = small;
      best = {a, values[i] + (values[i + 1] - values[i]) / 2.0};
    }
  }
  return best;
}

}  // namespace detail

/// Best binary split of `attribute` over a labeled, complete dataset, or
/// nullopt when no midpoint gives positive gain (including a constant
/// attribute). Both sides must hold at least `min_leaf` instances.
inline std::optional<SplitCandidate> best_split(const Dataset& d, std::size_t attribute, int min_leaf = 1) {
  if (attribute >= kFeatureCount) throw std::out_of_range("attribute index out of range");
  std::vector<std::size_t> rows(d.size());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return detail::best_split_rows(d, rows, attribute, min_leaf);
}

// ---------------------------------------------------------------------------
// Pessimistic error

/// Upper limit of the binomial error rate at confidence `cf` for `errors`
/// misclassifications out of `n`. With zero errors this is 1 - cf^(1/n);
/// otherwise the normal approximation with a 0.5 continuity correction, as
/// in J48.
inline double upper_error_rate(double errors, double n, double cf) {
  if (n <= 0) throw std::invalid_argument("upper_error_rate needs n > 0");
  double zero_case = 1.0 - std::pow(cf, 1.0 / n);
  if (errors < 1.0) {
    if (errors <= 0.0) return zero_case;
    // fractional error counts interpolate toward the one-error bound
    return zero_case + errors * (upper_error_rate(1.0, n, cf) - zero_case);
  }
  if (errors + 0.5 >= n) return 1.0;
  double z = boost::math::quantile(boost::math::normal(), 1.0 - cf);
  double f = (errors + 0.5) / n;
  double r = (f + z * z / (2 * n) + z * std::sqrt(f / n - f * f / n + z * z / (4 * n * n))) / (1 + z * z / n);
  return r;
}

/// Estimated error count of a node collapsed to a leaf.
inline double leaf_error_estimate(const ClassCounts& counts, double cf) {
  double n = counts[0] + counts[1];
  double errors = n - std::max(counts[0], counts[1]);
  return n * upper_error_rate(errors, n, cf);
}

// ---------------------------------------------------------------------------
// Tree

/// Leaf when `attribute` is empty. Every node keeps the class counts of the
/// training instances that reached it; internal nodes send x <= threshold to
/// `left`. Children are indices into the owning tree's node vector.
struct TreeNode {
  ClassCounts counts{0, 0};
  std::optional<std::size_t> attribute;
  double threshold = 0;
  std::size_t left = 0;
  std::size_t right = 0;

  bool is_leaf() const { return !attribute.has_value(); }
  bool operator==(const TreeNode&) const = default;
};

/// Flat tree; node 0 is the root.
struct Tree {
  std::vector<TreeNode> nodes;

  const TreeNode& root() const { return nodes.front(); }
  std::size_t size() const { return nodes.size(); }
  std::size_t leaf_count() const {
    return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) { return n.is_leaf(); }));
  }
  std::size_t depth() const { return nodes.empty() ? 0 : depth_of(0); }
  bool operator==(const Tree&) const = default;

 private:
  std::size_t depth_of(std::size_t i) const {
    const auto& n = nodes[i];
    if (n.is_leaf()) return 1;
    return 1 + std::max(depth_of(n.left), depth_of(n.right));
  }
};

struct TreeModel {
  Tree tree;
  NormStats norm;
  LearnerParams params;

  static constexpr std::array<int, 2> class_values = {0, 1};
};

namespace detail {

class Grower {
 public:
  Grower(const Dataset& d, int min_leaf) : d_(d), min_leaf_(min_leaf) {}

  Tree grow() {
    std::vector<std::size_t> rows(d_.size());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    tree_.nodes.emplace_back();
    grow_node(0, rows);
    return std::move(tree_);
  }

 private:
  void grow_node(std::size_t index, std::vector<std::size_t>& rows) {
    ClassCounts counts{0, 0};
    for (auto r : rows) counts[class_index(d_.instances[r])] += 1;
    tree_.nodes[index].counts = counts;

    double n = static_cast<double>(rows.size());
    if (counts[0] == 0 || counts[1] == 0) return;
    if (n < 2.0 * min_leaf_) return;

    std::vector<std::pair<std::size_t, SplitCandidate>> per_attribute;
    for (std::size_t a = 0; a < kFeatureCount; ++a) {
      if (auto c = best_split_rows(d_, rows, a, min_leaf_)) per_attribute.emplace_back(a, *c);
    }

    std::size_t attribute = 0;
    double threshold = 0;
    if (!per_attribute.empty()) {
      // Same guard across attributes as across thresholds.
      double mean_gain = 0;
      for (const auto& [a, c] : per_attribute) mean_gain += c.gain;
      mean_gain /= static_cast<double>(per_attribute.size());
      const std::pair<std::size_t, SplitCandidate>* best = nullptr;
      for (const auto& entry : per_attribute) {
        if (entry.second.gain < mean_gain - kGainEpsilon) continue;
        if (!best || entry.second.gain_ratio > best->second.gain_ratio + kRatioTieEpsilon) best = &entry;
      }
      attribute = best->first;
      threshold = best->second.threshold;
    } else if (auto fallback = balanced_split_rows(d_, rows, min_leaf_)) {
      // Impure but no split gains anything (an XOR pattern, say): split
      // anyway so consistent data is always separable. Pruning usually
      // removes such nodes again.
      std::tie(attribute, threshold) = *fallback;
    } else {
      return;
    }

    std::vector<std::size_t> left_rows;
    std::vector<std::size_t> right_rows;
    for (auto r : rows) {
      (d_.instances[r].at(attribute) <= threshold ? left_rows : right_rows).push_back(r);
    }
    rows.clear();
    rows.shrink_to_fit();

    std::size_t left = tree_.nodes.size();
    tree_.nodes.emplace_back();
    std::size_t right = tree_.nodes.size();
    tree_.nodes.emplace_back();
    tree_.nodes[index].attribute = attribute;
    tree_.nodes[index].threshold = threshold;
    tree_.nodes[index].left = left;
    tree_.nodes[index].right = right;
    grow_node(left, left_rows);
    grow_node(right, right_rows);
  }

  const Dataset& d_;
  int min_leaf_;
  Tree tree_;
};

struct Pruner {
  const Tree& in;
  double cf;
  Tree out;

  // Copies node `i` into `out` (at `slot`), pruned. Returns the subtree's
  // estimated error count.
  double visit(std::size_t i, std::size_t slot) {
    const TreeNode& node = in.nodes[i];
    out.nodes[slot].counts = node.counts;
    double as_leaf = leaf_error_estimate(node.counts, cf);
    if (node.is_leaf()) return as_leaf;

    std::size_t left = out.nodes.size();
    out.nodes.emplace_back();
    std::size_t right = out.nodes.size();
    out.nodes.emplace_back();
    double subtree = visit(node.left, left) + visit(node.right, right);
    if (as_leaf <= subtree) {
      // Collapse: discard the children just copied (they are the tail).
      out.nodes.resize(left);
      return as_leaf;
    }
    out.nodes[slot].attribute = node.attribute;
    out.nodes[slot].threshold = node.threshold;
    out.nodes[slot].left = left;
    out.nodes[slot].right = right;
    return subtree;
  }
};

}  // namespace detail

/// Bottom-up subtree replacement. A node becomes a leaf when its own error
/// estimate does not exceed the summed estimates of its (already pruned)
/// children. confidence >= 1 returns the tree unchanged.
inline Tree prune_tree(const Tree& tree, double confidence) {
  if (confidence >= 1.0 || tree.nodes.empty()) return tree;
  if (confidence <= 0.0) throw std::invalid_argument("confidence must be positive");
  detail::Pruner p{tree, confidence, {}};
  p.out.nodes.emplace_back();
  p.visit(0, 0);
  return std::move(p.out);
}

/// Fits normalization statistics on `d`, grows the tree on the normalized
/// instances and prunes it.
inline TreeModel build_tree(const Dataset& d, const LearnerParams& params = {}) {
  validate(params);
  if (d.empty()) throw std::invalid_argument("cannot build a tree from an empty dataset");
  for (const auto& inst : d.instances) {
    if (!inst.complete()) throw std::invalid_argument("training instances must be complete (clean the data first)");
    detail::class_index(inst);
  }
  TreeModel model;
  model.params = params;
  if (d.size() >= 2) {
    model.norm = fit_norm_stats(d, params.norm);
  } else {
    model.norm.method = params.norm;
    for (std::size_t a = 0; a < kFeatureCount; ++a) {
      model.norm.center[a] = d.instances[0].at(a);
      model.norm.scale[a] = params.norm == NormMethod::kZScore ? 0.0 : d.instances[0].at(a);
    }
  }
  Dataset normalized = apply_norm(d, model.norm);
  Tree grown = detail::Grower(normalized, params.min_leaf).grow();
  model.tree = prune_tree(grown, params.confidence);
  return model;
}

inline TreeModel build_tree(const Dataset& d, int min_leaf, double confidence) {
  LearnerParams p;
  p.min_leaf = min_leaf;
  p.confidence = confidence;
  return build_tree(d, p);
}

struct Prediction {
  int label = 0;
  std::array<double, 2> probabilities{0.5, 0.5};  // P(class 0), P(class 1)
};

/// Leaf reached by an already-normalized instance.
inline const TreeNode& leaf_for(const Tree& tree, const Instance& normalized) {
  const TreeNode* node = &tree.root();
  while (!node->is_leaf()) {
    double x = normalized.at(*node->attribute);
    node = &tree.nodes[x <= node->threshold ? node->left : node->right];
  }
  return *node;
}

/// Class = argmax of the leaf counts (ties go to 0, "do not irrigate");
/// probabilities are Laplace-smoothed counts (c + 1) / (n + 2).
inline Prediction predict(const TreeModel& m, const Instance& inst) {
  if (!inst.complete()) throw std::invalid_argument("cannot predict an instance with MISSING values");
  const TreeNode& leaf = leaf_for(m.tree, apply_norm(inst, m.norm));
  double total = leaf.counts[0] + leaf.counts[1];
  Prediction p;
  p.label = leaf.counts[1] > leaf.counts[0] ? 1 : 0;
  p.probabilities = {(leaf.counts[0] + 1) / (total + 2), (leaf.counts[1] + 1) / (total + 2)};
  return p;
}

// ---------------------------------------------------------------------------
// Model file

inline constexpr const char* kModelFormat = "irrigation-c45-model";
inline constexpr int kModelVersion = 1;

class ModelLoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline nlohmann::json node_to_json(const Tree& t, std::size_t i) {
  const TreeNode& n = t.nodes[i];
  nlohmann::json j;
  j["counts"] = {n.counts[0], n.counts[1]};
  if (!n.is_leaf()) {
    j["attribute"] = *n.attribute;
    j["attribute_name"] = kFeatureNames[*n.attribute];
    j["threshold"] = n.threshold;
    j["left"] = node_to_json(t, n.left);
    j["right"] = node_to_json(t, n.right);
  }
  return j;
}

inline std::size_t node_from_json(const nlohmann::json& j, Tree& t, int depth) {
  if (depth > 10'000) throw ModelLoadError("tree nesting too deep");
  if (!j.is_object() || !j.contains("counts")) throw ModelLoadError("tree node without counts");
  const auto& counts = j.at("counts");
  if (!counts.is_array() || counts.size() != 2) throw ModelLoadError("node counts must have 2 entries");
  std::size_t index = t.nodes.size();
  t.nodes.emplace_back();
  TreeNode node;
  node.counts = {counts[0].get<double>(), counts[1].get<double>()};
  if (node.counts[0] < 0 || node.counts[1] < 0 || node.counts[0] + node.counts[1] <= 0) {
    throw ModelLoadError("node counts must be nonnegative with a positive sum");
  }
  if (j.contains("attribute")) {
    auto a = j.at("attribute").get<std::size_t>();
    if (a >= kFeatureCount) throw ModelLoadError("attribute index out of range");
    node.attribute = a;
    node.threshold = j.at("threshold").get<double>();
    node.left = node_from_json(j.at("left"), t, depth + 1);
    node.right = node_from_json(j.at("right"), t, depth + 1);
  }
  t.nodes[index] = node;
  return index;
}

}  // namespace detail

/// Versioned JSON document: format, version, hyperparameters, norm stats and
/// the recursive node structure.
inline std::string serialize_model(const TreeModel& m) {
  nlohmann::json j;
  j["format"] = kModelFormat;
  j["version"] = kModelVersion;
  j["class_values"] = {0, 1};
  j["attributes"] = kFeatureNames;
  j["hyperparameters"] = {{"min_leaf", m.params.min_leaf}, {"confidence", m.params.confidence}};
  nlohmann::json norm;
  norm["method"] = to_string(m.norm.method);
  for (std::size_t a = 0; a < kFeatureCount; ++a) {
    if (m.norm.method == NormMethod::kZScore) {
      norm["attributes"].push_back({{"mean", m.norm.center[a]}, {"stddev", m.norm.scale[a]}});
    } else {
      norm["attributes"].push_back({{"min", m.norm.center[a]}, {"max", m.norm.scale[a]}});
    }
  }
  j["norm"] = norm;
  j["tree"] = detail::node_to_json(m.tree, 0);
  return j.dump(2) + "\n";
}

inline TreeModel deserialize_model(std::string_view text) {
  if (text.find_first_not_of(" \t\r\n") == std::string_view::npos) throw ModelLoadError("empty model file");
  auto j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ModelLoadError("model file is not valid JSON (truncated?)");
  try {
    if (j.at("format").get<std::string>() != kModelFormat) throw ModelLoadError("not a decision tree model file");
    int version = j.at("version").get<int>();
    if (version != kModelVersion) {
      throw ModelLoadError("unsupported model version " + std::to_string(version) + " (expected " +
                           std::to_string(kModelVersion) + ")");
    }
    TreeModel m;
    m.params.min_leaf = j.at("hyperparameters").at("min_leaf").get<int>();
    m.params.confidence = j.at("hyperparameters").at("confidence").get<double>();
    try {
      validate(m.params);
    } catch (const std::invalid_argument& e) {
      throw ModelLoadError(e.what());
    }
    const auto& norm = j.at("norm");
    std::string method = norm.at("method").get<std::string>();
    if (method == "zscore") m.norm.method = NormMethod::kZScore;
    else if (method == "minmax") m.norm.method = NormMethod::kMinMax;
    else throw ModelLoadError("unknown normalization method " + method);
    m.params.norm = m.norm.method;
    const auto& attrs = norm.at("attributes");
    if (!attrs.is_array() || attrs.size() != kFeatureCount) throw ModelLoadError("norm stats must cover 4 attributes");
    for (std::size_t a = 0; a < kFeatureCount; ++a) {
      if (m.norm.method == NormMethod::kZScore) {
        m.norm.center[a] = attrs[a].at("mean").get<double>();
        m.norm.scale[a] = attrs[a].at("stddev").get<double>();
        if (m.norm.scale[a] < 0) throw ModelLoadError("negative stddev");
      } else {
        m.norm.center[a] = attrs[a].at("min").get<double>();
        m.norm.scale[a] = attrs[a].at("max").get<double>();
        if (m.norm.center[a] > m.norm.scale[a]) throw ModelLoadError("min exceeds max");
      }
    }
    detail::node_from_json(j.at("tree"), m.tree, 0);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ModelLoadError(std::string("malformed model file: ") + e.what());
  }
}

/// Indented text rendering with thresholds mapped back to sensor units.
inline std::string describe_tree(const TreeModel& m) {
  std::ostringstream out;
  auto fmt_counts = [](const ClassCounts& c) {
    int label = c[1] > c[0] ? 1 : 0;
    double n = c[0] + c[1];
    double wrong = n - c[label];
    std::string s = std::to_string(label) + " (" + irrigation::detail::shortest(n);
    if (wrong > 0) s += "/" + irrigation::detail::shortest(wrong);
    return s + ")";
  };
  auto walk = [&](auto&& self, std::size_t i, int depth) -> void {
    const TreeNode& n = m.tree.nodes[i];
    if (n.is_leaf()) {
      if (depth == 0) out << ": " << fmt_counts(n.counts) << "\n";
      return;
    }
    double raw = denormalize_value(n.threshold, m.norm, *n.attribute);
    const std::size_t kids[2] = {n.left, n.right};
    const char* ops[2] = {" <= ", " > "};
    for (int side = 0; side < 2; ++side) {
      for (int k = 0; k < depth; ++k) out << "|   ";
      out << kFeatureNames[*n.attribute] << ops[side] << irrigation::detail::trimmed_fixed(raw, 4);
      const TreeNode& child = m.tree.nodes[kids[side]];
      if (child.is_leaf()) {
        out << ": " << fmt_counts(child.counts) << "\n";
      } else {
        out << "\n";
        self(self, kids[side], depth + 1);
      }
    }
  };
  walk(walk, 0, 0);
  out << "\nNumber of Leaves  : \t" << m.tree.leaf_count() << "\n";
  out << "\nSize of the tree : \t" << m.tree.size() << "\n";
  return out.str();
}

}  // namespace irrigation::c45
