#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace optin {

/// Signal-quality summary for one UWB exchange. Default layout (F = 6):
/// leading-edge-to-peak delay, CIR peak amplitude, CIR total energy, SNR (dB),
/// RSSI (dBm), first-path amplitude. Other dimensions are accepted as long as
/// they match the trained model.
using SignalFeatures = std::vector<double>;

inline constexpr std::size_t kDefaultFeatureDim = 6;

enum class LinkClass : std::uint8_t { LoS = 0, NLoS = 1 };

/// Regression tree stored as a flat node array; node 0 is the root.
/// Internal nodes route `x[feature] <= threshold` to `left`, otherwise `right`.
struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;  // leaf output (log-odds contribution before weighting)
};

struct RegressionTree {
  double weight = 1.0;
  std::vector<TreeNode> nodes;

  double evaluate(std::span<const double> x) const;
};

/// Gradient-boosted tree ensemble with logistic link.
/// p(NLoS | x) = sigmoid(base_score + sum_k weight_k * tree_k(x)).
struct NlosDetectorModel {
  std::size_t feature_dim = kDefaultFeatureDim;
  double threshold = 0.5;
  double base_score = 0.0;
  std::vector<RegressionTree> trees;

  double probability(std::span<const double> x) const;
  std::vector<double> probability_batch(const std::vector<SignalFeatures>& xs) const;

  // Serialised as versioned JSON; doubles round-trip exactly.
  std::string to_json() const;
  static NlosDetectorModel from_json(const std::string& text);
  void save(const std::string& path) const;
  static NlosDetectorModel load(const std::string& path);

  /// Constant detectors, handy for ablations and tests.
  static NlosDetectorModel constant(LinkClass c, std::size_t feature_dim = kDefaultFeatureDim);
};

struct TrainConfig {
  int rounds = 100;
  double learning_rate = 0.1;
  int max_depth = 3;
  int min_samples_leaf = 3;
  double l2 = 1.0;
  /// Row subsampling per round; 1.0 disables it. The seed only matters below 1.0.
  double subsample = 1.0;
};

NlosDetectorModel train_detector(const std::vector<SignalFeatures>& features,
                                 const std::vector<LinkClass>& labels, const TrainConfig& cfg,
                                 std::uint64_t seed);

/// Ties (probability == threshold) resolve to LoS.
LinkClass classify(const NlosDetectorModel& model, std::span<const double> x);

std::vector<LinkClass> classify_batch(const NlosDetectorModel& model,
                                      const std::vector<SignalFeatures>& xs);

/// Rank-based ROC AUC with average ranks for ties. Scores are P(NLoS).
double roc_auc(std::span<const double> scores, const std::vector<LinkClass>& labels);

/// Mean binary cross-entropy of predicted NLoS probabilities.
double log_loss(std::span<const double> probs, const std::vector<LinkClass>& labels);

}  // namespace optin
