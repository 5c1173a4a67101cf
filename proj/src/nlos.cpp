#include "optin/nlos.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "optin/error.hpp"

namespace optin {

namespace {

constexpr const char* kFormatTag = "optin.nlos_detector";
constexpr int kFormatVersion = 1;

double sigmoid(double s) { return 1.0 / (1.0 + std::exp(-s)); }

void check_dim(const NlosDetectorModel& m, std::size_t got) {
  if (got != m.feature_dim) {
    throw Error(ErrorKind::DimensionMismatch, "feature vector has " + std::to_string(got) +
                                                  " entries, model expects " +
                                                  std::to_string(m.feature_dim));
  }
}

struct Split {
  int feature = -1;
  double threshold = 0.0;
  double gain = 0.0;
};

// Exact greedy tree growth on gradient/hessian statistics.
class TreeBuilder {
 public:
  TreeBuilder(const std::vector<SignalFeatures>& x, const std::vector<std::vector<int>>& order,
              const std::vector<double>& g, const std::vector<double>& h, const TrainConfig& cfg)
      : x_(x), order_(order), g_(g), h_(h), cfg_(cfg), member_(x.size(), 0) {}

  RegressionTree build(const std::vector<int>& rows) {
    tree_.nodes.clear();
    grow(rows, 0);
    return tree_;
  }

 private:
  double leaf_value(double gs, double hs) const { return -gs / (hs + cfg_.l2); }
  double score(double gs, double hs) const { return gs * gs / (hs + cfg_.l2); }

  Split best_split(const std::vector<int>& rows) {
    ++stamp_;
    for (int r : rows) member_[r] = stamp_;
    double gs = 0.0, hs = 0.0;
    for (int r : rows) {
      gs += g_[r];
      hs += h_[r];
    }
    const double parent = score(gs, hs);
    Split best;
    const int n = static_cast<int>(rows.size());
    for (std::size_t f = 0; f < order_.size(); ++f) {
      double gl = 0.0, hl = 0.0;
      int nl = 0;
      double prev_value = 0.0;
      bool have_prev = false;
      for (int r : order_[f]) {
        if (member_[r] != stamp_) continue;
        const double v = x_[r][f];
        if (have_prev && v > prev_value && nl >= cfg_.min_samples_leaf &&
            n - nl >= cfg_.min_samples_leaf) {
          const double gain = score(gl, hl) + score(gs - gl, hs - hl) - parent;
          if (gain > best.gain + 1e-12) {
            best.feature = static_cast<int>(f);
            best.threshold = 0.5 * (prev_value + v);
            best.gain = gain;
          }
        }
        gl += g_[r];
        hl += h_[r];
        ++nl;
        prev_value = v;
        have_prev = true;
      }
    }
    return best;
  }

  int grow(const std::vector<int>& rows, int depth) {
    const int id = static_cast<int>(tree_.nodes.size());
    tree_.nodes.emplace_back();
    double gs = 0.0, hs = 0.0;
    for (int r : rows) {
      gs += g_[r];
      hs += h_[r];
    }
    tree_.nodes[id].value = leaf_value(gs, hs);
    if (depth >= cfg_.max_depth) return id;
    const Split s = best_split(rows);
    if (s.feature < 0) return id;

    std::vector<int> left, right;
    for (int r : rows) {
      (x_[r][s.feature] <= s.threshold ? left : right).push_back(r);
    }
    const int l = grow(left, depth + 1);
    const int rgt = grow(right, depth + 1);
    TreeNode& node = tree_.nodes[id];
    node.feature = s.feature;
    node.threshold = s.threshold;
    node.left = l;
    node.right = rgt;
    return id;
  }

  const std::vector<SignalFeatures>& x_;
  const std::vector<std::vector<int>>& order_;
  const std::vector<double>& g_;
  const std::vector<double>& h_;
  const TrainConfig& cfg_;
  std::vector<long> member_;
  long stamp_ = 0;
  RegressionTree tree_;
};

}  // namespace

double RegressionTree::evaluate(std::span<const double> x) const {
  if (nodes.empty()) return 0.0;
  int i = 0;
  while (nodes[i].feature >= 0) {
    i = x[nodes[i].feature] <= nodes[i].threshold ? nodes[i].left : nodes[i].right;
  }
  return nodes[i].value;
}

double NlosDetectorModel::probability(std::span<const double> x) const {
  check_dim(*this, x.size());
  double s = base_score;
  for (const RegressionTree& t : trees) s += t.weight * t.evaluate(x);
  return sigmoid(s);
}

std::vector<double> NlosDetectorModel::probability_batch(const std::vector<SignalFeatures>& xs) const {
  std::vector<double> out(xs.size());
  for (const auto& x : xs) check_dim(*this, x.size());
  std::vector<double> scores(xs.size(), base_score);
  for (const RegressionTree& t : trees) {
    for (std::size_t i = 0; i < xs.size(); ++i) scores[i] += t.weight * t.evaluate(xs[i]);
  }
  std::transform(scores.begin(), scores.end(), out.begin(), sigmoid);
  return out;
}

NlosDetectorModel NlosDetectorModel::constant(LinkClass c, std::size_t feature_dim) {
  NlosDetectorModel m;
  m.feature_dim = feature_dim;
  m.base_score = c == LinkClass::NLoS ? 50.0 : -50.0;
  return m;
}

LinkClass classify(const NlosDetectorModel& model, std::span<const double> x) {
  return model.probability(x) > model.threshold ? LinkClass::NLoS : LinkClass::LoS;
}

std::vector<LinkClass> classify_batch(const NlosDetectorModel& model,
                                      const std::vector<SignalFeatures>& xs) {
  const std::vector<double> p = model.probability_batch(xs);
  std::vector<LinkClass> out(p.size());
  std::transform(p.begin(), p.end(), out.begin(), [&](double v) {
    return v > model.threshold ? LinkClass::NLoS : LinkClass::LoS;
  });
  return out;
}

double log_loss(std::span<const double> probs, const std::vector<LinkClass>& labels) {
  if (probs.size() != labels.size() || probs.empty()) {
    throw Error(ErrorKind::DimensionMismatch, "log_loss inputs differ in length");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = std::clamp(probs[i], 1e-15, 1.0 - 1e-15);
    sum -= labels[i] == LinkClass::NLoS ? std::log(p) : std::log(1.0 - p);
  }
  return sum / static_cast<double>(probs.size());
}

double roc_auc(std::span<const double> scores, const std::vector<LinkClass>& labels) {
  if (scores.size() != labels.size()) {
    throw Error(ErrorKind::DimensionMismatch, "roc_auc inputs differ in length");
  }
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(scores.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && scores[idx[j + 1]] == scores[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = avg;
    i = j + 1;
  }
  double pos = 0.0, neg = 0.0, rank_sum = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == LinkClass::NLoS) {
      pos += 1.0;
      rank_sum += rank[i];
    } else {
      neg += 1.0;
    }
  }
  if (pos == 0.0 || neg == 0.0) return std::nan("");
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

NlosDetectorModel train_detector(const std::vector<SignalFeatures>& features,
                                 const std::vector<LinkClass>& labels, const TrainConfig& cfg,
                                 std::uint64_t seed) {
  if (features.size() != labels.size()) {
    throw Error(ErrorKind::DimensionMismatch, "features and labels differ in length");
  }
  if (features.size() < 20) {
    throw Error(ErrorKind::InsufficientData, "detector training needs at least 20 samples");
  }
  const std::size_t dim = features.front().size();
  for (const auto& f : features) {
    if (f.size() != dim) throw Error(ErrorKind::DimensionMismatch, "ragged feature vectors");
  }
  const auto positives = static_cast<std::size_t>(
      std::count(labels.begin(), labels.end(), LinkClass::NLoS));
  if (positives == 0 || positives == labels.size()) {
    throw Error(ErrorKind::DegenerateLabels, "both LoS and NLoS labels are required");
  }

  const std::size_t n = features.size();
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = labels[i] == LinkClass::NLoS ? 1.0 : 0.0;

  NlosDetectorModel model;
  model.feature_dim = dim;
  const double prior = static_cast<double>(positives) / static_cast<double>(n);
  model.base_score = std::log(prior / (1.0 - prior));

  std::vector<std::vector<int>> order(dim);
  for (std::size_t f = 0; f < dim; ++f) {
    order[f].resize(n);
    std::iota(order[f].begin(), order[f].end(), 0);
    std::stable_sort(order[f].begin(), order[f].end(),
                     [&](int a, int b) { return features[a][f] < features[b][f]; });
  }

  std::mt19937_64 rng(seed);
  std::bernoulli_distribution keep(std::clamp(cfg.subsample, 0.0, 1.0));
  std::vector<double> score(n, model.base_score), g(n), h(n);
  std::vector<int> rows;
  for (int round = 0; round < cfg.rounds; ++round) {
    for (std::size_t i = 0; i < n; ++i) {
      const double p = sigmoid(score[i]);
      g[i] = p - y[i];
      h[i] = std::max(p * (1.0 - p), 1e-12);
    }
    rows.clear();
    for (std::size_t i = 0; i < n; ++i) {
      if (cfg.subsample >= 1.0 || keep(rng)) rows.push_back(static_cast<int>(i));
    }
    if (rows.empty()) continue;
    TreeBuilder builder(features, order, g, h, cfg);
    RegressionTree tree = builder.build(rows);
    tree.weight = cfg.learning_rate;
    for (std::size_t i = 0; i < n; ++i) score[i] += tree.weight * tree.evaluate(features[i]);
    model.trees.push_back(std::move(tree));
  }

  // Never hand back something worse than the prior on its own training data.
  NlosDetectorModel prior_only = model;
  prior_only.trees.clear();
  const auto fitted = model.probability_batch(features);
  const auto constant = prior_only.probability_batch(features);
  if (log_loss(fitted, labels) > log_loss(constant, labels)) return prior_only;
  return model;
}

std::string NlosDetectorModel::to_json() const {
  nlohmann::ordered_json j;
  j["format"] = kFormatTag;
  j["version"] = kFormatVersion;
  j["feature_dim"] = feature_dim;
  j["threshold"] = threshold;
  j["base_score"] = base_score;
  auto arr = nlohmann::ordered_json::array();
  for (const RegressionTree& t : trees) {
    nlohmann::ordered_json jt;
    jt["weight"] = t.weight;
    std::vector<int> feat, left, right;
    std::vector<double> thr, val;
    for (const TreeNode& nd : t.nodes) {
      feat.push_back(nd.feature);
      thr.push_back(nd.threshold);
      left.push_back(nd.left);
      right.push_back(nd.right);
      val.push_back(nd.value);
    }
    jt["feature"] = feat;
    jt["threshold"] = thr;
    jt["left"] = left;
    jt["right"] = right;
    jt["value"] = val;
    arr.push_back(std::move(jt));
  }
  j["trees"] = std::move(arr);
  return j.dump(1);
}

NlosDetectorModel NlosDetectorModel::from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("format").get<std::string>() != kFormatTag || j.at("version").get<int>() != kFormatVersion) {
      throw Error(ErrorKind::SchemaError, "unsupported detector model format/version");
    }
    NlosDetectorModel m;
    m.feature_dim = j.at("feature_dim").get<std::size_t>();
    m.threshold = j.at("threshold").get<double>();
    m.base_score = j.at("base_score").get<double>();
    for (const auto& jt : j.at("trees")) {
      RegressionTree t;
      t.weight = jt.at("weight").get<double>();
      const auto feat = jt.at("feature").get<std::vector<int>>();
      const auto thr = jt.at("threshold").get<std::vector<double>>();
      const auto left = jt.at("left").get<std::vector<int>>();
      const auto right = jt.at("right").get<std::vector<int>>();
      const auto val = jt.at("value").get<std::vector<double>>();
      const std::size_t k = feat.size();
      if (thr.size() != k || left.size() != k || right.size() != k || val.size() != k) {
        throw Error(ErrorKind::SchemaError, "tree arrays differ in length");
      }
      for (std::size_t i = 0; i < k; ++i) {
        const bool leaf = feat[i] < 0;
        const bool children_ok = leaf || (left[i] > static_cast<int>(i) && left[i] < static_cast<int>(k) &&
                                          right[i] > static_cast<int>(i) && right[i] < static_cast<int>(k));
        if (!children_ok || feat[i] >= static_cast<int>(m.feature_dim)) {
          throw Error(ErrorKind::SchemaError, "malformed tree node");
        }
        t.nodes.push_back({feat[i], thr[i], left[i], right[i], val[i]});
      }
      m.trees.push_back(std::move(t));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::SchemaError, std::string("detector model: ") + e.what());
  }
}

void NlosDetectorModel::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path);
  out << to_json() << '\n';
}

NlosDetectorModel NlosDetectorModel::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

}  // namespace optin
