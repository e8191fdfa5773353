#include "salcar/losses.hpp"

#include <algorithm>
#include <cmath>

#include "salcar/errors.hpp"

namespace salcar {

void LossWeights::validate() const {
  if (alpha < 0 || beta < 0 || gamma < 0) throw ConfigError("loss weights must be non-negative");
  if (!(rank_epsilon > 0)) throw ConfigError("rank epsilon must be positive");
}

std::vector<double> normalize_weights(std::span<const double> w) {
  if (w.empty()) throw ShapeError("normalize_weights: empty input");
  double total = 0;
  for (double x : w) {
    if (!(x > 0)) throw ShapeError("normalize_weights: weights must be positive");
    total += x;
  }
  std::vector<double> out(w.begin(), w.end());
  for (auto& x : out) x /= total;
  return out;
}

std::vector<double> saliency_significance(const PriorMap& saliency, std::span<const Rect> regions) {
  double total = 0;
  for (float v : saliency.values) total += v;
  if (!(total > 0)) throw NumericError("saliency_significance: saliency map sums to zero");
  std::vector<double> out;
  out.reserve(regions.size());
  for (const auto& r : regions) {
    if (r.row + r.height > saliency.height || r.col + r.width > saliency.width) {
      throw ShapeError("saliency_significance: region outside the map");
    }
    double acc = 0;
    for (std::size_t y = r.row; y < r.row + r.height; ++y) {
      for (std::size_t x = r.col; x < r.col + r.width; ++x) acc += saliency.at(y, x);
    }
    out.push_back(acc / total);
  }
  return out;
}

double saliency_loss(std::span<const double> w, std::span<const double> v) {
  if (w.size() != v.size()) throw ShapeError("saliency_loss: weight and significance lengths differ");
  const auto wn = normalize_weights(w);
  double acc = 0;
  for (std::size_t i = 0; i < wn.size(); ++i) acc += std::abs(wn[i] - v[i]);
  return acc / static_cast<double>(wn.size());
}

double pairwise_rank_loss(double s_x, double s_y, double f_x, double f_y, double eps) {
  const double ds = s_x - s_y;
  return std::max(0.0, -ds * (f_x - f_y) / (std::abs(ds) + eps));
}

std::vector<double> rank_loss_terms(std::span<const double> scores, std::span<const double> preds, double eps) {
  if (scores.size() != preds.size()) throw ShapeError("rank loss: score and prediction lengths differ");
  if (scores.size() < 2) throw ShapeError("rank loss: batch needs at least two images");
  std::vector<double> terms;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    for (std::size_t j = i + 1; j < scores.size(); ++j) {
      terms.push_back(pairwise_rank_loss(scores[i], scores[j], preds[i], preds[j], eps));
    }
  }
  return terms;
}

double batch_rank_loss(std::span<const double> scores, std::span<const double> preds, double eps) {
  double acc = 0;
  for (double t : rank_loss_terms(scores, preds, eps)) acc += t;
  return acc;
}

double mae_loss(std::span<const double> preds, std::span<const double> truths) {
  if (preds.size() != truths.size()) throw ShapeError("mae_loss: lengths differ");
  if (preds.empty()) throw ShapeError("mae_loss: empty input");
  double acc = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) acc += std::abs(preds[i] - truths[i]);
  return acc / static_cast<double>(preds.size());
}

double total_loss(double mae, double rank, double sal, const LossWeights& weights) {
  return weights.alpha * mae + weights.beta * rank + weights.gamma * sal;
}

namespace {
template <typename T>
Var<T> constant_vector(Tape<T>& tape, std::span<const double> v) {
  std::vector<T> data(v.begin(), v.end());
  return tape.constant(BasicTensor<T>({v.size()}, std::move(data)));
}
}  // namespace

template <typename T>
Var<T> normalize_weights(Var<T> w) {
  for (auto x : w.value().data()) {
    if (!(x > T{0})) throw ShapeError("normalize_weights: weights must be positive");
  }
  return div_scalar(w, sum(w));
}

template <typename T>
Var<T> saliency_loss(Var<T> w, std::span<const double> v) {
  if (w.value().size() != v.size()) throw ShapeError("saliency_loss: weight and significance lengths differ");
  auto wn = normalize_weights(w);
  return mean(abs(sub(wn, constant_vector(*w.tape, v))));
}

template <typename T>
Var<T> batch_rank_loss(Var<T> preds, std::span<const double> scores, double eps) {
  const std::size_t n = preds.value().size();
  if (scores.size() != n) throw ShapeError("rank loss: score and prediction lengths differ");
  if (n < 2) throw ShapeError("rank loss: batch needs at least two images");
  std::vector<Var<T>> terms;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double ds = scores[i] - scores[j];
      const double c = -ds / (std::abs(ds) + eps);
      terms.push_back(relu(scale(sub(select(preds, i), select(preds, j)), c)));
    }
  }
  return sum(stack<T>(terms));
}

template <typename T>
Var<T> mae_loss(Var<T> preds, std::span<const double> truths) {
  if (preds.value().size() != truths.size()) throw ShapeError("mae_loss: lengths differ");
  return mean(abs(sub(preds, constant_vector(*preds.tape, truths))));
}

template <typename T>
Var<T> total_loss(Var<T> mae, Var<T> rank, Var<T> sal, const LossWeights& weights) {
  return add(add(scale(mae, weights.alpha), scale(rank, weights.beta)), scale(sal, weights.gamma));
}

#define SALCAR_INSTANTIATE_LOSSES(T)                                          \
  template Var<T> normalize_weights(Var<T>);                                  \
  template Var<T> saliency_loss(Var<T>, std::span<const double>);             \
  template Var<T> batch_rank_loss(Var<T>, std::span<const double>, double);   \
  template Var<T> mae_loss(Var<T>, std::span<const double>);                  \
  template Var<T> total_loss(Var<T>, Var<T>, Var<T>, const LossWeights&);

SALCAR_INSTANTIATE_LOSSES(float)
SALCAR_INSTANTIATE_LOSSES(double)

}  // namespace salcar
