#pragma once

#include <span>
#include <vector>

#include "salcar/autodiff.hpp"
#include "salcar/image.hpp"

namespace salcar {

struct LossWeights {
  double alpha = 1.0;   // MAE
  double beta = 10.0;   // rank
  double gamma = 1.0;   // saliency
  double rank_epsilon = 1e-6;

  void validate() const;
};

// Pixel rectangle inside a map.
struct Rect {
  std::size_t row = 0;
  std::size_t col = 0;
  std::size_t height = 0;
  std::size_t width = 0;
};

std::vector<double> normalize_weights(std::span<const double> w);
// Share of the map's total saliency inside each rect.
std::vector<double> saliency_significance(const PriorMap& saliency, std::span<const Rect> regions);
// Mean |w_hat - v| with w normalized to sum to one.
double saliency_loss(std::span<const double> w, std::span<const double> v);
double pairwise_rank_loss(double s_x, double s_y, double f_x, double f_y, double eps);
// One term per unordered pair (i < j) in lexicographic order.
std::vector<double> rank_loss_terms(std::span<const double> scores, std::span<const double> preds, double eps);
double batch_rank_loss(std::span<const double> scores, std::span<const double> preds, double eps);
double mae_loss(std::span<const double> preds, std::span<const double> truths);
double total_loss(double mae, double rank, double sal, const LossWeights& weights);

// Differentiable counterparts used during training.
template <typename T>
Var<T> normalize_weights(Var<T> w);
template <typename T>
Var<T> saliency_loss(Var<T> w, std::span<const double> v);
template <typename T>
Var<T> batch_rank_loss(Var<T> preds, std::span<const double> scores, double eps);
template <typename T>
Var<T> mae_loss(Var<T> preds, std::span<const double> truths);
template <typename T>
Var<T> total_loss(Var<T> mae, Var<T> rank, Var<T> sal, const LossWeights& weights);

}  // namespace salcar
