#pragma once

#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "salcar/dataset.hpp"
#include "salcar/image.hpp"
#include "salcar/network.hpp"

namespace salcar {

// Spearman correlation with average ranks for ties.
double srcc(std::span<const double> x, std::span<const double> y);
// Pearson correlation; with logistic_fit, x is first mapped through a fitted
// four-parameter logistic toward y.
double plcc(std::span<const double> x, std::span<const double> y, bool logistic_fit = false);
// Kendall tau-b.
double krcc(std::span<const double> x, std::span<const double> y);

// Ranks starting at 1; tied values share the mean of their positions.
std::vector<double> average_ranks(std::span<const double> x);

struct LogisticParams {
  double b1 = 0, b2 = 0, b3 = 0, b4 = 1;
  double operator()(double x) const;
};
LogisticParams fit_logistic(std::span<const double> x, std::span<const double> y);

struct Correlations {
  double srcc = 0, plcc = 0, krcc = 0;
  std::size_t n = 0;
};

struct EvalReport : Correlations {
  // Distortion types with at least three images and non-degenerate scores.
  std::map<std::string, Correlations> by_distortion;
};

EvalReport make_report(std::span<const double> predicted, std::span<const double> truth,
                       std::span<const std::string> distortion_types, bool logistic_fit = false);
// Aligned human-readable table.
std::string format_report(const EvalReport& r);
// "key: value" lines.
std::string report_key_values(const EvalReport& r);

// Predicted score for each record on its exhaustive tiling.
std::vector<double> predict_records(Network<float>& net, std::span<const ImageRecord> records);
EvalReport evaluate(Network<float>& net, std::span<const ImageRecord> records, bool logistic_fit = false);

struct PatchMaps {
  GrayImage quality;
  GrayImage weight;
};

// Fills each tile with its q_i (resp. normalized weight) min-max scaled to
// [0,255]; constant values map to 128. `pred` must come from an exhaustive
// tiling of a height x width image.
PatchMaps emit_patch_maps(const Prediction& pred, std::size_t height, std::size_t width, std::size_t patch = 32);

}  // namespace salcar
