#include "salcar/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <Eigen/Core>
#include <unsupported/Eigen/NonLinearOptimization>

#include "salcar/errors.hpp"
#include "salcar/losses.hpp"

namespace salcar {
namespace {

void check_pair(std::span<const double> x, std::span<const double> y, const char* what) {
  if (x.size() != y.size()) {
    throw ShapeError(std::string(what) + ": lengths differ (" + std::to_string(x.size()) + " vs " +
                     std::to_string(y.size()) + ")");
  }
  if (x.size() < 3) throw ShapeError(std::string(what) + ": need at least 3 samples");
}

double pearson(std::span<const double> x, std::span<const double> y, const char* what) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0 || syy == 0) throw NumericError(std::string(what) + ": undefined for a constant input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

struct LogisticFunctor {
  using Scalar = double;
  enum { InputsAtCompileTime = Eigen::Dynamic, ValuesAtCompileTime = Eigen::Dynamic };
  using InputType = Eigen::VectorXd;
  using ValueType = Eigen::VectorXd;
  using JacobianType = Eigen::MatrixXd;

  std::span<const double> x, y;
  int inputs() const { return 4; }
  int values() const { return static_cast<int>(x.size()); }

  int operator()(const Eigen::VectorXd& b, Eigen::VectorXd& fvec) const {
    const LogisticParams p{b[0], b[1], b[2], b[3]};
    for (std::size_t i = 0; i < x.size(); ++i) fvec[i] = p(x[i]) - y[i];
    return 0;
  }
  int df(const Eigen::VectorXd& b, Eigen::MatrixXd& jac) const {
    const double s = std::abs(b[3]) > 1e-12 ? std::abs(b[3]) : 1e-12;
    const double sign = b[3] < 0 ? -1.0 : 1.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double z = (x[i] - b[2]) / s;
      const double g = 1.0 / (1.0 + std::exp(-z));
      const double dg = g * (1.0 - g);
      jac(i, 0) = g;
      jac(i, 1) = 1.0 - g;
      jac(i, 2) = -(b[0] - b[1]) * dg / s;
      jac(i, 3) = -(b[0] - b[1]) * dg * z / s * sign;
    }
    return 0;
  }
};

Correlations correlations(std::span<const double> p, std::span<const double> t, bool logistic_fit) {
  Correlations c;
  c.n = p.size();
  c.srcc = srcc(p, t);
  c.plcc = plcc(p, t, logistic_fit);
  c.krcc = krcc(p, t);
  return c;
}

}  // namespace

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double r = (static_cast<double>(i + j) + 2.0) / 2.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double srcc(std::span<const double> x, std::span<const double> y) {
  check_pair(x, y, "srcc");
  const auto rx = average_ranks(x), ry = average_ranks(y);
  return pearson(rx, ry, "srcc");
}

double LogisticParams::operator()(double x) const {
  const double s = std::abs(b4) > 1e-12 ? std::abs(b4) : 1e-12;
  return (b1 - b2) / (1.0 + std::exp(-(x - b3) / s)) + b2;
}

LogisticParams fit_logistic(std::span<const double> x, std::span<const double> y) {
  check_pair(x, y, "fit_logistic");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double var = 0;
  for (double v : x) var += (v - mx) * (v - mx);
  const double sd = std::sqrt(var / n);
  const auto [ymin, ymax] = std::minmax_element(y.begin(), y.end());
  Eigen::VectorXd b(4);
  b << *ymax, *ymin, mx, sd > 0 ? sd : 1.0;
  if (pearson(x, y, "fit_logistic") < 0) std::swap(b[0], b[1]);
  LogisticFunctor f{x, y};
  Eigen::LevenbergMarquardt<LogisticFunctor> lm(f);
  lm.minimize(b);
  return {b[0], b[1], b[2], b[3]};
}

double plcc(std::span<const double> x, std::span<const double> y, bool logistic_fit) {
  check_pair(x, y, "plcc");
  if (!logistic_fit) return pearson(x, y, "plcc");
  pearson(x, y, "plcc");  // rejects constant inputs before fitting
  const LogisticParams p = fit_logistic(x, y);
  std::vector<double> mapped(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) mapped[i] = p(x[i]);
  return pearson(mapped, y, "plcc");
}

double krcc(std::span<const double> x, std::span<const double> y) {
  check_pair(x, y, "krcc");
  long long concordant = 0, discordant = 0, tied_x = 0, tied_y = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      const double dx = x[i] - x[j], dy = y[i] - y[j];
      if (dx == 0 && dy == 0) continue;
      if (dx == 0) {
        ++tied_x;
      } else if (dy == 0) {
        ++tied_y;
      } else if ((dx > 0) == (dy > 0)) {
        ++concordant;
      } else {
        ++discordant;
      }
    }
  }
  const double n1 = static_cast<double>(concordant + discordant + tied_x);
  const double n2 = static_cast<double>(concordant + discordant + tied_y);
  if (n1 == 0 || n2 == 0) throw NumericError("krcc: undefined when every value is tied");
  return std::clamp(static_cast<double>(concordant - discordant) / std::sqrt(n1 * n2), -1.0, 1.0);
}

EvalReport make_report(std::span<const double> predicted, std::span<const double> truth,
                       std::span<const std::string> distortion_types, bool logistic_fit) {
  EvalReport r;
  static_cast<Correlations&>(r) = correlations(predicted, truth, logistic_fit);
  if (distortion_types.empty()) return r;
  if (distortion_types.size() != predicted.size()) throw ShapeError("make_report: one distortion type per image");
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> groups;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (distortion_types[i].empty()) continue;
    groups[distortion_types[i]].first.push_back(predicted[i]);
    groups[distortion_types[i]].second.push_back(truth[i]);
  }
  for (const auto& [type, g] : groups) {
    if (g.first.size() < 3) continue;
    try {
      r.by_distortion[type] = correlations(g.first, g.second, logistic_fit);
    } catch (const NumericError&) {
      // constant predictions or scores within the group
    }
  }
  return r;
}

std::string format_report(const EvalReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << std::left << std::setw(16) << "subset" << std::right << std::setw(6) << "n" << std::setw(10) << "SRCC"
     << std::setw(10) << "PLCC" << std::setw(10) << "KRCC" << '\n';
  auto row = [&](const std::string& name, const Correlations& c) {
    os << std::left << std::setw(16) << name << std::right << std::setw(6) << c.n << std::setw(10) << c.srcc
       << std::setw(10) << c.plcc << std::setw(10) << c.krcc << '\n';
  };
  row("all", r);
  for (const auto& [type, c] : r.by_distortion) row(type, c);
  return os.str();
}

std::string report_key_values(const EvalReport& r) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "n: " << r.n << "\nsrcc: " << r.srcc << "\nplcc: " << r.plcc << "\nkrcc: " << r.krcc << '\n';
  for (const auto& [type, c] : r.by_distortion) {
    os << type << ".n: " << c.n << '\n'
       << type << ".srcc: " << c.srcc << '\n'
       << type << ".plcc: " << c.plcc << '\n'
       << type << ".krcc: " << c.krcc << '\n';
  }
  return os.str();
}

std::vector<double> predict_records(Network<float>& net, std::span<const ImageRecord> records) {
  std::vector<double> out;
  out.reserve(records.size());
  for (const auto& rec : records) {
    out.push_back(predict(net, tile_validation_quads(rec.source, net.config().patch_size)).score);
  }
  return out;
}

EvalReport evaluate(Network<float>& net, std::span<const ImageRecord> records, bool logistic_fit) {
  if (records.empty()) throw ShapeError("evaluate: empty split");
  const auto pred = predict_records(net, records);
  std::vector<double> truth;
  std::vector<std::string> types;
  for (const auto& rec : records) {
    truth.push_back(rec.score);
    types.push_back(rec.entry.distortion_type);
  }
  return make_report(pred, truth, types, logistic_fit);
}

PatchMaps emit_patch_maps(const Prediction& pred, std::size_t height, std::size_t width, std::size_t patch) {
  const std::size_t rows = height / patch, cols = width / patch;
  if (rows == 0 || cols == 0) throw ShapeError("emit_patch_maps: image smaller than one patch");
  if (pred.regions.size() != rows * cols || pred.weights.size() != pred.regions.size() ||
      pred.qualities.size() != pred.regions.size()) {
    throw ShapeError("emit_patch_maps: prediction does not cover an exhaustive tiling");
  }
  for (std::size_t i = 0; i < pred.regions.size(); ++i) {
    const Rect& r = pred.regions[i];
    if (r.row != (i / cols) * patch || r.col != (i % cols) * patch || r.height != patch || r.width != patch) {
      throw ShapeError("emit_patch_maps: prediction does not cover an exhaustive tiling");
    }
  }
  auto render = [&](const std::vector<double>& v) {
    GrayImage img(cols * patch, rows * patch);
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    for (std::size_t i = 0; i < v.size(); ++i) {
      const float level =
          *hi > *lo ? static_cast<float>(std::round(255.0 * (v[i] - *lo) / (*hi - *lo))) : 128.0f;
      const Rect& r = pred.regions[i];
      for (std::size_t y = 0; y < patch; ++y) {
        for (std::size_t x = 0; x < patch; ++x) img.at(r.row + y, r.col + x) = level;
      }
    }
    return img;
  };
  return {render(pred.qualities), render(normalize_weights(pred.weights))};
}

}  // namespace salcar
