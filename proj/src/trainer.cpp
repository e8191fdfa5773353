#include "salcar/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "salcar/errors.hpp"
#include "salcar/losses.hpp"

namespace salcar {
namespace {

std::string fmt(double v, int digits = 9) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

void require_finite(const char* name, double value, const StepLosses& l) {
  if (std::isfinite(value)) return;
  std::ostringstream os;
  os << "non-finite " << name << " loss (L_mae=" << fmt(l.mae) << ", L_rank=" << fmt(l.rank)
     << ", L_sal=" << fmt(l.sal) << ", L_tot=" << fmt(l.total) << ", predictions=[";
  for (std::size_t i = 0; i < l.predictions.size(); ++i) os << (i ? ", " : "") << fmt(l.predictions[i]);
  os << "])";
  throw NumericError(os.str());
}

AdamOptions adam_options(const TrainConfig& t) {
  return {t.learning_rate, t.adam_beta1, t.adam_beta2, t.adam_eps};
}

std::map<std::string, std::string> state_meta(const TrainState& s, std::uint64_t seed) {
  return {{"epoch", std::to_string(s.epoch)},
          {"step", std::to_string(s.step)},
          {"best_val", fmt(s.best_val, 17)},
          {"seed", std::to_string(seed)}};
}

}  // namespace

StepLosses train_step(Network<float>& net, AdamState<float>& adam, std::span<const TrainItem> items,
                      const LossWeights& weights) {
  if (items.size() < 2) throw ShapeError("train_step: a batch needs at least two images");
  Tape<float> tape;
  Binding<float> b(tape, net.params());
  std::vector<Var<float>> scores, sal_terms;
  std::vector<double> truths;
  for (const auto& item : items) {
    if (!item.saliency) throw ShapeError("train_step: missing saliency map");
    const PatchBatch batch = make_batch(item.quads);
    const auto out = net.forward(b, batch);
    scores.push_back(out.score);
    const auto v = saliency_significance(*item.saliency, batch.regions);
    sal_terms.push_back(saliency_loss(out.w, v));
    truths.push_back(item.score);
  }
  const Var<float> preds = stack<float>(scores);
  const Var<float> l_mae = mae_loss(preds, truths);
  const Var<float> l_rank = batch_rank_loss(preds, truths, weights.rank_epsilon);
  const Var<float> l_sal = mean(stack<float>(sal_terms));
  const Var<float> l_tot = total_loss(l_mae, l_rank, l_sal, weights);

  StepLosses r;
  r.mae = l_mae.value()[0];
  r.rank = l_rank.value()[0];
  r.sal = l_sal.value()[0];
  r.total = l_tot.value()[0];
  for (float p : preds.value().data()) r.predictions.push_back(p);
  require_finite("L_mae", r.mae, r);
  require_finite("L_rank", r.rank, r);
  require_finite("L_sal", r.sal, r);
  require_finite("L_tot", r.total, r);

  tape.backward(l_tot);
  adam_step(net.params(), adam);
  return r;
}

double validate(Network<float>& net, std::span<const ImageRecord> records) {
  if (records.empty()) throw ShapeError("validate: empty split");
  double acc = 0.0;
  for (const auto& rec : records) {
    const auto quads = tile_validation_quads(rec.source, net.config().patch_size);
    acc += std::abs(predict(net, quads).score - rec.score);
  }
  return acc / static_cast<double>(records.size());
}

FitResult fit(const Config& cfg, std::span<const ImageRecord> train, std::span<const ImageRecord> val,
              const FitOptions& options) {
  cfg.network.validate();
  cfg.train.validate();
  if (train.empty()) throw ShapeError("fit: empty training split");
  const TrainConfig& tc = cfg.train;
  if (val.empty()) val = train;

  std::filesystem::create_directories(options.out_dir);
  FitResult result;
  result.best_checkpoint = options.out_dir / "best.ckpt";
  result.last_checkpoint = options.out_dir / "last.ckpt";
  result.log_path = options.out_dir / "train_log.csv";

  std::optional<Network<float>> net;
  AdamState<float> adam;
  TrainState& state = result.state;
  if (options.resume) {
    const Checkpoint ck = load_checkpoint(*options.resume);
    net.emplace(network_from_checkpoint(ck));
    if (net->config().hash() != cfg.network.hash()) {
      throw ConfigError("resume checkpoint was trained with a different network configuration");
    }
    adam = adam_from_checkpoint(ck, net->params(), adam_options(tc));
    auto get = [&](const char* key) {
      auto it = ck.meta.find(key);
      if (it == ck.meta.end()) throw IoError(std::string("resume checkpoint lacks '") + key + "'");
      return it->second;
    };
    state.epoch = std::stoull(get("epoch"));
    state.step = std::stoull(get("step"));
    state.best_val = std::stod(get("best_val"));
    if (std::stoull(get("seed")) != tc.seed) throw ConfigError("resume checkpoint was trained with a different seed");
    if (!std::filesystem::exists(result.best_checkpoint)) save_checkpoint(result.best_checkpoint, ck);
  } else {
    net.emplace(cfg.network, tc.seed);
    adam = AdamState<float>(net->params(), adam_options(tc));
  }

  std::ofstream log;
  if (options.resume && std::filesystem::exists(result.log_path)) {
    log.open(result.log_path, std::ios::app);
  } else {
    log.open(result.log_path, std::ios::trunc);
    log << "step,epoch,L_mae,L_rank,L_sal,L_tot\n";
  }
  if (!log) throw IoError("cannot write training log " + result.log_path.string());

  auto checkpoint = [&] { return make_checkpoint(*net, &adam, state_meta(state, tc.seed)); };
  if (tc.max_epochs == 0 || state.epoch == 0) {
    const Checkpoint init = checkpoint();
    if (!options.resume) save_checkpoint(result.best_checkpoint, init);
    if (tc.max_epochs == 0) {
      save_checkpoint(result.last_checkpoint, init);
      state.best_checkpoint = result.best_checkpoint;
      return result;
    }
  }

  const std::size_t patch = cfg.network.patch_size;
  std::vector<std::vector<PatchQuad>> quads(train.size());
  for (; state.epoch < tc.max_epochs; ++state.epoch) {
    const std::size_t epoch = state.epoch;
    const std::uint64_t sample_epoch = tc.resample_patches ? epoch : 0;
    for (std::size_t i = 0; i < train.size(); ++i) {
      if (quads[i].empty() || tc.resample_patches) {
        quads[i] = sample_training_quads(train[i].source, tc.patches_per_image,
                                         derive_seed(tc.seed, sample_epoch, i + 1), patch);
      }
    }
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuffle_rng(derive_seed(tc.seed, epoch, 0));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
      const std::size_t end = std::min(order.size(), start + tc.batch_size);
      if (end - start < 2) break;
      std::vector<TrainItem> items;
      for (std::size_t j = start; j < end; ++j) {
        const auto& rec = train[order[j]];
        items.push_back({quads[order[j]], rec.score, &rec.source.saliency});
      }
      const StepLosses l = train_step(*net, adam, items, tc.loss);
      ++state.step;
      ++steps;
      loss_sum += l.total;
      log << state.step << ',' << epoch << ',' << fmt(l.mae) << ',' << fmt(l.rank) << ',' << fmt(l.sal) << ','
          << fmt(l.total) << '\n';
    }
    log.flush();

    EpochSummary summary;
    summary.epoch = epoch;
    summary.train_loss = steps ? loss_sum / static_cast<double>(steps) : 0.0;
    summary.val_mae = validate(*net, val);
    state.epoch = epoch + 1;
    if (summary.val_mae < state.best_val) {
      state.best_val = summary.val_mae;
      summary.improved = true;
      save_checkpoint(result.best_checkpoint, checkpoint());
    }
    save_checkpoint(result.last_checkpoint, checkpoint());
    state.epoch = epoch;
    if (options.on_epoch) options.on_epoch(summary);
  }
  state.best_checkpoint = result.best_checkpoint;
  return result;
}

}  // namespace salcar
