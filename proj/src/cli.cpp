#include "salcar/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>

#include "salcar/config.hpp"
#include "salcar/dataset.hpp"
#include "salcar/errors.hpp"
#include "salcar/image.hpp"
#include "salcar/metrics.hpp"
#include "salcar/network.hpp"
#include "salcar/priors.hpp"
#include "salcar/trainer.hpp"

namespace fs = std::filesystem;

namespace salcar {
namespace {

struct Common {
  std::string out_dir = "out";
  std::size_t threads = 1;
  std::string config = "default";
  std::optional<std::uint64_t> seed;
};

std::uint64_t resolve_seed(const Common& c, const Config& cfg) {
  if (c.seed) return *c.seed;
  if (const char* env = std::getenv("JSCR_SEED"); env && *env) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (used == std::string(env).size()) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError(std::string("JSCR_SEED is not an unsigned integer: '") + env + "'");
  }
  return cfg.train.seed;
}

std::string format_score(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

QuadSource source_from_files(const std::string& ref, const std::string& dst, const std::string& sal,
                             const std::string& jnd, const Config& cfg) {
  ManifestEntry e;
  e.reference_path = ref;
  e.distorted_path = dst;
  if (!sal.empty()) e.saliency_path = sal;
  if (!jnd.empty()) e.jnd_path = jnd;
  return load_quad_source(e, cfg.train, cfg.network.image_channels);
}

SplitPlan make_plan(const std::vector<ManifestEntry>& entries, const std::string& split_file,
                    const std::string& ratios, std::uint64_t seed) {
  if (!split_file.empty()) return load_split_plan(split_file);
  std::vector<std::string> ids;
  for (const auto& e : entries) ids.push_back(e.reference_id());
  if (ratios.empty()) {
    SplitPlan plan;
    for (const auto& id : ids) plan[id] = Split::train;
    return plan;
  }
  return split_by_reference(ids, parse_split_counts(ratios), seed);
}

std::vector<ImageRecord> select(const std::vector<ImageRecord>& all, const SplitPlan& plan, Split which) {
  std::vector<ImageRecord> out;
  for (const auto& r : all) {
    auto it = plan.find(r.entry.reference_id());
    if (it == plan.end()) throw ConfigError("split plan has no entry for reference '" + r.entry.reference_id() + "'");
    if (it->second == which) out.push_back(r);
  }
  return out;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Full-reference image quality assessment with JND and saliency priors"};
  app.name("jndsalcar");
  app.require_subcommand(1);
  Common common;
  app.add_option("--out-dir", common.out_dir, "Directory receiving every output file");
  app.add_option("--threads", common.threads, "Worker threads for image loading")->check(CLI::PositiveNumber);

  auto add_config = [&](CLI::App* cmd) { cmd->add_option("--config", common.config, "Config file or 'default'"); };
  auto add_seed = [&](CLI::App* cmd) { cmd->add_option("--seed", common.seed, "Seed (falls back to JSCR_SEED)"); };

  std::string ref, dst, sal, jnd, manifest, ratios, ckpt, resume, split_name = "test", split_file, image_id;
  bool logistic = false;

  auto* priors = app.add_subcommand("priors", "Write saliency, JND and SID maps");
  priors->add_option("ref", ref, "Reference image")->required();
  priors->add_option("dst", dst, "Distorted image");
  add_config(priors);

  auto* split = app.add_subcommand("split", "Assign references to train/val/test");
  split->add_option("--manifest", manifest)->required();
  split->add_option("--ratios", ratios, "Reference counts train/val/test, e.g. 15/5/5")->required();
  add_seed(split);

  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("--manifest", manifest)->required();
  train->add_option("--resume", resume, "Checkpoint to continue from");
  train->add_option("--split-file", split_file, "Split plan written by 'split'");
  train->add_option("--ratios", ratios, "Reference counts train/val/test");
  add_config(train);
  add_seed(train);

  auto* predict_cmd = app.add_subcommand("predict", "Print the quality score of one image");
  auto* maps = app.add_subcommand("maps", "Write patch quality and weight maps");
  for (auto* cmd : {predict_cmd, maps}) {
    cmd->add_option("--ckpt", ckpt)->required();
    cmd->add_option("--ref", ref)->required();
    cmd->add_option("--dst", dst)->required();
    cmd->add_option("--sal", sal, "Saliency map (computed when omitted)");
    cmd->add_option("--jnd", jnd, "JND probability map (computed when omitted)");
    add_config(cmd);
  }
  maps->add_option("--id", image_id, "Output name stem (defaults to the distorted file stem)");

  auto* eval = app.add_subcommand("eval", "Report SRCC/PLCC/KRCC on a split");
  eval->add_option("--ckpt", ckpt)->required();
  eval->add_option("--manifest", manifest)->required();
  eval->add_option("--split", split_name, "train, val, test or all")
      ->check(CLI::IsMember({"train", "val", "test", "all"}));
  eval->add_option("--split-file", split_file, "Split plan written by 'split'");
  eval->add_option("--ratios", ratios, "Reference counts train/val/test");
  eval->add_flag("--logistic-fit", logistic, "Fit a 4-parameter logistic before PLCC");
  add_config(eval);
  add_seed(eval);

  auto* params = app.add_subcommand("params", "Print the trainable parameter count");
  add_config(params);

  std::vector<std::string> rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }

  try {
    const Config cfg = load_config(common.config);
    const fs::path out_dir = common.out_dir;

    if (*params) {
      cfg.network.validate();
      const Network<float> net(cfg.network, 0);
      out << count_parameters(net.params()) << '\n';
      return kExitOk;
    }

    if (*priors) {
      fs::create_directories(out_dir);
      const GrayImage r = to_luma(load_color_image(ref));
      const std::string stem = fs::path(dst.empty() ? ref : dst).stem().string();
      save_prior(out_dir / (fs::path(ref).stem().string() + ".sal.png"), compute_saliency_mbd(r, cfg.train.saliency_passes));
      if (!dst.empty()) {
        const GrayImage d = to_luma(load_color_image(dst));
        save_prior(out_dir / (stem + ".jnd.png"), compute_jnd_probability(r, d, cfg.train.jnd));
        save_prior(out_dir / (stem + ".sid.png"), compute_sid_map(r, d));
      }
      return kExitOk;
    }

    if (*split) {
      const auto entries = read_manifest(manifest);
      const auto plan = make_plan(entries, "", ratios, resolve_seed(common, cfg));
      fs::create_directories(out_dir);
      save_split_plan(out_dir / "split.csv", plan);
      std::size_t counts[3] = {0, 0, 0};
      for (const auto& [id, s] : plan) ++counts[static_cast<int>(s)];
      out << "train " << counts[0] << "\nval " << counts[1] << "\ntest " << counts[2] << '\n';
      return kExitOk;
    }

    if (*train) {
      Config c = cfg;
      c.train.seed = resolve_seed(common, cfg);
      if (!ratios.empty()) c.train.split_ratios = ratios;
      const auto entries = read_manifest(manifest);
      const auto plan = make_plan(entries, split_file, c.train.split_ratios, c.train.seed);
      const auto records = load_records(entries, c.train, c.network.image_channels, common.threads);
      const auto tr = select(records, plan, Split::train);
      const auto va = select(records, plan, Split::val);
      fs::create_directories(out_dir);
      save_split_plan(out_dir / "split.csv", plan);
      FitOptions opts;
      opts.out_dir = out_dir;
      if (!resume.empty()) opts.resume = fs::path(resume);
      opts.on_epoch = [&](const EpochSummary& s) {
        out << "epoch " << s.epoch + 1 << " loss " << format_score(s.train_loss) << " val_mae "
            << format_score(s.val_mae) << (s.improved ? " *" : "") << '\n';
      };
      const FitResult r = fit(c, tr, va, opts);
      out << "best " << r.best_checkpoint.string() << '\n';
      return kExitOk;
    }

    if (*predict_cmd || *maps) {
      Network<float> net = network_from_checkpoint(load_checkpoint(ckpt));
      const QuadSource src = source_from_files(ref, dst, sal, jnd, cfg);
      const std::size_t patch = net.config().patch_size;
      const Prediction p = predict(net, tile_validation_quads(src, patch));
      if (*predict_cmd) {
        out << format_score(p.score) << '\n';
        return kExitOk;
      }
      const PatchMaps m = emit_patch_maps(p, src.height(), src.width(), patch);
      const std::string stem = image_id.empty() ? fs::path(dst).stem().string() : image_id;
      fs::create_directories(out_dir);
      save_gray_image(out_dir / (stem + ".q.png"), m.quality);
      save_gray_image(out_dir / (stem + ".w.png"), m.weight);
      out << "score " << format_score(p.score) << '\n';
      return kExitOk;
    }

    if (*eval) {
      Network<float> net = network_from_checkpoint(load_checkpoint(ckpt));
      const auto entries = read_manifest(manifest);
      const auto records = load_records(entries, cfg.train, net.config().image_channels, common.threads);
      std::vector<ImageRecord> chosen;
      if (split_name == "all") {
        chosen = records;
      } else {
        if (split_file.empty() && ratios.empty() && cfg.train.split_ratios.empty()) {
          throw ConfigError("eval --split " + split_name + " needs --split-file or --ratios");
        }
        const auto plan = make_plan(entries, split_file, ratios.empty() ? cfg.train.split_ratios : ratios,
                                    resolve_seed(common, cfg));
        chosen = select(records, plan, parse_split(split_name));
      }
      const EvalReport report = evaluate(net, chosen, logistic);
      out << format_report(report);
      fs::create_directories(out_dir);
      std::ofstream f(out_dir / "eval_report.txt");
      f << report_key_values(report);
      if (!f) throw IoError("cannot write " + (out_dir / "eval_report.txt").string());
      return kExitOk;
    }
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << '\n';
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    err << "I/O error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace salcar
