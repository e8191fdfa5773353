#include "salcar/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "salcar/errors.hpp"

namespace salcar {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key + ": expected an unsigned integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_size(key, trim(item)));
  if (out.empty()) throw ConfigError(key + ": expected a comma-separated list");
  return out;
}

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

using Setter = std::function<void(Config&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"patch_size", [](Config& c, auto& k, auto& v) { c.network.patch_size = parse_size(k, v); }},
      {"image_channels", [](Config& c, auto& k, auto& v) { c.network.image_channels = parse_size(k, v); }},
      {"stem_channels", [](Config& c, auto& k, auto& v) { c.network.stem_channels = parse_size(k, v); }},
      {"sal_channels", [](Config& c, auto& k, auto& v) { c.network.sal_channels = parse_list(k, v); }},
      {"salcar_channels", [](Config& c, auto& k, auto& v) { c.network.salcar_channels = parse_list(k, v); }},
      {"splitcar_channels", [](Config& c, auto& k, auto& v) { c.network.splitcar_channels = parse_list(k, v); }},
      {"head_hidden", [](Config& c, auto& k, auto& v) { c.network.head_hidden = parse_size(k, v); }},
      {"ca_ratio", [](Config& c, auto& k, auto& v) { c.network.ca_ratio = parse_size(k, v); }},
      {"split_count", [](Config& c, auto& k, auto& v) { c.network.split_count = parse_size(k, v); }},
      {"enable_ca", [](Config& c, auto& k, auto& v) { c.network.enable_ca = parse_bool(k, v); }},
      {"enable_saliency_fusion",
       [](Config& c, auto& k, auto& v) { c.network.enable_saliency_fusion = parse_bool(k, v); }},
      {"enable_skips", [](Config& c, auto& k, auto& v) { c.network.enable_skips = parse_bool(k, v); }},
      {"enable_split", [](Config& c, auto& k, auto& v) { c.network.enable_split = parse_bool(k, v); }},
      {"leaky_slope", [](Config& c, auto& k, auto& v) { c.network.leaky_slope = parse_double(k, v); }},
      {"weight_activation",
       [](Config& c, auto& k, auto& v) {
         if (v == "softplus") {
           c.network.weight_activation = WeightActivation::softplus;
         } else if (v == "exp") {
           c.network.weight_activation = WeightActivation::exp;
         } else {
           throw ConfigError(k + ": expected softplus or exp, got '" + v + "'");
         }
       }},
      {"batch_size", [](Config& c, auto& k, auto& v) { c.train.batch_size = parse_size(k, v); }},
      {"patches_per_image", [](Config& c, auto& k, auto& v) { c.train.patches_per_image = parse_size(k, v); }},
      {"max_epochs", [](Config& c, auto& k, auto& v) { c.train.max_epochs = parse_size(k, v); }},
      {"learning_rate", [](Config& c, auto& k, auto& v) { c.train.learning_rate = parse_double(k, v); }},
      {"adam_beta1", [](Config& c, auto& k, auto& v) { c.train.adam_beta1 = parse_double(k, v); }},
      {"adam_beta2", [](Config& c, auto& k, auto& v) { c.train.adam_beta2 = parse_double(k, v); }},
      {"adam_eps", [](Config& c, auto& k, auto& v) { c.train.adam_eps = parse_double(k, v); }},
      {"seed", [](Config& c, auto& k, auto& v) { c.train.seed = parse_u64(k, v); }},
      {"alpha", [](Config& c, auto& k, auto& v) { c.train.loss.alpha = parse_double(k, v); }},
      {"beta", [](Config& c, auto& k, auto& v) { c.train.loss.beta = parse_double(k, v); }},
      {"gamma", [](Config& c, auto& k, auto& v) { c.train.loss.gamma = parse_double(k, v); }},
      {"rank_epsilon", [](Config& c, auto& k, auto& v) { c.train.loss.rank_epsilon = parse_double(k, v); }},
      {"resample_patches", [](Config& c, auto& k, auto& v) { c.train.resample_patches = parse_bool(k, v); }},
      {"score_polarity",
       [](Config& c, auto& k, auto& v) {
         if (v == "mos") {
           c.train.polarity = ScorePolarity::mos;
         } else if (v == "dmos") {
           c.train.polarity = ScorePolarity::dmos;
         } else {
           throw ConfigError(k + ": expected mos or dmos, got '" + v + "'");
         }
       }},
      {"split_ratios", [](Config& c, auto&, auto& v) { c.train.split_ratios = v; }},
      {"saliency_passes",
       [](Config& c, auto& k, auto& v) { c.train.saliency_passes = static_cast<int>(parse_size(k, v)); }},
      {"jnd_beta", [](Config& c, auto& k, auto& v) { c.train.jnd.beta = parse_double(k, v); }},
      {"jnd_luminance_gain", [](Config& c, auto& k, auto& v) { c.train.jnd.luminance_gain = parse_double(k, v); }},
      {"jnd_masking_reference",
       [](Config& c, auto& k, auto& v) { c.train.jnd.masking_reference = parse_double(k, v); }},
      {"jnd_masking_exponent",
       [](Config& c, auto& k, auto& v) { c.train.jnd.masking_exponent = parse_double(k, v); }},
  };
  return table;
}

}  // namespace

void NetworkConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string(name) + " must be positive");
  };
  positive(patch_size, "patch_size");
  positive(stem_channels, "stem_channels");
  positive(head_hidden, "head_hidden");
  positive(ca_ratio, "ca_ratio");
  positive(split_count, "split_count");
  if (image_channels != 1 && image_channels != 3) throw ConfigError("image_channels must be 1 or 3");
  if (salcar_channels.empty()) throw ConfigError("salcar_channels must list at least one stage");
  if (enable_saliency_fusion && salcar_channels.size() != 2) {
    throw ConfigError("saliency fusion requires exactly two SalCAR stages");
  }
  if (enable_saliency_fusion && sal_channels.size() != 2) throw ConfigError("sal_channels must list two widths");
  for (auto c : sal_channels) positive(c, "sal_channels");
  if (!(leaky_slope > 0.0 && leaky_slope < 1.0)) throw ConfigError("leaky_slope must be in (0,1)");
  const std::size_t stages = salcar_channels.size() + splitcar_channels.size();
  if (stages >= 63 || patch_size % (std::size_t{1} << stages) != 0) {
    throw ConfigError("patch_size " + std::to_string(patch_size) + " is not divisible by 2^" +
                      std::to_string(stages));
  }
  std::size_t in = stem_channels;
  for (std::size_t i = 0; i < salcar_channels.size(); ++i) {
    const std::size_t out = salcar_channels[i];
    if (out == 0 || out % 2 != 0) throw ConfigError("SalCAR output channels must be positive and even");
    if (enable_ca && (out / 2) % ca_ratio != 0) {
      throw ConfigError("SalCAR stage " + std::to_string(i + 1) + ": attention width " + std::to_string(out / 2) +
                        " is not divisible by ca_ratio " + std::to_string(ca_ratio));
    }
    in = out;
  }
  for (std::size_t i = 0; i < splitcar_channels.size(); ++i) {
    const std::size_t out = splitcar_channels[i];
    positive(out, "splitcar_channels");
    if (enable_ca && in % ca_ratio != 0) {
      throw ConfigError("SplitCAR stage " + std::to_string(i + 1) + ": input width " + std::to_string(in) +
                        " is not divisible by ca_ratio " + std::to_string(ca_ratio));
    }
    if (enable_split && out % split_count != 0) {
      throw ConfigError("SplitCAR stage " + std::to_string(i + 1) + ": output width " + std::to_string(out) +
                        " is not divisible by split_count " + std::to_string(split_count));
    }
    in = out;
  }
}

std::size_t NetworkConfig::final_spatial() const {
  return patch_size >> (salcar_channels.size() + splitcar_channels.size());
}

std::size_t NetworkConfig::feature_length() const {
  const std::size_t c = splitcar_channels.empty() ? salcar_channels.back() : splitcar_channels.back();
  return c * final_spatial() * final_spatial();
}

BlockConfig NetworkConfig::block(std::size_t in, std::size_t out) const {
  return BlockConfig{in, out, ca_ratio, split_count, enable_ca, enable_saliency_fusion, enable_skips, enable_split};
}

std::string NetworkConfig::canonical() const {
  std::ostringstream os;
  os << "patch_size=" << patch_size << ";image_channels=" << image_channels << ";stem_channels=" << stem_channels
     << ";sal_channels=" << join(sal_channels) << ";salcar_channels=" << join(salcar_channels)
     << ";splitcar_channels=" << join(splitcar_channels) << ";head_hidden=" << head_hidden
     << ";ca_ratio=" << ca_ratio << ";split_count=" << split_count << ";enable_ca=" << (enable_ca ? "true" : "false")
     << ";enable_saliency_fusion=" << (enable_saliency_fusion ? "true" : "false")
     << ";enable_skips=" << (enable_skips ? "true" : "false") << ";enable_split=" << (enable_split ? "true" : "false")
     << ";leaky_slope=" << fmt_double(leaky_slope)
     << ";weight_activation=" << (weight_activation == WeightActivation::softplus ? "softplus" : "exp");
  return os.str();
}

std::uint64_t NetworkConfig::hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : canonical()) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

void TrainConfig::validate() const {
  if (batch_size < 2) throw ConfigError("batch_size must be at least 2 (the rank loss needs pairs)");
  if (patches_per_image == 0) throw ConfigError("patches_per_image must be positive");
  if (!(learning_rate > 0)) throw ConfigError("learning_rate must be positive");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1) || !(adam_beta2 >= 0 && adam_beta2 < 1) || !(adam_eps > 0)) {
    throw ConfigError("invalid Adam hyper-parameters");
  }
  if (saliency_passes < 2 || saliency_passes % 2) throw ConfigError("saliency_passes must be an even count >= 2");
  loss.validate();
  jnd.validate();
}

Config parse_config(const std::string& text, Config base) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    it->second(base, key, value);
  }
  base.network.validate();
  base.train.validate();
  return base;
}

Config load_config(const std::string& path_or_default) {
  if (path_or_default == "default") return Config{};
  std::ifstream f(path_or_default);
  if (!f) throw IoError("cannot open config " + path_or_default);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

std::string config_to_text(const Config& cfg) {
  std::string text;
  std::stringstream ss(cfg.network.canonical());
  std::string item;
  while (std::getline(ss, item, ';')) {
    const auto eq = item.find('=');
    text += item.substr(0, eq) + " = " + item.substr(eq + 1) + "\n";
  }
  const auto& t = cfg.train;
  std::ostringstream os;
  os << "batch_size = " << t.batch_size << "\npatches_per_image = " << t.patches_per_image
     << "\nmax_epochs = " << t.max_epochs << "\nlearning_rate = " << fmt_double(t.learning_rate)
     << "\nadam_beta1 = " << fmt_double(t.adam_beta1) << "\nadam_beta2 = " << fmt_double(t.adam_beta2)
     << "\nadam_eps = " << fmt_double(t.adam_eps) << "\nseed = " << t.seed << "\nalpha = " << fmt_double(t.loss.alpha)
     << "\nbeta = " << fmt_double(t.loss.beta) << "\ngamma = " << fmt_double(t.loss.gamma)
     << "\nrank_epsilon = " << fmt_double(t.loss.rank_epsilon)
     << "\nresample_patches = " << (t.resample_patches ? "true" : "false")
     << "\nscore_polarity = " << (t.polarity == ScorePolarity::mos ? "mos" : "dmos") << "\n";
  if (!t.split_ratios.empty()) os << "split_ratios = " << t.split_ratios << "\n";
  os << "saliency_passes = " << t.saliency_passes << "\njnd_beta = " << fmt_double(t.jnd.beta)
     << "\njnd_luminance_gain = " << fmt_double(t.jnd.luminance_gain)
     << "\njnd_masking_reference = " << fmt_double(t.jnd.masking_reference)
     << "\njnd_masking_exponent = " << fmt_double(t.jnd.masking_exponent) << "\n";
  return text + os.str();
}

NetworkConfig parse_network_canonical(const std::string& canonical) {
  std::string text;
  std::stringstream ss(canonical);
  std::string item;
  while (std::getline(ss, item, ';')) text += item + "\n";
  Config cfg = parse_config(text);
  if (cfg.network.canonical() != canonical) throw ConfigError("network description does not round-trip");
  return cfg.network;
}

}  // namespace salcar
