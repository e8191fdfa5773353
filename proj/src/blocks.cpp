#include "salcar/blocks.hpp"

#include <algorithm>
#include <cmath>

namespace salcar {

template <typename T>
void add_conv_params(ParameterSet<T>& params, const std::string& name, std::size_t in, std::size_t out,
                     std::size_t kernel, InitRng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in * kernel * kernel));
  std::uniform_real_distribution<double> dist(-bound, bound);
  BasicTensor<T> w({out, in, kernel, kernel});
  for (auto& v : w.data()) v = static_cast<T>(dist(rng));
  params.add(name + ".w", std::move(w));
  params.add(name + ".b", BasicTensor<T>({out}));
}

template <typename T>
void add_fc_params(ParameterSet<T>& params, const std::string& name, std::size_t in, std::size_t out, InitRng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  BasicTensor<T> w({out, in});
  for (auto& v : w.data()) v = static_cast<T>(dist(rng));
  params.add(name + ".w", std::move(w));
  params.add(name + ".b", BasicTensor<T>({out}));
}

template <typename T>
Var<T> conv(const Binding<T>& b, const std::string& name, Var<T> x, std::size_t stride) {
  Var<T> w = b[name + ".w"];
  const std::size_t k = w.value().dim(2);
  return conv2d(x, w, b[name + ".b"], stride, k / 2);
}

template <typename T>
Var<T> dense(const Binding<T>& b, const std::string& name, Var<T> x) {
  return fully_connected(x, b[name + ".w"], b[name + ".b"]);
}

ChannelAttention::ChannelAttention(std::string prefix, std::size_t channels, std::size_t ratio, bool strict)
    : prefix_(std::move(prefix)), channels_(channels), reduced_(0) {
  if (channels == 0 || ratio == 0) throw ConfigError(prefix_ + ": channel count and reduction ratio must be positive");
  if (!strict) {
    reduced_ = std::max<std::size_t>(1, channels / ratio);
    return;
  }
  if (channels % ratio != 0) {
    throw ConfigError(prefix_ + ": channel count " + std::to_string(channels) +
                      " is not divisible by the reduction ratio " + std::to_string(ratio));
  }
  reduced_ = channels / ratio;
}

template <typename T>
void ChannelAttention::init(ParameterSet<T>& params, InitRng& rng) const {
  add_conv_params(params, prefix_ + ".down", channels_, reduced_, 1, rng);
  add_conv_params(params, prefix_ + ".up", reduced_, channels_, 1, rng);
}

template <typename T>
Var<T> ChannelAttention::factors(const Binding<T>& b, Var<T> x) const {
  const std::size_t n = x.value().dim(0);
  if (x.value().dim(1) != channels_) {
    throw ShapeError(prefix_ + ": expected " + std::to_string(channels_) + " channels, got " +
                     shape_string(x.shape()));
  }
  Var<T> s = reshape(global_avg_pool(x), {n, channels_, 1, 1});
  s = relu(conv(b, prefix_ + ".down", s));
  s = sigmoid(conv(b, prefix_ + ".up", s));
  return reshape(s, {n, channels_});
}

template <typename T>
Var<T> ChannelAttention::forward(const Binding<T>& b, Var<T> x) const {
  return mul_broadcast(x, factors(b, x));
}

namespace {
std::size_t checked_half(const BlockConfig& cfg, const std::string& prefix) {
  if (cfg.in_channels == 0 || cfg.out_channels == 0 || cfg.out_channels % 2 != 0) {
    throw ConfigError(prefix + ": SalCAR needs positive input channels and an even output width");
  }
  return cfg.out_channels / 2;
}

std::size_t branch_count(const BlockConfig& cfg, const std::string& prefix) {
  if (cfg.in_channels == 0 || cfg.out_channels == 0) throw ConfigError(prefix + ": channel counts must be positive");
  if (!cfg.enable_split) return 1;
  if (cfg.split_count == 0 || cfg.out_channels % cfg.split_count != 0) {
    throw ConfigError(prefix + ": output width " + std::to_string(cfg.out_channels) +
                      " is not divisible by split_count " + std::to_string(cfg.split_count));
  }
  return cfg.split_count;
}
}  // namespace

SalCarBlock::SalCarBlock(std::string prefix, BlockConfig cfg, std::size_t sal_channels, double leaky_slope)
    : prefix_(std::move(prefix)),
      cfg_(cfg),
      sal_channels_(sal_channels),
      slope_(leaky_slope),
      ca_(prefix_ + ".ca", checked_half(cfg, prefix_), cfg.ca_ratio, cfg.enable_ca) {}

template <typename T>
void SalCarBlock::init(ParameterSet<T>& params, InitRng& rng) const {
  const std::size_t half = cfg_.out_channels / 2;
  const std::size_t fused_in = cfg_.in_channels + (cfg_.enable_saliency_fusion ? sal_channels_ : 0);
  add_conv_params(params, prefix_ + ".fuse", fused_in, half, 1, rng);
  ca_.init(params, rng);
  add_conv_params(params, prefix_ + ".conv_a", half, half, 3, rng);
  add_conv_params(params, prefix_ + ".conv_b", half, half, 3, rng);
  add_conv_params(params, prefix_ + ".proj", cfg_.in_channels, half, 1, rng);
}

template <typename T>
Var<T> SalCarBlock::forward(const Binding<T>& b, Var<T> x, std::optional<Var<T>> f_sal) const {
  Var<T> pooled = maxpool2(x);
  if (cfg_.enable_saliency_fusion) {
    if (!f_sal) throw ShapeError(prefix_ + ": saliency features required when fusion is enabled");
    const auto& ps = pooled.shape();
    const auto& ss = f_sal->shape();
    if (ss.size() != 4 || ss[0] != ps[0] || ss[2] != ps[2] || ss[3] != ps[3]) {
      throw ShapeError(prefix_ + ": saliency features " + shape_string(ss) + " do not match pooled input " +
                       shape_string(ps));
    }
    const Var<T> parts[2] = {pooled, *f_sal};
    pooled = concat_channels<T>(parts);
  }
  Var<T> xp = leaky_relu(conv(b, prefix_ + ".fuse", pooled), slope_);
  if (cfg_.enable_ca) xp = ca_.forward(b, xp);
  Var<T> r = leaky_relu(conv(b, prefix_ + ".conv_a", xp), slope_);
  r = leaky_relu(conv(b, prefix_ + ".conv_b", r), slope_);
  if (cfg_.enable_skips) r = add(r, xp);
  Var<T> shortcut = conv(b, prefix_ + ".proj", x, 2);
  const Var<T> parts[2] = {r, shortcut};
  return concat_channels<T>(parts);
}

SplitCarBlock::SplitCarBlock(std::string prefix, BlockConfig cfg, double leaky_slope)
    : prefix_(std::move(prefix)),
      cfg_(cfg),
      slope_(leaky_slope),
      branches_(branch_count(cfg, prefix_)),
      ca_(prefix_ + ".ca", cfg.in_channels, cfg.ca_ratio, cfg.enable_ca) {}

template <typename T>
void SplitCarBlock::init(ParameterSet<T>& params, InitRng& rng) const {
  ca_.init(params, rng);
  const std::size_t width = cfg_.out_channels / branches_;
  for (std::size_t i = 0; i < branches_; ++i) {
    const std::string br = prefix_ + ".branch" + std::to_string(i);
    add_conv_params(params, br + ".conv_a", cfg_.in_channels, width, 3, rng);
    add_conv_params(params, br + ".conv_b", width, width, 3, rng);
  }
  add_conv_params(params, prefix_ + ".proj", cfg_.in_channels, cfg_.out_channels, 1, rng);
}

template <typename T>
Var<T> SplitCarBlock::forward(const Binding<T>& b, Var<T> x) const {
  Var<T> xp = maxpool2(x);
  if (cfg_.enable_ca) xp = ca_.forward(b, xp);
  std::vector<Var<T>> wa, ba, wb, bb;
  for (std::size_t i = 0; i < branches_; ++i) {
    const std::string br = prefix_ + ".branch" + std::to_string(i);
    wa.push_back(b[br + ".conv_a.w"]);
    ba.push_back(b[br + ".conv_a.b"]);
    wb.push_back(b[br + ".conv_b.w"]);
    bb.push_back(b[br + ".conv_b.b"]);
  }
  Var<T> y = leaky_relu(grouped_conv2d<T>(xp, wa, ba, 1, 1, GroupInput::shared), slope_);
  Var<T> out = leaky_relu(grouped_conv2d<T>(y, wb, bb, 1, 1, GroupInput::split), slope_);
  if (cfg_.enable_skips) out = add(out, conv(b, prefix_ + ".proj", xp));
  return out;
}

#define SALCAR_INSTANTIATE_BLOCKS(T)                                                                        \
  template void add_conv_params(ParameterSet<T>&, const std::string&, std::size_t, std::size_t, std::size_t, \
                                InitRng&);                                                                   \
  template void add_fc_params(ParameterSet<T>&, const std::string&, std::size_t, std::size_t, InitRng&);     \
  template Var<T> conv(const Binding<T>&, const std::string&, Var<T>, std::size_t);                          \
  template Var<T> dense(const Binding<T>&, const std::string&, Var<T>);                                      \
  template void ChannelAttention::init(ParameterSet<T>&, InitRng&) const;                                    \
  template Var<T> ChannelAttention::factors(const Binding<T>&, Var<T>) const;                                \
  template Var<T> ChannelAttention::forward(const Binding<T>&, Var<T>) const;                                \
  template void SalCarBlock::init(ParameterSet<T>&, InitRng&) const;                                         \
  template Var<T> SalCarBlock::forward(const Binding<T>&, Var<T>, std::optional<Var<T>>) const;              \
  template void SplitCarBlock::init(ParameterSet<T>&, InitRng&) const;                                       \
  template Var<T> SplitCarBlock::forward(const Binding<T>&, Var<T>) const;

SALCAR_INSTANTIATE_BLOCKS(float)
SALCAR_INSTANTIATE_BLOCKS(double)

}  // namespace salcar
