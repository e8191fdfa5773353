#include "salcar/network.hpp"

#include <cmath>
#include <sstream>

#include "salcar/errors.hpp"

namespace salcar {

PatchBatch make_batch(std::span<const PatchQuad> quads) {
  if (quads.empty()) throw ShapeError("make_batch: no quads");
  const auto& first = quads.front();
  const std::size_t n = quads.size(), c = first.ref_patch.dim(0), p = first.ref_patch.dim(1);
  PatchBatch b;
  b.ref = Tensor({n, c, p, p});
  b.dst = Tensor({n, c, p, p});
  b.sal = Tensor({n, 1, p, p});
  b.jnd = Tensor({n, 1, p, p});
  for (std::size_t i = 0; i < n; ++i) {
    const auto& q = quads[i];
    if (q.ref_patch.shape() != first.ref_patch.shape() || q.dst_patch.shape() != first.ref_patch.shape() ||
        q.sal_patch.shape() != Shape{1, p, p} || q.jnd_patch.shape() != Shape{1, p, p}) {
      throw ShapeError("make_batch: quad " + std::to_string(i) + " has inconsistent patch shapes");
    }
    std::copy(q.ref_patch.vec().begin(), q.ref_patch.vec().end(), b.ref.data().begin() + i * c * p * p);
    std::copy(q.dst_patch.vec().begin(), q.dst_patch.vec().end(), b.dst.data().begin() + i * c * p * p);
    std::copy(q.sal_patch.vec().begin(), q.sal_patch.vec().end(), b.sal.data().begin() + i * p * p);
    std::copy(q.jnd_patch.vec().begin(), q.jnd_patch.vec().end(), b.jnd.data().begin() + i * p * p);
    b.regions.push_back({q.row, q.col, p, p});
  }
  return b;
}

template <typename T>
typename Network<T>::Subnet Network<T>::make_subnet(const std::string& prefix) const {
  Subnet s;
  s.prefix = prefix;
  std::size_t in = cfg_.stem_channels;
  for (std::size_t i = 0; i < cfg_.salcar_channels.size(); ++i) {
    const std::size_t sal = cfg_.enable_saliency_fusion ? cfg_.sal_channels[i] : 0;
    s.salcar.emplace_back(prefix + ".salcar" + std::to_string(i + 1), cfg_.block(in, cfg_.salcar_channels[i]), sal,
                          cfg_.leaky_slope);
    in = cfg_.salcar_channels[i];
  }
  for (std::size_t i = 0; i < cfg_.splitcar_channels.size(); ++i) {
    s.splitcar.emplace_back(prefix + ".splitcar" + std::to_string(i + 1), cfg_.block(in, cfg_.splitcar_channels[i]),
                            cfg_.leaky_slope);
    in = cfg_.splitcar_channels[i];
  }
  return s;
}

template <typename T>
Network<T>::Network(const NetworkConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  img_ = make_subnet("img");
  jnd_ = make_subnet("jnd");
  init(seed);
}

template <typename T>
Network<T>::Network(const NetworkConfig& cfg, ParameterSet<T> params) : Network(cfg, 0) {
  if (params.size() != params_.size()) {
    throw ShapeError("network parameters: expected " + std::to_string(params_.size()) + " tensors, got " +
                     std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& want = params_[i];
    if (!params.contains(want.name)) throw ShapeError("network parameters: missing '" + want.name + "'");
    const auto& got = params.at(want.name);
    if (got.value.shape() != want.value.shape()) {
      throw ShapeError("network parameters: '" + want.name + "' has shape " + shape_string(got.value.shape()) +
                       ", expected " + shape_string(want.value.shape()));
    }
  }
  ParameterSet<T> ordered;
  for (std::size_t i = 0; i < params_.size(); ++i) ordered.add(params_[i].name, params.at(params_[i].name).value);
  params_ = std::move(ordered);
}

template <typename T>
void Network<T>::init(std::uint64_t seed) {
  InitRng rng(seed);
  if (cfg_.enable_saliency_fusion) {
    add_conv_params(params_, "sal.conv1a", 1, cfg_.sal_channels[0], 3, rng);
    add_conv_params(params_, "sal.conv1b", cfg_.sal_channels[0], cfg_.sal_channels[0], 3, rng);
    add_conv_params(params_, "sal.conv2a", cfg_.sal_channels[0], cfg_.sal_channels[1], 3, rng);
    add_conv_params(params_, "sal.conv2b", cfg_.sal_channels[1], cfg_.sal_channels[1], 3, rng);
  }
  for (const Subnet* s : {&img_, &jnd_}) {
    const std::size_t in = s == &img_ ? cfg_.image_channels : 1;
    add_conv_params(params_, s->prefix + ".stem", in, cfg_.stem_channels, 3, rng);
    for (const auto& blk : s->salcar) blk.init(params_, rng);
    for (const auto& blk : s->splitcar) blk.init(params_, rng);
  }
  const std::size_t fused = 2 * cfg_.feature_length();
  for (const char* head : {"pwp", "pqp"}) {
    add_fc_params(params_, std::string(head) + ".fc1", fused, cfg_.head_hidden, rng);
    add_fc_params(params_, std::string(head) + ".fc2", cfg_.head_hidden, 1, rng);
  }
}

template <typename T>
typename Network<T>::SalFeatures Network<T>::sal_subnet(const Binding<T>& b, Var<T> sal) const {
  const auto& s = sal.shape();
  if (s.size() != 4 || s[1] != 1 || s[2] != cfg_.patch_size || s[3] != cfg_.patch_size) {
    throw ShapeError("sal_subnet: expected N x 1 x " + std::to_string(cfg_.patch_size) + " x " +
                     std::to_string(cfg_.patch_size) + " input, got " + shape_string(s));
  }
  const double a = cfg_.leaky_slope;
  Var<T> x = leaky_relu(conv(b, "sal.conv1a", sal), a);
  x = leaky_relu(conv(b, "sal.conv1b", x), a);
  Var<T> f1 = maxpool2(x);
  x = leaky_relu(conv(b, "sal.conv2a", f1), a);
  x = leaky_relu(conv(b, "sal.conv2b", x), a);
  return {f1, maxpool2(x)};
}

template <typename T>
Var<T> Network<T>::run_subnet(const Subnet& net, const Binding<T>& b, Var<T> x,
                              const std::optional<SalFeatures>& sal) const {
  const auto& s = x.shape();
  if (s.size() != 4 || s[2] != cfg_.patch_size || s[3] != cfg_.patch_size) {
    throw ShapeError(net.prefix + ": expected N x C x " + std::to_string(cfg_.patch_size) + " x " +
                     std::to_string(cfg_.patch_size) + " input, got " + shape_string(s));
  }
  if (cfg_.enable_saliency_fusion && !sal) throw ShapeError(net.prefix + ": saliency features required");
  Var<T> h = leaky_relu(conv(b, net.prefix + ".stem", x), cfg_.leaky_slope);
  for (std::size_t i = 0; i < net.salcar.size(); ++i) {
    std::optional<Var<T>> f;
    if (cfg_.enable_saliency_fusion) f = i == 0 ? sal->f1 : sal->f2;
    h = net.salcar[i].forward(b, h, f);
  }
  for (const auto& blk : net.splitcar) h = blk.forward(b, h);
  const std::size_t n = h.shape()[0];
  return reshape(h, {n, cfg_.feature_length()});
}

template <typename T>
Var<T> Network<T>::img_subnet(const Binding<T>& b, Var<T> patches, const std::optional<SalFeatures>& sal) const {
  if (patches.shape().size() != 4 || patches.shape()[1] != cfg_.image_channels) {
    throw ShapeError("img_subnet: expected " + std::to_string(cfg_.image_channels) + "-channel patches, got " +
                     shape_string(patches.shape()));
  }
  return run_subnet(img_, b, patches, sal);
}

template <typename T>
Var<T> Network<T>::jnd_subnet(const Binding<T>& b, Var<T> jnd, const std::optional<SalFeatures>& sal) const {
  if (jnd.shape().size() != 4 || jnd.shape()[1] != 1) {
    throw ShapeError("jnd_subnet: expected 1-channel patches, got " + shape_string(jnd.shape()));
  }
  return run_subnet(jnd_, b, jnd, sal);
}

template <typename T>
std::pair<Var<T>, Var<T>> Network<T>::heads(const Binding<T>& b, Var<T> fused) const {
  const auto& s = fused.shape();
  if (s.size() != 2 || s[1] != 2 * cfg_.feature_length()) {
    throw ShapeError("heads: expected N x " + std::to_string(2 * cfg_.feature_length()) + " input, got " +
                     shape_string(s));
  }
  const std::size_t n = s[0];
  auto head = [&](const std::string& name) {
    Var<T> h = leaky_relu(dense(b, name + ".fc1", fused), cfg_.leaky_slope);
    return reshape(dense(b, name + ".fc2", h), {n});
  };
  Var<T> w_raw = head("pwp");
  Var<T> w = cfg_.weight_activation == WeightActivation::softplus ? add_scalar(softplus(w_raw), 1e-6)
                                                                  : add_scalar(exponential(w_raw), 1e-6);
  return {w, head("pqp")};
}

template <typename T>
typename Network<T>::Output Network<T>::forward(const Binding<T>& b, const PatchBatch& batch) const {
  Tape<T>& tape = b.tape();
  Output out;
  std::optional<SalFeatures> sal;
  if (cfg_.enable_saliency_fusion) sal = sal_subnet(b, tape.constant(batch.sal.template cast<T>()));
  out.f_ref = img_subnet(b, tape.constant(batch.ref.template cast<T>()), sal);
  out.f_dst = img_subnet(b, tape.constant(batch.dst.template cast<T>()), sal);
  out.f_jnd = jnd_subnet(b, tape.constant(batch.jnd.template cast<T>()), sal);
  out.fused = fuse(out.f_ref, out.f_dst, out.f_jnd);
  std::tie(out.w, out.q) = heads(b, out.fused);
  out.score = pool_score(out.w, out.q);
  return out;
}

template <typename T>
Var<T> fuse(Var<T> f_ref, Var<T> f_dst, Var<T> f_jnd) {
  const Shape r = f_ref.shape();
  const Shape j = f_jnd.shape();
  if (r != f_dst.shape()) {
    throw ShapeError("fuse: reference and distorted features differ: " + shape_string(r) + " vs " +
                     shape_string(f_dst.shape()));
  }
  if (r.size() != 2 || j.size() != 2 || j[0] != r[0]) throw ShapeError("fuse: features must be N x D matrices");
  const std::size_t n = r[0];
  const Var<T> parts[2] = {reshape(sub(f_ref, f_dst), {n, r[1], 1, 1}), reshape(f_jnd, {n, j[1], 1, 1})};
  return reshape(concat_channels<T>(parts), {n, r[1] + j[1]});
}

template <typename T>
Var<T> pool_score(Var<T> w, Var<T> q) {
  if (w.value().empty() || w.shape() != q.shape()) throw ShapeError("pool_score: weights and qualities must match");
  for (auto v : w.value().data()) {
    if (!(v > T{0})) throw ShapeError("pool_score: weights must be positive");
  }
  return div_scalar(sum(mul(w, q)), sum(w));
}

double pool_score(std::span<const double> w, std::span<const double> q) {
  if (w.empty()) throw ShapeError("pool_score: no patches");
  if (w.size() != q.size()) throw ShapeError("pool_score: weights and qualities differ in length");
  double num = 0, den = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (!(w[i] > 0)) throw ShapeError("pool_score: weights must be positive");
    num += w[i] * q[i];
    den += w[i];
  }
  return num / den;
}

Prediction predict(Network<float>& net, std::span<const PatchQuad> quads, std::size_t chunk) {
  if (quads.empty()) throw ShapeError("predict: no quads");
  Prediction p;
  for (std::size_t start = 0; start < quads.size(); start += chunk) {
    const auto part = quads.subspan(start, std::min(chunk, quads.size() - start));
    const PatchBatch batch = make_batch(part);
    Tape<float> tape;
    Binding<float> b(tape, net.params());
    const auto out = net.forward(b, batch);
    for (float v : out.w.value().data()) p.weights.push_back(v);
    for (float v : out.q.value().data()) p.qualities.push_back(v);
    p.regions.insert(p.regions.end(), batch.regions.begin(), batch.regions.end());
  }
  p.score = pool_score(p.weights, p.qualities);
  if (!std::isfinite(p.score)) throw NumericError("predict: non-finite score");
  return p;
}

namespace {
std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << v;
  return os.str();
}
}  // namespace

Checkpoint make_checkpoint(const Network<float>& net, const AdamState<float>* adam,
                           std::map<std::string, std::string> meta) {
  Checkpoint ck;
  const auto& params = net.params();
  for (std::size_t i = 0; i < params.size(); ++i) ck.entries.emplace_back(params[i].name, params[i].value);
  if (adam) {
    if (adam->m.size() != params.size()) throw ShapeError("make_checkpoint: optimizer state does not match network");
    for (std::size_t i = 0; i < params.size(); ++i) ck.entries.emplace_back("adam.m." + params[i].name, adam->m[i]);
    for (std::size_t i = 0; i < params.size(); ++i) ck.entries.emplace_back("adam.v." + params[i].name, adam->v[i]);
    meta["adam_step"] = std::to_string(adam->step);
  }
  meta["network_config"] = net.config().canonical();
  meta["config_hash"] = hex64(net.config().hash());
  ck.meta = std::move(meta);
  return ck;
}

Network<float> network_from_checkpoint(const Checkpoint& ckpt) {
  auto it = ckpt.meta.find("network_config");
  if (it == ckpt.meta.end()) throw IoError("checkpoint has no network_config metadata");
  const NetworkConfig cfg = parse_network_canonical(it->second);
  auto h = ckpt.meta.find("config_hash");
  if (h == ckpt.meta.end() || h->second != hex64(cfg.hash())) {
    throw ConfigError("checkpoint config hash does not match its network description");
  }
  ParameterSet<float> params;
  for (const auto& [name, t] : ckpt.entries) {
    if (name.rfind("adam.", 0) != 0) params.add(name, t);
  }
  return Network<float>(cfg, std::move(params));
}

AdamState<float> adam_from_checkpoint(const Checkpoint& ckpt, const ParameterSet<float>& params, AdamOptions opts) {
  AdamState<float> state(params, opts);
  auto step = ckpt.meta.find("adam_step");
  if (step == ckpt.meta.end()) return state;
  state.step = std::stoull(step->second);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor* m = ckpt.find("adam.m." + params[i].name);
    const Tensor* v = ckpt.find("adam.v." + params[i].name);
    if (!m || !v || m->shape() != params[i].value.shape() || v->shape() != params[i].value.shape()) {
      throw IoError("checkpoint optimizer state missing or malformed for '" + params[i].name + "'");
    }
    state.m[i] = *m;
    state.v[i] = *v;
  }
  return state;
}

template class Network<float>;
template class Network<double>;
template Var<float> fuse(Var<float>, Var<float>, Var<float>);
template Var<double> fuse(Var<double>, Var<double>, Var<double>);
template Var<float> pool_score(Var<float>, Var<float>);
template Var<double> pool_score(Var<double>, Var<double>);

}  // namespace salcar
