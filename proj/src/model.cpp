#include "fndet/model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace fndet {

// ---------------------------------------------------------------- config --

namespace {

std::string fmt_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

int parse_int(const std::string& key, const std::string& v) {
  int out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size()) throw ConfigError("bad integer for " + key + ": '" + v + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size()) throw ConfigError("bad number for " + key + ": '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "on") return true;
  if (v == "0" || v == "false" || v == "off") return false;
  throw ConfigError("bad flag for " + key + ": '" + v + "'");
}

std::array<int, 4> parse_int4(const std::string& key, const std::string& v) {
  auto parts = split_csv(v);
  if (parts.size() != 4) throw ConfigError(key + " needs exactly 4 comma-separated values");
  std::array<int, 4> out{};
  for (int i = 0; i < 4; ++i) out[i] = parse_int(key, parts[i]);
  return out;
}

std::string join4(const std::array<int, 4>& a) {
  return std::to_string(a[0]) + "," + std::to_string(a[1]) + "," + std::to_string(a[2]) + "," + std::to_string(a[3]);
}

}  // namespace

GraphConfig GraphConfig::ablation(int row) {
  if (row < 1 || row > 7) throw ConfigError("ablation row must be in 1..7");
  GraphConfig c;
  c.use_sppf = row >= 2;
  c.use_psa = row >= 3;
  c.use_p2 = row >= 4;
  c.topology = row >= 5 ? NeckTopology::kBiFpn : NeckTopology::kPan;
  c.neck_block = row >= 6 ? NeckBlock::kCspStage : NeckBlock::kC2f;
  c.fusion = row == 7 ? NeckFusion::kWeighted : NeckFusion::kConcat;
  return c;
}

const char* GraphConfig::ablation_name(int row) {
  static const char* names[] = {"FasterNet",
                                "FasterNet+SPPF",
                                "FasterNet+SPPF+PSA",
                                "FasterNet+SPPF+PSA+P2",
                                "FasterNet+SPPF+PSA+P2+BiFPN-paths",
                                "FasterNet+SPPF+PSA+P2+BiFPN-paths+CSPStage",
                                "FasterNet+SPPF+PSA+P2+CSPStage+BiFPN-weighted"};
  if (row < 1 || row > 7) throw ConfigError("ablation row must be in 1..7");
  return names[row - 1];
}

std::vector<int> GraphConfig::strides() const {
  std::vector<int> s;
  for (int l = first_level(); l < 4; ++l) s.push_back(kStrides[l]);
  return s;
}

int GraphConfig::neck_width(int level) const {
  // Weighted fusion sums its inputs, so all levels share one width.
  if (fusion == NeckFusion::kWeighted) return head_channels;
  return std::max(stage_widths[level], head_channels);
}

int GraphConfig::partial_channels(int stage) const {
  const double cp = pconv_ratio * stage_widths[stage];
  const long rounded = std::lround(cp);
  if (rounded < 1 || std::abs(cp - static_cast<double>(rounded)) > 1e-9) {
    throw ConfigError("pconv_ratio " + fmt_double(pconv_ratio) + " does not give an integer channel count for width " +
                      std::to_string(stage_widths[stage]));
  }
  return static_cast<int>(rounded);
}

void GraphConfig::validate() const {
  for (int i = 0; i < 4; ++i) {
    if (stage_widths[i] < 1) throw ConfigError("stage widths must be positive");
    if (stage_depths[i] < 0) throw ConfigError("stage depths must be >= 0");
    if (i > 0 && stage_widths[i] < stage_widths[i - 1]) throw ConfigError("stage widths must be nondecreasing");
  }
  if (!(pconv_ratio > 0.0 && pconv_ratio <= 1.0)) throw ConfigError("pconv_ratio must be in (0, 1]");
  for (int i = 0; i < 4; ++i) partial_channels(i);
  if (num_classes < 1) throw ConfigError("num_classes must be positive");
  if (head_channels < 1) throw ConfigError("head_channels must be positive");
  if (input_h < 32 || input_w < 32 || input_h % 32 != 0 || input_w % 32 != 0) {
    throw ConfigError("input size must be a positive multiple of 32");
  }
  if (neck_depth < 0) throw ConfigError("neck_depth must be >= 0");
  if (sppf_pool < 1 || sppf_pool % 2 == 0) throw ConfigError("sppf_pool must be odd");
  if (!(bn_eps > 0.0)) throw ConfigError("bn_eps must be > 0");
  if (!(bn_momentum > 0.0 && bn_momentum < 1.0)) throw ConfigError("bn_momentum must be in (0, 1)");
}

std::string GraphConfig::to_text() const {
  std::ostringstream os;
  os << "stage_widths=" << join4(stage_widths) << '\n'
     << "stage_depths=" << join4(stage_depths) << '\n'
     << "pconv_ratio=" << fmt_double(pconv_ratio) << '\n'
     << "num_classes=" << num_classes << '\n'
     << "head_channels=" << head_channels << '\n'
     << "input_size=" << input_h << ',' << input_w << '\n'
     << "sppf=" << (use_sppf ? 1 : 0) << '\n'
     << "psa=" << (use_psa ? 1 : 0) << '\n'
     << "p2_head=" << (use_p2 ? 1 : 0) << '\n'
     << "neck_topology=" << (topology == NeckTopology::kPan ? "pan" : "bifpn") << '\n'
     << "neck_block=" << (neck_block == NeckBlock::kC2f ? "c2f" : "cspstage") << '\n'
     << "neck_fusion=" << (fusion == NeckFusion::kConcat ? "concat" : "weighted") << '\n'
     << "neck_depth=" << neck_depth << '\n'
     << "sppf_pool=" << sppf_pool << '\n'
     << "block_act=" << activation_name(block_act) << '\n'
     << "act=" << activation_name(act) << '\n'
     << "bn_eps=" << fmt_double(bn_eps) << '\n'
     << "bn_momentum=" << fmt_double(bn_momentum) << '\n';
  return os.str();
}

GraphConfig GraphConfig::from_text(const std::string& text) {
  GraphConfig c;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected key=value", line_no);
    const std::string key = trim(line.substr(0, eq));
    const std::string v = trim(line.substr(eq + 1));
    try {
      if (key == "stage_widths") c.stage_widths = parse_int4(key, v);
      else if (key == "stage_depths") c.stage_depths = parse_int4(key, v);
      else if (key == "pconv_ratio") c.pconv_ratio = parse_double(key, v);
      else if (key == "num_classes") c.num_classes = parse_int(key, v);
      else if (key == "head_channels") c.head_channels = parse_int(key, v);
      else if (key == "input_size") {
        auto parts = split_csv(v);
        if (parts.size() == 1) parts.push_back(parts[0]);
        if (parts.size() != 2) throw ConfigError("input_size needs h,w");
        c.input_h = parse_int(key, parts[0]);
        c.input_w = parse_int(key, parts[1]);
      } else if (key == "sppf") c.use_sppf = parse_bool(key, v);
      else if (key == "psa") c.use_psa = parse_bool(key, v);
      else if (key == "p2_head") c.use_p2 = parse_bool(key, v);
      else if (key == "neck_topology") {
        if (v == "pan") c.topology = NeckTopology::kPan;
        else if (v == "bifpn") c.topology = NeckTopology::kBiFpn;
        else throw ConfigError("neck_topology must be pan or bifpn");
      } else if (key == "neck_block") {
        if (v == "c2f") c.neck_block = NeckBlock::kC2f;
        else if (v == "cspstage") c.neck_block = NeckBlock::kCspStage;
        else throw ConfigError("neck_block must be c2f or cspstage");
      } else if (key == "neck_fusion") {
        if (v == "concat") c.fusion = NeckFusion::kConcat;
        else if (v == "weighted") c.fusion = NeckFusion::kWeighted;
        else throw ConfigError("neck_fusion must be concat or weighted");
      } else if (key == "neck_depth") c.neck_depth = parse_int(key, v);
      else if (key == "sppf_pool") c.sppf_pool = parse_int(key, v);
      else if (key == "block_act") c.block_act = parse_activation(v);
      else if (key == "act") c.act = parse_activation(v);
      else if (key == "bn_eps") c.bn_eps = parse_double(key, v);
      else if (key == "bn_momentum") c.bn_momentum = parse_double(key, v);
      else throw ConfigError("unknown key '" + key + "'");
    } catch (const ConfigError& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  c.validate();
  return c;
}

GraphConfig GraphConfig::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open config " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return from_text(ss.str());
}

void GraphConfig::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw Error("cannot write config " + path);
  os << to_text();
}

// ------------------------------------------------------------ param store --

Parameter& ParamStore::add(std::string name, Tensor4 value, bool trainable, bool decay) {
  if (find(name) != nullptr) throw ConfigError("duplicate parameter name " + name);
  auto p = std::make_unique<Parameter>();
  p->name = std::move(name);
  p->value = std::move(value);
  p->trainable = trainable;
  p->decay = decay;
  params_.push_back(std::move(p));
  return *params_.back();
}

std::vector<Parameter*> ParamStore::all() const {
  std::vector<Parameter*> out;
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<Parameter*> ParamStore::trainable() const {
  std::vector<Parameter*> out;
  for (const auto& p : params_) {
    if (p->trainable) out.push_back(p.get());
  }
  return out;
}

Parameter* ParamStore::find(const std::string& name) const {
  for (const auto& p : params_) {
    if (p->name == name) return p.get();
  }
  return nullptr;
}

std::size_t ParamStore::remove_prefix(const std::string& prefix) {
  const auto before = params_.size();
  std::erase_if(params_, [&](const auto& p) { return p->name.rfind(prefix, 0) == 0; });
  return before - params_.size();
}

std::size_t ParamStore::trainable_scalars() const {
  std::size_t n = 0;
  for (const auto& p : params_) {
    if (p->trainable) n += p->value.numel();
  }
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) {
    if (p->trainable) p->value.zero_grad();
  }
}

// ---------------------------------------------------------------- layers --

namespace {

void fill_uniform(Tensor4& t, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : t.data()) v = dist(rng);
}

Tensor4 channel_vector(int c, double v) { return Tensor4({1, c, 1, 1}, v); }

void trace(Ctx& ctx, LayerCost row) {
  if (ctx.cost != nullptr) ctx.cost->add(std::move(row));
}

}  // namespace

Conv::Conv(ParamStore& store, const std::string& name, int c_in, int c_out, int k, int stride, int pad, bool bias,
           Rng& rng, int groups)
    : name_(name), c_in_(c_in), c_out_(c_out), k_(k), stride_(stride), pad_(pad), groups_(groups) {
  if (c_in < 1 || c_out < 1 || k < 1 || stride < 1) throw ConfigError(name + ": invalid conv geometry");
  if (c_in % groups != 0 || c_out % groups != 0) throw ConfigError(name + ": groups must divide channels");
  Tensor4 w({c_out, c_in / groups, k, k});
  const double bound = 1.0 / std::sqrt(static_cast<double>(c_in / groups * k * k));
  fill_uniform(w, bound, rng);
  weight_ = &store.add(name + ".weight", std::move(w));
  if (bias) {
    Tensor4 b = channel_vector(c_out, 0.0);
    fill_uniform(b, bound, rng);
    bias_ = &store.add(name + ".bias", std::move(b), true, false);
  }
}

Var Conv::forward(Ctx& ctx, Var x) const {
  Tape& t = ctx.tape;
  const Shape in = t.shape(x);
  std::optional<Var> b;
  if (bias_ != nullptr) b = t.param(*bias_);
  Var y = ag::conv2d(t, x, t.param(*weight_), b, stride_, pad_, groups_);
  if (ctx.cost != nullptr) {
    const auto c = cost_conv_general(in.h, in.w, k_, stride_, pad_, groups_, c_in_, c_out_, bias_ != nullptr);
    trace(ctx, {name_, k_ == 1 ? "pwconv" : (groups_ == c_in_ && groups_ > 1 ? "dwconv" : "conv"),
                c.flops * static_cast<std::uint64_t>(in.n), c.mem_access * static_cast<std::uint64_t>(in.n), c.params});
  }
  return y;
}

ConvWeights Conv::weights() const {
  ConvWeights w;
  w.kernel = weight_->value;
  w.kernel.drop_grad();
  if (bias_ != nullptr) w.bias = bias_->value.storage();
  w.stride = stride_;
  w.padding = pad_;
  w.groups = groups_;
  return w;
}

void Conv::zero() const {
  for (double& v : weight_->value.data()) v = 0.0;
  if (bias_ != nullptr) {
    for (double& v : bias_->value.data()) v = 0.0;
  }
}

BatchNorm::BatchNorm(ParamStore& store, const std::string& name, int channels, double eps, double momentum)
    : name_(name), eps_(eps), momentum_(momentum) {
  gamma_ = &store.add(name + ".gamma", channel_vector(channels, 1.0), true, false);
  beta_ = &store.add(name + ".beta", channel_vector(channels, 0.0), true, false);
  mean_ = &store.add(name + ".running_mean", channel_vector(channels, 0.0), false, false);
  var_ = &store.add(name + ".running_var", channel_vector(channels, 1.0), false, false);
}

Var BatchNorm::forward(Ctx& ctx, Var x) const {
  Tape& t = ctx.tape;
  if (ctx.cost != nullptr) {
    const Shape s = t.shape(x);
    trace(ctx, {name_, "bn", 0, 2 * s.numel(), 2 * static_cast<std::uint64_t>(s.c)});
  }
  ag::BatchNormState st{&mean_->value, &var_->value, eps_, momentum_};
  return ag::batchnorm(t, x, t.param(*gamma_), t.param(*beta_), st, ctx.training);
}

BatchNormParams BatchNorm::params() const {
  BatchNormParams p;
  p.gamma = gamma_->value.storage();
  p.beta = beta_->value.storage();
  p.running_mean = mean_->value.storage();
  p.running_var = var_->value.storage();
  p.eps = eps_;
  p.momentum = momentum_;
  p.training = false;
  return p;
}

ConvBnAct::ConvBnAct(ParamStore& store, const std::string& name, int c_in, int c_out, int k, int stride,
                     Activation act, const GraphConfig& cfg, Rng& rng)
    : conv_(store, name + ".conv", c_in, c_out, k, stride, (k - 1) / 2, false, rng),
      bn_(store, name + ".bn", c_out, cfg.bn_eps, cfg.bn_momentum),
      act_(act) {}

Var ConvBnAct::forward(Ctx& ctx, Var x) const {
  return ag::activation(ctx.tape, bn_.forward(ctx, conv_.forward(ctx, x)), act_);
}

ConvWeights ConvBnAct::fused() const { return fuse_conv_bn(conv_.weights(), bn_.params()); }

// -------------------------------------------------------------- FasterNet --

FasterNetBlock::FasterNetBlock(ParamStore& store, const std::string& name, int channels, int cp,
                               const GraphConfig& cfg, Rng& rng)
    : name_(name),
      channels_(channels),
      cp_(cp),
      pconv_(store, name + ".pconv", cp, cp, 3, 1, 1, false, rng),
      pw1_(store, name + ".pw1", channels, 2 * channels, 1, 1, 0, false, rng),
      bn_(store, name + ".bn", 2 * channels, cfg.bn_eps, cfg.bn_momentum),
      pw2_(store, name + ".pw2", 2 * channels, channels, 1, 1, 0, false, rng),
      act_(cfg.block_act) {
  if (cp < 1 || cp > channels) throw ConfigError(name + ": partial channel count out of range");
}

Var FasterNetBlock::forward(Ctx& ctx, Var x) const {
  Tape& t = ctx.tape;
  const Shape s = t.shape(x);
  if (s.c != channels_) throw DimensionError("c", name_ + " expects " + std::to_string(channels_) + " channels");
  if (ctx.cost != nullptr) {
    const auto c = cost_pconv(s.h, s.w, 3, cp_);
    trace(ctx, {name_ + ".pconv", "pconv", c.flops * static_cast<std::uint64_t>(s.n),
                c.mem_access * static_cast<std::uint64_t>(s.n), c.params});
  }
  Var y = ag::pconv2d(t, x, t.param(*pconv_.weight()), cp_);
  y = pw1_.forward(ctx, y);
  y = ag::activation(t, bn_.forward(ctx, y), act_);
  y = pw2_.forward(ctx, y);
  return ag::add(t, x, y);
}

// ------------------------------------------------------------- SPPF / PSA --

Sppf::Sppf(ParamStore& store, const std::string& name, int channels, int pool, const GraphConfig& cfg, Rng& rng)
    : pool_(pool), fuse_(store, name + ".fuse", 4 * channels, channels, 1, 1, cfg.act, cfg, rng) {}

Var Sppf::pyramid(Ctx& ctx, Var x) const {
  Tape& t = ctx.tape;
  Var p1 = ag::maxpool2d(t, x, pool_, 1, pool_ / 2);
  Var p2 = ag::maxpool2d(t, p1, pool_, 1, pool_ / 2);
  Var p3 = ag::maxpool2d(t, p2, pool_, 1, pool_ / 2);
  const Var parts[] = {x, p1, p2, p3};
  return ag::concat(t, parts);
}

Var Sppf::forward(Ctx& ctx, Var x) const { return fuse_.forward(ctx, pyramid(ctx, x)); }

Psa::Psa(ParamStore& store, const std::string& name, int channels, const GraphConfig& cfg, Rng& rng)
    : name_(name), channels_(channels), half_(channels / 2), key_dim_(std::max(1, channels / 4)) {
  if (channels < 2 || channels % 2 != 0) throw ConfigError(name + ": PSA needs an even channel count");
  q_ = Conv(store, name + ".q", half_, key_dim_, 1, 1, 0, true, rng);
  k_ = Conv(store, name + ".k", half_, key_dim_, 1, 1, 0, true, rng);
  v_ = Conv(store, name + ".v", half_, half_, 1, 1, 0, true, rng);
  proj_ = Conv(store, name + ".proj", half_, half_, 1, 1, 0, true, rng);
  ffn1_ = ConvBnAct(store, name + ".ffn1", half_, 2 * half_, 1, 1, cfg.act, cfg, rng);
  ffn2_ = ConvBnAct(store, name + ".ffn2", 2 * half_, half_, 1, 1, Activation::kIdentity, cfg, rng);
  out_ = ConvBnAct(store, name + ".out", channels, channels, 1, 1, cfg.act, cfg, rng);
}

double Psa::attention_scale() const { return 1.0 / std::sqrt(static_cast<double>(key_dim_)); }

Var Psa::forward(Ctx& ctx, Var x) const {
  Tape& t = ctx.tape;
  const Shape s = t.shape(x);
  if (s.c != channels_) throw DimensionError("c", name_ + " expects " + std::to_string(channels_) + " channels");
  Var a = ag::slice(t, x, 0, half_);
  Var b = ag::slice(t, x, half_, half_);
  Var q = q_.forward(ctx, b);
  Var k = k_.forward(ctx, b);
  Var v = v_.forward(ctx, b);
  if (ctx.cost != nullptr) {
    const std::uint64_t p = s.plane();
    trace(ctx, {name_ + ".attention", "attention",
                s.n * (p * p * static_cast<std::uint64_t>(key_dim_) + p * p * static_cast<std::uint64_t>(half_)),
                s.n * (p * (2 * static_cast<std::uint64_t>(key_dim_) + 2 * static_cast<std::uint64_t>(half_)) + p * p),
                0});
  }
  Var attn = ag::spatial_attention(t, q, k, v, attention_scale());
  b = ag::add(t, b, proj_.forward(ctx, attn));
  b = ag::add(t, b, ffn2_.forward(ctx, ffn1_.forward(ctx, b)));
  const Var parts[] = {a, b};
  return out_.forward(ctx, ag::concat(t, parts));
}

// ------------------------------------------------------ CSPStage and C2f --

RepConv::RepConv(ParamStore& store, const std::string& name, int c_in, int c_out, const GraphConfig& cfg, Rng& rng)
    : dense_(store, name + ".dense", c_in, c_out, 3, 1, Activation::kIdentity, cfg, rng),
      point_(store, name + ".point", c_in, c_out, 1, 1, Activation::kIdentity, cfg, rng),
      act_(cfg.act) {}

Var RepConv::forward(Ctx& ctx, Var x) const {
  return ag::activation(ctx.tape, ag::add(ctx.tape, dense_.forward(ctx, x), point_.forward(ctx, x)), act_);
}

ConvWeights RepConv::fuse() const {
  ConvWeights dense = dense_.fused();
  const ConvWeights point = point_.fused();
  for (int co = 0; co < dense.c_out(); ++co) {
    for (int ci = 0; ci < dense.c_in_per_group(); ++ci) dense.kernel.at(co, ci, 1, 1) += point.kernel.at(co, ci, 0, 0);
    dense.bias[co] += point.bias[co];
  }
  return dense;
}

BasicBlockReverse::BasicBlockReverse(ParamStore& store, const std::string& name, int channels,
                                     const GraphConfig& cfg, Rng& rng)
    : conv1_(store, name + ".conv1", channels, channels, 1, 1, cfg.act, cfg, rng),
      conv2_(store, name + ".conv2", channels, channels, cfg, rng) {}

Var BasicBlockReverse::forward(Ctx& ctx, Var x) const {
  return ag::add(ctx.tape, x, conv2_.forward(ctx, conv1_.forward(ctx, x)));
}

namespace {

int half_of(int c, const std::string& name) {
  if (c < 2 || c % 2 != 0) throw ConfigError(name + ": output channels " + std::to_string(c) + " cannot be split in half");
  return c / 2;
}

}  // namespace

CspStage::CspStage(ParamStore& store, const std::string& name, int c_in, int c_out, int n_blocks,
                   const GraphConfig& cfg, Rng& rng) {
  const int mid = half_of(c_out, name);
  conv1_ = ConvBnAct(store, name + ".conv1", c_in, mid, 1, 1, cfg.act, cfg, rng);
  conv2_ = ConvBnAct(store, name + ".conv2", c_in, mid, 1, 1, cfg.act, cfg, rng);
  for (int i = 0; i < n_blocks; ++i) {
    blocks_.push_back(std::make_unique<BasicBlockReverse>(store, name + ".block" + std::to_string(i), mid, cfg, rng));
  }
  const int cat = mid * (1 + std::max(1, n_blocks));
  conv3_ = ConvBnAct(store, name + ".conv3", cat, c_out, 1, 1, cfg.act, cfg, rng);
}

Var CspStage::forward(Ctx& ctx, Var x) const {
  std::vector<Var> outs{conv1_.forward(ctx, x)};
  Var y = conv2_.forward(ctx, x);
  if (blocks_.empty()) outs.push_back(y);
  for (const auto& b : blocks_) {
    y = b->forward(ctx, y);
    outs.push_back(y);
  }
  return conv3_.forward(ctx, ag::concat(ctx.tape, outs));
}

C2f::C2f(ParamStore& store, const std::string& name, int c_in, int c_out, int n_blocks, const GraphConfig& cfg,
         Rng& rng)
    : hidden_(half_of(c_out, name)) {
  cv1_ = ConvBnAct(store, name + ".cv1", c_in, 2 * hidden_, 1, 1, cfg.act, cfg, rng);
  for (int i = 0; i < n_blocks; ++i) {
    const std::string b = name + ".m" + std::to_string(i);
    bottlenecks_.emplace_back(ConvBnAct(store, b + ".cv1", hidden_, hidden_, 3, 1, cfg.act, cfg, rng),
                              ConvBnAct(store, b + ".cv2", hidden_, hidden_, 3, 1, cfg.act, cfg, rng));
  }
  cv2_ = ConvBnAct(store, name + ".cv2", (2 + n_blocks) * hidden_, c_out, 1, 1, cfg.act, cfg, rng);
}

Var C2f::forward(Ctx& ctx, Var x) const {
  Tape& t = ctx.tape;
  Var y = cv1_.forward(ctx, x);
  std::vector<Var> outs{ag::slice(t, y, 0, hidden_), ag::slice(t, y, hidden_, hidden_)};
  for (const auto& [a, b] : bottlenecks_) outs.push_back(b.forward(ctx, a.forward(ctx, outs.back())));
  return cv2_.forward(ctx, ag::concat(t, outs));
}

// --------------------------------------------------------------- backbone --

Backbone::Backbone(ParamStore& store, const GraphConfig& cfg, Rng& rng)
    : embed_(store, "backbone.embed", 3, cfg.stage_widths[0], 4, 4, Activation::kIdentity, cfg, rng) {
  stages_.resize(4);
  for (int s = 0; s < 4; ++s) {
    if (s > 0) {
      merges_.emplace_back(store, "backbone.merge" + std::to_string(s), cfg.stage_widths[s - 1], cfg.stage_widths[s],
                           2, 2, Activation::kIdentity, cfg, rng);
    }
    const int cp = cfg.partial_channels(s);
    for (int b = 0; b < cfg.stage_depths[s]; ++b) {
      stages_[s].push_back(std::make_unique<FasterNetBlock>(
          store, "backbone.stage" + std::to_string(s) + ".block" + std::to_string(b), cfg.stage_widths[s], cp, cfg, rng));
    }
  }
  if (cfg.use_sppf) sppf_ = std::make_unique<Sppf>(store, "backbone.sppf", cfg.stage_widths[3], cfg.sppf_pool, cfg, rng);
  if (cfg.use_psa) psa_ = std::make_unique<Psa>(store, "backbone.psa", cfg.stage_widths[3], cfg, rng);
}

BackboneTaps Backbone::forward(Ctx& ctx, Var image) const {
  const Shape s = ctx.tape.shape(image);
  if (s.c != 3) throw DimensionError("c", "backbone expects 3-channel images");
  if (s.h % 32 != 0) throw DimensionError("h", "image height must be a multiple of 32");
  if (s.w % 32 != 0) throw DimensionError("w", "image width must be a multiple of 32");
  BackboneTaps out;
  Var x = embed_.forward(ctx, image);
  for (int st = 0; st < 4; ++st) {
    if (st > 0) x = merges_[st - 1].forward(ctx, x);
    for (const auto& b : stages_[st]) x = b->forward(ctx, x);
    if (st == 3) {
      if (sppf_) x = sppf_->forward(ctx, x);
      if (psa_) x = psa_->forward(ctx, x);
    }
    out.taps.push_back(x);
  }
  return out;
}

// ------------------------------------------------------------------- neck --

int Neck::source_width(const Source& s) const {
  return s.from_tap ? tap_widths_[s.index] : nodes_[s.index].width;
}

std::string Neck::source_name(const Source& s) const {
  std::string base = s.from_tap ? "C" + std::to_string(s.index + 2) : info_[s.index].name;
  if (s.resample > 0) return "up(" + base + ")";
  if (s.resample < 0) return "down(" + base + ")";
  return base;
}

int Neck::add_node(ParamStore& store, const GraphConfig& cfg, Rng& rng, int level, std::vector<Source> inputs,
                   const std::string& name) {
  Node node;
  node.level = level;
  node.width = cfg.neck_width(level);
  node.inputs = std::move(inputs);
  const std::string prefix = "neck." + name;
  NeckNodeInfo info{name, level, {}};
  int fused_channels = 0;
  for (std::size_t i = 0; i < node.inputs.size(); ++i) {
    const Source& src = node.inputs[i];
    info.inputs.push_back(source_name(src));
    int w = source_width(src);
    std::optional<ConvBnAct> down;
    if (src.resample < 0) {
      const int out_w = fusion_ == NeckFusion::kWeighted ? node.width : w;
      down.emplace(store, prefix + ".down" + std::to_string(i), w, out_w, 3, 2, cfg.act, cfg, rng);
      w = out_w;
    }
    std::optional<ConvBnAct> align;
    if (fusion_ == NeckFusion::kWeighted && w != node.width) {
      align.emplace(store, prefix + ".align" + std::to_string(i), w, node.width, 1, 1, Activation::kIdentity, cfg, rng);
      w = node.width;
    }
    node.down.push_back(std::move(down));
    node.align.push_back(std::move(align));
    fused_channels += w;
  }
  if (fusion_ == NeckFusion::kWeighted) {
    node.fusion_weights = &store.add(prefix + ".fusion_weights",
                                     Tensor4({1, static_cast<int>(node.inputs.size()), 1, 1}, 1.0), true, false);
    fused_channels = node.width;
  }
  if (cfg.neck_block == NeckBlock::kCspStage) {
    node.block = std::make_unique<CspStage>(store, prefix + ".csp", fused_channels, node.width, cfg.neck_depth, cfg, rng);
  } else {
    node.block = std::make_unique<C2f>(store, prefix + ".c2f", fused_channels, node.width, cfg.neck_depth, cfg, rng);
  }
  nodes_.push_back(std::move(node));
  info_.push_back(std::move(info));
  return static_cast<int>(nodes_.size()) - 1;
}

Neck::Neck(ParamStore& store, const GraphConfig& cfg, Rng& rng) : fusion_(cfg.fusion) {
  for (int l = 0; l < 4; ++l) tap_widths_.push_back(cfg.stage_widths[l]);
  const int lo = cfg.first_level();
  auto tap = [](int l) { return Source{true, l, 0}; };
  auto node = [](int idx, int resample) { return Source{false, idx, resample}; };
  auto label = [](const char* kind, int l) { return std::string(kind) + std::to_string(l + 2); };

  if (cfg.topology == NeckTopology::kPan) {
    // PANet: every level has a top-down and a bottom-up node, including the
    // single-input ones at the ends of each path.
    std::vector<int> td(4, -1), bu(4, -1);
    td[3] = add_node(store, cfg, rng, 3, {tap(3)}, label("td", 3));
    for (int l = 2; l >= lo; --l) td[l] = add_node(store, cfg, rng, l, {node(td[l + 1], +1), tap(l)}, label("td", l));
    bu[lo] = add_node(store, cfg, rng, lo, {node(td[lo], 0)}, label("out", lo));
    for (int l = lo + 1; l < 4; ++l) {
      bu[l] = add_node(store, cfg, rng, l, {node(bu[l - 1], -1), node(td[l], 0)}, label("out", l));
    }
    for (int l = lo; l < 4; ++l) outputs_.push_back(bu[l]);
  } else {
    // BiFPN connectivity: single-input nodes pruned (the top level's
    // top-down node and the finest level's bottom-up node), plus same-level
    // skip edges from the backbone taps into intermediate output nodes.
    std::vector<int> td(4, -1), out(4, -1);
    auto td_source = [&](int l, int resample) { return l == 3 ? Source{true, 3, resample} : node(td[l], resample); };
    for (int l = 2; l > lo; --l) td[l] = add_node(store, cfg, rng, l, {td_source(l + 1, +1), tap(l)}, label("td", l));
    out[lo] = add_node(store, cfg, rng, lo, {td_source(lo + 1, +1), tap(lo)}, label("out", lo));
    for (int l = lo + 1; l < 3; ++l) {
      out[l] = add_node(store, cfg, rng, l, {node(out[l - 1], -1), node(td[l], 0), tap(l)}, label("out", l));
    }
    out[3] = add_node(store, cfg, rng, 3, {node(out[2], -1), tap(3)}, label("out", 3));
    for (int l = lo; l < 4; ++l) outputs_.push_back(out[l]);
  }
}

std::vector<Var> Neck::forward(Ctx& ctx, const BackboneTaps& taps) const {
  Tape& t = ctx.tape;
  std::vector<Var> values(nodes_.size());
  for (std::size_t n = 0; n < nodes_.size(); ++n) {
    const Node& node = nodes_[n];
    std::vector<Var> ins;
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      const Source& src = node.inputs[i];
      Var v = src.from_tap ? taps.taps[src.index] : values[src.index];
      if (src.resample > 0) v = ag::upsample2x(t, v);
      if (src.resample < 0) v = node.down[i]->forward(ctx, v);
      if (node.align[i]) v = node.align[i]->forward(ctx, v);
      ins.push_back(v);
    }
    Var fused;
    if (node.fusion_weights != nullptr) {
      if (ctx.cost != nullptr) {
        const Shape s = t.shape(ins[0]);
        ctx.cost->add({info_[n].name + ".fusion", "fusion", 0, (ins.size() + 1) * s.numel(), ins.size()});
      }
      fused = ag::weighted_sum(t, ins, t.param(*node.fusion_weights));
    } else {
      fused = ag::concat(t, ins);
    }
    values[n] = node.block->forward(ctx, fused);
  }
  std::vector<Var> out;
  for (int idx : outputs_) out.push_back(values[idx]);
  return out;
}

// ------------------------------------------------------------------ heads --

namespace {

// Initial classification bias for a 1% foreground prior.
constexpr double kClsPriorBias = -4.59511985013459;

}  // namespace

DetectHead::DetectHead(ParamStore& store, const std::string& name, int c_in, const GraphConfig& cfg, Rng& rng)
    : stem1_(store, name + ".stem1", c_in, cfg.head_channels, 3, 1, cfg.act, cfg, rng),
      stem2_(store, name + ".stem2", cfg.head_channels, cfg.head_channels, 3, 1, cfg.act, cfg, rng),
      cls_(store, name + ".cls", cfg.head_channels, cfg.num_classes, 1, 1, 0, true, rng),
      box_(store, name + ".box", cfg.head_channels, 4, 1, 1, 0, true, rng) {
  for (double& v : cls_.bias()->value.data()) v = kClsPriorBias;
  for (double& v : box_.bias()->value.data()) v = 0.5;
}

ScaleOutput DetectHead::forward(Ctx& ctx, Var x) const {
  Var f = stem2_.forward(ctx, stem1_.forward(ctx, x));
  return {cls_.forward(ctx, f), box_.forward(ctx, f)};
}

// --------------------------------------------------------------- detector --

Detector::Detector(const GraphConfig& cfg, std::uint64_t seed) : cfg_(cfg), store_(std::make_unique<ParamStore>()) {
  cfg_.validate();
  Rng rng(seed);
  backbone_ = std::make_unique<Backbone>(*store_, cfg_, rng);
  neck_ = std::make_unique<Neck>(*store_, cfg_, rng);
  for (int l = cfg_.first_level(); l < 4; ++l) {
    const std::string scale = "p" + std::to_string(l + 2);
    o2m_.push_back(std::make_unique<DetectHead>(*store_, "head.o2m." + scale, cfg_.neck_width(l), cfg_, rng));
    o2o_.push_back(std::make_unique<DetectHead>(*store_, "head.o2o." + scale, cfg_.neck_width(l), cfg_, rng));
  }
}

HeadOutputs Detector::forward(Ctx& ctx, Var image, bool with_one_to_many) const {
  const BackboneTaps taps = backbone_->forward(ctx, image);
  const std::vector<Var> pyramid = neck_->forward(ctx, taps);
  HeadOutputs out;
  out.strides = cfg_.strides();
  if (with_one_to_many && o2m_.empty()) throw StateError("one-to-many heads were stripped from this model");
  for (std::size_t s = 0; s < pyramid.size(); ++s) {
    if (with_one_to_many) out.one_to_many.push_back(o2m_[s]->forward(ctx, pyramid[s]));
    out.one_to_one.push_back(o2o_[s]->forward(ctx, pyramid[s]));
  }
  return out;
}

BranchTensors snapshot(const Tape& tape, const std::vector<ScaleOutput>& branch, const std::vector<int>& strides) {
  BranchTensors b;
  b.strides = strides;
  for (const auto& s : branch) {
    b.cls.push_back(tape.value(s.cls));
    b.box.push_back(tape.value(s.box));
  }
  return b;
}

BranchTensors Detector::infer(const Tensor4& images) const {
  Tape tape(false);
  Ctx ctx{tape, false, nullptr};
  const HeadOutputs out = forward(ctx, tape.constant(images), false);
  return snapshot(tape, out.one_to_one, out.strides);
}

BranchTensors Detector::infer_one_to_many(const Tensor4& images) const {
  Tape tape(false);
  Ctx ctx{tape, false, nullptr};
  const HeadOutputs out = forward(ctx, tape.constant(images), true);
  return snapshot(tape, out.one_to_many, out.strides);
}

void Detector::strip_one_to_many() {
  o2m_.clear();
  store_->remove_prefix("head.o2m.");
}

namespace {

constexpr char kCkptMagic[4] = {'F', 'N', 'C', 'K'};

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw ParseError("checkpoint: truncated");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void Detector::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write checkpoint " + path);
  const auto params = store_->all();
  os.write(kCkptMagic, 4);
  put_u32(os, static_cast<std::uint32_t>(params.size()));
  for (const Parameter* p : params) {
    put_u32(os, static_cast<std::uint32_t>(p->name.size()));
    os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
  }
  for (const Parameter* p : params) write_t4f1(os, p->value);
  if (!os) throw Error("checkpoint write failed: " + path);
}

void Detector::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open checkpoint " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kCkptMagic, 4) != 0) throw ParseError("checkpoint: bad magic in " + path);
  const std::uint32_t count = get_u32(is);
  std::vector<std::string> names(count);
  for (auto& name : names) {
    const std::uint32_t len = get_u32(is);
    if (len > 4096) throw ParseError("checkpoint: implausible name length");
    name.resize(len);
    is.read(name.data(), len);
    if (!is) throw ParseError("checkpoint: truncated name index");
  }
  std::map<std::string, Tensor4> loaded;
  for (const auto& name : names) loaded[name] = read_t4f1(is);
  for (Parameter* p : store_->all()) {
    auto it = loaded.find(p->name);
    if (it == loaded.end()) throw ParseError("checkpoint is missing tensor " + p->name);
    if (it->second.shape() != p->value.shape()) {
      throw DimensionError("shape", "checkpoint tensor " + p->name + " has shape " + to_string(it->second.shape()) +
                                        ", model expects " + to_string(p->value.shape()));
    }
    p->value = std::move(it->second);
  }
}

CostReport graph_cost(const GraphConfig& cfg) {
  Detector det(cfg, 0);
  Tape tape(false);
  CostReport report;
  Ctx ctx{tape, false, &report};
  det.forward(ctx, tape.constant(Tensor4({1, 3, cfg.input_h, cfg.input_w})), true);
  return report;
}

}  // namespace fndet
