#pragma once

#include <array>
#include <iosfwd>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "fndet/autograd.hpp"
#include "fndet/cost.hpp"
#include "fndet/ops.hpp"

namespace fndet {

using Rng = std::mt19937_64;

enum class NeckTopology { kPan, kBiFpn };
enum class NeckBlock { kC2f, kCspStage };
enum class NeckFusion { kConcat, kWeighted };

/// Declarative network description. Serialized as flat key=value text.
struct GraphConfig {
  static constexpr std::array<int, 4> kStrides = {4, 8, 16, 32};

  std::array<int, 4> stage_widths = {16, 32, 64, 128};
  std::array<int, 4> stage_depths = {1, 1, 2, 1};
  double pconv_ratio = 0.25;
  int num_classes = 1;
  int head_channels = 32;
  int input_h = 64;
  int input_w = 64;

  bool use_sppf = true;
  bool use_psa = true;
  bool use_p2 = true;  // extra stride-4 small-object scale
  NeckTopology topology = NeckTopology::kBiFpn;
  NeckBlock neck_block = NeckBlock::kCspStage;
  NeckFusion fusion = NeckFusion::kConcat;
  int neck_depth = 1;  // sub-blocks per CSPStage / C2f
  int sppf_pool = 5;

  Activation block_act = Activation::kRelu;  // between the FasterNet PWConvs
  Activation act = Activation::kSilu;        // everywhere else
  double bn_eps = 1e-3;
  double bn_momentum = 0.03;

  /// Desk-scale default (what the default constructor already holds).
  static GraphConfig desk() { return GraphConfig{}; }
  /// Ablation rows 1..7: FasterNet, +SPPF, +PSA, +P2 head, +BiFPN paths,
  /// +CSPStage, and CSPStage with weighted BiFPN fusion instead of paths.
  static GraphConfig ablation(int row);
  static const char* ablation_name(int row);

  /// Number of output scales (3 or 4) and their strides.
  std::vector<int> strides() const;
  int first_level() const { return use_p2 ? 0 : 1; }
  /// Channel width of neck node outputs at pyramid level 0..3 (uniform
  /// head_channels under weighted fusion).
  int neck_width(int level) const;
  int partial_channels(int stage) const;
  void validate() const;

  std::string to_text() const;
  static GraphConfig from_text(const std::string& text);
  static GraphConfig load(const std::string& path);
  void save(const std::string& path) const;
};

/// Owns every named tensor of a model (trainable weights and running statistics).
class ParamStore {
 public:
  Parameter& add(std::string name, Tensor4 value, bool trainable = true, bool decay = true);
  std::vector<Parameter*> all() const;
  std::vector<Parameter*> trainable() const;
  Parameter* find(const std::string& name) const;
  /// Drops parameters whose name starts with `prefix`; returns how many.
  std::size_t remove_prefix(const std::string& prefix);
  std::size_t trainable_scalars() const;
  std::size_t size() const { return params_.size(); }
  void zero_grad();

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

/// Per-forward context. `cost`, when set, receives one row per layer.
struct Ctx {
  Tape& tape;
  bool training = false;
  CostReport* cost = nullptr;
};

class Conv {
 public:
  Conv() = default;
  Conv(ParamStore& store, const std::string& name, int c_in, int c_out, int k, int stride, int pad, bool bias,
       Rng& rng, int groups = 1);
  Var forward(Ctx& ctx, Var x) const;
  ConvWeights weights() const;
  /// Re-initializes the kernel (and bias) to zero.
  void zero() const;
  int c_in() const { return c_in_; }
  int c_out() const { return c_out_; }
  Parameter* weight() const { return weight_; }
  Parameter* bias() const { return bias_; }

 private:
  std::string name_;
  Parameter* weight_ = nullptr;
  Parameter* bias_ = nullptr;
  int c_in_ = 0, c_out_ = 0, k_ = 1, stride_ = 1, pad_ = 0, groups_ = 1;
};

class BatchNorm {
 public:
  BatchNorm() = default;
  BatchNorm(ParamStore& store, const std::string& name, int channels, double eps, double momentum);
  Var forward(Ctx& ctx, Var x) const;
  /// Snapshot in inference mode.
  BatchNormParams params() const;

 private:
  std::string name_;
  Parameter* gamma_ = nullptr;
  Parameter* beta_ = nullptr;
  Parameter* mean_ = nullptr;
  Parameter* var_ = nullptr;
  double eps_ = 1e-3, momentum_ = 0.03;
};

/// Conv (no bias) -> BN -> activation.
class ConvBnAct {
 public:
  ConvBnAct() = default;
  ConvBnAct(ParamStore& store, const std::string& name, int c_in, int c_out, int k, int stride,
            Activation act, const GraphConfig& cfg, Rng& rng);
  Var forward(Ctx& ctx, Var x) const;
  /// Conv weights with the batch norm folded in (inference mode).
  ConvWeights fused() const;
  Activation act() const { return act_; }
  const Conv& conv() const { return conv_; }
  const BatchNorm& bn() const { return bn_; }

 private:
  Conv conv_;
  BatchNorm bn_;
  Activation act_ = Activation::kIdentity;
};

class Module {
 public:
  virtual ~Module() = default;
  virtual Var forward(Ctx& ctx, Var x) const = 0;
};

/// PConv(3x3 on leading cp channels) -> PWConv(c -> 2c) -> BN -> act -> PWConv(2c -> c), plus residual.
class FasterNetBlock : public Module {
 public:
  FasterNetBlock(ParamStore& store, const std::string& name, int channels, int cp, const GraphConfig& cfg, Rng& rng);
  Var forward(Ctx& ctx, Var x) const override;
  void zero_last() const { pw2_.zero(); }
  int partial_channels() const { return cp_; }

 private:
  std::string name_;
  int channels_, cp_;
  Conv pconv_;
  Conv pw1_;
  BatchNorm bn_;
  Conv pw2_;
  Activation act_;
};

/// Three serial stride-1 max pools, concat [x, p1, p2, p3], 1x1 conv back to c.
class Sppf : public Module {
 public:
  Sppf(ParamStore& store, const std::string& name, int channels, int pool, const GraphConfig& cfg, Rng& rng);
  Var forward(Ctx& ctx, Var x) const override;
  /// The concatenated pooling pyramid before the fusing conv.
  Var pyramid(Ctx& ctx, Var x) const;

 private:
  int pool_;
  ConvBnAct fuse_;
};

/// Split channels; self-attention + pointwise FFN (both residual) on the
/// second half; concat; 1x1 conv.
class Psa : public Module {
 public:
  Psa(ParamStore& store, const std::string& name, int channels, const GraphConfig& cfg, Rng& rng);
  Var forward(Ctx& ctx, Var x) const override;
  int key_dim() const { return key_dim_; }
  double attention_scale() const;
  const Conv& query() const { return q_; }
  const Conv& key() const { return k_; }
  const Conv& value() const { return v_; }
  const Conv& projection() const { return proj_; }
  const ConvBnAct& ffn1() const { return ffn1_; }
  const ConvBnAct& ffn2() const { return ffn2_; }
  const ConvBnAct& out() const { return out_; }

 private:
  std::string name_;
  int channels_, half_, key_dim_;
  Conv q_, k_, v_, proj_;
  ConvBnAct ffn1_, ffn2_, out_;
};

/// Parallel 3x3 and 1x1 conv-BN branches summed then activated; fuses to one 3x3 conv.
class RepConv : public Module {
 public:
  RepConv(ParamStore& store, const std::string& name, int c_in, int c_out, const GraphConfig& cfg, Rng& rng);
  Var forward(Ctx& ctx, Var x) const override;
  ConvWeights fuse() const;
  Activation act() const { return act_; }

 private:
  ConvBnAct dense_, point_;
  Activation act_;
};

/// 1x1 conv -> RepConv 3x3, residual add.
class BasicBlockReverse : public Module {
 public:
  BasicBlockReverse(ParamStore& store, const std::string& name, int channels, const GraphConfig& cfg, Rng& rng);
  Var forward(Ctx& ctx, Var x) const override;

 private:
  ConvBnAct conv1_;
  RepConv conv2_;
};

/// Two 1x1 convs split the stream; one branch runs a chain of
/// BasicBlockReverse; [branch1, chain outputs...] are concatenated and fused.
class CspStage : public Module {
 public:
  CspStage(ParamStore& store, const std::string& name, int c_in, int c_out, int n_blocks, const GraphConfig& cfg,
           Rng& rng);
  Var forward(Ctx& ctx, Var x) const override;

 private:
  ConvBnAct conv1_, conv2_, conv3_;
  std::vector<std::unique_ptr<BasicBlockReverse>> blocks_;
};

/// YOLOv8-style C2f with non-residual bottlenecks (neck variant).
class C2f : public Module {
 public:
  C2f(ParamStore& store, const std::string& name, int c_in, int c_out, int n_blocks, const GraphConfig& cfg, Rng& rng);
  Var forward(Ctx& ctx, Var x) const override;

 private:
  int hidden_;
  ConvBnAct cv1_, cv2_;
  std::vector<std::pair<ConvBnAct, ConvBnAct>> bottlenecks_;
};

struct BackboneTaps {
  std::vector<Var> taps;  // strides 4, 8, 16, 32
};

class Backbone {
 public:
  Backbone(ParamStore& store, const GraphConfig& cfg, Rng& rng);
  BackboneTaps forward(Ctx& ctx, Var image) const;
  const FasterNetBlock& block(int stage, int index) const { return *stages_[stage][index]; }

 private:
  ConvBnAct embed_;
  std::vector<ConvBnAct> merges_;
  std::vector<std::vector<std::unique_ptr<FasterNetBlock>>> stages_;
  std::unique_ptr<Sppf> sppf_;
  std::unique_ptr<Psa> psa_;
};

/// Structural description of one neck fusion node, for inspection and tests.
struct NeckNodeInfo {
  std::string name;
  int level = 0;  // 0..3 for strides 4..32
  std::vector<std::string> inputs;
};

class Neck {
 public:
  Neck(ParamStore& store, const GraphConfig& cfg, Rng& rng);
  /// Returns one feature map per output scale, finest first.
  std::vector<Var> forward(Ctx& ctx, const BackboneTaps& taps) const;
  const std::vector<NeckNodeInfo>& nodes() const { return info_; }

 private:
  struct Source {
    bool from_tap = false;
    int index = 0;
    int resample = 0;  // -1: stride-2 conv, 0: none, +1: nearest 2x upsample
  };
  struct Node {
    int level = 0;
    int width = 0;
    std::vector<Source> inputs;
    std::vector<std::optional<ConvBnAct>> down;   // per input, for resample == -1
    std::vector<std::optional<ConvBnAct>> align;  // per input, weighted fusion only
    Parameter* fusion_weights = nullptr;
    std::unique_ptr<Module> block;
  };
  int add_node(ParamStore& store, const GraphConfig& cfg, Rng& rng, int level, std::vector<Source> inputs,
               const std::string& name);
  int source_width(const Source& s) const;
  std::string source_name(const Source& s) const;

  std::vector<int> tap_widths_;
  std::vector<Node> nodes_;
  std::vector<NeckNodeInfo> info_;
  std::vector<int> outputs_;  // node index per output scale
  NeckFusion fusion_;
};

/// Raw per-scale head outputs for one branch.
struct ScaleOutput {
  Var cls;  // (n, num_classes, h, w) logits
  Var box;  // (n, 4, h, w) raw ltrb, decoded as stride * softplus(raw)
};

struct HeadOutputs {
  std::vector<int> strides;
  std::vector<ScaleOutput> one_to_many;  // empty when the branch is absent
  std::vector<ScaleOutput> one_to_one;
};

/// Plain-tensor snapshot of one branch, for decoding.
struct BranchTensors {
  std::vector<int> strides;
  std::vector<Tensor4> cls;
  std::vector<Tensor4> box;
};

class DetectHead {
 public:
  DetectHead(ParamStore& store, const std::string& name, int c_in, const GraphConfig& cfg, Rng& rng);
  ScaleOutput forward(Ctx& ctx, Var x) const;

 private:
  ConvBnAct stem1_, stem2_;
  Conv cls_, box_;
};

class Detector {
 public:
  Detector(const GraphConfig& cfg, std::uint64_t seed);
  Detector(const Detector&) = delete;
  Detector& operator=(const Detector&) = delete;
  Detector(Detector&&) = default;
  Detector& operator=(Detector&&) = default;

  /// Training evaluates both branches; inference only the one-to-one branch
  /// unless `with_one_to_many` is set.
  HeadOutputs forward(Ctx& ctx, Var image, bool with_one_to_many) const;
  /// Inference helper: one-to-one branch on a batch of images.
  BranchTensors infer(const Tensor4& images) const;
  BranchTensors infer_one_to_many(const Tensor4& images) const;

  /// Deletes the one-to-many heads and their parameters.
  void strip_one_to_many();
  bool has_one_to_many() const { return !o2m_.empty(); }

  const GraphConfig& config() const { return cfg_; }
  ParamStore& params() { return *store_; }
  const ParamStore& params() const { return *store_; }
  const Neck& neck() const { return *neck_; }
  const Backbone& backbone() const { return *backbone_; }

  void save(const std::string& path) const;
  void load(const std::string& path);

 private:
  GraphConfig cfg_;
  std::unique_ptr<ParamStore> store_;
  std::unique_ptr<Backbone> backbone_;
  std::unique_ptr<Neck> neck_;
  std::vector<std::unique_ptr<DetectHead>> o2m_;
  std::vector<std::unique_ptr<DetectHead>> o2o_;
};

BranchTensors snapshot(const Tape& tape, const std::vector<ScaleOutput>& branch, const std::vector<int>& strides);

/// Per-layer FLOPs / memory / parameter ledger of the whole network, traced
/// from a single forward pass at cfg.input_h x cfg.input_w.
CostReport graph_cost(const GraphConfig& cfg);

}  // namespace fndet
