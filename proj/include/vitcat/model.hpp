#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "vitcat/rng.hpp"
#include "vitcat/tensor.hpp"

namespace vitcat::model {

enum class PatchMode { time_based, content_time };
enum class FusionKind { cross_attention, fully_connected, self_attention };
enum class Activation { gelu, relu };

struct PatchSpec {
  PatchMode mode = PatchMode::time_based;
  size_t patch_rows = 0;
  size_t patch_cols = 0;
  size_t n_patches = 0;
  size_t patch_size() const { return patch_rows * patch_cols; }
};

struct ViTConfig {
  size_t l_history = 8;   // L
  size_t n_contents = 4;  // N_c
  size_t t_s = 2;         // short horizon for content-time patches
  size_t d_model = 6;     // d
  size_t n_heads = 2;     // h
  size_t n_layers = 1;    // N_L
  size_t mlp_size = 8;
  size_t mlp_layers = 1;  // hidden linear maps inside the encoder MLP
  size_t k_top = 1;       // K
  FusionKind fusion = FusionKind::cross_attention;
  Activation activation = Activation::gelu;

  // Head width d_h. Integer division: Table-1 style variants pair d = 50
  // with h = 4, so exact divisibility cannot be required.
  size_t head_dim() const { return d_model / n_heads; }
  // Width of the fused representation entering the classification head.
  size_t fused_dim() const {
    return fusion == FusionKind::fully_connected ? d_model : head_dim();
  }
  void validate() const;

  PatchSpec patch_spec(PatchMode mode) const;
};

// Table-1 style preset grid (model ids 1..6); inherits data-shape fields
// from base and overrides the architecture columns.
ViTConfig preset_variant(int model_id, const ViTConfig& base);

struct LayerParams {
  std::vector<Tensor> w_qkv;  // per head: d x 3*d_h
  Tensor w_msa;               // (h*d_h) x d
  Tensor ln1_gamma, ln1_beta;
  Tensor ln2_gamma, ln2_beta;
  std::vector<Tensor> mlp_w;  // hidden maps then output projection back to d
  std::vector<Tensor> mlp_b;
};

struct PathParams {
  Tensor patch_proj;  // E: S x d
  Tensor pos_embed;   // (N+1) x d
  Tensor cls_token;   // 1 x d
  std::vector<LayerParams> layers;
};

struct FusionParams {
  // cross_attention: w_q/w_k/w_v, each d x d_h
  Tensor w_q, w_k, w_v;
  // self_attention: one combined projection d x 3*d_h
  Tensor w_qkv;
  // fully_connected: 2d x d map plus bias
  Tensor w_fc, b_fc;
};

struct HeadParams {
  Tensor ln_gamma, ln_beta;  // over fused_dim
  Tensor w;                  // fused_dim x N_c
  Tensor b;                  // N_c
};

struct ModelParams {
  PathParams ts;  // time-based patches
  PathParams mc;  // content-time patches
  FusionParams fusion;
  HeadParams head;
  double input_scale = 1.0;  // fixed input normalization, not trained

  // Deterministic traversal of every trainable tensor; shared by init,
  // counting, checkpointing, gradient collection and the optimizer.
  void for_each(const std::function<void(const std::string&, Tensor&)>& fn);
  void for_each(const std::function<void(const std::string&, const Tensor&)>& fn) const;

  std::vector<Tensor> tensors() const;
  // Copy whose tensors are leaves on the tape, in for_each order.
  ModelParams bind(GradTape& tape) const;
  std::vector<Tensor> collect_grads(const GradTape& tape) const;
};

ModelParams init_params(const ViTConfig& cfg, Rng& rng);
size_t count_params(const ViTConfig& cfg);

// One patch per content: patch j is column j of x, flattened to length L.
Tensor patch_time_based(const Tensor& x);
// One patch per T_s-row band: patch j is rows [j*T_s, (j+1)*T_s), row-major.
Tensor patch_content_time(const Tensor& x, size_t t_s);

// Z_0: class token prepended to projected patches, plus position embedding.
Tensor embed(const Tensor& patches, const PathParams& path);

// softmax(Q K^T / sqrt(d_h)) V with [Q,K,V] = z w_qkv.
Tensor self_attention(const Tensor& z, const Tensor& w_qkv);
Tensor multihead_attention(const Tensor& z, const std::vector<Tensor>& w_qkv,
                           const Tensor& w_msa);

// Pre-norm residual block: z' = MSA(LN(z)) + z; out = MLP(LN(z')) + z'.
Tensor encoder_layer(const Tensor& z, const LayerParams& layer, const ViTConfig& cfg);

// Queries from the TS path, keys/values from the MC path.
Tensor cross_attention_fuse(const Tensor& z_ts, const Tensor& z_mc,
                            const FusionParams& fusion);

// sigmoid(LN(z0) W + b), elementwise in (0, 1).
Tensor classify_head(const Tensor& z0, const HeadParams& head);

// Full ViT-CAT forward: both paths, fusion per cfg.fusion, classification
// head. Returns a 1 x N_c row of probabilities.
Tensor forward(const Tensor& x, const ModelParams& params, const ViTConfig& cfg);

// Flattens every trainable tensor into one row (for whole-model gradient
// checks) and rebuilds a parameter set from such a row via differentiable
// slices.
Tensor pack_params(const ModelParams& params);
ModelParams unpack_params(const Tensor& flat, const ViTConfig& cfg,
                          double input_scale);

// Binary checkpoint ("VCKP"): config header, input scale, then named
// tensors. Loading rejects any config mismatch.
void save_checkpoint(const std::string& path, const ModelParams& params,
                     const ViTConfig& cfg);
std::pair<ModelParams, ViTConfig> load_checkpoint(const std::string& path);
ModelParams load_checkpoint(const std::string& path, const ViTConfig& expected);

}  // namespace vitcat::model
