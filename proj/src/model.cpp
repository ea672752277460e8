#include "vitcat/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "vitcat/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoints are little-endian");

namespace vitcat::model {

void ViTConfig::validate() const {
  if (l_history < 2) throw ConfigError("config: L must be >= 2");
  if (n_contents < 1) throw ConfigError("config: N_c must be >= 1");
  if (d_model < 1 || n_heads < 1 || n_layers < 1 || mlp_size < 1 || mlp_layers < 1) {
    throw ConfigError("config: architecture counts must be >= 1");
  }
  if (head_dim() < 1) throw ConfigError("config: d/h must be >= 1");
  if (t_s < 1 || l_history % t_s != 0) {
    throw ConfigError("config: L must be divisible by T_s");
  }
  if (t_s > l_history / 2) {
    throw ConfigError("config: T_s must be <= L/2");
  }
  if (k_top < 1 || k_top > n_contents) {
    throw ConfigError("config: need 1 <= K <= N_c");
  }
}

PatchSpec ViTConfig::patch_spec(PatchMode mode) const {
  PatchSpec s;
  s.mode = mode;
  if (mode == PatchMode::time_based) {
    s.patch_rows = l_history;
    s.patch_cols = 1;
    s.n_patches = n_contents;
  } else {
    s.patch_rows = t_s;
    s.patch_cols = n_contents;
    s.n_patches = l_history / t_s;
  }
  return s;
}

ViTConfig preset_variant(int model_id, const ViTConfig& base) {
  ViTConfig cfg = base;
  switch (model_id) {
    case 1: cfg.n_layers = 1; cfg.d_model = 25; cfg.mlp_layers = 1; cfg.mlp_size = 128; cfg.n_heads = 5; break;
    case 2: cfg.n_layers = 1; cfg.d_model = 50; cfg.mlp_layers = 1; cfg.mlp_size = 128; cfg.n_heads = 5; break;
    case 3: cfg.n_layers = 1; cfg.d_model = 50; cfg.mlp_layers = 1; cfg.mlp_size = 128; cfg.n_heads = 4; break;
    case 4: cfg.n_layers = 1; cfg.d_model = 50; cfg.mlp_layers = 1; cfg.mlp_size = 64; cfg.n_heads = 5; break;
    case 5: cfg.n_layers = 1; cfg.d_model = 50; cfg.mlp_layers = 2; cfg.mlp_size = 64; cfg.n_heads = 5; break;
    case 6: cfg.n_layers = 2; cfg.d_model = 50; cfg.mlp_layers = 1; cfg.mlp_size = 128; cfg.n_heads = 5; break;
    default: throw ConfigError("preset_variant: model id must be in [1, 6]");
  }
  cfg.validate();
  return cfg;
}

// ---- parameter construction ----

namespace {

Tensor draw_projection(Rng* rng, size_t rows, size_t cols) {
  std::vector<double> v(rows * cols, 0.0);
  if (rng != nullptr) {
    const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
    for (double& x : v) x = rng->uniform(-bound, bound);
  }
  return Tensor({rows, cols}, std::move(v));
}

Tensor draw_gaussian(Rng* rng, size_t rows, size_t cols, double stddev) {
  std::vector<double> v(rows * cols, 0.0);
  if (rng != nullptr) {
    for (double& x : v) x = rng->normal(0.0, stddev);
  }
  return Tensor({rows, cols}, std::move(v));
}

Tensor const_vec(size_t n, double value) {
  return Tensor({n}, std::vector<double>(n, value));
}

PathParams build_path(const ViTConfig& cfg, PatchMode mode, Rng* rng) {
  const PatchSpec spec = cfg.patch_spec(mode);
  const size_t d = cfg.d_model, dh = cfg.head_dim();
  PathParams p;
  p.patch_proj = draw_projection(rng, spec.patch_size(), d);
  p.pos_embed = draw_gaussian(rng, spec.n_patches + 1, d, 0.02);
  p.cls_token = draw_gaussian(rng, 1, d, 0.02);
  p.layers.resize(cfg.n_layers);
  for (LayerParams& layer : p.layers) {
    layer.w_qkv.reserve(cfg.n_heads);
    for (size_t h = 0; h < cfg.n_heads; ++h) {
      layer.w_qkv.push_back(draw_projection(rng, d, 3 * dh));
    }
    layer.w_msa = draw_projection(rng, cfg.n_heads * dh, d);
    layer.ln1_gamma = const_vec(d, 1.0);
    layer.ln1_beta = const_vec(d, 0.0);
    layer.ln2_gamma = const_vec(d, 1.0);
    layer.ln2_beta = const_vec(d, 0.0);
    size_t in = d;
    for (size_t i = 0; i < cfg.mlp_layers; ++i) {
      layer.mlp_w.push_back(draw_projection(rng, in, cfg.mlp_size));
      layer.mlp_b.push_back(const_vec(cfg.mlp_size, 0.0));
      in = cfg.mlp_size;
    }
    layer.mlp_w.push_back(draw_projection(rng, in, d));
    layer.mlp_b.push_back(const_vec(d, 0.0));
  }
  return p;
}

ModelParams build_params(const ViTConfig& cfg, Rng* rng) {
  cfg.validate();
  const size_t d = cfg.d_model, dh = cfg.head_dim();
  ModelParams p;
  p.ts = build_path(cfg, PatchMode::time_based, rng);
  p.mc = build_path(cfg, PatchMode::content_time, rng);
  switch (cfg.fusion) {
    case FusionKind::cross_attention:
      p.fusion.w_q = draw_projection(rng, d, dh);
      p.fusion.w_k = draw_projection(rng, d, dh);
      p.fusion.w_v = draw_projection(rng, d, dh);
      break;
    case FusionKind::self_attention:
      p.fusion.w_qkv = draw_projection(rng, d, 3 * dh);
      break;
    case FusionKind::fully_connected:
      p.fusion.w_fc = draw_projection(rng, 2 * d, d);
      p.fusion.b_fc = const_vec(d, 0.0);
      break;
  }
  const size_t wf = cfg.fused_dim();
  p.head.ln_gamma = const_vec(wf, 1.0);
  p.head.ln_beta = const_vec(wf, 0.0);
  p.head.w = draw_projection(rng, wf, cfg.n_contents);
  p.head.b = const_vec(cfg.n_contents, 0.0);
  return p;
}

void walk_path(PathParams& p, const std::string& prefix,
               const std::function<void(const std::string&, Tensor&)>& fn) {
  fn(prefix + ".patch_proj", p.patch_proj);
  fn(prefix + ".pos_embed", p.pos_embed);
  fn(prefix + ".cls_token", p.cls_token);
  for (size_t i = 0; i < p.layers.size(); ++i) {
    LayerParams& layer = p.layers[i];
    const std::string lp = prefix + ".layer" + std::to_string(i);
    for (size_t h = 0; h < layer.w_qkv.size(); ++h) {
      fn(lp + ".head" + std::to_string(h) + ".w_qkv", layer.w_qkv[h]);
    }
    fn(lp + ".w_msa", layer.w_msa);
    fn(lp + ".ln1_gamma", layer.ln1_gamma);
    fn(lp + ".ln1_beta", layer.ln1_beta);
    fn(lp + ".ln2_gamma", layer.ln2_gamma);
    fn(lp + ".ln2_beta", layer.ln2_beta);
    for (size_t i2 = 0; i2 < layer.mlp_w.size(); ++i2) {
      fn(lp + ".mlp_w" + std::to_string(i2), layer.mlp_w[i2]);
      fn(lp + ".mlp_b" + std::to_string(i2), layer.mlp_b[i2]);
    }
  }
}

}  // namespace

void ModelParams::for_each(
    const std::function<void(const std::string&, Tensor&)>& fn) {
  walk_path(ts, "ts", fn);
  walk_path(mc, "mc", fn);
  if (fusion.w_q.defined()) fn("fusion.w_q", fusion.w_q);
  if (fusion.w_k.defined()) fn("fusion.w_k", fusion.w_k);
  if (fusion.w_v.defined()) fn("fusion.w_v", fusion.w_v);
  if (fusion.w_qkv.defined()) fn("fusion.w_qkv", fusion.w_qkv);
  if (fusion.w_fc.defined()) fn("fusion.w_fc", fusion.w_fc);
  if (fusion.b_fc.defined()) fn("fusion.b_fc", fusion.b_fc);
  fn("head.ln_gamma", head.ln_gamma);
  fn("head.ln_beta", head.ln_beta);
  fn("head.w", head.w);
  fn("head.b", head.b);
}

void ModelParams::for_each(
    const std::function<void(const std::string&, const Tensor&)>& fn) const {
  auto& self = const_cast<ModelParams&>(*this);
  self.for_each([&fn](const std::string& name, Tensor& t) {
    fn(name, static_cast<const Tensor&>(t));
  });
}

std::vector<Tensor> ModelParams::tensors() const {
  std::vector<Tensor> out;
  for_each([&out](const std::string&, const Tensor& t) { out.push_back(t); });
  return out;
}

ModelParams ModelParams::bind(GradTape& tape) const {
  ModelParams bound = *this;
  bound.for_each([&tape](const std::string&, Tensor& t) { t = tape.leaf(t); });
  return bound;
}

std::vector<Tensor> ModelParams::collect_grads(const GradTape& tape) const {
  std::vector<Tensor> grads;
  for_each([&](const std::string&, const Tensor& t) { grads.push_back(tape.grad(t)); });
  return grads;
}

ModelParams init_params(const ViTConfig& cfg, Rng& rng) {
  return build_params(cfg, &rng);
}

size_t count_params(const ViTConfig& cfg) {
  ModelParams zeros = build_params(cfg, nullptr);
  size_t total = 0;
  zeros.for_each([&total](const std::string&, const Tensor& t) { total += t.numel(); });
  return total;
}

// ---- forward pieces ----

Tensor patch_time_based(const Tensor& x) {
  if (x.ndim() != 2) throw ShapeError("patch_time_based: input is not 2-D");
  return transpose(x);  // patch j = column j, flattened to length L
}

Tensor patch_content_time(const Tensor& x, size_t t_s) {
  if (x.ndim() != 2) throw ShapeError("patch_content_time: input is not 2-D");
  const size_t l = x.rows(), n = x.cols();
  if (t_s < 1 || l % t_s != 0) {
    throw ShapeError("patch_content_time: L must be divisible by T_s");
  }
  if (t_s > l / 2) throw ShapeError("patch_content_time: T_s must be <= L/2");
  // Row-major reinterpretation: rows [j*T_s, (j+1)*T_s) are already
  // contiguous, so each band flattens in place.
  return reshape(x, {l / t_s, t_s * n});
}

Tensor embed(const Tensor& patches, const PathParams& path) {
  if (patches.ndim() != 2 || patches.cols() != path.patch_proj.rows()) {
    throw ShapeError("embed: patch size does not match projection");
  }
  Tensor projected = matmul(patches, path.patch_proj);
  Tensor tokens = concat_rows({path.cls_token, projected});
  if (!tokens.same_shape(path.pos_embed)) {
    throw ShapeError("embed: position embedding shape mismatch");
  }
  return add(tokens, path.pos_embed);
}

Tensor self_attention(const Tensor& z, const Tensor& w_qkv) {
  if (z.ndim() != 2 || w_qkv.ndim() != 2 || z.cols() != w_qkv.rows() ||
      w_qkv.cols() % 3 != 0) {
    throw ShapeError("self_attention: weights must be d x 3*d_h");
  }
  const size_t dh = w_qkv.cols() / 3;
  Tensor qkv = matmul(z, w_qkv);
  Tensor q = slice_cols(qkv, 0, dh);
  Tensor k = slice_cols(qkv, dh, 2 * dh);
  Tensor v = slice_cols(qkv, 2 * dh, 3 * dh);
  Tensor scores = scale(matmul(q, transpose(k)),
                        1.0 / std::sqrt(static_cast<double>(dh)));
  return matmul(softmax_rows(scores), v);
}

Tensor multihead_attention(const Tensor& z, const std::vector<Tensor>& w_qkv,
                           const Tensor& w_msa) {
  if (w_qkv.empty()) throw ShapeError("multihead_attention: no heads");
  std::vector<Tensor> heads;
  heads.reserve(w_qkv.size());
  for (const Tensor& w : w_qkv) heads.push_back(self_attention(z, w));
  Tensor cat = concat_cols(heads);
  if (cat.cols() != w_msa.rows()) {
    throw ShapeError("multihead_attention: W_MSA must be (h*d_h) x d");
  }
  return matmul(cat, w_msa);
}

namespace {

Tensor activation_fn(const Tensor& t, Activation act) {
  return act == Activation::gelu ? gelu(t) : relu(t);
}

Tensor mlp_block(const Tensor& z, const LayerParams& layer, Activation act) {
  Tensor t = z;
  for (size_t i = 0; i + 1 < layer.mlp_w.size(); ++i) {
    t = activation_fn(add_row_bias(matmul(t, layer.mlp_w[i]), layer.mlp_b[i]), act);
  }
  return add_row_bias(matmul(t, layer.mlp_w.back()), layer.mlp_b.back());
}

}  // namespace

Tensor encoder_layer(const Tensor& z, const LayerParams& layer, const ViTConfig& cfg) {
  Tensor attn_in = layer_norm(z, layer.ln1_gamma, layer.ln1_beta);
  Tensor z_mid = add(multihead_attention(attn_in, layer.w_qkv, layer.w_msa), z);
  Tensor mlp_in = layer_norm(z_mid, layer.ln2_gamma, layer.ln2_beta);
  return add(mlp_block(mlp_in, layer, cfg.activation), z_mid);
}

Tensor cross_attention_fuse(const Tensor& z_ts, const Tensor& z_mc,
                            const FusionParams& fusion) {
  if (!fusion.w_q.defined() || !fusion.w_k.defined() || !fusion.w_v.defined()) {
    throw ShapeError("cross_attention_fuse: fusion weights missing");
  }
  if (z_ts.ndim() != 2 || z_mc.ndim() != 2 || z_ts.cols() != fusion.w_q.rows() ||
      z_mc.cols() != fusion.w_k.rows()) {
    throw ShapeError("cross_attention_fuse: path width mismatch");
  }
  const size_t dh = fusion.w_q.cols();
  Tensor q = matmul(z_ts, fusion.w_q);
  Tensor k = matmul(z_mc, fusion.w_k);
  Tensor v = matmul(z_mc, fusion.w_v);
  Tensor scores = scale(matmul(q, transpose(k)),
                        1.0 / std::sqrt(static_cast<double>(dh)));
  return matmul(softmax_rows(scores), v);
}

Tensor classify_head(const Tensor& z0, const HeadParams& head) {
  Tensor normed = layer_norm(z0, head.ln_gamma, head.ln_beta);
  return sigmoid(add_row_bias(matmul(normed, head.w), head.b));
}

namespace {

Tensor run_path(const Tensor& patches, const PathParams& path, const ViTConfig& cfg) {
  Tensor z = embed(patches, path);
  for (const LayerParams& layer : path.layers) z = encoder_layer(z, layer, cfg);
  return z;
}

}  // namespace

Tensor forward(const Tensor& x, const ModelParams& params, const ViTConfig& cfg) {
  cfg.validate();
  if (x.ndim() != 2 || x.rows() != cfg.l_history || x.cols() != cfg.n_contents) {
    throw ShapeError("forward: input must be L x N_c");
  }
  Tensor scaled = scale(x, params.input_scale);
  Tensor z_ts = run_path(patch_time_based(scaled), params.ts, cfg);
  Tensor z_mc = run_path(patch_content_time(scaled, cfg.t_s), params.mc, cfg);

  Tensor z0;
  switch (cfg.fusion) {
    case FusionKind::cross_attention:
      z0 = slice_rows(cross_attention_fuse(z_ts, z_mc, params.fusion), 0, 1);
      break;
    case FusionKind::fully_connected: {
      Tensor cls = concat_cols({slice_rows(z_ts, 0, 1), slice_rows(z_mc, 0, 1)});
      z0 = add_row_bias(matmul(cls, params.fusion.w_fc), params.fusion.b_fc);
      break;
    }
    case FusionKind::self_attention: {
      Tensor all = concat_rows({z_ts, z_mc});
      z0 = slice_rows(self_attention(all, params.fusion.w_qkv), 0, 1);
      break;
    }
  }
  return classify_head(z0, params.head);
}

Tensor pack_params(const ModelParams& params) {
  std::vector<double> flat;
  params.for_each([&flat](const std::string&, const Tensor& t) {
    flat.insert(flat.end(), t.data().begin(), t.data().end());
  });
  return Tensor::row(std::move(flat));
}

ModelParams unpack_params(const Tensor& flat, const ViTConfig& cfg,
                          double input_scale) {
  ModelParams out = build_params(cfg, nullptr);
  out.input_scale = input_scale;
  size_t offset = 0;
  out.for_each([&](const std::string&, Tensor& t) {
    const size_t n = t.numel();
    t = reshape(slice_cols(flat, offset, offset + n), t.shape());
    offset += n;
  });
  if (offset != flat.numel()) {
    throw ShapeError("unpack_params: flat vector length mismatch");
  }
  return out;
}

// ---- checkpoint io ----

namespace {

constexpr char kMagic[4] = {'V', 'C', 'K', 'P'};
constexpr uint32_t kVersion = 1;

template <class T>
void write_raw(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
void read_raw(std::ifstream& in, T& v, const std::string& path) {
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("truncated checkpoint: " + path);
}

void write_config(std::ofstream& out, const ViTConfig& cfg) {
  const uint32_t fields[] = {
      static_cast<uint32_t>(cfg.l_history), static_cast<uint32_t>(cfg.n_contents),
      static_cast<uint32_t>(cfg.t_s),       static_cast<uint32_t>(cfg.d_model),
      static_cast<uint32_t>(cfg.n_heads),   static_cast<uint32_t>(cfg.n_layers),
      static_cast<uint32_t>(cfg.mlp_size),  static_cast<uint32_t>(cfg.mlp_layers),
      static_cast<uint32_t>(cfg.k_top),     static_cast<uint32_t>(cfg.fusion),
      static_cast<uint32_t>(cfg.activation)};
  for (uint32_t f : fields) write_raw(out, f);
}

ViTConfig read_config(std::ifstream& in, const std::string& path) {
  uint32_t f[11];
  for (uint32_t& v : f) read_raw(in, v, path);
  ViTConfig cfg;
  cfg.l_history = f[0];
  cfg.n_contents = f[1];
  cfg.t_s = f[2];
  cfg.d_model = f[3];
  cfg.n_heads = f[4];
  cfg.n_layers = f[5];
  cfg.mlp_size = f[6];
  cfg.mlp_layers = f[7];
  cfg.k_top = f[8];
  if (f[9] > 2 || f[10] > 1) throw IoError("corrupt checkpoint config: " + path);
  cfg.fusion = static_cast<FusionKind>(f[9]);
  cfg.activation = static_cast<Activation>(f[10]);
  return cfg;
}

bool config_equal(const ViTConfig& a, const ViTConfig& b) {
  return a.l_history == b.l_history && a.n_contents == b.n_contents &&
         a.t_s == b.t_s && a.d_model == b.d_model && a.n_heads == b.n_heads &&
         a.n_layers == b.n_layers && a.mlp_size == b.mlp_size &&
         a.mlp_layers == b.mlp_layers && a.k_top == b.k_top &&
         a.fusion == b.fusion && a.activation == b.activation;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelParams& params,
                     const ViTConfig& cfg) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  out.write(kMagic, 4);
  write_raw(out, kVersion);
  write_config(out, cfg);
  write_raw(out, params.input_scale);

  uint32_t count = 0;
  params.for_each([&count](const std::string&, const Tensor&) { ++count; });
  write_raw(out, count);
  params.for_each([&out](const std::string& name, const Tensor& t) {
    write_raw(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_raw(out, static_cast<uint32_t>(t.ndim()));
    for (size_t d : t.shape()) write_raw(out, static_cast<uint64_t>(d));
    out.write(reinterpret_cast<const char*>(t.data().data()),
              static_cast<std::streamsize>(t.numel() * sizeof(double)));
  });
  if (!out) throw IoError("failed while writing checkpoint: " + path);
}

std::pair<ModelParams, ViTConfig> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw IoError("not a checkpoint (bad magic): " + path);
  }
  uint32_t version = 0;
  read_raw(in, version, path);
  if (version != kVersion) throw IoError("unsupported checkpoint version: " + path);
  ViTConfig cfg = read_config(in, path);
  cfg.validate();

  ModelParams params = build_params(cfg, nullptr);
  read_raw(in, params.input_scale, path);
  uint32_t count = 0;
  read_raw(in, count, path);

  uint32_t expected = 0;
  params.for_each([&expected](const std::string&, const Tensor&) { ++expected; });
  if (count != expected) {
    throw IoError("checkpoint does not match config (tensor count): " + path);
  }

  params.for_each([&](const std::string& name, Tensor& t) {
    uint32_t name_len = 0;
    read_raw(in, name_len, path);
    std::string stored(name_len, '\0');
    in.read(stored.data(), name_len);
    if (!in || stored != name) {
      throw IoError("checkpoint does not match config (tensor " + name + "): " + path);
    }
    uint32_t ndim = 0;
    read_raw(in, ndim, path);
    std::vector<size_t> shape(ndim);
    for (uint32_t i = 0; i < ndim; ++i) {
      uint64_t d = 0;
      read_raw(in, d, path);
      shape[i] = static_cast<size_t>(d);
    }
    if (shape != t.shape()) {
      throw IoError("checkpoint does not match config (shape of " + name + "): " + path);
    }
    std::vector<double> data(t.numel());
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!in) throw IoError("truncated checkpoint: " + path);
    t = Tensor(shape, std::move(data));
  });
  return {std::move(params), cfg};
}

ModelParams load_checkpoint(const std::string& path, const ViTConfig& expected) {
  auto [params, cfg] = load_checkpoint(path);
  if (!config_equal(cfg, expected)) {
    throw IoError("checkpoint config mismatch: " + path);
  }
  return params;
}

}  // namespace vitcat::model
