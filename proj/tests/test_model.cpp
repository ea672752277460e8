#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "vitcat/errors.hpp"
#include "vitcat/gradcheck.hpp"
#include "vitcat/model.hpp"
#include "vitcat/rng.hpp"

using namespace vitcat;
using namespace vitcat::model;

namespace {

Tensor rand_tensor(Rng& rng, std::vector<size_t> shape, double lo = -1.0,
                   double hi = 1.0) {
  size_t n = 1;
  for (size_t d : shape) n *= d;
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v));
}

ViTConfig tiny_config() {
  ViTConfig cfg;
  cfg.l_history = 8;
  cfg.n_contents = 4;
  cfg.t_s = 2;
  cfg.d_model = 6;
  cfg.n_heads = 2;
  cfg.n_layers = 1;
  cfg.mlp_size = 8;
  cfg.mlp_layers = 1;
  cfg.k_top = 1;
  return cfg;
}

// scaled dot-product attention written as plain loops
std::vector<double> naive_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  const size_t nq = q.rows(), nk = k.rows(), dh = q.cols();
  std::vector<double> out(nq * v.cols(), 0.0);
  for (size_t i = 0; i < nq; ++i) {
    std::vector<double> logits(nk);
    double mx = -1e300;
    for (size_t j = 0; j < nk; ++j) {
      double dot = 0.0;
      for (size_t c = 0; c < dh; ++c) dot += q.at(i, c) * k.at(j, c);
      logits[j] = dot / std::sqrt(static_cast<double>(dh));
      mx = std::max(mx, logits[j]);
    }
    double total = 0.0;
    for (size_t j = 0; j < nk; ++j) {
      logits[j] = std::exp(logits[j] - mx);
      total += logits[j];
    }
    for (size_t j = 0; j < nk; ++j) {
      const double weight = logits[j] / total;
      for (size_t c = 0; c < v.cols(); ++c) out[i * v.cols() + c] += weight * v.at(j, c);
    }
  }
  return out;
}

// independent enumeration of every tensor the model owns
size_t expected_param_count(const ViTConfig& cfg) {
  const size_t d = cfg.d_model, dh = cfg.head_dim(), m = cfg.mlp_size;
  auto path = [&](size_t patch_size, size_t n_patches) {
    size_t mlp = d * m + m;
    for (size_t i = 1; i < cfg.mlp_layers; ++i) mlp += m * m + m;
    mlp += m * d + d;
    const size_t per_layer =
        cfg.n_heads * (d * 3 * dh) + (cfg.n_heads * dh) * d + 4 * d + mlp;
    return patch_size * d + (n_patches + 1) * d + d + cfg.n_layers * per_layer;
  };
  size_t total = path(cfg.l_history, cfg.n_contents) +
                 path(cfg.t_s * cfg.n_contents, cfg.l_history / cfg.t_s);
  switch (cfg.fusion) {
    case FusionKind::cross_attention: total += 3 * d * dh; break;
    case FusionKind::self_attention: total += d * 3 * dh; break;
    case FusionKind::fully_connected: total += 2 * d * d + d; break;
  }
  const size_t wf = cfg.fused_dim();
  total += 2 * wf + wf * cfg.n_contents + cfg.n_contents;
  return total;
}

ModelParams zero_weight_params(const ViTConfig& cfg) {
  Rng rng(1);
  ModelParams p = init_params(cfg, rng);
  p.for_each([](const std::string& name, Tensor& t) {
    if (name.find("gamma") != std::string::npos) {
      t = Tensor(t.shape(), std::vector<double>(t.numel(), 1.0));
    } else {
      t = Tensor(t.shape());
    }
  });
  return p;
}

}  // namespace

TEST_CASE("time-based patching: one patch per content") {
  Tensor x({4, 3}, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11});
  Tensor p = patch_time_based(x);
  CHECK(p.rows() == 3);  // N = N_c
  CHECK(p.cols() == 4);  // S = L
  for (size_t j = 0; j < 3; ++j) {
    for (size_t t = 0; t < 4; ++t) CHECK(p.at(j, t) == x.at(t, j));
  }

  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor pe = patch_time_based(eye);
  CHECK(pe.at(0, 0) == 1.0);
  CHECK(pe.at(0, 1) == 0.0);
  CHECK(pe.at(1, 0) == 0.0);
  CHECK(pe.at(1, 1) == 1.0);
}

TEST_CASE("content-time patching: one patch per T_s band") {
  Rng rng(3);
  Tensor x = rand_tensor(rng, {100, 50});
  Tensor p = patch_content_time(x, 5);
  CHECK(p.rows() == 20);   // N = L / T_s
  CHECK(p.cols() == 250);  // S = T_s * N_c

  // T_s = L/2 boundary gives two patches
  Tensor half = patch_content_time(rand_tensor(rng, {10, 3}), 5);
  CHECK(half.rows() == 2);

  CHECK_THROWS_AS(patch_content_time(x, 3), ShapeError);    // 100 % 3 != 0
  CHECK_THROWS_AS(patch_content_time(x, 100), ShapeError);  // T_s > L/2
}

TEST_CASE("patch geometry and round-trips on random valid configs") {
  Rng rng(5);
  for (int rep = 0; rep < 20; ++rep) {
    const size_t t_s = 1 + rng.uniform_int(4);
    const size_t l = t_s * (2 + rng.uniform_int(5));
    const size_t n = 1 + rng.uniform_int(8);
    Tensor x = rand_tensor(rng, {l, n});

    Tensor ts = patch_time_based(x);
    CHECK(ts.rows() == n);
    for (size_t j = 0; j < n; ++j) {
      for (size_t t = 0; t < l; ++t) CHECK(ts.at(j, t) == x.at(t, j));
    }

    Tensor mc = patch_content_time(x, t_s);
    CHECK(mc.rows() == l / t_s);
    for (size_t j = 0; j < l / t_s; ++j) {
      for (size_t r = 0; r < t_s; ++r) {
        for (size_t c = 0; c < n; ++c) {
          CHECK(mc.at(j, r * n + c) == x.at(j * t_s + r, c));
        }
      }
    }
  }
}

TEST_CASE("embed composes class token, projection and position embedding") {
  ViTConfig cfg = tiny_config();
  Rng rng(7);
  ModelParams params = init_params(cfg, rng);

  // zero patches and zero class token leave only the position embedding
  PathParams zeroed = params.ts;
  zeroed.cls_token = Tensor({1, cfg.d_model});
  Tensor zero_patches({cfg.n_contents, cfg.l_history});
  Tensor z0 = embed(zero_patches, zeroed);
  CHECK(z0.rows() == cfg.n_contents + 1);
  for (size_t i = 0; i < z0.numel(); ++i) {
    CHECK(z0.at(i) == zeroed.pos_embed.at(i));
  }

  // identity-extended projection with zero position embedding passes patches
  // through (d >= S here: S = T_s * N_c = 8 > d, so use the MC path sizes)
  ViTConfig small = cfg;
  small.d_model = 8;
  small.n_heads = 2;
  Rng rng2(9);
  ModelParams p2 = init_params(small, rng2);
  PathParams ident = p2.mc;  // S = t_s * n_contents = 8 = d
  std::vector<double> eye(8 * 8, 0.0);
  for (size_t i = 0; i < 8; ++i) eye[i * 8 + i] = 1.0;
  ident.patch_proj = Tensor({8, 8}, std::move(eye));
  ident.pos_embed = Tensor({small.l_history / small.t_s + 1, 8});
  ident.cls_token = Tensor({1, 8});
  Tensor patches = rand_tensor(rng2, {small.l_history / small.t_s, 8});
  Tensor out = embed(patches, ident);
  for (size_t j = 0; j < 8; ++j) CHECK(out.at(0, j) == 0.0);
  for (size_t i = 0; i < patches.rows(); ++i) {
    for (size_t j = 0; j < 8; ++j) CHECK(out.at(i + 1, j) == patches.at(i, j));
  }
}

TEST_CASE("self attention basics") {
  Rng rng(11);

  // a single token attends only to itself
  Tensor z1 = rand_tensor(rng, {1, 4});
  Tensor w = rand_tensor(rng, {4, 6});
  Tensor out1 = self_attention(z1, w);
  CHECK(out1.rows() == 1);
  CHECK(out1.cols() == 2);
  // expected: exactly the value row
  Tensor qkv = matmul(z1, w);
  for (size_t c = 0; c < 2; ++c) CHECK(out1.at(0, c) == doctest::Approx(qkv.at(0, 4 + c)));

  // zero keys make attention uniform: every output row is the V column mean
  std::vector<double> wk0(4 * 6);
  for (size_t r = 0; r < 4; ++r) {
    for (size_t c = 0; c < 6; ++c) {
      wk0[r * 6 + c] = (c >= 2 && c < 4) ? 0.0 : rng.uniform(-1.0, 1.0);
    }
  }
  Tensor w_zero_k({4, 6}, std::move(wk0));
  Tensor z = rand_tensor(rng, {5, 4});
  Tensor out = self_attention(z, w_zero_k);
  Tensor qkv_all = matmul(z, w_zero_k);
  for (size_t c = 0; c < 2; ++c) {
    double mean = 0.0;
    for (size_t i = 0; i < 5; ++i) mean += qkv_all.at(i, 4 + c);
    mean /= 5.0;
    for (size_t i = 0; i < 5; ++i) CHECK(out.at(i, c) == doctest::Approx(mean));
  }
}

TEST_CASE("self attention matches the naive reference") {
  Rng rng(13);
  for (int rep = 0; rep < 10; ++rep) {
    const size_t n = 2 + rng.uniform_int(7);  // up to 8 tokens
    const size_t d = 2 + rng.uniform_int(7);
    const size_t dh = 1 + rng.uniform_int(4);
    Tensor z = rand_tensor(rng, {n, d});
    Tensor w = rand_tensor(rng, {d, 3 * dh});
    Tensor out = self_attention(z, w);

    Tensor qkv = matmul(z, w);
    Tensor q = slice_cols(qkv, 0, dh);
    Tensor k = slice_cols(qkv, dh, 2 * dh);
    Tensor v = slice_cols(qkv, 2 * dh, 3 * dh);
    const auto expected = naive_attention(q, k, v);
    for (size_t i = 0; i < out.numel(); ++i) {
      CHECK(std::fabs(out.at(i) - expected[i]) < 1e-12);
    }
  }
}

TEST_CASE("multihead attention") {
  Rng rng(17);
  const size_t d = 6, dh = 3;
  Tensor z = rand_tensor(rng, {4, d});
  Tensor w_head = rand_tensor(rng, {d, 3 * dh});

  // h = 1 with identity projection reduces to single-head self attention
  std::vector<double> eye(dh * d, 0.0);
  for (size_t i = 0; i < dh; ++i) eye[i * d + i] = 1.0;
  Tensor w_msa_ident({dh, d}, std::move(eye));
  Tensor mha = multihead_attention(z, {w_head}, w_msa_ident);
  Tensor sa = self_attention(z, w_head);
  for (size_t i = 0; i < 4; ++i) {
    for (size_t c = 0; c < dh; ++c) CHECK(mha.at(i, c) == doctest::Approx(sa.at(i, c)));
    for (size_t c = dh; c < d; ++c) CHECK(mha.at(i, c) == doctest::Approx(0.0));
  }

  // duplicate heads produce identical concatenated halves before projection
  Tensor cat = concat_cols({self_attention(z, w_head), self_attention(z, w_head)});
  for (size_t i = 0; i < 4; ++i) {
    for (size_t c = 0; c < dh; ++c) {
      CHECK(cat.at(i, c) == cat.at(i, dh + c));
    }
  }

  CHECK_THROWS_AS(multihead_attention(z, {w_head}, Tensor({d, d})), ShapeError);
}

TEST_CASE("encoder layer with zero weights is the identity") {
  ViTConfig cfg = tiny_config();
  ModelParams p = zero_weight_params(cfg);
  Rng rng(19);
  Tensor z = rand_tensor(rng, {5, cfg.d_model});
  Tensor out = encoder_layer(z, p.ts.layers[0], cfg);
  REQUIRE(out.same_shape(z));
  for (size_t i = 0; i < z.numel(); ++i) CHECK(out.at(i) == z.at(i));
}

TEST_CASE("encoder layer preserves shape") {
  ViTConfig cfg = tiny_config();
  Rng rng(23);
  ModelParams p = init_params(cfg, rng);
  for (size_t n : {2, 5, 9}) {
    Tensor z = rand_tensor(rng, {n, cfg.d_model});
    Tensor out = encoder_layer(z, p.ts.layers[0], cfg);
    CHECK(out.rows() == n);
    CHECK(out.cols() == cfg.d_model);
  }
}

TEST_CASE("cross attention fusion") {
  ViTConfig cfg = tiny_config();
  Rng rng(29);
  ModelParams p = init_params(cfg, rng);
  const size_t dh = cfg.head_dim();

  // identical MC rows collapse the attention to that row's value projection
  Tensor z_ts = rand_tensor(rng, {5, cfg.d_model});
  std::vector<double> row(cfg.d_model);
  for (double& v : row) v = rng.uniform(-1.0, 1.0);
  std::vector<double> mc_data;
  for (int i = 0; i < 3; ++i) mc_data.insert(mc_data.end(), row.begin(), row.end());
  Tensor z_mc({3, cfg.d_model}, std::move(mc_data));
  Tensor fused = cross_attention_fuse(z_ts, z_mc, p.fusion);
  Tensor v_proj = matmul(Tensor({1, cfg.d_model}, row), p.fusion.w_v);
  for (size_t i = 0; i < fused.rows(); ++i) {
    for (size_t c = 0; c < dh; ++c) {
      CHECK(fused.at(i, c) == doctest::Approx(v_proj.at(0, c)));
    }
  }

  // zero key projection gives uniform attention over MC tokens
  FusionParams zero_k = p.fusion;
  zero_k.w_k = Tensor({cfg.d_model, dh});
  Tensor z_mc2 = rand_tensor(rng, {4, cfg.d_model});
  Tensor uniform = cross_attention_fuse(z_ts, z_mc2, zero_k);
  Tensor v_all = matmul(z_mc2, p.fusion.w_v);
  for (size_t c = 0; c < dh; ++c) {
    double mean = 0.0;
    for (size_t j = 0; j < 4; ++j) mean += v_all.at(j, c);
    mean /= 4.0;
    for (size_t i = 0; i < uniform.rows(); ++i) {
      CHECK(uniform.at(i, c) == doctest::Approx(mean));
    }
  }

  // matches the naive reference on random inputs
  Tensor q = matmul(z_ts, p.fusion.w_q);
  Tensor k = matmul(z_mc2, p.fusion.w_k);
  Tensor v = matmul(z_mc2, p.fusion.w_v);
  Tensor out = cross_attention_fuse(z_ts, z_mc2, p.fusion);
  const auto expected = naive_attention(q, k, v);
  for (size_t i = 0; i < out.numel(); ++i) {
    CHECK(std::fabs(out.at(i) - expected[i]) < 1e-12);
  }
}

TEST_CASE("classification head") {
  ViTConfig cfg = tiny_config();
  HeadParams head;
  const size_t wf = cfg.fused_dim();
  head.ln_gamma = Tensor({wf}, std::vector<double>(wf, 1.0));
  head.ln_beta = Tensor({wf});
  head.w = Tensor({wf, cfg.n_contents});
  head.b = Tensor({cfg.n_contents});

  Rng rng(31);
  Tensor z0 = rand_tensor(rng, {1, wf});
  Tensor out = classify_head(z0, head);
  CHECK(out.cols() == cfg.n_contents);
  for (size_t i = 0; i < out.numel(); ++i) CHECK(out.at(i) == doctest::Approx(0.5));
}

TEST_CASE("forward produces probabilities for every fusion head") {
  for (FusionKind fusion : {FusionKind::cross_attention, FusionKind::fully_connected,
                            FusionKind::self_attention}) {
    ViTConfig cfg = tiny_config();
    cfg.fusion = fusion;
    Rng rng(37);
    ModelParams p = init_params(cfg, rng);
    Tensor x = rand_tensor(rng, {cfg.l_history, cfg.n_contents}, 0.0, 5.0);
    Tensor y = forward(x, p, cfg);
    CHECK(y.rows() == 1);
    CHECK(y.cols() == cfg.n_contents);
    for (size_t i = 0; i < y.numel(); ++i) {
      CHECK(y.at(i) > 0.0);
      CHECK(y.at(i) < 1.0);
    }
  }
}

TEST_CASE("forward shape is invariant under content permutation") {
  ViTConfig cfg = tiny_config();
  Rng rng(41);
  ModelParams p = init_params(cfg, rng);
  Tensor x = rand_tensor(rng, {cfg.l_history, cfg.n_contents}, 0.0, 5.0);

  std::vector<double> permuted(x.numel());
  const size_t perm[] = {2, 0, 3, 1};
  for (size_t t = 0; t < cfg.l_history; ++t) {
    for (size_t c = 0; c < cfg.n_contents; ++c) {
      permuted[t * cfg.n_contents + c] = x.at(t, perm[c]);
    }
  }
  Tensor y = forward(Tensor(x.shape(), std::move(permuted)), p, cfg);
  CHECK(y.rows() == 1);
  CHECK(y.cols() == cfg.n_contents);
  for (size_t i = 0; i < y.numel(); ++i) {
    CHECK(y.at(i) > 0.0);
    CHECK(y.at(i) < 1.0);
  }
}

TEST_CASE("zero encoder weights reduce forward to head over fused embeddings") {
  ViTConfig cfg = tiny_config();
  ModelParams p = zero_weight_params(cfg);
  Rng rng(43);
  // keep embeddings and fusion alive
  Rng init2(44);
  ModelParams full = init_params(cfg, init2);
  p.ts.patch_proj = full.ts.patch_proj;
  p.ts.pos_embed = full.ts.pos_embed;
  p.ts.cls_token = full.ts.cls_token;
  p.mc.patch_proj = full.mc.patch_proj;
  p.mc.pos_embed = full.mc.pos_embed;
  p.mc.cls_token = full.mc.cls_token;
  p.fusion = full.fusion;
  p.head = full.head;

  Tensor x = rand_tensor(rng, {cfg.l_history, cfg.n_contents}, 0.0, 3.0);
  Tensor whole = forward(x, p, cfg);

  Tensor scaled = scale(x, p.input_scale);
  Tensor z_ts = embed(patch_time_based(scaled), p.ts);
  Tensor z_mc = embed(patch_content_time(scaled, cfg.t_s), p.mc);
  Tensor fused = slice_rows(cross_attention_fuse(z_ts, z_mc, p.fusion), 0, 1);
  Tensor expected = classify_head(fused, p.head);

  REQUIRE(whole.same_shape(expected));
  for (size_t i = 0; i < whole.numel(); ++i) {
    CHECK(whole.at(i) == doctest::Approx(expected.at(i)).epsilon(1e-12));
  }
}

TEST_CASE("count_params matches an independent enumeration") {
  ViTConfig a = tiny_config();
  CHECK(count_params(a) == expected_param_count(a));

  ViTConfig b = tiny_config();
  b.d_model = 8;
  b.n_heads = 4;
  b.n_layers = 2;
  b.mlp_layers = 2;
  b.fusion = FusionKind::fully_connected;
  CHECK(count_params(b) == expected_param_count(b));

  ViTConfig c = tiny_config();
  c.l_history = 12;
  c.t_s = 3;
  c.n_contents = 7;
  c.mlp_size = 5;
  c.fusion = FusionKind::self_attention;
  CHECK(count_params(c) == expected_param_count(c));
}

TEST_CASE("count_params is monotone in each architecture dimension") {
  ViTConfig base = tiny_config();

  ViTConfig wider = base;
  wider.d_model = 12;
  CHECK(count_params(wider) > count_params(base));

  ViTConfig bigger_mlp = base;
  bigger_mlp.mlp_size = base.mlp_size * 2;
  CHECK(count_params(bigger_mlp) > count_params(base));

  ViTConfig deeper = base;
  deeper.n_layers = base.n_layers + 1;
  CHECK(count_params(deeper) > count_params(base));

  // more heads at fixed per-head width d_h (so d = d_h * h grows with h)
  ViTConfig more_heads = base;
  more_heads.n_heads = base.n_heads + 1;
  more_heads.d_model = base.head_dim() * more_heads.n_heads;
  CHECK(count_params(more_heads) > count_params(base));
}

TEST_CASE("table-style preset grid is monotone along each varied column") {
  ViTConfig base = tiny_config();
  base.l_history = 8;
  base.n_contents = 10;
  base.k_top = 1;

  const size_t p1 = count_params(preset_variant(1, base));
  const size_t p2 = count_params(preset_variant(2, base));
  const size_t p3 = count_params(preset_variant(3, base));
  const size_t p4 = count_params(preset_variant(4, base));
  const size_t p5 = count_params(preset_variant(5, base));
  const size_t p6 = count_params(preset_variant(6, base));

  CHECK(p1 < p2);  // d 25 -> 50
  CHECK(p3 < p2);  // heads 4 -> 5
  CHECK(p4 < p2);  // mlp size 64 -> 128
  CHECK(p4 < p5);  // mlp layers 1 -> 2
  CHECK(p2 < p6);  // layers 1 -> 2
}

TEST_CASE("checkpoints round-trip and reject mismatched configs") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "vitcat_tests";
  fs::create_directories(dir);
  const std::string path = (dir / "model.vckp").string();

  ViTConfig cfg = tiny_config();
  Rng rng(47);
  ModelParams p = init_params(cfg, rng);
  p.input_scale = 0.125;
  save_checkpoint(path, p, cfg);

  ModelParams loaded = load_checkpoint(path, cfg);
  CHECK(loaded.input_scale == p.input_scale);
  const auto orig = p.tensors();
  const auto back = loaded.tensors();
  REQUIRE(orig.size() == back.size());
  for (size_t i = 0; i < orig.size(); ++i) {
    REQUIRE(orig[i].same_shape(back[i]));
    for (size_t j = 0; j < orig[i].numel(); ++j) {
      CHECK(orig[i].at(j) == back[i].at(j));  // bit-exact
    }
  }

  ViTConfig other = cfg;
  other.d_model = 8;
  other.n_heads = 2;
  CHECK_THROWS_AS(load_checkpoint(path, other), IoError);
  CHECK_THROWS_AS(load_checkpoint((dir / "missing.vckp").string()), IoError);
}

TEST_CASE("gradient suite passes at tiny scale") {
  for (const auto& c : gradcheck::run_gradient_suite(123)) {
    INFO(c.name, " err=", c.max_rel_err, " threshold=", c.threshold);
    CHECK(c.passed());
  }
}
