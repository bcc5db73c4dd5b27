#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "gos/interact.hpp"
#include "gos/rng.hpp"

using namespace gos;

namespace {

Tensor rand_t(std::vector<int> shape, uint64_t seed, double scale = 1.0) {
  SplitMix64 rng(seed);
  Tensor t(std::move(shape));
  for (size_t i = 0; i < t.numel(); ++i) t[i] = rng.normal() * scale;
  return t;
}

struct Fixture {
  nn::ParamStore ps;
  SplitMix64 rng{3};
  ModelWidths w;
  ObjectInteraction inter{ps, rng, ModelWidths{}, 64};
};

}  // namespace

TEST_CASE("fuse_features: 49 tokens; zero fusion map leaves bias + encoding") {
  Fixture f;
  Tensor f_scene = rand_t({f.w.c4 / 2, 7, 7}, 1);
  Tensor f_gaze = rand_t({f.w.c4 / 2, 7, 7}, 2);
  Tensor map({7, 7});
  nn::Tape t(f.ps);
  ad::Value tokens = f.inter.fuse_features(t, ad::constant(f_scene),
                                           ad::constant(f_gaze),
                                           ad::constant(map));
  REQUIRE(tokens->value.shape() == std::vector<int>{49, f.w.d_model});

  // with M = 0 all spatial positions collapse to projection bias + PE
  Tensor pe = nn::sinusoid_encoding(49, f.w.d_model);
  const Tensor& bias = f.ps.get("inter.fuse_proj.b");
  for (int tok = 0; tok < 49; ++tok)
    for (int d = 0; d < f.w.d_model; ++d)
      CHECK(tokens->value.at(tok, d) ==
            doctest::Approx(bias.at(d) + pe.at(tok, d)).epsilon(1e-12));
}

TEST_CASE("mask_embed: shape preserved, permutation equivariant per row") {
  Fixture f;
  Tensor q = rand_t({5, f.w.d_model}, 4);
  nn::Tape t(f.ps);
  ad::Value e = f.inter.mask_embed(t, ad::constant(q));
  REQUIRE(e->value.shape() == std::vector<int>{5, f.w.d_model});

  // permute rows of the input: embeddings permute identically
  std::vector<int> perm = {3, 0, 4, 1, 2};
  Tensor qp({5, f.w.d_model});
  for (int i = 0; i < 5; ++i)
    for (int d = 0; d < f.w.d_model; ++d)
      qp.at(i, d) = q.at(perm[i], d);
  nn::Tape t2(f.ps);
  ad::Value ep = f.inter.mask_embed(t2, ad::constant(qp));
  for (int i = 0; i < 5; ++i)
    for (int d = 0; d < f.w.d_model; ++d)
      CHECK(ep->value.at(i, d) == e->value.at(perm[i], d));
}

TEST_CASE("self_encode: shape preserved, deterministic") {
  Fixture f;
  Tensor x = rand_t({49, f.w.d_model}, 5, 0.5);
  nn::Tape t(f.ps);
  ad::Value a = f.inter.self_encode(t, ad::constant(x));
  REQUIRE(a->value.shape() == std::vector<int>{49, f.w.d_model});
  nn::Tape t2(f.ps);
  ad::Value b = f.inter.self_encode(t2, ad::constant(x));
  for (size_t i = 0; i < a->value.numel(); ++i)
    CHECK(a->value[i] == b->value[i]);
}

TEST_CASE("cross_interact: exactly invariant to mask-embedding permutation") {
  Fixture f;
  Tensor fe = rand_t({49, f.w.d_model}, 6, 0.5);
  Tensor qm = rand_t({8, f.w.d_model}, 7, 0.5);

  nn::Tape t(f.ps);
  ad::Value base = f.inter.cross_interact(t, ad::constant(fe), ad::constant(qm));

  SplitMix64 prng(11);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<int> perm(8);
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = 7; i > 0; --i)
      std::swap(perm[i], perm[prng.uniform_int(i + 1)]);
    Tensor qp({8, f.w.d_model});
    for (int i = 0; i < 8; ++i)
      for (int d = 0; d < f.w.d_model; ++d)
        qp.at(i, d) = qm.at(perm[i], d);
    nn::Tape t2(f.ps);
    ad::Value out =
        f.inter.cross_interact(t2, ad::constant(fe), ad::constant(qp));
    for (size_t i = 0; i < base->value.numel(); ++i)
      CHECK(std::abs(out->value[i] - base->value[i]) <= 1e-12);
  }
}

TEST_CASE("cross_interact: identical KV rows act like a single row") {
  Fixture f;
  Tensor fe = rand_t({4, f.w.d_model}, 8, 0.5);
  Tensor one = rand_t({1, f.w.d_model}, 9, 0.5);
  Tensor many({6, f.w.d_model});
  for (int i = 0; i < 6; ++i)
    for (int d = 0; d < f.w.d_model; ++d) many.at(i, d) = one.at(0, d);

  nn::Tape t1(f.ps), t2(f.ps);
  ad::Value a = f.inter.cross_interact(t1, ad::constant(fe), ad::constant(one));
  ad::Value b = f.inter.cross_interact(t2, ad::constant(fe), ad::constant(many));
  for (size_t i = 0; i < a->value.numel(); ++i)
    CHECK(a->value[i] == doctest::Approx(b->value[i]).epsilon(1e-12));
}

TEST_CASE("heatmap_head: 64x64 raw output, deterministic") {
  Fixture f;
  Tensor reg = rand_t({49, f.w.d_model}, 10, 0.5);
  nn::Tape t(f.ps);
  ad::Value hm = f.inter.heatmap_head(t, ad::constant(reg));
  REQUIRE(hm->value.shape() == std::vector<int>{64, 64});
  nn::Tape t2(f.ps);
  ad::Value hm2 = f.inter.heatmap_head(t2, ad::constant(reg));
  for (size_t i = 0; i < hm->value.numel(); ++i)
    CHECK(hm->value[i] == hm2->value[i]);
}

TEST_CASE("gt_heatmap: peak 1, sigma-3 falloff, corner peak") {
  // gaze point exactly at the center of cell (32,32)
  double g = 32.5 / 64.0;
  Tensor m = ObjectInteraction::gt_heatmap(g, g, 64);
  double mx = 0;
  int mi = 0, mj = 0;
  for (int i = 0; i < 64; ++i)
    for (int j = 0; j < 64; ++j)
      if (m.at(i, j) > mx) {
        mx = m.at(i, j);
        mi = i;
        mj = j;
      }
  CHECK(mx == doctest::Approx(1.0));
  CHECK(mi == 32);
  CHECK(mj == 32);
  // 3 cells away along an axis: exp(-9/18)
  CHECK(m.at(32, 35) / m.at(32, 32) ==
        doctest::Approx(std::exp(-0.5)).epsilon(1e-9));

  Tensor corner = ObjectInteraction::gt_heatmap(0.0, 0.0, 64);
  double cmx = 0;
  int ci = -1, cj = -1;
  for (int i = 0; i < 64; ++i)
    for (int j = 0; j < 64; ++j)
      if (corner.at(i, j) > cmx) {
        cmx = corner.at(i, j);
        ci = i;
        cj = j;
      }
  CHECK(ci == 0);
  CHECK(cj == 0);
  CHECK(cmx == doctest::Approx(1.0));
}

TEST_CASE("gt_heatmap: radially non-increasing from the peak") {
  Tensor m = ObjectInteraction::gt_heatmap(0.3, 0.7, 64);
  double px = 0.3 * 64, py = 0.7 * 64;
  for (int i = 0; i < 63; ++i)
    for (int j = 0; j < 63; ++j) {
      double d0 = std::hypot(j + 0.5 - px, i + 0.5 - py);
      double d1 = std::hypot(j + 1.5 - px, i + 0.5 - py);
      if (d1 > d0) CHECK(m.at(i, j + 1) <= m.at(i, j) + 1e-15);
    }
}

TEST_CASE("heatmap_loss: MSE examples") {
  Tensor gt = ObjectInteraction::gt_heatmap(0.4, 0.6, 64);
  ad::Value same = ad::constant(gt);
  CHECK(ObjectInteraction::heatmap_loss(same, gt)->value.item() ==
        doctest::Approx(0.0).epsilon(1e-12));

  Tensor plus1 = gt;
  for (size_t i = 0; i < plus1.numel(); ++i) plus1[i] += 1.0;
  CHECK(ObjectInteraction::heatmap_loss(ad::constant(plus1), gt)->value.item() ==
        doctest::Approx(1.0).epsilon(1e-12));

  double s = 0;
  for (size_t i = 0; i < gt.numel(); ++i) s += gt[i] * gt[i];
  CHECK(ObjectInteraction::heatmap_loss(ad::constant(Tensor({64, 64})), gt)
            ->value.item() == doctest::Approx(s / 4096.0).epsilon(1e-12));

  CHECK_THROWS(
      ObjectInteraction::heatmap_loss(ad::constant(Tensor({32, 32})), gt));
}

TEST_CASE("energy_loss: closed-form examples") {
  Bitmap mask(64, 64);
  for (int i = 0; i < 10; ++i) mask.at(20, 10 + i) = 1;  // 10-cell mask

  Tensor ones = Tensor::full({64, 64}, 1.0);
  CHECK(ObjectInteraction::energy_loss(ad::constant(ones), mask)->value.item() ==
        doctest::Approx(0.0).epsilon(1e-12));

  Tensor zeros({64, 64});
  CHECK(ObjectInteraction::energy_loss(ad::constant(zeros), mask)->value.item() ==
        doctest::Approx(1.0).epsilon(1e-12));

  Tensor quarter = Tensor::full({64, 64}, 0.25);
  CHECK(ObjectInteraction::energy_loss(ad::constant(quarter), mask)
            ->value.item() == doctest::Approx(0.75).epsilon(1e-12));

  // raw values are clamped before averaging
  Tensor big = Tensor::full({64, 64}, 7.0);
  CHECK(ObjectInteraction::energy_loss(ad::constant(big), mask)->value.item() ==
        doctest::Approx(0.0).epsilon(1e-12));

  CHECK_THROWS(ObjectInteraction::energy_loss(ad::constant(zeros), Bitmap(64, 64)));
}

TEST_CASE("softmax: singleton row has weight 1") {
  Tensor x({1, 1});
  x.at(0, 0) = -3.7;
  ad::Value s = ad::softmax_rows(ad::constant(x));
  CHECK(s->value.at(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
}
