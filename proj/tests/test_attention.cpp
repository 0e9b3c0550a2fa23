#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dacsm/attention.hpp"
#include "dacsm/linalg.hpp"
#include "dacsm/reference.hpp"
#include "dacsm/verify.hpp"

using namespace dacsm;

namespace {

Tensor randn(std::vector<int> shape, Rng& rng, double s = 1.0) {
  Tensor t(std::move(shape));
  for (int i = 0; i < t.size(); ++i) t[i] = rng.normal(0.0, s);
  return t;
}

Tensor unit_rows(int r, int c, Rng& rng) {
  Tensor t = randn({r, c}, rng);
  for (int i = 0; i < r; ++i) {
    double nn = 0.0;
    for (int j = 0; j < c; ++j) nn += t.at(i, j) * t.at(i, j);
    nn = std::sqrt(nn);
    for (int j = 0; j < c; ++j) t.at(i, j) /= nn;
  }
  return t;
}

AttentionParams random_params(int d, int heads, Rng& rng) {
  AttentionParams p;
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  p.w_q = randn({d, d}, rng, s);
  p.w_k = randn({d, d}, rng, s);
  p.w_v = randn({d, d}, rng, s);
  p.heads = heads;
  return p;
}

Tensor attend_value(const AttentionParams& p, const Tensor& zq, const Tensor& zkv,
                    const NoiseSpec& noise = {}, Rng* rng = nullptr, Tensor* weights = nullptr) {
  Tape tape;
  const BoundAttention ba = bind_attention(tape, p);
  const AttendResult r = attend(tape, ba, tape.leaf(zq), tape.leaf(zkv), noise, rng);
  if (weights) *weights = r.weights;
  return tape.value(r.out);
}

}  // namespace

TEST_CASE("attention params validation") {
  Rng rng(1);
  AttentionParams p = random_params(8, 2, rng);
  p.validate();
  CHECK(p.dim() == 8);
  CHECK(p.head_dim() == 4);

  p.heads = 3;  // does not divide 8
  CHECK_THROWS_AS(p.validate(), ParameterError);
  p.heads = 2;
  p.w_k = randn({8, 4}, rng);
  CHECK_THROWS_AS(p.validate(), ParameterError);
}

TEST_CASE("single token attention returns its projected value row") {
  Rng rng(2);
  const AttentionParams p = random_params(6, 2, rng);
  const Tensor z = randn({1, 6}, rng);
  Tensor weights;
  const Tensor out = attend_value(p, z, z, {}, nullptr, &weights);
  const Tensor v = matmul(z, p.w_v);
  REQUIRE(out.same_shape(v));
  for (int i = 0; i < out.size(); ++i) CHECK(out[i] == doctest::Approx(v[i]).epsilon(1e-13));
  for (int h = 0; h < 2; ++h) CHECK(weights.at(h, 0, 0) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("silent noise is bit-identical to disabled noise") {
  Rng rng(3);
  const AttentionParams p = random_params(8, 4, rng);
  const Tensor zq = randn({3, 8}, rng), zkv = randn({5, 8}, rng);

  const Tensor plain = attend_value(p, zq, zkv);

  NoiseSpec off;
  off.enabled = false;
  off.sigma = 0.7;
  const Tensor disabled = attend_value(p, zq, zkv, off);

  NoiseSpec silent;
  silent.enabled = true;
  silent.sigma = 0.0;
  Rng noise_rng(99);
  const Tensor zero_sigma = attend_value(p, zq, zkv, silent, &noise_rng);

  for (int i = 0; i < plain.size(); ++i) {
    CHECK(plain[i] == disabled[i]);
    CHECK(plain[i] == zero_sigma[i]);
  }
}

TEST_CASE("attention matches the explicit-summation reference") {
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const int heads = trial % 2 == 0 ? 2 : 4;
    const AttentionParams p = random_params(8, heads, rng);
    const Tensor zq = randn({4, 8}, rng), zkv = randn({6, 8}, rng);
    Tensor weights;
    const Tensor out = attend_value(p, zq, zkv, {}, nullptr, &weights);
    Tensor ref_weights;
    const Tensor want = ref::attention(zq, zkv, p.w_q, p.w_k, p.w_v, heads, &ref_weights);
    REQUIRE(out.same_shape(want));
    for (int i = 0; i < out.size(); ++i) CHECK(out[i] == doctest::Approx(want[i]).epsilon(1e-12));
    REQUIRE(weights.same_shape(ref_weights));
    for (int i = 0; i < weights.size(); ++i) CHECK(std::fabs(weights[i] - ref_weights[i]) < 1e-12);

    // Every attention row is a distribution.
    for (int h = 0; h < heads; ++h)
      for (int i = 0; i < 4; ++i) {
        double sum = 0.0;
        for (int j = 0; j < 6; ++j) {
          CHECK(weights.at(h, i, j) >= 0.0);
          sum += weights.at(h, i, j);
        }
        CHECK(std::fabs(sum - 1.0) < 1e-12);
      }
  }
}

TEST_CASE("attend rejects mismatched inputs and bad noise specs") {
  Rng rng(5);
  const AttentionParams p = random_params(8, 2, rng);
  const Tensor zq = randn({3, 8}, rng), bad = randn({3, 6}, rng);
  Tape tape;
  const BoundAttention ba = bind_attention(tape, p);
  CHECK_THROWS_AS(attend(tape, ba, tape.leaf(zq), tape.leaf(bad)), DimensionError);

  NoiseSpec negative;
  negative.enabled = true;
  negative.sigma = -0.1;
  Rng nrng(1);
  CHECK_THROWS_AS(attend(tape, ba, tape.leaf(zq), tape.leaf(zq), negative, &nrng), ParameterError);

  NoiseSpec on;
  on.enabled = true;
  on.sigma = 0.1;
  CHECK_THROWS_AS(attend(tape, ba, tape.leaf(zq), tape.leaf(zq), on, nullptr), ParameterError);
}

TEST_CASE("noise draws are seed-deterministic and centered on the clean output") {
  Rng rng(4);
  const AttentionParams p = random_params(8, 2, rng);
  const Tensor zq = randn({3, 8}, rng), zkv = randn({4, 8}, rng);
  NoiseSpec on;
  on.enabled = true;
  on.sigma = 0.05;

  Rng a(1234), b(1234), c(77);
  const Tensor out_a = attend_value(p, zq, zkv, on, &a);
  const Tensor out_b = attend_value(p, zq, zkv, on, &b);
  const Tensor out_c = attend_value(p, zq, zkv, on, &c);
  bool differs = false;
  for (int i = 0; i < out_a.size(); ++i) {
    CHECK(out_a[i] == out_b[i]);  // same seed, same draws
    differs = differs || out_a[i] != out_c[i];
  }
  CHECK(differs);

  // Zero-mean noise: the empirical mean over many draws stays within three
  // standard errors of the deterministic output, per element.
  const Tensor clean = attend_value(p, zq, zkv);
  const int draws = 10000;
  Tensor mean(clean.shape()), m2(clean.shape());
  Rng noise_rng(4242);
  for (int n = 1; n <= draws; ++n) {
    const Tensor out = attend_value(p, zq, zkv, on, &noise_rng);
    for (int i = 0; i < out.size(); ++i) {
      const double delta = out[i] - mean[i];
      mean[i] += delta / n;
      m2[i] += delta * (out[i] - mean[i]);
    }
  }
  int worst_sigmas = 0;
  for (int i = 0; i < clean.size(); ++i) {
    const double se = std::sqrt(m2[i] / (draws - 1.0) / draws);
    if (std::fabs(mean[i] - clean[i]) > 3.0 * se) ++worst_sigmas;
  }
  // Fixed instance and noise seed; the margin here was checked to be stable
  // across independent noise seeds, not a single lucky draw.
  CHECK(worst_sigmas == 0);
}

TEST_CASE("hard style swap recovers exact and permuted matches") {
  Rng rng(7);
  Tensor style = unit_rows(4, 8, rng);
  Tensor content({2, 8});
  for (int j = 0; j < 8; ++j) {
    content.at(0, j) = style.at(2, j);  // exact copy of style row 2
    content.at(1, j) = style.at(0, j);
  }
  std::vector<int> chosen;
  const Tensor matched = style_swap_hard(content, style, &chosen);
  CHECK(chosen[0] == 2);
  CHECK(chosen[1] == 0);
  for (int j = 0; j < 8; ++j) {
    CHECK(matched.at(0, j) == style.at(2, j));
    CHECK(matched.at(1, j) == style.at(0, j));
  }

  // Orthonormal basis content against a permuted basis recovers the permutation.
  const int d = 4;
  Tensor basis({d, d});
  for (int i = 0; i < d; ++i) basis.at(i, i) = 1.0;
  const std::vector<int> perm = {2, 0, 3, 1};
  Tensor permuted({d, d});
  for (int i = 0; i < d; ++i) permuted.at(i, perm[static_cast<size_t>(i)]) = 1.0;
  std::vector<int> recovered;
  style_swap_hard(basis, permuted, &recovered);
  for (int i = 0; i < d; ++i) CHECK(perm[static_cast<size_t>(recovered[static_cast<size_t>(i)])] == i);
}

TEST_CASE("hard style swap agrees with the exhaustive cosine reference") {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor content = unit_rows(9, 8, rng);
    const Tensor style = unit_rows(4, 8, rng);
    std::vector<int> chosen;
    const Tensor matched = style_swap_hard(content, style, &chosen);
    const auto [want, want_idx] = ref::style_swap(content, style);
    for (size_t i = 0; i < chosen.size(); ++i) CHECK(chosen[i] == want_idx[i]);
    for (int i = 0; i < matched.size(); ++i) CHECK(matched[i] == want[i]);
  }
}

TEST_CASE("hard style swap breaks ties toward the lowest style index") {
  Rng rng(9);
  const Tensor row = unit_rows(1, 6, rng);
  Tensor style({3, 6});
  Tensor other = unit_rows(1, 6, rng);
  for (int j = 0; j < 6; ++j) {
    style.at(0, j) = other.at(0, j);
    style.at(1, j) = row.at(0, j);  // two identical best matches at 1 and 2
    style.at(2, j) = row.at(0, j);
  }
  std::vector<int> chosen;
  style_swap_hard(row, style, &chosen);
  CHECK(chosen[0] == 1);
}

TEST_CASE("style matching rejects unnormalized rows") {
  Rng rng(10);
  const Tensor good = unit_rows(3, 5, rng);
  Tensor bad = unit_rows(2, 5, rng);
  for (int j = 0; j < 5; ++j) bad.at(1, j) *= 1.5;
  CHECK_THROWS_AS(style_swap_hard(bad, good), ParameterError);
  CHECK_THROWS_AS(style_swap_hard(good, bad), ParameterError);
  CHECK_THROWS_AS(soft_style_attention(bad, good, 1.0), ParameterError);
  CHECK_THROWS_AS(soft_style_attention(good, bad, 1.0), ParameterError);
}

TEST_CASE("soft style attention limits: flat, hard, single style row") {
  Rng rng(11);
  const Tensor content = unit_rows(5, 8, rng);
  const Tensor style = unit_rows(3, 8, rng);

  // Infinite temperature mixes every style row evenly.
  const Tensor flat = soft_style_attention(content, style, 1e9);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 8; ++j) {
      const double mean = (style.at(0, j) + style.at(1, j) + style.at(2, j)) / 3.0;
      CHECK(std::fabs(flat.at(i, j) - mean) < 1e-6);
    }

  // Vanishing temperature reproduces the hard swap.
  const Tensor sharp = soft_style_attention(content, style, 1e-4);
  const Tensor hard = style_swap_hard(content, style);
  for (int i = 0; i < sharp.size(); ++i) CHECK(std::fabs(sharp[i] - hard[i]) < 1e-6);

  // One style row leaves nothing to mix.
  const Tensor solo = unit_rows(1, 8, rng);
  const Tensor out = soft_style_attention(content, solo, 0.7);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 8; ++j) CHECK(out.at(i, j) == doctest::Approx(solo.at(0, j)).epsilon(1e-12));

  CHECK_THROWS_AS(soft_style_attention(content, style, 0.0), ParameterError);
}

TEST_CASE("soft-to-hard gap shrinks monotonically in temperature") {
  for (const PropertyResult& r : verify_suite("appendix-a")) {
    INFO(r.name << ": " << r.detail);
    CHECK(r.passed);
  }
}

TEST_CASE("attention shift bounds hold on random instances") {
  for (const PropertyResult& r : verify_suite("appendix-b")) {
    INFO(r.name << ": " << r.detail);
    CHECK(r.passed);
  }
}

TEST_CASE("attention divergence: zero at equality, positive under perturbation") {
  Rng rng(12);
  const AttentionParams p = random_params(8, 2, rng);
  const Tensor z = randn({5, 8}, rng);

  const double self_div = attention_divergence(p, z, z);
  CHECK(self_div == doctest::Approx(0.0).epsilon(1e-15));

  Tensor shifted = z;
  for (int i = 0; i < shifted.size(); ++i) shifted[i] += 3.0 + 0.2 * i;
  CHECK(attention_divergence(p, z, shifted) > 0.0);
}

TEST_CASE("attention divergence matches a two-pass composition") {
  Rng rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    const int heads = trial % 2 == 0 ? 1 : 2;
    const AttentionParams p = random_params(8, heads, rng);
    const Tensor z = randn({4, 8}, rng), z_alt = randn({4, 8}, rng);

    Tensor w_self, w_alt;
    ref::attention(z, z, p.w_q, p.w_k, p.w_v, heads, &w_self);
    ref::attention(z_alt, z, p.w_q, p.w_k, p.w_v, heads, &w_alt);
    double acc = 0.0;
    for (int h = 0; h < heads; ++h)
      for (int i = 0; i < 4; ++i) {
        std::vector<double> pr(4), qr(4);
        for (int j = 0; j < 4; ++j) {
          pr[static_cast<size_t>(j)] = w_self.at(h, i, j);
          qr[static_cast<size_t>(j)] = w_alt.at(h, i, j);
        }
        acc += ref::kl_divergence(pr, qr);
      }
    const double want = acc / (heads * 4.0);
    CHECK(attention_divergence(p, z, z_alt) == doctest::Approx(want).epsilon(1e-10));
  }
}

TEST_CASE("residual block: identity tail and hand-computed case") {
  // Zero attention output and a zero MLP pass z through unchanged.
  Rng rng(14);
  const Tensor z = randn({3, 4}, rng);
  LayerNormParams ln;
  ln.gamma = Tensor::full({4}, 1.0);
  ln.beta = Tensor({4});
  MlpParams mlp;
  mlp.w1 = Tensor({4, 6});
  mlp.b1 = Tensor({6});
  mlp.w2 = Tensor({6, 4});
  mlp.b2 = Tensor({4});

  {
    Tape tape;
    const NodeId out = residual_block(tape, tape.leaf(z), tape.leaf(Tensor({3, 4})),
                                      bind_layer_norm(tape, ln), bind_mlp(tape, mlp));
    for (int i = 0; i < z.size(); ++i) CHECK(tape.value(out)[i] == z[i]);
  }

  {  // zero input and zero attention stay zero
    Tape tape;
    const NodeId out = residual_block(tape, tape.leaf(Tensor({3, 4})), tape.leaf(Tensor({3, 4})),
                                      bind_layer_norm(tape, ln), bind_mlp(tape, mlp));
    for (int i = 0; i < 12; ++i) CHECK(tape.value(out)[i] == 0.0);
  }

  // Hand case: z = [1, 0], attn = [0.5, -0.5], identity MLP weights.
  // z + attn = [1.5, -0.5]; LN gives ~[1, -1]; gelu([1, -1]) adds
  // [0.84134, -0.15866] onto the residual.
  {
    LayerNormParams ln2;
    MlpParams mlp2;
    ln2.gamma = Tensor::full({2}, 1.0);
    ln2.beta = Tensor({2});
    mlp2.w1 = Tensor({2, 2}, {1, 0, 0, 1});
    mlp2.b1 = Tensor({2});
    mlp2.w2 = Tensor({2, 2}, {1, 0, 0, 1});
    mlp2.b2 = Tensor({2});
    Tape tape;
    const NodeId out = residual_block(tape, tape.leaf(Tensor({1, 2}, {1.0, 0.0})),
                                      tape.leaf(Tensor({1, 2}, {0.5, -0.5})),
                                      bind_layer_norm(tape, ln2), bind_mlp(tape, mlp2));
    CHECK(tape.value(out).at(0, 0) == doctest::Approx(1.5 + 0.8413447460685429).epsilon(1e-5));
    CHECK(tape.value(out).at(0, 1) == doctest::Approx(-0.5 - 0.15865525393145707).epsilon(1e-5));
  }
}

TEST_CASE("mlp and layer norm parameter validation") {
  MlpParams mlp;
  mlp.w1 = Tensor({4, 6});
  mlp.b1 = Tensor({6});
  mlp.w2 = Tensor({6, 4});
  mlp.b2 = Tensor({4});
  mlp.validate(4);
  CHECK_THROWS_AS(mlp.validate(5), ParameterError);
  mlp.b1 = Tensor({5});
  CHECK_THROWS_AS(mlp.validate(4), ParameterError);

  LayerNormParams ln;
  ln.gamma = Tensor({4});
  ln.beta = Tensor({4});
  ln.validate(4);
  CHECK_THROWS_AS(ln.validate(3), ParameterError);
}
