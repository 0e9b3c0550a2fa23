// Benchmark of the OpenMP kernels against the serial reference
// implementations. Each row reports wall time for the same workload and the
// maximum elementwise difference between the two results.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>

#include <CLI11.hpp>

#include "dacsm/reference.hpp"
#include "dacsm/rng.hpp"
#include "dacsm/tensor.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace {

using dacsm::Rng;
using dacsm::Tensor;

Tensor randn(std::vector<int> shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (int i = 0; i < t.size(); ++i) t[i] = rng.normal();
  return t;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (int i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

double time_ms(int reps, const std::function<void()>& fn) {
  fn();  // warm up
  const auto t0 = std::chrono::steady_clock::now();
  for (int r = 0; r < reps; ++r) fn();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

void row(const std::string& name, const std::string& size, double ref_ms, double par_ms, double diff) {
  std::printf("%-18s %-16s %10.3f %10.3f %9.2fx %12.3g\n", name.c_str(), size.c_str(), ref_ms, par_ms,
              ref_ms / par_ms, diff);
}

}  // namespace

int main(int argc, char** argv) {
  int n = 160, reps = 5;
  CLI::App app{"kernel benchmark: serial reference vs OpenMP"};
  app.add_option("--size", n, "base matrix side");
  app.add_option("--reps", reps, "timed repetitions per kernel");
  CLI11_PARSE(app, argc, argv);

#ifdef _OPENMP
  std::printf("OpenMP threads: %d\n", omp_get_max_threads());
#else
  std::printf("OpenMP unavailable, both columns are serial\n");
#endif
  std::printf("%-18s %-16s %10s %10s %10s %12s\n", "kernel", "size", "ref ms", "par ms", "speedup",
              "max |diff|");

  Rng rng(12345);

  {
    const Tensor a = randn({n, n}, rng), b = randn({n, n}, rng);
    Tensor out_ref, out_par;
    const double tr = time_ms(reps, [&] { out_ref = dacsm::ref::matmul(a, b); });
    const double tp = time_ms(reps, [&] { out_par = dacsm::matmul(a, b); });
    row("matmul", std::to_string(n) + "^3", tr, tp, max_abs_diff(out_ref, out_par));
  }

  {
    const int rows = 8 * n, cols = n;
    const Tensor x = randn({rows, cols}, rng);
    Tensor out_ref, out_par;
    const double tr = time_ms(reps, [&] { out_ref = dacsm::ref::softmax_rows(x, 0.7); });
    const double tp = time_ms(reps, [&] { out_par = dacsm::softmax_rows(x, 0.7); });
    row("softmax_rows", std::to_string(rows) + "x" + std::to_string(cols), tr, tp,
        max_abs_diff(out_ref, out_par));
  }

  {
    const int side = n / 2, out_side = n;
    const Tensor img = randn({side, side, 3}, rng);
    Tensor out_ref, out_par;
    const double tr = time_ms(reps, [&] { out_ref = dacsm::ref::bilinear_resize(img, out_side, out_side); });
    const double tp = time_ms(reps, [&] { out_par = dacsm::bilinear_resize(img, out_side, out_side); });
    row("bilinear_resize", std::to_string(side) + "->" + std::to_string(out_side), tr, tp,
        max_abs_diff(out_ref, out_par));
  }

  {
    const int tokens = n, d = 64, heads = 4;
    const Tensor z = randn({tokens, d}, rng);
    const Tensor wq = randn({d, d}, rng), wk = randn({d, d}, rng), wv = randn({d, d}, rng);
    Tensor out_ref, out_par;
    const double tr =
        time_ms(reps, [&] { out_ref = dacsm::ref::attention(z, z, wq, wk, wv, heads); });
    const double tp = time_ms(reps, [&] {
      // Composed from the parallel kernels, mirroring the training path.
      const Tensor q = dacsm::matmul(z, wq), k = dacsm::matmul(z, wk), v = dacsm::matmul(z, wv);
      const int hd = d / heads;
      Tensor out({tokens, d});
      for (int h = 0; h < heads; ++h) {
        Tensor qh({tokens, hd}), kh({tokens, hd}), vh({tokens, hd});
        for (int i = 0; i < tokens; ++i)
          for (int j = 0; j < hd; ++j) {
            qh.at(i, j) = q.at(i, h * hd + j);
            kh.at(i, j) = k.at(i, h * hd + j);
            vh.at(i, j) = v.at(i, h * hd + j);
          }
        Tensor scores = dacsm::matmul_nt(qh, kh);
        const double inv = 1.0 / std::sqrt(static_cast<double>(hd));
        for (int i = 0; i < scores.size(); ++i) scores[i] *= inv;
        const Tensor attn = dacsm::softmax_rows(scores);
        const Tensor oh = dacsm::matmul(attn, vh);
        for (int i = 0; i < tokens; ++i)
          for (int j = 0; j < hd; ++j) out.at(i, h * hd + j) = oh.at(i, j);
      }
      out_par = out;
    });
    row("attention", std::to_string(tokens) + " tok, d=64", tr, tp, max_abs_diff(out_ref, out_par));
  }

  return 0;
}
