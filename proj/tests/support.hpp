#pragma once

// Shared helpers for the unit tests: a central-difference gradient oracle,
// random tensors and a small model geometry that trains in milliseconds.

#include <cmath>
#include <functional>
#include <vector>

#include "ffkit/ffkit.hpp"

namespace ffkit::testing {

/// Central differences of `f` with respect to every entry of `x`. `f` must
/// read `x` through its shared storage.
inline std::vector<double> numeric_grad(Tensor& x, const std::function<double()>& f, double h = 1e-5) {
  std::vector<double> g(x.numel());
  auto w = x.mutable_data();
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double keep = w[i];
    w[i] = keep + h;
    const double up = f();
    w[i] = keep - h;
    const double down = f();
    w[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// ||a - b|| / max(||a|| + ||b||, floor).
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-10) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max(std::sqrt(na) + std::sqrt(nb), floor);
}

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0, bool grad = true) {
  const auto n = numel(shape);
  return Tensor(std::move(shape), normal_values(rng, n, scale), grad);
}

inline ModelGeometry tiny_geometry() {
  ModelGeometry g;
  g.input_dim = 8;
  g.tokens = 2;
  g.d_model = 8;
  g.d_ff = 12;
  g.heads = 2;
  g.blocks = 2;
  g.classes = 4;
  return g;
}

inline Tensor random_inputs(std::size_t n, std::size_t dim, Rng& rng) {
  return Tensor({n, dim}, normal_values(rng, n * dim, 1.0));
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// Silences the library log for the lifetime of the object, keeping warnings.
class CaptureLog {
 public:
  CaptureLog() {
    set_log_sink([this](LogLevel level, std::string_view msg) {
      if (level <= LogLevel::warn) messages.emplace_back(msg);
    });
  }
  ~CaptureLog() {
    set_log_sink([](LogLevel level, std::string_view msg) {
      if (level <= LogLevel::warn) std::cerr << "warning: " << msg << '\n';
    });
  }
  CaptureLog(const CaptureLog&) = delete;
  CaptureLog& operator=(const CaptureLog&) = delete;

  std::vector<std::string> messages;
};

}  // namespace ffkit::testing
