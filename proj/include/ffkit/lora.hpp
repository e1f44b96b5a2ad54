#pragma once

// Low-rank adapters and their sparsity groups.
//
// Weights act on row vectors (y = x W), so a weight W of shape [in, out] gets
// the update B A with B: [in, r] (zero at creation) and A: [r, out].

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "ffkit/rng.hpp"
#include "ffkit/tensor.hpp"

namespace ffkit {

enum class Grouping { block, module, matrix };

inline std::string_view to_string(Grouping g) {
  switch (g) {
    case Grouping::block: return "block";
    case Grouping::module: return "module";
    case Grouping::matrix: return "matrix";
  }
  return "block";
}

inline Grouping parse_grouping(std::string_view s) {
  if (s == "block") return Grouping::block;
  if (s == "module") return Grouping::module;
  if (s == "matrix") return Grouping::matrix;
  throw Error(ErrorKind::invalid_argument, "unknown grouping strategy '" + std::string(s) + "'");
}

/// Which weight matrix of a block an adapter edits.
enum class SiteKind { ffn_w1, ffn_w2, attn_q, attn_k, attn_v, attn_o };

inline std::string_view to_string(SiteKind k) {
  switch (k) {
    case SiteKind::ffn_w1: return "ffn_w1";
    case SiteKind::ffn_w2: return "ffn_w2";
    case SiteKind::attn_q: return "attn_q";
    case SiteKind::attn_k: return "attn_k";
    case SiteKind::attn_v: return "attn_v";
    case SiteKind::attn_o: return "attn_o";
  }
  return "ffn_w1";
}

inline SiteKind parse_site_kind(std::string_view s) {
  for (auto k : {SiteKind::ffn_w1, SiteKind::ffn_w2, SiteKind::attn_q, SiteKind::attn_k, SiteKind::attn_v,
                 SiteKind::attn_o}) {
    if (to_string(k) == s) return k;
  }
  throw Error(ErrorKind::invalid_argument, "unknown adapter site '" + std::string(s) + "'");
}

struct Site {
  std::size_t block = 0;
  SiteKind kind = SiteKind::ffn_w1;
  friend bool operator==(const Site&, const Site&) = default;
};

struct LoRAPair {
  int task_id = 0;
  Site site;
  std::size_t rank = 0;
  Tensor B;  // [in, rank]
  Tensor A;  // [rank, out]

  /// B starts at zero, A ~ U(-1/sqrt(in), 1/sqrt(in)).
  static LoRAPair create(int task_id, Site site, std::size_t in, std::size_t out, std::size_t rank, Rng& rng) {
    require_arg(rank >= 1 && rank <= std::min(in, out),
                "lora rank " + std::to_string(rank) + " outside [1, " + std::to_string(std::min(in, out)) + "]");
    LoRAPair p;
    p.task_id = task_id;
    p.site = site;
    p.rank = rank;
    const std::string tag = "lora.t" + std::to_string(task_id) + ".b" + std::to_string(site.block) + "." +
                            std::string(to_string(site.kind));
    p.B = Tensor::zeros({in, rank}, true);
    p.B.set_name(tag + ".B");
    p.A = Tensor({rank, out}, uniform_values(rng, rank * out, 1.0 / std::sqrt(static_cast<double>(in))), true);
    p.A.set_name(tag + ".A");
    return p;
  }

  [[nodiscard]] std::size_t parameter_count() const { return B.numel() + A.numel(); }
};

/// A unit of sparsity selection. Parts alias the pair tensors they cover; the
/// group norm is ||[B parts]||_F + ||[A parts]||_F, i.e. the Frobenius norms
/// of the block-diagonal B and the stacked A.
struct LoRAGroup {
  int task_id = 0;
  std::size_t block = 0;
  Grouping tag = Grouping::block;
  std::string label;
  std::vector<Tensor> b_parts;
  std::vector<Tensor> a_parts;
};

inline std::vector<LoRAGroup> make_groups(int task_id, const std::vector<LoRAPair>& pairs, Grouping strategy) {
  std::vector<LoRAGroup> groups;
  auto find_block = [&](std::size_t block) -> LoRAGroup& {
    for (auto& g : groups)
      if (g.block == block) return g;
    groups.push_back(LoRAGroup{task_id, block, strategy, "block" + std::to_string(block), {}, {}});
    return groups.back();
  };
  for (const auto& p : pairs) {
    const std::string base = "block" + std::to_string(p.site.block) + "." + std::string(to_string(p.site.kind));
    switch (strategy) {
      case Grouping::block: {
        auto& g = find_block(p.site.block);
        g.b_parts.push_back(p.B);
        g.a_parts.push_back(p.A);
        break;
      }
      case Grouping::module:
        groups.push_back(LoRAGroup{task_id, p.site.block, strategy, base, {p.B}, {p.A}});
        break;
      case Grouping::matrix:
        groups.push_back(LoRAGroup{task_id, p.site.block, strategy, base + ".B", {p.B}, {}});
        groups.push_back(LoRAGroup{task_id, p.site.block, strategy, base + ".A", {}, {p.A}});
        break;
    }
  }
  return groups;
}

namespace detail {
inline double sum_squares(const std::vector<Tensor>& parts) {
  double ss = 0.0;
  for (const auto& t : parts)
    for (double v : t.data()) ss += v * v;
  return ss;
}
}  // namespace detail

/// Exact ||B||_F + ||A||_F of the group.
inline double group_norm(const LoRAGroup& g) {
  return std::sqrt(detail::sum_squares(g.b_parts)) + std::sqrt(detail::sum_squares(g.a_parts));
}

/// Differentiable group norm: each Frobenius term is sqrt(sum x^2 + eps).
inline Tensor smoothed_group_norm(const LoRAGroup& g, double eps) {
  auto part_norm = [eps](const std::vector<Tensor>& parts) {
    std::vector<Tensor> flat;
    flat.reserve(parts.size());
    for (const auto& t : parts) flat.push_back(flatten(t));
    return smoothed_l2_norm(flat.size() == 1 ? flat.front() : concat(flat), eps);
  };
  if (g.b_parts.empty() && g.a_parts.empty()) return Tensor::scalar(0.0);
  if (g.b_parts.empty()) return part_norm(g.a_parts);
  if (g.a_parts.empty()) return part_norm(g.b_parts);
  return add(part_norm(g.b_parts), part_norm(g.a_parts));
}

/// Fraction of groups whose norm falls below tau.
inline double zero_group_ratio(std::span<const LoRAGroup> groups, double tau) {
  require_arg(tau > 0.0, "zero_group_ratio: threshold must be positive");
  if (groups.empty()) return 0.0;
  const auto zeros = std::count_if(groups.begin(), groups.end(), [tau](const LoRAGroup& g) { return group_norm(g) < tau; });
  return static_cast<double>(zeros) / static_cast<double>(groups.size());
}

/// W + sum_i B_i A_i, accumulated in the given (task) order.
inline Tensor effective_weight(const Tensor& weight, std::span<const LoRAPair> pairs) {
  Tensor out = weight;
  for (const auto& p : pairs) {
    if (p.B.size(0) != weight.size(0) || p.A.size(1) != weight.size(1)) {
      shape_error("effective_weight", weight.shape(), Shape{p.B.size(0), p.A.size(1)});
    }
    out = add(out, matmul(p.B, p.A));
  }
  return out;
}

}  // namespace ffkit
