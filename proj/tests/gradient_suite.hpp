#pragma once

// Finite-difference audit of every loss term with respect to the LoRA
// parameters of small random models. Shared by the unit tests and the
// acceptance runner.

#include <algorithm>
#include <functional>
#include <string>
#include <vector>

#include "ffkit/ffkit.hpp"

namespace ffkit::testing {

struct GradCheck {
  std::string term;
  std::uint64_t config = 0;
  double relative_error = 0.0;
};

namespace detail {

inline double fd_relative_error(const std::vector<Tensor>& params, const GradMap& grads,
                                const std::function<double()>& value, double h = 1e-5) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (auto p : params) {
    const auto* g = grads.find(p);
    auto w = p.mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double keep = w[i];
      w[i] = keep + h;
      const double up = value();
      w[i] = keep - h;
      const double down = value();
      w[i] = keep;
      const double num = (up - down) / (2.0 * h);
      const double ana = g ? (*g)[i] : 0.0;
      diff += (num - ana) * (num - ana);
      na += ana * ana;
      nb += num * num;
    }
  }
  const double scale = std::sqrt(na) + std::sqrt(nb);
  return scale < 1e-12 ? std::sqrt(diff) : std::sqrt(diff) / scale;
}

}  // namespace detail

/// Runs the audit on `configs` random micro configurations and returns one
/// record per (term, configuration).
inline std::vector<GradCheck> loss_gradient_suite(std::size_t configs = 20) {
  std::vector<GradCheck> out;
  for (std::uint64_t c = 0; c < configs; ++c) {
    Rng rng(derive_seed(0xC0FFEE, c));
    ModelGeometry g;
    g.classes = 3 + c % 3;
    g.tokens = 2;
    g.input_dim = 6 + 2 * (c % 2);
    g.d_model = 4 + 2 * (c % 3);
    g.heads = 2;
    g.d_ff = 6 + c % 4;
    g.blocks = 1 + c % 2;
    MicroTransformer model(g, rng());
    const auto grouping = static_cast<Grouping>(c % 3);
    const auto groups = inject_lora(model, LoraSpec{1, 2, grouping, {SiteKind::ffn_w1, SiteKind::ffn_w2}, rng()});
    // Move B away from zero so every path carries gradient.
    for (auto& a : model.adapters())
      for (auto& v : a.B.mutable_data()) v = 0.3 * std::normal_distribution<double>(0.0, 1.0)(rng);
    const auto params = model.trainable_parameters();

    auto draw = [&](std::size_t n) {
      Tensor x({n, g.input_dim}, normal_values(rng, n * g.input_dim, 1.0));
      std::vector<std::size_t> y(n);
      std::uniform_int_distribution<std::size_t> pick_class(0, g.classes - 1);
      for (auto& v : y) v = pick_class(rng);
      return std::pair{x, y};
    };
    const auto [xf, yf] = draw(4);
    const auto [xr, yr] = draw(5);

    Dataset proto_data{g.input_dim, g.classes, Split::train, {}, {}};
    const auto [xp, yp] = draw(12);
    for (std::size_t i = 0; i < yp.size(); ++i)
      proto_data.push_back(xp.data().subspan(i * g.input_dim, g.input_dim), yp[i]);
    const PrototypeTable table = compute_prototypes(model, proto_data);

    LossConfig cfg = LossConfig::for_classes(g.classes);
    cfg.kl_direction = c % 2 ? KlDirection::logits_first : KlDirection::prototype_first;
    {
      NoGradGuard guard;
      // Bounds sit above the current values so both hinges are in their
      // linear region.
      cfg.bnd_data = cross_entropy(model.forward(xf), yf).item() + 1.0;
      double max_kl = 0.0;
      const Tensor lf = model.forward(xf);
      for (std::size_t i = 0; i < yf.size(); ++i)
        if (table.has(yf[i]))
          max_kl = std::max(max_kl, softmax_kl(table.at(yf[i]), lf.data().subspan(i * g.classes, g.classes)));
      cfg.bnd_pro = max_kl + 1.0;
    }

    using Term = std::function<Tensor()>;
    const std::vector<std::pair<std::string, Term>> terms{
        {"retention", [&] { return retention_loss(model.forward(xr), yr); }},
        {"forgetting", [&] { return forgetting_loss(model.forward(xf), yf, cfg.bnd_data); }},
        {"data", [&] {
           return add(retention_loss(model.forward(xr), yr),
                      scale(forgetting_loss(model.forward(xf), yf, cfg.bnd_data), cfg.beta));
         }},
        {"group_sparse", [&] { return group_sparse_loss(groups, cfg.smoothing_eps); }},
        {"prototype_retained",
         [&] { return prototype_terms(Tensor{}, {}, model.forward(xr), yr, table, cfg).retained; }},
        {"prototype_forgotten",
         [&] { return prototype_terms(model.forward(xf), yf, Tensor{}, {}, table, cfg).forgotten; }},
        {"prototype", [&] { return prototype_loss(model.forward(xf), yf, model.forward(xr), yr, table, cfg); }},
        {"total", [&] {
           return total_loss(LossInputs{model.forward(xf), yf, model.forward(xr), yr}, groups, &table, cfg).value;
         }},
    };
    for (const auto& [name, term] : terms) {
      const Tensor loss = term();
      if (!loss.requires_grad()) continue;  // e.g. every sampled label lacks a prototype
      const GradMap grads = backward(loss);
      auto value = [&, t = term] {
        NoGradGuard guard;
        return t().item();
      };
      out.push_back({name, c, detail::fd_relative_error(params, grads, value)});
    }
  }
  return out;
}

}  // namespace ffkit::testing
