#pragma once

// Micro transformer classifier: chunked-feature tokenizer with learned
// positions, G pre-norm blocks (multi-head attention + ReLU FFN), final layer
// norm, mean pooling over tokens and a linear classification head.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "ffkit/data.hpp"
#include "ffkit/lora.hpp"
#include "ffkit/optim.hpp"
#include "ffkit/rng.hpp"
#include "ffkit/tensor.hpp"

namespace ffkit {

struct ModelGeometry {
  std::size_t input_dim = 32;
  std::size_t tokens = 8;
  std::size_t d_model = 64;
  std::size_t d_ff = 128;
  std::size_t heads = 4;
  std::size_t blocks = 6;
  std::size_t classes = 20;

  void validate() const {
    require_arg(input_dim > 0 && tokens > 0 && d_model > 0 && d_ff > 0 && heads > 0 && blocks > 0,
                "model geometry: all extents must be positive");
    require_arg(input_dim % tokens == 0, "model geometry: input_dim must be divisible by tokens");
    require_arg(d_model % heads == 0, "model geometry: d_model must equal heads x head_dim");
    require_arg(classes >= 2, "model geometry: need at least two classes");
  }

  [[nodiscard]] std::size_t chunk() const { return input_dim / tokens; }

  friend bool operator==(const ModelGeometry&, const ModelGeometry&) = default;
};

struct FFNLayer {
  Tensor w1;  // [d_model, d_ff]
  Tensor b1;  // [d_ff]
  Tensor w2;  // [d_ff, d_model]
  Tensor b2;  // [d_model]
};

/// max(0, x W1' + b1) W2' + b2 where W' = W + sum of the matching adapter
/// products.
inline Tensor ffn_forward(const Tensor& x, const FFNLayer& layer, std::span<const LoRAPair> w1_delta = {},
                          std::span<const LoRAPair> w2_delta = {}) {
  if (x.dim() != 2 || x.size(1) != layer.w1.size(0)) shape_error("ffn_forward", x.shape(), layer.w1.shape());
  const Tensor w1 = effective_weight(layer.w1, w1_delta);
  const Tensor w2 = effective_weight(layer.w2, w2_delta);
  return add(matmul(relu(add(matmul(x, w1), layer.b1)), w2), layer.b2);
}

struct AttentionParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

struct TransformerBlock {
  Tensor ln1_gamma, ln1_beta;
  AttentionParams attn;
  Tensor ln2_gamma, ln2_beta;
  FFNLayer ffn;
};

enum class FreezeSelector {
  all,        // nothing trainable
  backbone,   // only the classification head trainable
  head,       // everything except the head trainable
  lora_only,  // only adapters trainable
};

struct NamedParam {
  std::string name;
  Tensor tensor;
};

class MicroTransformer {
 public:
  MicroTransformer() = default;

  MicroTransformer(const ModelGeometry& geometry, std::uint64_t seed) : geometry_(geometry), seed_(seed) {
    geometry.validate();
    Rng rng(derive_seed(seed, 0x30DE1));
    const auto& g = geometry_;
    auto linear = [&](std::size_t in, std::size_t out) {
      return Tensor({in, out}, uniform_values(rng, in * out, 1.0 / std::sqrt(static_cast<double>(in))));
    };
    input_w_ = linear(g.chunk(), g.d_model);
    input_b_ = Tensor::zeros({g.d_model});
    positions_ = Tensor({g.tokens, g.d_model}, normal_values(rng, g.tokens * g.d_model, 0.1));
    for (std::size_t l = 0; l < g.blocks; ++l) {
      TransformerBlock b;
      b.ln1_gamma = Tensor::full({g.d_model}, 1.0);
      b.ln1_beta = Tensor::zeros({g.d_model});
      b.attn.wq = linear(g.d_model, g.d_model);
      b.attn.bq = Tensor::zeros({g.d_model});
      b.attn.wk = linear(g.d_model, g.d_model);
      b.attn.bk = Tensor::zeros({g.d_model});
      b.attn.wv = linear(g.d_model, g.d_model);
      b.attn.bv = Tensor::zeros({g.d_model});
      b.attn.wo = linear(g.d_model, g.d_model);
      b.attn.bo = Tensor::zeros({g.d_model});
      b.ln2_gamma = Tensor::full({g.d_model}, 1.0);
      b.ln2_beta = Tensor::zeros({g.d_model});
      b.ffn.w1 = linear(g.d_model, g.d_ff);
      b.ffn.b1 = Tensor::zeros({g.d_ff});
      b.ffn.w2 = linear(g.d_ff, g.d_model);
      b.ffn.b2 = Tensor::zeros({g.d_model});
      blocks_.push_back(std::move(b));
    }
    final_gamma_ = Tensor::full({g.d_model}, 1.0);
    final_beta_ = Tensor::zeros({g.d_model});
    head_w_ = linear(g.d_model, g.classes);
    head_b_ = Tensor::zeros({g.classes});
    name_parameters();
    for (auto& p : parameters()) p.tensor.set_requires_grad(true);
  }

  // Deep copies: a copied model never aliases the original's storage.
  MicroTransformer(const MicroTransformer& other) { copy_from(other); }
  MicroTransformer& operator=(const MicroTransformer& other) {
    if (this != &other) copy_from(other);
    return *this;
  }
  MicroTransformer(MicroTransformer&&) noexcept = default;
  MicroTransformer& operator=(MicroTransformer&&) noexcept = default;

  [[nodiscard]] const ModelGeometry& geometry() const { return geometry_; }
  [[nodiscard]] std::uint64_t seed() const { return seed_; }
  [[nodiscard]] std::size_t num_blocks() const { return blocks_.size(); }
  [[nodiscard]] TransformerBlock& block(std::size_t l) { return blocks_.at(l); }
  [[nodiscard]] const TransformerBlock& block(std::size_t l) const { return blocks_.at(l); }
  [[nodiscard]] Tensor& head_weight() { return head_w_; }
  [[nodiscard]] Tensor& head_bias() { return head_b_; }
  [[nodiscard]] const Tensor& head_weight() const { return head_w_; }
  [[nodiscard]] const Tensor& head_bias() const { return head_b_; }

  /// Base (non-adapter) parameters in a fixed order.
  [[nodiscard]] std::vector<NamedParam> parameters() const {
    std::vector<NamedParam> out;
    out.push_back({"input.w", input_w_});
    out.push_back({"input.b", input_b_});
    out.push_back({"positions", positions_});
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
      const auto& b = blocks_[l];
      const std::string p = "block" + std::to_string(l) + ".";
      out.push_back({p + "ln1.gamma", b.ln1_gamma});
      out.push_back({p + "ln1.beta", b.ln1_beta});
      out.push_back({p + "attn.wq", b.attn.wq});
      out.push_back({p + "attn.bq", b.attn.bq});
      out.push_back({p + "attn.wk", b.attn.wk});
      out.push_back({p + "attn.bk", b.attn.bk});
      out.push_back({p + "attn.wv", b.attn.wv});
      out.push_back({p + "attn.bv", b.attn.bv});
      out.push_back({p + "attn.wo", b.attn.wo});
      out.push_back({p + "attn.bo", b.attn.bo});
      out.push_back({p + "ln2.gamma", b.ln2_gamma});
      out.push_back({p + "ln2.beta", b.ln2_beta});
      out.push_back({p + "ffn.w1", b.ffn.w1});
      out.push_back({p + "ffn.b1", b.ffn.b1});
      out.push_back({p + "ffn.w2", b.ffn.w2});
      out.push_back({p + "ffn.b2", b.ffn.b2});
    }
    out.push_back({"final_ln.gamma", final_gamma_});
    out.push_back({"final_ln.beta", final_beta_});
    out.push_back({"head.w", head_w_});
    out.push_back({"head.b", head_b_});
    return out;
  }

  [[nodiscard]] static bool is_head_param(const std::string& name) { return name.rfind("head.", 0) == 0; }

  [[nodiscard]] std::vector<LoRAPair>& adapters() { return adapters_; }
  [[nodiscard]] const std::vector<LoRAPair>& adapters() const { return adapters_; }
  [[nodiscard]] std::map<int, Grouping>& adapter_grouping() { return adapter_grouping_; }
  [[nodiscard]] const std::map<int, Grouping>& adapter_grouping() const { return adapter_grouping_; }
  /// Task ids whose adapters have been folded into the base weights, in order.
  [[nodiscard]] std::vector<int>& merged_tasks() { return merged_tasks_; }
  [[nodiscard]] const std::vector<int>& merged_tasks() const { return merged_tasks_; }

  /// Base weight an adapter site edits.
  [[nodiscard]] Tensor site_weight(Site site) const {
    const auto& b = blocks_.at(site.block);
    switch (site.kind) {
      case SiteKind::ffn_w1: return b.ffn.w1;
      case SiteKind::ffn_w2: return b.ffn.w2;
      case SiteKind::attn_q: return b.attn.wq;
      case SiteKind::attn_k: return b.attn.wk;
      case SiteKind::attn_v: return b.attn.wv;
      case SiteKind::attn_o: return b.attn.wo;
    }
    return b.ffn.w1;
  }

  void set_freeze(FreezeSelector selector) {
    for (auto& p : parameters()) {
      bool trainable = false;
      switch (selector) {
        case FreezeSelector::all: trainable = false; break;
        case FreezeSelector::backbone: trainable = is_head_param(p.name); break;
        case FreezeSelector::head: trainable = !is_head_param(p.name); break;
        case FreezeSelector::lora_only: trainable = false; break;
      }
      p.tensor.set_requires_grad(trainable);
    }
    const bool adapters_trainable = selector == FreezeSelector::lora_only || selector == FreezeSelector::head;
    for (auto& a : adapters_) {
      a.A.set_requires_grad(adapters_trainable);
      a.B.set_requires_grad(adapters_trainable);
    }
  }

  [[nodiscard]] std::map<std::string, bool> freeze_mask() const {
    std::map<std::string, bool> mask;
    for (const auto& p : parameters()) mask[p.name] = !p.tensor.requires_grad();
    return mask;
  }

  void apply_freeze_mask(const std::map<std::string, bool>& frozen) {
    for (auto& p : parameters()) {
      auto it = frozen.find(p.name);
      if (it != frozen.end()) p.tensor.set_requires_grad(!it->second);
    }
  }

  /// Every tensor that currently requires a gradient, adapters last.
  [[nodiscard]] std::vector<Tensor> trainable_parameters() const {
    std::vector<Tensor> out;
    for (const auto& p : parameters())
      if (p.tensor.requires_grad()) out.push_back(p.tensor);
    for (const auto& a : adapters_) {
      if (a.B.requires_grad()) out.push_back(a.B);
      if (a.A.requires_grad()) out.push_back(a.A);
    }
    return out;
  }

  [[nodiscard]] std::size_t base_parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.tensor.numel();
    return n;
  }

  [[nodiscard]] std::size_t adapter_parameter_count() const {
    std::size_t n = 0;
    for (const auto& a : adapters_) n += a.parameter_count();
    return n;
  }

  [[nodiscard]] std::size_t parameter_count() const { return base_parameter_count() + adapter_parameter_count(); }

  [[nodiscard]] std::size_t trainable_parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : trainable_parameters()) n += t.numel();
    return n;
  }

  /// FNV-1a over the base parameter bytes in declaration order.
  [[nodiscard]] std::uint64_t checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& p : parameters()) h = fnv1a(p.tensor.data().data(), p.tensor.numel() * sizeof(double), h);
    return h;
  }

  /// Pooled token features after the final layer norm: [batch, d_model].
  [[nodiscard]] Tensor features(const Tensor& x) const {
    const auto& g = geometry_;
    if (x.dim() != 2 || x.size(1) != g.input_dim) shape_error("classify", x.shape(), Shape{x.size(0), g.input_dim});
    const std::size_t batch = x.size(0);
    Tensor h = add(matmul(reshape(x, {batch * g.tokens, g.chunk()}), input_w_), input_b_);
    std::vector<std::size_t> pos_rows(batch * g.tokens);
    for (std::size_t i = 0; i < pos_rows.size(); ++i) pos_rows[i] = i % g.tokens;
    h = add(h, gather_rows(positions_, pos_rows));
    for (std::size_t l = 0; l < blocks_.size(); ++l) h = block_forward(l, h);
    h = layer_norm(h, final_gamma_, final_beta_);
    return group_mean_rows(h, g.tokens);
  }

  [[nodiscard]] Tensor head_forward(const Tensor& pooled) const { return add(matmul(pooled, head_w_), head_b_); }

  /// Logits [batch, classes]; records a graph when grad mode is on.
  [[nodiscard]] Tensor forward(const Tensor& x) const { return head_forward(features(x)); }

  /// Evaluation-mode logits for one feature vector; never records a graph.
  [[nodiscard]] std::vector<double> classify(std::span<const double> x) const {
    if (x.size() != geometry_.input_dim) shape_error("classify", Shape{x.size()}, Shape{geometry_.input_dim});
    NoGradGuard guard;
    return forward(Tensor({1, x.size()}, std::vector<double>(x.begin(), x.end()))).to_vector();
  }

  /// Evaluation-mode logits for a batch.
  [[nodiscard]] Tensor logits(const Tensor& x) const {
    NoGradGuard guard;
    return forward(x);
  }

 private:
  [[nodiscard]] std::vector<LoRAPair> pairs_for(Site site) const {
    std::vector<LoRAPair> out;
    for (const auto& a : adapters_)
      if (a.site == site) out.push_back(a);
    return out;
  }

  [[nodiscard]] Tensor block_forward(std::size_t l, const Tensor& x) const {
    const auto& b = blocks_[l];
    auto eff = [&](SiteKind kind, const Tensor& w) {
      auto pairs = pairs_for(Site{l, kind});
      return pairs.empty() ? w : effective_weight(w, pairs);
    };
    const Tensor a = layer_norm(x, b.ln1_gamma, b.ln1_beta);
    const Tensor q = add(matmul(a, eff(SiteKind::attn_q, b.attn.wq)), b.attn.bq);
    const Tensor k = add(matmul(a, eff(SiteKind::attn_k, b.attn.wk)), b.attn.bk);
    const Tensor v = add(matmul(a, eff(SiteKind::attn_v, b.attn.wv)), b.attn.bv);
    const Tensor o = attention(q, k, v, geometry_.tokens, geometry_.heads);
    const Tensor h = add(x, add(matmul(o, eff(SiteKind::attn_o, b.attn.wo)), b.attn.bo));
    const Tensor f = layer_norm(h, b.ln2_gamma, b.ln2_beta);
    const auto d1 = pairs_for(Site{l, SiteKind::ffn_w1});
    const auto d2 = pairs_for(Site{l, SiteKind::ffn_w2});
    return add(h, ffn_forward(f, b.ffn, d1, d2));
  }

  void name_parameters() {
    for (auto& p : parameters()) p.tensor.set_name(p.name);
  }

  static Tensor deep(const Tensor& t) {
    if (!t.defined()) return t;
    Tensor c = t.detach();
    c.set_requires_grad(t.requires_grad());
    return c;
  }

  void copy_from(const MicroTransformer& o) {
    geometry_ = o.geometry_;
    seed_ = o.seed_;
    input_w_ = deep(o.input_w_);
    input_b_ = deep(o.input_b_);
    positions_ = deep(o.positions_);
    blocks_.clear();
    for (const auto& ob : o.blocks_) {
      TransformerBlock b;
      b.ln1_gamma = deep(ob.ln1_gamma);
      b.ln1_beta = deep(ob.ln1_beta);
      b.attn = AttentionParams{deep(ob.attn.wq), deep(ob.attn.bq), deep(ob.attn.wk), deep(ob.attn.bk),
                               deep(ob.attn.wv), deep(ob.attn.bv), deep(ob.attn.wo), deep(ob.attn.bo)};
      b.ln2_gamma = deep(ob.ln2_gamma);
      b.ln2_beta = deep(ob.ln2_beta);
      b.ffn = FFNLayer{deep(ob.ffn.w1), deep(ob.ffn.b1), deep(ob.ffn.w2), deep(ob.ffn.b2)};
      blocks_.push_back(std::move(b));
    }
    final_gamma_ = deep(o.final_gamma_);
    final_beta_ = deep(o.final_beta_);
    head_w_ = deep(o.head_w_);
    head_b_ = deep(o.head_b_);
    adapters_.clear();
    for (const auto& a : o.adapters_) {
      LoRAPair p = a;
      p.B = deep(a.B);
      p.A = deep(a.A);
      adapters_.push_back(std::move(p));
    }
    adapter_grouping_ = o.adapter_grouping_;
    merged_tasks_ = o.merged_tasks_;
  }

  ModelGeometry geometry_;
  std::uint64_t seed_ = 0;
  Tensor input_w_, input_b_, positions_;
  std::vector<TransformerBlock> blocks_;
  Tensor final_gamma_, final_beta_;
  Tensor head_w_, head_b_;
  std::vector<LoRAPair> adapters_;
  std::map<int, Grouping> adapter_grouping_;
  std::vector<int> merged_tasks_;
};

// ---------------------------------------------------------------------------
// Evaluation helpers

/// Argmax predictions over all classes, evaluated in chunks without a graph.
inline std::vector<std::size_t> predict(const MicroTransformer& model, const Dataset& data,
                                        std::size_t chunk = 512) {
  std::vector<std::size_t> out;
  out.reserve(data.size());
  const std::size_t c = model.geometry().classes;
  for (std::size_t start = 0; start < data.size(); start += chunk) {
    const std::size_t end = std::min(data.size(), start + chunk);
    std::vector<std::size_t> idx(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Tensor logits = model.logits(data.rows_tensor(idx));
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const double* row = logits.data().data() + i * c;
      out.push_back(static_cast<std::size_t>(std::max_element(row, row + c) - row));
    }
  }
  return out;
}

inline double train_accuracy(const MicroTransformer& model, const Dataset& data) {
  if (data.empty()) return 0.0;
  const auto pred = predict(model, data);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == data.labels[i];
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

}  // namespace ffkit
