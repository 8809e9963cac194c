#pragma once

// Randomized instances of every differentiable kernel op, shared by the unit
// gradient tests and the acceptance gate.

#include <string>
#include <vector>

#include "support/gradcheck.hpp"

namespace uniclin::testing {

struct OpCase {
  std::string name;
  std::vector<ad::Tensor> inputs;
  BuildFn build;
};

inline std::size_t rand_dim(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// Values bounded away from zero so relu's kink is never straddled by h.
inline ad::Tensor away_from_zero(ad::Shape shape, std::mt19937_64& rng) {
  ad::Tensor t = random_tensor(std::move(shape), rng);
  for (auto& v : t.values()) v = (v < 0 ? -0.05f : 0.05f) + v;
  return t;
}

inline std::vector<std::string> op_names() {
  return {"matmul",  "matmul_nt", "add",        "sub",           "mul",         "add_row",
          "mul_row", "add_mid",   "repeat_mid", "scale",         "add_scalar",  "relu",
          "gelu",    "sigmoid",   "tanh",       "exp",           "sum",         "mean",
          "layernorm", "softmax_rows", "attention", "causal_attention", "cross_entropy_at",
          "bce_with_logits", "embedding", "concat_rows", "slice_rows", "slice_cols", "reshape",
          "pad_cols"};
}

inline OpCase make_op_case(const std::string& name, std::mt19937_64& rng) {
  using ad::Var;
  const std::size_t m = rand_dim(rng, 1, 5), n = rand_dim(rng, 1, 5), p = rand_dim(rng, 1, 5);
  OpCase c{name, {}, {}};
  auto two = [&](ad::Shape a, ad::Shape b) {
    c.inputs = {random_tensor(a, rng), random_tensor(b, rng)};
  };
  auto one = [&](ad::Shape a) { c.inputs = {random_tensor(a, rng)}; };

  if (name == "matmul") {
    two({m, p}, {p, n});
    c.build = [](ad::Tape&, std::vector<Var>& v) { return ad::matmul(v[0], v[1]); };
  } else if (name == "matmul_nt") {
    two({m, p}, {n, p});
    c.build = [](ad::Tape&, std::vector<Var>& v) { return ad::matmul_nt(v[0], v[1]); };
  } else if (name == "add" || name == "sub" || name == "mul") {
    two({m, n}, {m, n});
    c.build = [name](ad::Tape&, std::vector<Var>& v) {
      if (name == "add") return ad::add(v[0], v[1]);
      if (name == "sub") return ad::sub(v[0], v[1]);
      return ad::mul(v[0], v[1]);
    };
  } else if (name == "add_row" || name == "mul_row") {
    two({m, p, n}, {n});
    c.build = [name](ad::Tape&, std::vector<Var>& v) {
      return name == "add_row" ? ad::add_row(v[0], v[1]) : ad::mul_row(v[0], v[1]);
    };
  } else if (name == "add_mid") {
    two({m, p, n}, {m, n});
    c.build = [](ad::Tape&, std::vector<Var>& v) { return ad::add_mid_broadcast(v[0], v[1]); };
  } else if (name == "repeat_mid") {
    one({m, n});
    c.build = [p](ad::Tape&, std::vector<Var>& v) { return ad::repeat_mid(v[0], p); };
  } else if (name == "scale") {
    one({m, n});
    c.build = [](ad::Tape&, std::vector<Var>& v) { return ad::scale(v[0], -1.7f); };
  } else if (name == "add_scalar") {
    one({m, n});
    c.build = [](ad::Tape&, std::vector<Var>& v) { return ad::add_scalar(v[0], 0.3f); };
  } else if (name == "relu") {
    c.inputs = {away_from_zero({m, n}, rng)};
    c.build = [](ad::Tape&, std::vector<Var>& v) { return ad::relu(v[0]); };
  } else if (name == "gelu" || name == "sigmoid" || name == "tanh" || name == "exp") {
    one({m, n});
    c.build = [name](ad::Tape&, std::vector<Var>& v) {
      if (name == "gelu") return ad::gelu(v[0]);
      if (name == "sigmoid") return ad::sigmoid(v[0]);
      if (name == "tanh") return ad::tanh(v[0]);
      return ad::exp(v[0]);
    };
  } else if (name == "sum" || name == "mean") {
    one({m, n});
    c.build = [name](ad::Tape&, std::vector<Var>& v) {
      return name == "sum" ? ad::sum(v[0]) : ad::mean(v[0]);
    };
  } else if (name == "layernorm") {
    // Rows with a tiny spread make the normalization nearly singular, which
    // only measures finite-difference truncation; redraw them.
    const std::size_t d = rand_dim(rng, 2, 6);
    ad::Tensor x = random_tensor({m, d}, rng, 2.0f);
    for (std::size_t i = 0; i < m; ++i) {
      auto row = [&] { return std::span<float>(x.values().data() + i * d, d); };
      auto spread = [&] {
        auto r = row();
        return *std::max_element(r.begin(), r.end()) - *std::min_element(r.begin(), r.end());
      };
      std::uniform_real_distribution<float> u(-2.0f, 2.0f);
      while (spread() < 0.5f) {
        for (auto& v : row()) v = u(rng);
      }
    }
    c.inputs = {x, random_tensor({d}, rng), random_tensor({d}, rng)};
    c.build = [](ad::Tape&, std::vector<Var>& v) { return ad::layernorm(v[0], v[1], v[2]); };
  } else if (name == "softmax_rows") {
    one({m, n});
    c.build = [](ad::Tape&, std::vector<Var>& v) { return ad::softmax_rows(v[0]); };
  } else if (name == "attention" || name == "causal_attention") {
    const bool causal = name == "causal_attention";
    const std::size_t tq = rand_dim(rng, 1, 4), h = rand_dim(rng, 1, 3), dh = rand_dim(rng, 1, 4);
    const std::size_t tk = causal ? tq + rand_dim(rng, 0, 2) : rand_dim(rng, 1, 5);
    c.inputs = {random_tensor({tq, h, dh}, rng), random_tensor({tk, h, dh}, rng),
                random_tensor({tk, h, dh}, rng)};
    c.build = [causal](ad::Tape&, std::vector<Var>& v) {
      return ad::attention(v[0], v[1], v[2], causal);
    };
  } else if (name == "cross_entropy_at") {
    const std::size_t t = rand_dim(rng, 2, 5), vocab = rand_dim(rng, 2, 6);
    one({t, vocab});
    std::vector<ad::Target> targets;
    const std::size_t count = rand_dim(rng, 1, t);
    for (std::size_t i = 0; i < count; ++i) targets.push_back({rand_dim(rng, 0, t - 1), rand_dim(rng, 0, vocab - 1)});
    c.build = [targets](ad::Tape&, std::vector<Var>& v) { return ad::cross_entropy_at(v[0], targets); };
  } else if (name == "bce_with_logits") {
    one({m * n});
    std::vector<float> y(m * n);
    for (auto& t : y) t = static_cast<float>(rand_dim(rng, 0, 1));
    c.build = [y](ad::Tape&, std::vector<Var>& v) { return ad::bce_with_logits(v[0], y); };
  } else if (name == "embedding") {
    const std::size_t vocab = rand_dim(rng, 2, 6);
    one({vocab, n});
    std::vector<int> ids;
    for (std::size_t i = 0; i < m + 1; ++i) ids.push_back(static_cast<int>(rand_dim(rng, 0, vocab - 1)));
    c.build = [ids](ad::Tape&, std::vector<Var>& v) { return ad::embedding(v[0], ids); };
  } else if (name == "concat_rows") {
    two({m, n}, {p, n});
    c.build = [](ad::Tape&, std::vector<Var>& v) { return ad::concat_rows(v); };
  } else if (name == "slice_rows") {
    one({m + 2, n});
    c.build = [m](ad::Tape&, std::vector<Var>& v) { return ad::slice_rows(v[0], 1, m); };
  } else if (name == "slice_cols") {
    one({m, n + 2});
    c.build = [n](ad::Tape&, std::vector<Var>& v) { return ad::slice_cols(v[0], 1, n); };
  } else if (name == "reshape") {
    one({m, n, p});
    c.build = [m, n, p](ad::Tape&, std::vector<Var>& v) { return ad::reshape(v[0], {m * n, p}); };
  } else if (name == "pad_cols") {
    one({m, n});
    c.build = [n, p](ad::Tape&, std::vector<Var>& v) { return ad::pad_cols(v[0], n + p); };
  }
  return c;
}

}  // namespace uniclin::testing
