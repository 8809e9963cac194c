#include <cmath>
#include <random>

#include "uniclin/ad/ops.hpp"
#include "uniclin/enc/encoder.hpp"
#include "uniclin/error.hpp"

namespace uniclin::enc {

using ad::Tensor;
using ad::Var;

Var value_embed(ad::Tape& tape, std::span<const float> values, std::span<const float> mask,
                std::size_t steps, Var scale, Var bias, Var missing) {
  const std::size_t k = scale.dim(0), d = scale.dim(1);
  if (scale.rank() != 2 || bias.shape() != scale.shape() || missing.shape() != scale.shape()) {
    fail(ErrorKind::kShape, "value_embed: parameter shapes disagree");
  }
  if (values.size() != steps * k || mask.size() != steps * k) {
    fail(ErrorKind::kShape, "value_embed: values/mask must be [steps x k]");
  }
  auto sv = scale.value(), bv = bias.value(), mv = missing.value();
  std::vector<float> out(steps * k * d);
  for (std::size_t i = 0; i < steps; ++i) {
    for (std::size_t c = 0; c < k; ++c) {
      float* o = out.data() + (i * k + c) * d;
      if (mask[i * k + c] != 0.0f) {
        const float v = values[i * k + c];
        for (std::size_t l = 0; l < d; ++l) o[l] = v * sv[c * d + l] + bv[c * d + l];
      } else {
        for (std::size_t l = 0; l < d; ++l) o[l] = mv[c * d + l];
      }
    }
  }
  const auto si = scale.id(), bi = bias.id(), mi = missing.id();
  std::vector<float> vals(values.begin(), values.end());
  std::vector<float> msk(mask.begin(), mask.end());
  return tape.record(
      {steps, k, d}, std::move(out), {scale, bias, missing},
      [=, vals = std::move(vals), msk = std::move(msk)](ad::Tape& t, std::uint32_t self) {
        auto g = t.grad(self);
        float* gs = t.requires_grad(si) ? t.grad(si).data() : nullptr;
        float* gb = t.requires_grad(bi) ? t.grad(bi).data() : nullptr;
        float* gm = t.requires_grad(mi) ? t.grad(mi).data() : nullptr;
        for (std::size_t i = 0; i < steps; ++i) {
          for (std::size_t c = 0; c < k; ++c) {
            const float* gi = g.data() + (i * k + c) * d;
            if (msk[i * k + c] != 0.0f) {
              const float v = vals[i * k + c];
              for (std::size_t l = 0; l < d; ++l) {
                if (gs) gs[c * d + l] += v * gi[l];
                if (gb) gb[c * d + l] += gi[l];
              }
            } else if (gm) {
              for (std::size_t l = 0; l < d; ++l) gm[c * d + l] += gi[l];
            }
          }
        }
      });
}

namespace {

Tensor init(ad::Shape shape, float sd, std::mt19937_64& rng) {
  return Tensor::randn(std::move(shape), sd, rng, true);
}

float fan_in(std::size_t n) { return 1.0f / std::sqrt(static_cast<float>(n)); }

}  // namespace

Encoder::Encoder(EncoderConfig config, std::uint64_t seed) : config_(config) {
  const auto& c = config_;
  if (c.k == 0 || c.d == 0) fail(ErrorKind::kConfig, "encoder needs k, d > 0");
  std::mt19937_64 rng(seed);
  const std::size_t k = c.k, d = c.d;
  switch (c.kind) {
    case EncoderKind::kWarpformer: {
      if (c.warped_steps == 0) fail(ErrorKind::kConfig, "warped_steps must be positive");
      if (c.heads == 0 || d % c.heads != 0) {
        fail(ErrorKind::kConfig, "heads must divide the feature dim");
      }
      if (d % 2 != 0) fail(ErrorKind::kConfig, "feature dim must be even");
      params_.add("warp.embed.scale", init({k, d}, 0.5f, rng));
      params_.add("warp.embed.bias", init({k, d}, 0.5f, rng));
      params_.add("warp.embed.missing", init({k, d}, 0.5f, rng));
      params_.add("warp.time.proj", init({d, d}, fan_in(d), rng));
      params_.add("warp.pool.query", init({c.warped_steps, k, d}, 1.0f, rng));
      params_.add("warp.pool.key", init({d, d}, fan_in(d), rng));
      params_.add("warp.block.ln1.g", Tensor::filled({d}, 1.0f, true));
      params_.add("warp.block.ln1.b", Tensor::zeros({d}, true));
      for (const char* m : {"q", "k", "v", "o"}) {
        params_.add(std::string("warp.block.attn.") + m, init({d, d}, fan_in(d), rng));
      }
      params_.add("warp.block.ln2.g", Tensor::filled({d}, 1.0f, true));
      params_.add("warp.block.ln2.b", Tensor::zeros({d}, true));
      params_.add("warp.block.mlp.w1", init({2 * d, d}, fan_in(d), rng));
      params_.add("warp.block.mlp.b1", Tensor::zeros({2 * d}, true));
      params_.add("warp.block.mlp.w2", init({d, 2 * d}, fan_in(2 * d), rng));
      params_.add("warp.block.mlp.b2", Tensor::zeros({d}, true));
      break;
    }
    case EncoderKind::kSeft: {
      const std::size_t h = c.seft_hidden;
      params_.add("seft.embed.w", init({h, d + 1}, fan_in(d + 1), rng));
      params_.add("seft.embed.channel", init({k, h}, 0.5f, rng));
      params_.add("seft.pool.key", init({h, h}, fan_in(h), rng));
      params_.add("seft.pool.value", init({h, h}, fan_in(h), rng));
      params_.add("seft.pool.query", init({h, 1}, 1.0f, rng));
      params_.add("seft.out.w", init({k * d, h}, fan_in(h), rng));
      params_.add("seft.out.b", Tensor::zeros({k * d}, true));
      break;
    }
    default: {
      if (c.bins == 0) fail(ErrorKind::kConfig, "bins must be positive");
      const std::size_t h = c.rnn_hidden;
      std::size_t in = k;
      if (c.kind == EncoderKind::kRnnDeltaT || c.kind == EncoderKind::kGruD) in = 2 * k;
      params_.add("rnn.gru.wx", init({3 * h, in}, fan_in(in), rng));
      params_.add("rnn.gru.wh", init({3 * h, h}, fan_in(h), rng));
      params_.add("rnn.gru.b", Tensor::zeros({3 * h}, true));
      if (c.kind == EncoderKind::kRnnDecay || c.kind == EncoderKind::kGruD) {
        std::uniform_real_distribution<float> u(0.0f, 0.1f);
        Tensor w({h, k}, true);
        for (auto& x : w.values()) x = u(rng);
        params_.add("rnn.decay.hidden", std::move(w));
      }
      if (c.kind == EncoderKind::kGruD) {
        std::uniform_real_distribution<float> u(0.0f, 0.1f);
        Tensor w({k}, true);
        for (auto& x : w.values()) x = u(rng);
        params_.add("rnn.decay.input", std::move(w));
        params_.add("rnn.decay.input_bias", Tensor::zeros({k}, true));
        params_.add("rnn.decay.hidden_bias", Tensor::zeros({h}, true));
      }
      params_.add("rnn.out.w", init({k * d, h}, fan_in(h), rng));
      params_.add("rnn.out.b", Tensor::zeros({k * d}, true));
      break;
    }
  }
}

std::size_t Encoder::out_steps() const {
  return config_.kind == EncoderKind::kWarpformer ? config_.warped_steps : 1;
}

Var Encoder::encode(ad::Tape& tape, const EncoderInput& input) {
  if (input.k != config_.k) fail(ErrorKind::kEncode, "input channel count does not match encoder");
  switch (config_.kind) {
    case EncoderKind::kWarpformer: return encode_warpformer(tape, input);
    case EncoderKind::kSeft: return encode_seft(tape, input);
    default: return encode_rnn(tape, input);
  }
}

Var Encoder::encode_warpformer(ad::Tape& tape, const EncoderInput& in) {
  const std::size_t n = in.steps(), k = config_.k, d = config_.d, t = config_.warped_steps;
  if (n == 0) fail(ErrorKind::kEncode, "empty window");
  auto p = [&](const char* name) { return tape.param(params_.at(name)); };

  Var e = value_embed(tape, in.values, in.mask, n, p("warp.embed.scale"), p("warp.embed.bias"),
                      p("warp.embed.missing"));
  Var tf = tape.constant({n, d}, time_features(in.timestamps, d));
  e = ad::add_mid_broadcast(e, ad::matmul_nt(tf, p("warp.time.proj")));

  // Warp: per-channel attention from t learned queries onto the n input steps.
  Var keys = ad::reshape(ad::matmul_nt(ad::reshape(e, {n * k, d}), p("warp.pool.key")), {n, k, d});
  Var x = ad::attention(p("warp.pool.query"), keys, e, false);

  // Shared block along the warped axis; each channel is its own group of heads.
  const std::size_t h = config_.heads, dh = d / h;
  auto linear = [&](Var v, const char* w) { return ad::matmul_nt(v, p(w)); };
  Var flat = ad::reshape(x, {t * k, d});
  Var a = ad::layernorm(flat, p("warp.block.ln1.g"), p("warp.block.ln1.b"));
  Var q = ad::reshape(linear(a, "warp.block.attn.q"), {t, k * h, dh});
  Var kk = ad::reshape(linear(a, "warp.block.attn.k"), {t, k * h, dh});
  Var v = ad::reshape(linear(a, "warp.block.attn.v"), {t, k * h, dh});
  Var att = ad::reshape(ad::attention(q, kk, v, false), {t * k, d});
  flat = ad::add(flat, linear(att, "warp.block.attn.o"));
  Var m = ad::layernorm(flat, p("warp.block.ln2.g"), p("warp.block.ln2.b"));
  m = ad::gelu(ad::add_row(linear(m, "warp.block.mlp.w1"), p("warp.block.mlp.b1")));
  m = ad::add_row(linear(m, "warp.block.mlp.w2"), p("warp.block.mlp.b2"));
  flat = ad::add(flat, m);
  return ad::reshape(flat, {t, k, d});
}

}  // namespace uniclin::enc
