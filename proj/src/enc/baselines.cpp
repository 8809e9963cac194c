#include <algorithm>
#include <cmath>

#include "uniclin/ad/ops.hpp"
#include "uniclin/enc/encoder.hpp"
#include "uniclin/error.hpp"

namespace uniclin::enc {

using ad::Var;

std::vector<float> impute(EncoderKind kind, const BinnedSeries& b) {
  switch (kind) {
    case EncoderKind::kRnnMean: {
      std::vector<float> x(b.value.size());
      for (std::size_t i = 0; i < x.size(); ++i) x[i] = b.mask[i] > 0.0f ? b.value[i] : 0.0f;
      return x;
    }
    case EncoderKind::kRnnForward:
    case EncoderKind::kRnnDeltaT:
    case EncoderKind::kRnnDecay:
      return b.last;
    default:
      fail(ErrorKind::kUsage, "impute: no fixed imputation for " + to_string(kind));
  }
}

Var Encoder::encode_rnn(ad::Tape& tape, const EncoderInput& in) {
  const auto& c = config_;
  const std::size_t k = c.k, h = c.rnn_hidden, T = c.bins;
  const BinnedSeries b = bin_hourly(in, T);
  auto p = [&](const char* name) { return tape.param(params_.at(name)); };
  Var wx = p("rnn.gru.wx");
  Var delta = tape.constant({T, k}, b.delta);

  Var gx;
  if (c.kind == EncoderKind::kGruD) {
    // Input decays from the last observation toward the training mean (0).
    Var z = ad::add_row(ad::mul_row(delta, p("rnn.decay.input")), p("rnn.decay.input_bias"));
    Var gamma = ad::exp(ad::scale(ad::relu(z), -1.0f));
    std::vector<float> seen(T * k), stale(T * k);
    for (std::size_t i = 0; i < T * k; ++i) {
      seen[i] = b.mask[i] * b.value[i];
      stale[i] = (1.0f - b.mask[i]) * b.last[i];
    }
    Var xhat = ad::add(tape.constant({T, k}, seen), ad::mul(tape.constant({T, k}, stale), gamma));
    Var mask = tape.constant({T, k}, b.mask);
    gx = ad::add(ad::matmul_nt(xhat, ad::slice_cols(wx, 0, k)),
                 ad::matmul_nt(mask, ad::slice_cols(wx, k, k)));
  } else {
    std::vector<float> x = impute(c.kind, b);
    std::size_t width = k;
    if (c.kind == EncoderKind::kRnnDeltaT) {
      std::vector<float> wide(T * 2 * k);
      for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t ch = 0; ch < k; ++ch) {
          wide[t * 2 * k + ch] = x[t * k + ch];
          wide[t * 2 * k + k + ch] = b.delta[t * k + ch] / static_cast<float>(T);
        }
      }
      x = std::move(wide);
      width = 2 * k;
    }
    gx = ad::matmul_nt(tape.constant({T, width}, std::move(x)), wx);
  }
  gx = ad::add_row(gx, p("rnn.gru.b"));

  Var decay;
  const bool hidden_decay = c.kind == EncoderKind::kRnnDecay || c.kind == EncoderKind::kGruD;
  if (hidden_decay) {
    Var z = ad::matmul_nt(delta, p("rnn.decay.hidden"));
    if (c.kind == EncoderKind::kGruD) z = ad::add_row(z, p("rnn.decay.hidden_bias"));
    decay = ad::exp(ad::scale(ad::relu(z), -1.0f));
  }

  Var wh = p("rnn.gru.wh");
  Var state = tape.constant({1, h}, std::vector<float>(h, 0.0f));
  for (std::size_t t = 0; t < T; ++t) {
    if (hidden_decay) state = ad::mul(state, ad::slice_rows(decay, t, 1));
    Var xt = ad::slice_rows(gx, t, 1);
    Var ht = ad::matmul_nt(state, wh);
    Var zg = ad::sigmoid(ad::add(ad::slice_cols(xt, 0, h), ad::slice_cols(ht, 0, h)));
    Var rg = ad::sigmoid(ad::add(ad::slice_cols(xt, h, h), ad::slice_cols(ht, h, h)));
    Var ng = ad::tanh(ad::add(ad::slice_cols(xt, 2 * h, h), ad::mul(rg, ad::slice_cols(ht, 2 * h, h))));
    state = ad::add(ng, ad::mul(zg, ad::sub(state, ng)));
  }
  Var out = ad::add_row(ad::matmul_nt(state, p("rnn.out.w")), p("rnn.out.b"));
  return ad::reshape(out, {1, k, c.d});
}

std::vector<ObservedTuple> observed_tuples(const EncoderInput& in) {
  std::vector<ObservedTuple> out;
  for (std::size_t i = 0; i < in.steps(); ++i) {
    for (std::size_t ch = 0; ch < in.k; ++ch) {
      if (in.mask[i * in.k + ch] == 0.0f) continue;
      out.push_back({in.timestamps[i], static_cast<int>(ch), in.values[i * in.k + ch]});
    }
  }
  return out;
}

Var Encoder::encode_seft(ad::Tape& tape, const EncoderInput& in) {
  return encode_tuples(tape, observed_tuples(in));
}

Var Encoder::encode_tuples(ad::Tape& tape, std::span<const ObservedTuple> tuples) {
  if (config_.kind != EncoderKind::kSeft) fail(ErrorKind::kUsage, "encode_tuples needs a SEFT encoder");
  const std::size_t k = config_.k, d = config_.d, n = tuples.size();
  if (n == 0) fail(ErrorKind::kEncode, "no observed tuples");
  std::vector<float> times;
  std::vector<int> channels;
  for (const auto& u : tuples) {
    if (u.channel < 0 || static_cast<std::size_t>(u.channel) >= k) {
      fail(ErrorKind::kEncode, "tuple channel out of range");
    }
    times.push_back(u.time);
    channels.push_back(u.channel);
  }
  auto p = [&](const char* name) { return tape.param(params_.at(name)); };

  const std::vector<float> tf = time_features(times, d);
  std::vector<float> feats(n * (d + 1));
  for (std::size_t j = 0; j < n; ++j) {
    std::copy_n(tf.data() + j * d, d, feats.data() + j * (d + 1));
    feats[j * (d + 1) + d] = tuples[j].value;
  }
  Var e = ad::matmul_nt(tape.constant({n, d + 1}, std::move(feats)), p("seft.embed.w"));
  e = ad::gelu(ad::add(e, ad::embedding(p("seft.embed.channel"), channels)));

  Var scores = ad::matmul(ad::matmul_nt(e, p("seft.pool.key")), p("seft.pool.query"));
  const float sc = 1.0f / std::sqrt(static_cast<float>(config_.seft_hidden));
  Var alpha = ad::softmax_rows(ad::scale(ad::reshape(scores, {1, n}), sc));
  last_attention_.assign(alpha.value().begin(), alpha.value().end());
  Var pooled = ad::matmul(alpha, ad::matmul_nt(e, p("seft.pool.value")));
  Var out = ad::add_row(ad::matmul_nt(pooled, p("seft.out.w")), p("seft.out.b"));
  return ad::reshape(out, {1, k, d});
}

}  // namespace uniclin::enc
