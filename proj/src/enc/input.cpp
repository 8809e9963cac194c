#include <algorithm>
#include <cmath>
#include <numbers>

#include "uniclin/enc/encoder.hpp"
#include "uniclin/error.hpp"

namespace uniclin::enc {

Normalizer Normalizer::identity(std::size_t k) {
  return Normalizer{std::vector<float>(k, 0.0f), std::vector<float>(k, 1.0f)};
}

EncoderInput make_input(std::span<const synth::SignalEvent> events, double window_start,
                        std::size_t k, const Normalizer& norm) {
  if (norm.mean.size() != k || norm.sd.size() != k) {
    fail(ErrorKind::kEncode, "normalizer width does not match channel count");
  }
  EncoderInput in;
  in.k = k;
  for (std::size_t i = 0; i < events.size(); ++i) {
    const auto& e = events[i];
    if (e.channel >= k) fail(ErrorKind::kEncode, "event channel out of range");
    if (i > 0 && e.time < events[i - 1].time) fail(ErrorKind::kEncode, "events not time-ordered");
    const auto rel = static_cast<float>(e.time - window_start);
    if (in.timestamps.empty() || in.timestamps.back() != rel) {
      in.timestamps.push_back(rel);
      in.values.resize(in.values.size() + k, 0.0f);
      in.mask.resize(in.mask.size() + k, 0.0f);
    }
    const std::size_t cell = (in.timestamps.size() - 1) * k + e.channel;
    in.values[cell] = norm.apply(e.channel, e.value);
    in.mask[cell] = 1.0f;
  }
  return in;
}

std::string to_string(EncoderKind kind) {
  switch (kind) {
    case EncoderKind::kWarpformer: return "warpformer";
    case EncoderKind::kRnnMean: return "rnn-mean";
    case EncoderKind::kRnnForward: return "rnn-forward";
    case EncoderKind::kRnnDeltaT: return "rnn-delta-t";
    case EncoderKind::kRnnDecay: return "rnn-decay";
    case EncoderKind::kGruD: return "gru-d";
    case EncoderKind::kSeft: return "seft";
  }
  return "?";
}

EncoderKind encoder_kind_from_string(const std::string& s) {
  for (EncoderKind k : kAllEncoderKinds) {
    if (to_string(k) == s) return k;
  }
  fail(ErrorKind::kConfig, "unknown encoder kind: " + s);
}

nlohmann::json to_json(const EncoderConfig& c) {
  return {{"kind", to_string(c.kind)},       {"k", c.k},
          {"d", c.d},                        {"warped_steps", c.warped_steps},
          {"heads", c.heads},                {"rnn_hidden", c.rnn_hidden},
          {"seft_hidden", c.seft_hidden},    {"bins", c.bins}};
}

EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  EncoderConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "kind") c.kind = encoder_kind_from_string(v.get<std::string>());
    else if (key == "k") c.k = v.get<std::size_t>();
    else if (key == "d") c.d = v.get<std::size_t>();
    else if (key == "warped_steps") c.warped_steps = v.get<std::size_t>();
    else if (key == "heads") c.heads = v.get<std::size_t>();
    else if (key == "rnn_hidden") c.rnn_hidden = v.get<std::size_t>();
    else if (key == "seft_hidden") c.seft_hidden = v.get<std::size_t>();
    else if (key == "bins") c.bins = v.get<std::size_t>();
    else fail(ErrorKind::kConfig, "unknown encoder key: " + key);
  }
  return c;
}

std::vector<float> time_features(std::span<const float> hours, std::size_t dim) {
  const std::size_t pairs = dim / 2;
  std::vector<double> omega(pairs);
  for (std::size_t j = 0; j < pairs; ++j) {
    const double frac = pairs > 1 ? static_cast<double>(j) / static_cast<double>(pairs - 1) : 0.0;
    omega[j] = 2.0 * std::numbers::pi / std::pow(48.0, frac);
  }
  std::vector<float> out(hours.size() * dim, 0.0f);
  for (std::size_t i = 0; i < hours.size(); ++i) {
    for (std::size_t j = 0; j < pairs; ++j) {
      out[i * dim + 2 * j] = static_cast<float>(std::sin(omega[j] * hours[i]));
      out[i * dim + 2 * j + 1] = static_cast<float>(std::cos(omega[j] * hours[i]));
    }
  }
  return out;
}

BinnedSeries bin_hourly(const EncoderInput& in, std::size_t bins) {
  const std::size_t k = in.k;
  BinnedSeries b;
  b.bins = bins;
  b.k = k;
  b.value.assign(bins * k, 0.0f);
  b.mask.assign(bins * k, 0.0f);
  b.delta.assign(bins * k, 0.0f);
  b.last.assign(bins * k, 0.0f);
  std::vector<float> count(bins * k, 0.0f);
  for (std::size_t i = 0; i < in.steps(); ++i) {
    const auto bin = std::min<std::size_t>(
        bins - 1, static_cast<std::size_t>(std::max(0.0f, std::floor(in.timestamps[i]))));
    for (std::size_t c = 0; c < k; ++c) {
      if (in.mask[i * k + c] == 0.0f) continue;
      b.value[bin * k + c] += in.values[i * k + c];
      count[bin * k + c] += 1.0f;
    }
  }
  std::vector<float> carried(k, 0.0f);
  for (std::size_t t = 0; t < bins; ++t) {
    for (std::size_t c = 0; c < k; ++c) {
      const std::size_t cell = t * k + c;
      if (count[cell] > 0.0f) {
        b.value[cell] /= count[cell];
        b.mask[cell] = 1.0f;
        carried[c] = b.value[cell];
      }
      b.last[cell] = carried[c];
      if (t > 0) {
        const std::size_t prev = cell - k;
        b.delta[cell] = b.mask[prev] > 0.0f ? 1.0f : 1.0f + b.delta[prev];
      }
    }
  }
  return b;
}

}  // namespace uniclin::enc
