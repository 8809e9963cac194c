#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "uniclin/ad/param_store.hpp"
#include "uniclin/ad/tape.hpp"
#include "uniclin/synth/cohort.hpp"

namespace uniclin::enc {

// Per-channel standardization fitted on training events.
struct Normalizer {
  std::vector<float> mean;
  std::vector<float> sd;

  static Normalizer identity(std::size_t k);
  float apply(std::size_t channel, float v) const { return (v - mean[channel]) / sd[channel]; }
};

// One window in matrix form. Row i holds the channels observed at
// timestamps[i]; unobserved cells have mask 0 and carry no information.
struct EncoderInput {
  std::size_t k = 0;
  std::vector<float> timestamps;  // hours since window start, ascending, unique
  std::vector<float> values;      // [t̃ × k], standardized
  std::vector<float> mask;        // [t̃ × k], 0 or 1

  std::size_t steps() const { return timestamps.size(); }
};

EncoderInput make_input(std::span<const synth::SignalEvent> events, double window_start,
                        std::size_t k, const Normalizer& norm);

enum class EncoderKind { kWarpformer, kRnnMean, kRnnForward, kRnnDeltaT, kRnnDecay, kGruD, kSeft };
std::string to_string(EncoderKind kind);
EncoderKind encoder_kind_from_string(const std::string& s);
inline constexpr EncoderKind kAllEncoderKinds[] = {
    EncoderKind::kWarpformer, EncoderKind::kRnnMean, EncoderKind::kRnnForward,
    EncoderKind::kRnnDeltaT,  EncoderKind::kRnnDecay, EncoderKind::kGruD,
    EncoderKind::kSeft};

struct EncoderConfig {
  EncoderKind kind = EncoderKind::kWarpformer;
  std::size_t k = 10;
  std::size_t d = 12;
  std::size_t warped_steps = 8;
  std::size_t heads = 2;
  std::size_t rnn_hidden = 32;
  std::size_t seft_hidden = 32;
  std::size_t bins = 24;  // hourly bins for the recurrent baselines

  bool operator==(const EncoderConfig&) const = default;
};

nlohmann::json to_json(const EncoderConfig& c);
EncoderConfig encoder_config_from_json(const nlohmann::json& j);

// Per-(step, channel) embedding: mask ? v·scale[c] + bias[c] : missing[c].
// values/mask are [t̃ × k]; scale, bias, missing are [k × d]. Output
// [t̃ × k × d].
ad::Var value_embed(ad::Tape& tape, std::span<const float> values, std::span<const float> mask,
                    std::size_t steps, ad::Var scale, ad::Var bias, ad::Var missing);

// Fixed sin/cos features of relative time, [n × dim] with periods spread
// geometrically between one hour and two days.
std::vector<float> time_features(std::span<const float> hours, std::size_t dim);

// Hourly binning shared by the recurrent baselines.
struct BinnedSeries {
  std::size_t bins = 0, k = 0;
  std::vector<float> value;   // [bins × k], bin mean where observed, else 0
  std::vector<float> mask;    // [bins × k]
  std::vector<float> delta;   // [bins × k], hours since the channel was last seen
  std::vector<float> last;    // [bins × k], last observation carried forward (0 before any)
};
BinnedSeries bin_hourly(const EncoderInput& input, std::size_t bins);
// Imputed [bins × k] values fed to the mean, forward, delta-t and decay
// variants (standardized space, so the training mean is 0).
std::vector<float> impute(EncoderKind kind, const BinnedSeries& b);

struct ObservedTuple {
  float time = 0.0f;  // hours since window start
  int channel = 0;
  float value = 0.0f;  // standardized
};
// Observed cells in row-major order.
std::vector<ObservedTuple> observed_tuples(const EncoderInput& input);

// Shared time-series encoder. encode() returns [out_steps × k × d].
class Encoder {
 public:
  Encoder(EncoderConfig config, std::uint64_t seed);

  const EncoderConfig& config() const { return config_; }
  std::size_t out_steps() const;
  ad::Var encode(ad::Tape& tape, const EncoderInput& input);

  ad::ParamStore& params() { return params_; }
  const ad::ParamStore& params() const { return params_; }

  // SEFT on an explicit tuple set; order does not matter.
  ad::Var encode_tuples(ad::Tape& tape, std::span<const ObservedTuple> tuples);
  // SEFT only: pooling weights of the last encode() call.
  const std::vector<float>& last_attention() const { return last_attention_; }

 private:
  ad::Var encode_warpformer(ad::Tape& tape, const EncoderInput& input);
  ad::Var encode_rnn(ad::Tape& tape, const EncoderInput& input);
  ad::Var encode_seft(ad::Tape& tape, const EncoderInput& input);

  EncoderConfig config_;
  ad::ParamStore params_;
  std::vector<float> last_attention_;
};

}  // namespace uniclin::enc
