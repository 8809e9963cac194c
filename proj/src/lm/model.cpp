#include "uniclin/lm/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "uniclin/ad/ops.hpp"
#include "uniclin/error.hpp"

namespace uniclin::lm {

using ad::Tensor;
using ad::Var;

nlohmann::json to_json(const LmConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"d_model", c.d_model},     {"layers", c.layers},
          {"heads", c.heads},           {"mlp_mult", c.mlp_mult},   {"max_len", c.max_len},
          {"lora_rank", c.lora_rank},   {"lora_alpha", c.lora_alpha}};
}

LmConfig lm_config_from_json(const nlohmann::json& j) {
  LmConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "vocab_size") c.vocab_size = v.get<std::size_t>();
    else if (key == "d_model") c.d_model = v.get<std::size_t>();
    else if (key == "layers") c.layers = v.get<std::size_t>();
    else if (key == "heads") c.heads = v.get<std::size_t>();
    else if (key == "mlp_mult") c.mlp_mult = v.get<std::size_t>();
    else if (key == "max_len") c.max_len = v.get<std::size_t>();
    else if (key == "lora_rank") c.lora_rank = v.get<std::size_t>();
    else if (key == "lora_alpha") c.lora_alpha = v.get<float>();
    else fail(ErrorKind::kConfig, "unknown lm key: " + key);
  }
  return c;
}

FusedSequence assemble_prompt(const PromptSegments& seg, const Vocab& vocab, Var embed_table,
                              bool training) {
  if (training && !seg.ground_truth) fail(ErrorKind::kUsage, "training prompt without ground truth");
  const std::size_t width = embed_table.dim(1);
  std::size_t t = 0;
  if (seg.ts_tokens.valid()) {
    if (seg.ts_tokens.rank() != 2 || seg.ts_tokens.dim(1) != width) {
      fail(ErrorKind::kUsage, "series tokens must be [t x D_lm], got " +
                                  ad::shape_str(seg.ts_tokens.shape()));
    }
    t = seg.ts_tokens.dim(0);
  }
  for (const auto& label : seg.label_space) {
    if (!vocab.find(label)) fail(ErrorKind::kConfig, "label '" + label + "' missing from vocab");
  }

  std::vector<int> before{vocab.bos()};
  for (const auto* text : {&seg.prefix, &seg.task_description}) {
    auto ids = vocab.tokenize(*text);
    before.insert(before.end(), ids.begin(), ids.end());
  }
  before.push_back(vocab.ts());
  std::vector<int> after = vocab.tokenize(label_listing(seg.label_space));
  after.push_back(vocab.lbl());
  const std::size_t lbl_pos = before.size() + t + after.size() - 1;
  if (training) {
    const auto& gt = *seg.ground_truth;
    if (std::find(seg.label_space.begin(), seg.label_space.end(), gt) == seg.label_space.end()) {
      fail(ErrorKind::kUsage, "ground truth '" + gt + "' not in label space");
    }
    after.push_back(vocab.id(gt));
    after.push_back(vocab.eos());
  }

  FusedSequence f;
  std::vector<Var> parts{ad::embedding(embed_table, before)};
  if (t > 0) parts.push_back(seg.ts_tokens);
  parts.push_back(ad::embedding(embed_table, after));
  f.embeds = ad::concat_rows(parts);
  f.token_ids = before;
  f.token_ids.insert(f.token_ids.end(), t, -1);
  f.token_ids.insert(f.token_ids.end(), after.begin(), after.end());
  f.segments.assign(f.token_ids.size(), Segment::kText);
  std::fill_n(f.segments.begin() + static_cast<std::ptrdiff_t>(before.size()), t, Segment::kSeries);
  f.label_positions = {lbl_pos};
  f.series_begin = before.size();
  return f;
}

LanguageModel::LanguageModel(LmConfig config, std::uint64_t seed) : config_(config) {
  const auto& c = config_;
  if (c.vocab_size == 0 || c.d_model == 0 || c.heads == 0 || c.d_model % c.heads != 0) {
    fail(ErrorKind::kConfig, "invalid LM shape");
  }
  if (c.lora_rank == 0) fail(ErrorKind::kConfig, "LoRA rank must be positive");
  std::mt19937_64 rng(seed);
  const std::size_t D = c.d_model, F = c.mlp_mult * D, r = c.lora_rank;
  const float sd = 1.0f / std::sqrt(static_cast<float>(D));
  base_.add("tok_embed", Tensor::randn({c.vocab_size, D}, 0.02f, rng, true));
  base_.add("pos_embed", Tensor::randn({c.max_len, D}, 0.02f, rng, true));
  for (std::size_t l = 0; l < c.layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    base_.add(p + "ln1.g", Tensor::filled({D}, 1.0f, true));
    base_.add(p + "ln1.b", Tensor::zeros({D}, true));
    for (const char* m : {"q", "k", "v", "o"}) {
      base_.add(p + m, Tensor::randn({D, D}, std::string(m) == "o" ? 0.5f * sd : sd, rng, true));
      lora_.add(p + m + ".A", Tensor::randn({r, D}, sd, rng, true));
      lora_.add(p + m + ".B", Tensor::zeros({D, r}, true));
    }
    base_.add(p + "ln2.g", Tensor::filled({D}, 1.0f, true));
    base_.add(p + "ln2.b", Tensor::zeros({D}, true));
    base_.add(p + "mlp.w1", Tensor::randn({F, D}, sd, rng, true));
    base_.add(p + "mlp.b1", Tensor::zeros({F}, true));
    base_.add(p + "mlp.w2", Tensor::randn({D, F}, 0.5f / std::sqrt(static_cast<float>(F)), rng, true));
    base_.add(p + "mlp.b2", Tensor::zeros({D}, true));
  }
  base_.add("ln_f.g", Tensor::filled({D}, 1.0f, true));
  base_.add("ln_f.b", Tensor::zeros({D}, true));
}

Var LanguageModel::project(ad::Tape& tape, Var x, std::size_t layer, const char* name) {
  const std::string key = "layer" + std::to_string(layer) + "." + name;
  Var y = ad::matmul_nt(x, tape.param(base_.at(key)));
  if (!lora_enabled_) return y;
  Var delta = ad::matmul_nt(ad::matmul_nt(x, tape.param(lora_.at(key + ".A"))),
                            tape.param(lora_.at(key + ".B")));
  return ad::add(y, ad::scale(delta, config_.lora_alpha / static_cast<float>(config_.lora_rank)));
}

Var LanguageModel::hidden(ad::Tape& tape, std::span<const Var> embeds,
                          std::span<const PrefixCache* const> prefixes, PrefixCache* capture) {
  const auto& c = config_;
  const std::size_t D = c.d_model, h = c.heads, dh = D / h;
  if (embeds.empty()) fail(ErrorKind::kUsage, "lm forward on an empty batch");
  if (!prefixes.empty() && prefixes.size() != embeds.size()) {
    fail(ErrorKind::kUsage, "one prefix slot per sequence");
  }
  auto prefix_of = [&](std::size_t s) -> const PrefixCache* {
    return prefixes.empty() ? nullptr : prefixes[s];
  };
  Var pos = tape.param(base_.at("pos_embed"));
  std::vector<std::size_t> lengths, offsets;
  std::vector<Var> rows;
  std::size_t total = 0;
  for (std::size_t s = 0; s < embeds.size(); ++s) {
    Var e = embeds[s];
    if (e.rank() != 2 || e.dim(1) != D) fail(ErrorKind::kShape, "lm input must be [T x D]");
    const std::size_t T = e.dim(0);
    const std::size_t start = prefix_of(s) ? prefix_of(s)->length : 0;
    if (T == 0) fail(ErrorKind::kUsage, "lm forward on an empty sequence");
    if (start + T > c.max_len) fail(ErrorKind::kUsage, "sequence longer than max_len");
    if (prefix_of(s) && prefix_of(s)->keys.size() != c.layers) {
      fail(ErrorKind::kUsage, "prefix cache does not match the layer count");
    }
    rows.push_back(ad::add(e, ad::slice_rows(pos, start, T)));
    offsets.push_back(total);
    lengths.push_back(T);
    total += T;
  }
  const bool single = rows.size() == 1;
  Var x = single ? rows[0] : ad::concat_rows(rows);
  auto p = [&](const std::string& name) { return tape.param(base_.at(name)); };
  if (capture) {
    capture->keys.clear();
    capture->values.clear();
    capture->length = total;
  }

  for (std::size_t l = 0; l < c.layers; ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    Var a = ad::layernorm(x, p(pre + "ln1.g"), p(pre + "ln1.b"));
    Var q = project(tape, a, l, "q");
    Var k = project(tape, a, l, "k");
    Var v = project(tape, a, l, "v");
    if (capture) {
      capture->keys.push_back(k);
      capture->values.push_back(v);
      if (l + 1 == c.layers) return x;
    }
    std::vector<Var> heads_out;
    for (std::size_t s = 0; s < lengths.size(); ++s) {
      const std::size_t T = lengths[s];
      auto cut = [&](Var m) { return single ? m : ad::slice_rows(m, offsets[s], T); };
      Var ks = cut(k), vs = cut(v);
      std::size_t keys = T;
      if (const PrefixCache* pc = prefix_of(s)) {
        const Var kparts[] = {pc->keys[l], ks};
        const Var vparts[] = {pc->values[l], vs};
        ks = ad::concat_rows(kparts);
        vs = ad::concat_rows(vparts);
        keys += pc->length;
      }
      Var o = ad::causal_attention(ad::reshape(cut(q), {T, h, dh}), ad::reshape(ks, {keys, h, dh}),
                                   ad::reshape(vs, {keys, h, dh}));
      heads_out.push_back(ad::reshape(o, {T, D}));
    }
    Var att = single ? heads_out[0] : ad::concat_rows(heads_out);
    x = ad::add(x, project(tape, att, l, "o"));
    Var m = ad::layernorm(x, p(pre + "ln2.g"), p(pre + "ln2.b"));
    m = ad::gelu(ad::add_row(ad::matmul_nt(m, p(pre + "mlp.w1")), p(pre + "mlp.b1")));
    m = ad::add_row(ad::matmul_nt(m, p(pre + "mlp.w2")), p(pre + "mlp.b2"));
    x = ad::add(x, m);
  }
  return ad::layernorm(x, p("ln_f.g"), p("ln_f.b"));
}

PrefixCache LanguageModel::encode_prefix(ad::Tape& tape, Var prefix_embeds) {
  PrefixCache cache;
  hidden(tape, std::span<const Var>(&prefix_embeds, 1), {}, &cache);
  return cache;
}

std::vector<PrefixCache> LanguageModel::encode_prefixes(ad::Tape& tape,
                                                        std::span<const Var> prefix_embeds) {
  if (prefix_embeds.size() == 1) return {encode_prefix(tape, prefix_embeds[0])};
  PrefixCache all;
  hidden(tape, prefix_embeds, {}, &all);
  std::vector<PrefixCache> out(prefix_embeds.size());
  std::size_t offset = 0;
  for (std::size_t s = 0; s < prefix_embeds.size(); ++s) {
    const std::size_t P = prefix_embeds[s].dim(0);
    out[s].length = P;
    for (std::size_t l = 0; l < all.keys.size(); ++l) {
      out[s].keys.push_back(ad::slice_rows(all.keys[l], offset, P));
      out[s].values.push_back(ad::slice_rows(all.values[l], offset, P));
    }
    offset += P;
  }
  return out;
}

Var LanguageModel::logits(ad::Tape& tape, Var embeds) {
  return ad::matmul_nt(hidden(tape, std::span<const Var>(&embeds, 1), {}, nullptr),
                       token_table(tape));
}

Var LanguageModel::logits_at(ad::Tape& tape, std::span<const Var> embeds,
                             std::span<const std::vector<std::size_t>> positions,
                             std::span<const PrefixCache* const> prefixes) {
  if (positions.size() != embeds.size()) fail(ErrorKind::kUsage, "one position list per sequence");
  Var hs = hidden(tape, embeds, prefixes, nullptr);
  std::vector<Var> picked;
  std::size_t offset = 0;
  for (std::size_t s = 0; s < embeds.size(); ++s) {
    for (std::size_t pos : positions[s]) {
      if (pos >= embeds[s].dim(0)) fail(ErrorKind::kUsage, "position outside sequence");
      picked.push_back(ad::slice_rows(hs, offset + pos, 1));
    }
    offset += embeds[s].dim(0);
  }
  if (picked.empty()) fail(ErrorKind::kUsage, "no positions requested");
  Var rows = picked.size() == 1 ? picked[0] : ad::concat_rows(picked);
  return ad::matmul_nt(rows, token_table(tape));
}

Prediction predict_label(std::span<const float> row, std::span<const std::string> label_space,
                         const Vocab& vocab, bool vocabulary_wide) {
  if (label_space.empty()) fail(ErrorKind::kUsage, "empty label space");
  if (row.size() != vocab.size()) fail(ErrorKind::kShape, "logits row does not match vocab");
  std::vector<int> ids;
  for (const auto& label : label_space) {
    auto id = vocab.find(label);
    if (!id) fail(ErrorKind::kConfig, "label '" + label + "' missing from vocab");
    ids.push_back(*id);
  }
  Prediction p;
  double mx = -std::numeric_limits<double>::infinity();
  for (int id : ids) mx = std::max(mx, static_cast<double>(row[static_cast<std::size_t>(id)]));
  double z = 0.0;
  for (int id : ids) {
    p.scores.push_back(std::exp(static_cast<double>(row[static_cast<std::size_t>(id)]) - mx));
    z += p.scores.back();
  }
  for (auto& s : p.scores) s /= z;
  if (vocabulary_wide) {
    const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    const auto it = std::find(ids.begin(), ids.end(), best);
    p.index = static_cast<std::size_t>(it - ids.begin());
    p.label = vocab.token(best);
  } else {
    p.index = static_cast<std::size_t>(std::max_element(p.scores.begin(), p.scores.end()) -
                                       p.scores.begin());
    p.label = label_space[p.index];
  }
  return p;
}

Prediction predict_label(Var logits, const FusedSequence& fused,
                         std::span<const std::string> label_space, const Vocab& vocab,
                         bool vocabulary_wide) {
  if (fused.label_positions.empty()) fail(ErrorKind::kUsage, "sequence has no label position");
  const std::size_t V = logits.dim(1), pos = fused.label_positions.front();
  auto all = logits.value();
  return predict_label(all.subspan(pos * V, V), label_space, vocab, vocabulary_wide);
}

}  // namespace uniclin::lm
