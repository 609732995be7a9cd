#pragma once

// Inference-only post-LayerNorm transformer encoder.
//
// Weights are stored [in, out] so that y = x W + b. Every layer has
// Q/K/V projections, multi-head scaled dot-product attention, an AttOutput
// projection followed by residual + LayerNorm, a GELU Intermediate block and
// an Output projection followed by residual + LayerNorm. The forward pass can
// capture each component's output at the [CLS] position (row 0).

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "topoprune/components.hpp"
#include "topoprune/error.hpp"
#include "topoprune/parallel.hpp"
#include "topoprune/tensor_store.hpp"

namespace topoprune {

struct EncoderConfig {
  int layers = 2;         // L
  int hidden = 8;         // H
  int heads = 2;          // A
  int intermediate = 16;  // I
  int vocab = 100;        // V
  int max_len = 16;       // M
  std::uint64_t seed = 0;
  int cls_id = 1;
  int pad_id = 0;

  void validate() const {
    require(layers >= 1 && hidden >= 1 && heads >= 1 && intermediate >= 1 && vocab >= 1 &&
                max_len >= 1,
            "encoder config: all sizes must be >= 1");
    require(hidden % heads == 0, "encoder config: H must be divisible by A");
    require(cls_id >= 0 && cls_id < vocab, "encoder config: cls_id outside vocabulary");
    require(pad_id >= 0 && pad_id < vocab, "encoder config: pad_id outside vocabulary");
  }

  int head_dim() const { return hidden / heads; }

  nlohmann::json to_json() const {
    return {{"L", layers},  {"H", hidden},    {"A", heads},       {"I", intermediate},
            {"V", vocab},   {"M", max_len},   {"seed", seed},     {"cls_id", cls_id},
            {"pad_id", pad_id}};
  }

  static EncoderConfig from_json(const nlohmann::json& j) {
    EncoderConfig c;
    try {
      c.layers = j.at("L").get<int>();
      c.hidden = j.at("H").get<int>();
      c.heads = j.at("A").get<int>();
      c.intermediate = j.at("I").get<int>();
      c.vocab = j.at("V").get<int>();
      c.max_len = j.at("M").get<int>();
      c.seed = j.value("seed", std::uint64_t{0});
      c.cls_id = j.value("cls_id", 1);
      c.pad_id = j.value("pad_id", 0);
    } catch (const nlohmann::json::exception& e) {
      fail(std::string("encoder config: ") + e.what());
    }
    c.validate();
    return c;
  }

  static EncoderConfig bert_base() { return {12, 768, 12, 3072, 28996, 512, 0, 101, 0}; }
  static EncoderConfig bert_large() { return {24, 1024, 16, 4096, 28996, 512, 0, 101, 0}; }
};

inline EncoderConfig read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open config '" + path.string() + "'");
  try {
    return EncoderConfig::from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    fail("config '" + path.string() + "': " + e.what());
  }
}

// SplitMix64 stream; normals via Box-Muller on 53-bit uniforms.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform in (0, 1).
  double uniform() { return (static_cast<double>(next() >> 11) + 0.5) * 0x1.0p-53; }

  double normal(double mean, double stddev) {
    if (has_spare_) {
      has_spare_ = false;
      return mean + stddev * spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * 3.14159265358979323846 * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return mean + stddev * radius * std::cos(angle);
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

inline std::string norm_name(int layer, Component c, std::string_view suffix) {
  return "layer." + std::to_string(layer) + "." + std::string(component_name(c)) + "Norm." +
         std::string(suffix);
}

// Tensor names and shapes of a freshly initialised model, in generation order.
inline std::vector<std::pair<std::string, Shape>> model_shapes(const EncoderConfig& cfg) {
  const std::int64_t h = cfg.hidden;
  const std::int64_t inter = cfg.intermediate;
  std::vector<std::pair<std::string, Shape>> out = {
      {"embed.word", {cfg.vocab, h}},
      {"embed.pos", {cfg.max_len, h}},
      {"embed.norm.weight", {h}},
      {"embed.norm.bias", {h}},
  };
  for (int l = 1; l <= cfg.layers; ++l) {
    for (const auto c : {Component::kQ, Component::kK, Component::kV, Component::kAttOutput}) {
      out.push_back({tensor_name(l, c, "weight"), {h, h}});
      out.push_back({tensor_name(l, c, "bias"), {h}});
    }
    out.push_back({norm_name(l, Component::kAttOutput, "weight"), {h}});
    out.push_back({norm_name(l, Component::kAttOutput, "bias"), {h}});
    out.push_back({tensor_name(l, Component::kIntermediate, "weight"), {h, inter}});
    out.push_back({tensor_name(l, Component::kIntermediate, "bias"), {inter}});
    out.push_back({tensor_name(l, Component::kOutput, "weight"), {inter, h}});
    out.push_back({tensor_name(l, Component::kOutput, "bias"), {h}});
    out.push_back({norm_name(l, Component::kOutput, "weight"), {h}});
    out.push_back({norm_name(l, Component::kOutput, "bias"), {h}});
  }
  out.push_back({"pooler.weight", {h, h}});
  out.push_back({"pooler.bias", {h}});
  return out;
}

inline Checkpoint init_model(const EncoderConfig& cfg) {
  cfg.validate();
  SplitMix64 rng(cfg.seed);
  Checkpoint ckpt;
  const auto ends_with = [](const std::string& s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  for (auto& [name, shape] : model_shapes(cfg)) {
    Tensor t(name, shape);
    const bool is_norm = name.find("orm.") != std::string::npos;  // "Norm." and "norm."
    if (is_norm) {
      if (ends_with(name, ".weight")) std::fill(t.data.begin(), t.data.end(), 1.0f);
    } else if (!ends_with(name, ".bias")) {
      for (auto& v : t.data) v = static_cast<float>(rng.normal(0.0, 0.02));
    }
    ckpt.add(std::move(t));
  }
  ckpt.metadata["config"] = cfg.to_json().dump();
  ckpt.metadata["kind"] = "checkpoint";
  return ckpt;
}

// --- numerics ---------------------------------------------------------------

inline float gelu(float x) {
  constexpr double kSqrt2OverPi = 0.7978845608028654;
  const double xd = x;
  return static_cast<float>(0.5 * xd * (1.0 + std::tanh(kSqrt2OverPi * (xd + 0.044715 * xd * xd * xd))));
}

inline constexpr double kLayerNormEps = 1e-12;

// Normalises to zero mean and unit variance, then applies scale and shift.
inline void layer_norm(std::span<float> row, std::span<const float> scale, std::span<const float> shift) {
  double mean = 0.0;
  for (const float v : row) mean += v;
  mean /= static_cast<double>(row.size());
  double var = 0.0;
  for (const float v : row) var += (v - mean) * (v - mean);
  var /= static_cast<double>(row.size());
  const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
  for (std::size_t i = 0; i < row.size(); ++i) {
    row[i] = static_cast<float>((row[i] - mean) * inv) * scale[i] + shift[i];
  }
}

// In-place softmax over unmasked entries; masked entries get weight 0.
inline void masked_softmax(std::span<float> scores, std::span<const std::uint8_t> mask) {
  float max_score = -std::numeric_limits<float>::infinity();
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (mask[i]) max_score = std::max(max_score, scores[i]);
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (mask[i]) {
      scores[i] = std::exp(scores[i] - max_score);
      sum += scores[i];
    } else {
      scores[i] = 0.0f;
    }
  }
  if (sum == 0.0) return;
  for (std::size_t i = 0; i < scores.size(); ++i) scores[i] = static_cast<float>(scores[i] / sum);
}

namespace detail {

// out[t, :] = x[t, :] W + b for t in [0, rows)
inline std::vector<float> affine(const std::vector<float>& x, std::size_t rows, const Tensor& w,
                                 const Tensor& b) {
  const auto in = static_cast<std::size_t>(w.shape[0]);
  const auto out_dim = static_cast<std::size_t>(w.shape[1]);
  std::vector<float> out(rows * out_dim);
  for (std::size_t t = 0; t < rows; ++t) {
    float* y = out.data() + t * out_dim;
    std::copy(b.data.begin(), b.data.end(), y);
    const float* xr = x.data() + t * in;
    for (std::size_t i = 0; i < in; ++i) {
      const float xi = xr[i];
      const float* wr = w.data.data() + i * out_dim;
      for (std::size_t j = 0; j < out_dim; ++j) y[j] += xi * wr[j];
    }
  }
  return out;
}

inline std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stoi(item));
    } catch (...) {
      fail("malformed integer list '" + text + "'");
    }
  }
  return out;
}

inline std::string join_ints(const std::vector<int>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(values[i]);
  }
  return out;
}

}  // namespace detail

// --- model view ---------------------------------------------------------------

inline std::string qk_heads_key(int layer) { return "layer." + std::to_string(layer) + ".qk_heads"; }
inline std::string v_heads_key(int layer) { return "layer." + std::to_string(layer) + ".v_heads"; }

struct LayerWeights {
  const Tensor* weight[6] = {};
  const Tensor* bias[6] = {};
  const Tensor* att_norm_w = nullptr;
  const Tensor* att_norm_b = nullptr;
  const Tensor* out_norm_w = nullptr;
  const Tensor* out_norm_b = nullptr;
  std::vector<int> qk_heads;  // per-head width of Q and K
  std::vector<int> v_heads;   // per-head width of V

  const Tensor& w(Component c) const { return *weight[static_cast<int>(c)]; }
  const Tensor& b(Component c) const { return *bias[static_cast<int>(c)]; }
  int width(Component c) const { return static_cast<int>(w(c).shape[1]); }
};

// Read-only view over a checkpoint; validates every producer/consumer shape.
class EncoderModel {
 public:
  explicit EncoderModel(const Checkpoint& ckpt) : ckpt_(&ckpt) {
    const auto it = ckpt.metadata.find("config");
    require(it != ckpt.metadata.end(), "checkpoint has no 'config' metadata");
    try {
      config_ = EncoderConfig::from_json(nlohmann::json::parse(it->second));
    } catch (const nlohmann::json::parse_error& e) {
      fail(std::string("checkpoint config: ") + e.what());
    }
    word_ = &ckpt.get("embed.word");
    pos_ = &ckpt.get("embed.pos");
    embed_norm_w_ = &ckpt.get("embed.norm.weight");
    embed_norm_b_ = &ckpt.get("embed.norm.bias");
    const std::int64_t h = config_.hidden;
    check_shape(*word_, {config_.vocab, h});
    check_shape(*pos_, {config_.max_len, h});
    check_shape(*embed_norm_w_, {h});
    check_shape(*embed_norm_b_, {h});

    for (int l = 1; l <= config_.layers; ++l) {
      LayerWeights lw;
      for (const auto c : kAllComponents) {
        lw.weight[static_cast<int>(c)] = &ckpt.get(tensor_name(l, c, "weight"));
        lw.bias[static_cast<int>(c)] = &ckpt.get(tensor_name(l, c, "bias"));
      }
      lw.att_norm_w = &ckpt.get(norm_name(l, Component::kAttOutput, "weight"));
      lw.att_norm_b = &ckpt.get(norm_name(l, Component::kAttOutput, "bias"));
      lw.out_norm_w = &ckpt.get(norm_name(l, Component::kOutput, "weight"));
      lw.out_norm_b = &ckpt.get(norm_name(l, Component::kOutput, "bias"));

      for (const auto c : kAllComponents) {
        require(lw.w(c).shape.size() == 2, tensor_name(l, c, "weight") + ": expected a matrix");
        check_shape(lw.b(c), {lw.w(c).shape[1]});
      }
      const std::int64_t qk = lw.width(Component::kQ);
      const std::int64_t v = lw.width(Component::kV);
      const std::int64_t inter = lw.width(Component::kIntermediate);
      check_shape(lw.w(Component::kQ), {h, qk});
      check_shape(lw.w(Component::kK), {h, qk});
      check_shape(lw.w(Component::kV), {h, v});
      check_shape(lw.w(Component::kAttOutput), {v, h});
      check_shape(lw.w(Component::kIntermediate), {h, inter});
      check_shape(lw.w(Component::kOutput), {inter, h});
      for (const auto* t : {lw.att_norm_w, lw.att_norm_b, lw.out_norm_w, lw.out_norm_b}) check_shape(*t, {h});

      lw.qk_heads = head_sizes(qk_heads_key(l), qk);
      lw.v_heads = head_sizes(v_heads_key(l), v);
      layers_.push_back(std::move(lw));
    }
  }

  const EncoderConfig& config() const noexcept { return config_; }
  const std::vector<LayerWeights>& layers() const noexcept { return layers_; }
  const LayerWeights& layer(int l) const { return layers_.at(static_cast<std::size_t>(l - 1)); }
  const Tensor& word_embeddings() const noexcept { return *word_; }
  const Tensor& position_embeddings() const noexcept { return *pos_; }
  const Tensor& embed_norm_weight() const noexcept { return *embed_norm_w_; }
  const Tensor& embed_norm_bias() const noexcept { return *embed_norm_b_; }

 private:
  static void check_shape(const Tensor& t, const Shape& expected) {
    if (t.shape == expected) return;
    auto fmt = [](const Shape& s) {
      std::string out = "[";
      for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
      return out + "]";
    };
    fail("tensor '" + t.name + "' has shape " + fmt(t.shape) + ", expected " + fmt(expected));
  }

  std::vector<int> head_sizes(const std::string& key, std::int64_t width) const {
    const auto it = ckpt_->metadata.find(key);
    if (it == ckpt_->metadata.end()) {
      require(width % config_.heads == 0,
              key + ": width " + std::to_string(width) + " not divisible by head count");
      return std::vector<int>(static_cast<std::size_t>(config_.heads),
                              static_cast<int>(width / config_.heads));
    }
    auto sizes = detail::parse_int_list(it->second);
    require(static_cast<int>(sizes.size()) == config_.heads, key + ": wrong number of heads");
    require(std::accumulate(sizes.begin(), sizes.end(), std::int64_t{0}) == width,
            key + ": head widths do not sum to the tensor width");
    for (const int s : sizes) require(s >= 0, key + ": negative head width");
    return sizes;
  }

  const Checkpoint* ckpt_;
  EncoderConfig config_;
  const Tensor* word_ = nullptr;
  const Tensor* pos_ = nullptr;
  const Tensor* embed_norm_w_ = nullptr;
  const Tensor* embed_norm_b_ = nullptr;
  std::vector<LayerWeights> layers_;
};

// --- batches and corpora --------------------------------------------------------

struct TokenBatch {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::int64_t> ids;    // rows x cols
  std::vector<std::uint8_t> mask;  // rows x cols, 1 = real token
};

using Corpus = std::vector<std::vector<std::int64_t>>;

// One text per non-empty line: whitespace-separated token ids.
inline Corpus read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open corpus '" + path.string() + "'");
  Corpus corpus;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::vector<std::int64_t> ids;
    std::string token;
    while (ss >> token) {
      try {
        std::size_t used = 0;
        ids.push_back(std::stoll(token, &used));
        require(used == token.size(), "");
      } catch (...) {
        fail("corpus line " + std::to_string(line_no) + ": '" + token + "' is not a token id");
      }
    }
    if (!ids.empty()) corpus.push_back(std::move(ids));
  }
  return corpus;
}

// Seeded subset of `count` texts, original order preserved.
inline Corpus sample_corpus(const Corpus& corpus, std::size_t count, std::uint64_t seed) {
  if (count >= corpus.size()) return corpus;
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  SplitMix64 rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.next() % (order.size() - i));
    std::swap(order[i], order[j]);
  }
  order.resize(count);
  std::sort(order.begin(), order.end());
  Corpus out;
  for (const auto i : order) out.push_back(corpus[i]);
  return out;
}

// Truncates or pads every text to the model's maximum length.
inline TokenBatch make_batch(const Corpus& corpus, const EncoderConfig& cfg) {
  TokenBatch batch;
  batch.rows = corpus.size();
  batch.cols = static_cast<std::size_t>(cfg.max_len);
  batch.ids.assign(batch.rows * batch.cols, cfg.pad_id);
  batch.mask.assign(batch.rows * batch.cols, 0);
  for (std::size_t r = 0; r < corpus.size(); ++r) {
    const std::size_t len = std::min(corpus[r].size(), batch.cols);
    for (std::size_t t = 0; t < len; ++t) {
      batch.ids[r * batch.cols + t] = corpus[r][t];
      batch.mask[r * batch.cols + t] = 1;
    }
  }
  return batch;
}

// --- forward pass ----------------------------------------------------------------

enum class CaptureMode {
  kAffine,  // Wx+b of each component
  kPost,    // value after the component's nonlinearity / attention / LayerNorm
};

inline CaptureMode parse_capture_mode(std::string_view s) {
  if (s == "affine") return CaptureMode::kAffine;
  if (s == "post") return CaptureMode::kPost;
  fail("unknown capture mode '" + std::string(s) + "' (expected affine|post)");
}

inline std::string_view capture_mode_name(CaptureMode m) {
  return m == CaptureMode::kAffine ? "affine" : "post";
}

struct ForwardResult {
  Tensor cls_hidden;               // [N, H] final [CLS] hidden states
  std::vector<Tensor> layer_cls;   // per layer, [N, H]
  std::vector<Tensor> activations; // act.* and consumed.* when captured
};

inline void validate_batch(const TokenBatch& batch, const EncoderModel& model) {
  const auto& cfg = model.config();
  require(batch.ids.size() == batch.rows * batch.cols, "batch: ids size does not match rows x cols");
  require(batch.mask.size() == batch.ids.size(), "batch: mask shape does not match ids");
  require(batch.cols >= 1, "batch: sequence length must be >= 1");
  require(batch.cols <= static_cast<std::size_t>(cfg.max_len), "batch: sequence longer than M");
  for (std::size_t r = 0; r < batch.rows; ++r) {
    for (std::size_t t = 0; t < batch.cols; ++t) {
      const auto id = batch.ids[r * batch.cols + t];
      const auto m = batch.mask[r * batch.cols + t];
      require(m <= 1, "batch: mask entries must be 0 or 1");
      require(id >= 0 && id < cfg.vocab, "batch: token id " + std::to_string(id) + " outside vocabulary");
    }
    require(batch.mask[r * batch.cols] == 1 && batch.ids[r * batch.cols] == cfg.cls_id,
            "batch: row " + std::to_string(r) + " does not start with the [CLS] id");
  }
}

inline ForwardResult forward(const EncoderModel& model, const TokenBatch& batch, bool capture,
                             CaptureMode mode = CaptureMode::kAffine) {
  validate_batch(batch, model);
  const auto& cfg = model.config();
  const auto n = static_cast<std::int64_t>(batch.rows);
  const std::size_t h = static_cast<std::size_t>(cfg.hidden);

  ForwardResult result;
  result.cls_hidden = Tensor("cls_hidden", {n, cfg.hidden});
  for (int l = 1; l <= cfg.layers; ++l) {
    result.layer_cls.emplace_back("layer." + std::to_string(l) + ".cls", Shape{n, cfg.hidden});
  }
  // Capture buffers: six act.* per layer, then the two consumed.* per layer.
  std::vector<Tensor> acts;
  if (capture) {
    for (int l = 1; l <= cfg.layers; ++l) {
      const auto& lw = model.layer(l);
      for (const auto c : kAllComponents) {
        acts.emplace_back(activation_name(l, c), Shape{n, lw.width(c)});
      }
    }
    for (int l = 1; l <= cfg.layers; ++l) {
      const auto& lw = model.layer(l);
      acts.emplace_back(consumed_name(l, Component::kV), Shape{n, lw.width(Component::kV)});
      acts.emplace_back(consumed_name(l, Component::kIntermediate),
                        Shape{n, lw.width(Component::kIntermediate)});
    }
  }
  const std::size_t consumed_base = static_cast<std::size_t>(cfg.layers) * 6;

  parallel_for(batch.rows, [&](std::size_t r) {
    // Masked positions never influence unmasked ones, so only real tokens
    // are carried through the layers.
    std::vector<std::size_t> positions;
    for (std::size_t t = 0; t < batch.cols; ++t) {
      if (batch.mask[r * batch.cols + t]) positions.push_back(t);
    }
    const std::size_t len = positions.size();

    std::vector<float> x(len * h);
    for (std::size_t i = 0; i < len; ++i) {
      const auto id = batch.ids[r * batch.cols + positions[i]];
      for (std::size_t k = 0; k < h; ++k) {
        x[i * h + k] = model.word_embeddings().at(id, static_cast<std::int64_t>(k)) +
                       model.position_embeddings().at(static_cast<std::int64_t>(positions[i]),
                                                      static_cast<std::int64_t>(k));
      }
      layer_norm({x.data() + i * h, h}, model.embed_norm_weight().data, model.embed_norm_bias().data);
    }

    auto store = [&](std::size_t index, const float* values) {
      Tensor& t = acts[index];
      std::copy(values, values + t.cols(), t.data.begin() + static_cast<std::ptrdiff_t>(r) * t.cols());
    };

    std::vector<std::uint8_t> all_ones(len, 1);
    std::vector<float> scores(len);
    for (int l = 1; l <= cfg.layers; ++l) {
      const auto& lw = model.layer(l);
      const std::size_t act_base = static_cast<std::size_t>(l - 1) * 6;
      const auto q = detail::affine(x, len, lw.w(Component::kQ), lw.b(Component::kQ));
      const auto k = detail::affine(x, len, lw.w(Component::kK), lw.b(Component::kK));
      const auto v = detail::affine(x, len, lw.w(Component::kV), lw.b(Component::kV));
      const std::size_t qk_w = static_cast<std::size_t>(lw.width(Component::kQ));
      const std::size_t v_w = static_cast<std::size_t>(lw.width(Component::kV));

      std::vector<float> context(len * v_w, 0.0f);
      std::size_t q_off = 0;
      std::size_t v_off = 0;
      for (std::size_t head = 0; head < lw.qk_heads.size(); ++head) {
        const auto dq = static_cast<std::size_t>(lw.qk_heads[head]);
        const auto dv = static_cast<std::size_t>(lw.v_heads[head]);
        const float scale = dq == 0 ? 0.0f : static_cast<float>(1.0 / std::sqrt(static_cast<double>(dq)));
        for (std::size_t t = 0; t < len; ++t) {
          for (std::size_t s = 0; s < len; ++s) {
            float dot = 0.0f;
            for (std::size_t e = 0; e < dq; ++e) dot += q[t * qk_w + q_off + e] * k[s * qk_w + q_off + e];
            scores[s] = dot * scale;
          }
          masked_softmax(scores, all_ones);
          float* out = context.data() + t * v_w + v_off;
          for (std::size_t s = 0; s < len; ++s) {
            for (std::size_t e = 0; e < dv; ++e) out[e] += scores[s] * v[s * v_w + v_off + e];
          }
        }
        q_off += dq;
        v_off += dv;
      }

      auto att = detail::affine(context, len, lw.w(Component::kAttOutput), lw.b(Component::kAttOutput));
      if (capture) {
        store(act_base + 0, q.data());
        store(act_base + 1, k.data());
        store(act_base + 2, mode == CaptureMode::kAffine ? v.data() : context.data());
        store(consumed_base + static_cast<std::size_t>(l - 1) * 2, context.data());
        if (mode == CaptureMode::kAffine) store(act_base + 3, att.data());
      }
      for (std::size_t i = 0; i < len * h; ++i) att[i] += x[i];
      for (std::size_t i = 0; i < len; ++i) {
        layer_norm({att.data() + i * h, h}, lw.att_norm_w->data, lw.att_norm_b->data);
      }
      if (capture && mode == CaptureMode::kPost) store(act_base + 3, att.data());

      auto inter = detail::affine(att, len, lw.w(Component::kIntermediate), lw.b(Component::kIntermediate));
      if (capture && mode == CaptureMode::kAffine) store(act_base + 4, inter.data());
      for (auto& val : inter) val = gelu(val);
      if (capture) {
        if (mode == CaptureMode::kPost) store(act_base + 4, inter.data());
        store(consumed_base + static_cast<std::size_t>(l - 1) * 2 + 1, inter.data());
      }

      auto out = detail::affine(inter, len, lw.w(Component::kOutput), lw.b(Component::kOutput));
      if (capture && mode == CaptureMode::kAffine) store(act_base + 5, out.data());
      for (std::size_t i = 0; i < len * h; ++i) out[i] += att[i];
      for (std::size_t i = 0; i < len; ++i) {
        layer_norm({out.data() + i * h, h}, lw.out_norm_w->data, lw.out_norm_b->data);
      }
      if (capture && mode == CaptureMode::kPost) store(act_base + 5, out.data());

      x = std::move(out);
      auto& layer_out = result.layer_cls[static_cast<std::size_t>(l - 1)];
      std::copy(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(h),
                layer_out.data.begin() + static_cast<std::ptrdiff_t>(r * h));
    }
    std::copy(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(h),
              result.cls_hidden.data.begin() + static_cast<std::ptrdiff_t>(r * h));
  });

  result.activations = std::move(acts);
  return result;
}

// Activation dump: act.layer.{l}.{component} [N, width] in the chosen
// capture mode, plus consumed.layer.{l}.{V|Intermediate}.
inline Checkpoint dump_activations(const EncoderModel& model, const TokenBatch& batch,
                                   CaptureMode mode = CaptureMode::kAffine) {
  auto result = forward(model, batch, /*capture=*/true, mode);
  Checkpoint dump;
  for (auto& t : result.activations) dump.add(std::move(t));
  dump.metadata["kind"] = "activations";
  dump.metadata["capture"] = std::string(capture_mode_name(mode));
  dump.metadata["layers"] = std::to_string(model.config().layers);
  dump.metadata["rows"] = std::to_string(batch.rows);
  return dump;
}

}  // namespace topoprune
