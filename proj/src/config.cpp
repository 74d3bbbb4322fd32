#include "fprl/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <vector>

#include "fprl/binary_io.hpp"
#include "fprl/error.hpp"

namespace fprl {

namespace {

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out))
    throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
  return out;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError("key '" + key + "': expected a non-negative integer, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("key '" + key + "': expected true or false, got '" + v + "'");
}

template <class E>
E parse_enum(const std::string& key, const std::string& v, std::initializer_list<std::pair<const char*, E>> options) {
  std::string names;
  for (const auto& [name, value] : options) {
    if (v == name) return value;
    names += names.empty() ? name : std::string(", ") + name;
  }
  throw ConfigError("key '" + key + "': expected one of " + names + ", got '" + v + "'");
}

template <class E>
std::string enum_name(E value, std::initializer_list<std::pair<const char*, E>> options) {
  for (const auto& [name, v] : options)
    if (v == value) return name;
  return "?";
}

const std::initializer_list<std::pair<const char*, tpam::SelectMode>> kModes = {
    {"topk", tpam::SelectMode::topk}, {"multinomial", tpam::SelectMode::multinomial}, {"random", tpam::SelectMode::random}};
const std::initializer_list<std::pair<const char*, ssm::BidirMerge>> kMerges = {{"sum", ssm::BidirMerge::sum},
                                                                                {"mean", ssm::BidirMerge::mean}};
const std::initializer_list<std::pair<const char*, objectives::Similarity>> kSims = {
    {"cosine", objectives::Similarity::cosine}, {"dot", objectives::Similarity::dot}};

struct Key {
  const char* name;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
  bool path = false;  // excluded from the digest
};

#define SIZE_KEY(field) \
  Key{#field, [](const RunConfig& c) { return std::to_string(c.field); }, \
      [](RunConfig& c, const std::string& v) { c.field = static_cast<std::size_t>(parse_uint(#field, v)); }}
#define DOUBLE_KEY(field) \
  Key{#field, [](const RunConfig& c) { return fmt_double(c.field); }, \
      [](RunConfig& c, const std::string& v) { c.field = parse_double(#field, v); }}
#define BOOL_KEY(field) \
  Key{#field, [](const RunConfig& c) { return std::string(c.field ? "true" : "false"); }, \
      [](RunConfig& c, const std::string& v) { c.field = parse_bool(#field, v); }}
#define ENUM_KEY(field, table) \
  Key{#field, [](const RunConfig& c) { return enum_name(c.field, table); }, \
      [](RunConfig& c, const std::string& v) { c.field = parse_enum(#field, v, table); }}
#define PATH_KEY(field) \
  Key{#field, [](const RunConfig& c) { return c.field; }, [](RunConfig& c, const std::string& v) { c.field = v; }, true}

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      SIZE_KEY(frame_side),
      SIZE_KEY(patch_size),
      SIZE_KEY(frames_per_view),
      SIZE_KEY(window_len),
      SIZE_KEY(embed_dim),
      SIZE_KEY(state_dim),
      SIZE_KEY(depth),
      ENUM_KEY(bidir_merge, kMerges),
      DOUBLE_KEY(mask_ratio),
      DOUBLE_KEY(alpha),
      ENUM_KEY(mask_select_mode, kModes),
      SIZE_KEY(mask_heads),
      SIZE_KEY(cvmfc_blocks),
      SIZE_KEY(cvmfc_heads),
      BOOL_KEY(cvmfc_tied),
      SIZE_KEY(decoder_depth),
      BOOL_KEY(agtp_attn_pool),
      BOOL_KEY(agtp_ema),
      DOUBLE_KEY(ema_momentum),
      DOUBLE_KEY(lambda_rec),
      DOUBLE_KEY(lambda_align),
      DOUBLE_KEY(lambda_cl),
      DOUBLE_KEY(lambda_pf),
      DOUBLE_KEY(tau),
      BOOL_KEY(include_positive_in_denominator),
      ENUM_KEY(similarity, kSims),
      DOUBLE_KEY(aux_mask_weight),
      DOUBLE_KEY(lr),
      Key{"warmup_steps",
          [](const RunConfig& c) { return c.warmup_steps ? std::to_string(*c.warmup_steps) : std::string("auto"); },
          [](RunConfig& c, const std::string& v) {
            if (v == "auto")
              c.warmup_steps.reset();
            else
              c.warmup_steps = static_cast<std::size_t>(parse_uint("warmup_steps", v));
          }},
      SIZE_KEY(total_steps),
      SIZE_KEY(batch_size),
      DOUBLE_KEY(weight_decay),
      Key{"betas", [](const RunConfig& c) { return fmt_double(c.beta1) + ", " + fmt_double(c.beta2); },
          [](RunConfig& c, const std::string& v) {
            auto comma = v.find(',');
            if (comma == std::string::npos) throw ConfigError("key 'betas': expected 'beta1, beta2'");
            c.beta1 = parse_double("betas", trim(v.substr(0, comma)));
            c.beta2 = parse_double("betas", trim(v.substr(comma + 1)));
          }},
      Key{"seed", [](const RunConfig& c) { return std::to_string(c.seed); },
          [](RunConfig& c, const std::string& v) { c.seed = parse_uint("seed", v); }},
      Key{"checkpoint_every", [](const RunConfig& c) { return std::to_string(c.checkpoint_every); },
          [](RunConfig& c, const std::string& v) {
            c.checkpoint_every = static_cast<std::size_t>(parse_uint("checkpoint_every", v));
          },
          true},
      PATH_KEY(data_dir),
      PATH_KEY(out_dir),
      PATH_KEY(teacher_ckpt),
  };
  return table;
}

#undef SIZE_KEY
#undef DOUBLE_KEY
#undef BOOL_KEY
#undef ENUM_KEY
#undef PATH_KEY

}  // namespace

ssm::EncoderConfig RunConfig::encoder() const {
  ssm::EncoderConfig e;
  e.depth = depth;
  e.embed_dim = embed_dim;
  e.state_dim = state_dim;
  e.merge = bidir_merge;
  return e;
}

context::CvmfcConfig RunConfig::cvmfc() const {
  return {cvmfc_blocks, cvmfc_heads, cvmfc_tied};
}

objectives::LossWeights RunConfig::loss_weights() const {
  objectives::LossWeights w;
  w.rec = lambda_rec;
  w.align = lambda_align;
  w.cl = lambda_cl;
  w.pf = lambda_pf;
  w.tau = tau;
  w.include_positive = include_positive_in_denominator;
  w.aux_mask = aux_mask_weight;
  w.similarity = similarity;
  return w;
}

void RunConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (patch_size == 0 || frame_side == 0 || frame_side % patch_size != 0)
    fail("frame_side " + std::to_string(frame_side) + " must be a positive multiple of patch_size " +
         std::to_string(patch_size));
  if (frames_per_view == 0) fail("frames_per_view must be positive");
  if (window_len < 3 * frames_per_view) fail("window_len must hold 3 * frames_per_view frames");
  if (embed_dim == 0 || state_dim == 0) fail("embed_dim and state_dim must be positive");
  if (depth < 2) fail("depth must be at least 2 so both layer kinds occur");
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) fail("mask_ratio must lie in (0, 1)");
  {
    std::size_t n = tokens_per_view();
    std::size_t m = tpam::masked_count(n, mask_ratio);
    if (m == 0 || m >= n) fail("mask_ratio " + fmt_double(mask_ratio) + " leaves no visible or no masked token");
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) fail("alpha must lie in [0, 1]");
  if (mask_heads == 0 || embed_dim % mask_heads != 0) fail("mask_heads must divide embed_dim");
  if (decoder_depth == 0) fail("decoder_depth must be positive");
  cvmfc().validate(embed_dim);
  if (!(ema_momentum >= 0.0 && ema_momentum < 1.0)) fail("ema_momentum must lie in [0, 1)");
  loss_weights().validate();
  if (!(lr > 0.0)) fail("lr must be positive");
  if (total_steps == 0) fail("total_steps must be positive");
  if (effective_warmup() >= total_steps) fail("warmup_steps must be smaller than total_steps");
  if (batch_size == 0) fail("batch_size must be positive");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) fail("betas must lie in [0, 1)");
}

RunConfig parse_config(const std::string& text) {
  RunConfig config;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    const Key* match = nullptr;
    for (const auto& k : keys())
      if (key == k.name) match = &k;
    if (!match) throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    match->set(config, value);
  }
  config.validate();
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

namespace {

std::string render(const RunConfig& config, bool with_paths) {
  std::string out;
  for (const auto& k : keys()) {
    if (k.path && !with_paths) continue;
    out += std::string(k.name) + " = " + k.get(config) + "\n";
  }
  return out;
}

}  // namespace

std::string to_text(const RunConfig& config) { return render(config, true); }

std::uint64_t config_digest(const RunConfig& config) { return io::fnv1a64(render(config, false)); }

}  // namespace fprl
