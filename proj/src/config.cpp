#include "sals/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "sals/error.hpp"

namespace sals {

namespace {

[[noreturn]] void bad_field(const std::string& field, const std::string& why) {
  throw InvalidArgument("config field '" + field + "': " + why);
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json parse_json(std::string_view text) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidArgument(std::string("config: malformed JSON: ") + e.what());
  }
}

template <typename T>
T get_field(const nlohmann::json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
      const auto& v = j.at(key);
      if (!v.is_number_integer() || v.get<long long>() < 0) {
        bad_field(key, "expected a non-negative integer");
      }
      return static_cast<T>(v.get<unsigned long long>());
    } else {
      return j.at(key).get<T>();
    }
  } catch (const nlohmann::json::exception& e) {
    bad_field(key, e.what());
  }
}

}  // namespace

void AttentionConfig::validate() const {
  if (num_heads == 0) bad_field("num_heads", "must be >= 1");
  if (head_dim == 0 || head_dim % 2 != 0) bad_field("head_dim", "must be even and >= 2");
  if (query_heads() % num_heads != 0) {
    bad_field("num_query_heads", "must be a multiple of num_heads");
  }
  if (!(rope_base > 0.0) || !std::isfinite(rope_base)) bad_field("rope_base", "must be > 0");
  const std::size_t nd = key_dim();
  if (latent_rank == 0 || latent_rank > nd) {
    bad_field("latent_rank", "must satisfy 1 <= r <= num_heads*head_dim (" +
                                 std::to_string(nd) + ")");
  }
  if (score_rank == 0 || score_rank > latent_rank) {
    bad_field("score_rank", "must satisfy 1 <= r* <= latent_rank");
  }
  if (value_bits != 2 && value_bits != 4 && value_bits != 16 && value_bits != 32) {
    bad_field("value_bits", "must be one of 2, 4, 16, 32");
  }
  if (quant_group == 0 || nd % quant_group != 0) {
    bad_field("quant_group", "must divide num_heads*head_dim (" + std::to_string(nd) + ")");
  }
  if (num_layers == 0) bad_field("num_layers", "must be >= 1");
}

AttentionConfig AttentionConfig::with_defaults(std::size_t num_heads, std::size_t head_dim) {
  AttentionConfig cfg;
  cfg.num_heads = num_heads;
  cfg.head_dim = head_dim;
  const std::size_t nd = num_heads * head_dim;
  cfg.latent_rank = std::max<std::size_t>(1, nd / 4);
  cfg.score_rank = std::max<std::size_t>(1, cfg.latent_rank / 2);
  cfg.quant_group = nd % 32 == 0 ? 32 : nd;
  return cfg;
}

void SelectionPolicy::validate(const AttentionConfig& cfg) const {
  if (score_rank == 0 || score_rank > cfg.latent_rank) {
    bad_field("score_rank", "must satisfy 1 <= r* <= latent_rank");
  }
}

SelectionPolicy SelectionPolicy::with_defaults(const AttentionConfig& cfg) {
  SelectionPolicy p;
  p.score_rank = cfg.score_rank;
  p.recent = cfg.recent_window;
  p.dense_layers = {0, 1, cfg.num_layers - 1};
  return p;
}

RunConfig parse_run_config(std::string_view json_text) {
  const auto j = parse_json(json_text);
  if (!j.is_object()) throw InvalidArgument("config: top level must be a JSON object");

  RunConfig out;
  auto& a = out.attention;
  a.num_heads = get_field<std::size_t>(j, "num_heads", a.num_heads);
  a.head_dim = get_field<std::size_t>(j, "head_dim", a.head_dim);
  if (a.num_heads == 0) bad_field("num_heads", "must be >= 1");
  a = AttentionConfig::with_defaults(a.num_heads, a.head_dim);
  a.num_query_heads = get_field<std::size_t>(j, "num_query_heads", a.num_query_heads);
  a.rope_base = get_field<double>(j, "rope_base", a.rope_base);
  const auto pairing = get_field<std::string>(j, "rope_pairing", "adjacent");
  if (pairing == "adjacent") {
    a.rope_pairing = RopePairing::kAdjacent;
  } else if (pairing == "half_split") {
    a.rope_pairing = RopePairing::kHalfSplit;
  } else {
    bad_field("rope_pairing", "expected 'adjacent' or 'half_split'");
  }
  a.latent_rank = get_field<std::size_t>(j, "latent_rank", a.latent_rank);
  a.score_rank =
      get_field<std::size_t>(j, "score_rank", std::max<std::size_t>(1, a.latent_rank / 2));
  a.value_bits = get_field<unsigned>(j, "value_bits", a.value_bits);
  a.quant_group = get_field<std::size_t>(j, "quant_group", a.quant_group);
  a.num_layers = get_field<std::size_t>(j, "num_layers", a.num_layers);
  const auto mode = get_field<std::string>(j, "traffic_mode", "itemized");
  if (mode == "itemized") {
    a.traffic_mode = TrafficMode::kItemized;
  } else if (mode == "idealized") {
    a.traffic_mode = TrafficMode::kIdealized;
  } else {
    bad_field("traffic_mode", "expected 'itemized' or 'idealized'");
  }

  auto& p = out.policy;
  p.sink = get_field<std::size_t>(j, "sink", p.sink);
  p.critical_budget = get_field<std::size_t>(j, "critical_budget", p.critical_budget);
  p.recent = get_field<std::size_t>(j, "recent", p.recent);
  a.recent_window = get_field<std::size_t>(j, "recent_window", p.recent);
  p.score_rank = a.score_rank;
  if (j.contains("dense_layers")) {
    const auto& dl = j.at("dense_layers");
    if (!dl.is_array()) bad_field("dense_layers", "expected an array of layer indices");
    p.dense_layers.clear();
    for (const auto& v : dl) {
      if (!v.is_number_integer()) bad_field("dense_layers", "expected integers");
      // Negative entries count from the last layer, so -1 is the final one.
      const long long idx = v.get<long long>();
      const long long resolved = idx < 0 ? static_cast<long long>(a.num_layers) + idx : idx;
      if (resolved < 0) bad_field("dense_layers", "index out of range");
      p.dense_layers.insert(static_cast<std::size_t>(resolved));
    }
  } else {
    p.dense_layers = {0, 1, a.num_layers - 1};
  }

  out.layer = get_field<std::size_t>(j, "layer", out.layer);
  out.prefill = get_field<std::size_t>(j, "prefill", out.prefill);
  out.center_covariance = get_field<bool>(j, "center_covariance", out.center_covariance);

  a.validate();
  p.validate(a);
  return out;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return parse_run_config(read_text(path));
}

std::string run_config_to_json(const RunConfig& cfg) {
  const auto& a = cfg.attention;
  const auto& p = cfg.policy;
  nlohmann::json j;
  j["num_heads"] = a.num_heads;
  j["head_dim"] = a.head_dim;
  j["num_query_heads"] = a.query_heads();
  j["rope_base"] = a.rope_base;
  j["rope_pairing"] = a.rope_pairing == RopePairing::kAdjacent ? "adjacent" : "half_split";
  j["latent_rank"] = a.latent_rank;
  j["score_rank"] = p.score_rank;
  j["value_bits"] = a.value_bits;
  j["quant_group"] = a.quant_group;
  j["recent_window"] = a.recent_window;
  j["num_layers"] = a.num_layers;
  j["traffic_mode"] =
      a.traffic_mode == TrafficMode::kItemized ? "itemized" : "idealized";
  j["sink"] = p.sink;
  j["critical_budget"] = p.critical_budget;
  j["recent"] = p.recent;
  j["dense_layers"] = std::vector<std::size_t>(p.dense_layers.begin(), p.dense_layers.end());
  j["layer"] = cfg.layer;
  j["prefill"] = cfg.prefill;
  j["center_covariance"] = cfg.center_covariance;
  return j.dump(2);
}

void SyntheticSpec::validate(std::size_t key_dim) const {
  if (spectrum.size() != key_dim) {
    throw InvalidArgument("synthetic spec: spectrum length " + std::to_string(spectrum.size()) +
                          " != num_heads*head_dim " + std::to_string(key_dim));
  }
  for (double v : spectrum) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw InvalidArgument("synthetic spec: spectrum values must be finite and >= 0");
    }
  }
  if (!std::is_sorted(spectrum.rbegin(), spectrum.rend())) {
    throw InvalidArgument("synthetic spec: spectrum must be in descending order");
  }
  if (planted && planted->position >= seq_len) {
    throw InvalidArgument("synthetic spec: planted_token.position must be < seq_len");
  }
}

std::vector<double> SyntheticSpec::geometric_spectrum(std::size_t dim, double ratio,
                                                      double scale) {
  std::vector<double> out(dim);
  double v = scale;
  for (auto& e : out) {
    e = v;
    v *= ratio;
  }
  return out;
}

SyntheticSpec parse_synthetic_spec(std::string_view json_text) {
  const auto j = parse_json(json_text);
  if (!j.is_object()) throw InvalidArgument("synthetic spec: top level must be an object");
  SyntheticSpec spec;
  spec.seq_len = get_field<std::size_t>(j, "seq_len", 0);
  spec.seed = get_field<std::uint64_t>(j, "seed", 0);
  if (j.contains("spectrum")) {
    spec.spectrum = get_field<std::vector<double>>(j, "spectrum", {});
  } else if (j.contains("geometric_decay")) {
    const auto dim = get_field<std::size_t>(j, "dim", 0);
    if (dim == 0) bad_field("dim", "required with geometric_decay");
    spec.spectrum = SyntheticSpec::geometric_spectrum(
        dim, get_field<double>(j, "geometric_decay", 0.5), get_field<double>(j, "scale", 1.0));
  } else {
    bad_field("spectrum", "either 'spectrum' or 'geometric_decay' is required");
  }
  if (j.contains("planted_token")) {
    const auto& pt = j.at("planted_token");
    PlantedToken planted;
    planted.position = get_field<std::size_t>(pt, "position", 0);
    planted.gain = get_field<double>(pt, "gain", 1.0);
    spec.planted = planted;
  }
  if (spec.seq_len == 0) bad_field("seq_len", "must be >= 1");
  spec.validate(spec.spectrum.size());
  return spec;
}

SyntheticSpec load_synthetic_spec(const std::filesystem::path& path) {
  return parse_synthetic_spec(read_text(path));
}

}  // namespace sals
