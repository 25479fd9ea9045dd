#include "sals/latent_cache.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "sals/error.hpp"

namespace sals {

QuantizedVector quantize_value(std::span<const float> v, unsigned bits, std::size_t group) {
  if (bits != 2 && bits != 4) {
    throw InvalidArgument("quantize_value: bits must be 2 or 4, got " + std::to_string(bits));
  }
  if (group == 0 || v.size() % group != 0) {
    throw InvalidArgument("quantize_value: group " + std::to_string(group) +
                          " does not divide length " + std::to_string(v.size()));
  }
  for (float x : v) {
    if (!std::isfinite(x)) throw InvalidArgument("quantize_value: non-finite input");
  }

  const double levels = static_cast<double>((1u << bits) - 1u);
  QuantizedVector q;
  q.bits = bits;
  q.group = group;
  q.codes.resize(v.size());
  const std::size_t groups = v.size() / group;
  q.scales.resize(groups);
  q.zeros.resize(groups);

  for (std::size_t g = 0; g < groups; ++g) {
    const auto chunk = v.subspan(g * group, group);
    const auto [lo_it, hi_it] = std::minmax_element(chunk.begin(), chunk.end());
    const float lo = *lo_it;
    const float hi = *hi_it;
    const float scale = static_cast<float>((static_cast<double>(hi) - lo) / levels);
    q.zeros[g] = lo;
    q.scales[g] = scale;
    for (std::size_t i = 0; i < group; ++i) {
      double code = 0.0;
      if (scale > 0.0f) {
        code = std::nearbyint((static_cast<double>(chunk[i]) - lo) / scale);
        code = std::clamp(code, 0.0, levels);
      }
      q.codes[g * group + i] = static_cast<std::uint8_t>(code);
    }
  }
  return q;
}

std::vector<double> dequantize_value(const QuantizedVector& q) {
  std::vector<double> out(q.codes.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::size_t g = i / q.group;
    out[i] = static_cast<double>(q.codes[i]) * q.scales[g] + q.zeros[g];
  }
  return out;
}

std::vector<float> project_key(std::span<const float> k, const ProjectionMatrix& p) {
  if (k.size() != p.dim()) {
    throw InvalidArgument("project_key: key length " + std::to_string(k.size()) +
                          " != projection dim " + std::to_string(p.dim()));
  }
  const std::size_t r = p.rank();
  std::vector<double> acc(r, 0.0);
  for (std::size_t i = 0; i < k.size(); ++i) {
    const double ki = k[i];
    auto u = p.U.row(i);
    for (std::size_t j = 0; j < r; ++j) acc[j] += ki * u[j];
  }
  return {acc.begin(), acc.end()};
}

std::vector<float> reconstruct_key(std::span<const float> latent, const ProjectionMatrix& p) {
  if (latent.size() != p.rank()) throw InvalidArgument("reconstruct_key: rank mismatch");
  std::vector<float> out(p.dim());
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto u = p.U.row(i);
    double acc = 0.0;
    for (std::size_t j = 0; j < latent.size(); ++j) acc += static_cast<double>(latent[j]) * u[j];
    out[i] = static_cast<float>(acc);
  }
  return out;
}

LatentKvCache::LatentKvCache(const AttentionConfig& cfg)
    : key_dim_(cfg.key_dim()),
      rank_(cfg.latent_rank),
      value_bits_(cfg.value_bits),
      group_(cfg.quant_group),
      window_(cfg.recent_window) {
  cfg.validate();
}

DenseMatrix LatentKvCache::latent_keys() const {
  return DenseMatrix(size(), rank_, latent_);
}

void LatentKvCache::append(std::span<const float> k, std::span<const float> v,
                           std::size_t position, const ProjectionMatrix& p) {
  if (k.size() != key_dim_ || v.size() != key_dim_) {
    throw InvalidArgument("append_token: expected key/value length " + std::to_string(key_dim_));
  }
  if (p.dim() != key_dim_ || p.rank() != rank_) {
    throw InvalidArgument("append_token: projection is " + std::to_string(p.dim()) + "x" +
                          std::to_string(p.rank()) + ", cache expects " +
                          std::to_string(key_dim_) + "x" + std::to_string(rank_));
  }
  if (!positions_.empty() && position <= positions_.back()) {
    throw InvalidArgument("append_token: position " + std::to_string(position) +
                          " is not after " + std::to_string(positions_.back()));
  }
  const auto latent = project_key(k, p);
  if (value_bits_ == 2 || value_bits_ == 4) {
    quant_values_.push_back(quantize_value(v, value_bits_, group_));
  } else {
    raw_values_.insert(raw_values_.end(), v.begin(), v.end());
  }
  latent_.insert(latent_.end(), latent.begin(), latent.end());
  positions_.push_back(position);

  if (window_ > 0) {
    recent_.push_back({std::vector<float>(k.begin(), k.end()),
                       std::vector<float>(v.begin(), v.end())});
    if (recent_.size() > window_) recent_.pop_front();
  }
}

DenseMatrix LatentKvCache::reconstruct_keys(std::span<const std::size_t> indices,
                                            const ProjectionMatrix& p, TrafficCounter* counter,
                                            TrafficMode mode) const {
  if (p.dim() != key_dim_ || p.rank() != rank_) {
    throw InvalidArgument("reconstruct_keys: projection shape does not match cache");
  }
  DenseMatrix out(indices.size(), key_dim_);
  const std::size_t first_recent = size() - recent_.size();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t j = indices[i];
    if (j >= size()) {
      throw OutOfRange("reconstruct_keys: index " + std::to_string(j) + " >= cache size " +
                       std::to_string(size()));
    }
    if (j >= first_recent) {
      const auto& key = recent_[j - first_recent].key;
      std::copy(key.begin(), key.end(), out.row(i).begin());
      if (counter) counter->add_reconstruct(mode == TrafficMode::kItemized ? key_dim_ : rank_);
    } else {
      const auto key = reconstruct_key(latent_row(j), p);
      std::copy(key.begin(), key.end(), out.row(i).begin());
      if (counter) counter->add_reconstruct(rank_);
    }
  }
  return out;
}

DenseMatrix LatentKvCache::gather_values(std::span<const std::size_t> indices,
                                         TrafficCounter* counter, TrafficMode mode) const {
  DenseMatrix out(indices.size(), key_dim_);
  const std::size_t first_recent = size() - recent_.size();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t j = indices[i];
    if (j >= size()) {
      throw OutOfRange("gather_values: index " + std::to_string(j) + " >= cache size " +
                       std::to_string(size()));
    }
    auto dst = out.row(i);
    if (j >= first_recent) {
      const auto& value = recent_[j - first_recent].value;
      std::copy(value.begin(), value.end(), dst.begin());
      if (counter && mode == TrafficMode::kItemized) counter->add_value(key_dim_);
    } else if (value_bits_ == 2 || value_bits_ == 4) {
      const auto deq = dequantize_value(quant_values_[j]);
      for (std::size_t c = 0; c < key_dim_; ++c) dst[c] = static_cast<float>(deq[c]);
      if (counter && mode == TrafficMode::kItemized) counter->add_value(key_dim_, value_bits_);
    } else {
      std::copy_n(raw_values_.begin() + static_cast<std::ptrdiff_t>(j * key_dim_), key_dim_,
                  dst.begin());
      if (counter && mode == TrafficMode::kItemized) counter->add_value(key_dim_, value_bits_);
    }
    if (counter && mode == TrafficMode::kIdealized) counter->add_value(rank_);
  }
  return out;
}

double LatentKvCache::stored_elements() const noexcept {
  const double s = static_cast<double>(size());
  const double nd = static_cast<double>(key_dim_);
  return s * static_cast<double>(rank_) + s * nd * value_bits_ / 32.0 +
         static_cast<double>(recent_.size()) * 2.0 * nd;
}

void LatentKvCache::dump(const std::filesystem::path& prefix) const {
  const auto with_suffix = [&](const char* suffix) {
    return std::filesystem::path(prefix.string() + suffix);
  };
  write_tensor(latent_keys(), with_suffix(".latent.sals"));
  std::vector<float> pos(positions_.begin(), positions_.end());
  const std::size_t count = pos.size();
  write_tensor(DenseMatrix(1, count, std::move(pos)), with_suffix(".positions.sals"));
  if (value_bits_ == 2 || value_bits_ == 4) {
    const std::size_t groups = key_dim_ / group_;
    DenseMatrix codes(size(), key_dim_);
    DenseMatrix scales(size(), groups);
    DenseMatrix zeros(size(), groups);
    for (std::size_t j = 0; j < size(); ++j) {
      const auto& q = quant_values_[j];
      for (std::size_t c = 0; c < key_dim_; ++c) codes(j, c) = q.codes[c];
      for (std::size_t g = 0; g < groups; ++g) {
        scales(j, g) = q.scales[g];
        zeros(j, g) = q.zeros[g];
      }
    }
    write_tensor(codes, with_suffix(".codes.sals"));
    write_tensor(scales, with_suffix(".scales.sals"));
    write_tensor(zeros, with_suffix(".zeros.sals"));
  } else {
    write_tensor(DenseMatrix(size(), key_dim_, raw_values_), with_suffix(".values.sals"));
  }
}

}  // namespace sals
