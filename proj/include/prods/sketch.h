#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace prods {

/// Implicit Rademacher projection R^P -> R^d. The sign of entry (i, j) is a
/// pure function of (seed, i, j), so the P x d matrix is never stored.
struct ProjectionSpec {
  std::uint64_t seed = 0;
  std::size_t input_dim = 0;
  std::size_t output_dim = 8192;
  double scale = 0.0;  // 0 means 1/sqrt(output_dim)

  double effective_scale() const;
  nlohmann::json to_json() const;
};

/// Sign of projection entry (i, j): +1 or -1.
int rademacher_sign(std::uint64_t seed, std::uint64_t i, std::uint64_t j);

/// out[j] = scale * sum_i sign(seed, i, j) * grad[i]. Zero inputs are skipped.
std::vector<double> project(const ProjectionSpec& spec, std::span<const double> grad);

enum class LossKind { kSft, kDpoApp, kDpoAwy, kDpoUnified };
std::string to_string(LossKind k);
LossKind parse_loss_kind(const std::string& s);

enum class StoreDtype : std::uint8_t { kF32 = 0, kF64 = 1 };

struct StoreManifest {
  std::uint64_t seed = 0;
  LossKind loss_kind = LossKind::kSft;
  std::string model_fingerprint;
  std::vector<std::string> ids;
  std::size_t input_dim = 0;
  double scale = 1.0;

  nlohmann::json to_json() const;
  static StoreManifest from_json(const nlohmann::json& j);
  bool operator==(const StoreManifest&) const = default;
};

/// Row-major matrix of projected gradients, one row per sample.
struct GradientMatrix {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<double> data;
  StoreDtype dtype = StoreDtype::kF32;
  StoreManifest manifest;

  std::span<const double> row(std::size_t r) const { return {data.data() + r * dim, dim}; }
  std::span<double> row(std::size_t r) { return {data.data() + r * dim, dim}; }
};

using GradFn = std::function<std::vector<double>(std::size_t)>;

/// Row k = project(spec, grad_fn(k)). With dtype f32 every entry is rounded
/// to float so the in-memory matrix equals what the file stores.
GradientMatrix build_gradient_store(const ProjectionSpec& spec,
                                    const std::vector<std::string>& ids,
                                    const GradFn& grad_fn, LossKind kind,
                                    const std::string& model_fingerprint,
                                    std::size_t threads = 1,
                                    StoreDtype dtype = StoreDtype::kF32);

// File: "PGRD", u32 version, u64 rows, u64 dim, u8 dtype, row-major payload,
// u64 manifest length, manifest JSON.
inline constexpr std::uint32_t kStoreVersion = 1;

void write_store(const std::filesystem::path& path, const GradientMatrix& m);
GradientMatrix read_store(const std::filesystem::path& path);

}  // namespace prods
