#include "prods/sketch.h"

#include <spdlog/spdlog.h>

#include <cmath>

#include "binary_io.h"
#include "prods/common.h"

namespace prods {

using nlohmann::json;

namespace {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// 64 sign bits for columns [64 * block, 64 * block + 64) of input row i.
constexpr std::uint64_t sign_bits(std::uint64_t seed, std::uint64_t i, std::uint64_t block) {
  return splitmix64(splitmix64(seed ^ splitmix64(i)) + block);
}

}  // namespace

double ProjectionSpec::effective_scale() const {
  return scale > 0.0 ? scale : 1.0 / std::sqrt(static_cast<double>(output_dim));
}

json ProjectionSpec::to_json() const {
  return {{"seed", seed},
          {"input_dim", input_dim},
          {"output_dim", output_dim},
          {"scale", effective_scale()}};
}

int rademacher_sign(std::uint64_t seed, std::uint64_t i, std::uint64_t j) {
  return (sign_bits(seed, i, j / 64) >> (j % 64)) & 1 ? -1 : 1;
}

std::vector<double> project(const ProjectionSpec& spec, std::span<const double> grad) {
  require(spec.output_dim >= 1, "projection output_dim must be at least 1");
  if (grad.size() != spec.input_dim)
    fail(ErrorKind::kInvalidArgument, "project: gradient length " + std::to_string(grad.size()) +
                                          " != input_dim " + std::to_string(spec.input_dim));
  const std::size_t d = spec.output_dim;
  const std::size_t blocks = (d + 63) / 64;
  std::vector<double> out(d, 0.0);
  for (std::size_t i = 0; i < grad.size(); ++i) {
    const double g = grad[i];
    if (g == 0.0) continue;
    for (std::size_t b = 0; b < blocks; ++b) {
      const std::uint64_t bits = sign_bits(spec.seed, i, b);
      const std::size_t base = b * 64;
      const std::size_t n = std::min<std::size_t>(64, d - base);
      for (std::size_t k = 0; k < n; ++k)
        out[base + k] += ((bits >> k) & 1) ? -g : g;
    }
  }
  const double s = spec.effective_scale();
  for (double& x : out) x *= s;
  return out;
}

std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::kSft: return "sft";
    case LossKind::kDpoApp: return "dpo_app";
    case LossKind::kDpoAwy: return "dpo_awy";
    case LossKind::kDpoUnified: return "dpo_unified";
  }
  return "sft";
}

LossKind parse_loss_kind(const std::string& s) {
  if (s == "sft") return LossKind::kSft;
  if (s == "dpo_app") return LossKind::kDpoApp;
  if (s == "dpo_awy") return LossKind::kDpoAwy;
  if (s == "dpo_unified") return LossKind::kDpoUnified;
  fail(ErrorKind::kFormat, "unknown loss kind '" + s + "'");
}

json StoreManifest::to_json() const {
  return {{"seed", seed},           {"loss_kind", to_string(loss_kind)},
          {"model_fingerprint", model_fingerprint}, {"ids", ids},
          {"input_dim", input_dim}, {"scale", scale}};
}

StoreManifest StoreManifest::from_json(const json& j) {
  StoreManifest m;
  m.seed = j.at("seed").get<std::uint64_t>();
  m.loss_kind = parse_loss_kind(j.at("loss_kind").get<std::string>());
  m.model_fingerprint = j.at("model_fingerprint").get<std::string>();
  m.ids = j.at("ids").get<std::vector<std::string>>();
  m.input_dim = j.at("input_dim").get<std::size_t>();
  m.scale = j.at("scale").get<double>();
  return m;
}

GradientMatrix build_gradient_store(const ProjectionSpec& spec,
                                    const std::vector<std::string>& ids,
                                    const GradFn& grad_fn, LossKind kind,
                                    const std::string& model_fingerprint,
                                    std::size_t threads, StoreDtype dtype) {
  if (spec.input_dim < spec.output_dim)
    spdlog::warn("projection maps {} parameters up to {} dimensions", spec.input_dim,
                 spec.output_dim);
  GradientMatrix m;
  m.rows = ids.size();
  m.dim = spec.output_dim;
  m.dtype = dtype;
  m.data.assign(m.rows * m.dim, 0.0);
  m.manifest = {spec.seed, kind, model_fingerprint, ids, spec.input_dim,
                spec.effective_scale()};
  parallel_for(m.rows, threads, [&](std::size_t r) {
    std::vector<double> g;
    try {
      g = grad_fn(r);
    } catch (const Error& e) {
      fail(e.kind(), "gradient for sample '" + ids[r] + "' failed: " + e.what());
    }
    const auto p = project(spec, g);
    auto dst = m.row(r);
    for (std::size_t j = 0; j < m.dim; ++j) {
      if (!std::isfinite(p[j]))
        fail(ErrorKind::kNumeric, "non-finite projected gradient for sample '" + ids[r] + "'");
      dst[j] = dtype == StoreDtype::kF32 ? static_cast<double>(static_cast<float>(p[j])) : p[j];
    }
  });
  return m;
}

void write_store(const std::filesystem::path& path, const GradientMatrix& m) {
  require(m.manifest.ids.size() == m.rows, "store manifest ids do not match row count");
  require(m.data.size() == m.rows * m.dim, "store payload does not match shape");
  std::string out;
  out.append("PGRD", 4);
  detail::put(out, kStoreVersion);
  detail::put(out, static_cast<std::uint64_t>(m.rows));
  detail::put(out, static_cast<std::uint64_t>(m.dim));
  detail::put(out, static_cast<std::uint8_t>(m.dtype));
  for (double x : m.data) {
    if (m.dtype == StoreDtype::kF32)
      detail::put(out, static_cast<float>(x));
    else
      detail::put(out, x);
  }
  const std::string manifest = m.manifest.to_json().dump();
  detail::put(out, static_cast<std::uint64_t>(manifest.size()));
  out += manifest;
  write_file(path, out);
}

GradientMatrix read_store(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  const std::string what = path.string();
  detail::Reader r(bytes, what);
  if (r.take(4) != "PGRD") fail(ErrorKind::kFormat, what + ": bad gradient store magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kStoreVersion)
    fail(ErrorKind::kFormat, what + ": unsupported gradient store version " +
                                 std::to_string(version) + " (expected " +
                                 std::to_string(kStoreVersion) + ")");
  GradientMatrix m;
  m.rows = r.get<std::uint64_t>();
  m.dim = r.get<std::uint64_t>();
  const auto dtype = r.get<std::uint8_t>();
  if (dtype > 1) fail(ErrorKind::kFormat, what + ": unknown dtype " + std::to_string(dtype));
  m.dtype = static_cast<StoreDtype>(dtype);
  const std::size_t width = m.dtype == StoreDtype::kF32 ? sizeof(float) : sizeof(double);
  if (m.dim != 0 && m.rows > r.remaining() / width / m.dim)
    fail(ErrorKind::kFormat, what + ": truncated file (payload shorter than header shape)");
  m.data.resize(m.rows * m.dim);
  for (double& x : m.data)
    x = m.dtype == StoreDtype::kF32 ? static_cast<double>(r.get<float>()) : r.get<double>();
  const auto mlen = r.get<std::uint64_t>();
  json j;
  try {
    j = json::parse(r.take(mlen));
    m.manifest = StoreManifest::from_json(j);
  } catch (const json::exception& e) {
    fail(ErrorKind::kFormat, what + ": bad manifest: " + e.what());
  }
  if (r.remaining() != 0) fail(ErrorKind::kFormat, what + ": trailing bytes after manifest");
  if (m.manifest.ids.size() != m.rows)
    fail(ErrorKind::kFormat, what + ": manifest lists " + std::to_string(m.manifest.ids.size()) +
                                 " ids for " + std::to_string(m.rows) + " rows");
  return m;
}

}  // namespace prods
