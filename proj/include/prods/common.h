#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace prods {

/// Error categories. Each maps onto one CLI exit code.
enum class ErrorKind {
  kInvalidArgument,
  kConfig,
  kMissingArtifact,
  kJudge,
  kNumeric,
  kFormat,
  kIo,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& what);

inline void require(bool cond, const std::string& what) {
  if (!cond) fail(ErrorKind::kInvalidArgument, what);
}

// SHA-256 helpers (hex digest).
std::string sha256_hex(std::string_view bytes);
std::string sha256_hex(std::span<const double> values);
std::string sha256_file(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

/// Number of worker threads used when callers pass 0.
std::size_t default_threads();

/// Runs fn(i) for i in [0, n). Work is split into contiguous chunks, so any
/// function that writes only to slot i gives the same result for every
/// thread count.
void parallel_for(std::size_t n, std::size_t threads,
                  const std::function<void(std::size_t)>& fn);

/// round(fraction * n) with halves rounded away from zero.
std::size_t fraction_count(double fraction, std::size_t n);

/// Uniform sample of k distinct indices from [0, n), returned in draw order.
std::vector<std::size_t> sample_without_replacement(std::size_t n,
                                                    std::size_t k,
                                                    std::uint64_t seed);

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> a);

}  // namespace prods
