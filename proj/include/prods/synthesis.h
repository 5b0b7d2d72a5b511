#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "json.hpp"
#include "prods/scoring.h"

namespace prods {

enum class AnnealReturn { kBestSeen, kLastAccepted };

/// How a proposal is accepted. kJoint applies one Metropolis test to the
/// whole perturbed vector; kPerCoordinate tests every coordinate separately
/// (valid because the energy is a sum of per-sample terms).
enum class AnnealAcceptance { kJoint, kPerCoordinate };

struct AnnealConfig {
  double t0 = 1.0;
  double cooling = 0.95;
  double t_end = 0.01;
  double perturb_sigma = 0.1;
  std::uint64_t seed = 0;
  bool clamp = true;
  AnnealReturn return_mode = AnnealReturn::kBestSeen;
  AnnealAcceptance acceptance = AnnealAcceptance::kJoint;
  std::size_t restarts = 1;

  void validate() const;
  /// ceil(ln(t_end / t0) / ln(cooling))
  std::size_t expected_iterations() const;
};

struct AnnealTrace {
  std::size_t iterations = 0;
  std::vector<double> temperatures;  // temperature used at each iteration
  std::vector<double> energies;      // energy of the current state after each iteration
  std::vector<bool> accepted;
  double initial_energy = 0.0;
  double final_energy = 0.0;  // energy of the returned lambda
  std::uint64_t seed = 0;     // seed of the returned restart
};

/// E = -sum_i (lambda_i * app_i - (1 - lambda_i) * awy_i)
double energy(std::span<const double> lambda, std::span<const double> gamma_app,
              std::span<const double> gamma_awy);

struct AnnealResult {
  std::vector<double> lambda;
  AnnealTrace trace;
};

/// Simulated annealing over the per-sample mixing weights: lambda starts
/// U(0,1), every step adds N(0, sigma) noise to all entries, downhill moves
/// are accepted and uphill ones with probability exp(-dE / T), and T is
/// multiplied by `cooling` until it reaches t_end.
AnnealResult anneal_lambda(std::span<const double> gamma_app,
                           std::span<const double> gamma_awy, const AnnealConfig& cfg,
                           std::size_t threads = 1);

struct ClosedForm {
  std::vector<double> lambda;
  double e_star = 0.0;
};

/// Exact minimiser of the energy over [0,1]^N: lambda_i = 1 iff
/// app_i + awy_i > 0.
ClosedForm closed_form_lambda(std::span<const double> gamma_app,
                              std::span<const double> gamma_awy);

struct SynthesisResult {
  DirectionScores scores;
  AnnealTrace trace;  // empty for fixed mode
  double e_star = 0.0;
  nlohmann::json manifest;
};

/// annealing: gamma_i = lambda_i * app_i - (1 - lambda_i) * awy_i;
/// fixed: gamma = app - awy. Samples whose app or awy score is not finite are
/// left out of the annealing and keep gamma = kExcludedScore.
SynthesisResult synthesize(const std::vector<std::string>& ids,
                           std::span<const double> gamma_app,
                           std::span<const double> gamma_awy, SynthesisMode mode,
                           const AnnealConfig& cfg, std::size_t threads = 1);

}  // namespace prods
