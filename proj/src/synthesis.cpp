#include "prods/synthesis.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "prods/common.h"

namespace prods {

void AnnealConfig::validate() const {
  require(cooling > 0.0 && cooling < 1.0, "cooling must be in (0, 1)");
  require(t_end > 0.0 && t_end < t0, "need 0 < t_end < t0");
  require(perturb_sigma > 0.0, "perturb_sigma must be positive");
  require(restarts >= 1, "restarts must be at least 1");
}

std::size_t AnnealConfig::expected_iterations() const {
  return static_cast<std::size_t>(std::ceil(std::log(t_end / t0) / std::log(cooling)));
}

double energy(std::span<const double> lambda, std::span<const double> gamma_app,
              std::span<const double> gamma_awy) {
  require(lambda.size() == gamma_app.size() && lambda.size() == gamma_awy.size(),
          "energy: length mismatch");
  double e = 0.0;
  for (std::size_t i = 0; i < lambda.size(); ++i)
    e -= lambda[i] * gamma_app[i] - (1.0 - lambda[i]) * gamma_awy[i];
  return e;
}

namespace {

AnnealResult anneal_once(std::span<const double> app, std::span<const double> awy,
                         const AnnealConfig& cfg, std::uint64_t seed) {
  const std::size_t n = app.size();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, cfg.perturb_sigma);

  AnnealResult out;
  std::vector<double> cur(n);
  for (double& x : cur) x = unif(rng);
  double e_cur = energy(cur, app, awy);
  std::vector<double> best = cur;
  double e_best = e_cur;
  out.trace.initial_energy = e_cur;
  out.trace.seed = seed;

  std::vector<double> next(n);
  double t = cfg.t0;
  while (t > cfg.t_end) {
    for (std::size_t i = 0; i < n; ++i) {
      next[i] = cur[i] + noise(rng);
      if (cfg.clamp) next[i] = std::clamp(next[i], 0.0, 1.0);
    }
    bool accepted = false;
    if (cfg.acceptance == AnnealAcceptance::kJoint) {
      const double e_next = energy(next, app, awy);
      const double de = e_next - e_cur;
      if (de < 0.0 || unif(rng) < std::exp(-de / t)) {
        cur.swap(next);
        e_cur = e_next;
        accepted = true;
      }
    } else {
      for (std::size_t i = 0; i < n; ++i) {
        const double de = -(next[i] - cur[i]) * (app[i] + awy[i]);
        if (de < 0.0 || unif(rng) < std::exp(-de / t)) {
          cur[i] = next[i];
          accepted = true;
        }
      }
      e_cur = energy(cur, app, awy);
    }
    if (e_cur < e_best) {
      best = cur;
      e_best = e_cur;
    }
    out.trace.temperatures.push_back(t);
    out.trace.energies.push_back(e_cur);
    out.trace.accepted.push_back(accepted);
    t *= cfg.cooling;
  }
  out.trace.iterations = out.trace.energies.size();
  if (cfg.return_mode == AnnealReturn::kBestSeen) {
    out.lambda = std::move(best);
    out.trace.final_energy = e_best;
  } else {
    out.lambda = std::move(cur);
    out.trace.final_energy = e_cur;
  }
  return out;
}

}  // namespace

AnnealResult anneal_lambda(std::span<const double> gamma_app,
                           std::span<const double> gamma_awy, const AnnealConfig& cfg,
                           std::size_t threads) {
  cfg.validate();
  require(!gamma_app.empty(), "annealing needs at least one sample");
  require(gamma_app.size() == gamma_awy.size(), "annealing: length mismatch");
  std::vector<AnnealResult> runs(cfg.restarts);
  parallel_for(cfg.restarts, threads, [&](std::size_t r) {
    runs[r] = anneal_once(gamma_app, gamma_awy, cfg, cfg.seed + r);
  });
  // Lowest energy wins; ties go to the lower seed (earlier restart).
  std::size_t pick = 0;
  for (std::size_t r = 1; r < runs.size(); ++r)
    if (runs[r].trace.final_energy < runs[pick].trace.final_energy) pick = r;
  return std::move(runs[pick]);
}

ClosedForm closed_form_lambda(std::span<const double> gamma_app,
                              std::span<const double> gamma_awy) {
  require(!gamma_app.empty(), "closed form needs at least one sample");
  require(gamma_app.size() == gamma_awy.size(), "closed form: length mismatch");
  ClosedForm out;
  out.lambda.resize(gamma_app.size());
  for (std::size_t i = 0; i < gamma_app.size(); ++i)
    out.lambda[i] = gamma_app[i] + gamma_awy[i] > 0.0 ? 1.0 : 0.0;
  out.e_star = energy(out.lambda, gamma_app, gamma_awy);
  return out;
}

SynthesisResult synthesize(const std::vector<std::string>& ids,
                           std::span<const double> gamma_app,
                           std::span<const double> gamma_awy, SynthesisMode mode,
                           const AnnealConfig& cfg, std::size_t threads) {
  const std::size_t n = ids.size();
  require(gamma_app.size() == n && gamma_awy.size() == n, "synthesize: length mismatch");
  require(mode != SynthesisMode::kUnified, "unified scores come from unified_score()");

  SynthesisResult out;
  auto& s = out.scores;
  s.ids = ids;
  s.gamma_app.assign(gamma_app.begin(), gamma_app.end());
  s.gamma_awy.assign(gamma_awy.begin(), gamma_awy.end());
  s.gamma.assign(n, kExcludedScore);
  s.lambda.assign(n, 1.0);
  s.synthesis = mode;

  std::vector<std::size_t> live;
  std::vector<double> a, b;
  for (std::size_t i = 0; i < n; ++i) {
    if (std::isfinite(gamma_app[i]) && std::isfinite(gamma_awy[i])) {
      live.push_back(i);
      a.push_back(gamma_app[i]);
      b.push_back(gamma_awy[i]);
    }
  }

  out.manifest = {{"mode", to_string(mode)}, {"n", n}, {"scored", live.size()}};
  if (mode == SynthesisMode::kFixed) {
    for (std::size_t i : live) s.gamma[i] = gamma_app[i] - gamma_awy[i];
    return out;
  }

  cfg.validate();
  if (live.empty()) fail(ErrorKind::kNumeric, "synthesize: no finite scores to anneal");
  auto annealed = anneal_lambda(a, b, cfg, threads);
  const auto closed = closed_form_lambda(a, b);
  for (std::size_t k = 0; k < live.size(); ++k) {
    const std::size_t i = live[k];
    const double l = annealed.lambda[k];
    s.lambda[i] = l;
    s.gamma[i] = l * a[k] - (1.0 - l) * b[k];
  }
  out.e_star = closed.e_star;
  out.trace = std::move(annealed.trace);
  out.manifest.update({{"seed", out.trace.seed},
                       {"sigma", cfg.perturb_sigma},
                       {"t0", cfg.t0},
                       {"cooling", cfg.cooling},
                       {"t_end", cfg.t_end},
                       {"iterations", out.trace.iterations},
                       {"final_energy", out.trace.final_energy},
                       {"e_star", out.e_star},
                       {"clamp", cfg.clamp},
                       {"return", cfg.return_mode == AnnealReturn::kBestSeen ? "best" : "last"},
                       {"acceptance",
                        cfg.acceptance == AnnealAcceptance::kJoint ? "joint" : "per_coordinate"},
                       {"restarts", cfg.restarts}});
  return out;
}

}  // namespace prods
