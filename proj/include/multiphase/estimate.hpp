#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include "multiphase/fisher.hpp"
#include "multiphase/fock.hpp"
#include "multiphase/rng.hpp"

namespace multiphase {

inline constexpr double kLiuWestShrinkage = 0.98;
inline constexpr double kEssResampleFraction = 0.5;
inline constexpr int kMinParticleCount = 100;
inline constexpr double kControlTieTolerance = 1e-12;  // utility ties keep the earlier candidate

enum class Prior { UniformTorus };

// Weighted sample approximation of the Bayesian posterior over the unknown
// phases. Carries its own RNG stream so that update/resample sequences are
// reproducible from the init seed alone.
struct ParticleCloud {
  std::vector<PhaseVector> particles;
  std::vector<double> weights;
  Rng rng;
  int prior_resets = 0;  // times an impossible outcome forced a reset to the prior
  int generation = 0;    // bumped whenever particle positions change

  int count() const { return static_cast<int>(particles.size()); }
  int dim() const { return particles.empty() ? 0 : particles.front().size(); }
  double ess() const {
    double s = 0.0;
    for (double w : weights) s += w * w;
    return s > 0.0 ? 1.0 / s : 0.0;
  }
};

namespace detail {

inline PhaseVector weighted_circular_mean(const std::vector<PhaseVector>& particles,
                                          const std::vector<double>& weights) {
  const int d = particles.empty() ? 0 : particles.front().size();
  std::vector<double> mean(d, 0.0);
  for (int k = 0; k < d; ++k) {
    double c = 0.0, s = 0.0;
    for (std::size_t i = 0; i < particles.size(); ++i) {
      c += weights[i] * std::cos(particles[i][k]);
      s += weights[i] * std::sin(particles[i][k]);
    }
    mean[k] = (c == 0.0 && s == 0.0) ? 0.0 : std::atan2(s, c);
  }
  return PhaseVector(std::move(mean));
}

inline Eigen::MatrixXd weighted_circular_covariance(const std::vector<PhaseVector>& particles,
                                                    const std::vector<double>& weights) {
  const int d = particles.empty() ? 0 : particles.front().size();
  const PhaseVector mu = weighted_circular_mean(particles, weights);
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
  Eigen::VectorXd delta(d);
  for (std::size_t i = 0; i < particles.size(); ++i) {
    for (int k = 0; k < d; ++k) delta(k) = wrap_phase(particles[i][k] - mu[k]);
    cov += weights[i] * delta * delta.transpose();
  }
  return cov;
}

// Tr(Cov) without materializing the matrix; the hot path of control selection.
inline double weighted_circular_trace(const std::vector<PhaseVector>& particles,
                                      const std::vector<double>& weights) {
  const int d = particles.empty() ? 0 : particles.front().size();
  const PhaseVector mu = weighted_circular_mean(particles, weights);
  double trace = 0.0;
  for (std::size_t i = 0; i < particles.size(); ++i)
    for (int k = 0; k < d; ++k) {
      const double delta = wrap_phase(particles[i][k] - mu[k]);
      trace += weights[i] * delta * delta;
    }
  return trace;
}

}  // namespace detail

// Per-component circular mean of the weighted cloud.
inline PhaseVector circular_mean(const ParticleCloud& cloud) {
  return detail::weighted_circular_mean(cloud.particles, cloud.weights);
}

// Covariance of the wrapped deviations around the circular mean. Meaningful
// once the posterior is concentrated, which is when CRB comparisons are made.
inline Eigen::MatrixXd circular_covariance(const ParticleCloud& cloud) {
  return detail::weighted_circular_covariance(cloud.particles, cloud.weights);
}

inline ParticleCloud smc_init(Prior prior, int particle_count, int d, std::uint64_t seed) {
  if (prior != Prior::UniformTorus) throw std::invalid_argument("smc_init: unknown prior");
  if (particle_count < kMinParticleCount)
    throw std::invalid_argument("smc_init: particle_count must be >= " +
                                std::to_string(kMinParticleCount));
  if (d < 1) throw std::invalid_argument("smc_init: d must be >= 1");
  ParticleCloud cloud{{}, {}, Rng(seed)};
  cloud.particles.reserve(particle_count);
  for (int i = 0; i < particle_count; ++i) {
    std::vector<double> p(d);
    for (int k = 0; k < d; ++k) p[k] = cloud.rng.uniform(-kPi, kPi);
    cloud.particles.emplace_back(std::move(p));
  }
  cloud.weights.assign(particle_count, 1.0 / particle_count);
  return cloud;
}

namespace detail {

// Liu-West kernel resampling on the torus: systematic index resampling,
// shrinkage a toward the circular mean, Gaussian jitter with the residual
// covariance (1-a^2) Sigma.
inline void liu_west_resample(ParticleCloud& cloud, double shrinkage = kLiuWestShrinkage) {
  const int n = cloud.count();
  const int d = cloud.dim();
  const PhaseVector mu = circular_mean(cloud);
  const Eigen::MatrixXd cov = circular_covariance(cloud);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  Eigen::MatrixXd noise_root = es.eigenvectors();
  const double jitter_var = 1.0 - shrinkage * shrinkage;
  for (int k = 0; k < d; ++k)
    noise_root.col(k) *= std::sqrt(jitter_var * std::max(es.eigenvalues()(k), 0.0));

  // Systematic (low-variance) resampling.
  std::vector<int> picks(n);
  {
    const double start = cloud.rng.uniform() / n;
    double cum = cloud.weights[0];
    int idx = 0;
    for (int i = 0; i < n; ++i) {
      const double target = start + static_cast<double>(i) / n;
      while (cum < target && idx + 1 < n) cum += cloud.weights[++idx];
      picks[i] = idx;
    }
  }

  std::vector<PhaseVector> fresh;
  fresh.reserve(n);
  Eigen::VectorXd z(d);
  for (int i = 0; i < n; ++i) {
    const PhaseVector& src = cloud.particles[picks[i]];
    for (int k = 0; k < d; ++k) z(k) = cloud.rng.gaussian();
    const Eigen::VectorXd jitter = noise_root * z;
    std::vector<double> p(d);
    for (int k = 0; k < d; ++k)
      p[k] = mu[k] + shrinkage * wrap_phase(src[k] - mu[k]) + jitter(k);
    fresh.emplace_back(std::move(p));
  }
  cloud.particles = std::move(fresh);
  cloud.weights.assign(n, 1.0 / n);
  ++cloud.generation;
}

inline void reset_to_prior(ParticleCloud& cloud) {
  const int d = cloud.dim();
  for (auto& particle : cloud.particles) {
    std::vector<double> p(d);
    for (int k = 0; k < d; ++k) p[k] = cloud.rng.uniform(-kPi, kPi);
    particle = PhaseVector(std::move(p));
  }
  cloud.weights.assign(cloud.count(), 1.0 / cloud.count());
  ++cloud.prior_resets;
  ++cloud.generation;
}

// Bayes update from precomputed per-particle likelihoods of one outcome.
inline ParticleCloud update_with_likelihood(ParticleCloud cloud,
                                            const std::vector<double>& likelihood) {
  double total = 0.0;
  for (int i = 0; i < cloud.count(); ++i) {
    cloud.weights[i] *= likelihood[i];
    total += cloud.weights[i];
  }
  if (!(total > 0.0)) {
    // Outcome impossible under every particle: warn by resetting to the prior.
    reset_to_prior(cloud);
    return cloud;
  }
  for (double& w : cloud.weights) w /= total;
  if (cloud.ess() < kEssResampleFraction * cloud.count()) liu_west_resample(cloud);
  return cloud;
}

}  // namespace detail

// Bayesian weight update with the observed outcome; the model is evaluated at
// each particle's phases concatenated with the control phases in effect.
inline ParticleCloud smc_update(ParticleCloud cloud, const ProbabilityModel& model,
                                const PhaseVector& controls, int outcome) {
  if (model.phase_dim != cloud.dim() + controls.size())
    throw DimensionError("smc_update: model dimension != particle dim + control dim");
  if (outcome < 0 || outcome >= model.outcome_count)
    throw std::out_of_range("smc_update: outcome index out of range");
  std::vector<double> likelihood(cloud.count());
  for (int i = 0; i < cloud.count(); ++i)
    likelihood[i] = evaluate(model, cloud.particles[i].concat(controls))[outcome];
  return detail::update_with_likelihood(std::move(cloud), likelihood);
}

namespace detail {

// Expected posterior covariance trace for one candidate, from the table of
// per-particle outcome distributions at that candidate.
inline double expected_posterior_trace(const ParticleCloud& cloud,
                                       const std::vector<std::vector<double>>& table) {
  const int outcomes = static_cast<int>(table.front().size());
  double utility = 0.0;
  std::vector<double> posterior(cloud.count());
  for (int o = 0; o < outcomes; ++o) {
    double predictive = 0.0;
    for (int i = 0; i < cloud.count(); ++i) predictive += cloud.weights[i] * table[i][o];
    if (predictive <= 0.0) continue;
    for (int i = 0; i < cloud.count(); ++i)
      posterior[i] = cloud.weights[i] * table[i][o] / predictive;
    utility += predictive * weighted_circular_trace(cloud.particles, posterior);
  }
  return utility;
}

inline std::vector<std::vector<double>> likelihood_table(const ParticleCloud& cloud,
                                                         const ProbabilityModel& model,
                                                         const PhaseVector& controls) {
  std::vector<std::vector<double>> table(cloud.count());
  for (int i = 0; i < cloud.count(); ++i)
    table[i] = evaluate(model, cloud.particles[i].concat(controls));
  return table;
}

}  // namespace detail

// Pick the control phases minimizing the expected posterior covariance trace
// U = sum_o p(o) Tr[Cov(posterior | o)]. Ties resolve to the lowest index.
inline PhaseVector choose_controls(const ParticleCloud& cloud, const ProbabilityModel& model,
                                   const std::vector<PhaseVector>& candidates) {
  if (candidates.empty()) throw std::invalid_argument("choose_controls: no candidates");
  int best = 0;
  double best_utility = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    const double utility = detail::expected_posterior_trace(
        cloud, detail::likelihood_table(cloud, model, candidates[c]));
    if (utility < best_utility - kControlTieTolerance) {
      best_utility = utility;
      best = static_cast<int>(c);
    }
  }
  return candidates[best];
}

// Uniformly spaced candidate grid: 32 per control dimension, capped at 256
// points in total.
inline std::vector<PhaseVector> default_control_candidates(int control_dims) {
  if (control_dims <= 0) return {};
  int per_dim = 32;
  while (per_dim > 2 && std::pow(per_dim, control_dims) > 256.0) --per_dim;
  std::vector<PhaseVector> out;
  std::vector<int> idx(control_dims, 0);
  while (true) {
    std::vector<double> values(control_dims);
    for (int k = 0; k < control_dims; ++k)
      values[k] = -kPi + idx[k] * (kTwoPi / per_dim);
    out.emplace_back(std::move(values));
    int k = control_dims - 1;
    while (k >= 0 && ++idx[k] == per_dim) idx[k--] = 0;
    if (k < 0) break;
  }
  return out;
}

struct MleResult {
  PhaseVector estimate;
  bool multimodal = false;        // distinct grid cells tie for the maximum
  bool non_identifiable = false;  // likelihood is -inf over the whole grid
};

// Grid-search maximizer of sum_n count_n ln p(n | phi), followed by a local
// coordinate-descent refinement. Ties break toward the lexicographically
// smallest phase vector.
inline MleResult mle_estimate(const ProbabilityModel& model, const std::vector<double>& counts,
                              int grid_resolution) {
  const int d = model.phase_dim;
  if (d < 1 || d > 3)
    throw std::invalid_argument("mle_estimate: grid search supports 1 <= d <= 3");
  if (grid_resolution < 8)
    throw std::invalid_argument("mle_estimate: grid_resolution must be >= 8 per dimension");
  if (static_cast<int>(counts.size()) != model.outcome_count)
    throw DimensionError("mle_estimate: counts length != outcome count");
  double total = 0.0;
  for (double c : counts) {
    if (c < 0.0) throw std::invalid_argument("mle_estimate: negative count");
    total += c;
  }
  if (total <= 0.0) throw std::invalid_argument("mle_estimate: all-zero counts");

  const double neg_inf = -std::numeric_limits<double>::infinity();
  auto log_likelihood = [&](const PhaseVector& phi) {
    const std::vector<double> p = evaluate(model, phi);
    double ll = 0.0;
    for (int n = 0; n < model.outcome_count; ++n) {
      if (counts[n] == 0.0) continue;
      if (p[n] < 1e-300) return neg_inf;
      ll += counts[n] * std::log(p[n]);
    }
    return ll;
  };

  const double spacing = kTwoPi / grid_resolution;
  std::vector<int> idx(d, 0);
  std::vector<double> phi(d);
  double best_ll = neg_inf;
  PhaseVector best = PhaseVector::zeros(d);
  std::vector<std::pair<double, PhaseVector>> grid_values;
  grid_values.reserve(static_cast<std::size_t>(std::pow(grid_resolution, d)));
  while (true) {
    for (int k = 0; k < d; ++k) phi[k] = -kPi + idx[k] * spacing;
    PhaseVector point(phi);
    const double ll = log_likelihood(point);
    grid_values.emplace_back(ll, point);
    if (ll > best_ll) {  // lexicographic iteration order makes ties keep the smaller point
      best_ll = ll;
      best = point;
    }
    int k = d - 1;
    while (k >= 0 && ++idx[k] == grid_resolution) idx[k--] = 0;
    if (k < 0) break;
  }
  if (best_ll == neg_inf)
    return MleResult{PhaseVector::zeros(d), false, true};

  bool multimodal = false;
  const double tie_tol = 1e-9 * (1.0 + std::abs(best_ll));
  for (const auto& [ll, point] : grid_values) {
    if (ll < best_ll - tie_tol) continue;
    for (int k = 0; k < d; ++k) {
      double dist = std::abs(wrap_phase(point[k] - best[k]));
      if (dist > 1.5 * spacing) {
        multimodal = true;
        break;
      }
    }
    if (multimodal) break;
  }

  // Local refinement: greedy coordinate moves with step halving.
  double step = spacing / 2.0;
  double current_ll = best_ll;
  while (step > 1e-10) {
    bool improved = false;
    for (int k = 0; k < d; ++k) {
      for (double sign : {1.0, -1.0}) {
        const PhaseVector trial = best.shifted(k, sign * step);
        const double ll = log_likelihood(trial);
        if (ll > current_ll) {
          current_ll = ll;
          best = trial;
          improved = true;
        }
      }
    }
    if (!improved) step /= 2.0;
  }
  return MleResult{best, multimodal, false};
}

enum class EstimatorKind { MaximumLikelihood, SequentialMonteCarlo };

// One repetition of a simulated estimation run.
struct EstimationRecord {
  int step = 0;
  PhaseVector estimate;
  Eigen::MatrixXd covariance;  // posterior (SMC) or asymptotic F^-1/shots (MLE)
  PhaseVector controls;
  double utility = 0.0;  // Tr(covariance)
  std::optional<double> crb_trace;   // Tr(F^-1)/nu, filled on the final record
  std::optional<double> qcrb_trace;  // Tr(Q^-1)/nu, filled on the final record
  bool multimodal = false;
};

// Full description of a simulated experiment: model over (unknowns + controls),
// the truth, the estimator and its knobs, and the seed. Everything downstream
// is deterministic in this struct.
struct EstimationScenario {
  ProbabilityModel model;
  int unknown_dims = 1;
  int control_dims = 0;
  PhaseVector truth;
  PhaseVector fixed_controls;
  EstimatorKind estimator = EstimatorKind::SequentialMonteCarlo;
  bool adaptive = false;
  std::vector<PhaseVector> control_candidates;  // empty while adaptive => fixed-control run
  int repetitions = 100;  // SMC steps, or MLE shots
  int particle_count = 2000;
  int mle_grid_resolution = 64;
  std::uint64_t seed = 0;
  std::optional<InfoMatrix> qfi;
};

namespace detail {

inline ProbabilityModel bind_controls(const ProbabilityModel& model, int unknown_dims,
                                      const PhaseVector& controls) {
  return ProbabilityModel{model.outcome_count, unknown_dims,
                          [&model, controls](const PhaseVector& phi) {
                            return model.prob(phi.concat(controls));
                          }};
}

}  // namespace detail

// Exponential-approach constant tau: least-squares fit of
// ln(Tr V(nu) - Tr(F^-1)/nu) against nu, with tau = -1/slope. Returns nothing
// when too few steps sit above the bound or the residuals are not decaying.
// traces[i] is the covariance trace after step i+1.
inline std::optional<double> fit_convergence_rate(const std::vector<double>& traces,
                                                  double crb_trace_total) {
  std::vector<double> xs, ys;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    const double nu = static_cast<double>(i + 1);
    const double residual = traces[i] - crb_trace_total / nu;
    if (residual > 0.0) {
      xs.push_back(nu);
      ys.push_back(std::log(residual));
    }
  }
  if (xs.size() < 3) return std::nullopt;
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sx += xs[i];
    sy += ys[i];
    sxx += xs[i] * xs[i];
    sxy += xs[i] * ys[i];
  }
  const double n = static_cast<double>(xs.size());
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  if (!(slope < 0.0)) return std::nullopt;  // not decaying
  return -1.0 / slope;
}

inline std::optional<double> fit_convergence_rate(const std::vector<EstimationRecord>& records,
                                                  double crb_trace_total) {
  std::vector<double> traces;
  traces.reserve(records.size());
  for (const auto& rec : records) traces.push_back(rec.covariance.trace());
  return fit_convergence_rate(traces, crb_trace_total);
}

inline std::vector<EstimationRecord> run_estimation(const EstimationScenario& scenario) {
  const auto& sc = scenario;
  if (sc.model.phase_dim != sc.unknown_dims + sc.control_dims)
    throw DimensionError("run_estimation: model dimension != unknowns + controls");
  if (sc.truth.size() != sc.unknown_dims)
    throw DimensionError("run_estimation: truth dimension mismatch");
  if (sc.fixed_controls.size() != sc.control_dims)
    throw DimensionError("run_estimation: fixed_controls dimension mismatch");
  for (const auto& c : sc.control_candidates)
    if (c.size() != sc.control_dims)
      throw DimensionError("run_estimation: candidate control dimension mismatch");
  if (sc.repetitions < 1) throw std::invalid_argument("run_estimation: repetitions must be >= 1");
  if (sc.qfi && sc.qfi->dim() != sc.unknown_dims)
    throw DimensionError("run_estimation: qfi dimension mismatch");

  const bool adapting = sc.adaptive && !sc.control_candidates.empty();

  // CRB reference: best fixed-control F at the truth over the candidate set
  // for adaptive runs, otherwise F at the controls in effect.
  double crb_reference;
  {
    double best = std::numeric_limits<double>::infinity();
    std::vector<PhaseVector> points;
    if (adapting)
      points = sc.control_candidates;
    else
      points.push_back(sc.fixed_controls);
    for (const auto& controls : points) {
      const ProbabilityModel bound = detail::bind_controls(sc.model, sc.unknown_dims, controls);
      const double trace =
          inverse_bound(fi_matrix(bound, sc.truth).matrix).matrix.trace();
      best = std::min(best, trace);
    }
    crb_reference = best;
  }
  const std::optional<double> qcrb_reference =
      sc.qfi ? std::optional<double>(inverse_bound(*sc.qfi).matrix.trace()) : std::nullopt;

  Rng root(sc.seed);
  std::vector<EstimationRecord> records;

  if (sc.estimator == EstimatorKind::MaximumLikelihood) {
    Rng draw_rng = root.split(1);
    const std::vector<double> p_true =
        evaluate(sc.model, sc.truth.concat(sc.fixed_controls));
    std::vector<double> counts(sc.model.outcome_count, 0.0);
    for (int s = 0; s < sc.repetitions; ++s) counts[draw_rng.categorical(p_true)] += 1.0;
    const ProbabilityModel bound =
        detail::bind_controls(sc.model, sc.unknown_dims, sc.fixed_controls);
    const MleResult mle = mle_estimate(bound, counts, sc.mle_grid_resolution);
    Eigen::MatrixXd cov;
    if (mle.non_identifiable) {
      cov = Eigen::MatrixXd::Zero(sc.unknown_dims, sc.unknown_dims);
    } else {
      cov = inverse_bound(fi_matrix(bound, mle.estimate).matrix).matrix.entries() /
            sc.repetitions;
    }
    EstimationRecord rec{sc.repetitions, mle.estimate,       cov,
                         sc.fixed_controls, cov.trace(),
                         crb_reference / sc.repetitions,
                         qcrb_reference ? std::optional<double>(*qcrb_reference / sc.repetitions)
                                        : std::nullopt,
                         mle.multimodal};
    records.push_back(std::move(rec));
    return records;
  }

  // Sequential Monte Carlo.
  ParticleCloud cloud =
      smc_init(Prior::UniformTorus, sc.particle_count, sc.unknown_dims, root.split(0).seed());
  Rng outcome_rng = root.split(1);

  // Candidate likelihood tables, reused until the particles move.
  int cache_generation = -1;
  std::vector<std::vector<std::vector<double>>> cache;  // [candidate][particle][outcome]
  auto refresh_cache = [&]() {
    if (cache_generation == cloud.generation) return;
    cache.clear();
    cache.reserve(sc.control_candidates.size());
    for (const auto& c : sc.control_candidates)
      cache.push_back(detail::likelihood_table(cloud, sc.model, c));
    cache_generation = cloud.generation;
  };

  records.reserve(sc.repetitions);
  for (int nu = 1; nu <= sc.repetitions; ++nu) {
    PhaseVector controls = sc.fixed_controls;
    int candidate_index = -1;
    if (adapting) {
      refresh_cache();
      double best_utility = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < sc.control_candidates.size(); ++c) {
        const double utility = detail::expected_posterior_trace(cloud, cache[c]);
        if (utility < best_utility - kControlTieTolerance) {
          best_utility = utility;
          candidate_index = static_cast<int>(c);
        }
      }
      controls = sc.control_candidates[candidate_index];
    }

    const std::vector<double> p_true = evaluate(sc.model, sc.truth.concat(controls));
    const int outcome = outcome_rng.categorical(p_true);

    if (candidate_index >= 0 && cache_generation == cloud.generation) {
      std::vector<double> likelihood(cloud.count());
      for (int i = 0; i < cloud.count(); ++i)
        likelihood[i] = cache[candidate_index][i][outcome];
      cloud = detail::update_with_likelihood(std::move(cloud), likelihood);
    } else {
      cloud = smc_update(std::move(cloud), sc.model, controls, outcome);
    }

    EstimationRecord rec;
    rec.step = nu;
    rec.estimate = circular_mean(cloud);
    rec.covariance = circular_covariance(cloud);
    rec.controls = controls;
    rec.utility = rec.covariance.trace();
    if (nu == sc.repetitions) {
      rec.crb_trace = crb_reference / nu;
      if (qcrb_reference) rec.qcrb_trace = *qcrb_reference / nu;
    }
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace multiphase
