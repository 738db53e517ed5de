#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <set>
#include <vector>

#include "multiphase/fisher.hpp"
#include "multiphase/fock.hpp"
#include "multiphase/rng.hpp"

namespace test_support {

using multiphase::complexd;
using multiphase::FockState;
using multiphase::OccupationVector;
using multiphase::PhaseVector;
using multiphase::Rng;

// Random sparse probe state: up to max_terms distinct occupations over
// `modes` modes, each with at most max_photons photons, complex Gaussian
// amplitudes, normalized.
inline FockState random_fock_state(Rng& rng, int modes, int max_photons, int max_terms) {
  std::map<OccupationVector, complexd> amps;
  const int terms = 1 + static_cast<int>(rng.uniform() * max_terms);
  while (static_cast<int>(amps.size()) < terms) {
    int remaining = static_cast<int>(rng.uniform() * (max_photons + 1));
    std::vector<int> occ(modes, 0);
    for (int m = 0; m < modes && remaining > 0; ++m) {
      const int k = static_cast<int>(rng.uniform() * (remaining + 1));
      occ[m] = k;
      remaining -= k;
    }
    if (remaining > 0) occ[modes - 1] += remaining;
    amps[OccupationVector(occ)] = complexd(rng.gaussian(), rng.gaussian());
  }
  double norm_sq = 0.0;
  for (auto& [occ, a] : amps) norm_sq += std::norm(a);
  const double norm = std::sqrt(norm_sq);
  for (auto& [occ, a] : amps) a /= norm;
  return FockState(modes, std::move(amps));
}

inline PhaseVector random_phases(Rng& rng, int d) {
  std::vector<double> p(d);
  for (double& v : p) v = rng.uniform(-multiphase::kPi, multiphase::kPi);
  return PhaseVector(std::move(p));
}

// --- Amplitude-map arithmetic for oracle-side derivatives -------------------

using AmpMap = std::map<OccupationVector, complexd>;

inline AmpMap scaled(const AmpMap& a, complexd factor) {
  AmpMap out = a;
  for (auto& [occ, amp] : out) amp *= factor;
  return out;
}

inline AmpMap combined(const AmpMap& a, const AmpMap& b, complexd wa, complexd wb) {
  AmpMap out;
  for (const auto& [occ, amp] : a) out[occ] += wa * amp;
  for (const auto& [occ, amp] : b) out[occ] += wb * amp;
  return out;
}

inline complexd map_inner(const AmpMap& a, const AmpMap& b) {
  complexd acc(0.0, 0.0);
  for (const auto& [occ, amp] : a) {
    auto it = b.find(occ);
    if (it != b.end()) acc += std::conj(amp) * it->second;
  }
  return acc;
}

// Finite-difference QFI oracle straight from the definition
// Q_ij = 4 Re(<d_i psi|d_j psi> - <psi|d_i psi><d_j psi|psi>), with
// |d_i psi> approximated by central differences of apply_phases. Independent
// of both the generator route and the moment route.
inline Eigen::MatrixXd finite_difference_qfi(const FockState& state, double h = 1e-5) {
  const int d = state.mode_count() - 1;
  const PhaseVector zero = PhaseVector::zeros(d);
  std::vector<AmpMap> deriv(d);
  for (int i = 0; i < d; ++i) {
    const FockState plus = multiphase::apply_phases(state, zero.shifted(i, h));
    const FockState minus = multiphase::apply_phases(state, zero.shifted(i, -h));
    deriv[i] = combined(plus.amplitudes(), minus.amplitudes(), complexd(1.0 / (2.0 * h), 0.0),
                        complexd(-1.0 / (2.0 * h), 0.0));
  }
  Eigen::MatrixXd q(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      const complexd gij = map_inner(deriv[i], deriv[j]);
      const complexd si = map_inner(state.amplitudes(), deriv[i]);
      const complexd sj = map_inner(deriv[j], state.amplitudes());
      q(i, j) = 4.0 * std::real(gij - si * sj);
    }
  return q;
}

inline double max_abs_diff(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).cwiseAbs().maxCoeff();
}

inline double factorial_oracle(int n) {
  double f = 1.0;
  for (int k = 2; k <= n; ++k) f *= k;
  return f;
}

// Dense truncated-Fock oracle: push each creation operator through the mode
// unitary (a_i^dag -> sum_j U_ji a_j^dag) and expand the product explicitly.
// Independent of the permanent formula used by fock_evolve.
inline AmpMap dense_evolution_oracle(const Eigen::MatrixXcd& u, const FockState& input) {
  AmpMap out;
  const int modes = input.mode_count();
  for (const auto& [occ, amp] : input.amplitudes()) {
    std::vector<int> photons;
    for (int m = 0; m < modes; ++m)
      for (int k = 0; k < occ[m]; ++k) photons.push_back(m);
    double in_norm = 1.0;
    for (int m = 0; m < modes; ++m) in_norm *= factorial_oracle(occ[m]);

    std::vector<int> target(modes, 0);
    auto expand = [&](auto&& self, std::size_t p, complexd coeff) -> void {
      if (p == photons.size()) {
        double out_norm = 1.0;
        for (int t : target) out_norm *= factorial_oracle(t);
        out[OccupationVector(target)] += amp * coeff * std::sqrt(out_norm / in_norm);
        return;
      }
      for (int j = 0; j < modes; ++j) {
        ++target[j];
        self(self, p + 1, coeff * u(j, photons[p]));
        --target[j];
      }
    };
    expand(expand, 0, complexd(1.0, 0.0));
  }
  return out;
}

inline double max_amplitude_diff(const AmpMap& a, const FockState& b) {
  double worst = 0.0;
  for (const auto& [occ, amp] : a) worst = std::max(worst, std::abs(amp - b.amplitude(occ)));
  for (const auto& [occ, amp] : b.amplitudes()) {
    auto it = a.find(occ);
    const complexd other = it == a.end() ? complexd(0.0, 0.0) : it->second;
    worst = std::max(worst, std::abs(amp - other));
  }
  return worst;
}

inline double min_eigenvalue(const Eigen::MatrixXd& sym) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

// Kolmogorov-Smirnov statistic against Uniform[-pi, pi).
inline double ks_uniform_statistic(std::vector<double> samples) {
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double ks = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double cdf = (samples[i] + multiphase::kPi) / multiphase::kTwoPi;
    ks = std::max(ks, std::abs(cdf - static_cast<double>(i) / n));
    ks = std::max(ks, std::abs(cdf - static_cast<double>(i + 1) / n));
  }
  return ks;
}

inline double mean(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s / xs.size();
}

inline double variance(const std::vector<double>& xs) {
  const double m = mean(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return s / (xs.size() - 1);
}

}  // namespace test_support
