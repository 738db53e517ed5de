#pragma once

#include <cmath>
#include <complex>
#include <compare>
#include <initializer_list>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace multiphase {

using complexd = std::complex<double>;

inline constexpr double kPi = 3.14159265358979323846264338327950288;
inline constexpr double kTwoPi = 2.0 * kPi;

struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Reduce an angle into [-pi, pi).
inline double wrap_phase(double x) {
  double y = x - kTwoPi * std::floor((x + kPi) / kTwoPi);
  if (y >= kPi) y -= kTwoPi;
  if (y < -kPi) y += kTwoPi;
  return y;
}

// Photon counts per mode. Total is cached at construction.
class OccupationVector {
 public:
  explicit OccupationVector(std::vector<int> counts) : counts_(std::move(counts)) {
    for (int c : counts_) {
      if (c < 0) throw std::invalid_argument("OccupationVector: negative photon count");
    }
    total_ = std::accumulate(counts_.begin(), counts_.end(), 0);
  }

  OccupationVector(std::initializer_list<int> counts)
      : OccupationVector(std::vector<int>(counts)) {}

  // |0,...,photons,...,0> with all photons in one mode.
  static OccupationVector single_mode(int mode_count, int mode, int photons) {
    if (mode < 0 || mode >= mode_count) throw std::out_of_range("single_mode: bad mode index");
    std::vector<int> c(mode_count, 0);
    c[mode] = photons;
    return OccupationVector(std::move(c));
  }

  int modes() const { return static_cast<int>(counts_.size()); }
  int total() const { return total_; }
  int operator[](int mode) const { return counts_.at(mode); }
  const std::vector<int>& counts() const { return counts_; }

  friend auto operator<=>(const OccupationVector& a, const OccupationVector& b) {
    return a.counts_ <=> b.counts_;
  }
  friend bool operator==(const OccupationVector& a, const OccupationVector& b) {
    return a.counts_ == b.counts_;
  }

  std::string str() const {
    std::string s = "|";
    for (int i = 0; i < modes(); ++i) s += (i ? "," : "") + std::to_string(counts_[i]);
    return s + ">";
  }

 private:
  std::vector<int> counts_;
  int total_ = 0;
};

inline constexpr double kNormRenormalize = 1e-12;  // below this, norm drift is ignored
inline constexpr double kNormReject = 1e-9;        // above this, construction fails
inline constexpr double kAmplitudePrune = 1e-14;

// Pure multimode state as a sparse map occupation -> amplitude. Normalized on
// construction: |norm - 1| in (1e-12, 1e-9] is silently renormalized, larger
// deviations are rejected. Immutable afterwards.
class FockState {
 public:
  using AmplitudeMap = std::map<OccupationVector, complexd>;

  FockState(int mode_count, AmplitudeMap amplitudes)
      : mode_count_(mode_count), amplitudes_(std::move(amplitudes)) {
    if (mode_count_ <= 0) throw std::invalid_argument("FockState: mode_count must be positive");
    double norm_sq = 0.0;
    for (const auto& [occ, amp] : amplitudes_) {
      if (occ.modes() != mode_count_)
        throw DimensionError("FockState: occupation length " + std::to_string(occ.modes()) +
                             " != mode_count " + std::to_string(mode_count_));
      norm_sq += std::norm(amp);
    }
    const double norm = std::sqrt(norm_sq);
    if (std::abs(norm - 1.0) > kNormReject)
      throw std::invalid_argument("FockState: norm " + std::to_string(norm) +
                                  " deviates from 1 beyond tolerance");
    if (std::abs(norm - 1.0) > kNormRenormalize) {
      for (auto& [occ, amp] : amplitudes_) amp /= norm;
    }
    for (auto it = amplitudes_.begin(); it != amplitudes_.end();) {
      if (std::abs(it->second) < kAmplitudePrune)
        it = amplitudes_.erase(it);
      else
        ++it;
    }
    if (amplitudes_.empty()) throw std::invalid_argument("FockState: empty support");
  }

  static FockState superposition(int mode_count,
                                 std::vector<std::pair<OccupationVector, complexd>> terms) {
    return FockState(mode_count, to_map(std::move(terms)));
  }

  // Basis ket |n>.
  static FockState basis(OccupationVector occ) {
    const int m = occ.modes();
    AmplitudeMap amps;
    amps.emplace(std::move(occ), complexd(1.0, 0.0));
    return FockState(m, std::move(amps));
  }

  int mode_count() const { return mode_count_; }
  const AmplitudeMap& amplitudes() const { return amplitudes_; }

  complexd amplitude(const OccupationVector& occ) const {
    auto it = amplitudes_.find(occ);
    return it == amplitudes_.end() ? complexd(0.0, 0.0) : it->second;
  }

 private:
  static AmplitudeMap to_map(std::vector<std::pair<OccupationVector, complexd>> terms) {
    AmplitudeMap amps;
    for (auto& [occ, amp] : terms) amps[occ] += amp;
    return amps;
  }

  int mode_count_;
  AmplitudeMap amplitudes_;
};

// The d unknown phases, radians, wrapped into [-pi, pi). Mode 0 of any state
// is the gauge reference and carries phase 0.
class PhaseVector {
 public:
  PhaseVector() = default;

  explicit PhaseVector(std::vector<double> phases) : phases_(std::move(phases)) {
    for (double& p : phases_) p = wrap_phase(p);
  }

  PhaseVector(std::initializer_list<double> phases)
      : PhaseVector(std::vector<double>(phases)) {}

  static PhaseVector zeros(int d) { return PhaseVector(std::vector<double>(d, 0.0)); }

  int size() const { return static_cast<int>(phases_.size()); }
  double operator[](int i) const { return phases_.at(i); }
  const std::vector<double>& values() const { return phases_; }

  PhaseVector shifted(int axis, double delta) const {
    std::vector<double> p = phases_;
    p.at(axis) = wrap_phase(p.at(axis) + delta);
    return PhaseVector(std::move(p));
  }

  PhaseVector concat(const PhaseVector& tail) const {
    std::vector<double> p = phases_;
    p.insert(p.end(), tail.phases_.begin(), tail.phases_.end());
    return PhaseVector(std::move(p));
  }

  friend PhaseVector operator+(const PhaseVector& a, const PhaseVector& b) {
    if (a.size() != b.size()) throw DimensionError("PhaseVector: size mismatch in +");
    std::vector<double> p(a.phases_);
    for (int i = 0; i < b.size(); ++i) p[i] += b.phases_[i];
    return PhaseVector(std::move(p));
  }

 private:
  std::vector<double> phases_;
};

// U(phi) = exp(i sum_j phi_j N_j) over probing modes j = 1..d; mode 0 is the
// unshifted reference, so phases.size() must equal mode_count - 1.
inline FockState apply_phases(const FockState& state, const PhaseVector& phases) {
  if (phases.size() != state.mode_count() - 1)
    throw DimensionError("apply_phases: expected " + std::to_string(state.mode_count() - 1) +
                         " phases, got " + std::to_string(phases.size()));
  FockState::AmplitudeMap out;
  for (const auto& [occ, amp] : state.amplitudes()) {
    double angle = 0.0;
    for (int j = 1; j < state.mode_count(); ++j) angle += phases[j - 1] * occ[j];
    out.emplace(occ, amp * std::polar(1.0, angle));
  }
  return FockState(state.mode_count(), std::move(out));
}

// <N_mode>.
inline double number_expectation(const FockState& state, int mode) {
  if (mode < 0 || mode >= state.mode_count())
    throw std::out_of_range("number_expectation: bad mode index");
  double e = 0.0;
  for (const auto& [occ, amp] : state.amplitudes()) e += std::norm(amp) * occ[mode];
  return e;
}

// Cov(N_i, N_j) = <N_i N_j> - <N_i><N_j>. Number operators commute in the
// Fock basis, so the symmetrized product reduces to the plain one.
inline double number_covariance(const FockState& state, int mode_i, int mode_j) {
  if (mode_i < 0 || mode_i >= state.mode_count() || mode_j < 0 || mode_j >= state.mode_count())
    throw std::out_of_range("number_covariance: bad mode index");
  double eij = 0.0, ei = 0.0, ej = 0.0;
  for (const auto& [occ, amp] : state.amplitudes()) {
    const double p = std::norm(amp);
    eij += p * occ[mode_i] * occ[mode_j];
    ei += p * occ[mode_i];
    ej += p * occ[mode_j];
  }
  return eij - ei * ej;
}

// <a|b> over the union of supports.
inline complexd inner_product(const FockState& a, const FockState& b) {
  if (a.mode_count() != b.mode_count())
    throw DimensionError("inner_product: mode_count mismatch");
  // Iterate the smaller support.
  const FockState& small = a.amplitudes().size() <= b.amplitudes().size() ? a : b;
  const FockState& large = a.amplitudes().size() <= b.amplitudes().size() ? b : a;
  complexd acc(0.0, 0.0);
  for (const auto& [occ, amp] : small.amplitudes()) {
    const complexd other = large.amplitude(occ);
    if (&small == &a)
      acc += std::conj(amp) * other;
    else
      acc += std::conj(other) * amp;
  }
  return acc;
}

}  // namespace multiphase
