#pragma once

#include <complex>
#include <cstddef>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "avsa/audio.h"
#include "avsa/toeplitz.h"

namespace avsa {

struct BssEvalConfig {
  size_t filter_len = 512;
  double clamp_db = 300.0;
  // Search all m! estimate/reference assignments for the best mean SIR.
  bool compute_permutation = true;

  void validate() const;
};

inline constexpr size_t kMaxPermutationSources = 8;
// Residual energies below this fraction of the signal energy are beyond the
// solver's resolution (ridge-limited) and treated as exact zeros.
inline constexpr double kDegenerateEnergyRatio = 1e-10;
inline constexpr double kRidgeScale = 1e-10;

// Least-squares projection onto all delays 0..L-1 of a set of basis signals.
// Signals live in the zero-padded domain of length N + L - 1. The Gram
// system is factored once; each projection costs a few FFTs and a solve.
class ProjectionBasis {
 public:
  ProjectionBasis(const std::vector<std::span<const double>>& bases, size_t filter_len);

  size_t signal_length() const { return length_; }
  size_t padded_length() const { return length_ + filter_len_ - 1; }
  // True when the Levinson recursion was abandoned for a dense solve, or the
  // Cholesky factorization needed its pivoted fallback.
  bool used_fallback() const { return used_fallback_; }
  double ridge() const { return ridge_; }

  std::vector<double> project(std::span<const double> estimate) const;
  // Same, reusing a precomputed half spectrum of the zero-padded estimate.
  std::vector<double> project_spectrum(const std::vector<std::complex<double>>& est_fft) const;
  std::vector<std::complex<double>> spectrum(std::span<const double> signal) const;
  size_t fft_size() const { return nfft_; }

 private:
  size_t length_ = 0;
  size_t filter_len_ = 0;
  size_t nfft_ = 0;
  std::vector<std::vector<std::complex<double>>> base_fft_;
  // Single basis: Toeplitz column (ridge included). Multiple: dense Cholesky.
  std::vector<double> toeplitz_col_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  Eigen::LDLT<Eigen::MatrixXd> ldlt_;
  bool use_ldlt_ = false;
  double ridge_ = 0.0;
  mutable bool used_fallback_ = false;
};

// Projection of `estimate` (length N) onto the delays of `bases`; the result
// has the padded length N + L - 1.
AudioClip project(const AudioClip& estimate, const std::vector<AudioClip>& bases, size_t filter_len);

struct Decomposition {
  std::vector<double> target;
  std::vector<double> interference;
  std::vector<double> artifact;
};

Decomposition decompose(const AudioClip& estimate, const std::vector<AudioClip>& references,
                        size_t target_index, size_t filter_len);

struct SourceMetrics {
  double sdr_db = 0.0;
  double sir_db = 0.0;
  double sar_db = 0.0;
  size_t estimate_index = 0;
  bool visible = true;
};

// Indexed by reference (source). permutation[e] is the reference assigned to
// estimate e.
struct SeparationReport {
  std::vector<SourceMetrics> sources;
  std::vector<size_t> permutation;
  bool solver_fallback = false;
};

double safe_db(double numerator, double denominator, double clamp_db);

SourceMetrics metrics_from_decomposition(const Decomposition& d, double clamp_db);

SeparationReport bss_eval(const std::vector<AudioClip>& references,
                          const std::vector<AudioClip>& estimates, const BssEvalConfig& cfg);

// Reference-set cache for scoring estimates whose target is known.
class SourceScorer {
 public:
  SourceScorer(const std::vector<AudioClip>& references, const BssEvalConfig& cfg);
  SourceMetrics score(const AudioClip& estimate, size_t target_index) const;
  Decomposition decompose(const AudioClip& estimate, size_t target_index) const;
  bool solver_fallback() const;

 private:
  BssEvalConfig cfg_;
  size_t length_ = 0;
  ProjectionBasis all_;
  std::vector<ProjectionBasis> singles_;
};

void write_metrics_csv_header(std::ostream& os);
void write_metrics_csv(std::ostream& os, const std::string& mixture_id,
                       const SeparationReport& report);
std::string format_double(double v);

nlohmann::json to_json(const SeparationReport& report);

}  // namespace avsa
