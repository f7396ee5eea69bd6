#include "avsa/bss_eval.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include <unsupported/Eigen/FFT>

#include "avsa/error.h"

namespace avsa {

void BssEvalConfig::validate() const {
  if (filter_len < 1) throw ConfigError("bss_eval filter_len must be >= 1");
  if (!std::isfinite(clamp_db) || clamp_db <= 0.0) throw ConfigError("clamp_db must be finite and positive");
}

namespace {

size_t next_pow2(size_t n) {
  size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// Cross-correlation R(k) = sum_u a[u] b[u + k] for k in [-(L-1), L-1],
// returned as R(k) at index k + L - 1.
std::vector<double> correlate(const std::vector<std::complex<double>>& fa,
                              const std::vector<std::complex<double>>& fb, size_t nfft,
                              size_t filter_len, Eigen::FFT<double>& fft) {
  std::vector<std::complex<double>> prod(fa.size());
  for (size_t i = 0; i < fa.size(); ++i) prod[i] = std::conj(fa[i]) * fb[i];
  std::vector<double> circ;
  fft.inv(circ, prod, static_cast<Eigen::Index>(nfft));
  std::vector<double> out(2 * filter_len - 1);
  for (size_t k = 0; k < filter_len; ++k) {
    out[filter_len - 1 + k] = circ[k];
    out[filter_len - 1 - k] = circ[(nfft - k) % nfft];
  }
  return out;
}

}  // namespace

ProjectionBasis::ProjectionBasis(const std::vector<std::span<const double>>& bases,
                                 size_t filter_len)
    : filter_len_(filter_len) {
  if (bases.empty()) throw LengthError("projection needs at least one basis signal");
  if (filter_len == 0) throw ConfigError("filter length must be >= 1");
  length_ = bases.front().size();
  for (size_t i = 0; i < bases.size(); ++i) {
    if (bases[i].size() != length_) throw LengthError("basis signals differ in length");
    if (energy(bases[i]) <= 0.0)
      throw DataError("basis signal " + std::to_string(i) + " is silent");
  }
  nfft_ = next_pow2(padded_length());
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  for (const auto& b : bases) base_fft_.push_back(spectrum(b));

  const size_t m = bases.size();
  const size_t L = filter_len_;
  if (m == 1) {
    const std::vector<double> r = correlate(base_fft_[0], base_fft_[0], nfft_, L, fft);
    toeplitz_col_.assign(r.begin() + static_cast<long>(L - 1), r.end());
    ridge_ = kRidgeScale * toeplitz_col_[0];
    toeplitz_col_[0] += ridge_;
    return;
  }

  const auto dim = static_cast<Eigen::Index>(m * L);
  Eigen::MatrixXd gram(dim, dim);
  for (size_t i = 0; i < m; ++i) {
    for (size_t j = i; j < m; ++j) {
      const std::vector<double> r = correlate(base_fft_[i], base_fft_[j], nfft_, L, fft);
      // G[(i,a),(j,c)] = R_ij(a - c).
      for (size_t a = 0; a < L; ++a) {
        for (size_t c = 0; c < L; ++c) {
          const double v = r[L - 1 + a - c];
          gram(static_cast<Eigen::Index>(i * L + a), static_cast<Eigen::Index>(j * L + c)) = v;
          gram(static_cast<Eigen::Index>(j * L + c), static_cast<Eigen::Index>(i * L + a)) = v;
        }
      }
    }
  }
  ridge_ = kRidgeScale * gram.trace() / static_cast<double>(dim);
  gram.diagonal().array() += ridge_;
  llt_.compute(gram);
  if (llt_.info() != Eigen::Success) {
    use_ldlt_ = true;
    used_fallback_ = true;
    ldlt_.compute(gram);
    if (ldlt_.info() != Eigen::Success) throw NumericError("Gram system factorization failed");
  }
}

std::vector<std::complex<double>> ProjectionBasis::spectrum(std::span<const double> signal) const {
  if (signal.size() > nfft_) throw LengthError("signal longer than projection FFT size");
  std::vector<double> padded(nfft_, 0.0);
  std::copy(signal.begin(), signal.end(), padded.begin());
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<std::complex<double>> out;
  fft.fwd(out, padded);
  return out;
}

std::vector<double> ProjectionBasis::project(std::span<const double> estimate) const {
  if (estimate.size() != length_)
    throw LengthError("estimate has " + std::to_string(estimate.size()) +
                      " samples, bases have " + std::to_string(length_));
  return project_spectrum(spectrum(estimate));
}

std::vector<double> ProjectionBasis::project_spectrum(
    const std::vector<std::complex<double>>& est_fft) const {
  const size_t m = base_fft_.size();
  const size_t L = filter_len_;
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);

  // D[(i,a)] = R_{i,est}(a).
  std::vector<double> rhs(m * L);
  for (size_t i = 0; i < m; ++i) {
    const std::vector<double> r = correlate(base_fft_[i], est_fft, nfft_, L, fft);
    for (size_t a = 0; a < L; ++a) rhs[i * L + a] = r[L - 1 + a];
  }

  std::vector<double> coef;
  if (m == 1) {
    ToeplitzSolve sol = toeplitz_solve(toeplitz_col_, rhs);
    if (sol.used_dense) used_fallback_ = true;
    coef = std::move(sol.x);
  } else {
    Eigen::Map<const Eigen::VectorXd> b(rhs.data(), static_cast<Eigen::Index>(rhs.size()));
    Eigen::VectorXd x = use_ldlt_ ? Eigen::VectorXd(ldlt_.solve(b)) : Eigen::VectorXd(llt_.solve(b));
    coef.assign(x.data(), x.data() + x.size());
  }
  for (double c : coef)
    if (!std::isfinite(c)) throw NumericError("projection produced non-finite filter taps");

  // Filter each basis by its taps and sum, in the frequency domain.
  std::vector<std::complex<double>> acc(base_fft_[0].size(), 0.0);
  std::vector<double> taps(nfft_, 0.0);
  std::vector<std::complex<double>> taps_fft;
  for (size_t i = 0; i < m; ++i) {
    std::fill(taps.begin(), taps.end(), 0.0);
    std::copy(coef.begin() + static_cast<long>(i * L), coef.begin() + static_cast<long>((i + 1) * L),
              taps.begin());
    fft.fwd(taps_fft, taps);
    for (size_t k = 0; k < acc.size(); ++k) acc[k] += taps_fft[k] * base_fft_[i][k];
  }
  std::vector<double> out;
  fft.inv(out, acc, static_cast<Eigen::Index>(nfft_));
  out.resize(padded_length());
  return out;
}

AudioClip project(const AudioClip& estimate, const std::vector<AudioClip>& bases, size_t filter_len) {
  std::vector<std::span<const double>> spans;
  for (const AudioClip& b : bases) spans.emplace_back(b.samples);
  ProjectionBasis basis(spans, filter_len);
  return AudioClip(basis.project(estimate.samples), estimate.sample_rate);
}

double safe_db(double numerator, double denominator, double clamp_db) {
  if (numerator <= 0.0) return -clamp_db;
  if (denominator <= kDegenerateEnergyRatio * numerator) return clamp_db;
  const double v = 10.0 * std::log10(numerator / denominator);
  return std::clamp(v, -clamp_db, clamp_db);
}

SourceMetrics metrics_from_decomposition(const Decomposition& d, double clamp_db) {
  const size_t n = d.target.size();
  double e_target = 0.0, e_interf = 0.0, e_artif = 0.0, e_distort = 0.0, e_proj = 0.0;
  for (size_t i = 0; i < n; ++i) {
    e_target += d.target[i] * d.target[i];
    e_interf += d.interference[i] * d.interference[i];
    e_artif += d.artifact[i] * d.artifact[i];
    const double distort = d.interference[i] + d.artifact[i];
    e_distort += distort * distort;
    const double proj = d.target[i] + d.interference[i];
    e_proj += proj * proj;
  }
  SourceMetrics m;
  m.sdr_db = safe_db(e_target, e_distort, clamp_db);
  m.sir_db = safe_db(e_target, e_interf, clamp_db);
  m.sar_db = safe_db(e_proj, e_artif, clamp_db);
  return m;
}

namespace {

Decomposition decompose_with(std::span<const double> estimate,
                             const std::vector<double>& single_proj,
                             const std::vector<double>& all_proj) {
  const size_t n = all_proj.size();
  Decomposition d;
  d.target = single_proj;
  d.interference.resize(n);
  d.artifact.resize(n);
  for (size_t i = 0; i < n; ++i) {
    const double est = i < estimate.size() ? estimate[i] : 0.0;
    d.interference[i] = all_proj[i] - single_proj[i];
    d.artifact[i] = est - all_proj[i];
  }
  return d;
}

std::vector<ProjectionBasis> single_bases(const std::vector<AudioClip>& refs, size_t L) {
  std::vector<ProjectionBasis> out;
  out.reserve(refs.size());
  for (const AudioClip& r : refs) out.emplace_back(std::vector<std::span<const double>>{r.samples}, L);
  return out;
}

ProjectionBasis joint_basis(const std::vector<AudioClip>& refs, size_t L) {
  std::vector<std::span<const double>> spans;
  for (const AudioClip& r : refs) spans.emplace_back(r.samples);
  return ProjectionBasis(spans, L);
}

void check_references(const std::vector<AudioClip>& refs) {
  if (refs.empty()) throw LengthError("bss_eval needs at least one reference");
  for (size_t j = 0; j < refs.size(); ++j) {
    validate_clip(refs[j]);
    if (refs[j].size() != refs.front().size()) throw LengthError("references differ in length");
    if (energy(refs[j].samples) <= 0.0)
      throw DataError("metric error: reference " + std::to_string(j) + " is silent");
  }
}

}  // namespace

Decomposition decompose(const AudioClip& estimate, const std::vector<AudioClip>& references,
                        size_t target_index, size_t filter_len) {
  BssEvalConfig cfg;
  cfg.filter_len = filter_len;
  SourceScorer scorer(references, cfg);
  return scorer.decompose(estimate, target_index);
}

SourceScorer::SourceScorer(const std::vector<AudioClip>& references, const BssEvalConfig& cfg)
    : cfg_(cfg),
      length_((check_references(references), references.front().size())),
      all_(joint_basis(references, cfg.filter_len)),
      singles_(single_bases(references, cfg.filter_len)) {
  cfg_.validate();
}

Decomposition SourceScorer::decompose(const AudioClip& estimate, size_t target_index) const {
  if (target_index >= singles_.size()) throw ShapeError("target index out of range");
  if (estimate.size() != length_)
    throw LengthError("estimate has " + std::to_string(estimate.size()) + " samples, references have " +
                      std::to_string(length_));
  for (double v : estimate.samples)
    if (!std::isfinite(v)) throw DataError("estimate contains non-finite samples");
  const auto est_fft = all_.spectrum(estimate.samples);
  return decompose_with(estimate.samples, singles_[target_index].project_spectrum(est_fft),
                        all_.project_spectrum(est_fft));
}

SourceMetrics SourceScorer::score(const AudioClip& estimate, size_t target_index) const {
  SourceMetrics m = metrics_from_decomposition(decompose(estimate, target_index), cfg_.clamp_db);
  m.estimate_index = target_index;
  return m;
}

bool SourceScorer::solver_fallback() const {
  bool f = all_.used_fallback();
  for (const auto& s : singles_) f = f || s.used_fallback();
  return f;
}

SeparationReport bss_eval(const std::vector<AudioClip>& references,
                          const std::vector<AudioClip>& estimates, const BssEvalConfig& cfg) {
  cfg.validate();
  const size_t m = references.size();
  if (estimates.size() != m)
    throw LengthError("bss_eval: " + std::to_string(estimates.size()) + " estimates for " +
                      std::to_string(m) + " references");
  if (m > kMaxPermutationSources)
    throw ConfigError("bss_eval: refusing permutation search over " + std::to_string(m) +
                      " sources (max " + std::to_string(kMaxPermutationSources) + ")");
  SourceScorer scorer(references, cfg);

  // metrics[e][j]: estimate e scored against reference j.
  std::vector<std::vector<SourceMetrics>> metrics(m, std::vector<SourceMetrics>(m));
  for (size_t e = 0; e < m; ++e) {
    for (size_t j = 0; j < m; ++j) {
      if (!cfg.compute_permutation && e != j) continue;
      metrics[e][j] = scorer.score(estimates[e], j);
      metrics[e][j].estimate_index = e;
    }
  }

  // best[j] = estimate assigned to reference j.
  std::vector<size_t> perm(m);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<size_t> best = perm;
  if (cfg.compute_permutation) {
    double best_score = -std::numeric_limits<double>::infinity();
    do {
      double score = 0.0;
      for (size_t j = 0; j < m; ++j) score += metrics[perm[j]][j].sir_db;
      score /= static_cast<double>(m);
      if (score > best_score) {
        best_score = score;
        best = perm;
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
  }

  SeparationReport report;
  report.sources.resize(m);
  report.permutation.resize(m);
  for (size_t j = 0; j < m; ++j) {
    report.sources[j] = metrics[best[j]][j];
    report.permutation[best[j]] = j;
  }
  report.solver_fallback = scorer.solver_fallback();
  return report;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

void write_metrics_csv_header(std::ostream& os) {
  os << "mixture_id,source_id,visibility,sdr_db,sir_db,sar_db,perm_index\n";
}

void write_metrics_csv(std::ostream& os, const std::string& mixture_id,
                       const SeparationReport& report) {
  for (size_t j = 0; j < report.sources.size(); ++j) {
    const SourceMetrics& s = report.sources[j];
    os << mixture_id << ',' << j << ',' << (s.visible ? "visible" : "invisible") << ','
       << format_double(s.sdr_db) << ',' << format_double(s.sir_db) << ','
       << format_double(s.sar_db) << ',' << s.estimate_index << '\n';
  }
}

nlohmann::json to_json(const SeparationReport& report) {
  nlohmann::json j;
  j["permutation"] = report.permutation;
  j["solver_fallback"] = report.solver_fallback;
  nlohmann::json sources = nlohmann::json::array();
  for (size_t s = 0; s < report.sources.size(); ++s) {
    const SourceMetrics& m = report.sources[s];
    sources.push_back({{"source_id", s},
                       {"visibility", m.visible ? "visible" : "invisible"},
                       {"sdr_db", m.sdr_db},
                       {"sir_db", m.sir_db},
                       {"sar_db", m.sar_db},
                       {"perm_index", m.estimate_index}});
  }
  j["sources"] = sources;
  return j;
}

}  // namespace avsa
