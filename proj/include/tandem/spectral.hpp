#pragma once

// Frequency content of gated inputs and agreement between the two gate fields.
//
// A sample's features, reordered by decreasing variance, are read as a signal
// of length F. Its unnormalized DFT is
//   F(kappa) = | sum_{d<F} v_d exp(-2 pi i kappa d / F) |
// and the one-sided spectrum keeps kappa = 0..floor(F/2).

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "tandem/model.hpp"

namespace tandem {

constexpr std::size_t kSpectralFeatures = 50;

// Indices of the k columns with the largest variance, descending; ties go
// to the lower index. k is clamped to the column count.
std::vector<std::size_t> top_variant_features(const Tensor& x, std::size_t k);

// Mean deterministic tree gate over every tree and level (all ones when the
// encoder is ungated).
Tensor aggregate_osdt_gate(const Tensor& x, const OsdtEncoder& enc);

// Full spectrum, length F. Throws SpectralError when F < 2.
std::vector<double> dft_magnitudes(std::span<const double> signal);
// kappa = 0..floor(F/2).
std::vector<double> one_sided_spectrum(std::span<const double> signal);
// |sum v^2 - (1/F) sum |F(kappa)|^2| / max(sum v^2, tiny).
double parseval_residual(std::span<const double> signal);

struct MeanSpectrum {
  std::vector<double> magnitudes;  // one-sided, averaged over rows
  double max_parseval_residual = 0.0;
};

// Every row of x (already restricted to ranked features) is one signal.
MeanSpectrum mean_spectrum(const Tensor& x);

// Sum of magnitudes for kappa > floor(F/2)/2.
double high_frequency_mass(std::span<const double> spectrum);

struct SpectralReport {
  std::vector<std::size_t> features;
  std::vector<double> original;
  std::vector<double> nn;
  std::vector<double> osdt;
  std::size_t samples = 0;
  int class_id = -1;
  double max_parseval_residual = 0.0;
};

// Builds x, x * g_nn(x) and x * gbar_osdt(x), restricts them to the k most
// variant features of x and averages their spectra. Variants without a gate
// use an all-ones field. Throws SpectralError on an empty class.
SpectralReport spectral_report(const TandemModel& model, const Tensor& x_class, std::size_t k,
                               int class_id);

// Class with the highest per-class accuracy; ties go to the lower class.
// Classes with no samples are skipped. Throws SpectralError when nothing
// qualifies.
int best_class(std::span<const int> predicted, std::span<const int> truth, std::size_t num_classes);

struct GatingDiagnostics {
  double bin_act_sim = 0.0;
  double corr = 0.0;
  double var_ratio = 0.0;
  bool var_ratio_infinite = false;  // neural gate has zero variance
  double mean_act_osdt = 0.0;
  double mean_act_nn = 0.0;
};

// Statistics over two flattened gate fields of equal length.
//   bin_act_sim: cosine of the binarized vectors (1 iff value > 0.5); 1 when
//                both are all zero.
//   corr:        Pearson; 1 for identical constant fields, 0 for other
//                constant fields.
//   var_ratio:   Var(osdt) / Var(nn), population variances; +inf (flagged)
//                when Var(nn) = 0 unless both are zero and identical.
GatingDiagnostics gating_statistics(std::span<const double> nn, std::span<const double> osdt);

// Gate fields over all rows of x and the given feature columns.
GatingDiagnostics gating_diagnostics(const TandemModel& model, const Tensor& x,
                                     std::span<const std::size_t> features);

std::string report_to_json(const SpectralReport& report);
std::string diagnostics_to_json(const GatingDiagnostics& diag);
void write_spectrum_csv(std::ostream& out, const SpectralReport& report);

}  // namespace tandem
