#include "tandem/spectral.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <numeric>
#include <ostream>

#include <json.hpp>

#include "tandem/errors.hpp"

namespace tandem {
namespace {

Tensor ones_like(const Tensor& x) { return Tensor(x.rows(), x.cols(), 1.0); }

Tensor select_columns(const Tensor& x, std::span<const std::size_t> cols) {
  Tensor out(x.rows(), cols.size());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < cols.size(); ++c) out(r, c) = x(r, cols[c]);
  return out;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
  return out;
}

double mean_of(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::string fmt(double v) {
  char buf[64];
  const auto end = std::to_chars(buf, buf + sizeof buf, v).ptr;  // shortest round-trip
  return std::string(buf, end);
}

}  // namespace

std::vector<std::size_t> top_variant_features(const Tensor& x, std::size_t k) {
  if (x.rows() == 0 || x.cols() == 0) throw SpectralError("variance ranking of an empty matrix");
  const std::size_t n = x.rows();
  std::vector<double> var(x.cols(), 0.0);
  for (std::size_t c = 0; c < x.cols(); ++c) {
    double m = 0.0;
    for (std::size_t r = 0; r < n; ++r) m += x(r, c);
    m /= static_cast<double>(n);
    double s = 0.0;
    for (std::size_t r = 0; r < n; ++r) s += (x(r, c) - m) * (x(r, c) - m);
    var[c] = s / static_cast<double>(n);
  }
  std::vector<std::size_t> idx(x.cols());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return var[a] > var[b]; });
  idx.resize(std::min(k, idx.size()));
  return idx;
}

Tensor aggregate_osdt_gate(const Tensor& x, const OsdtEncoder& enc) {
  if (x.cols() != enc.dim())
    throw ShapeError("input has " + std::to_string(x.cols()) + " features, encoder expects " +
                     std::to_string(enc.dim()));
  return enc.aggregate_gate(x);
}

std::vector<double> dft_magnitudes(std::span<const double> v) {
  const std::size_t f = v.size();
  if (f < 2) throw SpectralError("spectrum needs at least 2 features, got " + std::to_string(f));
  // exp(-2 pi i p / F) for p < F; quarter turns are exact so that, e.g., a
  // constant signal has exactly zero energy off DC.
  std::vector<std::complex<double>> tw(f);
  const double w = -2.0 * std::numbers::pi / static_cast<double>(f);
  for (std::size_t p = 0; p < f; ++p) {
    if ((4 * p) % f == 0) {
      static constexpr std::complex<double> quarter[4] = {{1, 0}, {0, -1}, {-1, 0}, {0, 1}};
      tw[p] = quarter[(4 * p) / f];
    } else {
      tw[p] = std::polar(1.0, w * static_cast<double>(p));
    }
  }
  std::vector<double> out(f);
  for (std::size_t k = 0; k < f; ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t d = 0; d < f; ++d) acc += v[d] * tw[(k * d) % f];
    out[k] = std::abs(acc);
  }
  return out;
}

std::vector<double> one_sided_spectrum(std::span<const double> v) {
  auto full = dft_magnitudes(v);
  full.resize(v.size() / 2 + 1);
  return full;
}

double parseval_residual(std::span<const double> v) {
  const auto full = dft_magnitudes(v);
  double time = 0.0, freq = 0.0;
  for (double x : v) time += x * x;
  for (double m : full) freq += m * m;
  freq /= static_cast<double>(v.size());
  return std::abs(time - freq) / std::max(time, std::numeric_limits<double>::min());
}

MeanSpectrum mean_spectrum(const Tensor& x) {
  if (x.rows() == 0) throw SpectralError("spectrum of an empty sample set");
  if (x.cols() < 2) throw SpectralError("spectrum needs at least 2 features, got " + std::to_string(x.cols()));
  MeanSpectrum out;
  out.magnitudes.assign(x.cols() / 2 + 1, 0.0);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto row = x.row_span(r);
    const auto full = dft_magnitudes(row);
    double time = 0.0, freq = 0.0;
    for (double v : row) time += v * v;
    for (double m : full) freq += m * m;
    freq /= static_cast<double>(row.size());
    if (time > 0.0) out.max_parseval_residual = std::max(out.max_parseval_residual, std::abs(time - freq) / time);
    else out.max_parseval_residual = std::max(out.max_parseval_residual, freq);
    for (std::size_t k = 0; k < out.magnitudes.size(); ++k) out.magnitudes[k] += full[k];
  }
  for (double& m : out.magnitudes) m /= static_cast<double>(x.rows());
  return out;
}

double high_frequency_mass(std::span<const double> spectrum) {
  if (spectrum.empty()) throw SpectralError("empty spectrum");
  const std::size_t kmax = spectrum.size() - 1;
  double s = 0.0;
  for (std::size_t k = 0; k <= kmax; ++k)
    if (2 * k > kmax) s += spectrum[k];
  return s;
}

SpectralReport spectral_report(const TandemModel& model, const Tensor& x_class, std::size_t k,
                               int class_id) {
  if (x_class.rows() == 0) throw SpectralError("class " + std::to_string(class_id) + " has no samples");
  if (x_class.cols() != model.dims().input_dim)
    throw SpectralError("input has " + std::to_string(x_class.cols()) + " features, model expects " +
                        std::to_string(model.dims().input_dim));
  SpectralReport rep;
  rep.class_id = class_id;
  rep.samples = x_class.rows();
  rep.features = top_variant_features(x_class, k);
  const Tensor g_nn = nn_gate_field(model, x_class);
  const Tensor g_osdt = model.osdt ? aggregate_osdt_gate(x_class, *model.osdt) : ones_like(x_class);
  const MeanSpectrum orig = mean_spectrum(select_columns(x_class, rep.features));
  const MeanSpectrum nn = mean_spectrum(select_columns(hadamard(x_class, g_nn), rep.features));
  const MeanSpectrum os = mean_spectrum(select_columns(hadamard(x_class, g_osdt), rep.features));
  rep.original = orig.magnitudes;
  rep.nn = nn.magnitudes;
  rep.osdt = os.magnitudes;
  rep.max_parseval_residual =
      std::max({orig.max_parseval_residual, nn.max_parseval_residual, os.max_parseval_residual});
  return rep;
}

int best_class(std::span<const int> predicted, std::span<const int> truth, std::size_t num_classes) {
  if (predicted.size() != truth.size()) throw SpectralError("prediction/label length mismatch");
  std::vector<std::size_t> hits(num_classes, 0), count(num_classes, 0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || static_cast<std::size_t>(truth[i]) >= num_classes)
      throw SpectralError("label " + std::to_string(truth[i]) + " outside the class range");
    ++count[truth[i]];
    hits[truth[i]] += predicted[i] == truth[i];
  }
  int best = -1;
  double best_acc = -1.0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (count[c] == 0) continue;
    const double acc = static_cast<double>(hits[c]) / static_cast<double>(count[c]);
    if (acc > best_acc) {
      best_acc = acc;
      best = static_cast<int>(c);
    }
  }
  if (best < 0) throw SpectralError("no class has samples");
  return best;
}

GatingDiagnostics gating_statistics(std::span<const double> nn, std::span<const double> osdt) {
  if (nn.size() != osdt.size()) throw DiagnosticsError("gate fields differ in length");
  if (nn.empty()) throw DiagnosticsError("empty gate fields");
  GatingDiagnostics d;
  d.mean_act_nn = mean_of(nn);
  d.mean_act_osdt = mean_of(osdt);

  std::size_t both = 0, on_nn = 0, on_osdt = 0;
  for (std::size_t i = 0; i < nn.size(); ++i) {
    const bool a = nn[i] > 0.5, b = osdt[i] > 0.5;
    on_nn += a;
    on_osdt += b;
    both += a && b;
  }
  if (on_nn == 0 && on_osdt == 0)
    d.bin_act_sim = 1.0;
  else if (on_nn == 0 || on_osdt == 0)
    d.bin_act_sim = 0.0;
  else
    d.bin_act_sim = static_cast<double>(both) /
                    std::sqrt(static_cast<double>(on_nn) * static_cast<double>(on_osdt));

  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < nn.size(); ++i) {
    const double a = nn[i] - d.mean_act_nn, b = osdt[i] - d.mean_act_osdt;
    sxx += a * a;
    syy += b * b;
    sxy += a * b;
  }
  const bool identical = std::equal(nn.begin(), nn.end(), osdt.begin());
  if (sxx > 0.0 && syy > 0.0)
    d.corr = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  else
    d.corr = identical ? 1.0 : 0.0;
  if (identical && sxx > 0.0) d.corr = 1.0;

  if (sxx > 0.0) {
    d.var_ratio = syy / sxx;
    if (identical) d.var_ratio = 1.0;
  } else if (identical) {
    d.var_ratio = 1.0;
  } else {
    d.var_ratio = std::numeric_limits<double>::infinity();
    d.var_ratio_infinite = true;
  }
  return d;
}

GatingDiagnostics gating_diagnostics(const TandemModel& model, const Tensor& x,
                                     std::span<const std::size_t> features) {
  if (x.rows() == 0) throw DiagnosticsError("diagnostics over an empty sample set");
  if (features.empty()) throw DiagnosticsError("diagnostics over an empty feature subset");
  for (std::size_t f : features)
    if (f >= x.cols()) throw DiagnosticsError("feature index " + std::to_string(f) + " out of range");
  const Tensor g_nn = nn_gate_field(model, x);
  const Tensor g_osdt = model.osdt ? aggregate_osdt_gate(x, *model.osdt) : ones_like(x);
  std::vector<double> a, b;
  a.reserve(x.rows() * features.size());
  b.reserve(x.rows() * features.size());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t f : features) {
      a.push_back(g_nn(r, f));
      b.push_back(g_osdt(r, f));
    }
  return gating_statistics(a, b);
}

std::string report_to_json(const SpectralReport& report) {
  nlohmann::ordered_json j;
  j["class_id"] = report.class_id;
  j["samples"] = report.samples;
  j["features"] = report.features;
  j["original"] = report.original;
  j["nn"] = report.nn;
  j["osdt"] = report.osdt;
  j["high_frequency_mass"] = {{"original", high_frequency_mass(report.original)},
                              {"nn", high_frequency_mass(report.nn)},
                              {"osdt", high_frequency_mass(report.osdt)}};
  j["max_parseval_residual"] = report.max_parseval_residual;
  return j.dump(2) + "\n";
}

std::string diagnostics_to_json(const GatingDiagnostics& d) {
  nlohmann::ordered_json j;
  j["bin_act_sim"] = d.bin_act_sim;
  j["corr"] = d.corr;
  // JSON has no infinity; the flag carries it.
  j["var_ratio"] = d.var_ratio_infinite ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(d.var_ratio);
  j["var_ratio_infinite"] = d.var_ratio_infinite;
  j["mean_act_osdt"] = d.mean_act_osdt;
  j["mean_act_nn"] = d.mean_act_nn;
  return j.dump(2) + "\n";
}

void write_spectrum_csv(std::ostream& out, const SpectralReport& report) {
  out << "kappa,original,nn,osdt\n";
  for (std::size_t k = 0; k < report.original.size(); ++k)
    out << k << ',' << fmt(report.original[k]) << ',' << fmt(report.nn[k]) << ',' << fmt(report.osdt[k])
        << '\n';
}

}  // namespace tandem
