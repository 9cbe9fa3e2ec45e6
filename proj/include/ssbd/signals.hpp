#pragma once

// Signal model primitives. Public formulas are written 1-indexed (out(i) = ...)
// as in the usual statement of the model; storage is 0-indexed and the
// conversion lives entirely in this file.

#include <ssbd/core.hpp>
#include <ssbd/rng.hpp>

#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

namespace ssbd {

/// Unit-norm short filter a0 in R^k, k >= 2.
class Kernel {
 public:
  /// Projects `v` onto the sphere.
  static Kernel from_values(const Vector& v) {
    if (v.size() < 2) throw ParameterError("Kernel", "kernel length must be >= 2");
    return Kernel(normalized(v, "Kernel"));
  }
  /// e_1 in R^k.
  static Kernel delta(Index k) {
    Vector v = Vector::Zero(k);
    if (k >= 1) v[0] = 1.0;
    return from_values(v);
  }

  const Vector& values() const noexcept { return values_; }
  Index k() const noexcept { return values_.size(); }

 private:
  explicit Kernel(Vector v) : values_(std::move(v)) {}
  Vector values_;
};

/// Bernoulli-Gaussian activation x0(i) = mask(i) * gauss(i).
struct SparseSignal {
  std::vector<std::uint8_t> mask;
  Vector gauss;
  double theta = 0.0;
  std::uint64_t seed = 0;

  Index m() const noexcept { return gauss.size(); }
  Vector values() const {
    Vector x(gauss.size());
    for (Index i = 0; i < x.size(); ++i) x[i] = mask[static_cast<std::size_t>(i)] ? gauss[i] : 0.0;
    return x;
  }
  Index support_count() const {
    Index c = 0;
    for (auto b : mask) c += b ? 1 : 0;
    return c;
  }
};

/// Observation y in R^m together with the kernel length it is analysed with.
struct Observation {
  Vector y;
  Index k = 0;

  Index m() const noexcept { return y.size(); }

  static Observation make(Vector y, Index k) {
    if (k < 2) throw ParameterError("Observation", "kernel length k must be >= 2");
    if (y.size() <= 2 * k)
      throw DimensionError("Observation", "need m > 2k (m=" + std::to_string(y.size()) + ", k=" + std::to_string(k) + ")");
    return Observation{std::move(y), k};
  }
};

namespace detail {
inline Index mod(std::int64_t a, Index m) {
  const std::int64_t r = a % static_cast<std::int64_t>(m);
  return static_cast<Index>(r < 0 ? r + m : r);
}
}  // namespace detail

/// out(i) = v([i - tau - 1]_m + 1).
inline Vector cyclic_shift(const Vector& v, std::int64_t tau) {
  const Index m = v.size();
  require_dims(m >= 1, "cyclic_shift", "empty vector");
  const Index s = detail::mod(tau, m);
  Vector out(m);
  out.tail(m - s) = v.head(m - s);
  out.head(s) = v.tail(s);
  return out;
}

/// [v1, v_m, v_{m-1}, ..., v2].
inline Vector reverse(const Vector& v) {
  const Index m = v.size();
  require_dims(m >= 1, "reverse", "empty vector");
  Vector out(m);
  out[0] = v[0];
  for (Index i = 1; i < m; ++i) out[i] = v[m - i];
  return out;
}

/// Zero padding iota_k : R^k -> R^m.
inline Vector zero_pad(const Vector& a, Index m) {
  require_dims(m >= a.size(), "zero_pad", "target length " + std::to_string(m) + " < " + std::to_string(a.size()));
  Vector out = Vector::Zero(m);
  out.head(a.size()) = a;
  return out;
}

/// Adjoint of zero_pad: keep the first k entries.
inline Vector truncate(const Vector& v, Index k) {
  require_dims(k <= v.size() && k >= 0, "truncate", "k=" + std::to_string(k) + " exceeds length " + std::to_string(v.size()));
  return v.head(k);
}

/// Cyclic convolution y(j) = sum_{i=1..k} a(i) x([j-i]_m + 1), computed directly in O(mk).
inline Vector convolve(const Vector& a, const Vector& x) {
  const Index k = a.size(), m = x.size();
  require_dims(k >= 1 && m >= k, "convolve", "need 1 <= k <= m (k=" + std::to_string(k) + ", m=" + std::to_string(m) + ")");
  Vector y = Vector::Zero(m);
  for (Index i = 0; i < k; ++i) {
    y.segment(i, m - i) += a[i] * x.head(m - i);
    if (i > 0) y.head(i) += a[i] * x.tail(i);
  }
  return y;
}

inline Observation convolve(const Kernel& a, const Vector& x) {
  require_dims(x.size() >= a.k(), "convolve", "signal shorter than kernel");
  return Observation{convolve(a.values(), x), a.k()};
}

/// out(i) = <y_i, w> with y_i = [y_i, ..., y_{1+[i+k-1]_m}] the i-th cyclic
/// window, i.e. Y^T w without forming Y.
inline Vector correlate_windows(const Vector& y, const Vector& w) {
  const Index m = y.size(), k = w.size();
  require_dims(k >= 1 && k <= m, "correlate_windows", "window length must be in [1, m]");
  Vector out = Vector::Zero(m);
  for (Index j = 0; j < k; ++j) {
    out.head(m - j) += w[j] * y.segment(j, m - j);
    if (j > 0) out.tail(j) += w[j] * y.head(j);
  }
  return out;
}

/// Adjoint of correlate_windows: sum_i eta_i y_i = Y eta.
inline Vector scatter_windows(const Vector& y, const Vector& eta, Index k) {
  const Index m = y.size();
  require_dims(eta.size() == m, "scatter_windows", "eta must have length m");
  require_dims(k >= 1 && k <= m, "scatter_windows", "window length must be in [1, m]");
  Vector out(k);
  for (Index j = 0; j < k; ++j) {
    double s = eta.head(m - j).dot(y.segment(j, m - j));
    if (j > 0) s += eta.tail(j).dot(y.head(j));
    out[j] = s;
  }
  return out;
}

inline Vector correlate_windows(const Observation& y, const Vector& w) {
  require_dims(w.size() == y.k, "correlate_windows", "w must have length k");
  return correlate_windows(y.y, w);
}

inline Vector scatter_windows(const Observation& y, const Vector& eta) { return scatter_windows(y.y, eta, y.k); }

/// i-th cyclic window (0-based index) of length k.
inline Vector window(const Vector& y, Index i, Index k) {
  const Index m = y.size();
  Vector w(k);
  for (Index j = 0; j < k; ++j) w[j] = y[(i + j) % m];
  return w;
}

/// x0 ~ BG(theta): all m Bernoulli draws first, then m Gaussians (one per
/// position, masked), so support and values are reproducible independently.
inline SparseSignal sample_bg(Index m, double theta, std::uint64_t seed) {
  if (!(theta > 0.0 && theta < 1.0)) throw ParameterError("sample_bg", "theta must lie in (0,1), got " + std::to_string(theta));
  if (m < 1) throw ParameterError("sample_bg", "m must be >= 1");
  Rng rng(seed);
  SparseSignal s;
  s.theta = theta;
  s.seed = seed;
  s.mask.resize(static_cast<std::size_t>(m));
  for (auto& b : s.mask) b = rng.uniform() < theta ? 1 : 0;
  s.gauss.resize(m);
  for (Index i = 0; i < m; ++i) s.gauss[i] = rng.normal();
  return s;
}

enum class KernelFamily { Generic, Bandpass, Delta };

inline std::string to_string(KernelFamily f) {
  switch (f) {
    case KernelFamily::Generic: return "generic";
    case KernelFamily::Bandpass: return "bandpass";
    case KernelFamily::Delta: return "delta";
  }
  return "generic";
}

inline KernelFamily parse_family(const std::string& s) {
  if (s == "generic") return KernelFamily::Generic;
  if (s == "bandpass") return KernelFamily::Bandpass;
  if (s == "delta") return KernelFamily::Delta;
  throw ParameterError("kernel family", "unknown family '" + s + "' (expected generic, bandpass or delta)");
}

/// Uniform draw from the unit sphere in R^k.
inline Kernel random_kernel(Index k, Rng& rng) {
  Vector v(k);
  for (Index i = 0; i < k; ++i) v[i] = rng.normal();
  return Kernel::from_values(v);
}

/// Band-pass kernel. With N = floor(k/2), the DFT of the kernel is supported
/// on bins f in [max(1, floor(N/3)), floor(2N/3)] (the middle third of the
/// non-negative frequencies); each bin gets independent N(0,1) cosine and sine
/// coefficients, the real signal is synthesised by a direct sum, then
/// normalised.
inline Kernel bandpass_kernel(Index k, Rng& rng) {
  const Index n_half = k / 2;
  const Index lo = std::max<Index>(1, n_half / 3);
  const Index hi = std::max<Index>(lo, (2 * n_half) / 3);
  Vector v = Vector::Zero(k);
  for (Index f = lo; f <= hi; ++f) {
    const double c = rng.normal(), s = rng.normal();
    for (Index n = 0; n < k; ++n) {
      const double ph = 2.0 * std::numbers::pi * static_cast<double>(f * n) / static_cast<double>(k);
      v[n] += c * std::cos(ph) + s * std::sin(ph);
    }
  }
  return Kernel::from_values(v);
}

inline Kernel make_kernel(KernelFamily family, Index k, Rng& rng) {
  switch (family) {
    case KernelFamily::Bandpass: return bandpass_kernel(k, rng);
    case KernelFamily::Delta: return Kernel::delta(k);
    case KernelFamily::Generic: break;
  }
  return random_kernel(k, rng);
}

/// A synthetic problem instance drawn from one seed.
struct Instance {
  Kernel kernel;
  SparseSignal x0;
  Observation y;
};

inline Instance generate_instance(Index k, double theta, Index m, std::uint64_t seed,
                                  KernelFamily family = KernelFamily::Generic) {
  Rng krng(derive_seed(seed, {0}));
  Kernel a0 = make_kernel(family, k, krng);
  SparseSignal x0 = sample_bg(m, theta, derive_seed(seed, {1}));
  Observation y = convolve(a0, x0.values());
  return Instance{std::move(a0), std::move(x0), std::move(y)};
}

}  // namespace ssbd
