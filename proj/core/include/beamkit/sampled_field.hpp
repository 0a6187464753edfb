#pragma once

#include <complex>
#include <iosfwd>
#include <string>
#include <vector>

namespace beamkit::prop {

// Complex field samples on a regular lattice with physical spacing.
// ny == 1 means a 1-D line along x.  Values are row-major (y outer, x inner)
// and dimensionless (normalized to the on-axis focal value).
class SampledField {
 public:
  SampledField(double x0, double dx, int nx);                            // 1-D
  SampledField(double x0, double y0, double dx, double dy, int nx, int ny);

  bool is_1d() const { return ny_ == 1; }
  int nx() const { return nx_; }
  int ny() const { return ny_; }
  double dx() const { return dx_; }
  double dy() const { return dy_; }
  double x(int i) const { return x0_ + i * dx_; }
  double y(int j) const { return y0_ + j * dy_; }

  std::complex<double>& at(int i, int j = 0) { return values_[static_cast<size_t>(j) * nx_ + i]; }
  const std::complex<double>& at(int i, int j = 0) const {
    return values_[static_cast<size_t>(j) * nx_ + i];
  }
  std::vector<std::complex<double>>& values() { return values_; }
  const std::vector<std::complex<double>>& values() const { return values_; }

  double peak_modulus() const;
  double boundary_modulus() const;  // max |value| on the outermost samples

  // One-line JSON header (grid geometry, shape, payload encoding) followed by
  // the samples as little-endian float64 interleaved (re, im), row-major.
  void write_file(const std::string& path) const;
  static SampledField read_file(const std::string& path);

  // Two/three-column CSV "x,re,im"; 1-D fields only.
  void write_csv(std::ostream& os) const;

 private:
  double x0_ = 0.0, y0_ = 0.0;
  double dx_ = 1.0, dy_ = 1.0;
  int nx_ = 0, ny_ = 1;
  std::vector<std::complex<double>> values_;
};

}  // namespace beamkit::prop
