#include "beamkit/fft.hpp"

#include <fftw3.h>

#include <cmath>
#include <mutex>
#include <stdexcept>

namespace beamkit::fft {

namespace {

// FFTW plan creation is not thread-safe; execution of a plan is.
std::mutex plan_mutex;

void transform_2d(std::vector<std::complex<double>>& v, int nx, int ny, int sign) {
  if (nx <= 0 || ny <= 0 || v.size() != static_cast<size_t>(nx) * ny) {
    throw std::invalid_argument("fft: value count does not match grid shape");
  }
  auto* data = reinterpret_cast<fftw_complex*>(v.data());
  fftw_plan plan;
  {
    std::lock_guard<std::mutex> lock(plan_mutex);
    // row-major: FFTW wants the slowest-varying dimension first
    plan = fftw_plan_dft_2d(ny, nx, data, data, sign, FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  {
    std::lock_guard<std::mutex> lock(plan_mutex);
    fftw_destroy_plan(plan);
  }
  if (sign == FFTW_BACKWARD) {
    double scale = 1.0 / (static_cast<double>(nx) * ny);
    for (auto& z : v) z *= scale;
  }
}

}  // namespace

void forward(std::vector<std::complex<double>>& v) {
  transform_2d(v, static_cast<int>(v.size()), 1, FFTW_FORWARD);
}

void inverse(std::vector<std::complex<double>>& v) {
  transform_2d(v, static_cast<int>(v.size()), 1, FFTW_BACKWARD);
}

void forward_2d(std::vector<std::complex<double>>& v, int nx, int ny) {
  transform_2d(v, nx, ny, FFTW_FORWARD);
}

void inverse_2d(std::vector<std::complex<double>>& v, int nx, int ny) {
  transform_2d(v, nx, ny, FFTW_BACKWARD);
}

double bin_frequency(int j, int n, double dx) {
  int folded = j <= n / 2 ? j : j - n;
  return 2.0 * M_PI * folded / (n * dx);
}

}  // namespace beamkit::fft
