#pragma once

#include <complex>
#include <vector>

namespace beamkit::fft {

// In-place complex DFTs.  forward uses the exp(-i k x) analysis kernel,
// inverse the exp(+i k x) synthesis kernel scaled by 1/n so that
// inverse(forward(v)) == v.  2-D data is row-major (ny rows of nx).
void forward(std::vector<std::complex<double>>& v);
void inverse(std::vector<std::complex<double>>& v);
void forward_2d(std::vector<std::complex<double>>& v, int nx, int ny);
void inverse_2d(std::vector<std::complex<double>>& v, int nx, int ny);

// Angular frequency of DFT bin j for n samples at spacing dx:
// 2*pi*j/(n*dx) folded to the symmetric range (negative for j > n/2).
double bin_frequency(int j, int n, double dx);

}  // namespace beamkit::fft
