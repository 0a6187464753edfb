#include "beamkit/sampled_field.hpp"

#include <json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <ostream>
#include <stdexcept>

namespace beamkit::prop {

namespace {

using json = nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "payload format is little-endian float64");

void require_positive_spacing(double dx, double dy, int nx, int ny) {
  if (!(dx > 0.0) || !(dy > 0.0)) {
    throw std::invalid_argument("SampledField: spacing must be > 0");
  }
  if (nx <= 0 || ny <= 0) {
    throw std::invalid_argument("SampledField: counts must be > 0");
  }
}

}  // namespace

SampledField::SampledField(double x0, double dx, int nx)
    : x0_(x0), dx_(dx), nx_(nx), ny_(1) {
  require_positive_spacing(dx_, dy_, nx_, ny_);
  values_.assign(static_cast<size_t>(nx_), {0.0, 0.0});
}

SampledField::SampledField(double x0, double y0, double dx, double dy, int nx, int ny)
    : x0_(x0), y0_(y0), dx_(dx), dy_(dy), nx_(nx), ny_(ny) {
  require_positive_spacing(dx_, dy_, nx_, ny_);
  values_.assign(static_cast<size_t>(nx_) * ny_, {0.0, 0.0});
}

double SampledField::peak_modulus() const {
  double peak = 0.0;
  for (const auto& z : values_) peak = std::max(peak, std::abs(z));
  return peak;
}

double SampledField::boundary_modulus() const {
  double edge = 0.0;
  for (int j = 0; j < ny_; ++j) {
    edge = std::max(edge, std::abs(at(0, j)));
    edge = std::max(edge, std::abs(at(nx_ - 1, j)));
  }
  if (ny_ > 1) {
    for (int i = 0; i < nx_; ++i) {
      edge = std::max(edge, std::abs(at(i, 0)));
      edge = std::max(edge, std::abs(at(i, ny_ - 1)));
    }
  }
  return edge;
}

void SampledField::write_file(const std::string& path) const {
  json header;
  header["x0"] = x0_;
  header["y0"] = y0_;
  header["dx"] = dx_;
  header["dy"] = dy_;
  header["nx"] = nx_;
  header["ny"] = ny_;
  header["payload"] = "float64-le-interleaved";
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("SampledField: cannot open '" + path + "' for writing");
  os << header.dump() << '\n';
  os.write(reinterpret_cast<const char*>(values_.data()),
           static_cast<std::streamsize>(values_.size() * sizeof(std::complex<double>)));
  if (!os) throw std::runtime_error("SampledField: write failed for '" + path + "'");
}

SampledField SampledField::read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("SampledField: cannot open '" + path + "'");
  std::string line;
  std::getline(is, line);
  json header = json::parse(line);
  if (header.at("payload").get<std::string>() != "float64-le-interleaved") {
    throw std::runtime_error("SampledField: unknown payload encoding");
  }
  SampledField f(header.at("x0").get<double>(), header.at("y0").get<double>(),
                 header.at("dx").get<double>(), header.at("dy").get<double>(),
                 header.at("nx").get<int>(), header.at("ny").get<int>());
  is.read(reinterpret_cast<char*>(f.values_.data()),
          static_cast<std::streamsize>(f.values_.size() * sizeof(std::complex<double>)));
  if (is.gcount() !=
      static_cast<std::streamsize>(f.values_.size() * sizeof(std::complex<double>))) {
    throw std::runtime_error("SampledField: truncated payload in '" + path + "'");
  }
  return f;
}

void SampledField::write_csv(std::ostream& os) const {
  if (!is_1d()) throw std::logic_error("SampledField: CSV export is 1-D only");
  char buf[96];
  os << "x,re,im\n";
  for (int i = 0; i < nx_; ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g\n", x(i), at(i).real(), at(i).imag());
    os << buf;
  }
}

}  // namespace beamkit::prop
