#include "beamkit/calib.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <istream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "beamkit/constants.hpp"
#include "beamkit/errors.hpp"
#include "beamkit/specfun.hpp"

namespace beamkit::calib {

using json = nlohmann::json;
using std::complex;

qsim::TrapSpec invert_trap(double omega_r_rad_s, double omega_z_rad_s,
                           double wavelength_nm, double mass_kg) {
  if (!(omega_r_rad_s > 0.0) || !(omega_z_rad_s > 0.0)) {
    throw std::invalid_argument("invert_trap: frequencies must be positive");
  }
  if (!(wavelength_nm > 0.0) || !(mass_kg > 0.0)) {
    throw std::invalid_argument("invert_trap: wavelength and mass must be positive");
  }
  double w0_um =
      wavelength_nm * 1e-3 * omega_r_rad_s / (std::sqrt(2.0) * M_PI * omega_z_rad_s);
  if (!(w0_um > 0.0) || !std::isfinite(w0_um)) {
    throw std::invalid_argument("invert_trap: frequencies imply a nonpositive waist");
  }
  double w0_m = w0_um * 1e-6;
  double depth_uk = mass_kg * omega_r_rad_s * omega_r_rad_s * w0_m * w0_m /
                    (4.0 * constants::k_boltzmann) * 1e6;
  return qsim::TrapSpec::from_optics(depth_uk, w0_um, wavelength_nm, 0.0, mass_kg);
}

namespace {

// kinetic energy of a um/us velocity, expressed in uK
double kinetic_uk(double mass_kg, const std::array<double, 3>& v) {
  double v2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];  // (um/us)^2 == (m/s)^2
  return 0.5 * mass_kg * v2 / constants::k_boltzmann * 1e6;
}

}  // namespace

RecaptureCurve release_recapture(const qsim::TrapSpec& trap, double temperature_uk,
                                 const std::vector<double>& release_us, int n_mc,
                                 uint64_t seed, qsim::ThermalMode mode) {
  if (!(temperature_uk >= 0.0) || !std::isfinite(temperature_uk)) {
    throw std::invalid_argument("release_recapture: temperature must be >= 0");
  }
  if (n_mc <= 0) throw std::invalid_argument("release_recapture: n_mc must be positive");
  if (release_us.empty()) {
    throw std::invalid_argument("release_recapture: no release times");
  }
  for (double t : release_us) {
    if (!(t >= 0.0) || !std::isfinite(t)) {
      throw std::invalid_argument("release_recapture: release times must be >= 0");
    }
  }
  qsim::TrapSpec at_t = trap;
  at_t.temperature_uk = temperature_uk;
  at_t.validate();
  auto atoms = qsim::sample_thermal(at_t, mode, n_mc, seed);

  auto bound = [&](const std::array<double, 3>& r, double ekin) {
    return ekin + qsim::trap_potential_uk(at_t, r[0], r[1], r[2]) < at_t.depth_uk;
  };

  // condition on being trapped before release, so survival(0) = 1
  std::vector<const qsim::Trajectory*> ensemble;
  ensemble.reserve(atoms.size());
  std::vector<double> ekin;
  ekin.reserve(atoms.size());
  for (const auto& a : atoms) {
    double e = kinetic_uk(at_t.mass_kg, a.v0_um_us);
    if (bound(a.r0_um, e)) {
      ensemble.push_back(&a);
      ekin.push_back(e);
    }
  }
  if (ensemble.empty()) {
    throw ConvergenceError("release_recapture: no bound atoms at this temperature");
  }

  RecaptureCurve curve;
  curve.release_us = release_us;
  curve.survival.resize(release_us.size());
  for (size_t k = 0; k < release_us.size(); ++k) {
    long kept = 0;
    for (size_t i = 0; i < ensemble.size(); ++i) {
      if (bound(ensemble[i]->position_um(release_us[k]), ekin[i])) ++kept;
    }
    curve.survival[k] = static_cast<double>(kept) / ensemble.size();
  }
  return curve;
}

double fit_temperature(const qsim::TrapSpec& trap, const RecaptureCurve& curve,
                       int n_mc, uint64_t seed, double t_min_uk, double t_max_uk) {
  if (curve.release_us.empty() || curve.release_us.size() != curve.survival.size()) {
    throw std::invalid_argument("fit_temperature: malformed curve");
  }
  if (!(t_min_uk > 0.0) || !(t_max_uk > t_min_uk)) {
    throw std::invalid_argument("fit_temperature: need 0 < t_min < t_max");
  }

  auto sse = [&](double t_uk) {
    auto model = release_recapture(trap, t_uk, curve.release_us, n_mc, seed);
    double s = 0.0;
    for (size_t i = 0; i < model.survival.size(); ++i) {
      double d = model.survival[i] - curve.survival[i];
      s += d * d;
    }
    return s;
  };
  auto scan = [&](double lo, double hi, int n) {
    double best_t = lo, best_s = std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
      double t = lo * std::pow(hi / lo, static_cast<double>(i) / (n - 1));
      double s = sse(t);
      if (s < best_s) {
        best_s = s;
        best_t = t;
      }
    }
    return best_t;
  };

  const int coarse = 25;
  double t1 = scan(t_min_uk, t_max_uk, coarse);
  // one coarse step to either side of the coarse minimum
  double step = std::pow(t_max_uk / t_min_uk, 1.0 / (coarse - 1));
  double lo = std::max(t_min_uk, t1 / step);
  double hi = std::min(t_max_uk, t1 * step);
  return scan(lo, hi, 41);
}

double damped_rabi_model(double omega0_rad_s, double delta_rad_s, double gamma_1_s,
                         double t_s) {
  double w2 = omega0_rad_s * omega0_rad_s + delta_rad_s * delta_rad_s;
  if (w2 <= 0.0) return 1.0;
  double a = omega0_rad_s * omega0_rad_s / w2;
  double wt = std::sqrt(w2);
  return 1.0 - 0.5 * a * (1.0 - std::exp(-gamma_1_s * t_s) * std::cos(wt * t_s));
}

namespace {

struct RabiEval {
  double sse = 0.0;
  Eigen::VectorXd r;
  Eigen::MatrixXd jac;  // columns: d/d omega0, d/d delta, d/d gamma
};

RabiEval eval_rabi(const Eigen::Vector3d& th, const std::vector<double>& t,
                   const std::vector<double>& p) {
  const int n = static_cast<int>(t.size());
  RabiEval e;
  e.r.resize(n);
  e.jac.resize(n, 3);
  double o = th[0], d = th[1], g = th[2];
  double w2 = o * o + d * d;
  double wt = std::sqrt(w2);
  double a = w2 > 0.0 ? o * o / w2 : 0.0;
  for (int i = 0; i < n; ++i) {
    double ti = t[i];
    double eg = std::exp(-g * ti);
    double c = std::cos(wt * ti);
    double s = std::sin(wt * ti);
    double model = 1.0 - 0.5 * a * (1.0 - eg * c);
    e.r[i] = model - p[i];
    if (w2 > 0.0) {
      double da_do = 2.0 * o * d * d / (w2 * w2);
      double da_dd = -2.0 * o * o * d / (w2 * w2);
      double shape = 0.5 * (eg * c - 1.0);
      double ring = -0.5 * a * eg * s * ti;
      e.jac(i, 0) = da_do * shape + ring * (o / wt);
      e.jac(i, 1) = da_dd * shape + ring * (d / wt);
      e.jac(i, 2) = -0.5 * a * eg * c * ti;
    } else {
      e.jac(i, 0) = e.jac(i, 1) = e.jac(i, 2) = 0.0;
    }
    e.sse += e.r[i] * e.r[i];
  }
  return e;
}

// Levenberg-Marquardt with multiplicative damping of diag(J^T J); every
// quantity entering the step is homogeneous in the parameter scale, so
// rescaling the time axis rescales the whole iteration path exactly.
Eigen::Vector3d lm_rabi(Eigen::Vector3d th, const std::vector<double>& t,
                        const std::vector<double>& p, double* out_sse) {
  auto project = [](Eigen::Vector3d v) {
    v[0] = std::abs(v[0]);
    v[2] = std::max(v[2], 0.0);
    return v;
  };
  th = project(th);
  RabiEval cur = eval_rabi(th, t, p);
  double lambda = 1e-3;
  for (int iter = 0; iter < 200; ++iter) {
    Eigen::Matrix3d h = cur.jac.transpose() * cur.jac;
    Eigen::Vector3d grad = cur.jac.transpose() * cur.r;
    double floor = h.trace() * 1e-12 + std::numeric_limits<double>::min();
    bool accepted = false;
    Eigen::Vector3d th_new;
    RabiEval next;
    for (int inner = 0; inner < 16; ++inner) {
      Eigen::Matrix3d m = h;
      for (int k = 0; k < 3; ++k) m(k, k) += lambda * std::max(h(k, k), floor);
      Eigen::Vector3d step = m.ldlt().solve(-grad);
      if (!step.allFinite()) {
        lambda *= 10.0;
        continue;
      }
      th_new = project(th + step);
      next = eval_rabi(th_new, t, p);
      if (next.sse < cur.sse) {
        accepted = true;
        lambda = std::max(lambda / 3.0, 1e-12);
        break;
      }
      lambda = std::min(lambda * 4.0, 1e12);
    }
    if (!accepted) break;
    double drop = cur.sse - next.sse;
    th = th_new;
    cur = std::move(next);
    if (drop <= 1e-14 * cur.sse) break;
  }
  *out_sse = cur.sse;
  return th;
}

}  // namespace

FitResult fit_damped_rabi(const std::vector<double>& t_s,
                          const std::vector<double>& p) {
  const int n = static_cast<int>(t_s.size());
  if (n < 8 || p.size() != t_s.size()) {
    throw std::invalid_argument("fit_damped_rabi: need >= 8 paired samples");
  }
  for (int i = 0; i < n; ++i) {
    if (!std::isfinite(t_s[i]) || !std::isfinite(p[i])) {
      throw std::invalid_argument("fit_damped_rabi: nonfinite sample");
    }
    if (i > 0 && !(t_s[i] > t_s[i - 1])) {
      throw std::invalid_argument("fit_damped_rabi: times must be strictly increasing");
    }
  }
  auto [pmin_it, pmax_it] = std::minmax_element(p.begin(), p.end());
  double range = *pmax_it - *pmin_it;
  if (range < 1e-12) throw FitError("fit_damped_rabi: constant data");

  // dominant discrete-Fourier peak of the mean-subtracted data
  double mean = 0.0;
  for (double v : p) mean += v;
  mean /= n;
  double span = t_s.back() - t_s.front();
  double dt_min = span;
  for (int i = 1; i < n; ++i) dt_min = std::min(dt_min, t_s[i] - t_s[i - 1]);
  double w_lo = 0.5 * M_PI / span;
  double w_hi = M_PI / dt_min;
  const int n_w = std::min(16 * n, 8192);
  double w_peak = w_lo, pow_peak = -1.0;
  for (int k = 0; k < n_w; ++k) {
    double w = w_lo + (w_hi - w_lo) * k / (n_w - 1);
    double re = 0.0, im = 0.0;
    for (int i = 0; i < n; ++i) {
      double q = p[i] - mean;
      re += q * std::cos(w * t_s[i]);
      im += q * std::sin(w * t_s[i]);
    }
    double pw = re * re + im * im;
    if (pw > pow_peak) {
      pow_peak = pw;
      w_peak = w;
    }
  }

  // split the peak frequency into (omega0, delta) by the oscillation contrast
  double a_est = std::clamp(range, 0.05, 1.0);
  const std::array<std::pair<double, double>, 5> starts = {{
      {a_est, 0.0},
      {a_est, w_peak / 20.0},
      {1.0, 0.0},
      {1.0, w_peak / 20.0},
      {0.5, 0.0},
  }};
  Eigen::Vector3d best = Eigen::Vector3d::Zero();
  double best_sse = std::numeric_limits<double>::infinity();
  for (const auto& [a0, g0] : starts) {
    Eigen::Vector3d th0(w_peak * std::sqrt(a0), w_peak * std::sqrt(1.0 - a0), g0);
    double sse = 0.0;
    Eigen::Vector3d th = lm_rabi(th0, t_s, p, &sse);
    if (sse < best_sse) {
      best_sse = sse;
      best = th;
    }
  }
  best[1] = std::abs(best[1]);  // the model is even in delta

  FitResult fit;
  fit.omega0_rad_s = best[0];
  fit.delta_rad_s = best[1];
  fit.gamma_1_s = best[2];
  fit.residual_norm = std::sqrt(best_sse);

  // covariance from the pseudo-inverse of J^T J at the optimum; directions
  // the data cannot constrain get zero rather than an arbitrary large number
  RabiEval at_best = eval_rabi(best, t_s, p);
  Eigen::Matrix3d h = at_best.jac.transpose() * at_best.jac;
  double s2 = best_sse / std::max(n - 3, 1);
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(h);
  Eigen::Vector3d inv = Eigen::Vector3d::Zero();
  double lmax = es.eigenvalues().maxCoeff();
  for (int k = 0; k < 3; ++k) {
    if (es.eigenvalues()[k] > 1e-12 * lmax) inv[k] = 1.0 / es.eigenvalues()[k];
  }
  Eigen::Matrix3d cov =
      es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose() * s2;
  for (int k = 0; k < 3; ++k) fit.sigma[k] = std::sqrt(std::max(cov(k, k), 0.0));
  return fit;
}

double crosstalk_eta(const FitResult& fit, double omega_bar_rad_s) {
  if (!(omega_bar_rad_s > 0.0)) {
    throw std::invalid_argument("crosstalk_eta: omega_bar must be positive");
  }
  return fit.omega0_rad_s / omega_bar_rad_s;
}

std::string FitResult::to_json_string() const {
  json j;
  j["omega0_rad_s"] = omega0_rad_s;
  j["delta_rad_s"] = delta_rad_s;
  j["gamma_1_s"] = gamma_1_s;
  j["sigma_omega0_rad_s"] = sigma[0];
  j["sigma_delta_rad_s"] = sigma[1];
  j["sigma_gamma_1_s"] = sigma[2];
  j["residual_norm"] = residual_norm;
  return j.dump(2);
}

void IonizationMap::validate() const {
  if (nx < 1 || ny < 1) throw std::invalid_argument("IonizationMap: empty grid");
  if (!(dx_um > 0.0) || !(dy_um > 0.0)) {
    throw std::invalid_argument("IonizationMap: grid spacing must be positive");
  }
  if (survival.size() != static_cast<size_t>(nx) * ny) {
    throw std::invalid_argument("IonizationMap: value count does not match the grid");
  }
  for (double v : survival) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw std::invalid_argument("IonizationMap: survival must lie in [0, 1]");
    }
  }
}

namespace {

// sorted coordinates -> (origin, spacing, count); insists on uniform spacing
void grid_axis(std::vector<double> vals, double* origin, double* step, int* count) {
  std::sort(vals.begin(), vals.end());
  std::vector<double> uniq;
  for (double v : vals) {
    if (uniq.empty() || v - uniq.back() > 1e-9 * (std::abs(v) + 1.0)) uniq.push_back(v);
  }
  *count = static_cast<int>(uniq.size());
  *origin = uniq.front();
  if (uniq.size() == 1) {
    *step = 1.0;
    return;
  }
  *step = (uniq.back() - uniq.front()) / (uniq.size() - 1);
  for (size_t i = 1; i < uniq.size(); ++i) {
    if (std::abs(uniq[i] - uniq[i - 1] - *step) > 1e-6 * *step) {
      throw std::invalid_argument("IonizationMap: grid is not regular");
    }
  }
}

}  // namespace

IonizationMap IonizationMap::read_csv(std::istream& is) {
  std::vector<double> xs, ys, ps;
  std::string line;
  bool leading = true;  // a non-numeric first content line is a header
  while (std::getline(is, line)) {
    size_t first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    double x, y, p;
    if (!(ls >> x >> y >> p)) {
      if (leading) {
        leading = false;
        continue;
      }
      throw std::invalid_argument("IonizationMap: malformed CSV row: " + line);
    }
    leading = false;
    xs.push_back(x);
    ys.push_back(y);
    ps.push_back(p);
  }
  if (xs.empty()) throw std::invalid_argument("IonizationMap: empty CSV");

  IonizationMap map;
  grid_axis(xs, &map.x0_um, &map.dx_um, &map.nx);
  grid_axis(ys, &map.y0_um, &map.dy_um, &map.ny);
  if (xs.size() != static_cast<size_t>(map.nx) * map.ny) {
    throw std::invalid_argument("IonizationMap: rows do not cover the grid exactly");
  }
  map.survival.assign(xs.size(), 0.0);
  std::vector<char> filled(xs.size(), 0);
  for (size_t k = 0; k < xs.size(); ++k) {
    int i = map.nx > 1 ? static_cast<int>(std::lround((xs[k] - map.x0_um) / map.dx_um))
                       : 0;
    int j = map.ny > 1 ? static_cast<int>(std::lround((ys[k] - map.y0_um) / map.dy_um))
                       : 0;
    if (i < 0 || i >= map.nx || j < 0 || j >= map.ny) {
      throw std::invalid_argument("IonizationMap: row off the inferred grid");
    }
    size_t idx = static_cast<size_t>(j) * map.nx + i;
    if (filled[idx]) throw std::invalid_argument("IonizationMap: duplicate grid cell");
    filled[idx] = 1;
    map.survival[idx] = ps[k];
  }
  map.validate();
  return map;
}

prop::SampledField reconstruct_field(const IonizationMap& map, double e0, double i0,
                                     const IntensityCalibration& calibration) {
  map.validate();
  if (!(e0 > 0.0) || !(i0 > 0.0)) {
    throw std::invalid_argument("reconstruct_field: e0 and i0 must be positive");
  }
  prop::SampledField field(map.x0_um, map.y0_um, map.dx_um, map.dy_um, map.nx, map.ny);
  for (int j = 0; j < map.ny; ++j) {
    for (int i = 0; i < map.nx; ++i) {
      double intensity = calibration ? calibration(map.p(i, j)) : 1.0 - map.p(i, j);
      if (!(intensity >= 0.0) || !std::isfinite(intensity)) {
        throw std::invalid_argument(
            "reconstruct_field: calibration produced a negative intensity");
      }
      field.at(i, j) = e0 * std::sqrt(intensity / i0);
    }
  }
  return field;
}

namespace {

// columns phi_n for n < k sampled along one grid axis
Eigen::MatrixXd mode_matrix(const prop::SampledField& f, bool along_x, double w,
                            int k) {
  int count = along_x ? f.nx() : f.ny();
  Eigen::MatrixXd phi(count, k);
  for (int i = 0; i < count; ++i) {
    double u = along_x ? f.x(i) : f.y(i);
    double envelope = std::exp(-u * u / (w * w));
    for (int m = 0; m < k; ++m) {
      phi(i, m) = specfun::hermite(m, std::sqrt(2.0) * u / w) * envelope;
    }
  }
  return phi;
}

Eigen::VectorXd grid_norms(const Eigen::MatrixXd& phi, double step) {
  return (phi.colwise().squaredNorm() * step).cwiseSqrt().transpose();
}

void require_plane(const prop::SampledField& f, const char* who) {
  if (f.nx() < 2 || f.ny() < 2) {
    throw std::invalid_argument(std::string(who) + ": needs a 2-D field");
  }
}

}  // namespace

HgExpansion decompose_hg(const prop::SampledField& field, double waist_um,
                         int max_order) {
  require_plane(field, "decompose_hg");
  if (!(waist_um > 0.0)) {
    throw std::invalid_argument("decompose_hg: waist must be positive");
  }
  if (max_order < 1) {
    throw std::invalid_argument("decompose_hg: max_order must be >= 1");
  }
  const int k = max_order;
  Eigen::MatrixXd phi_x = mode_matrix(field, true, waist_um, k);
  Eigen::MatrixXd phi_y = mode_matrix(field, false, waist_um, k);
  Eigen::VectorXd nx_norm = grid_norms(phi_x, field.dx());
  Eigen::VectorXd ny_norm = grid_norms(phi_y, field.dy());

  using CMat = Eigen::Matrix<complex<double>, Eigen::Dynamic, Eigen::Dynamic,
                             Eigen::RowMajor>;
  Eigen::Map<const CMat> em(field.values().data(), field.ny(), field.nx());

  Eigen::MatrixXcd num = phi_y.cast<complex<double>>().transpose() *
                         em.eval() * phi_x.cast<complex<double>>();
  num *= field.dx() * field.dy();

  HgExpansion out;
  out.waist_um = waist_um;
  out.max_order = k;
  out.c.resize(static_cast<size_t>(k) * k);
  Eigen::MatrixXcd cm(k, k);  // (m, n) layout matching the separable product
  for (int m = 0; m < k; ++m) {
    for (int n = 0; n < k; ++n) {
      cm(m, n) = num(m, n) / (nx_norm[n] * ny_norm[m]);
      out.c[static_cast<size_t>(n) * k + m] = cm(m, n);
    }
  }

  Eigen::MatrixXd phix_hat = phi_x * nx_norm.cwiseInverse().asDiagonal();
  Eigen::MatrixXd phiy_hat = phi_y * ny_norm.cwiseInverse().asDiagonal();
  Eigen::MatrixXcd rec = phiy_hat.cast<complex<double>>() * cm *
                         phix_hat.cast<complex<double>>().transpose();
  double denom = em.norm();
  out.reconstruction_error = denom > 0.0 ? (Eigen::MatrixXcd(em) - rec).norm() / denom
                                         : 0.0;
  return out;
}

prop::SampledField evaluate_hg(const HgExpansion& expansion,
                               const prop::SampledField& like) {
  require_plane(like, "evaluate_hg");
  if (expansion.max_order < 1 ||
      expansion.c.size() !=
          static_cast<size_t>(expansion.max_order) * expansion.max_order) {
    throw std::invalid_argument("evaluate_hg: malformed expansion");
  }
  const int k = expansion.max_order;
  Eigen::MatrixXd phi_x = mode_matrix(like, true, expansion.waist_um, k);
  Eigen::MatrixXd phi_y = mode_matrix(like, false, expansion.waist_um, k);
  Eigen::MatrixXd phix_hat = phi_x * grid_norms(phi_x, like.dx()).cwiseInverse().asDiagonal();
  Eigen::MatrixXd phiy_hat = phi_y * grid_norms(phi_y, like.dy()).cwiseInverse().asDiagonal();
  Eigen::MatrixXcd cm(k, k);
  for (int m = 0; m < k; ++m) {
    for (int n = 0; n < k; ++n) {
      cm(m, n) = expansion.c[static_cast<size_t>(n) * k + m];
    }
  }
  Eigen::MatrixXcd rec = phiy_hat.cast<complex<double>>() * cm *
                         phix_hat.cast<complex<double>>().transpose();

  prop::SampledField out = like;
  for (int j = 0; j < like.ny(); ++j) {
    for (int i = 0; i < like.nx(); ++i) out.at(i, j) = rec(j, i);
  }
  return out;
}

std::string HgExpansion::to_json_string() const {
  json j;
  j["waist_um"] = waist_um;
  j["max_order"] = max_order;
  j["reconstruction_error"] = reconstruction_error;
  json coeff_list = json::array();
  for (int n = 0; n < max_order; ++n) {
    for (int m = 0; m < max_order; ++m) {
      const auto& v = coeff(n, m);
      coeff_list.push_back(json::array({n, m, v.real(), v.imag()}));
    }
  }
  j["coeffs"] = coeff_list;
  return j.dump(2);
}

}  // namespace beamkit::calib
