#include <CLI11.hpp>

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "beamkit/calib.hpp"
#include "beamkit/constants.hpp"
#include "beamkit/errors.hpp"
#include "beamkit/flattop.hpp"
#include "beamkit/hologram.hpp"
#include "beamkit/image_io.hpp"
#include "beamkit/manifest.hpp"
#include "beamkit/propagation.hpp"
#include "beamkit/qsim.hpp"
#include "beamkit/sampled_field.hpp"

using json = nlohmann::json;
using namespace beamkit;

namespace {

constexpr double MHZ = 2.0 * M_PI * 1e6;

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<double> linspace(double a, double b, int n) {
  std::vector<double> v(n);
  for (int i = 0; i < n; ++i) v[i] = a + (b - a) * i / (n - 1);
  return v;
}

// Per-run bookkeeping: the manifest goes next to the first output file.
struct RunContext {
  std::string command;
  json config = json::object();
  bool has_seed = false;
  uint64_t seed = 0;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;

  void finish() const {
    if (outputs.empty()) return;
    manifest::RunManifest m;
    m.command = command;
    m.config_json = config.dump();
    m.has_seed = has_seed;
    m.seed = seed;
    for (const auto& p : inputs) m.add_input(p);
    for (const auto& p : outputs) m.add_output(p);
    m.write(outputs.front() + ".manifest.json");
  }
};

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::invalid_argument("cannot open output file: " + path);
  return out;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot open config file: " + path);
  return json::parse(in);
}

// two-column CSV (value, value); '#' comments, blank lines, and an optional
// non-numeric header row are skipped
void read_xy_csv(const std::string& path, std::vector<double>* xs,
                 std::vector<double>* ys) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot open data file: " + path);
  std::string line;
  bool first_content = true;
  while (std::getline(in, line)) {
    size_t start = line.find_first_not_of(" \t\r");
    if (start == std::string::npos || line[start] == '#') continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    double x, y;
    if (!(ls >> x >> y)) {
      if (first_content) {
        first_content = false;  // header row
        continue;
      }
      throw std::invalid_argument("malformed data row: " + line);
    }
    first_content = false;
    xs->push_back(x);
    ys->push_back(y);
  }
  if (xs->empty()) throw std::invalid_argument("no data rows in " + path);
}

// ---------------------------------------------------------------- profile

struct ProfileOpts {
  int order = 8;
  std::string basis = "hg";
  double xmax_w0 = 6.0;
  int points = 241;
  double waist_um = 1.0;
  double kmax = 8.0;
  int fourier_points = 241;
  std::string out, coeffs, fourier;
};

void run_profile(const ProfileOpts& o, RunContext ctx) {
  if (o.order < 0 || o.order % 2 != 0) {
    throw std::invalid_argument("profile: --order must be an even integer >= 0");
  }
  if (o.points < 3 || o.points % 2 == 0) {
    throw std::invalid_argument("profile: --points must be odd so the axis includes 0");
  }
  bool radial = o.basis == "lg";
  if (!radial && o.basis != "hg") {
    throw std::invalid_argument("profile: --basis must be hg or lg");
  }
  ctx.config = {{"order", o.order},       {"basis", o.basis},
                {"xmax_w0", o.xmax_w0},   {"points", o.points},
                {"waist_um", o.waist_um}, {"kmax", o.kmax},
                {"fourier_points", o.fourier_points}};

  {
    auto out = open_output(o.out);
    out << (radial ? "r_w0,field\n" : "x_w0,field\n");
    auto grid = radial ? linspace(0.0, o.xmax_w0, o.points)
                       : linspace(-o.xmax_w0, o.xmax_w0, o.points);
    for (double x : grid) {
      double v = radial ? flattop::lg_flattop(o.order, x)
                        : flattop::flattop_profile(o.order, x);
      out << fmt17(x) << "," << fmt17(v) << "\n";
    }
  }
  ctx.outputs.push_back(o.out);

  if (!o.coeffs.empty()) {
    auto me = radial ? flattop::lg_coefficients(o.order, o.waist_um)
                     : flattop::hg_coefficients(o.order, o.waist_um);
    open_output(o.coeffs) << me.to_json_string() << "\n";
    ctx.outputs.push_back(o.coeffs);
  }
  if (!o.fourier.empty()) {
    auto out = open_output(o.fourier);
    out << "k,field\n";
    for (double k : linspace(0.0, o.kmax, o.fourier_points)) {
      double v = radial ? flattop::hankel_flattop(o.order, k)
                        : flattop::fourier_flattop(o.order, k);
      out << fmt17(k) << "," << fmt17(v) << "\n";
    }
    ctx.outputs.push_back(o.fourier);
  }
  ctx.finish();
}

// -------------------------------------------------------------- propagate

struct PropagateOpts {
  std::vector<int> order = {8, 8};
  double z = 0.5;
  double xmax_w0 = 4.0;
  int points = 257;
  double zmax = 0.3;
  int z_points = 61;
  std::string out, taylor;
};

void run_propagate(const PropagateOpts& o, RunContext ctx) {
  flattop::FlatTopOrder order(o.order.at(0), o.order.at(1));
  ctx.config = {{"order", o.order}, {"z", o.z},       {"xmax_w0", o.xmax_w0},
                {"points", o.points}, {"zmax", o.zmax}, {"z_points", o.z_points}};

  {
    auto out = open_output(o.out);
    out << "x_w0,re,im,intensity\n";
    for (double x : linspace(-o.xmax_w0, o.xmax_w0, o.points)) {
      std::complex<double> e = prop::field_xyz(order, x, 0.0, o.z);
      out << fmt17(x) << "," << fmt17(e.real()) << "," << fmt17(e.imag()) << ","
          << fmt17(std::norm(e)) << "\n";
    }
  }
  ctx.outputs.push_back(o.out);

  if (!o.taylor.empty()) {
    if (order.n != order.m) {
      throw std::invalid_argument(
          "propagate: the on-axis expansion needs a square order (N N)");
    }
    auto terms = prop::taylor_coefficients(order.n);
    auto out = open_output(o.taylor);
    out << "z,exact_re,exact_im,taylor_re,taylor_im,abs_err\n";
    for (double z : linspace(0.0, o.zmax, o.z_points)) {
      std::complex<double> exact = prop::field_xyz(order, 0.0, 0.0, z);
      std::complex<double> approx = prop::eval_taylor(terms, 0.0, 0.0, z);
      out << fmt17(z) << "," << fmt17(exact.real()) << "," << fmt17(exact.imag())
          << "," << fmt17(approx.real()) << "," << fmt17(approx.imag()) << ","
          << fmt17(std::abs(exact - approx)) << "\n";
    }
    ctx.outputs.push_back(o.taylor);
  }
  ctx.finish();
}

// --------------------------------------------------------------- hologram

struct HologramOpts {
  std::vector<int> order = {8, 8};
  double grating = 8.0;
  int width = 512;
  int height = 400;
  double pixel_um = 12.5;
  double scale = 8.0;
  double input_waist_px = 150.0;
  double zernike_radius_px = 0.0;  // 0 = half the short panel side
  std::vector<double> aberrate;    // a2 a3
  bool verify = false;
  bool optimize = false;
  std::string mask_path, far_field_png, metrics_path;
};

void run_hologram(const HologramOpts& o, RunContext ctx) {
  if (!o.verify && !o.optimize && o.mask_path.empty() && o.far_field_png.empty()) {
    throw std::invalid_argument(
        "hologram: nothing to do; pass --mask, --verify, or --optimize");
  }
  flattop::FlatTopOrder order(o.order.at(0), o.order.at(1));
  holo::SlmSpec slm(o.width, o.height, o.pixel_um, o.grating);
  double radius =
      o.zernike_radius_px > 0.0 ? o.zernike_radius_px : 0.5 * std::min(o.width, o.height);
  ctx.config = {{"order", o.order},
                {"grating", o.grating},
                {"width", o.width},
                {"height", o.height},
                {"pixel_um", o.pixel_um},
                {"scale", o.scale},
                {"input_waist_px", o.input_waist_px},
                {"zernike_radius_px", radius},
                {"aberrate", o.aberrate}};

  holo::TargetField target = holo::target_from_flattop(order, slm, o.scale);
  holo::PhaseMask mask = holo::phase_mask(target, slm);
  if (!o.aberrate.empty()) {
    mask = holo::compose(mask,
                         holo::ZernikeCorrection(o.aberrate.at(0), o.aberrate.at(1), radius));
  }
  if (!o.mask_path.empty()) {
    holo::export_mask(mask, o.mask_path);
    ctx.outputs.push_back(o.mask_path);
  }

  double input_waist_um = o.input_waist_px * o.pixel_um;
  json report = json::object();
  if (o.verify || !o.far_field_png.empty()) {
    auto res = holo::simulate_far_field(mask, input_waist_um, slm, o.scale, order);
    report["metrics"] = {{"efficiency", res.metrics.efficiency},
                         {"flat_rms", res.metrics.flat_rms},
                         {"correlation", res.metrics.correlation}};
    if (!o.far_field_png.empty()) {
      double peak = res.field.peak_modulus();
      img::Gray16 png;
      png.width = res.field.nx();
      png.height = res.field.ny();
      png.pixels.resize(static_cast<size_t>(png.width) * png.height);
      for (int j = 0; j < png.height; ++j) {
        for (int i = 0; i < png.width; ++i) {
          double rel = peak > 0.0 ? std::norm(res.field.at(i, j)) / (peak * peak) : 0.0;
          png.pixels[static_cast<size_t>(j) * png.width + i] =
              static_cast<uint16_t>(std::lround(rel * 65535.0));
        }
      }
      img::write_png(o.far_field_png, png);
      ctx.outputs.push_back(o.far_field_png);
    }
  }
  if (o.optimize) {
    auto score = [&](double a2, double a3) {
      auto fixed = holo::compose(mask, holo::ZernikeCorrection(a2, a3, radius));
      return holo::simulate_far_field(fixed, input_waist_um, slm, o.scale, order)
          .metrics.correlation;
    };
    auto res = holo::optimize_correction(holo::ZernikeCorrection(0.0, 0.0, radius),
                                         score, 0.005, 200);
    report["optimize"] = {{"best_a2", res.best.a2},
                          {"best_a3", res.best.a3},
                          {"objective", res.objective},
                          {"evaluations", res.evaluations},
                          {"converged", res.converged}};
  }
  if (!report.empty()) {
    std::cout << report.dump(2) << "\n";
    if (!o.metrics_path.empty()) {
      open_output(o.metrics_path) << report.dump(2) << "\n";
      ctx.outputs.push_back(o.metrics_path);
    }
  }
  ctx.finish();
}

// --------------------------------------------------------------- simulate

qsim::TrapSpec trap_from_json(const json& j, json* resolved) {
  double mass_amu =
      j.value("mass_amu", constants::mass_rb87 / constants::atomic_mass_unit);
  qsim::TrapSpec trap = qsim::TrapSpec::from_optics(
      j.at("depth_uk").get<double>(), j.at("waist_um").get<double>(),
      j.value("wavelength_nm", 813.0), j.value("temperature_uk", 0.0),
      mass_amu * constants::atomic_mass_unit);
  *resolved = {{"depth_uk", trap.depth_uk},
               {"waist_um", trap.waist_um},
               {"wavelength_nm", trap.wavelength_nm},
               {"temperature_uk", trap.temperature_uk},
               {"mass_amu", mass_amu}};
  return trap;
}

// addressing preset: flat-top along y (half-maximum at half_width_um) times
// an optional Gaussian along x
qsim::FieldModel addressing_from_json(const json& j, json* resolved) {
  int order = j.value("flattop_order", 8);
  double half_width = j.value("half_width_um", 3.0);
  double waist_x = j.value("gaussian_waist_x_um", 0.0);
  *resolved = {{"flattop_order", order},
               {"half_width_um", half_width},
               {"gaussian_waist_x_um", waist_x}};
  double y_scale = half_width / (flattop::fwhm(order) / 2.0);
  return [order, y_scale, waist_x](double x, double y, double) {
    double amp = flattop::flattop_profile(order, y / y_scale);
    if (waist_x > 0.0) amp *= std::exp(-x * x / (waist_x * waist_x));
    return std::complex<double>(amp, 0.0);
  };
}

std::vector<double> times_from_json(const json& cfg, json* resolved) {
  std::vector<double> times_us;
  const json& t = cfg.at("times_us");
  if (t.is_array()) {
    times_us = t.get<std::vector<double>>();
  } else {
    double start = t.value("start_us", 0.0);
    double stop = t.at("stop_us").get<double>();
    int points = t.at("points").get<int>();
    if (points < 2) throw std::invalid_argument("times_us.points must be >= 2");
    times_us = linspace(start, stop, points);
  }
  *resolved = times_us;
  std::vector<double> times_s(times_us.size());
  for (size_t i = 0; i < times_us.size(); ++i) times_s[i] = times_us[i] * 1e-6;
  return times_s;
}

void common_drive_from_json(const json& cfg, json* resolved, qsim::DriveMode* mode,
                            double* omega_r, double* omega_b, double* delta_big,
                            double* delta_small, double* gamma_p, double* gamma_r,
                            std::array<double, 3>* branch, bool* printed_jump_form) {
  std::string mode_name = cfg.value("mode", "two_photon");
  if (mode_name == "two_photon") {
    *mode = qsim::DriveMode::two_photon;
  } else if (mode_name == "five_level") {
    *mode = qsim::DriveMode::five_level;
  } else {
    throw std::invalid_argument("mode must be two_photon or five_level");
  }
  *omega_r = cfg.value("omega_r_mhz", 0.0) * MHZ;
  *omega_b = cfg.value("omega_b_mhz", 0.0) * MHZ;
  *delta_big = cfg.value("delta_big_mhz", 0.0) * MHZ;
  *delta_small = cfg.value("delta_small_mhz", 0.0) * MHZ;
  *gamma_p = cfg.value("gamma_p_1_s", 0.0);
  *gamma_r = cfg.value("gamma_r_1_s", 0.0);
  (*branch)[0] = cfg.value("branch_to_0", 0.25);
  (*branch)[1] = cfg.value("branch_to_1", 0.25);
  (*branch)[2] = cfg.value("branch_to_loss", 0.5);
  *printed_jump_form = cfg.value("printed_jump_form", false);
  (*resolved)["mode"] = mode_name;
  (*resolved)["omega_r_mhz"] = cfg.value("omega_r_mhz", 0.0);
  (*resolved)["omega_b_mhz"] = cfg.value("omega_b_mhz", 0.0);
  (*resolved)["delta_big_mhz"] = cfg.value("delta_big_mhz", 0.0);
  (*resolved)["delta_small_mhz"] = cfg.value("delta_small_mhz", 0.0);
  (*resolved)["gamma_p_1_s"] = *gamma_p;
  (*resolved)["gamma_r_1_s"] = *gamma_r;
  (*resolved)["branch_to_0"] = (*branch)[0];
  (*resolved)["branch_to_1"] = (*branch)[1];
  (*resolved)["branch_to_loss"] = (*branch)[2];
  (*resolved)["printed_jump_form"] = *printed_jump_form;
}

void integrator_from_json(const json& cfg, json* resolved,
                          qsim::IntegratorOptions* opt) {
  json j = cfg.value("integrator", json::object());
  opt->rel_tol = j.value("rel_tol", opt->rel_tol);
  opt->abs_tol = j.value("abs_tol", opt->abs_tol);
  opt->max_step = j.value("max_step", opt->max_step);
  (*resolved)["integrator"] = {{"rel_tol", opt->rel_tol},
                               {"abs_tol", opt->abs_tol},
                               {"max_step", opt->max_step}};
}

struct SimOpts {
  std::string config_path, out;
  uint64_t seed = 1;
  int workers = 0;
};

void run_simulate_rabi(const SimOpts& o, RunContext ctx) {
  json cfg = read_json_file(o.config_path);
  ctx.inputs.push_back(o.config_path);
  ctx.has_seed = true;
  ctx.seed = o.seed;

  json resolved = json::object();
  qsim::RabiConfig rc;
  std::array<double, 3> branch{};
  common_drive_from_json(cfg, &resolved, &rc.mode, &rc.omega_r, &rc.omega_b,
                         &rc.delta_big, &rc.delta_small, &rc.gamma_p, &rc.gamma_r,
                         &branch, &rc.printed_jump_form);
  rc.branch_to_0 = branch[0];
  rc.branch_to_1 = branch[1];
  rc.branch_to_loss = branch[2];
  rc.omega_bar = cfg.value("omega_bar_mhz", 0.0) * MHZ;
  resolved["omega_bar_mhz"] = cfg.value("omega_bar_mhz", 0.0);

  if (cfg.contains("atoms")) {
    rc.atoms.clear();
    json atoms = json::array();
    for (const auto& a : cfg.at("atoms")) {
      qsim::AtomSite site;
      site.field_amplitude = a.value("field_amplitude", 1.0);
      site.extra_detuning = a.value("extra_detuning_mhz", 0.0) * MHZ;
      rc.atoms.push_back(site);
      atoms.push_back({{"field_amplitude", site.field_amplitude},
                       {"extra_detuning_mhz", a.value("extra_detuning_mhz", 0.0)}});
    }
    resolved["atoms"] = atoms;
  }
  rc.thermal = cfg.value("thermal", false);
  resolved["thermal"] = rc.thermal;
  if (rc.thermal) {
    json trap_resolved;
    rc.trap = trap_from_json(cfg.at("trap"), &trap_resolved);
    resolved["trap"] = trap_resolved;
    rc.k_eff_rad_um = cfg.value("k_eff_rad_um", 0.0);
    resolved["k_eff_rad_um"] = rc.k_eff_rad_um;
  }
  if (cfg.contains("addressing")) {
    json addr_resolved;
    rc.addressing = addressing_from_json(cfg.at("addressing"), &addr_resolved);
    resolved["addressing"] = addr_resolved;
  }
  integrator_from_json(cfg, &resolved, &rc.integrator);

  json times_resolved;
  std::vector<double> times_s = times_from_json(cfg, &times_resolved);
  resolved["times_us"] = times_resolved;
  int n_traj = cfg.value("n_traj", 1);
  resolved["n_traj"] = n_traj;
  ctx.config = resolved;

  auto curves = qsim::rabi_scan(rc, times_s, n_traj, o.seed, o.workers);

  auto out = open_output(o.out);
  out << "t_us";
  for (size_t a = 0; a < curves.size(); ++a) out << ",p1_atom" << a;
  out << "\n";
  for (size_t i = 0; i < times_s.size(); ++i) {
    out << fmt17(times_s[i] * 1e6);
    for (const auto& curve : curves) out << "," << fmt17(curve[i]);
    out << "\n";
  }
  out.close();
  ctx.outputs.push_back(o.out);
  ctx.finish();
}

void run_simulate_cz(const SimOpts& o, RunContext ctx) {
  json cfg = read_json_file(o.config_path);
  ctx.inputs.push_back(o.config_path);
  ctx.has_seed = true;
  ctx.seed = o.seed;

  json resolved = json::object();
  qsim::CzConfig cc;
  std::array<double, 3> branch{};
  common_drive_from_json(cfg, &resolved, &cc.mode, &cc.omega_r, &cc.omega_b,
                         &cc.delta_big, &cc.delta_small, &cc.gamma_p, &cc.gamma_r,
                         &branch, &cc.printed_jump_form);
  cc.branch_to_0 = branch[0];
  cc.branch_to_1 = branch[1];
  cc.branch_to_loss = branch[2];
  cc.omega_bar = cfg.value("omega_bar_mhz", 2.41) * MHZ;
  resolved["omega_bar_mhz"] = cfg.value("omega_bar_mhz", 2.41);
  cc.compensate_light_shift = cfg.value("compensate_light_shift", true);
  resolved["compensate_light_shift"] = cc.compensate_light_shift;

  if (cfg.contains("v_over_omega_bar")) {
    cc.v = cfg.at("v_over_omega_bar").get<double>() * cc.omega_bar;
  } else {
    cc.v = cfg.value("v_mhz", 0.0) * MHZ;
  }
  cc.c6_rad_s_um6 = cfg.value("c6_rad_s_um6", 0.0);
  cc.separation_um = cfg.value("separation_um", 3.6);
  resolved["v_mhz"] = cc.v / MHZ;
  resolved["c6_rad_s_um6"] = cc.c6_rad_s_um6;
  resolved["separation_um"] = cc.separation_um;

  cc.thermal = cfg.value("thermal", false);
  resolved["thermal"] = cc.thermal;
  if (cc.thermal) {
    json trap_resolved;
    cc.trap = trap_from_json(cfg.at("trap"), &trap_resolved);
    resolved["trap"] = trap_resolved;
    cc.k_eff_rad_um = cfg.value("k_eff_rad_um", 0.0);
    resolved["k_eff_rad_um"] = cc.k_eff_rad_um;
  }
  if (cfg.contains("addressing")) {
    json addr_resolved;
    cc.addressing = addressing_from_json(cfg.at("addressing"), &addr_resolved);
    resolved["addressing"] = addr_resolved;
  }
  if (cfg.contains("field_asymmetry")) {
    auto fa = cfg.at("field_asymmetry").get<std::vector<double>>();
    if (fa.size() != 2) {
      throw std::invalid_argument("field_asymmetry must have two entries");
    }
    cc.field_asymmetry = {fa[0], fa[1]};
  }
  resolved["field_asymmetry"] = {cc.field_asymmetry[0], cc.field_asymmetry[1]};
  integrator_from_json(cfg, &resolved, &cc.integrator);

  qsim::CzProtocol protocol;
  if (cfg.contains("protocol")) {
    const json& p = cfg.at("protocol");
    if (p.value("optimize", false)) {
      protocol = qsim::optimize_protocol();
    } else if (p.contains("detuning_ratio")) {
      protocol = qsim::derive_protocol(p.at("detuning_ratio").get<double>());
    }
  }
  resolved["protocol"] = {{"detuning_ratio", protocol.detuning_ratio},
                          {"omega_tau", protocol.omega_tau},
                          {"xi", protocol.xi}};
  int n_traj = cfg.value("n_traj", 1);
  resolved["n_traj"] = n_traj;
  ctx.config = resolved;

  qsim::CzResult res = qsim::cz_gate(cc, protocol, n_traj, o.seed, o.workers);

  json out_json = {{"fidelity", res.fidelity},
                   {"infidelity", 1.0 - res.fidelity},
                   {"best_phi", res.best_phi},
                   {"tau_s", res.tau_s},
                   {"budget", res.budget}};
  std::cout << out_json.dump(2) << "\n";
  open_output(o.out) << out_json.dump(2) << "\n";
  ctx.outputs.push_back(o.out);
  ctx.finish();
}

// -------------------------------------------------------------------- fit

struct FitRabiOpts {
  std::string data_path, out;
  double omega_bar_mhz = 0.0;
};

void run_fit_rabi(const FitRabiOpts& o, RunContext ctx) {
  std::vector<double> t_us, p;
  read_xy_csv(o.data_path, &t_us, &p);
  ctx.inputs.push_back(o.data_path);
  ctx.config = {{"data", o.data_path}, {"omega_bar_mhz", o.omega_bar_mhz}};

  std::vector<double> t_s(t_us.size());
  for (size_t i = 0; i < t_us.size(); ++i) t_s[i] = t_us[i] * 1e-6;
  calib::FitResult fit = calib::fit_damped_rabi(t_s, p);

  json out_json = json::parse(fit.to_json_string());
  out_json["omega0_mhz"] = fit.omega0_rad_s / MHZ;
  if (o.omega_bar_mhz > 0.0) {
    out_json["eta"] = calib::crosstalk_eta(fit, o.omega_bar_mhz * MHZ);
  }
  std::cout << out_json.dump(2) << "\n";
  if (!o.out.empty()) {
    open_output(o.out) << out_json.dump(2) << "\n";
    ctx.outputs.push_back(o.out);
  }
  ctx.finish();
}

struct FitTempOpts {
  std::string data_path, out;
  double depth_uk = 800.0;
  double waist_um = 1.4;
  double wavelength_nm = 813.0;
  double mass_amu = constants::mass_rb87 / constants::atomic_mass_unit;
  int n_mc = 10000;
  uint64_t seed = 1;
  double t_min_uk = 1.0;
  double t_max_uk = 1000.0;
};

void run_fit_temperature(const FitTempOpts& o, RunContext ctx) {
  calib::RecaptureCurve curve;
  read_xy_csv(o.data_path, &curve.release_us, &curve.survival);
  ctx.inputs.push_back(o.data_path);
  ctx.has_seed = true;
  ctx.seed = o.seed;
  ctx.config = {{"data", o.data_path},         {"depth_uk", o.depth_uk},
                {"waist_um", o.waist_um},      {"wavelength_nm", o.wavelength_nm},
                {"mass_amu", o.mass_amu},      {"n_mc", o.n_mc},
                {"t_min_uk", o.t_min_uk},      {"t_max_uk", o.t_max_uk}};

  qsim::TrapSpec trap = qsim::TrapSpec::from_optics(
      o.depth_uk, o.waist_um, o.wavelength_nm, 0.0,
      o.mass_amu * constants::atomic_mass_unit);
  double t_uk =
      calib::fit_temperature(trap, curve, o.n_mc, o.seed, o.t_min_uk, o.t_max_uk);

  json out_json = {{"temperature_uk", t_uk}};
  std::cout << out_json.dump(2) << "\n";
  if (!o.out.empty()) {
    open_output(o.out) << out_json.dump(2) << "\n";
    ctx.outputs.push_back(o.out);
  }
  ctx.finish();
}

// -------------------------------------------------------------- calibrate

struct CalTrapOpts {
  double omega_r_khz = 0.0;
  double omega_z_khz = 0.0;
  double wavelength_nm = 813.0;
  double mass_amu = constants::mass_rb87 / constants::atomic_mass_unit;
  std::string out;
};

void run_calibrate_trap(const CalTrapOpts& o, RunContext ctx) {
  ctx.config = {{"omega_r_khz", o.omega_r_khz},
                {"omega_z_khz", o.omega_z_khz},
                {"wavelength_nm", o.wavelength_nm},
                {"mass_amu", o.mass_amu}};
  qsim::TrapSpec trap = calib::invert_trap(
      2.0 * M_PI * o.omega_r_khz * 1e3, 2.0 * M_PI * o.omega_z_khz * 1e3,
      o.wavelength_nm, o.mass_amu * constants::atomic_mass_unit);
  json out_json = {{"depth_uk", trap.depth_uk},
                   {"waist_um", trap.waist_um},
                   {"rayleigh_um", trap.rayleigh_um},
                   {"wavelength_nm", trap.wavelength_nm}};
  std::cout << out_json.dump(2) << "\n";
  if (!o.out.empty()) {
    open_output(o.out) << out_json.dump(2) << "\n";
    ctx.outputs.push_back(o.out);
  }
  ctx.finish();
}

struct CalFieldOpts {
  std::string map_path, out, field_out;
  double e0 = 1.0;
  double i0 = 1.0;
  double waist_um = 2.0;
  int max_order = 20;
};

void run_calibrate_field(const CalFieldOpts& o, RunContext ctx) {
  std::ifstream in(o.map_path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot open map file: " + o.map_path);
  calib::IonizationMap map = calib::IonizationMap::read_csv(in);
  ctx.inputs.push_back(o.map_path);
  ctx.config = {{"map", o.map_path},
                {"e0", o.e0},
                {"i0", o.i0},
                {"waist_um", o.waist_um},
                {"max_order", o.max_order}};

  prop::SampledField field = calib::reconstruct_field(map, o.e0, o.i0);
  calib::HgExpansion expansion = calib::decompose_hg(field, o.waist_um, o.max_order);

  std::cout << "reconstruction_error " << fmt17(expansion.reconstruction_error)
            << "\n";
  if (!o.out.empty()) {
    open_output(o.out) << expansion.to_json_string() << "\n";
    ctx.outputs.push_back(o.out);
  }
  if (!o.field_out.empty()) {
    field.write_file(o.field_out);
    ctx.outputs.push_back(o.field_out);
  }
  ctx.finish();
}

}  // namespace

int main(int argc, char** argv) {
  std::string command_line;
  for (int i = 0; i < argc; ++i) {
    if (i) command_line += ' ';
    command_line += argv[i];
  }

  CLI::App app{"flat-top beam shaping and Rydberg-gate analysis toolkit"};
  app.set_version_flag("--version", manifest::version());
  app.require_subcommand(1);
  RunContext base_ctx;
  base_ctx.command = command_line;

  ProfileOpts profile_opts;
  auto* profile = app.add_subcommand("profile", "Flat-top curves, coefficients, transforms");
  profile->add_option("--order", profile_opts.order, "even flat-top order")
      ->capture_default_str();
  profile->add_option("--basis", profile_opts.basis, "hg (axis) or lg (radial)")
      ->capture_default_str();
  profile->add_option("--xmax-w0", profile_opts.xmax_w0, "axis extent, waist units")
      ->capture_default_str();
  profile->add_option("--points", profile_opts.points, "odd sample count")
      ->capture_default_str();
  profile->add_option("--waist-um", profile_opts.waist_um, "basis waist for --coeffs")
      ->capture_default_str();
  profile->add_option("--kmax", profile_opts.kmax, "transform extent")
      ->capture_default_str();
  profile->add_option("--fourier-points", profile_opts.fourier_points,
                      "transform sample count")
      ->capture_default_str();
  profile->add_option("--out", profile_opts.out, "profile CSV path")->required();
  profile->add_option("--coeffs", profile_opts.coeffs, "mode-coefficients JSON path");
  profile->add_option("--fourier", profile_opts.fourier, "transform CSV path");
  profile->callback([&] { run_profile(profile_opts, base_ctx); });

  PropagateOpts prop_opts;
  auto* propagate = app.add_subcommand("propagate", "Field slices off focus, on-axis expansion");
  propagate->add_option("--order", prop_opts.order, "per-axis even orders N M")
      ->expected(2);
  propagate->add_option("--z", prop_opts.z, "slice position, Rayleigh units")
      ->capture_default_str();
  propagate->add_option("--xmax-w0", prop_opts.xmax_w0, "axis extent, waist units")
      ->capture_default_str();
  propagate->add_option("--points", prop_opts.points, "samples across the slice")
      ->capture_default_str();
  propagate->add_option("--zmax", prop_opts.zmax, "on-axis extent for --taylor")
      ->capture_default_str();
  propagate->add_option("--z-points", prop_opts.z_points, "on-axis sample count")
      ->capture_default_str();
  propagate->add_option("--out", prop_opts.out, "slice CSV path")->required();
  propagate->add_option("--taylor", prop_opts.taylor, "on-axis comparison CSV path");
  propagate->callback([&] { run_propagate(prop_opts, base_ctx); });

  HologramOpts holo_opts;
  auto* hologram = app.add_subcommand("hologram", "Mask synthesis, far-field checks, aberration recovery");
  hologram->add_option("--order", holo_opts.order, "per-axis even orders N M")
      ->expected(2);
  hologram->add_option("--grating", holo_opts.grating, "blaze period, px per 2 pi")
      ->capture_default_str();
  hologram->add_option("--width", holo_opts.width, "panel width, px")
      ->capture_default_str();
  hologram->add_option("--height", holo_opts.height, "panel height, px")
      ->capture_default_str();
  hologram->add_option("--pixel-um", holo_opts.pixel_um, "pixel pitch")
      ->capture_default_str();
  hologram->add_option("--scale", holo_opts.scale, "far-field bins per waist unit")
      ->capture_default_str();
  hologram->add_option("--input-waist-px", holo_opts.input_waist_px,
                       "illumination waist, px")
      ->capture_default_str();
  hologram->add_option("--zernike-radius-px", holo_opts.zernike_radius_px,
                       "correction disk radius (0 = half short side)")
      ->capture_default_str();
  hologram->add_option("--aberrate", holo_opts.aberrate,
                       "inject astigmatism and coma, rad")
      ->expected(2);
  hologram->add_flag("--verify", holo_opts.verify, "simulate the far field, print metrics");
  hologram->add_flag("--optimize", holo_opts.optimize,
                     "recover Zernike corrections by coordinate descent");
  hologram->add_option("--mask", holo_opts.mask_path, "mask image path (.png/.pgm)");
  hologram->add_option("--far-field-png", holo_opts.far_field_png,
                       "first-order intensity PNG path");
  hologram->add_option("--metrics", holo_opts.metrics_path, "metrics JSON path");
  hologram->callback([&] { run_hologram(holo_opts, base_ctx); });

  auto* simulate = app.add_subcommand("simulate", "Thermal Monte Carlo runs");
  simulate->require_subcommand(1);
  SimOpts rabi_opts;
  auto* sim_rabi = simulate->add_subcommand("rabi", "Rabi oscillations per atom");
  sim_rabi->add_option("--config", rabi_opts.config_path, "run config JSON")->required();
  sim_rabi->add_option("--seed", rabi_opts.seed, "RNG seed")->capture_default_str();
  sim_rabi->add_option("--workers", rabi_opts.workers, "worker threads (0 = auto)")
      ->capture_default_str();
  sim_rabi->add_option("--out", rabi_opts.out, "curves CSV path")->required();
  sim_rabi->callback([&] { run_simulate_rabi(rabi_opts, base_ctx); });

  SimOpts cz_opts;
  auto* sim_cz = simulate->add_subcommand("cz", "CZ gate fidelity and error budget");
  sim_cz->add_option("--config", cz_opts.config_path, "run config JSON")->required();
  sim_cz->add_option("--seed", cz_opts.seed, "RNG seed")->capture_default_str();
  sim_cz->add_option("--workers", cz_opts.workers, "worker threads (0 = auto)")
      ->capture_default_str();
  sim_cz->add_option("--out", cz_opts.out, "result JSON path")->required();
  sim_cz->callback([&] { run_simulate_cz(cz_opts, base_ctx); });

  auto* fit = app.add_subcommand("fit", "Curve fitting");
  fit->require_subcommand(1);
  FitRabiOpts fit_rabi_opts;
  auto* fit_rabi = fit->add_subcommand("rabi", "Damped-oscillation fit of t_us,p data");
  fit_rabi->add_option("--data", fit_rabi_opts.data_path, "CSV with t_us,p rows")
      ->required();
  fit_rabi->add_option("--omega-bar-mhz", fit_rabi_opts.omega_bar_mhz,
                       "target Rabi frequency; adds the crosstalk ratio")
      ->capture_default_str();
  fit_rabi->add_option("--out", fit_rabi_opts.out, "fit JSON path");
  fit_rabi->callback([&] { run_fit_rabi(fit_rabi_opts, base_ctx); });

  FitTempOpts fit_temp_opts;
  auto* fit_temp = fit->add_subcommand("temperature",
                                       "Release-recapture thermometry of t_us,survival data");
  fit_temp->add_option("--data", fit_temp_opts.data_path, "CSV with t_us,survival rows")
      ->required();
  fit_temp->add_option("--depth-uk", fit_temp_opts.depth_uk, "trap depth")
      ->capture_default_str();
  fit_temp->add_option("--waist-um", fit_temp_opts.waist_um, "trap waist")
      ->capture_default_str();
  fit_temp->add_option("--wavelength-nm", fit_temp_opts.wavelength_nm, "trap wavelength")
      ->capture_default_str();
  fit_temp->add_option("--mass-amu", fit_temp_opts.mass_amu, "atom mass")
      ->capture_default_str();
  fit_temp->add_option("--n-mc", fit_temp_opts.n_mc, "Monte Carlo samples per candidate")
      ->capture_default_str();
  fit_temp->add_option("--seed", fit_temp_opts.seed, "RNG seed")->capture_default_str();
  fit_temp->add_option("--t-min-uk", fit_temp_opts.t_min_uk, "scan lower bound")
      ->capture_default_str();
  fit_temp->add_option("--t-max-uk", fit_temp_opts.t_max_uk, "scan upper bound")
      ->capture_default_str();
  fit_temp->add_option("--out", fit_temp_opts.out, "fit JSON path");
  fit_temp->callback([&] { run_fit_temperature(fit_temp_opts, base_ctx); });

  auto* calibrate = app.add_subcommand("calibrate", "Parameter extraction");
  calibrate->require_subcommand(1);
  CalTrapOpts cal_trap_opts;
  auto* cal_trap = calibrate->add_subcommand("trap", "Depth and waist from trap frequencies");
  cal_trap->add_option("--omega-r-khz", cal_trap_opts.omega_r_khz, "radial frequency / 2 pi")
      ->required();
  cal_trap->add_option("--omega-z-khz", cal_trap_opts.omega_z_khz, "axial frequency / 2 pi")
      ->required();
  cal_trap->add_option("--wavelength-nm", cal_trap_opts.wavelength_nm, "trap wavelength")
      ->capture_default_str();
  cal_trap->add_option("--mass-amu", cal_trap_opts.mass_amu, "atom mass")
      ->capture_default_str();
  cal_trap->add_option("--out", cal_trap_opts.out, "trap JSON path");
  cal_trap->callback([&] { run_calibrate_trap(cal_trap_opts, base_ctx); });

  CalFieldOpts cal_field_opts;
  auto* cal_field = calibrate->add_subcommand("field",
                                              "Field reconstruction from an ionization map");
  cal_field->add_option("--map", cal_field_opts.map_path, "CSV with x_um,y_um,p rows")
      ->required();
  cal_field->add_option("--e0", cal_field_opts.e0, "target-site field amplitude")
      ->capture_default_str();
  cal_field->add_option("--i0", cal_field_opts.i0, "target-site intensity")
      ->capture_default_str();
  cal_field->add_option("--waist-um", cal_field_opts.waist_um, "decomposition basis waist")
      ->capture_default_str();
  cal_field->add_option("--max-order", cal_field_opts.max_order, "modes per axis")
      ->capture_default_str();
  cal_field->add_option("--out", cal_field_opts.out, "expansion JSON path");
  cal_field->add_option("--field-out", cal_field_opts.field_out,
                        "reconstructed field (binary) path");
  cal_field->callback([&] { run_calibrate_field(cal_field_opts, base_ctx); });

  try {
    try {
      app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
      int code = app.exit(e);
      return code == 0 ? 0 : 2;
    }
  } catch (const ConvergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const ApertureError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const FitError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const StateError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::domain_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
