#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace beamkit::qsim {

using Matrix = Eigen::MatrixXcd;
using Vector = Eigen::VectorXcd;

// Atomic basis per atom: qubit states, intermediate |p>, Rydberg |r>, and an
// effective sink |L> that accumulates population lost to non-target states.
enum Level : int { lvl_0 = 0, lvl_1 = 1, lvl_p = 2, lvl_r = 3, lvl_loss = 4 };
inline constexpr int n_levels = 5;
inline constexpr int two_atom_dim = n_levels * n_levels;

Matrix ketbra(int i, int j);                    // 5x5 |i><j|
Matrix kron(const Matrix& a, const Matrix& b);  // atom-1 factor on the left
Matrix lift_atom1(const Matrix& op);            // op (x) I
Matrix lift_atom2(const Matrix& op);            // I (x) op

// How the ground-Rydberg transition is driven.  five_level keeps the full
// two-stage ladder through |p>; two_photon couples |1> <-> |r> directly at
// the effective Rabi frequency, which removes intermediate-state leakage and
// light shifts from the model.
enum class DriveMode { two_photon, five_level };

// Per-atom drive and decay parameters.  Angular frequencies in rad/s, decay
// rates in 1/s.
struct GateParams {
  std::complex<double> omega_r{0.0, 0.0};  // |1> <-> |p>, first stage
  std::complex<double> omega_b{0.0, 0.0};  // |p> <-> |r>, second stage
  std::complex<double> omega_two_photon{0.0, 0.0};  // direct |1> <-> |r>
  double delta_big = 0.0;    // detuning on |p> (enters as -delta_big |p><p|)
  double delta_small = 0.0;  // two-photon detuning on |r>
  double gamma_p = 0.0;      // |p> decay rate
  double gamma_r = 0.0;      // |r> decay rate
  // |p> branching; the printed flag reproduces the source's J_0p -> |1><p|
  // form, which leaves |0> unreachable and double-feeds |1>
  double branch_to_0 = 0.25;
  double branch_to_1 = 0.25;
  double branch_to_loss = 0.5;
  bool printed_jump_form = false;
};

Matrix build_hamiltonian_single(const GateParams& p);  // 5x5, Hermitian
// 25x25: H = H1 (x) I + I (x) H2 + V |rr><rr|
Matrix build_hamiltonian(const GateParams& p1, const GateParams& p2, double v);

std::vector<Matrix> jump_operators_single(const GateParams& p);  // 5x5 each
// Per-atom jumps lifted to the two-atom space; empty when all rates vanish.
std::vector<Matrix> jump_operators(const GateParams& p1, const GateParams& p2);

struct IntegratorOptions {
  double rel_tol = 1e-8;
  double abs_tol = 1e-10;
  double max_step = 0.0;  // 0 = unlimited
};

using HamiltonianFn = std::function<Matrix(double)>;

// Adaptive Lindblad integration; returns the density matrix at each
// requested time.  rho0 is the state at times.front().  Throws StateError on
// trace drift > 1e-8 or negativity beyond 1e-6, ConvergenceError when the
// step size underflows.
std::vector<Matrix> integrate_master(const Matrix& rho0, const HamiltonianFn& h,
                                     const std::vector<Matrix>& jumps,
                                     const std::vector<double>& times,
                                     const IntegratorOptions& opt = {});

// Quantum-jump unraveling averaged over n_traj trajectories; returns the
// averaged density matrix at each requested time.  Trajectory i draws from a
// stream derived from (seed, i), so results are bit-identical for a given
// (seed, n_traj) regardless of n_workers.
std::vector<Matrix> mcwf_evolve(const Vector& psi0, const HamiltonianFn& h,
                                const std::vector<Matrix>& jumps,
                                const std::vector<double>& times, int n_traj,
                                std::uint64_t seed, const IntegratorOptions& opt = {},
                                int n_workers = 0);

// Optical tweezer description.  Depth and temperature in uK, lengths in um,
// wavelength in nm, mass in kg.
struct TrapSpec {
  double depth_uk = 0.0;
  double waist_um = 0.0;
  double rayleigh_um = 0.0;
  double wavelength_nm = 0.0;
  double temperature_uk = 0.0;
  double mass_kg = 0.0;

  // rayleigh length tied to the optics: z0 = pi w0^2 / lambda
  static TrapSpec from_optics(double depth_uk, double waist_um, double wavelength_nm,
                              double temperature_uk, double mass_kg);
  void validate() const;  // throws std::invalid_argument
};

// Gaussian-beam trap potential, in uK, relative to the trap bottom
// (U(0) = 0, U -> depth_uk far away).
double trap_potential_uk(const TrapSpec& trap, double x_um, double y_um, double z_um);

struct TrapFrequencies {
  double omega_r = 0.0;  // rad/s
  double omega_z = 0.0;  // rad/s
};
TrapFrequencies trap_frequencies(const TrapSpec& trap);

// Ballistic atom: r(t) = r0 + v0 t.  Positions in um, velocities in um/us.
struct Trajectory {
  std::array<double, 3> r0_um{0.0, 0.0, 0.0};
  std::array<double, 3> v0_um_us{0.0, 0.0, 0.0};

  std::array<double, 3> position_um(double t_us) const {
    return {r0_um[0] + v0_um_us[0] * t_us, r0_um[1] + v0_um_us[1] * t_us,
            r0_um[2] + v0_um_us[2] * t_us};
  }
};

enum class ThermalMode { harmonic, exact };

struct ThermalOptions {
  // The Boltzmann weight in a Gaussian potential is not normalizable, so
  // exact-mode positions are confined to a box around the thermal core.
  // Per-axis half-widths: cutoff thermal widths (k_B T / m omega^2)^(1/2)
  // plus 1/16 of the beam scale, capped at w0/2 transversely and 3 z0/5
  // axially.  The pad keeps cold walks untruncated; the caps keep hot walks
  // out of the potential's flat tail, where they would instead fail the
  // acceptance-rate check.
  double cutoff = 2.0;
  int burn_in = 2000;
  int thin = 25;
};

// Boltzmann samples of initial conditions; velocities are Maxwellian in both
// modes.  Throws ConvergenceError when the exact-mode acceptance rate falls
// below 1%.
std::vector<Trajectory> sample_thermal(const TrapSpec& trap, ThermalMode mode, int n,
                                       std::uint64_t seed, const ThermalOptions& opt = {});

// Complex field amplitude at a point, in units of the value at the nominal
// target position.  Coordinates in um.
using FieldModel = std::function<std::complex<double>(double x, double y, double z)>;

// Static description of the drive beams and decay channels; trajectories
// turn it into time-dependent parameters.
struct DriveConfig {
  DriveMode mode = DriveMode::five_level;
  double omega_r_peak = 0.0;    // rad/s at the global-beam axis
  double omega_b_peak = 0.0;    // rad/s at unit addressing field
  double omega_bar_peak = 0.0;  // rad/s two-photon Rabi at unit field
  double delta_big = 0.0;       // rad/s
  double delta_small = 0.0;     // rad/s static two-photon detuning
  std::array<double, 2> light_shift = {0.0, 0.0};  // rad/s per-atom Stark term
  double gamma_p = 0.0;  // 1/s
  double gamma_r = 0.0;  // 1/s
  double branch_to_0 = 0.25, branch_to_1 = 0.25, branch_to_loss = 0.5;
  bool printed_jump_form = false;
  FieldModel addressing;             // empty = uniform unit field
  double global_waist_um = 570.0;    // first-stage Gaussian envelope
  // the global beam runs along x, the addressing beam along z
  std::array<double, 3> k1_dir = {1.0, 0.0, 0.0};   // first-stage propagation
  std::array<double, 3> k2_dir = {0.0, 0.0, 1.0};   // second-stage propagation
  double lambda1_nm = 795.0;
  double lambda2_nm = 474.0;
  // Rydberg interaction scale: V = c6 / separation^6.  The source never
  // states C6 for its Rydberg level; this default is a user-replaceable
  // placeholder of the right magnitude for high-S states.
  double c6_rad_s_um6 = 2.0 * M_PI * 140.0e9;
};

struct TwoAtomDrive {
  GateParams atom1, atom2;
  double v = 0.0;  // rad/s
};

using DriveFn = std::function<TwoAtomDrive(double t_s)>;

// Time-dependent parameters for a pair of ballistic atoms: addressing field
// sampled along each trajectory, global-beam envelope, two-photon Doppler
// shift (k1 - k2) . v, per-atom light shifts, and V(t) from the live
// separation.  Time in seconds.  The beams are orthogonal here, so the sign
// of the k2 leg only flips one velocity component and leaves the thermal
// statistics unchanged.
DriveFn params_from_trajectory(const Trajectory& t1, const Trajectory& t2,
                               const DriveConfig& config);

// One atom in a Rabi-scan run, at a given relative addressing-field
// amplitude (1 = target, eta = neighbor) and static extra detuning.
struct AtomSite {
  double field_amplitude = 1.0;
  double extra_detuning = 0.0;  // rad/s
};

struct RabiConfig {
  DriveMode mode = DriveMode::two_photon;
  double omega_bar = 0.0;  // rad/s at unit field
  double omega_r = 0.0, omega_b = 0.0, delta_big = 0.0;  // five_level
  double delta_small = 0.0;                              // rad/s
  double gamma_p = 0.0, gamma_r = 0.0;                   // 1/s
  double branch_to_0 = 0.25, branch_to_1 = 0.25, branch_to_loss = 0.5;
  bool printed_jump_form = false;
  std::vector<AtomSite> atoms = {AtomSite{}};
  // thermal averaging: sample (r, v) from the trap, Doppler-shift the
  // two-photon detuning by k_eff v_z, and modulate the field by the
  // addressing model along the flight
  bool thermal = false;
  TrapSpec trap;
  double k_eff_rad_um = 0.0;
  FieldModel addressing;
  // optional detuning-noise injection (rad/s added to the two-photon
  // detuning); empty = no-op
  std::function<double(double t_s)> phase_noise;
  IntegratorOptions integrator;
};

// Population in |1> for each atom at each requested time, starting from |1>,
// averaged over n_traj thermal trajectories (deterministic single run when
// thermal is off).
std::vector<std::vector<double>> rabi_scan(const RabiConfig& config,
                                           const std::vector<double>& times_s, int n_traj,
                                           std::uint64_t seed, int n_workers = 0);

// Two-pulse global-phase CZ protocol constants: per-pulse area omega_tau at
// drive detuning delta = detuning_ratio * omega, with laser phase jump xi
// between the pulses.
struct CzProtocol {
  double detuning_ratio = 0.377371;
  double omega_tau = 4.29268;
  double xi = 3.90242;
};

// Recomputes (omega_tau, xi) for a given detuning ratio from the two-level
// blockade blocks: the |11> block closes after one pulse, the phase jump
// closes the |01> block after the second.
CzProtocol derive_protocol(double detuning_ratio);
// Residual phi_11 - 2 phi_01 - pi of the closed protocol, wrapped to
// (-pi, pi]; zero at the CZ condition.
double protocol_phase_defect(const CzProtocol& protocol);
// Root-finds the detuning ratio that zeroes the phase defect, then derives
// the matching (omega_tau, xi).
CzProtocol optimize_protocol();

struct CzConfig {
  DriveMode mode = DriveMode::two_photon;
  double omega_bar = 2.0 * M_PI * 2.41e6;  // rad/s
  double omega_r = 0.0, omega_b = 0.0, delta_big = 0.0;  // five_level
  double delta_small = 0.0;  // rad/s added to the protocol detuning
  // light shifts of the two-photon resonance are cancelled automatically in
  // five_level mode unless this is disabled
  bool compensate_light_shift = true;
  double v = 0.0;            // rad/s fixed interaction; used when c6 = 0
  double c6_rad_s_um6 = 0.0; // V(t) from the live separation when nonzero
  double separation_um = 3.6;
  double gamma_p = 0.0, gamma_r = 0.0;  // 1/s
  double branch_to_0 = 0.25, branch_to_1 = 0.25, branch_to_loss = 0.5;
  bool printed_jump_form = false;
  bool thermal = false;
  TrapSpec trap;
  double k_eff_rad_um = 0.0;
  FieldModel addressing;
  // drive-amplitude asymmetry between the two addressed atoms (measured
  // intensity uniformity); the budget's crosstalk channel toggles this
  std::array<double, 2> field_asymmetry = {1.0, 1.0};
  // optional detuning-noise injection (rad/s); empty = no-op
  std::function<double(double t_s)> phase_noise;
  IntegratorOptions integrator;
};

struct CzResult {
  double fidelity = 0.0;   // Bell-state fidelity from |++>, maximized over
                           // the virtual single-qubit phase
  double best_phi = 0.0;   // the maximizing phase
  double tau_s = 0.0;      // per-pulse duration
  // infidelity deltas from toggling one channel off at a time, plus the
  // residual with everything off
  std::map<std::string, double> budget;
};

// Simulates the two-pulse CZ and measures fidelity; when any of the decay /
// thermal / crosstalk channels is active, reruns with each channel disabled
// to populate the budget.
CzResult cz_gate(const CzConfig& config, const CzProtocol& protocol, int n_traj,
                 std::uint64_t seed, int n_workers = 0);

}  // namespace beamkit::qsim
