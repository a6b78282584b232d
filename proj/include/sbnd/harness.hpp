// Copyright 2026 The sbnd Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#pragma once

// Experiment runner behind the `sbnd` CLI: run configuration, seeded
// train/evaluate pipelines per (method, lattice, seed), the scan commands and
// result persistence (CSV rows plus a JSON manifest).

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <tuple>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "sbnd/absnd.hpp"
#include "sbnd/config.hpp"
#include "sbnd/errors.hpp"
#include "sbnd/io.hpp"
#include "sbnd/models.hpp"
#include "sbnd/qcircuit.hpp"
#include "sbnd/sampler.hpp"
#include "sbnd/subspace.hpp"
#include "sbnd/vonmises.hpp"

namespace sbnd {

inline constexpr const char* kVersion = "0.1.0";

enum class Method { SbdGs, Snd, AbsndHf, AbsndVm, AbsndCircuit };

inline std::string method_name(Method m) {
  switch (m) {
    case Method::SbdGs: return "sbd_gs";
    case Method::Snd: return "snd";
    case Method::AbsndHf: return "absnd_hf";
    case Method::AbsndVm: return "absnd_vm";
    case Method::AbsndCircuit: return "absnd_circuit";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  for (Method m : {Method::SbdGs, Method::Snd, Method::AbsndHf, Method::AbsndVm,
                   Method::AbsndCircuit})
    if (method_name(m) == s) return m;
  throw ConfigError("unknown method '" + s + "'");
}

inline bool is_absnd(Method m) {
  return m == Method::AbsndHf || m == Method::AbsndVm || m == Method::AbsndCircuit;
}

struct InferenceConfig {
  std::vector<std::size_t> sizes{10, 32, 100};
  double temperature = 1.0;
  std::size_t max_draws = 1'000'000;
  /// Targets >= 2^N use the complete basis instead of sampling.
  bool full_basis_shortcut = true;
};

struct RunConfig {
  LatticeSpec model = LatticeSpec::chain(10, 1.0);
  Method method = Method::Snd;
  TransformFamily transform = TransformFamily::SingleSpinRy;
  int shots = 0;
  /// sbd_gs: scan a uniform single-spin rotation angle on this many points
  /// in [0, pi/2] and keep the best energy per S.
  bool rotations = false;
  int rotation_grid = 33;
  /// Training settings; K defaults to 16 for SND and 4 for AB-SND.
  TrainConfig train;
  bool k_explicit = false;
  int vm_hidden = 64;
  double vm_kappa0 = 20.0;
  double lr_nu = 1e-2;
  InferenceConfig inference;
  // Scans.
  std::vector<double> h_grid;
  std::vector<Method> methods;
  int seeds = 1;
  // required-s.
  std::vector<int> sizes_n;
  double target_eps = 0.01;
  std::size_t s_max = 4096;
  // temp-sweep.
  std::vector<double> temperatures{1.0, 1.3};
  std::vector<std::size_t> draws{10000};
  std::string checkpoint;
  std::uint64_t seed = 1;
  std::string out_dir = "sbnd_out";
  /// Parsed document, echoed into the manifest.
  std::map<std::string, std::string> echo;

  TrainConfig train_for(Method m) const {
    TrainConfig t = train;
    if (!k_explicit) t.K = is_absnd(m) ? 4 : 16;
    return t;
  }

  void validate() const;
  static RunConfig from_config(const Config& c);
};

inline LatticeSpec with_h(LatticeSpec s, double h) {
  s.h = h;
  return s;
}

inline LatticeSpec with_n(LatticeSpec s, int n) {
  if (s.kind != LatticeKind::chain_periodic)
    throw ConfigError("system-size lists are supported for chains only");
  s.lx = n;
  return s;
}

inline void check_method(Method m, const LatticeSpec& spec) {
  const int n = spec.n_sites();
  if (m == Method::SbdGs && n > kMaxExactSites)
    throw ConfigError("sbd_gs needs the exact ground state: N <= 16");
  if (m == Method::AbsndCircuit && n > kMaxCircuitQubits)
    throw ConfigError("absnd_circuit requires N <= 12");
  if (spec.kind != LatticeKind::chain_periodic && n > kMaxExactSites)
    throw ConfigError("reference energy needs exact diagonalization: N <= 16");
}

inline void RunConfig::validate() const {
  try {
    model.validate();
    train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  const std::vector<Method> ms = methods.empty() ? std::vector<Method>{method} : methods;
  for (Method m : ms) check_method(m, model);
  for (int n : sizes_n) {
    if (n < 2) throw ConfigError("required_s.n: sizes must be >= 2");
    for (Method m : ms) check_method(m, with_n(model, n));
  }
  for (double h : h_grid)
    if (!(h >= 0)) throw ConfigError("scan.h: fields must be >= 0");
  if (inference.sizes.empty()) throw ConfigError("inference.S must not be empty");
  for (std::size_t s : inference.sizes)
    if (s == 0) throw ConfigError("inference.S: sizes must be >= 1");
  if (!(inference.temperature > 0)) throw ConfigError("inference.temperature must be > 0");
  if (inference.max_draws == 0) throw ConfigError("inference.max_draws must be >= 1");
  if (seeds < 1) throw ConfigError("scan.seeds must be >= 1");
  if (rotation_grid < 2) throw ConfigError("method.rotation_grid must be >= 2");
  if (!(target_eps > 0)) throw ConfigError("required_s.target must be > 0");
  if (s_max < 1) throw ConfigError("required_s.s_max must be >= 1");
  for (double t : temperatures)
    if (!(t > 0)) throw ConfigError("temp_sweep.temperatures must be > 0");
  if (shots < 0) throw ConfigError("method.shots must be >= 0");
  if (!(vm_kappa0 > VonMisesNet::kKappaFloor)) throw ConfigError("train.vm_kappa0 too small");
}

inline RunConfig RunConfig::from_config(const Config& c) {
  RunConfig r;
  r.seed = static_cast<std::uint64_t>(c.get_int("seed", 1));
  r.out_dir = c.get_string("out", r.out_dir);

  const std::string lat = c.get_string("model.lattice", "chain");
  const double h = c.get_double("model.h", 1.0);
  const auto lx = static_cast<int>(c.get_int("model.lx", 3));
  const auto ly = static_cast<int>(c.get_int("model.ly", 3));
  if (lat == "chain") {
    r.model = LatticeSpec::chain(static_cast<int>(c.get_int("model.n", 10)), h);
  } else if (lat == "square_open" || lat == "square_periodic") {
    r.model = LatticeSpec::square(lx, ly, h, lat == "square_periodic");
  } else if (lat == "eam") {
    r.model = LatticeSpec::eam(lx, ly, h, static_cast<std::uint64_t>(c.get_int("model.coupling_seed", 0)));
  } else {
    throw ConfigError("model.lattice: unknown lattice '" + lat + "'");
  }

  r.method = parse_method(c.get_string("method.name", "snd"));
  try {
    r.transform = parse_transform_family(c.get_string("method.transform", "single_spin_ry"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  r.shots = static_cast<int>(c.get_int("method.shots", 0));
  r.rotations = c.get_bool("method.rotations", false);
  r.rotation_grid = static_cast<int>(c.get_int("method.rotation_grid", r.rotation_grid));

  TrainConfig& t = r.train;
  r.k_explicit = c.has("train.K");
  t.K = static_cast<int>(c.get_int("train.K", 16));
  t.batch_size = static_cast<int>(c.get_int("train.batch_size", t.batch_size));
  t.steps = static_cast<int>(c.get_int("train.steps", t.steps));
  t.lr = c.get_double("train.lr", t.lr);
  t.lr_theta = c.get_double("train.lr_theta", t.lr_theta);
  t.lr_final_fraction = c.get_double("train.lr_final_fraction", t.lr_final_fraction);
  t.temperature = c.get_double("train.temperature", t.temperature);
  t.arch.d_model = static_cast<int>(c.get_int("train.d_model", t.arch.d_model));
  t.arch.n_heads = static_cast<int>(c.get_int("train.n_heads", t.arch.n_heads));
  t.arch.n_layers = static_cast<int>(c.get_int("train.n_layers", t.arch.n_layers));
  t.arch.d_ff = static_cast<int>(c.get_int("train.d_ff", t.arch.d_ff));
  r.vm_hidden = static_cast<int>(c.get_int("train.vm_hidden", r.vm_hidden));
  r.vm_kappa0 = c.get_double("train.vm_kappa0", r.vm_kappa0);
  r.lr_nu = c.get_double("train.lr_nu", r.lr_nu);

  auto sizes = [&](const std::string& key, std::vector<std::size_t> def) {
    std::vector<std::int64_t> d(def.begin(), def.end());
    std::vector<std::size_t> out;
    for (std::int64_t v : c.get_ints(key, d)) {
      if (v < 1) throw ConfigError(key + ": values must be >= 1");
      out.push_back(static_cast<std::size_t>(v));
    }
    return out;
  };
  r.inference.sizes = sizes("inference.S", r.inference.sizes);
  r.inference.temperature = c.get_double("inference.temperature", r.inference.temperature);
  const std::int64_t md = c.get_int("inference.max_draws", static_cast<std::int64_t>(r.inference.max_draws));
  if (md < 1) throw ConfigError("inference.max_draws must be >= 1");
  r.inference.max_draws = static_cast<std::size_t>(md);
  r.inference.full_basis_shortcut = c.get_bool("inference.full_basis_shortcut", true);

  r.h_grid = c.get_doubles("scan.h", {});
  for (const std::string& m : c.get_strings("scan.methods", {})) r.methods.push_back(parse_method(m));
  r.seeds = static_cast<int>(c.get_int("scan.seeds", 1));

  for (std::int64_t n : c.get_ints("required_s.n", {})) r.sizes_n.push_back(static_cast<int>(n));
  r.target_eps = c.get_double("required_s.target", r.target_eps);
  const std::int64_t sm = c.get_int("required_s.s_max", static_cast<std::int64_t>(r.s_max));
  if (sm < 1) throw ConfigError("required_s.s_max must be >= 1");
  r.s_max = static_cast<std::size_t>(sm);

  r.temperatures = c.get_doubles("temp_sweep.temperatures", r.temperatures);
  r.draws = sizes("temp_sweep.draws", r.draws);
  r.checkpoint = c.get_string("temp_sweep.checkpoint", "");

  const auto unused = c.unused_keys();
  if (!unused.empty()) {
    std::string msg = "unknown config keys:";
    for (const auto& k : unused) msg += " " + k;
    throw ConfigError(msg);
  }
  for (const auto& [k, v] : c.values()) r.echo[k] = v.to_string();
  return r;
}

// ---------------------------------------------------------------------------
// Result rows
// ---------------------------------------------------------------------------

struct RunRecord {
  std::string command;
  std::string method;
  int n = 0;
  double h = 0.0;
  std::uint64_t seed = 0;
  std::size_t s_target = 0;
  std::size_t s = 0;
  /// Draws consumed (duplicates included); 0 for the full-basis shortcut.
  std::size_t n_s = 0;
  double temperature = 1.0;
  double energy = 0.0;
  double e0 = 0.0;
  std::string e0_source;
  double eps = 0.0;
  double wall_time = 0.0;
  std::string theta_hash = "none";
  /// ok | partial | full_basis | censored | ratio
  std::string flag = "ok";
};

inline std::string fmt_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline const char* kCsvHeader =
    "command,method,N,h,seed,S_target,S,N_s,T,E,E0,E0_source,eps,wall_time_s,theta_hash,flag";

/// One CSV line; the wall-time field is the only non-deterministic column.
inline std::string csv_line(const RunRecord& r, bool with_time = true) {
  std::string s = r.command + "," + r.method + "," + std::to_string(r.n) + "," + fmt_double(r.h) +
                  "," + std::to_string(r.seed) + "," + std::to_string(r.s_target) + "," +
                  std::to_string(r.s) + "," + std::to_string(r.n_s) + "," +
                  fmt_double(r.temperature) + "," + fmt_double(r.energy) + "," + fmt_double(r.e0) +
                  "," + r.e0_source + "," + fmt_double(r.eps) + ",";
  s += with_time ? fmt_double(r.wall_time) : "";
  return s + "," + r.theta_hash + "," + r.flag;
}

/// FNV-1a over the IEEE bytes of the angle vector.
inline std::string theta_hash(std::span<const double> theta) {
  if (theta.empty()) return "none";
  std::uint64_t h = 1469598103934665603ULL;
  for (double v : theta) {
    unsigned char b[sizeof(double)];
    std::memcpy(b, &v, sizeof b);
    for (unsigned char c : b) h = (h ^ c) * 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Extra tabular output (aggregates) written next to results.csv.
struct Table {
  std::string name;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

struct RunResult {
  std::vector<RunRecord> rows;
  std::vector<Table> tables;
  std::vector<std::uint64_t> seeds;
};

// ---------------------------------------------------------------------------
// Pipelines
// ---------------------------------------------------------------------------

/// Reference energies, computed once per lattice.
class ReferenceCache {
 public:
  const ExactSolution& get(const LatticeSpec& spec, bool need_state) {
    const std::string key = lattice_key(spec) + (need_state ? "/state" : "");
    auto it = cache_.find(key);
    if (it == cache_.end()) it = cache_.emplace(key, reference_energy(spec, need_state)).first;
    return it->second;
  }

  static std::string lattice_key(const LatticeSpec& s) {
    return std::string(lattice_kind_name(s.kind)) + ":" + std::to_string(s.lx) + "x" +
           std::to_string(s.ly) + ":h=" + fmt_double(s.h) + ":c=" +
           std::to_string(static_cast<int>(s.couplings)) + ":" + std::to_string(s.seed);
  }

 private:
  std::map<std::string, ExactSolution> cache_;
};

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

/// A trained sampler (SND or AB-SND) ready for inference.
struct TrainedPoint {
  Method method = Method::Snd;
  LatticeSpec spec;
  PauliSum h;
  ArModel model;
  std::vector<double> theta;
  TransformSpec tspec;
  EnergyBackendKind backend = EnergyBackendKind::Pauli;
  TrainTrace trace;
  double train_time = 0.0;
};

inline TransformSpec transform_for(const RunConfig& rc, Method m, const LatticeSpec& spec) {
  const int n = spec.n_sites();
  if (m == Method::AbsndCircuit) return TransformSpec::circuit(spec);
  switch (rc.transform) {
    case TransformFamily::SingleSpinRy: return TransformSpec::single_spin(n);
    case TransformFamily::PairwiseBlocks: return TransformSpec::pairwise(n);
    case TransformFamily::CircuitAnsatz: return TransformSpec::circuit(spec);
  }
  return TransformSpec::single_spin(n);
}

inline TrainedPoint train_point(const RunConfig& rc, Method m, const LatticeSpec& spec,
                                std::uint64_t seed,
                                const std::function<void(int, double)>& on_step = {}) {
  if (m == Method::SbdGs) throw std::logic_error("train_point: sbd_gs has no sampler");
  check_method(m, spec);
  const auto t0 = Clock::now();
  TrainedPoint p;
  p.method = m;
  p.spec = spec;
  p.h = build_hamiltonian(spec);
  const TrainConfig cfg = rc.train_for(m);
  const Rng rng(seed);
  if (m == Method::Snd) {
    SndResult r = train_snd(p.h, cfg, rng, on_step);
    p.model = std::move(r.model);
    p.trace = std::move(r.trace);
  } else if (m == Method::AbsndVm) {
    VonMisesOptions o{transform_for(rc, m, spec)};
    o.hidden = rc.vm_hidden;
    o.kappa0 = rc.vm_kappa0;
    o.lr_nu = rc.lr_nu;
    VonMisesResult r = train_absnd_vonmises(p.h, cfg, o, rng, on_step);
    p.model = std::move(r.model);
    p.theta = std::move(r.theta);
    p.trace = std::move(r.trace);
    p.tspec = o.spec;
  } else {
    AbsndOptions o{transform_for(rc, m, spec)};
    o.backend = m == Method::AbsndCircuit ? EnergyBackendKind::Circuit : EnergyBackendKind::Pauli;
    Rng shot_rng = rng.split("shots");
    if (rc.shots > 0) o.shots = ExpectationOptions{rc.shots, &shot_rng};
    AbsndResult r = train_absnd(p.h, cfg, o, rng, on_step);
    p.model = std::move(r.model);
    p.theta = std::move(r.theta);
    p.trace = std::move(r.trace);
    p.tspec = o.spec;
    p.backend = o.backend;
  }
  p.train_time = seconds_since(t0);
  return p;
}

/// Subspace energy oracle for a trained point at its final angles.
inline std::function<double(const ConfigSet&)> energy_oracle(const TrainedPoint& p) {
  if (p.method == Method::Snd) {
    return [h = p.h](const ConfigSet& c) { return sbd_energy_rotated(h, c).energy; };
  }
  auto be = std::make_shared<EnergyBackend>(p.h, p.tspec, p.backend);
  be->prepare(p.theta, false);
  return [be](const ConfigSet& c) { return be->evaluate(c).energy; };
}

inline void check_variational(const RunRecord& r) {
  if (r.energy < r.e0 - 1e-9 * std::max(1.0, std::abs(r.e0)))
    throw NumericalError("subspace energy " + fmt_double(r.energy) + " below reference " +
                         fmt_double(r.e0) + " (" + r.method + ", N=" + std::to_string(r.n) + ")");
}

inline RunRecord base_record(const std::string& command, Method m, const LatticeSpec& spec,
                             std::uint64_t seed, const ExactSolution& ref) {
  RunRecord r;
  r.command = command;
  r.method = method_name(m);
  r.n = spec.n_sites();
  r.h = spec.h;
  r.seed = seed;
  r.e0 = ref.energy;
  r.e0_source = ref.source;
  return r;
}

inline void finish_record(RunRecord& r, double energy, bool check) {
  r.energy = energy;
  r.eps = relative_error(energy, r.e0);
  if (check) check_variational(r);
}

inline bool covers_full_basis(std::size_t s, int n) {
  return n < 63 && s >= (std::size_t{1} << n);
}

/// Inference rows of a trained point at the given sizes and temperature.
inline std::vector<RunRecord> evaluate_point(const RunConfig& rc, const std::string& command,
                                             const TrainedPoint& p, const ExactSolution& ref,
                                             std::uint64_t seed, std::span<const std::size_t> sizes,
                                             double T) {
  const auto t0 = Clock::now();
  const int n = p.spec.n_sites();
  const auto oracle = energy_oracle(p);
  std::vector<std::size_t> sampled;
  for (std::size_t s : sizes)
    if (!(rc.inference.full_basis_shortcut && covers_full_basis(s, n))) sampled.push_back(s);
  Rng rng = Rng(seed).split("inference");
  const auto inf = infer_energies(p.model, p.theta, sampled, T, rc.inference.max_draws, rng, oracle);
  std::vector<RunRecord> rows;
  std::size_t k = 0;
  // Inference energies are exact even when training used shot noise.
  const bool check = true;
  for (std::size_t s : sizes) {
    RunRecord r = base_record(command, p.method, p.spec, seed, ref);
    r.s_target = s;
    r.temperature = T;
    r.theta_hash = theta_hash(p.theta);
    if (rc.inference.full_basis_shortcut && covers_full_basis(s, n)) {
      r.s = std::size_t{1} << n;
      r.n_s = 0;
      r.flag = "full_basis";
      finish_record(r, oracle(ConfigSet::full_basis(n)), check);
    } else {
      const InferenceRow& row = inf[k++];
      r.s = row.size;
      r.n_s = row.draws;
      r.flag = row.partial ? "partial" : "ok";
      finish_record(r, row.energy, check);
    }
    rows.push_back(r);
  }
  const double dt = p.train_time + seconds_since(t0);
  for (auto& r : rows) r.wall_time = dt;
  return rows;
}

// ---------------------------------------------------------------------------
// Sampling from the exact ground state
// ---------------------------------------------------------------------------

/// Amplitudes of psi in the basis rotated by RY(phi) on every site, i.e.
/// <x| U^dag |psi> with U = prod_i RY_i(phi), in dense order.
inline Eigen::VectorXcd rotate_state_uniform_ry(const Eigen::VectorXcd& psi, int n, double phi) {
  Eigen::VectorXcd v = psi;
  const double c = std::cos(phi / 2), s = std::sin(phi / 2);
  const auto dim = static_cast<std::size_t>(v.size());
  for (int site = 0; site < n; ++site) {
    const std::size_t bit = std::size_t{1} << (n - 1 - site);
    for (std::size_t i = 0; i < dim; ++i) {
      if (i & bit) continue;
      const auto a = static_cast<Eigen::Index>(i), b = static_cast<Eigen::Index>(i | bit);
      const cplx v0 = v[a], v1 = v[b];
      // RY(-phi) = [[c, s], [-s, c]].
      v[a] = c * v0 + s * v1;
      v[b] = -s * v0 + c * v1;
    }
  }
  return v;
}

/// Distinct configurations drawn i.i.d. from |amp|^2 in first-seen order.
inline UniqueSample sample_unique_from_state(const Eigen::VectorXcd& amp, int n, std::size_t target,
                                             std::size_t max_draws, Rng& rng) {
  const auto dim = static_cast<std::size_t>(amp.size());
  target = std::min(target, dim);
  std::vector<double> cdf(dim);
  double acc = 0.0;
  for (std::size_t i = 0; i < dim; ++i) cdf[i] = acc += std::norm(amp[static_cast<Eigen::Index>(i)]);
  UniqueSample u;
  while (u.configs.size() < target && u.draws < max_draws) {
    const double r = rng.uniform() * acc;
    std::size_t idx = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), r) - cdf.begin());
    idx = std::min(idx, dim - 1);
    ++u.draws;
    if (u.configs.insert(from_dense_index(idx, n))) u.draw_index.push_back(u.draws);
  }
  u.partial = u.configs.size() < target;
  return u;
}

/// Rotation angles scanned by sbd_gs (just 0 without rotations).
inline std::vector<double> gs_angles(const RunConfig& rc) {
  if (!rc.rotations) return {0.0};
  std::vector<double> a;
  for (int g = 0; g < rc.rotation_grid; ++g)
    a.push_back(0.5 * std::numbers::pi * g / (rc.rotation_grid - 1));
  return a;
}

/// One candidate basis for ground-state sampling: angle, rotated operator and
/// a sample of distinct configurations.
struct GsCandidate {
  double phi = 0.0;
  PauliSum h_rot;
  UniqueSample sample;
};

inline std::vector<GsCandidate> gs_candidates(const RunConfig& rc, const LatticeSpec& spec,
                                              const ExactSolution& gs, std::size_t smax,
                                              std::uint64_t seed) {
  const int n = spec.n_sites();
  const PauliSum h = build_hamiltonian(spec);
  std::vector<GsCandidate> out;
  const Rng base = Rng(seed).split("ground-state-sampling");
  const auto angles = gs_angles(rc);
  for (std::size_t g = 0; g < angles.size(); ++g) {
    GsCandidate c;
    c.phi = angles[g];
    BasisTransform t(n);
    for (int i = 0; i < n; ++i) t.gates.push_back(RotationGate::ry(i, c.phi, 0));
    c.h_rot = c.phi == 0.0 ? h : conjugate_transform(h, t);
    Rng rng = base.split(g);
    c.sample = sample_unique_from_state(rotate_state_uniform_ry(gs.psi0, n, c.phi), n, smax,
                                        rc.inference.max_draws, rng);
    out.push_back(std::move(c));
  }
  return out;
}

inline std::vector<RunRecord> gs_point(const RunConfig& rc, const std::string& command,
                                       const LatticeSpec& spec, ReferenceCache& refs,
                                       std::uint64_t seed, std::span<const std::size_t> sizes) {
  check_method(Method::SbdGs, spec);
  const auto t0 = Clock::now();
  const ExactSolution& gs = refs.get(spec, true);
  std::size_t smax = 0;
  for (std::size_t s : sizes)
    if (!(rc.inference.full_basis_shortcut && covers_full_basis(s, spec.n_sites())))
      smax = std::max(smax, s);
  const auto cands = gs_candidates(rc, spec, gs, smax, seed);
  std::vector<RunRecord> rows;
  for (std::size_t s : sizes) {
    RunRecord best = base_record(command, Method::SbdGs, spec, seed, gs);
    best.s_target = s;
    if (rc.inference.full_basis_shortcut && covers_full_basis(s, spec.n_sites())) {
      best.s = std::size_t{1} << spec.n_sites();
      best.flag = "full_basis";
      finish_record(best, sbd_energy_rotated(cands.front().h_rot, ConfigSet::full_basis(spec.n_sites())).energy, true);
      rows.push_back(best);
      continue;
    }
    best.energy = std::numeric_limits<double>::infinity();
    for (const GsCandidate& c : cands) {
      const std::size_t size = std::min(s, c.sample.configs.size());
      const double e = sbd_energy_rotated(c.h_rot, c.sample.configs.prefix(size)).energy;
      if (e < best.energy) {
        best.energy = e;
        best.s = size;
        best.n_s = size < s ? c.sample.draws : c.sample.draw_index[size - 1];
        best.flag = size < s ? "partial" : "ok";
        best.theta_hash = rc.rotations ? theta_hash(std::vector<double>(
                                             static_cast<std::size_t>(spec.n_sites()), c.phi))
                                       : "none";
      }
    }
    best.s_target = s;
    finish_record(best, best.energy, true);
    rows.push_back(best);
  }
  const double dt = seconds_since(t0);
  for (auto& r : rows) r.wall_time = dt;
  return rows;
}

/// Replicate r of a run uses master seed + r.
inline std::vector<std::uint64_t> replicate_seeds(const RunConfig& rc) {
  std::vector<std::uint64_t> s;
  for (int r = 0; r < rc.seeds; ++r) s.push_back(rc.seed + static_cast<std::uint64_t>(r));
  return s;
}

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

/// Median eps over seeds per (method, N, h, S_target, T).
inline Table median_table(const std::vector<RunRecord>& rows) {
  std::map<std::tuple<std::string, int, double, std::size_t, double>, std::vector<double>> groups;
  for (const auto& r : rows)
    if (r.flag != "ratio") groups[{r.method, r.n, r.h, r.s_target, r.temperature}].push_back(r.eps);
  Table t{"summary", {"method", "N", "h", "S_target", "T", "n_seeds", "median_eps"}, {}};
  for (const auto& [k, v] : groups)
    t.rows.push_back({std::get<0>(k), std::to_string(std::get<1>(k)), fmt_double(std::get<2>(k)),
                      std::to_string(std::get<3>(k)), fmt_double(std::get<4>(k)),
                      std::to_string(v.size()), fmt_double(median(v))});
  return t;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

inline std::vector<Method> scan_methods(const RunConfig& rc) {
  return rc.methods.empty() ? std::vector<Method>{rc.method} : rc.methods;
}

inline RunResult cmd_sbd_gs(const RunConfig& rc) {
  RunResult res;
  ReferenceCache refs;
  res.seeds = replicate_seeds(rc);
  for (std::uint64_t s : res.seeds) {
    const auto rows = gs_point(rc, "sbd-gs", rc.model, refs, s, rc.inference.sizes);
    res.rows.insert(res.rows.end(), rows.begin(), rows.end());
  }
  if (rc.seeds > 1) res.tables.push_back(median_table(res.rows));
  return res;
}

/// Trains one sampler; used by snd-train and absnd-train. The trained point
/// is returned for checkpointing.
inline RunResult train_command(const RunConfig& rc, const std::string& command, Method m,
                               std::optional<TrainedPoint>* keep = nullptr) {
  RunResult res;
  ReferenceCache refs;
  const ExactSolution& ref = refs.get(rc.model, false);
  res.seeds = {rc.seed};
  TrainedPoint p = train_point(rc, m, rc.model, rc.seed);
  res.rows = evaluate_point(rc, command, p, ref, rc.seed, rc.inference.sizes, rc.inference.temperature);
  Table trace{"trace", {"step", "mean_energy", "eps", "theta_hash"}, {}};
  for (std::size_t i = 0; i < p.trace.mean_energy.size(); ++i) {
    const double e = p.trace.mean_energy[i];
    trace.rows.push_back({std::to_string(i), fmt_double(e), fmt_double(relative_error(e, ref.energy)),
                          i < p.trace.theta.size() ? theta_hash(p.trace.theta[i]) : "none"});
  }
  res.tables.push_back(std::move(trace));
  if (keep) *keep = std::move(p);
  return res;
}

inline RunResult cmd_snd_train(const RunConfig& rc, std::optional<TrainedPoint>* keep = nullptr) {
  return train_command(rc, "snd-train", Method::Snd, keep);
}

inline RunResult cmd_absnd_train(const RunConfig& rc, std::optional<TrainedPoint>* keep = nullptr) {
  const Method m = is_absnd(rc.method) ? rc.method : Method::AbsndHf;
  return train_command(rc, "absnd-train", m, keep);
}

/// methods x h grid x seeds, evaluated at the inference sizes.
inline RunResult scan_grid(const RunConfig& rc, const std::string& command,
                           const std::vector<Method>& methods, const std::vector<double>& hs,
                           std::span<const std::size_t> sizes) {
  RunResult res;
  ReferenceCache refs;
  res.seeds = replicate_seeds(rc);
  for (Method m : methods)
    for (double h : hs)
      for (std::uint64_t s : res.seeds) {
        const LatticeSpec spec = with_h(rc.model, h);
        std::vector<RunRecord> rows;
        if (m == Method::SbdGs) {
          rows = gs_point(rc, command, spec, refs, s, sizes);
        } else {
          const TrainedPoint p = train_point(rc, m, spec, s);
          rows = evaluate_point(rc, command, p, refs.get(spec, false), s, sizes,
                                rc.inference.temperature);
        }
        res.rows.insert(res.rows.end(), rows.begin(), rows.end());
      }
  res.tables.push_back(median_table(res.rows));
  return res;
}

inline RunResult cmd_scan_h(const RunConfig& rc) {
  const std::vector<double> hs = rc.h_grid.empty() ? std::vector<double>{rc.model.h} : rc.h_grid;
  return scan_grid(rc, "scan-h", scan_methods(rc), hs, rc.inference.sizes);
}

inline RunResult cmd_circuit_demo(const RunConfig& rc) {
  if (rc.model.n_sites() > 8) throw ConfigError("circuit-demo requires N <= 8");
  const std::vector<Method> ms = rc.methods.empty()
                                     ? std::vector<Method>{Method::Snd, Method::AbsndHf,
                                                           Method::AbsndCircuit}
                                     : rc.methods;
  const std::vector<double> hs =
      rc.h_grid.empty() ? std::vector<double>{0.1, 0.5, 1.0, 1.25, 1.5, 2.0} : rc.h_grid;
  RunConfig c = rc;
  c.transform = TransformFamily::SingleSpinRy;
  return scan_grid(c, "circuit-demo", ms, hs, rc.inference.sizes);
}

/// Smallest prefix size whose energy meets the target (energies are
/// non-increasing in the prefix size, so bisection is exact).
template <class EnergyFn>
std::pair<std::size_t, double> smallest_prefix(std::size_t available, double e0, double target,
                                               EnergyFn&& energy) {
  if (available == 0) return {0, std::numeric_limits<double>::infinity()};
  const double e_all = energy(available);
  if (relative_error(e_all, e0) > target) return {available, e_all};
  std::size_t lo = 1, hi = available;
  double e_hi = e_all;
  while (lo < hi) {
    const std::size_t mid = lo + (hi - lo) / 2;
    const double e = energy(mid);
    if (relative_error(e, e0) <= target) {
      hi = mid;
      e_hi = e;
    } else {
      lo = mid + 1;
    }
  }
  return {hi, hi == available ? e_all : e_hi};
}

inline RunResult cmd_required_s(const RunConfig& rc) {
  RunResult res;
  ReferenceCache refs;
  res.seeds = replicate_seeds(rc);
  const std::vector<int> ns =
      rc.sizes_n.empty() ? std::vector<int>{rc.model.n_sites()} : rc.sizes_n;
  Table agg{"summary", {"method", "N", "h", "n_seeds", "n_censored", "mean_S", "std_S"}, {}};
  for (Method m : scan_methods(rc))
    for (int n : ns) {
      const LatticeSpec spec = rc.sizes_n.empty() ? rc.model : with_n(rc.model, n);
      std::vector<double> found;
      int censored = 0;
      for (std::uint64_t seed : res.seeds) {
        const auto t0 = Clock::now();
        RunRecord r;
        std::size_t best_s = 0, best_draws = 0;
        double best_e = 0.0;
        bool ok = false;
        std::vector<double> th;
        if (m == Method::SbdGs) {
          const ExactSolution& gs = refs.get(spec, true);
          r = base_record("required-s", m, spec, seed, gs);
          for (const GsCandidate& c : gs_candidates(rc, spec, gs, rc.s_max, seed)) {
            const auto [s, e] = smallest_prefix(c.sample.configs.size(), gs.energy, rc.target_eps,
                                                [&](std::size_t k) {
                                                  return sbd_energy_rotated(c.h_rot, c.sample.configs.prefix(k)).energy;
                                                });
            const bool hit = relative_error(e, gs.energy) <= rc.target_eps;
            if ((hit && (!ok || s < best_s)) || (!ok && !hit && (best_s == 0 || e < best_e))) {
              ok = ok || hit;
              best_s = s;
              best_e = e;
              best_draws = s == 0 ? 0 : c.sample.draw_index[s - 1];
              th.assign(static_cast<std::size_t>(spec.n_sites()), c.phi);
            }
          }
          if (!rc.rotations) th.clear();
        } else {
          const TrainedPoint p = train_point(rc, m, spec, seed);
          const ExactSolution& ref = refs.get(spec, false);
          r = base_record("required-s", m, spec, seed, ref);
          const auto oracle = energy_oracle(p);
          // Grow the sample by doubling from a replayed stream, so every
          // attempt extends the same first-seen sequence.
          const std::size_t cap = covers_full_basis(rc.s_max, spec.n_sites())
                                      ? std::size_t{1} << spec.n_sites()
                                      : rc.s_max;
          UniqueSample u;
          for (std::size_t want = std::size_t{1};; want = std::min(2 * want, cap)) {
            Rng rng = Rng(seed).split("inference");
            u = sample_unique(p.model, want, p.theta, rc.inference.temperature, rng,
                              rc.inference.max_draws);
            if (want == cap || u.partial ||
                relative_error(oracle(u.configs), ref.energy) <= rc.target_eps)
              break;
          }
          const auto [s, e] = smallest_prefix(u.configs.size(), ref.energy, rc.target_eps,
                                              [&](std::size_t k) { return oracle(u.configs.prefix(k)); });
          ok = relative_error(e, ref.energy) <= rc.target_eps;
          best_s = s;
          best_e = e;
          best_draws = s == 0 ? 0 : u.draw_index[s - 1];
          th = p.theta;
        }
        r.s_target = rc.s_max;
        r.s = best_s;
        r.n_s = best_draws;
        r.temperature = rc.inference.temperature;
        r.theta_hash = theta_hash(th);
        r.flag = ok ? "ok" : "censored";
        finish_record(r, best_e, true);
        r.wall_time = seconds_since(t0);
        res.rows.push_back(r);
        if (ok) {
          found.push_back(static_cast<double>(best_s));
        } else {
          ++censored;
        }
      }
      double mean = 0.0, sd = 0.0;
      for (double v : found) mean += v;
      if (!found.empty()) mean /= static_cast<double>(found.size());
      for (double v : found) sd += (v - mean) * (v - mean);
      if (found.size() > 1) sd = std::sqrt(sd / static_cast<double>(found.size() - 1));
      agg.rows.push_back({method_name(m), std::to_string(n), fmt_double(spec.h),
                          std::to_string(res.seeds.size()), std::to_string(censored),
                          found.empty() ? "nan" : fmt_double(mean), found.empty() ? "nan" : fmt_double(sd)});
    }
  res.tables.push_back(std::move(agg));
  return res;
}

/// Unique-sampling ratio and energies across temperatures for one trained
/// sampler (loaded from temp_sweep.checkpoint when given, SND otherwise).
inline RunResult cmd_temp_sweep(const RunConfig& rc, const TrainedPoint* given = nullptr) {
  RunResult res;
  ReferenceCache refs;
  res.seeds = {rc.seed};
  std::optional<TrainedPoint> local;
  if (!given) {
    if (!rc.checkpoint.empty()) {
      Checkpoint ck = load_checkpoint(rc.checkpoint);
      TrainedPoint p;
      p.spec = rc.model;
      p.h = build_hamiltonian(rc.model);
      if (ck.model.n_sites() != rc.model.n_sites())
        throw ConfigError("checkpoint N does not match the model");
      p.method = parse_method(ck.extra.value("method", std::string("snd")));
      p.theta = ck.theta;
      if (is_absnd(p.method)) {
        p.tspec = transform_for(rc, p.method, rc.model);
        if (ck.extra.contains("transform"))
          p.tspec.family = parse_transform_family(ck.extra["transform"].get<std::string>());
        p.tspec.pairs = bond_pairs(rc.model);
        p.backend = p.method == Method::AbsndCircuit ? EnergyBackendKind::Circuit : EnergyBackendKind::Pauli;
        if (static_cast<int>(p.theta.size()) != p.tspec.n_params())
          throw ConfigError("checkpoint angle count does not match the transform");
      }
      p.model = std::move(ck.model);
      local = std::move(p);
    } else {
      local = train_point(rc, Method::Snd, rc.model, rc.seed);
    }
    given = &*local;
  }
  const TrainedPoint& p = *given;
  const ExactSolution& ref = refs.get(p.spec, false);
  const int n = p.spec.n_sites();
  const auto oracle = energy_oracle(p);
  for (std::size_t ti = 0; ti < rc.temperatures.size(); ++ti) {
    const double T = rc.temperatures[ti];
    for (std::size_t ns : rc.draws) {
      const auto t0 = Clock::now();
      Rng rng = Rng(rc.seed).split("ratio").split(ti).split(ns);
      const std::size_t cap = n < 63 ? std::min(ns, std::size_t{1} << n) : ns;
      const UniqueSample u = sample_unique(p.model, cap, p.theta, T, rng, ns);
      RunRecord r = base_record("temp-sweep", p.method, p.spec, rc.seed, ref);
      r.s_target = ns;
      r.s = u.configs.size();
      r.n_s = u.draws;
      r.temperature = T;
      r.theta_hash = theta_hash(p.theta);
      r.flag = "ratio";
      finish_record(r, oracle(u.configs), true);
      r.wall_time = seconds_since(t0);
      res.rows.push_back(r);
    }
    const auto rows = evaluate_point(rc, "temp-sweep", p, ref, rc.seed, rc.inference.sizes, T);
    res.rows.insert(res.rows.end(), rows.begin(), rows.end());
  }
  Table ratio{"ratio", {"T", "N_s", "S", "ratio"}, {}};
  for (const auto& r : res.rows)
    if (r.flag == "ratio")
      ratio.rows.push_back({fmt_double(r.temperature), std::to_string(r.n_s), std::to_string(r.s),
                            fmt_double(static_cast<double>(r.s) / static_cast<double>(r.n_s))});
  res.tables.push_back(std::move(ratio));
  return res;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

inline void write_csv(const std::filesystem::path& path, const std::vector<RunRecord>& rows) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << kCsvHeader << "\n";
  for (const auto& r : rows) f << csv_line(r) << "\n";
}

inline void write_table(const std::filesystem::path& path, const Table& t) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  for (std::size_t i = 0; i < t.header.size(); ++i) f << (i ? "," : "") << t.header[i];
  f << "\n";
  for (const auto& row : t.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) f << (i ? "," : "") << row[i];
    f << "\n";
  }
}

inline void save_point(const std::filesystem::path& dir, const TrainedPoint& p) {
  nlohmann::json extra = {{"method", method_name(p.method)},
                          {"lattice", ReferenceCache::lattice_key(p.spec)}};
  if (is_absnd(p.method)) {
    extra["transform"] = std::string(transform_family_name(p.tspec.family));
    std::ofstream(dir / "transform.json") << circuit_to_json(p.tspec.transform(p.theta)).dump(2) << "\n";
  }
  save_checkpoint((dir / "model.ckpt").string(), p.model, p.theta, extra);
}

/// Writes results.csv, extra tables and manifest.json into rc.out_dir.
inline std::vector<std::string> write_outputs(const RunConfig& rc, const std::string& command,
                                              const RunResult& res,
                                              const TrainedPoint* point = nullptr) {
  const std::filesystem::path dir(rc.out_dir);
  std::filesystem::create_directories(dir);
  std::vector<std::string> files{"results.csv"};
  write_csv(dir / "results.csv", res.rows);
  for (const Table& t : res.tables) {
    write_table(dir / (t.name + ".csv"), t);
    files.push_back(t.name + ".csv");
  }
  if (point) {
    save_point(dir, *point);
    files.push_back("model.ckpt");
    if (is_absnd(point->method)) files.push_back("transform.json");
  }
  nlohmann::json cfg = nlohmann::json::object();
  for (const auto& [k, v] : rc.echo) cfg[k] = v;
  nlohmann::json m = {{"command", command},
                      {"version", kVersion},
                      {"master_seed", rc.seed},
                      {"replicate_seeds", res.seeds},
                      {"config", cfg},
                      {"rows", res.rows.size()},
                      {"outputs", files},
                      {"build",
                       {{"compiler", __VERSION__},
                        {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                                      std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                      std::to_string(EIGEN_MINOR_VERSION)}}}};
  files.push_back("manifest.json");
  std::ofstream(dir / "manifest.json") << m.dump(2) << "\n";
  return files;
}

inline const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names = {"sbd-gs",       "snd-train", "absnd-train", "scan-h",
                                                 "required-s",   "temp-sweep", "circuit-demo"};
  return names;
}

/// Runs a command end to end and writes its outputs.
inline RunResult run_command(const std::string& command, const RunConfig& rc) {
  rc.validate();
  RunResult res;
  std::optional<TrainedPoint> point;
  if (command == "sbd-gs") {
    res = cmd_sbd_gs(rc);
  } else if (command == "snd-train") {
    res = cmd_snd_train(rc, &point);
  } else if (command == "absnd-train") {
    res = cmd_absnd_train(rc, &point);
  } else if (command == "scan-h") {
    res = cmd_scan_h(rc);
  } else if (command == "required-s") {
    res = cmd_required_s(rc);
  } else if (command == "temp-sweep") {
    res = cmd_temp_sweep(rc);
  } else if (command == "circuit-demo") {
    res = cmd_circuit_demo(rc);
  } else {
    throw ConfigError("unknown command '" + command + "'");
  }
  write_outputs(rc, command, res, point ? &*point : nullptr);
  return res;
}

}  // namespace sbnd
