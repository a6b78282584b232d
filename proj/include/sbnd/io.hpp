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

// Persistence: circuit gate lists as JSON and model checkpoints.
//
// Checkpoint layout (little-endian):
//   8 bytes   magic "SBNDCKPT"
//   4 bytes   u32 header length L
//   L bytes   UTF-8 JSON header: {"version", "arch", "tensors": [{name, rows,
//             cols, offset}], "n_params", "n_theta", "extra"}
//   8*n_params bytes  network parameters (float64) in tensor order
//   8*n_theta bytes   angle vector (float64)

#include <nlohmann/json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "sbnd/errors.hpp"
#include "sbnd/pauli.hpp"
#include "sbnd/transformer.hpp"

namespace sbnd {

static_assert(std::endian::native == std::endian::little, "checkpoints assume little-endian");

inline nlohmann::json circuit_to_json(const BasisTransform& t) {
  nlohmann::json gates = nlohmann::json::array();
  for (const RotationGate& g : t.gates) {
    nlohmann::json sites = {g.site0};
    if (g.kind == GateKind::RZZ) sites.push_back(g.site1);
    gates.push_back({{"kind", std::string(gate_kind_name(g.kind))},
                     {"sites", sites},
                     {"angle", g.angle},
                     {"param", g.param}});
  }
  return {{"n_qubits", t.n_sites}, {"gates", gates}};
}

inline BasisTransform circuit_from_json(const nlohmann::json& j) {
  try {
    BasisTransform t(j.at("n_qubits").get<int>());
    for (const auto& gj : j.at("gates")) {
      RotationGate g;
      g.kind = parse_gate_kind(gj.at("kind").get<std::string>());
      const auto& s = gj.at("sites");
      const std::size_t want = g.kind == GateKind::RZZ ? 2 : 1;
      if (s.size() != want) throw ConfigError("circuit gate: wrong number of sites");
      g.site0 = s[0].get<int>();
      if (want == 2) g.site1 = s[1].get<int>();
      g.angle = gj.at("angle").get<double>();
      g.param = gj.value("param", -1);
      g.validate(t.n_sites);
      t.gates.push_back(g);
    }
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("circuit JSON: ") + e.what());
  } catch (const std::logic_error& e) {
    throw ConfigError(std::string("circuit JSON: ") + e.what());
  }
}

struct Checkpoint {
  ArModel model;
  std::vector<double> theta;
  nlohmann::json extra;
};

inline constexpr char kCheckpointMagic[9] = "SBNDCKPT";
inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json arch_to_json(const ArConfig& c) {
  return {{"n_sites", c.n_sites}, {"n_angles", c.n_angles}, {"d_model", c.d_model},
          {"n_heads", c.n_heads}, {"n_layers", c.n_layers}, {"d_ff", c.d_ff}};
}

inline ArConfig arch_from_json(const nlohmann::json& j) {
  ArConfig c;
  c.n_sites = j.at("n_sites").get<int>();
  c.n_angles = j.at("n_angles").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.n_layers = j.at("n_layers").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  return c;
}

inline void save_checkpoint(const std::string& path, const ArModel& m,
                            std::span<const double> theta, const nlohmann::json& extra = {}) {
  nlohmann::json tensors = nlohmann::json::array();
  for (const TensorInfo& t : m.tensors())
    tensors.push_back({{"name", t.name}, {"rows", t.rows}, {"cols", t.cols}, {"offset", t.offset}});
  const nlohmann::json head = {{"version", kCheckpointVersion},
                               {"arch", arch_to_json(m.config())},
                               {"tensors", tensors},
                               {"n_params", m.n_params()},
                               {"n_theta", theta.size()},
                               {"extra", extra.is_null() ? nlohmann::json::object() : extra}};
  const std::string hs = head.dump();
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write checkpoint " + path);
  const auto len = static_cast<std::uint32_t>(hs.size());
  f.write(kCheckpointMagic, 8);
  f.write(reinterpret_cast<const char*>(&len), 4);
  f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  f.write(reinterpret_cast<const char*>(m.params().data()),
          static_cast<std::streamsize>(m.n_params() * sizeof(double)));
  f.write(reinterpret_cast<const char*>(theta.data()),
          static_cast<std::streamsize>(theta.size() * sizeof(double)));
  if (!f) throw std::runtime_error("failed writing checkpoint " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open checkpoint " + path);
  char magic[8];
  std::uint32_t len = 0;
  f.read(magic, 8);
  f.read(reinterpret_cast<char*>(&len), 4);
  if (!f || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw ConfigError("not a checkpoint: " + path);
  std::string hs(len, '\0');
  f.read(hs.data(), len);
  if (!f) throw ConfigError("truncated checkpoint header: " + path);
  try {
    const nlohmann::json head = nlohmann::json::parse(hs);
    if (head.at("version").get<int>() != kCheckpointVersion)
      throw ConfigError("unsupported checkpoint version");
    Checkpoint c{ArModel(arch_from_json(head.at("arch")), Rng(0)), {}, head.value("extra", nlohmann::json::object())};
    const auto n = head.at("n_params").get<std::size_t>();
    if (n != c.model.n_params()) throw ConfigError("checkpoint parameter count mismatch");
    const auto& tj = head.at("tensors");
    if (tj.size() != c.model.tensors().size()) throw ConfigError("checkpoint tensor list mismatch");
    for (std::size_t i = 0; i < tj.size(); ++i) {
      const TensorInfo& t = c.model.tensors()[i];
      if (tj[i].at("name").get<std::string>() != t.name || tj[i].at("offset").get<std::size_t>() != t.offset ||
          tj[i].at("rows").get<int>() != t.rows || tj[i].at("cols").get<int>() != t.cols)
        throw ConfigError("checkpoint tensor '" + t.name + "' layout mismatch");
    }
    std::vector<double> p(n);
    f.read(reinterpret_cast<char*>(p.data()), static_cast<std::streamsize>(n * sizeof(double)));
    c.theta.resize(head.at("n_theta").get<std::size_t>());
    f.read(reinterpret_cast<char*>(c.theta.data()),
           static_cast<std::streamsize>(c.theta.size() * sizeof(double)));
    if (!f) throw ConfigError("truncated checkpoint data: " + path);
    c.model.set_params(p);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("checkpoint header: ") + e.what());
  }
}

}  // namespace sbnd
