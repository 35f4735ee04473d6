// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dlva/io.hpp"
#include "dlva/model/params.hpp"
#include "dlva/numerics/adam.hpp"

namespace dlva {

// Layout (little-endian):
//   "DLVA" | u32 version | u32 len, config text | u32 count |
//   count × (u16 len, name | u8 rank | rank × u32 extent | numel × f64)
// The config text is key=value lines: the model fields, then any `meta`
// entries. Optimizer state travels as extra tensors `adam.m.<name>` and
// `adam.v.<name>` with the step count under meta key `adam.t`.
inline constexpr char kCheckpointMagic[4] = {'D', 'L', 'V', 'A'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct OptimizerState {
  long long t = 0;
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;
};

struct Checkpoint {
  ModelParams params;
  std::map<std::string, std::string> meta;
  std::optional<OptimizerState> optimizer;
};

namespace detail {

inline void write_tensor(io::ByteWriter& w, const std::string& name, const Shape& shape, const std::vector<double>& data) {
  if (name.size() > 0xFFFF) fail(ErrorKind::format, "tensor name too long: " + name);
  w.u16(static_cast<std::uint16_t>(name.size()));
  w.bytes(name);
  w.u8(static_cast<std::uint8_t>(shape.size()));
  for (auto e : shape) w.u32(static_cast<std::uint32_t>(e));
  for (double v : data) w.f64(v);
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  std::string cfg = to_text(ck.params.config);
  for (const auto& [k, v] : ck.meta) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos)
      fail(ErrorKind::format, "meta entry '" + k + "' cannot be stored as key=value");
    cfg += k + "=" + v + "\n";
  }
  const auto named = ck.params.named();
  std::size_t count = named.size();
  if (ck.optimizer) {
    cfg += "adam.t=" + std::to_string(ck.optimizer->t) + "\n";
    count += ck.optimizer->m.size() + ck.optimizer->v.size();
  }
  io::ByteWriter w;
  w.raw(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(cfg.size()));
  w.bytes(cfg);
  w.u32(static_cast<std::uint32_t>(count));
  for (const auto& [name, t] : named) detail::write_tensor(w, name, t->shape, t->data);
  if (ck.optimizer) {
    for (const auto& [name, m] : ck.optimizer->m) detail::write_tensor(w, "adam.m." + name, {m.size()}, m);
    for (const auto& [name, v] : ck.optimizer->v) detail::write_tensor(w, "adam.v." + name, {v.size()}, v);
  }
  return w.buffer();
}

// Parses the whole buffer before returning anything; any defect throws a
// format error naming the byte offset.
inline Checkpoint deserialize_checkpoint(std::string_view bytes) {
  io::ByteReader r(bytes);
  const std::string magic = r.bytes(4);
  if (magic != std::string(kCheckpointMagic, 4)) {
    io::ByteReader at0(bytes);
    at0.error("bad checkpoint magic");
  }
  const auto version = r.u32();
  if (version != kCheckpointVersion) r.error("unsupported checkpoint version " + std::to_string(version));
  const auto cfg_len = r.u32();
  const std::string cfg = r.bytes(cfg_len);

  ModelConfig config;
  Checkpoint ck;
  std::optional<long long> adam_t;
  std::map<std::string, std::string> kv;
  try {
    kv = io::parse_key_values(cfg);
  } catch (const Error& e) {
    r.error(std::string("bad config text: ") + e.what());
  }
  for (const auto& [k, v] : kv) {
    try {
      if (set_model_field(config, k, v)) continue;
      if (k == "adam.t") adam_t = std::stoll(v);
      else ck.meta[k] = v;
    } catch (const std::exception& e) {
      r.error("bad config entry '" + k + "': " + e.what());
    }
  }
  try {
    validate(config);
  } catch (const Error& e) {
    r.error(std::string("invalid model config: ") + e.what());
  }
  ck.params = detail::allocate_params(config);
  std::map<std::string, TensorPtr> slots;
  for (const auto& [name, t] : ck.params.named()) slots[name] = t;
  std::map<std::string, bool> seen;
  OptimizerState opt;

  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t start = r.offset();
    const std::string name = r.bytes(r.u16());
    if (seen[name]) r.error("duplicate tensor '" + name + "'");
    seen[name] = true;
    const auto rank = r.u8();
    if (rank == 0) r.error("tensor '" + name + "' has rank 0");
    Shape shape(rank);
    for (auto& e : shape) {
      e = r.u32();
      if (e == 0) r.error("tensor '" + name + "' has a zero extent");
    }
    const std::size_t numel = shape_numel(shape);
    if (r.remaining() / 8 < numel) r.error("truncated payload for tensor '" + name + "'");
    std::vector<double> data(numel);
    for (auto& v : data) v = r.f64();

    const bool is_m = name.rfind("adam.m.", 0) == 0, is_v = name.rfind("adam.v.", 0) == 0;
    if (is_m || is_v) {
      const std::string target = name.substr(7);
      auto it = slots.find(target);
      if (it == slots.end() || it->second->numel() != numel)
        fail(ErrorKind::format, "optimizer tensor '" + name + "' does not match a parameter at offset " + std::to_string(start));
      (is_m ? opt.m : opt.v)[target] = std::move(data);
      continue;
    }
    auto it = slots.find(name);
    if (it == slots.end()) fail(ErrorKind::format, "unknown tensor '" + name + "' at offset " + std::to_string(start));
    if (it->second->shape != shape)
      fail(ErrorKind::format, "tensor '" + name + "' has shape " + shape_str(shape) + ", config implies " +
                                  shape_str(it->second->shape) + " at offset " + std::to_string(start));
    it->second->data = std::move(data);
  }
  if (!r.done()) r.error("trailing bytes after checkpoint");
  for (const auto& [name, t] : slots)
    if (!seen[name]) fail(ErrorKind::format, "checkpoint is missing tensor '" + name + "'");
  if (adam_t) {
    if (opt.m.size() != opt.v.size()) fail(ErrorKind::format, "optimizer moments are incomplete");
    opt.t = *adam_t;
    ck.optimizer = std::move(opt);
  } else if (!opt.m.empty() || !opt.v.empty()) {
    fail(ErrorKind::format, "optimizer tensors present without adam.t");
  }
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) { io::write_file(path, serialize_checkpoint(ck)); }

inline void save_checkpoint(const ModelParams& params, const std::string& path) {
  Checkpoint ck;
  ck.params = params;
  save_checkpoint(ck, path);
}

inline Checkpoint load_checkpoint(const std::string& path) { return deserialize_checkpoint(io::read_file(path)); }

// Snapshot and restore of Adam moments keyed by parameter name, for the
// tensors in `names` (the optimizer's parameter list, in order).
inline OptimizerState capture_optimizer(const Adam& adam, const std::vector<std::string>& names) {
  OptimizerState s;
  s.t = adam.steps_taken();
  const auto& m = adam.first_moments();
  const auto& v = adam.second_moments();
  if (m.empty()) return s;
  for (std::size_t i = 0; i < names.size(); ++i) {
    s.m[names[i]] = m.at(i);
    s.v[names[i]] = v.at(i);
  }
  return s;
}

inline void restore_optimizer(Adam& adam, const OptimizerState& s, const std::vector<std::string>& names) {
  if (s.m.empty()) {
    adam.restore(s.t, {}, {});
    return;
  }
  std::vector<std::vector<double>> m, v;
  for (const auto& n : names) {
    auto im = s.m.find(n), iv = s.v.find(n);
    if (im == s.m.end() || iv == s.v.end()) fail(ErrorKind::format, "optimizer state lacks moments for '" + n + "'");
    m.push_back(im->second);
    v.push_back(iv->second);
  }
  adam.restore(s.t, std::move(m), std::move(v));
}

}  // namespace dlva
