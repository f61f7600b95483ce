// Copyright 2026 The SPNet Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef SPNET_CHECKPOINT_HPP_
#define SPNET_CHECKPOINT_HPP_

#include <set>
#include <string>
#include <vector>

#include "spnet/config.hpp"
#include "spnet/io.hpp"
#include "spnet/network.hpp"
#include "spnet/training.hpp"

namespace spnet {

inline constexpr std::uint16_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

struct NamedTensor {
  std::string name;
  DType dtype = DType::F32;
  Shape shape;
  std::vector<double> data;  // widened; written back at `dtype` width
};

/// In-memory image of an SPCK file. Every per-epoch random stream is keyed
/// by (seed, purpose, epoch), so seed plus epoch is the complete RNG state.
struct Checkpoint {
  std::uint64_t epoch = 0;
  std::uint64_t optimizer_steps = 0;
  std::uint64_t seed = 0;
  std::string config;  // canonical text
  std::vector<MetricsRow> metrics;
  std::vector<NamedTensor> tensors;

  RunConfig run_config() const { return parse_config(config); }

  const NamedTensor& find(const std::string& name) const {
    for (const auto& t : tensors) {
      if (t.name == name) return t;
    }
    throw FormatError("checkpoint: missing tensor " + name);
  }

  bool has(const std::string& name) const {
    for (const auto& t : tensors) {
      if (t.name == name) return true;
    }
    return false;
  }
};

namespace checkpoint_detail {

template <typename T>
void capture(std::vector<NamedTensor>& out, const std::string& name, const Tensor<T>& t) {
  NamedTensor n;
  n.name = name;
  n.dtype = std::is_same_v<T, double> ? DType::F64 : DType::F32;
  n.shape = t.shape();
  n.data.assign(t.ptr(), t.ptr() + t.size());
  out.push_back(std::move(n));
}

template <typename T>
void restore(const Checkpoint& c, const std::string& name, Tensor<T>& t) {
  const auto& n = c.find(name);
  if (n.shape != t.shape()) {
    throw FormatError("checkpoint: tensor " + name + " has shape " + shape_str(n.shape) + ", model expects " +
                      shape_str(t.shape()));
  }
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(n.data[i]);
}

}  // namespace checkpoint_detail

/// Snapshot of a model (and optionally its optimizer) under `rc`.
template <typename T>
Checkpoint make_checkpoint(Model<T>& model, const RunConfig& rc, std::uint64_t epoch,
                           Optimizer<T>* opt = nullptr, const std::vector<MetricsRow>& metrics = {}) {
  Checkpoint c;
  c.epoch = epoch;
  c.seed = rc.train.seed;
  c.config = emit_canonical(rc);
  c.metrics = metrics;
  model.visit_state([&](const std::string& n, Tensor<T>& t) { checkpoint_detail::capture(c.tensors, n, t); });
  if (opt) {
    c.optimizer_steps = opt->steps();
    opt->visit_state([&](const std::string& n, Tensor<T>& t) { checkpoint_detail::capture(c.tensors, n, t); });
  }
  return c;
}

template <typename T>
Checkpoint make_checkpoint(Trainer<T>& trainer, const RunConfig& rc) {
  return make_checkpoint(trainer.model(), rc, trainer.epoch(), &trainer.optimizer(), trainer.metrics());
}

/// Loads weights and BN state into a model built from c.run_config().
template <typename T>
void restore_model(const Checkpoint& c, Model<T>& model) {
  model.visit_state([&](const std::string& n, Tensor<T>& t) { checkpoint_detail::restore(c, n, t); });
}

/// Restores model, optimizer state, epoch counter and metrics history.
template <typename T>
void restore_trainer(const Checkpoint& c, Trainer<T>& trainer) {
  if (c.seed != trainer.config().seed) {
    throw ConfigError("seed: checkpoint was written with seed " + std::to_string(c.seed) + ", run uses " +
                      std::to_string(trainer.config().seed));
  }
  restore_model(c, trainer.model());
  trainer.optimizer().visit_state([&](const std::string& n, Tensor<T>& t) { checkpoint_detail::restore(c, n, t); });
  trainer.optimizer().set_steps(c.optimizer_steps);
  trainer.set_epoch(c.epoch);
  trainer.metrics() = c.metrics;
}

inline std::vector<std::uint8_t> encode(const Checkpoint& c) {
  io::ByteWriter w;
  w.magic("SPCK");
  w.u16(kCheckpointVersion);
  w.u64(c.epoch);
  w.u64(c.optimizer_steps);
  w.u64(c.seed);
  w.str(c.config);
  w.u32(static_cast<std::uint32_t>(c.metrics.size()));
  for (const auto& r : c.metrics) {
    w.u64(r.epoch);
    w.u8(static_cast<std::uint8_t>(r.sw.bits_w));
    w.u8(static_cast<std::uint8_t>(r.sw.bits_a));
    w.u64(static_cast<std::uint64_t>(r.sw.width.num()));
    w.u64(static_cast<std::uint64_t>(r.sw.width.den()));
    w.f64(r.train_loss);
    w.f64(r.train_top1);
    w.f64(r.val_top1);
    w.f64(r.seconds);
  }
  w.u32(static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& t : c.tensors) {
    w.str(t.name);
    w.u8(static_cast<std::uint8_t>(t.dtype));
    w.u8(static_cast<std::uint8_t>(t.shape.size()));
    for (auto d : t.shape) w.u64(d);
    for (auto v : t.data) {
      if (t.dtype == DType::F32) {
        w.f32(static_cast<float>(v));
      } else {
        w.f64(v);
      }
    }
  }
  return w.take();
}

inline Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  io::ByteReader r(bytes, "checkpoint");
  const auto magic = r.magic();
  if (magic != "SPCK") {
    throw FormatError("checkpoint: bad magic '" + magic + "'; this is " + io::describe_magic(magic) +
                      ", not a checkpoint");
  }
  const auto version = r.u16();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version) + " (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint c;
  c.epoch = r.u64();
  c.optimizer_steps = r.u64();
  c.seed = r.u64();
  c.config = r.str();
  const auto rows = r.u32();
  for (std::uint32_t i = 0; i < rows; ++i) {
    MetricsRow m;
    m.epoch = r.u64();
    m.sw.bits_w = r.u8();
    m.sw.bits_a = r.u8();
    const auto num = static_cast<std::int64_t>(r.u64());
    const auto den = static_cast<std::int64_t>(r.u64());
    try {
      m.sw.width = Width(num, den);
    } catch (const ValueError& e) {
      throw FormatError("checkpoint: metrics row " + std::to_string(i) + ": " + e.what());
    }
    m.train_loss = r.f64();
    m.train_top1 = r.f64();
    m.val_top1 = r.f64();
    m.seconds = r.f64();
    c.metrics.push_back(m);
  }
  const auto count = r.u32();
  std::set<std::string> names;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.str();
    if (!names.insert(t.name).second) throw FormatError("checkpoint: duplicate tensor " + t.name);
    const auto dt = r.u8();
    if (dt > 1) throw FormatError("checkpoint: tensor " + t.name + " has unknown dtype " + std::to_string(dt));
    t.dtype = static_cast<DType>(dt);
    const auto ndim = r.u8();
    std::size_t n = 1;
    for (std::uint8_t d = 0; d < ndim; ++d) {
      t.shape.push_back(static_cast<std::size_t>(r.u64()));
      n *= t.shape.back();
    }
    r.need(n * (t.dtype == DType::F32 ? 4 : 8));
    t.data.resize(n);
    for (auto& v : t.data) v = t.dtype == DType::F32 ? static_cast<double>(r.f32()) : r.f64();
    c.tensors.push_back(std::move(t));
  }
  if (r.remaining() != 0) {
    throw FormatError("checkpoint: " + std::to_string(r.remaining()) + " trailing bytes after the tensor table");
  }
  return c;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& c) { io::write_file(path, encode(c)); }
inline Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(io::read_file(path)); }

}  // namespace spnet

#endif  // SPNET_CHECKPOINT_HPP_
