/*
 * Copyright 2026 The tmrsr Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "tmrsr/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace tmrsr {
namespace {

constexpr char kMagic[5] = {'T', 'M', 'C', 'K', '1'};

void write_u32(std::ostream& out, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& out, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

void write_f64s(std::ostream& out, const std::vector<Scalar>& v) {
  static_assert(sizeof(Scalar) == 8, "checkpoint format stores f64");
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(Scalar)));
}

void write_str(std::ostream& out, const std::string& s) {
  write_u32(out, static_cast<uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

uint32_t read_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw DataError("truncated checkpoint: " + path);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

uint64_t read_u64(std::istream& in, const std::string& path) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw DataError("truncated checkpoint: " + path);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

std::vector<Scalar> read_f64s(std::istream& in, uint64_t count,
                              const std::string& path) {
  if (count > (1ULL << 32))
    throw DataError("implausible tensor size in checkpoint: " + path);
  std::vector<Scalar> v(count);
  in.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(count * sizeof(Scalar)));
  if (!in) throw DataError("truncated checkpoint: " + path);
  return v;
}

std::string read_str(std::istream& in, const std::string& path) {
  const uint32_t len = read_u32(in, path);
  if (len > (1u << 20))
    throw DataError("implausible string length in checkpoint: " + path);
  std::string s(len, '\0');
  in.read(s.data(), len);
  if (!in) throw DataError("truncated checkpoint: " + path);
  return s;
}

size_t shape_numel(const std::vector<int>& shape) {
  size_t n = 1;
  for (int d : shape) n *= static_cast<size_t>(d);
  return n;
}

}  // namespace

void Checkpoint::add_store(const ParamStore& store) {
  for (const std::string& name : store.names()) {
    const Tensor t = store.get(name);
    shapes.emplace_back(name, t.shape());
    tensors.emplace(name, t.values());
  }
}

const std::vector<int>* Checkpoint::shape_of(const std::string& name) const {
  for (const auto& [n, s] : shapes)
    if (n == name) return &s;
  return nullptr;
}

void write_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  out.write(kMagic, 5);
  write_str(out, ck.config_text);
  write_u32(out, static_cast<uint32_t>(ck.shapes.size()));
  for (const auto& [name, shape] : ck.shapes) {
    write_str(out, name);
    write_u32(out, static_cast<uint32_t>(shape.size()));
    for (int d : shape) write_u32(out, static_cast<uint32_t>(d));
    const auto it = ck.tensors.find(name);
    if (it == ck.tensors.end() || it->second.size() != shape_numel(shape))
      throw ConfigError("checkpoint: tensor/shape mismatch for " + name);
    write_f64s(out, it->second);
  }
  write_u32(out, static_cast<uint32_t>(ck.moments.size()));
  for (const auto& [name, mo] : ck.moments) {
    if (mo.m.size() != mo.v.size())
      throw ConfigError("checkpoint: moment buffers of " + name + " disagree");
    write_str(out, name);
    write_u64(out, mo.m.size());
    write_f64s(out, mo.m);
    write_f64s(out, mo.v);
  }
  write_u64(out, static_cast<uint64_t>(ck.adam_t));
  write_u64(out, static_cast<uint64_t>(ck.epoch));
  write_u64(out, static_cast<uint64_t>(ck.global_step));
  write_u64(out, static_cast<uint64_t>(ck.stall_epochs));
  write_f64s(out, {ck.best_val});
  if (!out) throw DataError("failed writing checkpoint: " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  char magic[5];
  in.read(magic, 5);
  if (in.gcount() != 5 || std::memcmp(magic, kMagic, 5) != 0)
    throw DataError("bad magic in checkpoint: " + path);
  Checkpoint ck;
  ck.config_text = read_str(in, path);
  const uint32_t n_tensors = read_u32(in, path);
  for (uint32_t i = 0; i < n_tensors; ++i) {
    const std::string name = read_str(in, path);
    const uint32_t ndim = read_u32(in, path);
    if (ndim > 8) throw DataError("implausible tensor rank in " + path);
    std::vector<int> shape(ndim);
    for (uint32_t d = 0; d < ndim; ++d)
      shape[d] = static_cast<int>(read_u32(in, path));
    ck.shapes.emplace_back(name, shape);
    ck.tensors.emplace(name, read_f64s(in, shape_numel(shape), path));
  }
  const uint32_t n_moments = read_u32(in, path);
  for (uint32_t i = 0; i < n_moments; ++i) {
    const std::string name = read_str(in, path);
    const uint64_t count = read_u64(in, path);
    Adam::Moments mo;
    mo.m = read_f64s(in, count, path);
    mo.v = read_f64s(in, count, path);
    ck.moments.emplace(name, std::move(mo));
  }
  ck.adam_t = static_cast<int64_t>(read_u64(in, path));
  ck.epoch = static_cast<int64_t>(read_u64(in, path));
  ck.global_step = static_cast<int64_t>(read_u64(in, path));
  ck.stall_epochs = static_cast<int64_t>(read_u64(in, path));
  ck.best_val = read_f64s(in, 1, path)[0];
  in.peek();
  if (!in.eof()) throw DataError("trailing bytes in checkpoint: " + path);
  return ck;
}

int load_store(const Checkpoint& ck, ParamStore& store, bool strict) {
  int copied = 0;
  for (const std::string& name : store.names()) {
    const auto it = ck.tensors.find(name);
    if (it == ck.tensors.end()) {
      if (strict)
        throw ConfigError("checkpoint is missing parameter " + name);
      continue;
    }
    Tensor t = store.get(name);
    if (it->second.size() != t.numel())
      throw ConfigError("checkpoint size mismatch for " + name);
    const std::vector<int>* shape = ck.shape_of(name);
    if (strict && shape && *shape != t.shape())
      throw ConfigError("checkpoint shape mismatch for " + name);
    t.mutable_values() = it->second;
    ++copied;
  }
  return copied;
}

int load_store_remapped(const Checkpoint& ck, ParamStore& store,
                        const std::string& from, const std::string& to) {
  int copied = 0;
  for (const auto& [name, values] : ck.tensors) {
    if (name.rfind(from, 0) != 0) continue;
    const std::string target = to + name.substr(from.size());
    if (!store.has(target))
      throw ConfigError("warm start: store has no parameter " + target);
    Tensor t = store.get(target);
    if (values.size() != t.numel())
      throw ConfigError("warm start: size mismatch for " + target);
    t.mutable_values() = values;
    ++copied;
  }
  if (copied == 0)
    throw ConfigError("warm start: checkpoint has no tensors under '" + from +
                      "'");
  return copied;
}

}  // namespace tmrsr
