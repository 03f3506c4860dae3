#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "mvsurf/nn.hpp"

namespace mvsurf {

static_assert(std::endian::native == std::endian::little,
              "checkpoint codec assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'U', 'F', 'O', 'R', '0', '0', '0', '1'};

struct CheckpointRecord {
  std::string name;
  Shape shape;
  std::vector<float> payload;
};

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}

inline bool read_u32(std::istream& is, std::uint32_t& v) {
  is.read(reinterpret_cast<char*>(&v), 4);
  return is.gcount() == 4;
}

}  // namespace detail

inline void write_checkpoint_records(const std::string& path,
                                     const std::vector<CheckpointRecord>& records) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  os.write(kCheckpointMagic, 8);
  for (const auto& rec : records) {
    detail::write_u32(os, static_cast<std::uint32_t>(rec.name.size()));
    os.write(rec.name.data(), static_cast<std::streamsize>(rec.name.size()));
    detail::write_u32(os, static_cast<std::uint32_t>(rec.shape.size()));
    for (auto d : rec.shape) detail::write_u32(os, static_cast<std::uint32_t>(d));
    os.write(reinterpret_cast<const char*>(rec.payload.data()),
             static_cast<std::streamsize>(rec.payload.size() * sizeof(float)));
  }
  if (!os) throw std::runtime_error("checkpoint: short write to " + path);
}

inline std::vector<CheckpointRecord> read_checkpoint_records(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (is.gcount() != 8 || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw std::runtime_error("checkpoint: unknown magic in " + path);
  std::vector<CheckpointRecord> records;
  while (true) {
    std::uint32_t name_len;
    if (!detail::read_u32(is, name_len)) {
      if (is.eof()) break;
      throw std::runtime_error("checkpoint: truncated record header in " + path);
    }
    CheckpointRecord rec;
    rec.name.resize(name_len);
    is.read(rec.name.data(), name_len);
    std::uint32_t rank;
    if (is.gcount() != static_cast<std::streamsize>(name_len) || !detail::read_u32(is, rank))
      throw std::runtime_error("checkpoint: truncated record header in " + path);
    std::int64_t numel = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      std::uint32_t d;
      if (!detail::read_u32(is, d))
        throw std::runtime_error("checkpoint: truncated dims in " + path);
      rec.shape.push_back(static_cast<std::int64_t>(d));
      numel *= d;
    }
    rec.payload.resize(static_cast<std::size_t>(numel));
    is.read(reinterpret_cast<char*>(rec.payload.data()),
            static_cast<std::streamsize>(numel * static_cast<std::int64_t>(sizeof(float))));
    if (is.gcount() != static_cast<std::streamsize>(numel * static_cast<std::int64_t>(sizeof(float))))
      throw std::runtime_error("checkpoint: truncated payload for '" + rec.name + "' in " + path);
    records.push_back(std::move(rec));
  }
  return records;
}

template <class R>
inline void save_checkpoint(const ParamStore<R>& ps, const std::string& path) {
  std::vector<CheckpointRecord> records;
  records.reserve(ps.all().size());
  for (const auto& p : ps.all()) {
    CheckpointRecord rec;
    rec.name = p->name;
    rec.shape = p->value.shape();
    rec.payload.resize(static_cast<std::size_t>(p->value.numel()));
    for (std::int64_t i = 0; i < p->value.numel(); ++i)
      rec.payload[static_cast<std::size_t>(i)] = static_cast<float>(p->value[i]);
    records.push_back(std::move(rec));
  }
  write_checkpoint_records(path, records);
}

template <class R>
inline void load_checkpoint(ParamStore<R>& ps, const std::string& path) {
  const auto records = read_checkpoint_records(path);
  std::size_t matched = 0;
  for (const auto& rec : records) {
    auto p = ps.find(rec.name);
    if (!p) throw std::runtime_error("checkpoint: unknown parameter '" + rec.name + "'");
    if (p->value.shape() != rec.shape)
      throw std::runtime_error("checkpoint: shape mismatch for '" + rec.name + "': file " +
                               shape_str(rec.shape) + " vs model " +
                               shape_str(p->value.shape()));
    for (std::int64_t i = 0; i < p->value.numel(); ++i)
      p->value[i] = static_cast<R>(rec.payload[static_cast<std::size_t>(i)]);
    ++matched;
  }
  if (matched != ps.all().size())
    throw std::runtime_error("checkpoint: file has " + std::to_string(matched) +
                             " of the model's " + std::to_string(ps.all().size()) +
                             " parameters");
}

}  // namespace mvsurf
