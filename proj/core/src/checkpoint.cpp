// SPDX-FileCopyrightText: © 2026 The cpmoe Authors
//
// SPDX-License-Identifier: Apache-2.0

#include "cpmoe/checkpoint.hpp"

#include <array>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include "cpmoe/config_io.hpp"
#include "cpmoe/errors.hpp"

namespace cpmoe {

namespace {

constexpr std::array<char, 8> kMagic{'C', 'P', 'M', 'O', 'E', 'C', 'K', 'P'};

template <typename U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <typename U>
U get_le(const unsigned char* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
  return v;
}

std::string shape_text(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(s[i]);
  }
  return out;
}

Shape parse_shape(const std::string& text) {
  Shape s;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('x', pos);
    if (end == std::string::npos) end = text.size();
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(text.data() + pos, text.data() + end, v);
    if (ec != std::errc{} || ptr != text.data() + end || v == 0) {
      throw CorruptionError("checkpoint manifest has a bad shape '" + text + "'");
    }
    s.push_back(v);
    pos = end + 1;
  }
  return s;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model<float>& model,
                     const OptimState<float>* optim) {
  struct Entry {
    std::string name;
    Shape shape;
    std::span<const float> values;
  };
  std::vector<Entry> entries;
  const auto& params = model.named_parameters();
  for (const auto& [name, t] : params) entries.push_back({name, t.shape(), t.data()});
  if (optim) {
    if (optim->m.size() != params.size() || optim->v.size() != params.size()) {
      throw ContractError("optimizer state does not match the model");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      entries.push_back({"optim.m." + params[i].first, params[i].second.shape(), optim->m[i]});
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      entries.push_back({"optim.v." + params[i].first, params[i].second.shape(), optim->v[i]});
    }
  }

  std::string header = serialize_model_config(model.config());
  std::uint64_t offset = 0;
  for (const auto& e : entries) {
    header += "tensor " + e.name + " " + shape_text(e.shape) + " " + std::to_string(offset) + " " +
              std::to_string(e.values.size()) + "\n";
    offset += e.values.size();
  }
  if (optim) header += "optim.step " + std::to_string(optim->step) + "\n";

  std::string blob(kMagic.begin(), kMagic.end());
  put_le<std::uint32_t>(blob, kCheckpointVersion);
  put_le<std::uint64_t>(blob, header.size());
  blob += header;
  blob.reserve(blob.size() + offset * 4);
  for (const auto& e : entries) {
    for (float f : e.values) put_le<std::uint32_t>(blob, std::bit_cast<std::uint32_t>(f));
  }

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint '" + tmp.string() + "'");
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw IoError("error while writing '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at '" + path.string() + "'");
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint '" + path.string() + "'");
  std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* bytes = reinterpret_cast<const unsigned char*>(blob.data());

  constexpr std::size_t kPrefix = 8 + 4 + 8;
  if (blob.size() < kPrefix || std::memcmp(blob.data(), kMagic.data(), kMagic.size()) != 0) {
    throw CorruptionError("'" + path.string() + "' is not a cpmoe checkpoint");
  }
  Checkpoint ckpt;
  ckpt.version = get_le<std::uint32_t>(bytes + 8);
  if (ckpt.version != kCheckpointVersion) {
    throw CorruptionError("checkpoint format version " + std::to_string(ckpt.version) +
                          " is not supported (expected " + std::to_string(kCheckpointVersion) +
                          ")");
  }
  const auto header_len = get_le<std::uint64_t>(bytes + 12);
  if (header_len > blob.size() - kPrefix) throw CorruptionError("checkpoint header is truncated");
  const std::string header = blob.substr(kPrefix, header_len);
  const std::size_t payload_begin = kPrefix + header_len;
  const std::size_t payload_floats = (blob.size() - payload_begin) / 4;
  const bool ragged = (blob.size() - payload_begin) % 4 != 0;

  std::string config_text;
  struct Manifest {
    std::string name;
    Shape shape;
    std::uint64_t offset, count;
  };
  std::vector<Manifest> manifest;
  std::istringstream lines(header);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.starts_with("tensor ")) {
      std::istringstream ls(line.substr(7));
      Manifest m;
      std::string shape;
      if (!(ls >> m.name >> shape >> m.offset >> m.count)) {
        throw CorruptionError("checkpoint manifest line is malformed: '" + line + "'");
      }
      m.shape = parse_shape(shape);
      if (numel(m.shape) != m.count) {
        throw CorruptionError("tensor '" + m.name + "': shape " + shape + " does not hold " +
                              std::to_string(m.count) + " values");
      }
      manifest.push_back(std::move(m));
    } else if (line.starts_with("optim.step ")) {
      std::size_t step = 0;
      const auto v = line.substr(11);
      auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), step);
      if (ec != std::errc{}) throw CorruptionError("checkpoint optimizer step is malformed");
      ckpt.optim_step = step;
    } else {
      config_text += line;
      config_text += '\n';
    }
  }
  ckpt.config = parse_model_config(parse_key_values(config_text));

  std::uint64_t expected = 0;
  for (const auto& m : manifest) {
    if (m.offset != expected) {
      throw CorruptionError("tensor '" + m.name + "' starts at " + std::to_string(m.offset) +
                            ", expected " + std::to_string(expected));
    }
    if (m.offset + m.count > payload_floats) {
      throw CorruptionError("payload is truncated at tensor '" + m.name + "' (needs " +
                            std::to_string(m.offset + m.count) + " floats, file has " +
                            std::to_string(payload_floats) + ")");
    }
    CheckpointTensor t{m.name, m.shape, m.offset, std::vector<float>(m.count)};
    const unsigned char* p = bytes + payload_begin + m.offset * 4;
    for (std::uint64_t i = 0; i < m.count; ++i) {
      t.values[i] = std::bit_cast<float>(get_le<std::uint32_t>(p + 4 * i));
    }
    ckpt.tensors.push_back(std::move(t));
    expected += m.count;
  }
  if (expected != payload_floats || ragged) {
    throw CorruptionError("payload holds " + std::to_string(blob.size() - payload_begin) +
                          " bytes but the manifest describes " + std::to_string(expected * 4));
  }
  return ckpt;
}

Model<float> model_from_checkpoint(const Checkpoint& ckpt) {
  Model<float> model(ckpt.config);
  std::map<std::string, const CheckpointTensor*, std::less<>> by_name;
  for (const auto& t : ckpt.tensors) by_name[t.name] = &t;
  for (const auto& [name, param] : model.named_parameters()) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw CorruptionError("checkpoint is missing tensor '" + name + "'");
    if (it->second->shape != param.shape()) {
      throw CorruptionError("tensor '" + name + "' has shape " + to_string(it->second->shape) +
                            ", model expects " + to_string(param.shape()));
    }
    Tensor<float> p = param;
    std::copy(it->second->values.begin(), it->second->values.end(), p.mutable_data().begin());
  }
  return model;
}

std::optional<OptimState<float>> optim_from_checkpoint(const Checkpoint& ckpt,
                                                       const Model<float>& model) {
  if (!ckpt.optim_step) return std::nullopt;
  std::map<std::string, const CheckpointTensor*, std::less<>> by_name;
  for (const auto& t : ckpt.tensors) by_name[t.name] = &t;
  OptimState<float> state;
  state.step = *ckpt.optim_step;
  for (const auto& [name, param] : model.named_parameters()) {
    for (const char* which : {"optim.m.", "optim.v."}) {
      auto it = by_name.find(which + name);
      if (it == by_name.end() || it->second->values.size() != param.numel()) {
        throw CorruptionError("checkpoint optimizer state lacks '" + std::string(which) + name +
                              "'");
      }
      (which[6] == 'm' ? state.m : state.v).push_back(it->second->values);
    }
  }
  return state;
}

}  // namespace cpmoe
