#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pidimt/core/nn.hpp"
#include "pidimt/core/tensor.hpp"
#include "pidimt/model/config.hpp"

namespace pidimt {

// On-disk container: 8-byte magic with embedded format version, a JSON
// header (architecture config, training step, RNG seed), then named f32
// parameter blobs. All integers and floats little-endian.
inline constexpr char kCheckpointMagic[8] = {'P', 'I', 'D', 'I', 'M', 'T', '0', '1'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint container assumes a little-endian host");

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return v;
}
inline std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

}  // namespace detail

inline nlohmann::json dimt_config_to_json(const DimtConfig& c) {
  return nlohmann::json{{"d", c.d},
                        {"heads", c.heads},
                        {"n_blocks", c.n_blocks},
                        {"n_state", c.n_state},
                        {"expand", c.expand},
                        {"e_shallow", c.e_shallow},
                        {"e_deep", c.e_deep},
                        {"top_k", c.top_k},
                        {"gated_mlp_hidden", c.gated_mlp_hidden},
                        {"channels", c.channels},
                        {"max_agents", c.max_agents},
                        {"max_frames", c.max_frames},
                        {"time_freqs", c.time_freqs},
                        {"gate_noise_sigma0", c.gate_noise_sigma0},
                        {"gate_noise_end_step", c.gate_noise_end_step},
                        {"block_order", block_order_string(c.block_order)}};
}

inline DimtConfig dimt_config_from_json(const nlohmann::json& j) {
  DimtConfig c;
  c.d = j.at("d").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.n_blocks = j.at("n_blocks").get<std::size_t>();
  c.n_state = j.at("n_state").get<std::size_t>();
  c.expand = j.at("expand").get<std::size_t>();
  c.e_shallow = j.at("e_shallow").get<std::size_t>();
  c.e_deep = j.at("e_deep").get<std::size_t>();
  c.top_k = j.at("top_k").get<std::size_t>();
  c.gated_mlp_hidden = j.at("gated_mlp_hidden").get<std::size_t>();
  c.channels = j.at("channels").get<std::size_t>();
  c.max_agents = j.at("max_agents").get<std::size_t>();
  c.max_frames = j.at("max_frames").get<std::size_t>();
  c.time_freqs = j.at("time_freqs").get<std::size_t>();
  c.gate_noise_sigma0 = j.at("gate_noise_sigma0").get<double>();
  c.gate_noise_end_step = j.at("gate_noise_end_step").get<std::size_t>();
  c.block_order = parse_block_order(j.at("block_order").get<std::string>());
  c.validate();
  return c;
}

// Writes every ParamMap entry as a named f32 blob. The header carries
// whatever metadata the caller supplies (config, step, seed).
template <typename T>
void save_checkpoint(const std::string& path, const ParamMap<T>& params,
                     const nlohmann::json& header) {
  {
    std::set<std::string> names;
    for (const auto& [name, tensor] : params.entries)
      if (!names.insert(name).second)
        throw std::invalid_argument("checkpoint: duplicate parameter name " + name);
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  os.write(kCheckpointMagic, sizeof kCheckpointMagic);
  const std::string hdr = header.dump();
  detail::write_u64(os, hdr.size());
  os.write(hdr.data(), static_cast<std::streamsize>(hdr.size()));
  detail::write_u64(os, params.entries.size());
  std::vector<float> buf;
  for (const auto& [name, tensor] : params.entries) {
    detail::write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    const auto& shape = tensor->shape();
    detail::write_u32(os, static_cast<std::uint32_t>(shape.size()));
    for (std::size_t d : shape) detail::write_u64(os, d);
    buf.resize(tensor->numel());
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>((*tensor)[i]);
    os.write(reinterpret_cast<const char*>(buf.data()),
             static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  if (!os) throw std::runtime_error("checkpoint: write to " + path + " failed");
}

// Loads blobs into the matching ParamMap entries; every entry must be
// present with its exact shape, and the file must contain nothing extra.
template <typename T>
nlohmann::json load_checkpoint(const std::string& path, ParamMap<T>& params) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8] = {};
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kCheckpointMagic, 6) != 0)
    throw std::runtime_error("checkpoint: " + path + " is not a checkpoint file");
  if (std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw std::runtime_error("checkpoint: unsupported container version " +
                             std::string(magic + 6, 2));
  const std::uint64_t hdr_len = detail::read_u64(is);
  std::string hdr(hdr_len, '\0');
  is.read(hdr.data(), static_cast<std::streamsize>(hdr_len));
  if (!is) throw std::runtime_error("checkpoint: truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(hdr);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error(std::string("checkpoint: bad header: ") + e.what());
  }
  const std::uint64_t n_blobs = detail::read_u64(is);
  if (n_blobs != params.entries.size())
    throw std::runtime_error("checkpoint: file has " + std::to_string(n_blobs) +
                             " parameters, model has " + std::to_string(params.entries.size()));
  std::vector<float> buf;
  std::set<std::string> seen;
  for (std::uint64_t b = 0; b < n_blobs; ++b) {
    const std::uint32_t name_len = detail::read_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw std::runtime_error("checkpoint: truncated blob name");
    const std::uint32_t rank = detail::read_u32(is);
    Shape shape(rank);
    for (std::uint32_t d = 0; d < rank; ++d) shape[d] = detail::read_u64(is);
    Tensor<T>* target = params.find(name);
    if (!target) throw std::runtime_error("checkpoint: unknown parameter " + name);
    if (!seen.insert(name).second)
      throw std::runtime_error("checkpoint: duplicate parameter " + name);
    if (target->shape() != shape)
      throw std::runtime_error("checkpoint: shape mismatch for " + name + ": file " +
                               shape_str(shape) + " vs model " + shape_str(target->shape()));
    buf.resize(shape_numel(shape));
    is.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!is) throw std::runtime_error("checkpoint: truncated data for " + name);
    for (std::size_t i = 0; i < buf.size(); ++i) (*target)[i] = static_cast<T>(buf[i]);
  }
  return header;
}

}  // namespace pidimt
