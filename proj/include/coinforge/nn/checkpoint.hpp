#pragma once

// Versioned binary weight checkpoint. All integers are little-endian u32,
// all weights little-endian IEEE-754 binary32.
//
//   magic "CFNN", version, input channels, height, width, num_classes,
//   layer count
//   per layer: kind (0 conv, 1 maxpool, 2 relu, 3 flatten, 4 dense),
//              three spec fields, tensor count,
//              per tensor: rank, extents..., values

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>

#include "model.hpp"

namespace coinforge::nn {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kCheckpointMagic[4] = {'C', 'F', 'N', 'N'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw CheckpointError("truncated checkpoint");
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

inline void put_f32(std::ostream& os, float f) { put_u32(os, std::bit_cast<std::uint32_t>(f)); }
inline float get_f32(std::istream& is) { return std::bit_cast<float>(get_u32(is)); }

inline std::uint32_t narrow(std::size_t v) {
  if (v > UINT32_MAX) throw CheckpointError("value does not fit the checkpoint format");
  return static_cast<std::uint32_t>(v);
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const Network<float>& net) {
  const auto& cfg = net.config();
  os.write(kCheckpointMagic, 4);
  detail::put_u32(os, kCheckpointVersion);
  for (auto d : cfg.input) detail::put_u32(os, detail::narrow(d));
  detail::put_u32(os, detail::narrow(cfg.num_classes));
  detail::put_u32(os, detail::narrow(cfg.layers.size()));
  std::size_t p = 0;
  for (const auto& layer : cfg.layers) {
    std::uint32_t kind = static_cast<std::uint32_t>(layer.index());
    std::uint32_t f[3] = {0, 0, 0};
    std::uint32_t tensors = 0;
    if (const auto* c = std::get_if<ConvSpec>(&layer)) {
      f[0] = detail::narrow(c->out_channels), f[1] = detail::narrow(c->kernel), f[2] = detail::narrow(c->stride);
      tensors = 2;
    } else if (const auto* pool = std::get_if<PoolSpec>(&layer)) {
      f[0] = detail::narrow(pool->window);
    } else if (const auto* d = std::get_if<DenseSpec>(&layer)) {
      f[0] = detail::narrow(d->units);
      tensors = 2;
    }
    detail::put_u32(os, kind);
    for (auto v : f) detail::put_u32(os, v);
    detail::put_u32(os, tensors);
    for (std::uint32_t t = 0; t < tensors; ++t, ++p) {
      const auto& tensor = net.params()[p];
      detail::put_u32(os, detail::narrow(tensor.rank()));
      for (auto d : tensor.shape()) detail::put_u32(os, detail::narrow(d));
      for (float v : tensor.data()) detail::put_f32(os, v);
    }
  }
  if (!os) throw CheckpointError("failed writing checkpoint");
}

inline Network<float> read_checkpoint(std::istream& is, const std::string& name = "checkpoint") {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) throw CheckpointError("bad checkpoint magic");
  const auto version = detail::get_u32(is);
  if (version != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  ModelConfig cfg;
  cfg.name = name;
  cfg.input = {detail::get_u32(is), detail::get_u32(is), detail::get_u32(is)};
  cfg.num_classes = detail::get_u32(is);
  const auto layer_count = detail::get_u32(is);
  if (layer_count > 4096) throw CheckpointError("implausible layer count");
  std::vector<std::vector<Tensor<float>>> tensors;
  for (std::uint32_t l = 0; l < layer_count; ++l) {
    const auto kind = detail::get_u32(is);
    const std::uint32_t f[3] = {detail::get_u32(is), detail::get_u32(is), detail::get_u32(is)};
    switch (kind) {
      case 0:
        cfg.layers.push_back(ConvSpec{f[0], f[1], f[2]});
        break;
      case 1:
        cfg.layers.push_back(PoolSpec{f[0]});
        break;
      case 2:
        cfg.layers.push_back(ReluSpec{});
        break;
      case 3:
        cfg.layers.push_back(FlattenSpec{});
        break;
      case 4:
        cfg.layers.push_back(DenseSpec{f[0]});
        break;
      default:
        throw CheckpointError("unknown layer kind " + std::to_string(kind));
    }
    const auto count = detail::get_u32(is);
    auto& layer_tensors = tensors.emplace_back();
    for (std::uint32_t t = 0; t < count; ++t) {
      const auto rank = detail::get_u32(is);
      if (rank > 8) throw CheckpointError("implausible tensor rank");
      Shape shape;
      for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(detail::get_u32(is));
      Tensor<float> tensor(shape);
      for (auto& v : tensor.data()) v = detail::get_f32(is);
      layer_tensors.push_back(std::move(tensor));
    }
  }
  Network<float> net(cfg);
  std::size_t p = 0;
  for (auto& layer_tensors : tensors) {
    for (auto& t : layer_tensors) {
      if (p >= net.params().size() || t.shape() != net.params()[p].shape()) {
        throw CheckpointError("checkpoint tensors do not match the layer specs");
      }
      net.params()[p++] = std::move(t);
    }
  }
  if (p != net.params().size()) throw CheckpointError("checkpoint is missing parameter tensors");
  return net;
}

inline void save_checkpoint(const std::filesystem::path& path, const Network<float>& net) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot open " + path.string() + " for writing");
  write_checkpoint(os, net);
}

inline Network<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open " + path.string());
  return read_checkpoint(is);
}

}  // namespace coinforge::nn
