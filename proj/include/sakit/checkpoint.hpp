#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "sakit/graph.hpp"

namespace sakit {

using AnyTensor = std::variant<Tensor, TensorD>;

// Binary layout (all integers little-endian):
//   "SANC" | u32 version | u64 len + UTF-8 NetworkSpec text | u64 count |
//   count x ( u16 len + UTF-8 name | u8 dtype (0=f32, 1=f64) | u8 rank |
//             rank x u32 dim | raw IEEE-754 payload )
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::string spec_text;
  std::vector<std::pair<std::string, AnyTensor>> tensors;

  const AnyTensor* find(const std::string& name) const;
  void put(std::string name, AnyTensor t);

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Parameters followed by buffers, in name order.
template <class T>
Checkpoint snapshot(const Graph<T>& graph);

// Copies every parameter and buffer of `graph` from the checkpoint,
// converting dtype as needed. Missing or mis-shaped tensors throw.
template <class T>
void restore(Graph<T>& graph, const Checkpoint& ckpt);

// Reads a tensor as doubles regardless of stored dtype.
TensorD as_double(const AnyTensor& t);

}  // namespace sakit
