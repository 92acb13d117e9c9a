#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "pathscan/autodiff.hpp"
#include "pathscan/nn.hpp"
#include "pathscan/optim.hpp"

namespace pathscan {

struct NamedArray {
  std::string name;
  ad::Shape shape;
  std::vector<float> data;
};

// PSCK file:
//   "PSCK", u16 version, u32 tensor count, u32 metadata length, metadata
//   (UTF-8 JSON), then per tensor {u16 name length, name, u8 dtype (0 =
//   float32), u8 rank, u32 dims..., u64 payload offset}, u64 payload length,
//   float32 payload, and a trailing CRC32 over every preceding byte. All
//   integers little-endian.
struct Checkpoint {
  std::string metadata = "{}";
  std::vector<NamedArray> tensors;

  const NamedArray* find(const std::string& name) const;
  const NamedArray& at(const std::string& name) const;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Parameters go under their own names; Adam moments under "adam.m/<name>"
// and "adam.v/<name>", the step counter under "adam.step".
void store_params(Checkpoint& ck, const nn::ParamStore& params,
                  const nn::AdamState* adam = nullptr);
// Values must match the store's shapes exactly; restores Adam state when
// `adam` is non-null and the checkpoint carries it.
void restore_params(const Checkpoint& ck, nn::ParamStore& params, nn::AdamState* adam = nullptr);

}  // namespace pathscan
