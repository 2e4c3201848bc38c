#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "ebll/autoencoder.hpp"
#include "ebll/lifelong.hpp"
#include "ebll/model.hpp"
#include "ebll/tensor.hpp"

namespace ebll::checkpoint {

// Layout, all integers little-endian:
//   "EBLL" | u16 version | u32 array count
//   per array: u16 name length | name bytes | u8 rank | rank x u32 dims | f64 payload
inline constexpr char kMagic[4] = {'E', 'B', 'L', 'L'};
inline constexpr std::uint16_t kVersion = 1;

class CheckpointError : public std::runtime_error {
public:
  enum class Kind { Io, BadMagic, VersionMismatch, Truncated, Schema };
  CheckpointError(Kind k, const std::string& what) : std::runtime_error(what), kind(k) {}
  Kind kind;
};

struct NamedArray {
  std::string name;
  Tensor value;
};

using Archive = std::vector<NamedArray>;

std::vector<unsigned char> encode(const Archive& archive);
Archive decode(const std::vector<unsigned char>& bytes);

void save(const Archive& archive, const std::filesystem::path& path);
Archive load(const std::filesystem::path& path);

/// Find an array by name; CheckpointError(Schema) when absent.
const Tensor& find(const Archive& archive, const std::string& name);

// Model arrays are named after their parameters (F.0.weight, T.0.bias,
// head2.0.weight, ...); the architecture is recovered from the shapes.
Archive to_archive(const model::TaskModel& m);
model::TaskModel model_from_archive(const Archive& archive);

Archive to_archive(const ae::Autoencoder& ae, const std::string& prefix = "ae");
ae::Autoencoder autoencoder_from_archive(const Archive& archive, const std::string& prefix = "ae");

/// Encoders, alphas and the recorded targets/codes of a task memory.
/// Sample ids are split into two exact 32-bit halves.
Archive to_archive(const lifelong::TaskMemory& memory);
lifelong::TaskMemory memory_from_archive(const Archive& archive);

/// FNV-1a over the payload bytes of the named arrays whose name starts with one of the prefixes.
std::uint64_t checksum(const Archive& archive, const std::vector<std::string>& prefixes);

}  // namespace ebll::checkpoint
