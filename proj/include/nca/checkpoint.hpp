#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

#include "json.hpp"

#include "nca/trainer.hpp"

namespace nca {

/// Missing, truncated, corrupt or incompatible checkpoint.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Binary container, all integers and floats little-endian:
///
///   magic    8 bytes  "NCACKPT\0"
///   version  u32      1
///   count    u32      number of sections
///   count x section:
///     tag     4 bytes  ASCII
///     length  u64      payload bytes
///     payload
///     crc     u32      CRC-32 of the payload
///   crc      u32      CRC-32 of every preceding byte
///
/// Sections, in order:
///   CONF  UTF-8 JSON {"model", "step", "train", "epoch"}
///   PARM  u32 input_dim, hidden_dim, output_dim; f32 w1, b1, w2, b2
///   ADAM  u64 step; f64 lr, beta1, beta2, eps; f64 m_w1, m_b1, m_w2, v_w1, v_b1, v_w2
///   RNG_  u64 length + text of the engine state
///   POOL  u32 count; per entry: i32 target, u8 task, u8 seeded, u64 age,
///         f64 disc row, f64 disc col, i32 disc diameter,
///         and when seeded: u32 h, w, k, n; f32 h*w*n values
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const TrainerState& state);
TrainerState decode_checkpoint(std::span<const std::uint8_t> bytes);

/// Writes `path` (via a temporary file and rename) plus `path`.json, a
/// text summary of shapes and section checksums.
void save_checkpoint(const std::filesystem::path& path, const TrainerState& state);
TrainerState load_checkpoint(const std::filesystem::path& path);

nlohmann::json checkpoint_summary(const TrainerState& state, std::span<const std::uint8_t> bytes);

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes);

}  // namespace nca
