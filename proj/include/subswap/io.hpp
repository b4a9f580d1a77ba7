#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <json.hpp>

#include "subswap/tensor.hpp"
#include "subswap/types.hpp"

namespace subswap {

// VTEN layout, all fields little-endian:
//   char[4]  magic "VTEN"
//   u32      version (1)
//   u32      dtype code (see DType)
//   u32      rank (1..5)
//   u64      dims[rank]
//   payload  prod(dims) elements, row-major
inline constexpr std::uint32_t kVtenVersion = 1;
inline constexpr std::uint64_t kVtenMaxElements = std::uint64_t{1} << 40;

enum class DType : std::uint32_t {
  kFloat32 = 1,
  kFloat64 = 2,
  kUInt8 = 3,
  kInt32 = 4,
  kInt64 = 5,
};

template <typename Scalar>
constexpr DType dtype_of();
template <> constexpr DType dtype_of<float>() { return DType::kFloat32; }
template <> constexpr DType dtype_of<double>() { return DType::kFloat64; }
template <> constexpr DType dtype_of<std::uint8_t>() { return DType::kUInt8; }
template <> constexpr DType dtype_of<std::int32_t>() { return DType::kInt32; }
template <> constexpr DType dtype_of<std::int64_t>() { return DType::kInt64; }

struct VtenHeader {
  DType dtype;
  Shape shape;
  std::size_t payload_offset;
};

/// Parses and validates the header; throws kTruncated, kBadMagic, kBadVersion,
/// kBadDtype, kShape (rank) or kDimOverflow.
VtenHeader parse_vten_header(std::span<const std::byte> bytes);

template <typename Scalar>
std::vector<std::byte> encode_vten(const Tensor<Scalar>& t);

/// Throws kBadDtype when the stored dtype differs from Scalar.
template <typename Scalar>
Tensor<Scalar> decode_vten(std::span<const std::byte> bytes);

template <typename Scalar>
void save_tensor(const std::filesystem::path& path, const Tensor<Scalar>& t);

template <typename Scalar>
Tensor<Scalar> load_tensor(const std::filesystem::path& path);

std::vector<std::byte> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::byte> bytes);
void write_text(const std::filesystem::path& path, const std::string& text);
nlohmann::json read_json(const std::filesystem::path& path);

// Frame folders hold zero-padded frame_NNNNN.png files, read in lexical order.
std::string frame_name(Index t);
VideoClip load_frame_folder(const std::filesystem::path& dir);
void save_frame_folder(const std::filesystem::path& dir, const VideoClip& clip);
MaskSequence load_mask_folder(const std::filesystem::path& dir);
void save_mask_folder(const std::filesystem::path& dir, const MaskSequence& mask);

/// RGBA PNG; the alpha channel (threshold 128) becomes the matte.
ReferenceImage load_reference_png(const std::filesystem::path& path);
void save_reference_png(const std::filesystem::path& path, const ReferenceImage& ref);

nlohmann::json pose_to_json(const PoseSequence& pose);
PoseSequence pose_from_json(const nlohmann::json& j);

float quantize_u8(float v);

}  // namespace subswap
