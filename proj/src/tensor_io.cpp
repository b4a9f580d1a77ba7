#include <bit>
#include <cstring>
#include <fstream>

#include "subswap/io.hpp"

namespace subswap {

namespace {

static_assert(std::endian::native == std::endian::little,
              "VTEN I/O assumes a little-endian host");

template <typename T>
void put(std::vector<std::byte>& out, T v) {
  const auto* p = reinterpret_cast<const std::byte*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T get(std::span<const std::byte> bytes, std::size_t& pos) {
  if (pos + sizeof(T) > bytes.size()) fail(ErrorCode::kTruncated, "truncated VTEN header");
  T v;
  std::memcpy(&v, bytes.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

std::size_t dtype_size(DType d) {
  switch (d) {
    case DType::kFloat32: return 4;
    case DType::kFloat64: return 8;
    case DType::kUInt8: return 1;
    case DType::kInt32: return 4;
    case DType::kInt64: return 8;
  }
  fail(ErrorCode::kBadDtype, "unknown dtype");
}

}  // namespace

VtenHeader parse_vten_header(std::span<const std::byte> bytes) {
  std::size_t pos = 0;
  if (bytes.size() < 4) fail(ErrorCode::kTruncated, "truncated VTEN header");
  if (std::memcmp(bytes.data(), "VTEN", 4) != 0) fail(ErrorCode::kBadMagic, "not a VTEN file");
  pos = 4;
  const auto version = get<std::uint32_t>(bytes, pos);
  if (version != kVtenVersion)
    fail(ErrorCode::kBadVersion, "unsupported VTEN version", std::to_string(version));
  const auto code = get<std::uint32_t>(bytes, pos);
  if (code < 1 || code > 5) fail(ErrorCode::kBadDtype, "unknown dtype", std::to_string(code));
  const auto rank = get<std::uint32_t>(bytes, pos);
  if (rank < 1 || rank > 5) fail(ErrorCode::kShape, "VTEN rank must be in [1,5]");
  VtenHeader h{static_cast<DType>(code), {}, 0};
  std::uint64_t count = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const auto d = get<std::uint64_t>(bytes, pos);
    if (d > kVtenMaxElements || (d != 0 && count > kVtenMaxElements / d))
      fail(ErrorCode::kDimOverflow, "VTEN dimensions overflow");
    count *= d;
    h.shape.push_back(static_cast<Index>(d));
  }
  h.payload_offset = pos;
  if (bytes.size() - pos < count * dtype_size(h.dtype))
    fail(ErrorCode::kTruncated, "truncated VTEN payload");
  return h;
}

template <typename Scalar>
std::vector<std::byte> encode_vten(const Tensor<Scalar>& t) {
  std::vector<std::byte> out;
  out.reserve(32 + static_cast<std::size_t>(t.size()) * sizeof(Scalar));
  for (char c : {'V', 'T', 'E', 'N'}) out.push_back(static_cast<std::byte>(c));
  put<std::uint32_t>(out, kVtenVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(dtype_of<Scalar>()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (Index d : t.shape()) put<std::uint64_t>(out, static_cast<std::uint64_t>(d));
  const auto* p = reinterpret_cast<const std::byte*>(t.data());
  out.insert(out.end(), p, p + t.size() * static_cast<Index>(sizeof(Scalar)));
  return out;
}

template <typename Scalar>
Tensor<Scalar> decode_vten(std::span<const std::byte> bytes) {
  const VtenHeader h = parse_vten_header(bytes);
  if (h.dtype != dtype_of<Scalar>()) fail(ErrorCode::kBadDtype, "VTEN dtype mismatch");
  Tensor<Scalar> t(h.shape);
  std::memcpy(t.data(), bytes.data() + h.payload_offset,
              static_cast<std::size_t>(t.size()) * sizeof(Scalar));
  return t;
}

std::vector<std::byte> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open file", path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<std::byte> out(buf.size());
  std::memcpy(out.data(), buf.data(), buf.size());
  return out;
}

void write_file(const std::filesystem::path& path, std::span<const std::byte> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "cannot write file", path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file(path, std::as_bytes(std::span(text.data(), text.size())));
}

nlohmann::json read_json(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return nlohmann::json::parse(reinterpret_cast<const char*>(bytes.data()),
                                 reinterpret_cast<const char*>(bytes.data()) + bytes.size());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kIo, std::string("malformed JSON: ") + e.what(), path.string());
  }
}

template <typename Scalar>
void save_tensor(const std::filesystem::path& path, const Tensor<Scalar>& t) {
  write_file(path, encode_vten(t));
}

template <typename Scalar>
Tensor<Scalar> load_tensor(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    return decode_vten<Scalar>(bytes);
  } catch (const Error& e) {
    throw Error(e.code(), e.what(), path.string());
  }
}

#define SUBSWAP_INSTANTIATE_VTEN(T)                                          \
  template std::vector<std::byte> encode_vten<T>(const Tensor<T>&);          \
  template Tensor<T> decode_vten<T>(std::span<const std::byte>);             \
  template void save_tensor<T>(const std::filesystem::path&, const Tensor<T>&); \
  template Tensor<T> load_tensor<T>(const std::filesystem::path&);

SUBSWAP_INSTANTIATE_VTEN(float)
SUBSWAP_INSTANTIATE_VTEN(double)
SUBSWAP_INSTANTIATE_VTEN(std::uint8_t)
SUBSWAP_INSTANTIATE_VTEN(std::int32_t)
SUBSWAP_INSTANTIATE_VTEN(std::int64_t)

#undef SUBSWAP_INSTANTIATE_VTEN

}  // namespace subswap
