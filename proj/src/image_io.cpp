#include <algorithm>
#include <cmath>
#include <cstdio>
#include <vector>

#include <png.h>

#include "subswap/io.hpp"

namespace subswap {

namespace fs = std::filesystem;

float quantize_u8(float v) { return std::round(std::clamp(v, 0.f, 1.f) * 255.f) / 255.f; }

std::string frame_name(Index t) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%05lld.png", static_cast<long long>(t));
  return buf;
}

namespace {

struct RawImage {
  Index height = 0, width = 0, channels = 0;
  std::vector<std::uint8_t> pixels;  // interleaved
};

RawImage read_png(const fs::path& path, png_uint_32 format, Index channels) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str()))
    fail(ErrorCode::kIo, std::string("cannot read PNG: ") + image.message, path.string());
  image.format = format;
  RawImage raw;
  raw.height = image.height;
  raw.width = image.width;
  raw.channels = channels;
  raw.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, raw.pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    fail(ErrorCode::kIo, std::string("cannot decode PNG: ") + image.message, path.string());
  }
  return raw;
}

void write_png(const fs::path& path, const RawImage& raw, png_uint_32 format) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(raw.width);
  image.height = static_cast<png_uint_32>(raw.height);
  image.format = format;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, raw.pixels.data(), 0, nullptr))
    fail(ErrorCode::kIo, std::string("cannot write PNG: ") + image.message, path.string());
}

std::vector<fs::path> png_files(const fs::path& dir) {
  require(fs::is_directory(dir), ErrorCode::kIo, "not a directory", dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  require(!files.empty(), ErrorCode::kIo, "no PNG frames in folder", dir.string());
  return files;
}

std::uint8_t to_u8(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.f, 1.f) * 255.f));
}

}  // namespace

VideoClip load_frame_folder(const fs::path& dir) {
  const auto files = png_files(dir);
  Tensor<float> data;
  for (std::size_t i = 0; i < files.size(); ++i) {
    const RawImage raw = read_png(files[i], PNG_FORMAT_RGB, 3);
    if (i == 0) {
      data = Tensor<float>(Shape{static_cast<Index>(files.size()), 3, raw.height, raw.width});
    }
    require(raw.height == data.dim(2) && raw.width == data.dim(3), ErrorCode::kShape,
            "frame size differs within folder", files[i].string());
    const Index t = static_cast<Index>(i);
    for (Index y = 0; y < raw.height; ++y)
      for (Index x = 0; x < raw.width; ++x)
        for (Index c = 0; c < 3; ++c)
          data(t, c, y, x) =
              static_cast<float>(raw.pixels[static_cast<std::size_t>((y * raw.width + x) * 3 + c)]) /
              255.f;
  }
  return VideoClip(std::move(data));
}

void save_frame_folder(const fs::path& dir, const VideoClip& clip) {
  fs::create_directories(dir);
  RawImage raw{clip.height(), clip.width(), 3, {}};
  raw.pixels.resize(static_cast<std::size_t>(clip.height() * clip.width() * 3));
  for (Index t = 0; t < clip.frames(); ++t) {
    for (Index y = 0; y < clip.height(); ++y)
      for (Index x = 0; x < clip.width(); ++x)
        for (Index c = 0; c < 3; ++c)
          raw.pixels[static_cast<std::size_t>((y * clip.width() + x) * 3 + c)] =
              to_u8(clip(t, c, y, x));
    write_png(dir / frame_name(t), raw, PNG_FORMAT_RGB);
  }
}

MaskSequence load_mask_folder(const fs::path& dir) {
  const auto files = png_files(dir);
  Tensor<std::uint8_t> data;
  for (std::size_t i = 0; i < files.size(); ++i) {
    const RawImage raw = read_png(files[i], PNG_FORMAT_GRAY, 1);
    if (i == 0)
      data = Tensor<std::uint8_t>(Shape{static_cast<Index>(files.size()), raw.height, raw.width});
    require(raw.height == data.dim(1) && raw.width == data.dim(2), ErrorCode::kShape,
            "mask size differs within folder", files[i].string());
    const Index t = static_cast<Index>(i);
    for (Index y = 0; y < raw.height; ++y)
      for (Index x = 0; x < raw.width; ++x)
        data(t, y, x) = raw.pixels[static_cast<std::size_t>(y * raw.width + x)] >= 128 ? 1 : 0;
  }
  return MaskSequence(std::move(data));
}

void save_mask_folder(const fs::path& dir, const MaskSequence& mask) {
  fs::create_directories(dir);
  RawImage raw{mask.height(), mask.width(), 1, {}};
  raw.pixels.resize(static_cast<std::size_t>(mask.height() * mask.width()));
  for (Index t = 0; t < mask.frames(); ++t) {
    for (Index i = 0; i < mask.height() * mask.width(); ++i)
      raw.pixels[static_cast<std::size_t>(i)] = mask.tensor().slab(t)[i] ? 255 : 0;
    write_png(dir / frame_name(t), raw, PNG_FORMAT_GRAY);
  }
}

ReferenceImage load_reference_png(const fs::path& path) {
  const RawImage raw = read_png(path, PNG_FORMAT_RGBA, 4);
  ReferenceImage ref;
  ref.image = Tensor<float>(Shape{3, raw.height, raw.width});
  ref.alpha = Tensor<std::uint8_t>(Shape{raw.height, raw.width}, std::uint8_t{0});
  for (Index y = 0; y < raw.height; ++y)
    for (Index x = 0; x < raw.width; ++x) {
      const auto base = static_cast<std::size_t>((y * raw.width + x) * 4);
      for (Index c = 0; c < 3; ++c)
        ref.image(c, y, x) = static_cast<float>(raw.pixels[base + static_cast<std::size_t>(c)]) / 255.f;
      (*ref.alpha)(y, x) = raw.pixels[base + 3] >= 128 ? 1 : 0;
    }
  return ref;
}

void save_reference_png(const fs::path& path, const ReferenceImage& ref) {
  ref.validate();
  RawImage raw{ref.height(), ref.width(), 4, {}};
  raw.pixels.resize(static_cast<std::size_t>(ref.height() * ref.width() * 4));
  for (Index y = 0; y < ref.height(); ++y)
    for (Index x = 0; x < ref.width(); ++x) {
      const auto base = static_cast<std::size_t>((y * ref.width() + x) * 4);
      for (Index c = 0; c < 3; ++c) raw.pixels[base + static_cast<std::size_t>(c)] = to_u8(ref.image(c, y, x));
      raw.pixels[base + 3] = (!ref.alpha || (*ref.alpha)(y, x)) ? 255 : 0;
    }
  write_png(path, raw, PNG_FORMAT_RGBA);
}

nlohmann::json pose_to_json(const PoseSequence& pose) {
  nlohmann::json frames = nlohmann::json::array();
  for (const auto& f : pose.frames) {
    nlohmann::json joints = nlohmann::json::array();
    for (const auto& k : f) joints.push_back({k.x, k.y, k.visible});
    frames.push_back(std::move(joints));
  }
  return {{"height", pose.height},
          {"width", pose.width},
          {"joints", pose.joint_names},
          {"frames", std::move(frames)}};
}

PoseSequence pose_from_json(const nlohmann::json& j) {
  PoseSequence pose;
  try {
    pose.height = j.at("height").get<Index>();
    pose.width = j.at("width").get<Index>();
    pose.joint_names = j.at("joints").get<std::vector<std::string>>();
    for (const auto& f : j.at("frames")) {
      std::vector<Keypoint> joints;
      for (const auto& k : f)
        joints.push_back({k.at(0).get<float>(), k.at(1).get<float>(), k.at(2).get<bool>()});
      pose.frames.push_back(std::move(joints));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kIo, std::string("malformed pose JSON: ") + e.what());
  }
  pose.validate();
  return pose;
}

}  // namespace subswap
