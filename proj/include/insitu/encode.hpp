#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "insitu/image.hpp"
#include "insitu/transport.hpp"

namespace insitu {

enum class FrameEncoding { raw_rgba8, png };

std::string encoding_name(FrameEncoding e);
/// Throws ParseError for names other than "raw-rgba8" and "png".
FrameEncoding encoding_from_name(std::string_view name);

/// Premultiplied channels quantized as round(255 * clamp(c, 0, 1)), row-major RGBA.
Bytes to_rgba8(const LocalImage& image);

std::string base64_encode(std::span<const std::uint8_t> bytes);
/// Throws ParseError on malformed input.
Bytes base64_decode(std::string_view text);

/// Lossless 8-bit RGBA PNG.
Bytes png_encode(std::span<const std::uint8_t> rgba8, int width, int height);
/// Returns RGBA8 pixels; throws ParseError when `png` is not a readable PNG.
Bytes png_decode(std::span<const std::uint8_t> png, int& width, int& height);

struct EncodedImage {
  int width = 0;
  int height = 0;
  FrameEncoding encoding = FrameEncoding::png;
  /// Carried for client compatibility; both encodings are lossless.
  int quality = 90;
  std::string data;  ///< base64
};

EncodedImage encode_frame(const LocalImage& image, FrameEncoding encoding, int quality);
/// RGBA8 pixels of an encoded frame; throws ParseError on bad payloads.
Bytes decode_frame_pixels(const EncodedImage& image);

nlohmann::json image_to_json(const EncodedImage& image);
EncodedImage image_from_json(const nlohmann::json& j);

/// {"type":"frame","step":...,"image":{...},"metadata":{...}}
nlohmann::json frame_message(std::int64_t step, const EncodedImage& image, const nlohmann::json& metadata);

}  // namespace insitu
