#include "insitu/encode.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include <openssl/evp.h>
#include <png.h>

#include "insitu/errors.hpp"

namespace insitu {

using nlohmann::json;

std::string encoding_name(FrameEncoding e) { return e == FrameEncoding::png ? "png" : "raw-rgba8"; }

FrameEncoding encoding_from_name(std::string_view name) {
  if (name == "png") return FrameEncoding::png;
  if (name == "raw-rgba8") return FrameEncoding::raw_rgba8;
  throw ParseError("unknown frame encoding '" + std::string(name) + "'");
}

Bytes to_rgba8(const LocalImage& image) {
  Bytes out(image.pixel_count() * 4);
  const auto q = [](float c) {
    return static_cast<std::uint8_t>(std::lround(255.0f * std::clamp(std::isnan(c) ? 0.0f : c, 0.0f, 1.0f)));
  };
  for (std::size_t i = 0; i < image.pixel_count(); ++i) {
    const Rgba& p = image.pixels[i];
    out[4 * i + 0] = q(p.r);
    out[4 * i + 1] = q(p.g);
    out[4 * i + 2] = q(p.b);
    out[4 * i + 3] = q(p.a);
  }
  return out;
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  // EVP_EncodeBlock takes an int length; feed it in chunks that are multiples of 3.
  constexpr std::size_t kChunk = 3 * (1 << 20);
  std::size_t written = 0;
  for (std::size_t at = 0; at < bytes.size(); at += kChunk) {
    const std::size_t n = std::min(kChunk, bytes.size() - at);
    written += static_cast<std::size_t>(EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data() + written),
                                                        bytes.data() + at, static_cast<int>(n)));
  }
  out.resize(written);
  return out;
}

Bytes base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw ParseError("base64 length is not a multiple of 4");
  Bytes out(text.size() / 4 * 3);
  constexpr std::size_t kChunk = 4 * (1 << 20);
  std::size_t written = 0;
  for (std::size_t at = 0; at < text.size(); at += kChunk) {
    const std::size_t n = std::min(kChunk, text.size() - at);
    const int got = EVP_DecodeBlock(out.data() + written, reinterpret_cast<const unsigned char*>(text.data() + at),
                                    static_cast<int>(n));
    if (got < 0) throw ParseError("malformed base64");
    written += static_cast<std::size_t>(got);
  }
  // EVP_DecodeBlock keeps the zero bytes that padding stands for.
  std::size_t pad = 0;
  if (!text.empty() && text.back() == '=') ++pad;
  if (text.size() >= 2 && text[text.size() - 2] == '=') ++pad;
  out.resize(written - pad);
  return out;
}

Bytes png_encode(std::span<const std::uint8_t> rgba8, int width, int height) {
  if (width <= 0 || height <= 0 || rgba8.size() != static_cast<std::size_t>(width) * height * 4) {
    throw ContractError("png_encode: pixel buffer does not match the image size");
  }
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(width);
  img.height = static_cast<png_uint_32>(height);
  img.format = PNG_FORMAT_RGBA;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, rgba8.data(), 0, nullptr)) {
    throw Error(std::string("png_encode: ") + img.message);
  }
  Bytes out(size);
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, rgba8.data(), 0, nullptr)) {
    throw Error(std::string("png_encode: ") + img.message);
  }
  out.resize(size);
  return out;
}

Bytes png_decode(std::span<const std::uint8_t> png, int& width, int& height) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, png.data(), png.size())) {
    throw ParseError(std::string("png_decode: ") + img.message);
  }
  img.format = PNG_FORMAT_RGBA;
  Bytes out(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.data(), 0, nullptr)) {
    png_image_free(&img);
    throw ParseError(std::string("png_decode: ") + img.message);
  }
  width = static_cast<int>(img.width);
  height = static_cast<int>(img.height);
  return out;
}

EncodedImage encode_frame(const LocalImage& image, FrameEncoding encoding, int quality) {
  EncodedImage out;
  out.width = image.width;
  out.height = image.height;
  out.encoding = encoding;
  out.quality = std::clamp(quality, 0, 100);
  const Bytes rgba = to_rgba8(image);
  out.data = encoding == FrameEncoding::png ? base64_encode(png_encode(rgba, image.width, image.height))
                                            : base64_encode(rgba);
  return out;
}

Bytes decode_frame_pixels(const EncodedImage& image) {
  Bytes bytes = base64_decode(image.data);
  if (image.encoding == FrameEncoding::raw_rgba8) {
    if (bytes.size() != static_cast<std::size_t>(image.width) * image.height * 4) {
      throw ParseError("raw-rgba8 payload does not match the declared size");
    }
    return bytes;
  }
  int w = 0, h = 0;
  Bytes pixels = png_decode(bytes, w, h);
  if (w != image.width || h != image.height) throw ParseError("png size does not match the declared size");
  return pixels;
}

json image_to_json(const EncodedImage& image) {
  return {{"width", image.width},
          {"height", image.height},
          {"encoding", encoding_name(image.encoding)},
          {"quality", image.quality},
          {"data", image.data}};
}

EncodedImage image_from_json(const json& j) {
  try {
    EncodedImage img;
    img.width = j.at("width").get<int>();
    img.height = j.at("height").get<int>();
    img.encoding = encoding_from_name(j.at("encoding").get<std::string>());
    img.quality = j.value("quality", 90);
    img.data = j.at("data").get<std::string>();
    return img;
  } catch (const json::exception& e) {
    throw ParseError(std::string("frame image: ") + e.what());
  }
}

json frame_message(std::int64_t step, const EncodedImage& image, const json& metadata) {
  return {{"type", "frame"}, {"step", step}, {"image", image_to_json(image)}, {"metadata", metadata}};
}

}  // namespace insitu
