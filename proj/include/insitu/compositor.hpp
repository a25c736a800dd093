#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "insitu/field.hpp"
#include "insitu/image.hpp"
#include "insitu/transport.hpp"

namespace insitu {

struct Camera;

/// Premultiplied front-to-back blend. Associative, not commutative.
constexpr Rgba over(Rgba front, Rgba back) {
  const float t = 1.0f - front.a;
  return {front.r + t * back.r, front.g + t * back.g, front.b + t * back.b, front.a + t * back.a};
}

/// Rank ids, front-most first.
using VisibilityOrder = std::vector<int>;

/// Nested slab order for a regular brick grid: each brick is keyed per axis by
/// the number of slab boundaries between it and the camera; keys compare
/// x, then y, then z, ties by ascending rank id. Bricks pierced by one ray
/// always appear near to far.
VisibilityOrder visibility_order(const GlobalVolume& volume, const Camera& camera);

/// Throws ContractError unless `order` is a permutation of 0..n-1.
void validate_order(const VisibilityOrder& order, int n);

/// Sequential front-to-back fold; `images` is indexed by rank.
LocalImage composite_sequential(std::span<const LocalImage> images, const VisibilityOrder& order);

/// Contiguous range of pixels in the row-major image.
struct PixelSpan {
  std::uint32_t offset = 0;
  std::uint32_t length = 0;

  friend bool operator==(const PixelSpan&, const PixelSpan&) = default;
};

/// Wire unit of the compositing rounds.
///
/// Layout (little-endian): u32 round, u32 sender, u32 span offset,
/// u32 span length, then length * 4 float32 values (r, g, b, a per pixel).
struct CompositeMessage {
  std::uint32_t round = 0;
  std::uint32_t sender = 0;
  PixelSpan span;
  std::vector<Rgba> payload;
};

inline constexpr std::size_t kCompositeHeaderBytes = 16;

Bytes encode_composite(const CompositeMessage& msg);
/// Throws ProtocolError when the payload length disagrees with the span.
CompositeMessage decode_composite(const Bytes& bytes);

struct SwapResult {
  std::optional<LocalImage> image;  ///< full frame, rank 0 only
  PixelSpan owned;                  ///< span this rank composited
};

/// Binary swap over the ranks of `transport`. Pairing runs on positions in
/// `order` (position p meets p ^ 2^k in round k), so every merge joins two
/// adjacent blocks of the order and the lower position is in front. Halves are
/// halves of the flattened pixel range. Finished spans are gathered on rank 0.
/// Rank counts that are not a power of two fall back to direct send.
SwapResult binary_swap(Transport& transport, const LocalImage& local, const VisibilityOrder& order);

}  // namespace insitu
