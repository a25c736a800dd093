#include "insitu/compositor.hpp"

#include <algorithm>
#include <array>
#include <numeric>
#include <string>

#include "insitu/errors.hpp"
#include "insitu/raycast.hpp"

namespace insitu {

namespace {

// Number of slab boundaries lying between the camera coordinate and a brick
// slab [lo, hi] on one axis. Zero when the camera is within the closed slab.
int boundaries_between(double cam, int lo, int hi, int brick, int bricks) {
  int count = 0;
  for (int m = 0; m <= bricks; ++m) {
    const double b = static_cast<double>(m) * brick;
    if (cam < lo && b > cam && b <= lo) ++count;
    if (cam > hi && b >= hi && b < cam) ++count;
  }
  return count;
}

bool is_power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

}  // namespace

VisibilityOrder visibility_order(const GlobalVolume& volume, const Camera& camera) {
  volume.validate();
  const int n = volume.rank_count();
  const Index3 brick = volume.brick_size();
  std::vector<std::array<int, 4>> keys(static_cast<std::size_t>(n));
  for (int r = 0; r < n; ++r) {
    const Index3 c = rank_coords(volume, r);
    auto& key = keys[static_cast<std::size_t>(r)];
    for (std::size_t axis = 0; axis < 3; ++axis) {
      const int lo = c[axis] * brick[axis];
      key[axis] = boundaries_between(camera.position[axis], lo, lo + brick[axis], brick[axis],
                                     volume.decomposition[axis]);
    }
    key[3] = r;
  }
  VisibilityOrder order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return keys[static_cast<std::size_t>(a)] < keys[static_cast<std::size_t>(b)]; });
  return order;
}

void validate_order(const VisibilityOrder& order, int n) {
  if (static_cast<int>(order.size()) != n) throw ContractError("visibility order has wrong length");
  std::vector<bool> seen(static_cast<std::size_t>(n), false);
  for (int r : order) {
    if (r < 0 || r >= n || seen[static_cast<std::size_t>(r)]) throw ContractError("visibility order is not a permutation");
    seen[static_cast<std::size_t>(r)] = true;
  }
}

LocalImage composite_sequential(std::span<const LocalImage> images, const VisibilityOrder& order) {
  if (images.empty()) throw ContractError("nothing to composite");
  validate_order(order, static_cast<int>(images.size()));
  const int w = images.front().width;
  const int h = images.front().height;
  for (const LocalImage& img : images) {
    if (img.width != w || img.height != h || img.pixels.size() != static_cast<std::size_t>(w) * h) {
      throw ContractError("composite_sequential: image size mismatch");
    }
  }
  LocalImage out(w, h);
  for (int r : order) {
    const LocalImage& img = images[static_cast<std::size_t>(r)];
    for (std::size_t i = 0; i < out.pixels.size(); ++i) out.pixels[i] = over(out.pixels[i], img.pixels[i]);
  }
  return out;
}

Bytes encode_composite(const CompositeMessage& msg) {
  if (msg.payload.size() != msg.span.length) throw ContractError("composite payload does not match span");
  ByteWriter w;
  w.u32(msg.round);
  w.u32(msg.sender);
  w.u32(msg.span.offset);
  w.u32(msg.span.length);
  for (const Rgba& p : msg.payload) {
    w.f32(p.r);
    w.f32(p.g);
    w.f32(p.b);
    w.f32(p.a);
  }
  return w.take();
}

CompositeMessage decode_composite(const Bytes& bytes) {
  ByteReader r(bytes);
  CompositeMessage msg;
  msg.round = r.u32();
  msg.sender = r.u32();
  msg.span.offset = r.u32();
  msg.span.length = r.u32();
  if (r.remaining() != static_cast<std::size_t>(msg.span.length) * 16) {
    throw ProtocolError("composite payload length does not match span of " + std::to_string(msg.span.length));
  }
  msg.payload.resize(msg.span.length);
  for (Rgba& p : msg.payload) {
    p.r = r.f32();
    p.g = r.f32();
    p.b = r.f32();
    p.a = r.f32();
  }
  return msg;
}

namespace {

CompositeMessage span_message(const LocalImage& img, std::uint32_t round, int sender, PixelSpan span) {
  CompositeMessage m;
  m.round = round;
  m.sender = static_cast<std::uint32_t>(sender);
  m.span = span;
  const auto first = img.pixels.begin() + span.offset;
  m.payload.assign(first, first + span.length);
  return m;
}

CompositeMessage expect_message(Transport& t, int from, std::uint32_t round) {
  CompositeMessage m = decode_composite(t.receive(from));
  if (m.round != round || m.sender != static_cast<std::uint32_t>(from)) {
    throw ProtocolError("expected round " + std::to_string(round) + " from rank " + std::to_string(from) +
                        ", got round " + std::to_string(m.round) + " from rank " + std::to_string(m.sender));
  }
  return m;
}

SwapResult direct_send(Transport& t, const LocalImage& local, const VisibilityOrder& order) {
  const int n = t.size();
  const PixelSpan all{0, static_cast<std::uint32_t>(local.pixel_count())};
  if (t.rank() != 0) {
    t.send(0, encode_composite(span_message(local, 0, t.rank(), all)));
    return SwapResult{std::nullopt, PixelSpan{}};
  }
  std::vector<LocalImage> images(static_cast<std::size_t>(n));
  images[0] = local;
  for (int r = 1; r < n; ++r) {
    CompositeMessage m = expect_message(t, r, 0);
    if (m.span != all) throw ProtocolError("direct send must carry the whole image");
    LocalImage img(local.width, local.height);
    img.pixels = std::move(m.payload);
    images[static_cast<std::size_t>(r)] = std::move(img);
  }
  return SwapResult{composite_sequential(images, order), all};
}

}  // namespace

SwapResult binary_swap(Transport& transport, const LocalImage& local, const VisibilityOrder& order) {
  const int n = transport.size();
  const int me = transport.rank();
  validate_order(order, n);
  if (n == 1) return SwapResult{local, PixelSpan{0, static_cast<std::uint32_t>(local.pixel_count())}};
  if (!is_power_of_two(n)) return direct_send(transport, local, order);

  const auto pos = static_cast<int>(std::find(order.begin(), order.end(), me) - order.begin());
  LocalImage work = local;
  PixelSpan span{0, static_cast<std::uint32_t>(local.pixel_count())};

  std::uint32_t round = 0;
  for (int bit = 1; bit < n; bit <<= 1, ++round) {
    const int partner = order[static_cast<std::size_t>(pos ^ bit)];
    const bool in_front = (pos & bit) == 0;
    const std::uint32_t half = span.length / 2;
    const PixelSpan low{span.offset, half};
    const PixelSpan high{span.offset + half, span.length - half};
    const PixelSpan keep = in_front ? low : high;
    const PixelSpan give = in_front ? high : low;

    transport.send(partner, encode_composite(span_message(work, round, me, give)));
    const CompositeMessage got = expect_message(transport, partner, round);
    if (got.span != keep) throw ProtocolError("partner sent a span this rank does not own");
    for (std::uint32_t i = 0; i < keep.length; ++i) {
      Rgba& mine = work.pixels[keep.offset + i];
      const Rgba& theirs = got.payload[i];
      mine = in_front ? over(mine, theirs) : over(theirs, mine);
    }
    span = keep;
  }

  const std::uint32_t gather_round = round;
  if (me != 0) {
    transport.send(0, encode_composite(span_message(work, gather_round, me, span)));
    return SwapResult{std::nullopt, span};
  }
  LocalImage final_image(local.width, local.height);
  std::copy_n(work.pixels.begin() + span.offset, span.length, final_image.pixels.begin() + span.offset);
  for (int r = 1; r < n; ++r) {
    const CompositeMessage m = expect_message(transport, r, gather_round);
    if (static_cast<std::size_t>(m.span.offset) + m.span.length > final_image.pixel_count()) {
      throw ProtocolError("gathered span outside image");
    }
    std::copy(m.payload.begin(), m.payload.end(), final_image.pixels.begin() + m.span.offset);
  }
  return SwapResult{std::move(final_image), span};
}

}  // namespace insitu
