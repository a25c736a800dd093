#include "insitu/transport.hpp"

#include <bit>
#include <string>

#include "insitu/errors.hpp"

namespace insitu {

Bytes Transport::broadcast_from_root(Bytes bytes) {
  if (rank() == 0) {
    for (int r = 1; r < size(); ++r) send(r, bytes);
    return bytes;
  }
  return receive(0);
}

std::shared_ptr<InProcessFabric> InProcessFabric::create(int ranks, std::chrono::milliseconds receive_timeout) {
  if (ranks < 1) throw ContractError("fabric needs at least one rank");
  return std::shared_ptr<InProcessFabric>(new InProcessFabric(ranks, receive_timeout));
}

InProcessFabric::InProcessFabric(int ranks, std::chrono::milliseconds timeout)
    : ranks_(ranks), timeout_(timeout), boxes_(static_cast<std::size_t>(ranks) * ranks) {}

std::unique_ptr<Transport> InProcessFabric::endpoint(int rank) {
  if (rank < 0 || rank >= ranks_) throw ContractError("no such rank " + std::to_string(rank));
  return std::make_unique<InProcessTransport>(shared_from_this(), rank);
}

void InProcessFabric::close() {
  {
    std::lock_guard lock(mutex_);
    closed_ = true;
  }
  cv_.notify_all();
}

void InProcessFabric::post(int from, int to, Bytes bytes) {
  if (to < 0 || to >= ranks_) throw TransportError("send to unknown rank " + std::to_string(to));
  {
    std::lock_guard lock(mutex_);
    if (closed_) throw TransportError("transport closed");
    boxes_[static_cast<std::size_t>(from) * ranks_ + to].queue.push_back(std::move(bytes));
  }
  cv_.notify_all();
}

Bytes InProcessFabric::take(int from, int to) {
  if (from < 0 || from >= ranks_) throw TransportError("receive from unknown rank " + std::to_string(from));
  std::unique_lock lock(mutex_);
  auto& box = boxes_[static_cast<std::size_t>(from) * ranks_ + to];
  const bool ready = cv_.wait_for(lock, timeout_, [&] { return closed_ || !box.queue.empty(); });
  if (!box.queue.empty()) {
    Bytes b = std::move(box.queue.front());
    box.queue.pop_front();
    return b;
  }
  if (closed_) throw TransportError("transport closed");
  if (!ready) {
    throw TransportError("receive timeout: rank " + std::to_string(to) + " waiting on " + std::to_string(from));
  }
  throw TransportError("spurious wakeup");
}

void InProcessTransport::send(int to, Bytes bytes) {
  const auto n = bytes.size();
  fabric_->post(rank_, to, std::move(bytes));
  counters_.bytes_sent += n;
  ++counters_.messages_sent;
}

Bytes InProcessTransport::receive(int from) {
  Bytes b = fabric_->take(from, rank_);
  counters_.bytes_received += b.size();
  ++counters_.messages_received;
  return b;
}

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

void ByteReader::need(std::size_t n) const {
  if (in_.size() - pos_ < n) throw ProtocolError("truncated message");
}

std::uint32_t ByteReader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_ + i]) << (8 * i);
  pos_ += 4;
  return v;
}

std::uint64_t ByteReader::u64() {
  need(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in_[pos_ + i]) << (8 * i);
  pos_ += 8;
  return v;
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }

}  // namespace insitu
