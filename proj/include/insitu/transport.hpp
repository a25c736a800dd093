#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <vector>

namespace insitu {

using Bytes = std::vector<std::uint8_t>;

struct TransportCounters {
  std::uint64_t bytes_sent = 0;
  std::uint64_t bytes_received = 0;
  std::uint64_t messages_sent = 0;
  std::uint64_t messages_received = 0;
};

/// Reliable point-to-point channel among ranks, ordered per sender/receiver pair.
class Transport {
 public:
  virtual ~Transport() = default;

  virtual int rank() const = 0;
  virtual int size() const = 0;
  virtual void send(int to, Bytes bytes) = 0;
  virtual Bytes receive(int from) = 0;

  /// Root's bytes on every rank. The default fans out with send/receive.
  virtual Bytes broadcast_from_root(Bytes bytes);

  const TransportCounters& counters() const { return counters_; }
  void reset_counters() { counters_ = {}; }

 protected:
  TransportCounters counters_;
};

/// Shared mailboxes for ranks living in one process. close() wakes every
/// blocked receiver with a TransportError.
class InProcessFabric : public std::enable_shared_from_this<InProcessFabric> {
 public:
  static std::shared_ptr<InProcessFabric> create(int ranks,
                                                 std::chrono::milliseconds receive_timeout = std::chrono::minutes(5));

  int size() const { return ranks_; }
  std::unique_ptr<Transport> endpoint(int rank);
  void close();

  void post(int from, int to, Bytes bytes);
  Bytes take(int from, int to);

 private:
  InProcessFabric(int ranks, std::chrono::milliseconds timeout);

  struct Mailbox {
    std::deque<Bytes> queue;
  };

  int ranks_;
  std::chrono::milliseconds timeout_;
  std::mutex mutex_;
  std::condition_variable cv_;
  bool closed_ = false;
  std::vector<Mailbox> boxes_;  // index from * ranks + to
};

class InProcessTransport final : public Transport {
 public:
  InProcessTransport(std::shared_ptr<InProcessFabric> fabric, int rank) : fabric_(std::move(fabric)), rank_(rank) {}

  int rank() const override { return rank_; }
  int size() const override { return fabric_->size(); }
  void send(int to, Bytes bytes) override;
  Bytes receive(int from) override;

 private:
  std::shared_ptr<InProcessFabric> fabric_;
  int rank_;
};

/// Little-endian writer/reader used by the wire formats.
class ByteWriter {
 public:
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void bytes(const std::uint8_t* data, std::size_t n) { out_.insert(out_.end(), data, data + n); }
  Bytes take() { return std::move(out_); }
  std::size_t size() const { return out_.size(); }

 private:
  Bytes out_;
};

class ByteReader {
 public:
  explicit ByteReader(const Bytes& in) : in_(in) {}
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  void need(std::size_t n) const;
  const Bytes& in_;
  std::size_t pos_ = 0;
};

}  // namespace insitu
