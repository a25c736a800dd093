#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <json.hpp>

#include "insitu/encode.hpp"
#include "insitu/scene.hpp"
#include "insitu/steering.hpp"
#include "insitu/transport.hpp"

namespace insitu {

/// Timestamped events, shared by all ranks of one process.
class Timeline {
 public:
  using Clock = std::chrono::steady_clock;
  struct Event {
    std::string name;
    int rank = 0;
    std::int64_t step = 0;
    Clock::time_point at;
  };

  void record(std::string_view name, int rank, std::int64_t step);
  std::vector<Event> events() const;
  /// First event matching all three fields.
  std::optional<Clock::time_point> find(std::string_view name, int rank, std::int64_t step) const;

 private:
  mutable std::mutex mutex_;
  std::vector<Event> events_;
};

struct OutgoingFrame {
  std::int64_t step = 0;
  EncodedImage image;
  nlohmann::json metadata;
};

/// Where root's finished frames go.
class FrameSink {
 public:
  virtual ~FrameSink() = default;
  virtual void send_frame(const OutgoingFrame& frame) = 0;
  /// {"type":"error",...} reports, e.g. a rejected functor chain.
  virtual void send_error(const nlohmann::json& error) = 0;
};

/// Keeps everything in memory.
class MemorySink final : public FrameSink {
 public:
  void send_frame(const OutgoingFrame& frame) override;
  void send_error(const nlohmann::json& error) override;
  std::vector<OutgoingFrame> frames() const;
  std::vector<nlohmann::json> errors() const;

 private:
  mutable std::mutex mutex_;
  std::vector<OutgoingFrame> frames_;
  std::vector<nlohmann::json> errors_;
};

/// Writes frame_<step>.png into a directory.
class DirectorySink final : public FrameSink {
 public:
  explicit DirectorySink(std::filesystem::path dir);
  void send_frame(const OutgoingFrame& frame) override;
  void send_error(const nlohmann::json& error) override;

 private:
  std::filesystem::path dir_;
};

using FrameEncoder = std::function<EncodedImage(const LocalImage&)>;

/// Encodes and sends one frame at a time on a background thread. submit()
/// first waits for the previous frame, so at most one frame is in flight.
class AsyncFrameSender {
 public:
  AsyncFrameSender(FrameEncoder encoder, FrameSink* sink, Timeline* timeline = nullptr);
  ~AsyncFrameSender();
  AsyncFrameSender(const AsyncFrameSender&) = delete;
  AsyncFrameSender& operator=(const AsyncFrameSender&) = delete;

  void submit(LocalImage image, std::int64_t step, nlohmann::json metadata);
  /// Blocks until the in-flight frame (if any) has been handed to the sink.
  void wait();

  std::uint64_t frames_sent() const;
  std::uint64_t failures() const;
  double mean_encode_ms() const;

 private:
  void run(std::stop_token stop);

  FrameEncoder encoder_;
  FrameSink* sink_;
  Timeline* timeline_;
  mutable std::mutex mutex_;
  std::condition_variable_any cv_;
  struct Job {
    LocalImage image;
    std::int64_t step = 0;
    nlohmann::json metadata;
  };
  std::optional<Job> job_;
  bool busy_ = false;
  std::uint64_t sent_ = 0;
  std::uint64_t failed_ = 0;
  double encode_ms_total_ = 0.0;
  std::jthread worker_;
};

struct RuntimeConfig {
  GlobalVolume volume;
  FrameEncoding encoding = FrameEncoding::png;
  int quality = 90;
  RenderOptions render;
  int max_chain_length = 5;
  /// When set, held around render_local so that ranks sharing a core are
  /// timed one at a time.
  std::mutex* render_lock = nullptr;
};

/// Decision broadcast by root before every simulation step.
struct StepControl {
  bool exit = false;
  bool advance = true;   ///< run the next simulation step
  bool rerender = false;  ///< paused, but the scene changed: render the frozen state
  int period = 1;
};

struct FrameStats {
  std::int64_t step = 0;
  double render_ms = 0.0;
  double composite_ms = 0.0;
  std::uint64_t stations = 0;
  std::uint64_t rays = 0;
};

/// Extra per-rank metadata for a frame.
using MetadataProvider = std::function<nlohmann::json(std::int64_t step)>;

/// One rank's side of the frame pipeline. poll_control() and frame() are
/// collective: every rank calls them in the same sequence.
class RankRuntime {
 public:
  RankRuntime(Transport& transport, RuntimeConfig config, SourceRegistry& registry, Timeline* timeline = nullptr);
  ~RankRuntime();

  // Root-side wiring; ignored on other ranks.
  void set_initial_scene(SceneState scene);
  void set_inbox(SteeringInbox* inbox) { inbox_ = inbox; }
  void set_sink(FrameSink* sink);
  void set_encoder(FrameEncoder encoder);

  void set_metadata_provider(MetadataProvider provider) { metadata_ = std::move(provider); }

  /// Root drains its inbox, applies steering, and broadcasts the outcome.
  StepControl poll_control();

  /// broadcast scene -> update sources -> render -> composite -> root hands
  /// the image to the background sender and returns. Returns false when the
  /// frame was aborted (bad scene on some rank, transport failure).
  bool frame(std::int64_t step, double time);

  /// Root waits for the last frame to leave.
  void finish();

  bool is_root() const { return transport_.rank() == 0; }
  /// Scene of the last completed broadcast (identical on every rank).
  const SceneState& scene() const { return current_; }
  /// Root's working copy, including steering not yet broadcast.
  const SceneState& working_scene() const { return working_; }
  const ControlState& control() const { return control_; }
  const SteeringCounters& steering_counters() const { return counters_; }
  const std::vector<FrameStats>& frame_stats() const { return stats_; }
  std::uint64_t frames_aborted() const { return aborted_; }
  std::uint64_t frames_sent() const;

 private:
  bool broadcast_scene(std::int64_t step, RenderScene& compiled);

  Transport& transport_;
  RuntimeConfig config_;
  SourceRegistry& registry_;
  Timeline* timeline_;
  FunctorRegistry functors_;
  LocalDomain domain_;
  MetadataProvider metadata_;

  // root only
  SteeringInbox* inbox_ = nullptr;
  FrameSink* sink_ = nullptr;
  FrameEncoder encoder_;
  std::unique_ptr<AsyncFrameSender> sender_;
  SceneState working_;
  SceneState last_good_;
  ControlState control_;
  SteeringCounters counters_;
  bool dirty_ = true;

  SceneState current_;
  std::vector<FrameStats> stats_;
  std::uint64_t aborted_ = 0;
};

/// Rank 0 receives every rank's bytes (index = rank); others get an empty list.
std::vector<Bytes> gather_to_root(Transport& transport, Bytes mine);

}  // namespace insitu
