#include "insitu/runtime.hpp"

#include <fstream>
#include <functional>

#include <spdlog/spdlog.h>

#include "insitu/compositor.hpp"
#include "insitu/errors.hpp"
#include "insitu/metadata.hpp"

namespace insitu {

using nlohmann::json;

namespace {

double ms_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

Bytes text_bytes(const std::string& s) { return Bytes(s.begin(), s.end()); }
std::string bytes_text(const Bytes& b) { return std::string(b.begin(), b.end()); }

}  // namespace

void Timeline::record(std::string_view name, int rank, std::int64_t step) {
  const auto now = Clock::now();
  std::lock_guard lock(mutex_);
  events_.push_back({std::string(name), rank, step, now});
}

std::vector<Timeline::Event> Timeline::events() const {
  std::lock_guard lock(mutex_);
  return events_;
}

std::optional<Timeline::Clock::time_point> Timeline::find(std::string_view name, int rank, std::int64_t step) const {
  std::lock_guard lock(mutex_);
  for (const Event& e : events_) {
    if (e.name == name && e.rank == rank && e.step == step) return e.at;
  }
  return std::nullopt;
}

void MemorySink::send_frame(const OutgoingFrame& frame) {
  std::lock_guard lock(mutex_);
  frames_.push_back(frame);
}

void MemorySink::send_error(const json& error) {
  std::lock_guard lock(mutex_);
  errors_.push_back(error);
}

std::vector<OutgoingFrame> MemorySink::frames() const {
  std::lock_guard lock(mutex_);
  return frames_;
}

std::vector<json> MemorySink::errors() const {
  std::lock_guard lock(mutex_);
  return errors_;
}

DirectorySink::DirectorySink(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
}

void DirectorySink::send_frame(const OutgoingFrame& frame) {
  Bytes png;
  if (frame.image.encoding == FrameEncoding::png) {
    png = base64_decode(frame.image.data);
  } else {
    png = png_encode(decode_frame_pixels(frame.image), frame.image.width, frame.image.height);
  }
  const auto path = dir_ / ("frame_" + std::to_string(frame.step) + ".png");
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(png.data()), static_cast<std::streamsize>(png.size()));
  if (!out) throw Error("cannot write " + path.string());
}

void DirectorySink::send_error(const json& error) { spdlog::error("frame error: {}", error.dump()); }

AsyncFrameSender::AsyncFrameSender(FrameEncoder encoder, FrameSink* sink, Timeline* timeline)
    : encoder_(std::move(encoder)), sink_(sink), timeline_(timeline), worker_([this](std::stop_token st) { run(st); }) {}

AsyncFrameSender::~AsyncFrameSender() {
  wait();
  worker_.request_stop();
  cv_.notify_all();
}

void AsyncFrameSender::submit(LocalImage image, std::int64_t step, json metadata) {
  wait();
  {
    std::lock_guard lock(mutex_);
    job_ = Job{std::move(image), step, std::move(metadata)};
    busy_ = true;
  }
  cv_.notify_all();
}

void AsyncFrameSender::wait() {
  std::unique_lock lock(mutex_);
  cv_.wait(lock, [&] { return !busy_; });
}

std::uint64_t AsyncFrameSender::frames_sent() const {
  std::lock_guard lock(mutex_);
  return sent_;
}

std::uint64_t AsyncFrameSender::failures() const {
  std::lock_guard lock(mutex_);
  return failed_;
}

double AsyncFrameSender::mean_encode_ms() const {
  std::lock_guard lock(mutex_);
  return sent_ ? encode_ms_total_ / static_cast<double>(sent_) : 0.0;
}

void AsyncFrameSender::run(std::stop_token stop) {
  for (;;) {
    Job job;
    {
      std::unique_lock lock(mutex_);
      cv_.wait(lock, stop, [&] { return job_.has_value(); });
      if (!job_) return;
      job = std::move(*job_);
      job_.reset();
    }
    if (timeline_) timeline_->record("send_begin", 0, job.step);
    bool ok = true;
    double encode_ms = 0.0;
    try {
      const auto t0 = std::chrono::steady_clock::now();
      OutgoingFrame frame{job.step, encoder_(job.image), std::move(job.metadata)};
      encode_ms = ms_since(t0);
      if (sink_) sink_->send_frame(frame);
    } catch (const std::exception& e) {
      ok = false;
      spdlog::error("frame {} could not be sent: {}", job.step, e.what());
    }
    if (timeline_) timeline_->record("send_end", 0, job.step);
    {
      std::lock_guard lock(mutex_);
      if (ok) {
        ++sent_;
        encode_ms_total_ += encode_ms;
      } else {
        ++failed_;
      }
      busy_ = false;
    }
    cv_.notify_all();
  }
}

std::vector<Bytes> gather_to_root(Transport& transport, Bytes mine) {
  if (transport.rank() != 0) {
    transport.send(0, std::move(mine));
    return {};
  }
  std::vector<Bytes> all(static_cast<std::size_t>(transport.size()));
  all[0] = std::move(mine);
  for (int r = 1; r < transport.size(); ++r) all[static_cast<std::size_t>(r)] = transport.receive(r);
  return all;
}

RankRuntime::RankRuntime(Transport& transport, RuntimeConfig config, SourceRegistry& registry, Timeline* timeline)
    : transport_(transport),
      config_(std::move(config)),
      registry_(registry),
      timeline_(timeline),
      functors_(FunctorRegistry::with_builtins(config_.max_chain_length)),
      domain_(local_domain(config_.volume, transport.rank())) {
  config_.volume.validate();
  if (config_.volume.rank_count() != transport.size()) {
    throw ContractError("decomposition has " + std::to_string(config_.volume.rank_count()) + " bricks for " +
                        std::to_string(transport.size()) + " ranks");
  }
  if (is_root()) {
    working_ = default_scene(registry_, config_.volume, 480, 270);
    last_good_ = working_;
    const FrameEncoding enc = config_.encoding;
    const int quality = config_.quality;
    encoder_ = [enc, quality](const LocalImage& img) { return encode_frame(img, enc, quality); };
  }
}

RankRuntime::~RankRuntime() {
  if (sender_) sender_->wait();
}

void RankRuntime::set_initial_scene(SceneState scene) {
  if (!is_root()) return;
  working_ = std::move(scene);
  last_good_ = working_;
  dirty_ = true;
}

void RankRuntime::set_sink(FrameSink* sink) {
  if (!is_root()) return;
  sink_ = sink;
  sender_.reset();
}

void RankRuntime::set_encoder(FrameEncoder encoder) {
  if (!is_root()) return;
  encoder_ = std::move(encoder);
  sender_.reset();
}

std::uint64_t RankRuntime::frames_sent() const { return sender_ ? sender_->frames_sent() : 0; }

StepControl RankRuntime::poll_control() {
  StepControl ctl;
  Bytes bytes;
  if (is_root()) {
    if (inbox_) {
      const std::vector<std::string> lines = inbox_->drain();
      if (apply_steering(working_, control_, lines, counters_)) dirty_ = true;
    }
    ctl.exit = control_.exit;
    ctl.period = working_.period;
    if (!control_.paused) {
      ctl.advance = true;
    } else if (control_.step_budget > 0) {
      ctl.advance = true;
      --control_.step_budget;
    } else {
      ctl.advance = false;
      ctl.rerender = dirty_;
    }
    ByteWriter w;
    w.u32(ctl.exit ? 1u : 0u);
    w.u32(ctl.advance ? 1u : 0u);
    w.u32(ctl.rerender ? 1u : 0u);
    w.u32(static_cast<std::uint32_t>(ctl.period));
    bytes = w.take();
  }
  bytes = transport_.broadcast_from_root(std::move(bytes));
  ByteReader r(bytes);
  ctl.exit = r.u32() != 0;
  ctl.advance = r.u32() != 0;
  ctl.rerender = r.u32() != 0;
  ctl.period = static_cast<int>(r.u32());
  return ctl;
}

bool RankRuntime::broadcast_scene(std::int64_t step, RenderScene& compiled) {
  Bytes bytes;
  if (is_root()) {
    SceneState candidate = working_;
    candidate.order = visibility_order(config_.volume, candidate.camera);
    bytes = serialize_scene(candidate);
  }
  bytes = transport_.broadcast_from_root(std::move(bytes));

  // Every rank parses the scene and its chains itself, then root collects
  // verdicts together with a digest of the received bytes.
  std::string problem;
  SceneState scene;
  try {
    scene = deserialize_scene(bytes);
    compiled = compile_scene(scene, registry_, functors_);
  } catch (const Error& e) {
    problem = e.what();
  }
  ByteWriter status;
  status.u64(std::hash<std::string_view>{}(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size())));
  status.u32(static_cast<std::uint32_t>(problem.size()));
  status.bytes(reinterpret_cast<const std::uint8_t*>(problem.data()), problem.size());
  const std::vector<Bytes> statuses = gather_to_root(transport_, status.take());

  Bytes verdict;
  if (is_root()) {
    std::string failure;
    std::uint64_t root_digest = 0;
    for (std::size_t r = 0; r < statuses.size(); ++r) {
      ByteReader in(statuses[r]);
      const std::uint64_t digest = in.u64();
      const std::uint32_t n = in.u32();
      if (r == 0) root_digest = digest;
      if (n > 0 && failure.empty()) {
        if (in.remaining() != n) throw ProtocolError("scene status from rank " + std::to_string(r) + " is truncated");
        const std::string msg(statuses[r].end() - n, statuses[r].end());
        failure = "rank " + std::to_string(r) + ": " + msg;
      } else if (digest != root_digest && failure.empty()) {
        failure = "rank " + std::to_string(r) + " received a different scene";
      }
    }
    verdict = text_bytes(failure);
  }
  verdict = transport_.broadcast_from_root(std::move(verdict));
  if (!verdict.empty()) {
    if (is_root()) {
      const std::string reason = bytes_text(verdict);
      spdlog::warn("frame at step {} aborted: {}", step, reason);
      if (sink_) sink_->send_error({{"type", "error"}, {"step", step}, {"message", reason}});
      working_ = last_good_;
      dirty_ = false;
    }
    return false;
  }
  current_ = std::move(scene);
  if (is_root()) last_good_ = working_;
  return true;
}

bool RankRuntime::frame(std::int64_t step, double time) {
  const int rank = transport_.rank();
  if (is_root()) {
    if (!sender_) sender_ = std::make_unique<AsyncFrameSender>(encoder_, sink_, timeline_);
    // Previous frame must be out before this one may render.
    sender_->wait();
  }
  try {
    RenderScene compiled;
    if (!broadcast_scene(step, compiled)) {
      ++aborted_;
      return false;
    }
    update_sources(registry_, compiled.settings.active, FrameInfo{step, time}, domain_);

    FrameStats fs;
    fs.step = step;
    MarchStats march;
    if (timeline_) timeline_->record("render_begin", rank, step);
    std::unique_lock<std::mutex> exclusive;
    if (config_.render_lock) exclusive = std::unique_lock(*config_.render_lock);
    auto t0 = std::chrono::steady_clock::now();
    LocalImage local = render_local(registry_, domain_, compiled, config_.render, &march);
    fs.render_ms = ms_since(t0);
    if (exclusive) exclusive.unlock();
    if (timeline_) timeline_->record("render_end", rank, step);
    fs.stations = march.stations;
    fs.rays = march.rays;

    t0 = std::chrono::steady_clock::now();
    SwapResult swapped = binary_swap(transport_, local, current_.order);
    fs.composite_ms = ms_since(t0);

    json doc = metadata_ ? metadata_(step) : json::object();
    if (doc.is_null()) doc = json::object();
    json mine = {{"rank", rank},
                 {"render_ms", fs.render_ms},
                 {"composite_ms", fs.composite_ms},
                 {"stations", fs.stations},
                 {"rays", fs.rays}};
    if (doc.contains("ranks") && doc["ranks"].is_array()) {
      doc["ranks"].push_back(mine);
    } else if (!doc.contains("ranks")) {
      doc["ranks"] = json::array({mine});
    }
    const std::vector<Bytes> docs = gather_to_root(transport_, text_bytes(doc.dump()));
    stats_.push_back(fs);

    if (is_root()) {
      std::vector<json> parsed;
      for (const Bytes& b : docs) parsed.push_back(json::parse(b.begin(), b.end(), nullptr, false));
      json merged = merge_metadata(parsed);
      merged["scene_version"] = current_.version;
      merged["steering"] = {{"applied", counters_.applied}, {"unknown", counters_.unknown}, {"malformed", counters_.malformed}};
      dirty_ = false;
      sender_->submit(std::move(*swapped.image), step, std::move(merged));
    }
    return true;
  } catch (const TransportError& e) {
    spdlog::error("rank {}: frame at step {} aborted: {}", rank, step, e.what());
    ++aborted_;
    return false;
  }
}

void RankRuntime::finish() {
  if (sender_) sender_->wait();
}

}  // namespace insitu
