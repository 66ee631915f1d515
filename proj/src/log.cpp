#include "mmf/log.hpp"

#include <iostream>
#include <mutex>

namespace mmf::log {

namespace {

std::mutex& mutex() {
  static std::mutex m;
  return m;
}

void stderr_sink(Level level, std::string_view event, const nlohmann::json& fields) {
  nlohmann::json rec = nlohmann::json::object();
  rec["level"] = level_name(level);
  rec["event"] = event;
  for (const auto& [k, v] : fields.items()) rec[k] = v;
  std::cerr << rec.dump() << '\n';
}

Sink& current_sink() {
  static Sink sink = stderr_sink;
  return sink;
}

Level& min_level() {
  static Level level = Level::Info;
  return level;
}

}  // namespace

std::string_view level_name(Level level) {
  switch (level) {
    case Level::Debug:
      return "debug";
    case Level::Info:
      return "info";
    case Level::Warn:
      return "warn";
    case Level::Error:
      return "error";
  }
  return "?";
}

void set_sink(Sink sink) {
  std::lock_guard lock(mutex());
  current_sink() = std::move(sink);
}

void reset_sink() { set_sink(stderr_sink); }

void set_min_level(Level level) {
  std::lock_guard lock(mutex());
  min_level() = level;
}

void emit(Level level, std::string_view event, const nlohmann::json& fields) {
  std::lock_guard lock(mutex());
  if (level < min_level() || !current_sink()) return;
  current_sink()(level, event, fields);
}

ScopedSink::ScopedSink(Sink sink) {
  std::lock_guard lock(mutex());
  previous_ = std::move(current_sink());
  current_sink() = std::move(sink);
}

ScopedSink::~ScopedSink() {
  std::lock_guard lock(mutex());
  current_sink() = std::move(previous_);
}

}  // namespace mmf::log
