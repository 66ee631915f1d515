#pragma once

#include <functional>
#include <string_view>

#include "json.hpp"

namespace mmf::log {

enum class Level { Debug = 0, Info = 1, Warn = 2, Error = 3 };

std::string_view level_name(Level level);

using Sink = std::function<void(Level level, std::string_view event, const nlohmann::json& fields)>;

// Default sink writes one JSON object per line to stderr:
//   {"level":"warn","event":"degenerate_input","acquisition":"a17",...}
void set_sink(Sink sink);
void reset_sink();
void set_min_level(Level level);

void emit(Level level, std::string_view event, const nlohmann::json& fields = nlohmann::json::object());

inline void info(std::string_view event, const nlohmann::json& fields = nlohmann::json::object()) {
  emit(Level::Info, event, fields);
}
inline void warn(std::string_view event, const nlohmann::json& fields = nlohmann::json::object()) {
  emit(Level::Warn, event, fields);
}

// Redirects records for the lifetime of the object (tests).
class ScopedSink {
 public:
  explicit ScopedSink(Sink sink);
  ~ScopedSink();
  ScopedSink(const ScopedSink&) = delete;
  ScopedSink& operator=(const ScopedSink&) = delete;

 private:
  Sink previous_;
};

}  // namespace mmf::log
