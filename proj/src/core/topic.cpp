#include "nps/core/topic.hpp"

#include "nps/core/error.hpp"

namespace nps {
namespace {

std::vector<std::string> split_slash(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = text.find('/', start);
    out.emplace_back(text.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string join_slash(const std::vector<std::string>& segments) {
  std::string out;
  for (std::size_t i = 0; i < segments.size(); ++i) {
    if (i) out += '/';
    out += segments[i];
  }
  return out;
}

}  // namespace

bool is_valid_segment(std::string_view segment) {
  if (segment.empty()) return false;
  return segment.find_first_of("/+#") == std::string_view::npos;
}

Topic::Topic(std::string_view text) : Topic(split_slash(text)) {}

Topic::Topic(std::vector<std::string> segments) : segments_(std::move(segments)) {
  if (segments_.empty()) throw Error(ErrorCode::InvalidTopic, "topic has no segments");
  for (const auto& s : segments_) {
    if (!is_valid_segment(s))
      throw Error(ErrorCode::InvalidTopic, "bad segment '" + s + "' in topic '" + str() + "'");
  }
}

std::string Topic::str() const { return join_slash(segments_); }

TopicFilter::TopicFilter(std::string_view text) : segments_(split_slash(text)) {
  for (std::size_t i = 0; i < segments_.size(); ++i) {
    const auto& s = segments_[i];
    if (s == "+") continue;
    if (s == "#") {
      if (i + 1 != segments_.size())
        throw Error(ErrorCode::InvalidFilter, "'#' must be the last segment in '" + str() + "'");
      continue;
    }
    if (!is_valid_segment(s))
      throw Error(ErrorCode::InvalidFilter, "bad segment '" + s + "' in filter '" + str() + "'");
  }
}

std::string TopicFilter::str() const { return join_slash(segments_); }

bool TopicFilter::has_wildcards() const {
  for (const auto& s : segments_)
    if (s == "+" || s == "#") return true;
  return false;
}

bool match_filter(const TopicFilter& filter, const Topic& topic) {
  const auto& f = filter.segments();
  const auto& t = topic.segments();
  std::size_t i = 0;
  for (; i < f.size(); ++i) {
    if (f[i] == "#") return true;
    if (i >= t.size()) return false;
    if (f[i] != "+" && f[i] != t[i]) return false;
  }
  return i == t.size();
}

}  // namespace nps
