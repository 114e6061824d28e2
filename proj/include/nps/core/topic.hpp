#pragma once

#include <compare>
#include <string>
#include <string_view>
#include <vector>

namespace nps {

/// A concrete publication channel such as "net/cell1/kpi".
class Topic {
 public:
  /// Throws Error{InvalidTopic} on empty segments or wildcard characters.
  explicit Topic(std::string_view text);
  explicit Topic(std::vector<std::string> segments);

  const std::vector<std::string>& segments() const { return segments_; }
  std::string str() const;

  friend bool operator==(const Topic&, const Topic&) = default;
  friend std::strong_ordering operator<=>(const Topic& a, const Topic& b) {
    return a.str() <=> b.str();
  }

 private:
  std::vector<std::string> segments_;
};

/// Subscription pattern: "+" matches exactly one segment, a trailing "#"
/// matches zero or more remaining segments.
class TopicFilter {
 public:
  explicit TopicFilter(std::string_view text);

  const std::vector<std::string>& segments() const { return segments_; }
  std::string str() const;
  bool has_wildcards() const;

  friend bool operator==(const TopicFilter&, const TopicFilter&) = default;

 private:
  std::vector<std::string> segments_;
};

bool match_filter(const TopicFilter& filter, const Topic& topic);

/// Topic segments and identifiers used as topic segments share the same
/// character rules.
bool is_valid_segment(std::string_view segment);

}  // namespace nps
