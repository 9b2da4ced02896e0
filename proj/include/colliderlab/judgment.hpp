#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "colliderlab/collider.hpp"

namespace colliderlab {

enum class Content : std::uint8_t { Rw17, Abstract };
enum class Load : std::uint8_t { Base, Overloaded };
enum class Style : std::uint8_t { Direct, Cot };

/// One cell of the content x load x prompting-style factorial.
struct Condition {
  Content content = Content::Rw17;
  Load load = Load::Base;
  Style style = Style::Direct;

  /// Canonical id, e.g. "rw17-base-direct" or "abstract-over-cot".
  std::string id() const;
  /// content x load cell without the prompting axis, e.g. "abstract-over".
  std::string experiment() const;
  static std::optional<Condition> parse(std::string_view id);
  /// The eight cells in canonical order (content, then load, then style).
  static const std::array<Condition, 8> &all();

  friend bool operator==(const Condition &, const Condition &) = default;
};

inline constexpr std::array<std::string_view, 3> kStoryDomains = {"sociology", "weather",
                                                                  "economy"};

struct JudgmentRecord {
  std::string agent_id;
  Condition condition;
  std::string domain;
  TaskId task = TaskId::I;
  double raw_value = 0.0;   ///< 0..100
  double normalized = 0.0;  ///< raw_value / 100
  bool clamped = false;     ///< raw input was outside [0,100]
  std::string prompt_hash;
  std::string response_ref;

  /// Clamps `raw` into [0,100] (setting `clamped`) and normalizes.
  static JudgmentRecord make(std::string agent_id, Condition condition, std::string domain,
                             TaskId task, double raw);
};

/// Records whose agent and condition match.
std::vector<JudgmentRecord> select(const std::vector<JudgmentRecord> &records,
                                   std::string_view agent_id, const Condition &condition);

}  // namespace colliderlab
